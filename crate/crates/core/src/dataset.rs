//! MovieLens ingestion: ratings, user profiles, item features, splitting and
//! binarization, and the dense partial-observed vectors fed to the network.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{dir}: missing {missing}; a {format} directory needs {expected}")]
    MissingFiles {
        dir: PathBuf,
        format: Format,
        missing: String,
        expected: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: duplicate rating for user {user}, item {item}")]
    DuplicatePair {
        path: PathBuf,
        line: usize,
        user: u32,
        item: u32,
    },
    #[error("{path}:{line}: rating {value} outside [1, 5]")]
    RatingOutOfRange {
        path: PathBuf,
        line: usize,
        value: f64,
    },
    #[error("{path}:{line}: unknown occupation {value:?}; valid: {valid}")]
    UnknownOccupation {
        path: PathBuf,
        line: usize,
        value: String,
        valid: String,
    },
    #[error("{path}:{line}: invalid age {value}")]
    InvalidAge {
        path: PathBuf,
        line: usize,
        value: i64,
    },
    #[error("{path}:{line}: unknown genre {value:?}; valid: {valid}")]
    UnknownGenre {
        path: PathBuf,
        line: usize,
        value: String,
        valid: String,
    },
    #[error("need at least 2 ratings to split, got {0}")]
    TooFewRatings(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("triple ({user}, {item}) outside a {num_users}x{num_items} dataset")]
    IndexOutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
    #[error("duplicate triple for user index {user}, item index {item}")]
    DuplicateIndex { user: usize, item: usize },
    #[error("rating {value} outside the scale [{min}, {max}]")]
    OutsideScale { value: f64, min: f64, max: f64 },
    #[error("no side information for {entity} id {id}")]
    MissingSideInfo { entity: &'static str, id: u32 },
    #[error("side information has {got} rows, dataset needs {expected}")]
    SideInfoRows { expected: usize, got: usize },
    #[error("unsupported prepared-dataset schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid prepared dataset: {0}")]
    Prepared(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// MovieLens archive layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    #[serde(rename = "ml-100k")]
    Ml100k,
    #[serde(rename = "ml-1m")]
    Ml1m,
}

impl Format {
    pub fn ratings_file(self) -> &'static str {
        match self {
            Format::Ml100k => "u.data",
            Format::Ml1m => "ratings.dat",
        }
    }

    pub fn users_file(self) -> &'static str {
        match self {
            Format::Ml100k => "u.user",
            Format::Ml1m => "users.dat",
        }
    }

    pub fn items_file(self) -> &'static str {
        match self {
            Format::Ml100k => "u.item",
            Format::Ml1m => "movies.dat",
        }
    }

    pub fn expected_files(self) -> [&'static str; 3] {
        [self.ratings_file(), self.users_file(), self.items_file()]
    }

    fn split_line(self, line: &str) -> Vec<&str> {
        match self {
            Format::Ml100k => line.split('\t').collect(),
            Format::Ml1m => line.split("::").collect(),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Ml100k => "ml-100k",
            Format::Ml1m => "ml-1m",
        })
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ml-100k" => Ok(Format::Ml100k),
            "ml-1m" => Ok(Format::Ml1m),
            other => Err(format!("unknown format {other:?}; expected ml-100k or ml-1m")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: i64,
}

/// Sparse observed ratings over a fixed `num_users x num_items` grid.
///
/// `triples` is exactly the observed set; every other cell is unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    num_users: usize,
    num_items: usize,
    triples: Vec<Rating>,
    rating_scale: (f64, f64),
}

pub const EXPLICIT_SCALE: (f64, f64) = (1.0, 5.0);
pub const BINARY_SCALE: (f64, f64) = (0.0, 1.0);

impl RatingDataset {
    pub fn new(
        num_users: usize,
        num_items: usize,
        triples: Vec<Rating>,
        rating_scale: (f64, f64),
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(triples.len());
        for t in &triples {
            if t.user >= num_users || t.item >= num_items {
                return Err(DatasetError::IndexOutOfRange {
                    user: t.user,
                    item: t.item,
                    num_users,
                    num_items,
                });
            }
            if !seen.insert((t.user, t.item)) {
                return Err(DatasetError::DuplicateIndex {
                    user: t.user,
                    item: t.item,
                });
            }
            if !(t.rating >= rating_scale.0 && t.rating <= rating_scale.1) {
                return Err(DatasetError::OutsideScale {
                    value: t.rating,
                    min: rating_scale.0,
                    max: rating_scale.1,
                });
            }
        }
        Ok(RatingDataset {
            num_users,
            num_items,
            triples,
            rating_scale,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn triples(&self) -> &[Rating] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn rating_scale(&self) -> (f64, f64) {
        self.rating_scale
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.triples.is_empty() {
            return None;
        }
        Some(self.triples.iter().map(|t| t.rating).sum::<f64>() / self.triples.len() as f64)
    }

    /// Item sets per user.
    pub fn items_by_user(&self) -> Vec<HashSet<usize>> {
        let mut out = vec![HashSet::new(); self.num_users];
        for t in &self.triples {
            out[t.user].insert(t.item);
        }
        out
    }
}

/// Sorted raw (1-based file) IDs; position in the list is the 0-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdMap(Vec<u32>);

impl IdMap {
    pub fn from_raw<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        let mut v: Vec<u32> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        IdMap(v)
    }

    pub fn index_of(&self, raw: u32) -> Option<usize> {
        self.0.binary_search(&raw).ok()
    }

    pub fn raw_id(&self, index: usize) -> Option<u32> {
        self.0.get(index).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn raw_ids(&self) -> &[u32] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParsedRatings {
    pub dataset: RatingDataset,
    pub user_ids: IdMap,
    pub item_ids: IdMap,
}

/// MovieLens 1M ships Latin-1 text; decoding byte-per-char is lossless for it
/// and for the ASCII 100K files.
fn read_latin1(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_field<T: FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} {raw:?}")))
}

pub fn parse_ratings(path: &Path, format: Format) -> Result<ParsedRatings> {
    let text = read_latin1(path)?;
    parse_ratings_str(&text, path, format)
}

fn parse_ratings_str(text: &str, path: &Path, format: Format) -> Result<ParsedRatings> {
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in content_lines(text) {
        let fields = format.split_line(line);
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let user: u32 = parse_field(path, lineno, "user id", fields[0])?;
        let item: u32 = parse_field(path, lineno, "item id", fields[1])?;
        let rating: f64 = parse_field(path, lineno, "rating", fields[2])?;
        let timestamp: i64 = parse_field(path, lineno, "timestamp", fields[3])?;
        if !(EXPLICIT_SCALE.0..=EXPLICIT_SCALE.1).contains(&rating) {
            return Err(DatasetError::RatingOutOfRange {
                path: path.to_path_buf(),
                line: lineno,
                value: rating,
            });
        }
        if !seen.insert((user, item)) {
            return Err(DatasetError::DuplicatePair {
                path: path.to_path_buf(),
                line: lineno,
                user,
                item,
            });
        }
        raw.push((user, item, rating, timestamp));
    }

    let user_ids = IdMap::from_raw(raw.iter().map(|r| r.0));
    let item_ids = IdMap::from_raw(raw.iter().map(|r| r.1));
    let triples = raw
        .into_iter()
        .map(|(u, i, rating, timestamp)| Rating {
            user: user_ids.index_of(u).expect("user id present"),
            item: item_ids.index_of(i).expect("item id present"),
            rating,
            timestamp,
        })
        .collect();
    let dataset = RatingDataset::new(user_ids.len(), item_ids.len(), triples, EXPLICIT_SCALE)?;
    Ok(ParsedRatings {
        dataset,
        user_ids,
        item_ids,
    })
}

/// Dense side information, one row per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoMatrix {
    rows: Array2<f64>,
    column_labels: Vec<String>,
    entity_ids: Vec<u32>,
    missing_values: usize,
}

impl SideInfoMatrix {
    pub fn new(rows: Array2<f64>, column_labels: Vec<String>, entity_ids: Vec<u32>) -> Self {
        assert_eq!(rows.ncols(), column_labels.len(), "one label per column");
        assert_eq!(rows.nrows(), entity_ids.len(), "one id per row");
        SideInfoMatrix {
            rows,
            column_labels,
            entity_ids,
            missing_values: 0,
        }
    }

    /// K = 0 side information for `num_entities` rows.
    pub fn empty(num_entities: usize) -> Self {
        SideInfoMatrix {
            rows: Array2::zeros((num_entities, 0)),
            column_labels: Vec::new(),
            entity_ids: (1..=num_entities as u32).collect(),
            missing_values: 0,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, entity: usize) -> ArrayView1<'_, f64> {
        self.rows.row(entity)
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn entity_ids(&self) -> &[u32] {
        &self.entity_ids
    }

    /// Rows with a missing value that was filled (e.g. unknown release year).
    pub fn missing_values(&self) -> usize {
        self.missing_values
    }

    /// Reorders rows to follow the dataset's index space. Entities absent from
    /// `ids` are dropped; entities in `ids` without a row are an error.
    pub fn align(&self, ids: &IdMap, entity: &'static str) -> Result<SideInfoMatrix> {
        let mut rows = Array2::zeros((ids.len(), self.dim()));
        for (index, &raw) in ids.raw_ids().iter().enumerate() {
            let src = self
                .entity_ids
                .iter()
                .position(|&e| e == raw)
                .ok_or(DatasetError::MissingSideInfo { entity, id: raw })?;
            rows.row_mut(index).assign(&self.rows.row(src));
        }
        Ok(SideInfoMatrix {
            rows,
            column_labels: self.column_labels.clone(),
            entity_ids: ids.raw_ids().to_vec(),
            missing_values: self.missing_values,
        })
    }
}

pub const GENDERS: [&str; 2] = ["F", "M"];

pub const OCCUPATIONS_100K: [&str; 21] = [
    "administrator",
    "artist",
    "doctor",
    "educator",
    "engineer",
    "entertainment",
    "executive",
    "healthcare",
    "homemaker",
    "lawyer",
    "librarian",
    "marketing",
    "none",
    "other",
    "programmer",
    "retired",
    "salesman",
    "scientist",
    "student",
    "technician",
    "writer",
];

/// Indexed by the numeric occupation code of the 1M archive.
pub const OCCUPATIONS_1M: [&str; 21] = [
    "other",
    "academic/educator",
    "artist",
    "clerical/admin",
    "college/grad student",
    "customer service",
    "doctor/health care",
    "executive/managerial",
    "farmer",
    "homemaker",
    "K-12 student",
    "lawyer",
    "programmer",
    "retired",
    "sales/marketing",
    "scientist",
    "self-employed",
    "technician/engineer",
    "tradesman/craftsman",
    "unemployed",
    "writer",
];

pub const AGE_BUCKETS: [&str; 7] = ["<18", "18-24", "25-34", "35-44", "45-49", "50-55", "56+"];

/// Age codes used natively by the 1M archive, one per bucket.
pub const AGE_CODES_1M: [i64; 7] = [1, 18, 25, 35, 45, 50, 56];

pub fn age_bucket(age: i64) -> usize {
    match age {
        a if a < 18 => 0,
        18..=24 => 1,
        25..=34 => 2,
        35..=44 => 3,
        45..=49 => 4,
        50..=55 => 5,
        _ => 6,
    }
}

pub const GENRES_1M: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

/// Flag order of the 100K item file: "unknown" followed by the 1M genres.
pub fn genres_100k() -> Vec<&'static str> {
    std::iter::once("unknown").chain(GENRES_1M).collect()
}

fn profile_labels(format: Format) -> Vec<String> {
    let occupations: &[&str] = match format {
        Format::Ml100k => &OCCUPATIONS_100K,
        Format::Ml1m => &OCCUPATIONS_1M,
    };
    GENDERS
        .iter()
        .map(|g| format!("gender:{g}"))
        .chain(occupations.iter().map(|o| format!("occupation:{o}")))
        .chain(AGE_BUCKETS.iter().map(|a| format!("age:{a}")))
        .collect()
}

/// Parses user profiles into gender ++ occupation ++ age-bucket one-hot blocks
/// (K = 30). Zip codes are ignored.
pub fn parse_user_profiles(path: &Path, format: Format) -> Result<SideInfoMatrix> {
    let text = read_latin1(path)?;
    let labels = profile_labels(format);
    let occupation_offset = GENDERS.len();
    let age_offset = occupation_offset + 21;

    let mut ids = Vec::new();
    let mut encoded: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let fields: Vec<&str> = match format {
            Format::Ml100k => line.split('|').collect(),
            Format::Ml1m => line.split("::").collect(),
        };
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let (id, age, gender, occupation) = match format {
            Format::Ml100k => (fields[0], fields[1], fields[2], fields[3]),
            Format::Ml1m => (fields[0], fields[2], fields[1], fields[3]),
        };
        let id: u32 = parse_field(path, lineno, "user id", id)?;
        let age: i64 = parse_field(path, lineno, "age", age)?;
        let invalid_age = DatasetError::InvalidAge {
            path: path.to_path_buf(),
            line: lineno,
            value: age,
        };
        if age <= 0 || (format == Format::Ml1m && !AGE_CODES_1M.contains(&age)) {
            return Err(invalid_age);
        }
        let gender = GENDERS
            .iter()
            .position(|g| *g == gender.trim())
            .ok_or_else(|| parse_err(path, lineno, format!("bad gender {gender:?}")))?;
        let occupation = match format {
            Format::Ml100k => OCCUPATIONS_100K
                .iter()
                .position(|o| *o == occupation.trim())
                .ok_or_else(|| DatasetError::UnknownOccupation {
                    path: path.to_path_buf(),
                    line: lineno,
                    value: occupation.to_string(),
                    valid: OCCUPATIONS_100K.join(", "),
                })?,
            Format::Ml1m => occupation
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&code| code < OCCUPATIONS_1M.len())
                .ok_or_else(|| DatasetError::UnknownOccupation {
                    path: path.to_path_buf(),
                    line: lineno,
                    value: occupation.to_string(),
                    valid: "codes 0-20".to_string(),
                })?,
        };
        ids.push(id);
        encoded.push([
            gender,
            occupation_offset + occupation,
            age_offset + age_bucket(age),
        ]);
    }

    let mut rows = Array2::zeros((ids.len(), labels.len()));
    for (r, hot) in encoded.iter().enumerate() {
        for &c in hot {
            rows[[r, c]] = 1.0;
        }
    }
    Ok(SideInfoMatrix::new(rows, labels, ids))
}

/// Release year as (year - 1900) / 100 clamped to [0, 1].
pub fn year_scalar(year: i32) -> f64 {
    ((year as f64 - 1900.0) / 100.0).clamp(0.0, 1.0)
}

/// Extracts a trailing "(YYYY)" from a movie title.
fn year_from_title(title: &str) -> Option<i32> {
    let t = title.trim_end();
    let open = t.rfind('(')?;
    let inner = t[open + 1..].strip_suffix(')')?;
    if inner.len() == 4 {
        inner.parse().ok()
    } else {
        None
    }
}

/// 100K release dates look like "01-Jan-1995".
fn year_from_date(date: &str) -> Option<i32> {
    let d = date.trim();
    let year = d.rsplit('-').next()?;
    if year.len() == 4 {
        year.parse().ok()
    } else {
        None
    }
}

/// Parses item features into a genre multi-hot block followed by one year
/// scalar. Missing years encode as 0 and are counted in `missing_values`.
pub fn parse_item_features(path: &Path, format: Format) -> Result<SideInfoMatrix> {
    let text = read_latin1(path)?;
    let genres: Vec<&str> = match format {
        Format::Ml100k => genres_100k(),
        Format::Ml1m => GENRES_1M.to_vec(),
    };
    let mut labels: Vec<String> = genres.iter().map(|g| format!("genre:{g}")).collect();
    labels.push("year".to_string());
    let k = labels.len();

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut missing = 0;
    for (lineno, line) in content_lines(&text) {
        let mut row = vec![0.0; k];
        let (id, year) = match format {
            Format::Ml100k => {
                let fields: Vec<&str> = line.split('|').collect();
                if fields.len() != 5 + genres.len() {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("expected {} fields, found {}", 5 + genres.len(), fields.len()),
                    ));
                }
                for (g, flag) in fields[5..].iter().enumerate() {
                    match flag.trim() {
                        "0" => {}
                        "1" => row[g] = 1.0,
                        other => {
                            return Err(parse_err(path, lineno, format!("bad genre flag {other:?}")))
                        }
                    }
                }
                let year = year_from_date(fields[2]).or_else(|| year_from_title(fields[1]));
                (fields[0], year)
            }
            Format::Ml1m => {
                let fields: Vec<&str> = line.split("::").collect();
                if fields.len() != 3 {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("expected 3 fields, found {}", fields.len()),
                    ));
                }
                for name in fields[2].split('|').map(str::trim).filter(|n| !n.is_empty()) {
                    let g = genres.iter().position(|g| *g == name).ok_or_else(|| {
                        DatasetError::UnknownGenre {
                            path: path.to_path_buf(),
                            line: lineno,
                            value: name.to_string(),
                            valid: GENRES_1M.join(", "),
                        }
                    })?;
                    row[g] = 1.0;
                }
                (fields[0], year_from_title(fields[1]))
            }
        };
        let id: u32 = parse_field(path, lineno, "item id", id)?;
        match year {
            Some(y) => row[k - 1] = year_scalar(y),
            None => missing += 1,
        }
        ids.push(id);
        data.extend(row);
    }

    let rows = Array2::from_shape_vec((ids.len(), k), data).expect("row-major shape");
    let mut side = SideInfoMatrix::new(rows, labels, ids);
    side.missing_values = missing;
    Ok(side)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Seeded uniform partition of the observed set. Both halves keep the full
/// dimensions; `|train| = round_half_up(fraction * |Ω|)`.
pub fn split(
    ds: &RatingDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(RatingDataset, RatingDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let n = ds.len();
    if n < 2 {
        return Err(DatasetError::TooFewRatings(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = round_half_up(train_fraction * n as f64).min(n);

    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| RatingDataset {
        num_users: ds.num_users,
        num_items: ds.num_items,
        triples: idx.iter().map(|&i| ds.triples[i]).collect(),
        rating_scale: ds.rating_scale,
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Which explicit ratings count as "like".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikeRule {
    pub threshold: f64,
    /// `true` keeps ratings `>= threshold`, `false` only `> threshold`.
    pub inclusive: bool,
}

impl LikeRule {
    pub fn greater_than(threshold: f64) -> Self {
        LikeRule {
            threshold,
            inclusive: false,
        }
    }

    pub fn at_least(threshold: f64) -> Self {
        LikeRule {
            threshold,
            inclusive: true,
        }
    }

    pub fn likes(&self, rating: f64) -> bool {
        if self.inclusive {
            rating >= self.threshold
        } else {
            rating > self.threshold
        }
    }
}

impl Default for LikeRule {
    fn default() -> Self {
        LikeRule::greater_than(4.0)
    }
}

/// Liked triples become rating 1; all others leave the observed set.
pub fn binarize(ds: &RatingDataset, rule: LikeRule) -> RatingDataset {
    RatingDataset {
        num_users: ds.num_users,
        num_items: ds.num_items,
        triples: ds
            .triples
            .iter()
            .filter(|t| rule.likes(t.rating))
            .map(|t| Rating { rating: 1.0, ..*t })
            .collect(),
        rating_scale: BINARY_SCALE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// One row per user (M x N).
    UserBased,
    /// One row per item (N x M).
    ItemBased,
}

/// Dense partial-observed vectors with their observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionVectors {
    pub orientation: Orientation,
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

impl InteractionVectors {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn row_observed(&self, row: usize) -> usize {
        self.mask.row(row).iter().filter(|&&m| m).count()
    }
}

pub fn build_vectors(ds: &RatingDataset, orientation: Orientation) -> InteractionVectors {
    let shape = match orientation {
        Orientation::UserBased => (ds.num_users, ds.num_items),
        Orientation::ItemBased => (ds.num_items, ds.num_users),
    };
    let mut values = Array2::zeros(shape);
    let mut mask = Array2::from_elem(shape, false);
    for t in &ds.triples {
        let cell = match orientation {
            Orientation::UserBased => [t.user, t.item],
            Orientation::ItemBased => [t.item, t.user],
        };
        values[cell] = t.rating;
        mask[cell] = true;
    }
    InteractionVectors {
        orientation,
        values,
        mask,
    }
}

pub const PREPARED_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideInfoRecord {
    pub column_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub missing_values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
}

/// On-disk prepared dataset: triples as `[user, item, rating, timestamp]`
/// with 0-based indices, side information aligned to those indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedDataset {
    pub schema_version: u32,
    pub format: Format,
    pub num_users: usize,
    pub num_items: usize,
    pub triples: Vec<(usize, usize, f64, i64)>,
    pub user_side_info: SideInfoRecord,
    pub item_side_info: SideInfoRecord,
    pub id_maps: IdMaps,
}

impl SideInfoRecord {
    fn from_matrix(m: &SideInfoMatrix) -> Self {
        SideInfoRecord {
            column_labels: m.column_labels.clone(),
            rows: m.rows.outer_iter().map(|r| r.to_vec()).collect(),
            missing_values: m.missing_values,
        }
    }

    fn to_matrix(&self, ids: &IdMap) -> Result<SideInfoMatrix> {
        let k = self.column_labels.len();
        if self.rows.len() != ids.len() {
            return Err(DatasetError::SideInfoRows {
                expected: ids.len(),
                got: self.rows.len(),
            });
        }
        if let Some(bad) = self.rows.iter().find(|r| r.len() != k) {
            return Err(DatasetError::Prepared(format!(
                "side-info row of length {} with {k} labels",
                bad.len()
            )));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DatasetError::Prepared("non-finite side information".into()));
        }
        let flat: Vec<f64> = self.rows.iter().flatten().copied().collect();
        let rows = Array2::from_shape_vec((self.rows.len(), k), flat).expect("checked shape");
        let mut m = SideInfoMatrix::new(rows, self.column_labels.clone(), ids.raw_ids().to_vec());
        m.missing_values = self.missing_values;
        Ok(m)
    }
}

impl PreparedDataset {
    pub fn new(
        format: Format,
        ratings: &ParsedRatings,
        users: &SideInfoMatrix,
        items: &SideInfoMatrix,
    ) -> Self {
        let ds = &ratings.dataset;
        PreparedDataset {
            schema_version: PREPARED_SCHEMA_VERSION,
            format,
            num_users: ds.num_users,
            num_items: ds.num_items,
            triples: ds
                .triples
                .iter()
                .map(|t| (t.user, t.item, t.rating, t.timestamp))
                .collect(),
            user_side_info: SideInfoRecord::from_matrix(users),
            item_side_info: SideInfoRecord::from_matrix(items),
            id_maps: IdMaps {
                users: ratings.user_ids.clone(),
                items: ratings.item_ids.clone(),
            },
        }
    }

    /// Reads the three raw files of a MovieLens directory and aligns the side
    /// information to the rating indices.
    pub fn from_raw_dir(dir: &Path, format: Format) -> Result<Self> {
        let missing: Vec<&str> = format
            .expected_files()
            .into_iter()
            .filter(|f| !dir.join(f).is_file())
            .collect();
        if !missing.is_empty() {
            return Err(DatasetError::MissingFiles {
                dir: dir.to_path_buf(),
                format,
                missing: missing.join(", "),
                expected: format.expected_files().join(", "),
            });
        }
        let ratings = parse_ratings(&dir.join(format.ratings_file()), format)?;
        let users = parse_user_profiles(&dir.join(format.users_file()), format)?
            .align(&ratings.user_ids, "user")?;
        let items = parse_item_features(&dir.join(format.items_file()), format)?
            .align(&ratings.item_ids, "item")?;
        Ok(PreparedDataset::new(format, &ratings, &users, &items))
    }

    pub fn ratings(&self) -> Result<RatingDataset> {
        let triples = self
            .triples
            .iter()
            .map(|&(user, item, rating, timestamp)| Rating {
                user,
                item,
                rating,
                timestamp,
            })
            .collect();
        RatingDataset::new(self.num_users, self.num_items, triples, EXPLICIT_SCALE)
    }

    pub fn user_profiles(&self) -> Result<SideInfoMatrix> {
        self.user_side_info.to_matrix(&self.id_maps.users)
    }

    pub fn item_features(&self) -> Result<SideInfoMatrix> {
        self.item_side_info.to_matrix(&self.id_maps.items)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prepared dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PreparedDataset =
            serde_json::from_str(text).map_err(|e| DatasetError::Prepared(e.to_string()))?;
        if p.schema_version != PREPARED_SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersion(p.schema_version));
        }
        if p.id_maps.users.len() != p.num_users || p.id_maps.items.len() != p.num_items {
            return Err(DatasetError::Prepared("id maps disagree with dimensions".into()));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn r(user: usize, item: usize, rating: f64) -> Rating {
        Rating {
            user,
            item,
            rating,
            timestamp: 0,
        }
    }

    #[test]
    fn parses_100k_line() {
        let f = write_tmp("196\t242\t3\t881250949\n");
        let p = parse_ratings(f.path(), Format::Ml100k).unwrap();
        assert_eq!(p.dataset.len(), 1);
        let t = p.dataset.triples()[0];
        assert_eq!(p.user_ids.raw_id(t.user), Some(196));
        assert_eq!(p.item_ids.raw_id(t.item), Some(242));
        assert_eq!(t.rating, 3.0);
        assert_eq!(t.timestamp, 881250949);
    }

    #[test]
    fn parses_1m_separator() {
        let f = write_tmp("1::1193::5::978300760\n1::661::3::978302109\n");
        let p = parse_ratings(f.path(), Format::Ml1m).unwrap();
        assert_eq!(p.dataset.num_users(), 1);
        assert_eq!(p.dataset.num_items(), 2);
        // 661 < 1193 so it takes index 0
        assert_eq!(p.item_ids.raw_ids(), &[661, 1193]);
    }

    #[test]
    fn four_line_file_counts() {
        let f = write_tmp("1\t1\t5\t0\n1\t2\t3\t0\n2\t1\t4\t0\n2\t2\t1\t0\n");
        let ds = parse_ratings(f.path(), Format::Ml100k).unwrap().dataset;
        assert_eq!((ds.num_users(), ds.num_items(), ds.len()), (2, 2, 4));
    }

    #[test]
    fn empty_file_then_split_fails() {
        let f = write_tmp("");
        let ds = parse_ratings(f.path(), Format::Ml100k).unwrap().dataset;
        assert!(ds.is_empty());
        assert!(matches!(split(&ds, 0.8, 1), Err(DatasetError::TooFewRatings(0))));
    }

    #[test]
    fn rating_errors_carry_line_numbers() {
        let f = write_tmp("1\t1\t5\t0\n1\t2\tx\t0\n");
        match parse_ratings(f.path(), Format::Ml100k) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("1\t1\t5\t0\n1\t1\t4\t0\n");
        assert!(matches!(
            parse_ratings(f.path(), Format::Ml100k),
            Err(DatasetError::DuplicatePair { line: 2, .. })
        ));
        let f = write_tmp("1\t1\t6\t0\n");
        assert!(matches!(
            parse_ratings(f.path(), Format::Ml100k),
            Err(DatasetError::RatingOutOfRange { line: 1, .. })
        ));
        let f = write_tmp("1\t1\t5\n");
        assert!(matches!(
            parse_ratings(f.path(), Format::Ml100k),
            Err(DatasetError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn encodes_100k_profile() {
        let f = write_tmp("1|24|M|technician|85711\n2|24|M|technician|11111\n");
        let p = parse_user_profiles(f.path(), Format::Ml100k).unwrap();
        assert_eq!(p.dim(), 30);
        let row = p.row(0);
        assert_eq!(&row.to_vec()[..2], &[0.0, 1.0]);
        let tech = 2 + OCCUPATIONS_100K.iter().position(|&o| o == "technician").unwrap();
        for c in 2..23 {
            assert_eq!(row[c], if c == tech { 1.0 } else { 0.0 });
        }
        for (b, c) in (23..30).enumerate() {
            assert_eq!(row[c], if b == 1 { 1.0 } else { 0.0 });
        }
        assert_eq!(p.row(0), p.row(1));
    }

    #[test]
    fn encodes_1m_profile_age_code() {
        let f = write_tmp("1::F::1::10::48067\n2::M::56::16::70072\n");
        let p = parse_user_profiles(f.path(), Format::Ml1m).unwrap();
        assert_eq!(p.row(0)[0], 1.0);
        assert_eq!(p.row(0)[2 + 10], 1.0);
        assert_eq!(p.row(0)[23], 1.0);
        assert_eq!(p.row(1)[29], 1.0);
        assert_eq!(p.row(0).sum(), 3.0);
    }

    #[test]
    fn profile_errors() {
        let f = write_tmp("1|24|M|astronaut|85711\n");
        match parse_user_profiles(f.path(), Format::Ml100k) {
            Err(e @ DatasetError::UnknownOccupation { .. }) => {
                assert!(e.to_string().contains("technician"))
            }
            other => panic!("{other:?}"),
        }
        let f = write_tmp("1|0|M|technician|85711\n");
        assert!(matches!(
            parse_user_profiles(f.path(), Format::Ml100k),
            Err(DatasetError::InvalidAge { value: 0, .. })
        ));
        let f = write_tmp("1::F::1::21::48067\n");
        assert!(matches!(
            parse_user_profiles(f.path(), Format::Ml1m),
            Err(DatasetError::UnknownOccupation { .. })
        ));
    }

    #[test]
    fn age_buckets_match_1m_codes() {
        for (b, &code) in AGE_CODES_1M.iter().enumerate() {
            assert_eq!(age_bucket(code), b);
        }
        assert_eq!(age_bucket(17), 0);
        assert_eq!(age_bucket(24), 1);
        assert_eq!(age_bucket(49), 4);
        assert_eq!(age_bucket(55), 5);
        assert_eq!(age_bucket(90), 6);
    }

    #[test]
    fn encodes_1m_item() {
        let f = write_tmp("1::Toy Story (1995)::Action|Comedy\n2::Old (1900)::Drama\n3::New (2000)::Drama\n");
        let m = parse_item_features(f.path(), Format::Ml1m).unwrap();
        assert_eq!(m.dim(), 19);
        let row = m.row(0);
        let hot: Vec<usize> = (0..18).filter(|&c| row[c] == 1.0).collect();
        assert_eq!(hot, vec![0, 4]);
        assert_eq!(row.slice(ndarray::s![..18]).sum(), 2.0);
        assert!((row[18] - 0.95).abs() < 1e-12);
        let (a, b) = (m.row(1), m.row(2));
        assert_eq!(a.slice(ndarray::s![..18]), b.slice(ndarray::s![..18]));
        assert_eq!((a[18], b[18]), (0.0, 1.0));
    }

    #[test]
    fn encodes_100k_item_with_missing_year() {
        let zeros = vec!["0"; 19].join("|");
        let mut flags = vec!["0"; 19];
        flags[1] = "1";
        flags[5] = "1";
        let text = format!(
            "1|Toy Story (1995)|01-Jan-1995||http://x|{}\n267|unknown||||{}\n",
            flags.join("|"),
            zeros
        );
        let f = write_tmp(&text);
        let m = parse_item_features(f.path(), Format::Ml100k).unwrap();
        assert_eq!(m.dim(), 20);
        assert_eq!(m.row(0)[1], 1.0);
        assert_eq!(m.row(0)[5], 1.0);
        assert!((m.row(0)[19] - 0.95).abs() < 1e-12);
        assert!(m.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(m.missing_values(), 1);
    }

    #[test]
    fn unknown_1m_genre_is_error() {
        let f = write_tmp("1::Toy Story (1995)::Cartoon\n");
        assert!(matches!(
            parse_item_features(f.path(), Format::Ml1m),
            Err(DatasetError::UnknownGenre { .. })
        ));
    }

    #[test]
    fn align_reorders_and_checks() {
        let rows = Array2::from_shape_vec((2, 1), vec![10.0, 20.0]).unwrap();
        let m = SideInfoMatrix::new(rows, vec!["x".into()], vec![7, 3]);
        let aligned = m.align(&IdMap::from_raw([3, 7]), "user").unwrap();
        assert_eq!(aligned.rows().column(0).to_vec(), vec![20.0, 10.0]);
        assert!(matches!(
            m.align(&IdMap::from_raw([3, 9]), "user"),
            Err(DatasetError::MissingSideInfo { id: 9, .. })
        ));
    }

    fn toy(n: usize) -> RatingDataset {
        let triples = (0..n).map(|k| r(k % 7, k / 7, 1.0 + (k % 5) as f64)).collect();
        RatingDataset::new(7, n / 7 + 1, triples, EXPLICIT_SCALE).unwrap()
    }

    #[test]
    fn split_sizes_and_rounding() {
        let (tr, te) = split(&toy(10), 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = split(&toy(101), 0.5, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (51, 50));
        assert_eq!(tr.num_users(), 7);
        assert_eq!(te.num_items(), toy(101).num_items());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy(50);
        assert_eq!(split(&ds, 0.3, 11).unwrap(), split(&ds, 0.3, 11).unwrap());
        assert_ne!(split(&ds, 0.3, 11).unwrap().0, split(&ds, 0.3, 12).unwrap().0);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(split(&toy(10), f, 0), Err(DatasetError::InvalidFraction(_))));
        }
    }

    #[test]
    fn binarize_drops_non_likes() {
        let ds = RatingDataset::new(
            1,
            3,
            vec![r(0, 0, 5.0), r(0, 1, 4.0), r(0, 2, 2.0)],
            EXPLICIT_SCALE,
        )
        .unwrap();
        let b = binarize(&ds, LikeRule::greater_than(4.0));
        assert_eq!(b.triples(), &[r(0, 0, 1.0)]);
        assert_eq!(b.rating_scale(), BINARY_SCALE);
        assert_eq!(binarize(&ds, LikeRule::greater_than(0.0)).len(), 3);
        assert!(binarize(&ds, LikeRule::greater_than(5.0)).is_empty());
        assert_eq!(binarize(&ds, LikeRule::at_least(4.0)).len(), 2);
    }

    #[test]
    fn vectors_and_transpose() {
        let ds = RatingDataset::new(2, 2, vec![r(0, 0, 5.0)], EXPLICIT_SCALE).unwrap();
        let v = build_vectors(&ds, Orientation::UserBased);
        assert_eq!(v.values, ndarray::array![[5.0, 0.0], [0.0, 0.0]]);
        assert_eq!(v.mask, ndarray::array![[true, false], [false, false]]);
        let t = build_vectors(&ds, Orientation::ItemBased);
        assert_eq!(t.values, v.values.t());
        assert_eq!(t.mask, v.mask.t());

        let full = RatingDataset::new(
            2,
            2,
            vec![r(0, 0, 1.0), r(0, 1, 2.0), r(1, 0, 3.0), r(1, 1, 4.0)],
            EXPLICIT_SCALE,
        )
        .unwrap();
        assert!(build_vectors(&full, Orientation::UserBased).mask.iter().all(|&m| m));
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            RatingDataset::new(1, 1, vec![r(0, 1, 3.0)], EXPLICIT_SCALE),
            Err(DatasetError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            RatingDataset::new(1, 1, vec![r(0, 0, 3.0), r(0, 0, 2.0)], EXPLICIT_SCALE),
            Err(DatasetError::DuplicateIndex { .. })
        ));
        assert!(matches!(
            RatingDataset::new(1, 1, vec![r(0, 0, 0.5)], EXPLICIT_SCALE),
            Err(DatasetError::OutsideScale { .. })
        ));
    }

    #[test]
    fn prepared_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("u.data"), "1\t1\t5\t10\n2\t2\t3\t20\n").unwrap();
        fs::write(
            dir.path().join("u.user"),
            "1|24|M|technician|85711\n2|53|F|other|94043\n",
        )
        .unwrap();
        let zeros = vec!["0"; 19].join("|");
        fs::write(
            dir.path().join("u.item"),
            format!("1|A (1995)|01-Jan-1995|||{zeros}\n2|B (1980)|01-Jan-1980|||{zeros}\n3|C (1970)|01-Jan-1970|||{zeros}\n"),
        )
        .unwrap();
        let p = PreparedDataset::from_raw_dir(dir.path(), Format::Ml100k).unwrap();
        // item 3 has no ratings, so it is not part of the index space
        assert_eq!(p.item_side_info.rows.len(), 2);
        let back = PreparedDataset::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.ratings().unwrap().len(), 2);
        assert_eq!(back.user_profiles().unwrap().dim(), 30);
        assert_eq!(back.item_features().unwrap().row(1)[19], 0.8);

        let mut bad: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        bad["extra"] = serde_json::json!(1);
        assert!(PreparedDataset::from_json(&bad.to_string()).is_err());
    }
}
