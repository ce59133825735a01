//! The two task pipelines: user-side ranking (binarized ratings + user
//! profiles, full reconstruction loss) and item-side rating prediction
//! (explicit ratings + item features, loss on observed ratings only).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    build_vectors, DatasetError, LikeRule, Orientation, RatingDataset, SideInfoMatrix,
    BINARY_SCALE, EXPLICIT_SCALE,
};
use crate::model::{
    concat_rows, loss_and_gradients, Activation, Dims, MaskedWorkspace, ModelError, ParamsRecord,
    SemiAeParams,
};
use crate::optim::{OptimError, OptimizerKind, OptimizerState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Dimension(String),
    #[error("ranking training expects a binarized dataset")]
    NotBinarized,
    #[error("expected a {expected} model, got {got}")]
    WrongTask { expected: Task, got: Task },
    #[error("no training rows with observed ratings")]
    EmptyTraining,
    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ranking,
    Rating,
}

impl Task {
    pub fn orientation(self) -> Orientation {
        match self {
            Task::Ranking => Orientation::UserBased,
            Task::Rating => Orientation::ItemBased,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Ranking => "ranking",
            Task::Rating => "rating",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ranking" => Ok(Task::Ranking),
            "rating" => Ok(Task::Rating),
            other => Err(format!("unknown task {other:?}; valid: ranking, rating")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    /// L2 weight on Q and Q1 (γ).
    pub regularization: f64,
    pub optimizer: OptimizerKind,
    /// Hidden activation g.
    pub hidden_activation: Activation,
    /// Output activation f.
    pub output_activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Ranking only: ratings above this threshold count as likes.
    pub like_threshold: f64,
    /// Ranking only: count ratings equal to the threshold as likes too.
    pub like_inclusive: bool,
    /// Restrict the loss to observed positions. Always on for rating.
    pub masked_loss: bool,
    /// Concatenate profiles/features into the input; off gives a plain autoencoder.
    pub use_side_info: bool,
}

impl TrainConfig {
    pub fn defaults(task: Task) -> Self {
        match task {
            Task::Rating => TrainConfig {
                task,
                hidden_dim: 500,
                learning_rate: 0.001,
                regularization: 0.1,
                optimizer: OptimizerKind::Adam,
                hidden_activation: Activation::Sigmoid,
                output_activation: Activation::Identity,
                // test error bottoms out around 20 epochs; longer runs overfit
                epochs: 20,
                batch_size: 64,
                seed: 0,
                like_threshold: 4.0,
                like_inclusive: false,
                masked_loss: true,
                use_side_info: true,
            },
            Task::Ranking => TrainConfig {
                task,
                hidden_dim: 10,
                // tuned on a validation split: with the per-batch mean loss,
                // 0.001 / 0.1 leaves the model at MostPopular quality
                learning_rate: 0.01,
                regularization: 0.03,
                optimizer: OptimizerKind::Sgd,
                hidden_activation: Activation::Sigmoid,
                output_activation: Activation::Identity,
                epochs: 1000,
                batch_size: 64,
                seed: 0,
                like_threshold: 4.0,
                like_inclusive: false,
                masked_loss: false,
                use_side_info: true,
            },
        }
    }

    /// Task defaults overridden by a flat JSON object. Unknown keys and a
    /// conflicting `task` are errors.
    pub fn from_json(task: Task, text: &str) -> Result<Self> {
        let overrides: ConfigOverrides =
            serde_json::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        let cfg = overrides.apply(TrainConfig::defaults(task))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.hidden_dim < 1 {
            return bad("hidden_dim must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad(format!("regularization must be >= 0, got {}", self.regularization));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.task == Task::Rating && !self.masked_loss {
            return bad("rating training always uses the masked loss".into());
        }
        Ok(())
    }

    pub fn like_rule(&self) -> LikeRule {
        LikeRule {
            threshold: self.like_threshold,
            inclusive: self.like_inclusive,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigOverrides {
    task: Option<Task>,
    hidden_dim: Option<usize>,
    learning_rate: Option<f64>,
    regularization: Option<f64>,
    optimizer: Option<String>,
    hidden_activation: Option<String>,
    output_activation: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    like_threshold: Option<f64>,
    like_inclusive: Option<bool>,
    masked_loss: Option<bool>,
    use_side_info: Option<bool>,
}

impl ConfigOverrides {
    fn apply(self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(task) = self.task {
            if task != cfg.task {
                return Err(TrainError::InvalidConfig(format!(
                    "config is for task {task}, command asked for {}",
                    cfg.task
                )));
            }
        }
        let parse = |s: String| s.parse::<Activation>().map_err(TrainError::InvalidConfig);
        if let Some(v) = self.hidden_activation {
            cfg.hidden_activation = parse(v)?;
        }
        if let Some(v) = self.output_activation {
            cfg.output_activation = parse(v)?;
        }
        if let Some(v) = self.optimizer {
            cfg.optimizer = v.parse().map_err(TrainError::InvalidConfig)?;
        }
        cfg.hidden_dim = self.hidden_dim.unwrap_or(cfg.hidden_dim);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.regularization = self.regularization.unwrap_or(cfg.regularization);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.like_threshold = self.like_threshold.unwrap_or(cfg.like_threshold);
        cfg.like_inclusive = self.like_inclusive.unwrap_or(cfg.like_inclusive);
        cfg.masked_loss = self.masked_loss.unwrap_or(cfg.masked_loss);
        cfg.use_side_info = self.use_side_info.unwrap_or(cfg.use_side_info);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: SemiAeParams,
    pub task: Task,
    pub orientation: Orientation,
    pub side_dim: usize,
    pub loss_history: Vec<f64>,
    pub config: TrainConfig,
    /// The train/test split the model was fitted on, when known.
    pub split: Option<SplitInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
}

fn side_block<'a>(
    side: &'a SideInfoMatrix,
    rows: usize,
    use_side_info: bool,
    entity: &str,
) -> Result<Array2<f64>> {
    if side.num_entities() != rows {
        return Err(TrainError::Dimension(format!(
            "{} {entity} side-info rows for {rows} {entity}s",
            side.num_entities()
        )));
    }
    Ok(if use_side_info {
        side.rows().clone()
    } else {
        Array2::zeros((rows, 0))
    })
}

/// Minibatch training over the selected rows of `inputs`. Targets are the
/// first `output_dim` input columns.
fn fit(
    inputs: &Array2<f64>,
    output_dim: usize,
    mask: Option<&Array2<bool>>,
    mut rows: Vec<usize>,
    cfg: &TrainConfig,
) -> Result<(SemiAeParams, Vec<f64>)> {
    if rows.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = Dims::new(inputs.ncols(), cfg.hidden_dim, output_dim);
    let mut params =
        SemiAeParams::glorot(dims, cfg.hidden_activation, cfg.output_activation, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut workspace = mask.map(|_| MaskedWorkspace::new(&params));
    let targets = inputs.slice(s![.., ..output_dim]);

    for epoch in 1..=cfg.epochs {
        rows.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in rows.chunks(cfg.batch_size) {
            let loss = match (mask, workspace.as_mut()) {
                (Some(mask), Some(ws)) => {
                    let loss = ws.loss_and_gradients(
                        &params,
                        inputs.view(),
                        targets,
                        mask.view(),
                        batch,
                        cfg.regularization,
                    )?;
                    opt.update(&mut params, ws.gradients())?;
                    loss
                }
                _ => {
                    let x = inputs.select(Axis(0), batch);
                    let (loss, grads) = loss_and_gradients(
                        &params,
                        x.view(),
                        x.slice(s![.., ..output_dim]),
                        None,
                        cfg.regularization,
                    )?;
                    opt.update(&mut params, &grads)?;
                    loss
                }
            };
            weighted += loss * batch.len() as f64;
        }
        let epoch_loss = weighted / rows.len() as f64;
        history.push(epoch_loss);
        debug!("epoch {epoch}: loss {epoch_loss}");
        if epoch % 50 == 0 || epoch == cfg.epochs {
            info!("{} epoch {epoch}/{}: loss {epoch_loss:.6}", cfg.task, cfg.epochs);
        }
    }
    Ok((params, history))
}

fn expect_task(cfg: &TrainConfig, task: Task) -> Result<()> {
    if cfg.task != task {
        return Err(TrainError::WrongTask {
            expected: task,
            got: cfg.task,
        });
    }
    cfg.validate()
}

/// Users as rows: `[r^u | c^u]` in, `r^u` out, every output position in the
/// loss unless `masked_loss` is set.
pub fn train_ranking(
    train: &RatingDataset,
    profiles: &SideInfoMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    expect_task(cfg, Task::Ranking)?;
    if train.rating_scale() != BINARY_SCALE {
        return Err(TrainError::NotBinarized);
    }
    let side = side_block(profiles, train.num_users(), cfg.use_side_info, "user")?;
    let vectors = build_vectors(train, Orientation::UserBased);
    let inputs = concat_rows(vectors.values.view(), side.view());
    let (mask, rows) = if cfg.masked_loss {
        let rows = (0..vectors.rows()).filter(|&r| vectors.row_observed(r) > 0).collect();
        (Some(&vectors.mask), rows)
    } else {
        (None, (0..vectors.rows()).collect())
    };
    let (params, loss_history) = fit(&inputs, train.num_items(), mask, rows, cfg)?;
    Ok(TrainedModel {
        params,
        task: Task::Ranking,
        orientation: Orientation::UserBased,
        side_dim: side.ncols(),
        loss_history,
        config: cfg.clone(),
        split: None,
    })
}

/// Items as rows: `[r^i | c^i]` in, `r^i` out, loss only on observed ratings.
/// Items without any training rating are left out of the batches.
pub fn train_rating(
    train: &RatingDataset,
    features: &SideInfoMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    expect_task(cfg, Task::Rating)?;
    let side = side_block(features, train.num_items(), cfg.use_side_info, "item")?;
    let vectors = build_vectors(train, Orientation::ItemBased);
    let inputs = concat_rows(vectors.values.view(), side.view());
    let rows = (0..vectors.rows()).filter(|&r| vectors.row_observed(r) > 0).collect();
    let (params, loss_history) = fit(&inputs, train.num_users(), Some(&vectors.mask), rows, cfg)?;
    Ok(TrainedModel {
        params,
        task: Task::Rating,
        orientation: Orientation::ItemBased,
        side_dim: side.ncols(),
        loss_history,
        config: cfg.clone(),
        split: None,
    })
}

/// Dense rating predictions, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    /// N x M: `values[[item, user]]`.
    pub values: Array2<f64>,
}

impl PredictionMatrix {
    pub fn get(&self, user: usize, item: usize) -> f64 {
        self.values[[item, user]]
    }
}

impl TrainedModel {
    fn expect(&self, task: Task) -> Result<()> {
        if self.task != task {
            return Err(TrainError::WrongTask {
                expected: task,
                got: self.task,
            });
        }
        Ok(())
    }

    fn inputs(&self, train: &RatingDataset, side: &SideInfoMatrix) -> Result<Array2<f64>> {
        let vectors = build_vectors(train, self.orientation);
        let entity = match self.orientation {
            Orientation::UserBased => "user",
            Orientation::ItemBased => "item",
        };
        let side = side_block(side, vectors.rows(), self.side_dim > 0, entity)?;
        if side.ncols() != self.side_dim {
            return Err(TrainError::Dimension(format!(
                "model expects {} side-info columns, got {}",
                self.side_dim,
                side.ncols()
            )));
        }
        let x = concat_rows(vectors.values.view(), side.view());
        let expected = self.params.dims().input;
        if x.ncols() != expected {
            return Err(TrainError::Dimension(format!(
                "model input dimension {expected}, dataset gives {}",
                x.ncols()
            )));
        }
        Ok(x)
    }

    /// Reconstructions of every item's training vector, clipped to [1, 5].
    /// Items with no training rating fall back to the global training mean.
    pub fn predict_ratings(
        &self,
        train: &RatingDataset,
        features: &SideInfoMatrix,
    ) -> Result<PredictionMatrix> {
        self.expect(Task::Rating)?;
        let x = self.inputs(train, features)?;
        let fallback = train.mean_rating().ok_or(TrainError::EmptyTraining)?;
        let mut values = self.params.forward_batch(x.view())?.output;
        let (lo, hi) = EXPLICIT_SCALE;
        values.mapv_inplace(|v| v.clamp(lo, hi));
        let mut rated = vec![false; train.num_items()];
        for t in train.triples() {
            rated[t.item] = true;
        }
        for (item, mut row) in values.outer_iter_mut().enumerate() {
            if !rated[item] {
                row.fill(fallback);
            }
        }
        Ok(PredictionMatrix { values })
    }

    /// Reconstruction scores for every user (M x N). Users without training
    /// interactions are scored from their profile alone.
    pub fn ranking_scores(
        &self,
        train: &RatingDataset,
        profiles: &SideInfoMatrix,
    ) -> Result<Array2<f64>> {
        self.expect(Task::Ranking)?;
        let x = self.inputs(train, profiles)?;
        Ok(self.params.forward_batch(x.view())?.output)
    }

    /// Top-`n` unseen items for one user.
    pub fn recommend_top_n(
        &self,
        train: &RatingDataset,
        profiles: &SideInfoMatrix,
        user: usize,
        n: usize,
    ) -> Result<Vec<usize>> {
        self.expect(Task::Ranking)?;
        if user >= train.num_users() {
            return Err(TrainError::Dimension(format!(
                "user index {user} outside {} users",
                train.num_users()
            )));
        }
        let mut ratings = Array1::zeros(train.num_items());
        let mut seen = HashSet::new();
        for t in train.triples().iter().filter(|t| t.user == user) {
            ratings[t.item] = t.rating;
            seen.insert(t.item);
        }
        let side = if self.side_dim > 0 {
            side_block(profiles, train.num_users(), true, "user")?
                .row(user)
                .to_vec()
        } else {
            Vec::new()
        };
        let x = crate::model::concat_input(ratings.as_slice().expect("contiguous"), &side);
        let (_, scores) = self.params.forward(ArrayView1::from(&x))?;
        Ok(top_n(scores.view(), &seen, n))
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            task: self.task,
            orientation: self.orientation,
            side_dim: self.side_dim,
            params: ParamsRecord::from(&self.params),
            loss_history: self.loss_history.clone(),
            training_config_echo: self.config.clone(),
            split: self.split,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| TrainError::ModelFile(e.to_string()))?;
        TrainedModel::try_from(file)
    }

    /// `epoch,loss` CSV of the per-epoch training loss.
    pub fn loss_log_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, loss) in self.loss_history.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, loss));
        }
        out
    }
}

/// Unseen items by descending score, ties to the lower index.
pub fn top_n(scores: ArrayView1<'_, f64>, exclude: &HashSet<usize>, n: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    candidates.truncate(n);
    candidates
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub task: Task,
    pub orientation: Orientation,
    pub side_dim: usize,
    #[serde(flatten)]
    pub params: ParamsRecord,
    pub loss_history: Vec<f64>,
    pub training_config_echo: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
}

impl TryFrom<ModelFile> for TrainedModel {
    type Error = TrainError;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(TrainError::SchemaVersion(file.schema_version));
        }
        if file.orientation != file.task.orientation() {
            return Err(TrainError::ModelFile(format!(
                "{} model with {:?} orientation",
                file.task, file.orientation
            )));
        }
        let params = SemiAeParams::try_from(&file.params)?;
        if params.dims().side_dim() != file.side_dim {
            return Err(TrainError::ModelFile("side_dim disagrees with dims".into()));
        }
        Ok(TrainedModel {
            params,
            task: file.task,
            orientation: file.orientation,
            side_dim: file.side_dim,
            loss_history: file.loss_history,
            config: file.training_config_echo,
            split: file.split,
        })
    }
}
