//! RMSE, Recall@N and the MostPopular baseline.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RatingDataset;
use crate::trainer::{top_n, PredictionMatrix, Task};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("no user has a relevant test item")]
    NoRelevantItems,
    #[error("test triple ({user}, {item}) outside the prediction matrix")]
    OutOfRange { user: usize, item: usize },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Root mean squared error over the test triples only.
pub fn rmse(predictions: &PredictionMatrix, test: &RatingDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let (items, users) = predictions.values.dim();
    let mut sum = 0.0;
    for t in test.triples() {
        if t.user >= users || t.item >= items {
            return Err(EvalError::OutOfRange {
                user: t.user,
                item: t.item,
            });
        }
        let e = t.rating - predictions.get(t.user, t.item);
        sum += e * e;
    }
    Ok((sum / test.len() as f64).sqrt())
}

/// Anything that can produce a ranked item list for a user.
pub trait Recommender {
    fn recommend(&self, user: usize, n: usize) -> Vec<usize>;
}

/// Ranks by a precomputed score matrix (users x items), skipping each user's
/// training items.
pub struct ScoreRecommender {
    scores: Array2<f64>,
    seen: Vec<HashSet<usize>>,
}

impl ScoreRecommender {
    pub fn new(scores: Array2<f64>, train: &RatingDataset) -> Self {
        assert_eq!(scores.dim(), (train.num_users(), train.num_items()));
        ScoreRecommender {
            scores,
            seen: train.items_by_user(),
        }
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }
}

impl Recommender for ScoreRecommender {
    fn recommend(&self, user: usize, n: usize) -> Vec<usize> {
        top_n(self.scores.row(user), &self.seen[user], n)
    }
}

/// Items ranked by training interaction count.
pub struct MostPopular {
    ranked: Vec<usize>,
    seen: Vec<HashSet<usize>>,
}

impl MostPopular {
    pub fn fit(train: &RatingDataset) -> Self {
        let mut counts = vec![0usize; train.num_items()];
        for t in train.triples() {
            counts[t.item] += 1;
        }
        let mut ranked: Vec<usize> = (0..train.num_items()).collect();
        ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        MostPopular {
            ranked,
            seen: train.items_by_user(),
        }
    }
}

impl Recommender for MostPopular {
    fn recommend(&self, user: usize, n: usize) -> Vec<usize> {
        let seen = self.seen.get(user);
        self.ranked
            .iter()
            .copied()
            .filter(|i| seen.is_none_or(|s| !s.contains(i)))
            .take(n)
            .collect()
    }
}

/// Held-out relevant items per user.
fn relevant_by_user(test: &RatingDataset) -> BTreeMap<usize, HashSet<usize>> {
    let mut out: BTreeMap<usize, HashSet<usize>> = BTreeMap::new();
    for t in test.triples() {
        out.entry(t.user).or_default().insert(t.item);
    }
    out
}

/// Mean per-user recall of the top-`n` list, as a percentage. Users without a
/// relevant test item are left out of the mean.
pub fn recall_at_n<R: Recommender + ?Sized>(
    recommender: &R,
    test: &RatingDataset,
    n: usize,
) -> Result<f64> {
    let relevant = relevant_by_user(test);
    if relevant.is_empty() {
        return Err(EvalError::NoRelevantItems);
    }
    let total: f64 = relevant
        .iter()
        .map(|(&user, items)| {
            let hits = recommender
                .recommend(user, n)
                .iter()
                .take(n)
                .filter(|i| items.contains(i))
                .count();
            hits as f64 / items.len() as f64
        })
        .sum();
    Ok(100.0 * total / relevant.len() as f64)
}

/// Recall for several cut-offs from a single recommendation per user.
pub fn recall_at(
    recommender: &(impl Recommender + ?Sized),
    test: &RatingDataset,
    cutoffs: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let relevant = relevant_by_user(test);
    if relevant.is_empty() {
        return Err(EvalError::NoRelevantItems);
    }
    let longest = cutoffs.iter().copied().max().unwrap_or(0);
    let mut sums = vec![0.0; cutoffs.len()];
    for (&user, items) in &relevant {
        let list = recommender.recommend(user, longest);
        for (sum, &n) in sums.iter_mut().zip(cutoffs) {
            let hits = list.iter().take(n).filter(|i| items.contains(i)).count();
            *sum += hits as f64 / items.len() as f64;
        }
    }
    Ok(cutoffs
        .iter()
        .zip(sums)
        .map(|(&n, s)| (n, 100.0 * s / relevant.len() as f64))
        .collect())
}

pub fn num_users_with_relevant(test: &RatingDataset) -> usize {
    relevant_by_user(test).len()
}

/// Metrics for one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse: Option<f64>,
    /// Recall@N in percent, keyed by N.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<BTreeMap<usize, f64>>,
    pub num_evaluated_users: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    pub fn rating(rmse: f64, test: &RatingDataset, train_fraction: f64, seed: u64, config: serde_json::Value) -> Self {
        let users: HashSet<usize> = test.triples().iter().map(|t| t.user).collect();
        EvalReport {
            task: Task::Rating,
            rmse: Some(rmse),
            recall: None,
            num_evaluated_users: users.len(),
            train_fraction,
            seed,
            config_echo: config,
        }
    }

    pub fn ranking(
        recall: BTreeMap<usize, f64>,
        test: &RatingDataset,
        train_fraction: f64,
        seed: u64,
        config: serde_json::Value,
    ) -> Self {
        EvalReport {
            task: Task::Ranking,
            rmse: None,
            recall: Some(recall),
            num_evaluated_users: num_users_with_relevant(test),
            train_fraction,
            seed,
            config_echo: config,
        }
    }

    /// `dataset,task,split,seed,metric,value` rows, no header.
    pub fn csv_rows(&self, dataset: &str) -> Vec<String> {
        let split = format!("{}", self.train_fraction);
        let mut rows = Vec::new();
        if let Some(r) = self.rmse {
            rows.push(format!("{dataset},{},{split},{},rmse,{r}", self.task, self.seed));
        }
        if let Some(recall) = &self.recall {
            for (n, v) in recall {
                rows.push(format!(
                    "{dataset},{},{split},{},recall@{n},{v}",
                    self.task, self.seed
                ));
            }
        }
        rows
    }
}

pub const CSV_HEADER: &str = "dataset,task,split,seed,metric,value";
