//! Semi-autoencoder hybrid collaborative filtering.
//!
//! An autoencoder whose input is a rating vector concatenated with side
//! information (user profiles or item features) and whose output reconstructs
//! only the rating part. The crate covers MovieLens ingestion, the model and
//! its gradients, optimizers, the ranking and rating training pipelines,
//! evaluation metrics with a MostPopular baseline, and the `semiae` CLI.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod optim;
pub mod trainer;
