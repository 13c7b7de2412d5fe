//! Predict binary attributes of physical places from aggregated, anonymous
//! visit logs.
//!
//! The pipeline has two feature sources:
//!
//! * hand-engineered spatio-temporal features ([`featurizer`]): visit
//!   duration, arrival hour-of-week, occupancy, and category transitions
//!   before/after each visit;
//! * place embeddings ([`embedder`]) obtained by weighted alternating least
//!   squares on a location-bias-normalized person × place co-visit matrix.
//!
//! [`learner`] trains one linear classifier per attribute after mutual
//! information feature selection and [`evaluator`] scores it with
//! stratified k-fold AUC, ablations and coverage accounting. [`synthworld`]
//! generates synthetic worlds with planted attribute signals to test all of
//! the above end to end.

pub mod domain;
pub mod embedder;
pub mod error;
pub mod evaluator;
pub mod featurizer;
pub mod learner;
pub mod par;
pub mod seed;
pub mod synthworld;

pub use error::{Error, Result};
