//! Doubly robust estimation of optimal treatment regimes in decision-list
//! form.
//!
//! The pipeline fits a propensity and an outcome model, builds augmented
//! pseudo-outcomes, grows a list greedily under a variance gate, and replaces
//! it by its cheapest sample-equivalent. [`inference`] bootstraps the value
//! and [`simlab`] runs the Monte Carlo studies.
//!
//! Everything that compares, sums or thresholds data is generic over
//! [`Scalar`] (`f32` or `f64`); model fitting and variance estimation run in
//! `f64`. The aliases below fix the scalar for the common cases.

pub mod costmin;
pub mod data;
pub mod error;
pub mod inference;
pub mod models;
pub mod pipeline;
pub mod regime;
pub mod scalar;
pub mod search;
pub mod simlab;
pub mod value;

pub use costmin::{min_cost_equivalent, MinCostOptions, MinCostResult};
pub use data::{load_csv, Covariates, CsvSchema, Dataset, GridPolicy, OutcomeKind};
pub use error::{Error, Result};
pub use inference::{bootstrap_corrected_value, correct_value, BootstrapConfig, Transform, ValueReport};
pub use pipeline::{fit, FitConfig, FitResult};
pub use regime::{Atom, Clause, Condition, Connective, CostModel, DecisionList, Sense};
pub use scalar::Scalar;
pub use search::{find_list, SearchConfig, SearchTrace};
pub use value::{pseudo_outcomes, InfluenceModel, PseudoOutcomeMatrix};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type DecisionList64 = DecisionList<f64>;
pub type DecisionList32 = DecisionList<f32>;
pub type FitResult64 = FitResult<f64>;
pub type FitResult32 = FitResult<f32>;
