//! Discrete Bayesian networks over configuration parameters and SLO
//! indicators: structure search, Laplace-smoothed parameter estimation,
//! exact inference, ancestral sampling and surprise.

mod dag;
mod data;
mod inference;
mod io;
mod learn;
mod model;

pub use dag::{Dag, VarKind, VariableDef, FULFILLED, FULFILLED_STATE, VIOLATED};
pub use data::{discretize_batch, network_variables, Dataset, ObservationRow};
pub use inference::{infer, infer_indexed, Distribution};
pub use io::{model_from_json, model_to_json};
pub use learn::{bic_score, learn_structure, EdgeBlacklist};
pub use model::{
    batch_surprise, fit_parameters, row_surprise, sample_model, update_parameters, Cpt,
    GenerativeModel,
};
