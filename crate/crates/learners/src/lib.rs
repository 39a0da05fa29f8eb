//! Base learners (random forest, histogram gradient boosting, multilayer
//! perceptron) and the logistic stacking ensemble built on them.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod forest;
pub mod gbm;
pub mod io;
pub mod mlp;
pub mod stacker;
pub mod tree;

pub use dataset::{Dataset, Encoder, OneHot};
pub use ensemble::{Classifier, EnsembleModel};
pub use error::{LearnError, Result};
pub use forest::{train_forest, ForestModel, ForestParams};
pub use gbm::{train_gbm, train_gbm_with, GbmModel, GbmParams};
pub use io::{AnyModel, ModelKind};
pub use mlp::{train_mlp, train_mlp_with_scorer, MlpModel, MlpParams, Network};
pub use stacker::{train_stacker, StackerModel};
