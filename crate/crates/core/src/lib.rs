//! Bias from informative visit times in longitudinal mixed models: simulation,
//! closed-form bias theory, univariate and joint ML fitting, replication
//! studies and data diagnostics.

pub mod bias;
pub mod covparam;
pub mod data;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod joint;
pub mod linalg;
pub mod lmm;
pub(crate) mod mixed;
pub mod objective;
pub mod optim;
pub mod run;
pub mod sim;

pub use data::{CorrFamily, LongitudinalDataset, RandomEffectSpec, ResidualSpec, SubjectRecord, TimeUnit};
pub use design::{Response, Term};
pub use error::{Error, Result};
pub use fit::{Estimate, FitResult, FittedSpec};
pub use joint::{fit_joint, JointSpec};
pub use lmm::{fit_lmm, LmmSpec};
pub use optim::OptimizerSettings;
