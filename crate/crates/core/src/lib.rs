#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod factors;
pub mod forward;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod prior;
pub mod report;
pub mod sequential;
pub mod vb_gaussian;
pub mod vb_laplace;

pub use nalgebra;

pub use config::{ExperimentConfig, Model};
pub use error::{Error, Result};
pub use experiment::{execute, run_experiment, RunReport, Status};
pub use factors::{GammaFactor, GaussianFactor, InvGaussFactor, ModalOperator};
pub use forward::{assemble_forward_stack, ForwardStack, HelmholtzProblem, NoiseSpec};
pub use grid::Grid1D;
pub use prior::{EigenSystem, TruncatedPrior};
pub use sequential::{FrequencySchedule, InnerModel, SequentialResult};
pub use vb_gaussian::{GaussianHyper, VbState};
pub use vb_laplace::{LaplaceHyper, LaplaceVbState};
