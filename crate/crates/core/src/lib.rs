#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod harness;
pub mod linalg;
pub mod monitors;
pub mod nfunction;
pub mod orlicz;
pub mod quadrature;
pub mod space;
pub mod stepper;

pub use error::{Error, Result};
pub use nfunction::NFunctionSpec;
pub use space::{build_space, Field, Space, SpaceHandle, SpaceKind};
pub use stepper::{run, RunReport, SchemeConfig, SchemeState, SourceSampler, StepMonitor, Stepper};
pub use monitors::{EstimateMonitor, EstimateRecord};
pub use harness::ManufacturedCase;
