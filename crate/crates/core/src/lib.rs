//! Cycle-level simulator and performance model for a systolic CNN accelerator.

pub mod arch;
pub mod aux_kernels;
pub mod bundled;
pub mod dse;
pub mod error;
pub mod host;
pub mod memrd;
pub mod model;
pub mod oracle;
pub mod pe_array;
pub mod perf;
pub mod tensor;
pub mod weights;

pub use arch::{ArchConfig, FpgaSpec};
pub use error::{Error, Result, WeightError};
pub use model::{LayerDescriptor, LayerKind, ModelDescriptor};
pub use tensor::{Shape, Tensor};
pub use weights::WeightStore;
