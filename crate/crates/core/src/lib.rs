//! Learning fusion connections and fusion operations between the shallow and
//! deep components of a CTR prediction model.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the full numeric
//! stack: a small reverse-mode autodiff [`Tape`], the model [`components`],
//! the [`fusion`] search space, the differentiable [`supernet`], the
//! one-shot and sequential training procedures in [`search`], evaluation
//! [`metrics`] and the dataset transforms in [`data`]. File formats, TSV
//! ingestion and the command line live in the `ctrfuse` crate.
//!
//! Enable the `std` feature to get runtime CPU feature detection in the
//! matrix kernels.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod architecture;
pub mod autodiff;
pub mod components;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod search;
pub mod supernet;
pub mod tensor;

pub use architecture::{preset, ArchitectureDescriptor, Metadata, OpChoice, PresetKind, Variant};
pub use autodiff::{Gradients, Tape, Var};
pub use components::FieldSchema;
pub use error::{Error, Result};
pub use fusion::{
    count_valid_connections, search_space_size, ComponentGraph, ComponentKind, ConnectionParams,
    FusionOp, OpSet, OperationParams,
};
pub use metrics::{auc, logloss};
pub use params::{ParamGroup, ParamId, ParamStore};
pub use search::{EpochRecord, Stage, TrainConfig};
pub use supernet::{Mode, Supernet, SupernetConfig};
pub use tensor::Tensor;
