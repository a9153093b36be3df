//! Compile CUDA-like SPMD kernels into block-fused form and run them on a
//! pool of CPU workers.
//!
//! Pipeline: [`lang::parse`] → [`lang::validate`] → [`mpmd::transform`] →
//! [`mpmd::map_memory`], then launch through a [`runtime::Runtime`] driven by
//! a host script ([`host`]). [`exec::run_reference`] executes the untransformed
//! kernel thread by thread and serves as the oracle.

pub mod bench;
pub mod cachesim;
pub mod exec;
pub mod host;
pub mod ir;
pub mod lang;
pub mod mpmd;
pub mod runtime;
pub mod types;

pub use types::{Dim3, ScalarType, Value};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] lang::ParseError),
    #[error("kernel {kernel} is invalid:\n{}", diagnostics.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid { kernel: String, diagnostics: Vec<lang::Diagnostic> },
    #[error(transparent)]
    Transform(#[from] mpmd::TransformError),
    #[error(transparent)]
    Reorder(#[from] mpmd::ReorderError),
    #[error(transparent)]
    Host(#[from] host::HostError),
    #[error(transparent)]
    Runtime(#[from] runtime::RuntimeError),
    #[error(transparent)]
    Trap(#[from] exec::Trap),
    #[error("oracle mismatch: {0}")]
    Oracle(Box<bench::OracleMismatch>),
    #[error(transparent)]
    Cache(#[from] cachesim::ConfigError),
    #[error(transparent)]
    Dim(#[from] types::DimError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}
