//! Simulation, fuzzing, oracle and benchmarking tools for collab-kernel.

pub mod bench;
pub mod equiv;
pub mod exec;
pub mod fuzz;
pub mod oracle;
pub mod relay;
pub mod scenario;
pub mod sim;
pub mod workload;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] collab_kernel::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Protocol(String),
}
