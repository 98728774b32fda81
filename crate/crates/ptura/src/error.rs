use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("expected length {expected}, got {got}")]
    Size { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mode index {mode} out of range for order {order}")]
    Mode { mode: usize, order: usize },
    #[error("infeasible bit budget: {0}")]
    InfeasibleBudget(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("constellation too large to enumerate: {0} symbols")]
    Capacity(u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
