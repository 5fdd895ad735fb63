use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Solver(#[from] aarmr_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code for the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            BenchError::Solver(_) => 3,
            BenchError::Io(_) => 4,
        }
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => BenchError::Io(io),
            other => BenchError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}"))),
        }
    }
}
