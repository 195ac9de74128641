use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Base, dimension or scale pair out of the admissible range.
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    /// Cube or grid counts that do not fit the platform integer range.
    #[error("size overflow: {0}")]
    SizeOverflow(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid site space: {0}")]
    InvalidSiteSpace(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A weight that must be non-negative (or strictly positive) is not.
    #[error("positivity violated: {0}")]
    Positivity(String),

    /// Exact enumeration would visit more grid points than allowed.
    #[error("exact evaluation needs {grid:e} grid points but the cap is {cap}; use a sampling estimator")]
    ExactCap { grid: f64, cap: u64 },

    #[error("degenerate partition function z = {0}")]
    DegeneratePartition(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("fit failed: {0}")]
    Fit(String),
}
