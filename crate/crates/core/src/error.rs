//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by matrix construction, attention kernels, and bound
/// evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands (or an operand and a configuration) disagree on shape.
    #[error("shape mismatch in {context}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    Shape {
        context: String,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A value that must stay finite became NaN or infinite.
    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    /// An exponential left the representable range of 64-bit reals.
    #[error("exp overflow in {context}: max input entry {max_input}")]
    Overflow { context: String, max_input: f64 },

    /// Power iteration did not settle within its iteration cap.
    #[error(
        "spectral norm power iteration failed to converge after {iterations} iterations \
         (last gap {gap:e})"
    )]
    Convergence { iterations: usize, gap: f64 },

    /// A block count that must divide the sequence length does not.
    #[error("block count {blocks} does not divide sequence length {m}")]
    Divisibility { m: usize, blocks: usize },

    /// An invalid configuration that is not a plain shape mismatch.
    #[error("invalid configuration: {reason}")]
    Config { reason: String },

    /// A denominator or norm fell below the usable range.
    #[error("degenerate value in {context}: {value:e}")]
    Degenerate { context: String, value: f64 },

    /// Not enough data points for the requested computation.
    #[error("insufficient data: need at least {needed}, got {got}")]
    Insufficient { needed: usize, got: usize },

    /// Malformed matrix file.
    #[error("matrix format error: {reason}")]
    Format { reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape {
            context: context.to_string(),
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }

    pub(crate) fn config(reason: impl Into<String>) -> Self {
        Error::Config {
            reason: reason.into(),
        }
    }
}
