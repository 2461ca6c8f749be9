/// Error type shared across the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector lengths do not agree with the declared element count.
    #[error("shape error: {0}")]
    Shape(String),

    /// A denominator that must be positive was zero.
    #[error("division by zero: {0}")]
    DivideByZero(&'static str),

    /// A fixed-point or iterative solve did not converge.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// Frame checksum failed; the bit sequence was corrupted in transit.
    #[error("frame corrupted: FCS mismatch")]
    FcsMismatch,

    /// Bit sequence does not match any known frame layout.
    #[error("unrecognized frame format: {0}")]
    FrameFormat(String),

    /// A field value does not fit its wire encoding.
    #[error("field overflow: {0}")]
    FieldOverflow(String),

    /// An event is not legal in the node's current protocol state.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// The simulation stopped making progress.
    #[error("simulation stalled: {0}")]
    Stalled(String),

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
