use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("plane normal is not unit length (|n| = {norm})")]
    NonUnitNormal { norm: f64 },

    #[error("transform is not a reflection (residual {residual:.3e})")]
    NotAReflection { residual: f64 },

    #[error("tilt angle {angle} rad outside (-pi/2, pi/2)")]
    InvalidTilt { angle: f64 },

    #[error("invalid value: {0}")]
    Domain(String),

    #[error("invalid arm pose: {0}")]
    InvalidPose(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("target unreachable by tilting: {0}")]
    UnreachableTarget(String),

    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch {
        expected: crate::geometry::Frame,
        found: crate::geometry::Frame,
    },

    #[error("coverage undefined for an empty reference cloud")]
    EmptyReference,

    #[error("registration needs at least 3 gated correspondences, found {found}")]
    NoOverlap { found: usize },

    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a failure at runtime.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonUnitNormal { .. }
                | Error::InvalidTilt { .. }
                | Error::Domain(_)
                | Error::InvalidPose(_)
                | Error::Config(_)
                | Error::Validation(_)
                | Error::Format { .. }
        )
    }
}
