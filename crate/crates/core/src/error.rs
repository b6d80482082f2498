use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// [`Error::name`] gives the stable identifier used on the wire and in CLI
/// messages (`"MaskTooSmall"`, `"FormatError"`, ...).
#[derive(Debug, Error)]
pub enum Error {
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("attention row {row} is entirely -inf")]
    DegenerateRow { row: usize },

    #[error("image {height}x{width} is smaller than the encoder factor {factor}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("invalid image: {0}")]
    BadImage(String),

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("weight shape error: {0}")]
    Shape(String),

    #[error("weight file checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("style mask{} vanishes at feature resolution", pair_suffix(*.pair))]
    MaskTooSmall { pair: Option<usize> },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("style mask{} is empty", pair_suffix(*.pair))]
    EmptyStyleMask { pair: Option<usize> },

    #[error("run lengths sum to {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("prompt set has no foreground point and no contour")]
    NoForegroundEvidence,

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("request timed out")]
    Timeout,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn pair_suffix(pair: Option<usize>) -> String {
    pair.map(|i| format!(" of pair {i}")).unwrap_or_default()
}

impl Error {
    /// Stable error name for structured reporting.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ChannelMismatch { .. } => "ChannelMismatch",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::DegenerateRow { .. } => "DegenerateRow",
            Error::ImageTooSmall { .. } => "ImageTooSmall",
            Error::BadImage(_) => "BadImage",
            Error::Format(_) => "FormatError",
            Error::Shape(_) => "ShapeError",
            Error::Checksum { .. } => "ChecksumError",
            Error::MaskTooSmall { .. } => "MaskTooSmall",
            Error::GridMismatch(_) => "GridMismatch",
            Error::EmptyStyleMask { .. } => "EmptyStyleMask",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NoForegroundEvidence => "NoForegroundEvidence",
            Error::InvalidPrompt(_) => "InvalidPrompt",
            Error::OutOfBounds(_) => "OutOfBounds",
            Error::Transport(_) => "TransportError",
            Error::Protocol(_) => "ProtocolError",
            Error::Timeout => "Timeout",
            Error::Io(_) => "IoError",
        }
    }

    /// Index of the mask pair this error refers to, if any.
    pub fn pair(&self) -> Option<usize> {
        match self {
            Error::MaskTooSmall { pair } | Error::EmptyStyleMask { pair } => *pair,
            _ => None,
        }
    }

    /// Attach a pair index to mask errors that do not carry one yet.
    pub fn with_pair(self, index: usize) -> Self {
        match self {
            Error::MaskTooSmall { pair: None } => Error::MaskTooSmall { pair: Some(index) },
            Error::EmptyStyleMask { pair: None } => Error::EmptyStyleMask { pair: Some(index) },
            other => other,
        }
    }
}
