use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("instance has no pixels")]
    EmptyInstance,
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("mask is not 4-connected")]
    DisconnectedMask,
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("invalid alpha schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("could not place instance {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("bad magic {0:?}, expected \"PMAP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    VersionUnsupported(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite value at offset {0}")]
    NonFiniteValue(usize),
    #[error("value {value} at offset {offset} is outside [0, 1]")]
    OutOfRange { offset: usize, value: f32 },
    #[error("image key {0:?} missing from {1}")]
    MissingImageKey(String, &'static str),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Attaches a file path to an error raised while processing that file.
    pub fn in_file(self, path: impl AsRef<std::path::Path>) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            source: Box::new(self),
        }
    }
}
