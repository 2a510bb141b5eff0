use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({n}, {c}, {h}, {w}) out of range for dims {dims}")]
    Index {
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        dims: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("unsupported layout: {0}")]
    Layout(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration failed after {completed} measurement(s): {reason}")]
    Calibration { completed: usize, reason: String },

    #[error("network config error at layer '{layer}': {reason}")]
    Config { layer: String, reason: String },

    #[error("layer '{layer}' failed: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn in_layer(self, layer: &str) -> Self {
        Error::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }
}
