use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json parse error{} : {source}", ctx_suffix(entry))]
    Json {
        entry: Option<String>,
        #[source]
        source: serde_json::Error,
    },
    #[error("annotation project entry `{entry}`: {msg}")]
    Annotation { entry: String, msg: String },
    #[error("polygon must have at least 3 vertices, got {got}")]
    DegeneratePolygon { got: usize },
    #[error("invalid split ratios {ratios:?}: {msg}")]
    SplitRatios { ratios: (f64, f64, f64), msg: String },
    #[error("stratum {stratum} has {got} samples, need at least 3 to populate all splits")]
    StratumTooSmall { stratum: String, got: usize },
    #[error("synthetic generator: {0}")]
    Generator(String),
    #[error("image decode error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model build error: {0}")]
    ModelBuild(String),
    #[error("pretrained encoder weights not found at {path}; build with pretrained_encoder=false or provide a checkpoint")]
    PretrainedUnavailable { path: PathBuf },
    #[error("checkpoint error at {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("training aborted: {0}")]
    Training(String),
    #[error("classifier needs at least one example of each label")]
    SingleClass,
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("invalid config: {0}")]
    Config(String),
}

fn ctx_suffix(entry: &Option<String>) -> String {
    match entry {
        Some(e) => format!(" in `{e}`"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
