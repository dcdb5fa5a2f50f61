use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid token: {0}")]
    InvalidToken(String),

    #[error("invalid tag `{0}`: expected `O`, `B-<class>` or `I-<class>`")]
    InvalidTag(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("sentence {sentence}, position {position}: tag `{tag}` is not in the tag set")]
    UnknownTag {
        sentence: usize,
        position: usize,
        tag: String,
    },

    #[error("sentence {sentence}: {message}")]
    Shape { sentence: usize, message: String },

    #[error("position {position}: `{tag}` continues no entity (run IOB repair first)")]
    InvalidIob { position: usize, tag: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported version: `{0}`")]
    UnsupportedVersion(String),

    #[error("model file truncated in section [{section}]")]
    Truncated { section: String },

    #[error("model file, section [{section}], line {line}: {message}")]
    MalformedModel {
        section: String,
        line: usize,
        message: String,
    },

    #[error("instance too large for enumeration: {tags}^{length} sequences exceeds {limit}")]
    InstanceTooLarge { tags: usize, length: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
