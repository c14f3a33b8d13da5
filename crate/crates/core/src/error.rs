use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("under-loaded regime violated: need M > K, got M={aps}, K={users}")]
    NotUnderloaded { aps: usize, users: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank-deficient channel (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("rank-deficient channel in cluster {cluster} (condition estimate {condition:.3e})")]
    ClusterRankDeficient { cluster: usize, condition: f64 },

    #[error("empty cluster channel (cluster {0})")]
    EmptyClusterChannel(usize),

    #[error(
        "precoder kind mismatch: inputs built with {built}, closed form requested for {requested}"
    )]
    KindMismatch { built: String, requested: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("realization {realization}: {source}")]
    Trial {
        realization: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by a degenerate channel draw, which the
    /// harness answers with a redraw instead of aborting.
    pub fn is_degenerate_draw(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::ClusterRankDeficient { .. }
            | Error::EmptyClusterChannel(_) => true,
            Error::Trial { source, .. } => source.is_degenerate_draw(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
