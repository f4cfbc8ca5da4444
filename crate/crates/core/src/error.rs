use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shapes, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values showed up in a loss, gradient or log-ratio.
    #[error("estimator diverged{}: {what}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Divergence { epoch: Option<usize>, what: String },

    /// The environment cannot provide what was asked (exact dynamics, enumeration).
    #[error("environment `{env}` does not support {what}")]
    Capability { env: String, what: String },

    #[error("enumeration needs {needed} trajectories, cap is {cap}")]
    Capacity { needed: u128, cap: u64 },

    /// A successor state has zero probability under every action.
    #[error("impossible successor: {0}")]
    ImpossibleSuccessor(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn divergence(what: impl Into<String>) -> Self {
        Error::Divergence {
            epoch: None,
            what: what.into(),
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the epoch to a divergence error that does not carry one yet.
    pub fn at_epoch(self, epoch: usize) -> Self {
        match self {
            Error::Divergence { epoch: None, what } => Error::Divergence {
                epoch: Some(epoch),
                what,
            },
            other => other,
        }
    }
}
