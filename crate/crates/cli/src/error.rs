use thiserror::Error;

use crate::config::ConfigErrors;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(ConfigErrors),

    #[error(transparent)]
    Core(#[from] temsp_core::Error),

    /// A computed result contradicts a guaranteed inequality.
    #[error("numeric check failed: {0}")]
    Check(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(ConfigErrors(vec![msg.into()]))
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 0 success, 1 I/O or input, 2 configuration, 3 admissibility, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use temsp_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Config(_) | E::Usage(_) | E::Dimension { .. }) => 2,
            CliError::Core(E::Admissibility { .. }) => 3,
            CliError::Core(E::NonFinite { .. } | E::NotConverged { .. }) => 4,
            CliError::Check(_) => 4,
            CliError::Io { .. } | CliError::Input(_) => 1,
        }
    }
}

impl From<ConfigErrors> for CliError {
    fn from(e: ConfigErrors) -> Self {
        CliError::Config(e)
    }
}
