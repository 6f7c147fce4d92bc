use fmnet_core::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fmnet_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Core(e) => match e.kind() {
                ErrorKind::Data => "E_DATA",
                ErrorKind::Numerical => "E_NUMERICAL",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "E_USAGE" => 2,
            "E_DATA" => 3,
            _ => 4,
        }
    }

    /// `CODE: message` on one line.
    pub fn render(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("{}: {}", self.code(), msg.trim())
    }
}
