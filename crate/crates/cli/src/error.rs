use lpci_core::Error as CoreError;

/// Failures split by exit code: 2 for anything wrong with the input surface,
/// 3 for estimation failures on valid input.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// One-line error document for stderr.
    pub fn to_json(&self) -> String {
        let (kind, msg) = match self {
            CliError::Input(m) => ("input", m),
            CliError::Numeric(m) => ("numeric", m),
        };
        serde_json::json!({ "error": msg, "kind": kind }).to_string()
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(_) | CoreError::InvalidKernel(_) => {
                CliError::Input(e.to_string())
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}
