use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found}, expected {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}; last good checkpoint kept")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Model(#[from] setvae::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Stable identifier printed with every failure.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::BadMagic(_) => "bad_magic",
            CliError::BadVersion { .. } => "bad_version",
            CliError::Checksum { .. } => "checksum",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::NonFiniteLoss { .. } => "nan_loss",
            CliError::Model(setvae::Error::Config(_)) => "config",
            CliError::Model(setvae::Error::Parse { .. }) => "data",
            CliError::Model(setvae::Error::Io(_)) | CliError::Io(_) | CliError::Csv(_) => "io",
            CliError::Model(_) => "model",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "config" => 2,
            "bad_magic" | "bad_version" | "checksum" | "checkpoint" => 3,
            "data" => 4,
            "io" => 5,
            "nan_loss" => 6,
            _ => 1,
        }
    }

    /// `error code=<code>: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error code={}: {}", self.code(), msg)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
