//! Error classification for process exit codes.

use shapmarket::Error as CoreError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Bad input: flags, config file, data sources.
    #[error("{0}")]
    Invalid(String),
    /// The command ran but some theorem-backed check failed.
    #[error("{0}")]
    ChecksFailed(String),
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Failure::Invalid(msg.into()).into()
}

fn core_code(e: &CoreError) -> Option<u8> {
    match e {
        CoreError::Coalition { .. } | CoreError::TaskCoalition { .. } => None,
        CoreError::Io { .. }
        | CoreError::IdxFormat { .. }
        | CoreError::CountMismatch { .. }
        | CoreError::Csv { .. }
        | CoreError::DimensionMismatch { .. }
        | CoreError::NonFiniteFeature { .. }
        | CoreError::EmptyDataset(_)
        | CoreError::LabelOutOfRange { .. }
        | CoreError::TooManyPlayers { .. }
        | CoreError::NonPositiveTotal(_)
        | CoreError::InvalidParameter(_)
        | CoreError::UnknownParty(_)
        | CoreError::DuplicateParty(_)
        | CoreError::Unsupported(_)
        | CoreError::ModelBlob(_) => Some(EXIT_INVALID),
        _ => Some(EXIT_INTERNAL),
    }
}

/// 1 for validation errors and failed checks, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Failure>().is_some() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            if let Some(code) = core_code(e) {
                return code;
            }
        }
    }
    EXIT_INTERNAL
}
