//! Exit-code classification.

use sublm::eval::EvalError;
use sublm::neural::NeuralError;
use sublm::ngram::NgramError;
use sublm::LmError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// A problem with the command line or configuration.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// A child process that exited unsuccessfully.
#[derive(Debug, thiserror::Error)]
#[error("{what} failed with exit code {code:?}")]
pub struct ChildFailure {
    pub what: String,
    pub code: Option<i32>,
}

fn is_numerical(cause: &(dyn std::error::Error + 'static)) -> bool {
    if let Some(e) = cause.downcast_ref::<ChildFailure>() {
        return e.code == Some(EXIT_NUMERICAL as i32);
    }
    if let Some(e) = cause.downcast_ref::<LmError>() {
        return matches!(e, LmError::NonFinite(_));
    }
    if let Some(e) = cause.downcast_ref::<EvalError>() {
        return matches!(e, EvalError::DualPathMismatch { .. });
    }
    if let Some(e) = cause.downcast_ref::<NeuralError>() {
        return matches!(e, NeuralError::NonFinite { .. });
    }
    if let Some(e) = cause.downcast_ref::<NgramError>() {
        return matches!(e, NgramError::Lm(LmError::NonFinite(_)));
    }
    false
}

/// 1 for usage errors, 3 for numerical failures, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<UsageError>()) {
        EXIT_USAGE
    } else if err.chain().any(is_numerical) {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification_follows_the_cause_chain() {
        let numerical: anyhow::Error = EvalError::DualPathMismatch {
            direct: 1.0,
            converted: 2.0,
        }
        .into();
        assert_eq!(exit_code(&numerical.context("evaluating")), EXIT_NUMERICAL);
        let io: anyhow::Error = std::io::Error::other("disk").into();
        assert_eq!(exit_code(&io), EXIT_DATA);
        let wrapped = Err::<(), _>(usage("bad flag")).context("parsing").unwrap_err();
        assert_eq!(exit_code(&wrapped), EXIT_USAGE);
    }
}
