//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use shrubmap_core::Error as CoreError;
use shrubmap_learners::LearnError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Bad flags, configuration keys or parameter values.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A pipeline or command stage that failed, named in the diagnostic.
#[derive(Debug, thiserror::Error)]
#[error("stage '{stage}' failed")]
pub struct StageFailure {
    pub stage: &'static str,
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Parameter(_) => EXIT_USAGE,
        CoreError::Numeric(_) | CoreError::Undefined(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Exit code for the first classifiable error in the chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<LearnError>() {
            return match e {
                LearnError::Core(c) => core_code(c),
                LearnError::Parameter(_) => EXIT_USAGE,
                LearnError::Divergence { .. } | LearnError::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

/// Name of the failed stage, if the chain carries one.
pub fn failed_stage(err: &anyhow::Error) -> Option<&'static str> {
    err.downcast_ref::<StageFailure>().map(|s| s.stage)
}
