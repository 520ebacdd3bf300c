//! Scenario files, run reports and the on-instance verification suite
//! behind the `netmanip` binary.

mod report;
mod scenario;
mod verify;

pub use report::{
    read_reference, write_reference, write_trace, Report, TraceFormat, TraceRow, EXIT_BOUND_VIOLATION,
    EXIT_NON_CONVERGENCE, EXIT_OTHER, EXIT_PARSE,
};
pub use scenario::{
    parse_scenario, parse_scenario_str, AgentEntry, NetworkSource, OrganizationEntry, ScenarioFile,
    DEFAULT_SEED,
};
pub use verify::{verify, CheckOutcome, CheckStatus, VerifyOptions};

use crate::error::Error;

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } => EXIT_PARSE,
        Error::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
        _ => EXIT_OTHER,
    }
}
