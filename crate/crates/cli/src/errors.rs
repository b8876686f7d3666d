use std::error::Error;
use std::fmt;

/// Failures split by exit code. `Usage` covers everything that goes wrong
/// before a run starts computing: bad flags, an unreadable or malformed
/// config, a missing checkpoint, an output directory that cannot be
/// created. `Numeric` covers failures once work is underway, such as a
/// diverged optimizer or an IO error while writing results.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Numeric(msg) => f.write_str(msg),
        }
    }
}

impl Error for CliError {}

/// Render an error with its full source chain, outermost first.
pub fn error_chain(err: &(dyn Error + 'static)) -> String {
    let mut out = err.to_string();
    let mut cur = err.source();
    while let Some(e) = cur {
        out.push_str(": ");
        out.push_str(&e.to_string());
        cur = e.source();
    }
    out
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn numeric<E: Error + 'static>(err: E) -> CliError {
    CliError::Numeric(error_chain(&err))
}
