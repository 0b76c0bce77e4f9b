use std::fmt;
use std::process::ExitCode;

use hglmm::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Clap(clap::Error),
    Lib(Error),
}

impl CliError {
    /// 1 usage, 2 format, 3 shape, 4 numerical.
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Usage(_) | CliError::Clap(_) => 1,
            CliError::Lib(e) => match e {
                Error::Io(_) => 1,
                Error::Format(_) | Error::Validation(_) => 2,
                Error::Shape(_) => 3,
                Error::Domain(_) | Error::RankDeficient { .. } | Error::Numerical(_) => 4,
            },
        };
        ExitCode::from(code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Clap(e) => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or("invalid arguments");
                f.write_str(first.trim_start_matches("error: "))
            }
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Clap(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}
