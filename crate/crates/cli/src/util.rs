//! Error classes, exit codes and small I/O helpers shared by subcommands.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use blockprnu::{Error, ErrorClass};
use sha2::{Digest, Sha256};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    class: ErrorClass,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            class: ErrorClass::Usage,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            class: ErrorClass::InputFormat,
            message: message.into(),
        }
    }

    pub fn classed(class: ErrorClass, message: impl Into<String>) -> Self {
        CliError {
            class,
            message: message.into(),
        }
    }

    /// Wraps a library error with what was being done, e.g. the path.
    pub fn at(context: impl fmt::Display) -> impl FnOnce(Error) -> CliError {
        move |e| CliError {
            class: e.class(),
            message: format!("{context}: {e}"),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Usage => EXIT_USAGE,
            ErrorClass::InputFormat => EXIT_INPUT,
            ErrorClass::Degenerate => EXIT_DEGENERATE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when it is absent or `-`.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) if p != Path::new("-") => write_file(p, text.as_bytes()),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::input(format!("stdout: {e}")))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
