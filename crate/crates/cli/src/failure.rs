//! Errors reported by the binary, tagged with the module and operation that
//! produced them.

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub struct Failure {
    pub module: &'static str,
    pub operation: String,
    #[source]
    pub source: labelfuse::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "module={} operation=\"{}\" cause=\"{}\"",
            self.module, self.operation, self.source
        )
    }
}

impl Failure {
    pub fn invalid(module: &'static str, operation: &str, message: impl Into<String>) -> Self {
        Failure {
            module,
            operation: operation.to_string(),
            source: labelfuse::Error::InvalidInput(message.into()),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait During<T> {
    fn during(self, module: &'static str, operation: impl Into<String>) -> CliResult<T>;
}

impl<T> During<T> for labelfuse::Result<T> {
    fn during(self, module: &'static str, operation: impl Into<String>) -> CliResult<T> {
        self.map_err(|source| Failure {
            module,
            operation: operation.into(),
            source,
        })
    }
}
