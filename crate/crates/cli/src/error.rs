use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Bad arguments, config or file contents.
    Invalid,
    Io,
    /// Non-finite values or a failed gradient check.
    Numeric,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Invalid,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Numeric,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Failure {
            kind: Kind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// 2 for invalid input and io, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Invalid | Kind::Io => 2,
            Kind::Numeric => 3,
        }
    }

    pub fn context(mut self, ctx: impl fmt::Display) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }
}

impl From<pinode_core::Error> for Failure {
    fn from(e: pinode_core::Error) -> Self {
        Failure {
            kind: if e.is_numeric() {
                Kind::Numeric
            } else {
                Kind::Invalid
            },
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}
