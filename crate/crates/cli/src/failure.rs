use gazesep::Error;

/// A failed command: message plus process exit code (1 runtime, 2 usage or
/// validation).
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub type Outcome<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Io { .. } | Error::Image(_) | Error::NonFinite { .. } => Failure::runtime(message),
            _ => Failure::usage(message),
        }
    }
}
