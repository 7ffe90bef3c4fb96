use std::fmt::Display;
use std::process::ExitCode;

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Data = 2,
    Runtime = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(exit: Exit, error: impl Into<anyhow::Error>) -> Self {
        Failure { exit, error: error.into() }
    }

    pub fn usage(msg: impl Display) -> Self {
        Failure::new(Exit::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl Display) -> Self {
        Failure::new(Exit::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(msg: impl Display) -> Self {
        Failure::new(Exit::Runtime, anyhow::anyhow!("{msg}"))
    }

    pub fn code(&self) -> ExitCode {
        ExitCode::from(self.exit as u8)
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Classifies an error and adds context in one step.
pub trait Classify<T> {
    fn or_exit(self, exit: Exit, context: impl Display) -> CmdResult<T>;

    fn data(self, context: impl Display) -> CmdResult<T>
    where
        Self: Sized,
    {
        self.or_exit(Exit::Data, context)
    }

    fn runtime(self, context: impl Display) -> CmdResult<T>
    where
        Self: Sized,
    {
        self.or_exit(Exit::Runtime, context)
    }

    fn usage(self, context: impl Display) -> CmdResult<T>
    where
        Self: Sized,
    {
        self.or_exit(Exit::Usage, context)
    }
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit(self, exit: Exit, context: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure { exit, error: e.into().context(context.to_string()) })
    }
}
