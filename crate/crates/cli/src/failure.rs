//! Exit-code contract: 0 success, 1 internal failure, 2 bad input or usage.

use std::fmt::Display;

pub enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Internal(e) => e,
        }
    }

    pub fn input(msg: impl Display) -> Self {
        Failure::Input(anyhow::anyhow!("{msg}"))
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait ResultExt<T> {
    fn input_err<C: Display + Send + Sync + 'static>(self, ctx: impl FnOnce() -> C) -> CmdResult<T>;
    fn internal_err<C: Display + Send + Sync + 'static>(self, ctx: impl FnOnce() -> C) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn input_err<C: Display + Send + Sync + 'static>(self, ctx: impl FnOnce() -> C) -> CmdResult<T> {
        self.map_err(|e| Failure::Input(e.into().context(ctx())))
    }

    fn internal_err<C: Display + Send + Sync + 'static>(self, ctx: impl FnOnce() -> C) -> CmdResult<T> {
        self.map_err(|e| Failure::Internal(e.into().context(ctx())))
    }
}
