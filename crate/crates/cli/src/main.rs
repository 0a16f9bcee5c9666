mod args;
mod commands;
mod fsutil;

use std::process::ExitCode;

use precondgen::lm::LmError;
use precondgen::metrics::MetricsError;
use precondgen::pipeline::PipelineError;

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Internal = 1,
    Config = 2,
    Data = 3,
    ModelFormat = 4,
    EvalInput = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(status: Status, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            status,
            error: error.into(),
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        Self::new(Status::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl std::fmt::Display) -> Self {
        Self::new(Status::Data, anyhow::anyhow!("{msg}"))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            status: Status::Internal,
            error,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Status::Internal, e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Lm(LmError::Format { .. } | LmError::VersionMismatch { .. }) => {
                Status::ModelFormat
            }
            PipelineError::Lm(LmError::Io { .. }) | PipelineError::Config(_) => Status::Config,
            PipelineError::Lm(LmError::Argument(_)) | PipelineError::Decode(_) => Status::Config,
            PipelineError::Corpus(_) | PipelineError::Training(_) => Status::Data,
            PipelineError::Lm(_) => Status::Data,
        };
        Failure::new(status, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::new(Status::EvalInput, e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match args::parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(Status::Config as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.status as u8)
        }
    }
}
