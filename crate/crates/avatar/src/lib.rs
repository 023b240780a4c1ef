//! Host-side companion to `soda-core`: pod files on disk, scenario config
//! files, the live model adapter, the local HITL service and the `gatectl`
//! command line.

pub mod cli;
pub mod config;
pub mod live;
pub mod podfile;
pub mod service;

use std::process::ExitCode;

/// Process exit statuses. These are stable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    /// `verify-audit` found a broken chain.
    InvalidAudit = 1,
    /// Wrong passphrase, tampered pod, or no passphrase available.
    Auth = 2,
    /// Unreadable file or malformed content.
    Format = 3,
    Config = 4,
    /// `--strict-repro` rejected the run.
    StrictRepro = 5,
    /// Runtime failure: service, network, or model endpoint.
    Runtime = 6,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

/// A failure with the exit status it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }
}

impl From<soda_core::pod::PodError> for Failure {
    fn from(e: soda_core::pod::PodError) -> Self {
        use soda_core::pod::PodError as P;
        let exit = match e {
            P::Authentication | P::EmptyPassphrase => Exit::Auth,
            P::AlreadyMounted | P::SessionClosed | P::Kdf => Exit::Runtime,
            _ => Exit::Format,
        };
        Failure::new(exit, e.to_string())
    }
}

impl From<soda_core::sim::SimError> for Failure {
    fn from(e: soda_core::sim::SimError) -> Self {
        use soda_core::sim::SimError as S;
        let exit = match &e {
            S::Config(_) => Exit::Config,
            S::Adapter(_) => Exit::Runtime,
            S::Pod(_) | S::Fixture(_) => Exit::Format,
        };
        Failure::new(exit, e.to_string())
    }
}
