//! uvforge: corpus generation, dual-network training, UV texture recovery,
//! editing, interpolation, evaluation and ablations.

mod args;
mod commands;
mod config;
mod runs;

use std::process::ExitCode;

pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            kind: "config",
            msg: msg.into(),
        }
    }
    pub fn missing(msg: impl Into<String>) -> Self {
        CliError {
            code: 3,
            kind: "missing-file",
            msg: msg.into(),
        }
    }
    pub fn run(msg: impl Into<String>) -> Self {
        CliError {
            code: 1,
            kind: "run",
            msg: msg.into(),
        }
    }
}

impl From<uvforge_core::Error> for CliError {
    fn from(e: uvforge_core::Error) -> Self {
        use uvforge_core::Error as E;
        match &e {
            E::Config { .. } => CliError::config(e.to_string()),
            E::MissingFile(_) => CliError::missing(e.to_string()),
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::missing(e.to_string())
            }
            _ => CliError::run(e.to_string()),
        }
    }
}

fn init_threads() {
    if let Ok(n) = std::env::var("UVFORGE_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let parsed = match args::parse(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("uvforge-error code=2 kind=usage msg={:?}", msg);
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(&parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uvforge-error code={} kind={} msg={:?}", e.code, e.kind, e.msg);
            ExitCode::from(e.code)
        }
    }
}
