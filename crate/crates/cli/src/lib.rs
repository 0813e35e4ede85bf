//! Command-line front end for the blowup experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use clap::{Parser, Subcommand};

use charblow::{Error, ErrorKind};

use config::{Command, Flags};

#[derive(Debug, Parser)]
#[command(name = "charblow", version, about = "Gradient blowup experiments for hyperbolic balance laws")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Check strict hyperbolicity, genuine nonlinearity and the source condition.
    Verify(Flags),
    /// Eigenframe and coefficient tensors at one state.
    Spectral(Flags),
    /// Sampled bounds and the derived constant chain.
    Constants(Flags),
    /// Write the initial data on the finest grid.
    Data(Flags),
    /// Run one simulation and estimate its blowup time.
    Simulate(Flags),
    /// Running suprema along one simulation.
    Lemma3(Flags),
    /// Lifespan scan over amplitudes and source strengths.
    Lifespan(Flags),
}

impl Sub {
    fn split(&self) -> (Command, &Flags) {
        match self {
            Sub::Verify(f) => (Command::Verify, f),
            Sub::Spectral(f) => (Command::Spectral, f),
            Sub::Constants(f) => (Command::Constants, f),
            Sub::Data(f) => (Command::Data, f),
            Sub::Simulate(f) => (Command::Simulate, f),
            Sub::Lemma3(f) => (Command::Lemma3, f),
            Sub::Lifespan(f) => (Command::Lifespan, f),
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::TheoryGate => 2,
        ErrorKind::Numeric => 3,
    }
}

fn init_threads(flags: &Flags) -> Result<(), Error> {
    let jobs = match flags.jobs {
        Some(j) => Some(j),
        None => match std::env::var("CHARBLOW_JOBS") {
            Ok(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("CHARBLOW_JOBS must be a positive integer, got `{s}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        // Fails only if the pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(())
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let (command, flags) = cli.command.split();
    let result = init_threads(flags)
        .and_then(|_| config::resolve(command, flags))
        .and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            out.exit
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}
