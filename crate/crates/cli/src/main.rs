//! `bpdq`: variable-grid low-bit quantization of weight matrices.
//!
//! Exit codes: 0 success, 1 theory-suite failure, 2 configuration error,
//! 3 I/O or file-format error, 4 numerical failure.

mod commands;
mod report;
mod stats;
mod theory;

use bpdq_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bpdq",
    version,
    about = "Variable-grid low-bit weight quantization: solver, baselines, packed kernel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a layer and write the packed artifact
    Quantize(commands::QuantizeArgs),
    /// Expand a packed artifact back to a dense TNSR tensor
    Dequantize(commands::DequantizeArgs),
    /// Outlier statistics and reconstruction objectives
    Eval(commands::EvalArgs),
    /// Solver vs fixed-grid baselines over seeded layers
    Compare(commands::CompareArgs),
    /// Time the packed-kernel matvec against the dense path
    Bench(commands::BenchArgs),
    /// Run the executable theory suites
    TheoryCheck(commands::TheoryArgs),
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. }
        | Error::DimensionMismatch { .. }
        | Error::Precondition { .. }
        | Error::OracleSize { .. } => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Truncated { .. }
        | Error::NonFinite { .. } => 3,
        Error::SingularHessian { .. } | Error::Singular { .. } => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Quantize(args) => commands::cmd_quantize(args),
        Command::Dequantize(args) => commands::cmd_dequantize(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Compare(args) => commands::cmd_compare(args),
        Command::Bench(args) => commands::cmd_bench(args),
        Command::TheoryCheck(args) => commands::cmd_theory(args),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    std::process::exit(code);
}
