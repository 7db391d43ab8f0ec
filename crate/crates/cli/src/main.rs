//! `fraclab`: batch front-end over `fraclab-core`.
//!
//! Exit codes: 0 on success, 2 on validation or I/O errors, 3 when a solver
//! did not converge (the artifacts that finished are still written, with
//! `"partial": true`). Every error is also printed to stderr as one JSON line.

mod args;
mod commands;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

use fraclab_core::cache::GraphCache;
use fraclab_core::Execution;

use args::Cli;
use commands::{Artifacts, Context, Failure};

const DEFAULT_CACHE_DIR: &str = ".fraclab-cache";

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: &'a str,
    exit_code: i32,
}

fn report_error(kind: &str, message: &str, exit_code: i32) -> ExitCode {
    let line = ErrorLine { error: ErrorBody { kind, message, exit_code } };
    eprintln!("{}", serde_json::to_string(&line).expect("error line serializes"));
    ExitCode::from(exit_code as u8)
}

fn write_artifacts(out: &Path, name: &str, art: &Artifacts, emit_svg: bool) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{name}.json")), &art.json)?;
    fs::write(out.join(format!("{name}.csv")), &art.csv)?;
    if emit_svg {
        if let Some(svg) = &art.svg {
            fs::write(out.join(format!("{name}.svg")), svg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return report_error("validation", msg.trim(), 2);
        }
    };
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return report_error("validation", "--workers must be at least 1", 2);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => return report_error("io", &e.to_string(), 2),
    };
    let cache = match &cli.cache_dir {
        Some(d) => GraphCache::new(d),
        None => GraphCache::from_env_or(DEFAULT_CACHE_DIR),
    };
    let exec = if workers > 1 { Execution::Parallel } else { Execution::Sequential };
    let ctx = Context { cache, exec };
    let name = cli.command.name();
    let result = pool.install(|| commands::run(&cli.command, &ctx));
    let art = match result {
        Ok(a) => a,
        Err(f) => return report_error(f.kind(), f.message(), f.exit_code()),
    };
    if let Err(e) = write_artifacts(&cli.out, name, &art, cli.emit_svg) {
        return report_error("io", &format!("writing to {}: {e}", cli.out.display()), 2);
    }
    print!("{}", art.json);
    match &art.partial {
        Some(f) => report_error(f.kind(), f.message(), Failure::exit_code(f)),
        None => ExitCode::SUCCESS,
    }
}
