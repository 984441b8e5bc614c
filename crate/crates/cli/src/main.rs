mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

/// Short machine-readable class of a failure.
fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<duetsep_toylab::ToyError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<duetsep_core::Error>() {
            return e.kind();
        }
        if cause.is::<commands::UsageError>() {
            return "usage";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "runtime"
}

/// Context chain joined with `: `, skipping causes already quoted by an outer message.
fn chain_message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let summary = rendered.split("\nUsage:").next().unwrap_or_default();
            eprintln!(
                "error: kind=usage message={}",
                one_line(summary.trim_start_matches("error: "))
            );
            eprintln!("{}", rendered.trim_end());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = error_kind(&err);
            eprintln!("error: kind={kind} message={}", one_line(&chain_message(&err)));
            if kind == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
