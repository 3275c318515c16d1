use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use rayon::prelude::*;
use vitalsig_cli::error::{EXIT_RUNTIME, EXIT_VALIDATION};
use vitalsig_cli::pipeline::REPORT_FILE;
use vitalsig_cli::{parse_verbs, run, CliError, Manifest, PipelineConfig, Report, RunOptions, Verb};

/// Runs vital-sign pipelines described by JSON manifests.
#[derive(Debug, Parser)]
#[command(name = "vitalsig", version)]
struct Args {
    /// Experiment manifest; repeat to run several subjects in parallel.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Output directory; one subdirectory per subject when several manifests are given.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated verbs: synth, flow, fuse, rppg, ptt, resp-ppg, resp-motion, stats.
    /// Defaults to every verb the manifest has inputs for.
    #[arg(long)]
    verbs: Option<String>,
    /// Verbs may also be given positionally.
    #[arg(value_name = "VERB")]
    positional: Vec<String>,
    /// Seed for synthetic subjects.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// JSON file overriding the pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective default configuration and exit.
    #[arg(long, conflicts_with = "manifests")]
    print_config: bool,
}

fn verbs(args: &Args) -> Result<Option<Vec<Verb>>, CliError> {
    let mut list: Vec<String> = args.positional.clone();
    if let Some(v) = &args.verbs {
        list.push(v.clone());
    }
    if list.is_empty() {
        return Ok(None);
    }
    parse_verbs(&list.join(",")).map(Some)
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn fail_report(subject: &str, verb: &str, err: &CliError) -> Report {
    let mut r = Report::new(subject, "", None);
    r.push_error(verb, err);
    r
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if args.print_config {
        let text = serde_json::to_string_pretty(&PipelineConfig::default()).expect("config serializes");
        let _ = writeln!(std::io::stdout(), "{text}");
        return ExitCode::SUCCESS;
    }
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    }

    let setup = verbs(&args).and_then(|v| {
        let config = args.config.as_deref().map(PipelineConfig::load_override).transpose()?;
        Ok((v, config))
    });
    let multi = args.manifests.len() > 1;
    let reports: Vec<(PathBuf, Report)> = args
        .manifests
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let fallback_dir = if multi { args.out.join(format!("manifest{i}")) } else { args.out.clone() };
            let (verbs, config) = match &setup {
                Ok(s) => s.clone(),
                Err(e) => return (fallback_dir, fail_report("", "arguments", e)),
            };
            let manifest = match Manifest::load(path) {
                Ok(m) => m,
                Err(e) => return (fallback_dir, fail_report("", "manifest", &e)),
            };
            let out_dir = if multi { args.out.join(&manifest.subject) } else { args.out.clone() };
            let opts = RunOptions {
                out_dir: out_dir.clone(),
                verbs,
                seed: args.seed,
                config,
            };
            (out_dir, run(manifest, &opts))
        })
        .collect();

    let mut codes = Vec::new();
    for (dir, mut report) in reports {
        report.timestamp = now();
        for e in &report.errors {
            if report.subject.is_empty() {
                eprintln!("error: {}: {}", e.verb, e.message);
            } else {
                eprintln!("error: [{}] {}: {}", report.subject, e.verb, e.message);
            }
        }
        if let Err(e) = report.write(&dir.join(REPORT_FILE)) {
            eprintln!("error: {e}");
            codes.push(e.exit_code());
        }
        codes.push(report.exit_code());
    }
    // Validation failures take precedence over runtime ones.
    let code = [EXIT_VALIDATION, EXIT_RUNTIME]
        .into_iter()
        .find(|c| codes.contains(c))
        .unwrap_or(0);
    ExitCode::from(code as u8)
}
