use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ristwin::config::{ExperimentSpec, Method};
use ristwin::orchestrator::{run_experiment, run_many, RunResult};
use ristwin::output::{self, replay_curves};
use ristwin::snapshot::Snapshot;
use ristwin::{validate, Error, Result};

#[derive(Parser)]
#[command(name = "ristwin", version, about = "Digital-twin-aided RIS cell-free uplink optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write curves, manifest and snapshots.
    Run {
        spec: PathBuf,
        /// Output directory; overrides RISTWIN_OUTPUT and the spec.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a spec once per value of one parameter, for one or more methods.
    Sweep {
        spec: PathBuf,
        /// Dotted spec path, or one of p_max, K, M, B, N.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated methods; defaults to the spec's method.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-emit the CSV curves of a run from its snapshots.
    Replay {
        /// A run directory or one or more snapshot files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the oracle and property self-checks.
    Validate,
}

fn output_dir(flag: Option<PathBuf>, spec: &ExperimentSpec) -> PathBuf {
    flag.or_else(|| std::env::var_os("RISTWIN_OUTPUT").map(PathBuf::from))
        .unwrap_or_else(|| spec.output.clone())
}

fn param_path(p: &str) -> &str {
    match p {
        "p_max" => "system.p_max_w",
        "K" => "system.num_ues",
        "M" => "system.num_aps",
        "B" => "system.num_ris",
        "N" => "system.elements_per_ris",
        other => other,
    }
}

fn summarize(runs: &[RunResult]) {
    for r in runs {
        let p = r.final_physical();
        println!(
            "{} seed {}: final sum-rate {} bit/s/Hz, reward {}, violations {}",
            r.method,
            r.seed,
            output::fmt_sig9(p.sum_rate),
            output::fmt_sig9(p.reward),
            p.violations
        );
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cmd_run(spec_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let spec = ExperimentSpec::load(spec_path)?;
    let dir = output_dir(out, &spec);
    let runs = run_experiment(&spec)?;
    output::write_run_outputs(&dir, &spec, &runs)?;
    summarize(&runs);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(spec_path: &Path, param: &str, values: &[String], methods: Vec<Method>, out: Option<PathBuf>) -> Result<()> {
    let base = ExperimentSpec::load(spec_path)?;
    let dir = output_dir(out, &base);
    let methods = if methods.is_empty() { vec![base.method] } else { methods };
    let path = param_path(param);
    let mut specs = Vec::new();
    for &m in &methods {
        for v in values {
            let s = base.with_override("method", m.name())?.with_override(path, v)?;
            specs.push((m, v.clone(), s));
        }
    }
    let jobs = specs
        .iter()
        .flat_map(|(_, _, s)| s.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();
    let mut results = run_many(jobs)?.into_iter();

    std::fs::create_dir_all(&dir)?;
    let mut summary = csv::Writer::from_path(dir.join("sweep.csv"))?;
    summary.write_record(["method", "param", "value", "seed", "final_sum_rate", "violations"])?;
    for (m, v, s) in &specs {
        let runs: Vec<RunResult> = results.by_ref().take(s.seeds.len()).collect();
        output::write_run_outputs(&dir.join(m.name()).join(format!("{param}={v}")), s, &runs)?;
        for r in &runs {
            let p = r.final_physical();
            summary.write_record([
                m.name().to_string(),
                path.to_string(),
                v.clone(),
                r.seed.to_string(),
                output::fmt_sig9(p.sum_rate),
                p.violations.to_string(),
            ])?;
        }
        let med = median(runs.iter().map(RunResult::final_sum_rate).collect());
        println!("{m} {param}={v}: median final sum-rate {}", output::fmt_sig9(med));
    }
    summary.flush()?;
    println!("wrote {}", dir.display());
    Ok(())
}

/// Snapshot files of a run directory, in the manifest's seed order.
fn run_dir_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.join("manifest.json").display())))?;
    let seeds = manifest["seeds"]
        .as_array()
        .ok_or_else(|| Error::InvalidArgument("manifest has no seed list".into()))?;
    seeds
        .iter()
        .map(|s| {
            let seed = s.as_u64().ok_or_else(|| Error::InvalidArgument(format!("bad seed {s}")))?;
            Ok(dir.join(output::snapshot_name(seed)))
        })
        .collect()
}

fn cmd_replay(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut files = Vec::new();
    for i in inputs {
        if i.is_dir() {
            files.extend(run_dir_snapshots(i)?);
        } else {
            files.push(i.clone());
        }
    }
    let curves = files
        .iter()
        .map(|f| replay_curves(&Snapshot::load(f)?))
        .collect::<Result<Vec<_>>>()?;
    output::write_replayed_csvs(out, &curves)?;
    println!("replayed {} run(s) into {}", curves.len(), out.display());
    Ok(())
}

fn cmd_validate() -> bool {
    let mut ok = true;
    for r in validate::run_all() {
        println!(
            "[{}] {} ({:.1} s): {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
        ok &= r.passed;
    }
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec, output } => cmd_run(&spec, output),
        Command::Sweep {
            spec,
            param,
            values,
            methods,
            output,
        } => cmd_sweep(&spec, &param, &values, methods, output),
        Command::Replay { inputs, output } => cmd_replay(&inputs, &output),
        Command::Validate => {
            return if cmd_validate() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
