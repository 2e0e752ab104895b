use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use nlch::config::{parse_config, KindConfig, RunConfig};
use nlch::diagnostics::{check_eps_convergence, check_tau_uniformity, oracle_order_study, SweepReport};
use nlch::error::Error;
use nlch::io::RunWriter;
use nlch::scheme::run;
use nlch::selftest;

#[derive(Parser)]
#[command(name = "nlch", version, about = "Nonlocal cross-diffusion Cahn-Hilliard solver on the flat torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time evolution: diagnostics CSV and field snapshots.
    Run {
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every snapshot as CSV.
        #[arg(long)]
        csv_fields: bool,
    },
    /// Distance to the local solution and operator probe error for each eps.
    SweepEps {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time-integrated estimate quantities for each tau.
    SweepTau {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        tau: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One implicit step against explicit micro-stepping, per tau.
    OracleCompare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![4e-4, 2e-4, 1e-4])]
        tau: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in invariant and oracle checks on tiny grids.
    Check,
}

enum Failure {
    Error(Error),
    SelfTest(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn header(config: &RunConfig, command: &str) -> Result<String, Error> {
    let params = config.model_params()?;
    let mut h = format!(
        "# nlch {} {command}\n# threads = {}\n",
        env!("CARGO_PKG_VERSION"),
        config.effective_threads()
    );
    for w in params.warnings() {
        h.push_str(&format!("# warning: {w}\n"));
    }
    h.push_str(&config.to_text());
    Ok(h)
}

fn prepare(config: &RunConfig, out: Option<PathBuf>, command: &str) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| config.output.dir.clone());
    fs::create_dir_all(&dir)?;
    let h = header(config, command)?;
    for line in h.lines().filter(|l| l.starts_with("# warning")) {
        eprintln!("nlch: {}", line.trim_start_matches("# "));
    }
    fs::write(dir.join("run_header.txt"), h)?;
    Ok(dir)
}

fn report(dir: &Path, name: &str, r: &SweepReport) -> Result<(), Failure> {
    fs::write(dir.join(name), r.to_csv())?;
    print!("{}", r.to_csv());
    print!("{}", r.summary());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out, csv_fields } => {
            let cfg = load(&config)?;
            let dir = prepare(&cfg, out, "run")?;
            let model = cfg.build_model()?;
            let initial = cfg.initial_state()?;
            let local = matches!(cfg.model.kind, KindConfig::Local);
            let mut writer = RunWriter::create(&dir, cfg.model.species, local, csv_fields)?;
            let start = Instant::now();
            let summary = run(&model, &cfg.scheme, initial, cfg.t_final, cfg.output.snapshot_every, &mut writer);
            let floor = writer.min_floor;
            let snaps = writer.finish()?;
            let summary = summary?;
            let last = summary.records.last().expect("initial record");
            println!(
                "steps={} retries={} t={:e} energy={:e} min_floor={:e} snapshots={} elapsed_s={:.2}",
                summary.steps,
                summary.retries,
                summary.final_state.time(),
                last.energy_total,
                if summary.steps == 0 { last.min_u } else { floor },
                snaps.len(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::SweepEps { config, eps, out } => {
            let cfg = load(&config)?;
            let dir = prepare(&cfg, out, "sweep-eps")?;
            report(&dir, "sweep_eps.csv", &check_eps_convergence(&cfg, &eps)?)?;
        }
        Command::SweepTau { config, tau, out } => {
            let cfg = load(&config)?;
            let dir = prepare(&cfg, out, "sweep-tau")?;
            report(&dir, "sweep_tau.csv", &check_tau_uniformity(&cfg, &tau)?)?;
        }
        Command::OracleCompare { config, tau, out } => {
            let cfg = load(&config)?;
            let dir = prepare(&cfg, out, "oracle-compare")?;
            report(&dir, "oracle_compare.csv", &oracle_order_study(&cfg, &tau)?)?;
        }
        Command::Check => {
            let results = selftest::run_all();
            let mut failed = 0;
            for r in &results {
                println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += !r.passed as usize;
            }
            println!("{} of {} properties passed", results.len() - failed, results.len());
            if failed > 0 {
                return Err(Failure::SelfTest(failed));
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::SelfTest(n)) => {
            eprintln!("nlch: error kind=selftest code=3 message=\"{n} properties failed\"");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            let (kind, code) = if e.is_solver_failure() { ("solver", 2) } else { ("validation", 1) };
            eprintln!(
                "nlch: error kind={kind} code={code} message=\"{}\"",
                one_line(&e.to_string()).replace('"', "'")
            );
            ExitCode::from(code)
        }
    }
}
