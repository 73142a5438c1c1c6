//! Command-line front end: run one experiment, sweep a config key, or check
//! the solvers against their reference oracles.

use airfl::config::ExperimentConfig;
use airfl::experiment::{run_experiment, sweep};
use airfl::oracle;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "airfl",
    version,
    about = "Simulator of Byzantine-resilient federated learning over an analog multiple-access channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the config once per value of one dotted key, e.g.
    /// --vary scheme=fedsac,random_clustering.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vary: String,
    },
    /// Check a solver suite against its brute-force or analytic reference.
    OracleCheck {
        #[arg(long)]
        suite: Suite,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Clustering,
    Noise,
    Weighting,
    Bounds,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => run_cmd(&config),
        Command::Sweep { config, vary } => sweep_cmd(&config, &vary),
        Command::OracleCheck { suite } => oracle_cmd(suite),
    }
}

fn run_cmd(path: &PathBuf) -> ExitCode {
    let cfg = match ExperimentConfig::from_path(path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&format!("config {}: {e}", path.display())),
    };
    match run_experiment(&cfg) {
        Ok(out) => {
            let s = &out.summary;
            println!(
                "scheme {:?} seed {} rounds {}",
                s.scheme, s.seed, s.rounds_run
            );
            println!(
                "final loss {} accuracy {}",
                fmt_opt(s.final_loss),
                fmt_opt(s.final_accuracy)
            );
            if !s.byzantine.is_empty() || !s.identified.is_empty() {
                println!(
                    "byzantine {:?} identified {:?} (tp {} fp {} fn {})",
                    s.byzantine,
                    s.identified,
                    s.confusion.true_positive,
                    s.confusion.false_positive,
                    s.confusion.false_negative
                );
            }
            println!(
                "max transmit power {:.6e} (honest {:.6e}), wall {:.1}s",
                s.max_tx_power, s.max_honest_tx_power, s.wall_time_secs
            );
            if let Some(dir) = &cfg.output.dir {
                println!("outputs in {dir}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&format!("run: {e}")),
    }
}

fn sweep_cmd(path: &PathBuf, vary: &str) -> ExitCode {
    let cfg = match ExperimentConfig::from_path(path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&format!("config {}: {e}", path.display())),
    };
    let Some((key, list)) = vary.split_once('=') else {
        return fail("--vary expects key=value1,value2,...");
    };
    let values: Vec<String> = list.split(',').map(str::to_string).collect();
    if values.is_empty() || values.iter().any(String::is_empty) {
        return fail("--vary expects at least one non-empty value");
    }
    match sweep(&cfg, key, &values) {
        Ok(entries) => {
            for e in &entries {
                let s = &e.output.summary;
                println!(
                    "{key}={}: rounds {} final loss {} accuracy {}",
                    e.value,
                    s.rounds_run,
                    fmt_opt(s.final_loss),
                    fmt_opt(s.final_accuracy)
                );
            }
            if let Some(dir) = &cfg.output.dir {
                println!("outputs in {dir}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&format!("sweep: {e}")),
    }
}

fn oracle_cmd(suite: Suite) -> ExitCode {
    let mut ok = true;
    if matches!(suite, Suite::Clustering | Suite::All) {
        ok &= check_clustering();
    }
    if matches!(suite, Suite::Noise | Suite::All) {
        ok &= check_noise();
    }
    if matches!(suite, Suite::Weighting | Suite::All) {
        ok &= check_weighting();
    }
    if matches!(suite, Suite::Bounds | Suite::All) {
        ok &= check_bounds();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check_clustering() -> bool {
    let t = Instant::now();
    let cases = oracle::clustering_suite(200, 0xC1);
    let worst = cases
        .iter()
        .map(|c| c.relative_excess())
        .fold(0.0_f64, f64::max);
    let pass = worst <= 1e-9;
    report(
        "clustering",
        pass,
        &format!(
            "{} instances, worst relative excess over brute force {worst:.2e}",
            cases.len()
        ),
        t,
    );
    pass
}

fn check_noise() -> bool {
    let t = Instant::now();
    let cases = oracle::noise_suite(100_000, 0xC2);
    let worst = cases
        .iter()
        .map(|c| c.relative_error())
        .fold(0.0_f64, f64::max);
    let pass = worst <= 0.02;
    report(
        "noise",
        pass,
        &format!(
            "{} configurations x 1e5 draws, worst relative variance error {:.2}%",
            cases.len(),
            100.0 * worst
        ),
        t,
    );
    pass
}

fn check_weighting() -> bool {
    let t = Instant::now();
    let cases = oracle::weighting_suite(50, 0xC6);
    let worst_gap = cases
        .iter()
        .map(|c| c.objective_gap().abs())
        .fold(0.0_f64, f64::max);
    let worst_penalty = cases.iter().map(|c| c.penalty_l1).fold(0.0_f64, f64::max);
    let structure = cases.iter().all(|c| c.structure_ok);
    let pass = structure && worst_gap <= 1e-3 && worst_penalty <= 1e-4;
    report(
        "weighting",
        pass,
        &format!(
            "{} instances vs 10-partition oracle, worst gap {worst_gap:.2e}, worst slack {worst_penalty:.2e}, structure {}",
            cases.len(),
            if structure { "ok" } else { "violated" }
        ),
        t,
    );
    pass
}

fn check_bounds() -> bool {
    let t = Instant::now();
    let rep = oracle::bounds_suite(20, 60, 0xC4);
    let z = rep.worst_normalized_margin();
    let pass = rep.saturation >= 1.0 - 1e-9 && z >= -3.0;
    report(
        "bounds",
        pass,
        &format!(
            "{} noise seeds x {} rounds, saturation {:.6}, worst margin {} standard errors",
            rep.noise_seeds,
            rep.rounds,
            rep.saturation,
            if z.is_finite() {
                format!("{z:.2}")
            } else {
                "inf (all nonnegative)".into()
            }
        ),
        t,
    );
    pass
}

fn report(name: &str, pass: bool, detail: &str, t: Instant) {
    println!(
        "{name}: {} ({detail}, {:.1}s)",
        if pass { "pass" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn fail(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::FAILURE
}
