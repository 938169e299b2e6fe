//! Command-line front end: validate configurations, query the stability
//! region, run one-shot selections, simulate, sweep load scalings, and run
//! the built-in reproduction suite.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 validation failure, 3 one or
//! more reproduction criteria failed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use conesched::analysis::{
    effective_service_rates, flow_balance_check, lyapunov_series, rate_stability, VerdictOptions,
};
use conesched::config::{BuiltConfig, RunConfig};
use conesched::model::validate_matrix;
use conesched::region::{
    boundary_scale, certificate_residual, margin, membership, min_drain_deficit,
    region_polygon_2d,
};
use conesched::scheduler::{select_with, SelectOptions};
use conesched::sim::{simulate, SimOptions, Trajectory};

const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "conesched",
    version,
    about = "Cone schedules for multi-queue systems: regions, selection, simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration: system shape, proportions, and matrix report.
    Validate {
        /// Path to the JSON configuration.
        config: PathBuf,
    },
    /// Decide region membership and emit boundary data.
    Region {
        /// Path to the JSON configuration.
        config: PathBuf,
        /// Load vector to query, comma-separated (default: the configured
        /// traffic load).
        #[arg(long, value_name = "R1,R2,..")]
        query: Option<String>,
        /// Write the two-queue boundary polygon as CSV with columns
        /// `angle,rho_1,rho_2` to this path (`-` for stdout).
        #[arg(long, value_name = "PATH")]
        polygon: Option<PathBuf>,
        /// Number of swept directions for the polygon.
        #[arg(long, default_value_t = 65)]
        angles: usize,
    },
    /// One-shot schedule selection at a given workload.
    Select {
        /// Path to the JSON configuration.
        config: PathBuf,
        /// Workload vector, comma-separated.
        #[arg(long, value_name = "X1,X2,..")]
        workload: String,
        /// Environment to select in (numbered from 1).
        #[arg(long, default_value_t = 1)]
        env: usize,
        /// Half-width of adversarial score noise to tolerate.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Run the event-driven simulation and report a stability verdict.
    Simulate {
        /// Path to the JSON configuration.
        config: PathBuf,
        /// Write the trajectory CSV (columns `time,x_1..x_Q,env,s_1..s_Q`)
        /// to this path (`-` for stdout; omitted: no CSV).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Also report the Lyapunov quadratic series diagnostics.
        #[arg(long)]
        lyapunov: bool,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        verdict: VerdictArgs,
    },
    /// Simulate a grid of load scalings along a direction; one CSV row each.
    Sweep {
        /// Path to the JSON configuration.
        config: PathBuf,
        /// Direction to scale, comma-separated (default: the configured
        /// traffic load).
        #[arg(long, value_name = "D1,D2,..")]
        direction: Option<String>,
        /// Smallest scaling factor.
        #[arg(long, default_value_t = 0.1)]
        theta_min: f64,
        /// Largest scaling factor.
        #[arg(long, default_value_t = 1.5)]
        theta_max: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 15)]
        steps: usize,
        /// Write the summary CSV to this path (default stdout).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        verdict: VerdictArgs,
    },
    /// Run the built-in reproduction suite and print one line per criterion.
    Repro {
        /// Run a single criterion (1-10) instead of all of them.
        #[arg(long)]
        criterion: Option<usize>,
    },
}

/// Simulation knobs that are not part of the configuration document.
#[derive(Args)]
struct RunArgs {
    /// Starting workload, comma-separated (default: all queues empty).
    #[arg(long, value_name = "X1,X2,..")]
    initial: Option<String>,
    /// Spacing of interior trajectory samples (default: horizon / 1024).
    #[arg(long)]
    stride: Option<f64>,
    /// The scheduler observes the workload this far in the past.
    #[arg(long, default_value_t = 0.0)]
    lag: f64,
    /// Half-width of adversarial perturbation on selection scores.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

/// Thresholds of the stability verdict.
#[derive(Args)]
struct VerdictArgs {
    /// Fraction of the horizon, counted from the end, used for tail fits.
    #[arg(long, default_value_t = 0.5)]
    tail_fraction: f64,
    /// Stable when growth is below this times max(1, max load).
    #[arg(long, default_value_t = 0.01)]
    stable_threshold: f64,
    /// With a positive predicted deficit d, unstable requires growth of at
    /// least this times d.
    #[arg(long, default_value_t = 0.5)]
    unstable_factor: f64,
}

impl RunArgs {
    fn to_options(&self) -> Result<SimOptions, CliError> {
        Ok(SimOptions {
            initial_workload: match &self.initial {
                Some(text) => Some(parse_vector(text, "initial workload")?),
                None => None,
            },
            sample_stride: self.stride,
            info_lag: self.lag,
            selection_noise: self.noise,
            ..SimOptions::default()
        })
    }
}

impl VerdictArgs {
    fn to_options(&self) -> VerdictOptions {
        VerdictOptions {
            tail_fraction: self.tail_fraction,
            stable_rel: self.stable_threshold,
            unstable_factor: self.unstable_factor,
        }
    }
}

/// Failures grouped by exit code: bad inputs versus I/O trouble.
enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

macro_rules! validation_error_from {
    ($($type:ty),*) => {$(
        impl From<$type> for CliError {
            fn from(e: $type) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_error_from!(
    conesched::config::ConfigError,
    conesched::model::ModelError,
    conesched::region::RegionError,
    conesched::scheduler::SchedulerError,
    conesched::sim::SimError
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Region {
            config,
            query,
            polygon,
            angles,
        } => cmd_region(&config, query.as_deref(), polygon.as_deref(), angles),
        Command::Select {
            config,
            workload,
            env,
            noise,
        } => cmd_select(&config, &workload, env, noise),
        Command::Simulate {
            config,
            out,
            lyapunov,
            run,
            verdict,
        } => cmd_simulate(&config, out.as_deref(), lyapunov, &run, &verdict),
        Command::Sweep {
            config,
            direction,
            theta_min,
            theta_max,
            steps,
            out,
            run,
            verdict,
        } => cmd_sweep(
            &config,
            direction.as_deref(),
            (theta_min, theta_max, steps),
            out.as_deref(),
            &run,
            &verdict,
        ),
        Command::Repro { criterion } => cmd_repro(criterion),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn read_config(path: &Path) -> Result<(RunConfig, BuiltConfig), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let cfg = RunConfig::from_json(&text)?;
    let built = cfg.build()?;
    Ok((cfg, built))
}

/// The seed to use: `CONESCHED_SEED`, when set, overrides the configuration.
fn effective_seed(config_seed: u64) -> Result<u64, CliError> {
    match std::env::var("CONESCHED_SEED") {
        Ok(text) => text.trim().parse::<u64>().map_err(|_| {
            CliError::Validation(format!(
                "CONESCHED_SEED must be an unsigned integer, got {text:?}"
            ))
        }),
        Err(_) => Ok(config_seed),
    }
}

fn parse_vector(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("{what}: {part:?} is not a number")))
        })
        .collect()
}

/// Writes to a path, with `-` meaning stdout.
fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    if path.as_os_str() == "-" {
        print!("{contents}");
        std::io::stdout()
            .flush()
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
    } else {
        fs::write(path, contents)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("JSON serialization cannot fail")
    );
}

fn warn_if_cone_invalid(rows: &[Vec<f64>]) {
    let validity = validate_matrix(rows);
    if !validity.is_cone_valid() {
        eprintln!(
            "warning: matrix violates the cone-schedule hypotheses ({validity}); \
             stability on the region interior is NOT guaranteed"
        );
    }
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(path: &Path) -> Result<ExitCode, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let cfg = RunConfig::from_json(&text)?;
    let built = cfg.build()?;

    println!("configuration: {}", path.display());
    println!(
        "system: {} queues, {} environments, pi = {:?}",
        built.spec.queues(),
        built.spec.environments().len(),
        built.spec.pi()
    );
    for (i, env) in built.spec.environments().iter().enumerate() {
        println!(
            "  environment {}: {} service vectors after closure ({} given)",
            i + 1,
            env.services().len(),
            cfg.environments[i].services.len()
        );
    }
    let report = conesched::model::validate_system(&built.spec);
    println!("system report: {report}");

    let validity = validate_matrix(&cfg.matrix);
    println!("matrix report: {validity}");
    println!("cone-valid: {}", validity.is_cone_valid());

    if report.is_clean() && validity.is_cone_valid() {
        println!("result: ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("result: invalid");
        Ok(ExitCode::from(EXIT_VALIDATION))
    }
}

// ---------------------------------------------------------------------------
// region
// ---------------------------------------------------------------------------

fn cmd_region(
    path: &Path,
    query: Option<&str>,
    polygon: Option<&Path>,
    angles: usize,
) -> Result<ExitCode, CliError> {
    let (cfg, built) = read_config(path)?;
    let rho = match query {
        Some(text) => parse_vector(text, "query load")?,
        None => cfg.load().to_vec(),
    };

    let cert = membership(&rho, &built.spec)?;
    let rho_margin = margin(&rho, &built.spec)?;
    let scale = if rho.iter().any(|&r| r > 0.0) {
        Some(boundary_scale(&rho, &built.spec)?)
    } else {
        None
    };
    print_json(&json!({
        "rho": rho,
        "member": cert.member,
        "margin": rho_margin,
        "boundary_scale_along_rho": scale,
        "certificate": cert,
        "cover": cert.cover(&built.spec),
        "certificate_residual": certificate_residual(&cert, &rho, &built.spec),
    }));

    if let Some(out) = polygon {
        let points = region_polygon_2d(&built.spec, angles)?;
        let mut csv = String::from("angle,rho_1,rho_2\n");
        for (i, p) in points.iter().enumerate() {
            let angle = std::f64::consts::FRAC_PI_2 * i as f64 / (angles - 1) as f64;
            csv.push_str(&format!("{angle},{},{}\n", p[0], p[1]));
        }
        write_output(out, &csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

fn cmd_select(path: &Path, workload: &str, env: usize, noise: f64) -> Result<ExitCode, CliError> {
    let (cfg, built) = read_config(path)?;
    let x = parse_vector(workload, "workload")?;
    let n_envs = built.spec.environments().len();
    if env == 0 || env > n_envs {
        return Err(CliError::Validation(format!(
            "environment {env} is not in 1..={n_envs}"
        )));
    }
    warn_if_cone_invalid(&cfg.matrix);

    let services = built.spec.env(env - 1).services();
    let opts = SelectOptions {
        noise,
        ..SelectOptions::default()
    };
    let result = select_with(&x, services, &built.matrix, &opts)?;
    print_json(&json!({
        "workload": x,
        "env": env,
        "chosen": result.chosen.rates(),
        "value": result.value,
        "maximizers": result.maximizers,
        "maximizer_rates": result
            .maximizers
            .iter()
            .map(|&i| services[i].rates().to_vec())
            .collect::<Vec<_>>(),
        "cone_valid": validate_matrix(&cfg.matrix).is_cone_valid(),
    }));
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn trajectory_csv(traj: &Trajectory) -> String {
    let q = traj.queues();
    let mut header = String::from("time");
    for i in 1..=q {
        header.push_str(&format!(",x_{i}"));
    }
    header.push_str(",env");
    for i in 1..=q {
        header.push_str(&format!(",s_{i}"));
    }
    header.push('\n');

    let mut csv = header;
    for i in 0..traj.len() {
        let mut row = format!("{}", traj.time(i));
        for &v in traj.x(i) {
            row.push_str(&format!(",{v}"));
        }
        // Environments are numbered from 1 in user-facing output.
        row.push_str(&format!(",{}", traj.env(i) + 1));
        for &v in traj.service(i) {
            row.push_str(&format!(",{v}"));
        }
        row.push('\n');
        csv.push_str(&row);
    }
    csv
}

/// The deficit to measure instability against: present only when the load
/// sits outside the region.
fn predicted_deficit(built: &BuiltConfig) -> Result<Option<f64>, CliError> {
    let cert = membership(&built.traffic.load, &built.spec)?;
    if cert.member {
        Ok(None)
    } else {
        Ok(Some(min_drain_deficit(&built.traffic.load, &built.spec)?))
    }
}

fn run_summary(
    built: &BuiltConfig,
    traj: &Trajectory,
    seed: u64,
    verdict_opts: &VerdictOptions,
) -> Result<serde_json::Value, CliError> {
    let deficit = predicted_deficit(built)?;
    let verdict = rate_stability(traj, deficit, verdict_opts);
    let balance = flow_balance_check(traj);
    let t = traj.final_time().max(f64::MIN_POSITIVE);
    let occupancy: Vec<f64> = traj.occupancy().iter().map(|&o| o / t).collect();
    Ok(json!({
        "horizon": built.horizon,
        "seed": seed,
        "load": built.traffic.load,
        "final_time": traj.final_time(),
        "final_x": traj.final_x(),
        "verdict": verdict,
        "deficit_predicted": deficit,
        "effective_service_rates": effective_service_rates(traj),
        "flow_balance": balance,
        "event_counts": traj.event_counts,
        "events_total": traj.event_counts.total(),
        "samples": traj.len(),
        "occupancy_fraction": occupancy,
        "sliding_fraction": traj.sliding_time / t,
        "guard_activations": traj.guard_activations,
        "used_vectors": traj
            .used_vectors()
            .iter()
            .map(|s| s.rates().to_vec())
            .collect::<Vec<_>>(),
    }))
}

fn cmd_simulate(
    path: &Path,
    out: Option<&Path>,
    lyapunov: bool,
    run: &RunArgs,
    verdict: &VerdictArgs,
) -> Result<ExitCode, CliError> {
    let (cfg, built) = read_config(path)?;
    warn_if_cone_invalid(&cfg.matrix);
    let seed = effective_seed(built.seed)?;
    let opts = run.to_options()?;

    let traj = simulate(
        &built.spec,
        &built.matrix,
        &built.traffic,
        &built.envtrace,
        built.horizon,
        seed,
        &opts,
    )?;

    let mut summary = run_summary(&built, &traj, seed, &verdict.to_options())?;
    if lyapunov {
        let series = lyapunov_series(&traj, &built.matrix);
        summary["lyapunov"] = json!({
            "decrease_fraction": series.decrease_fraction,
            "initial": series.values.first(),
            "final": series.values.last(),
        });
    }

    let csv_to_stdout = out.is_some_and(|p| p.as_os_str() == "-");
    if let Some(out) = out {
        write_output(out, &trajectory_csv(&traj))?;
    }
    // Keep stdout machine-readable: when the CSV already owns it, the
    // summary moves to stderr.
    if csv_to_stdout {
        eprintln!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("JSON serialization cannot fail")
        );
    } else {
        print_json(&summary);
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(
    path: &Path,
    direction: Option<&str>,
    (theta_min, theta_max, steps): (f64, f64, usize),
    out: Option<&Path>,
    run: &RunArgs,
    verdict: &VerdictArgs,
) -> Result<ExitCode, CliError> {
    let (cfg, base) = read_config(path)?;
    warn_if_cone_invalid(&cfg.matrix);
    let dir = match direction {
        Some(text) => parse_vector(text, "direction")?,
        None => cfg.load().to_vec(),
    };
    if dir.len() != base.spec.queues() {
        return Err(CliError::Validation(format!(
            "direction has {} entries for {} queues",
            dir.len(),
            base.spec.queues()
        )));
    }
    if steps == 0 {
        return Err(CliError::Validation("steps must be at least 1".into()));
    }
    if !(theta_min >= 0.0 && theta_max >= theta_min) {
        return Err(CliError::Validation(
            "need 0 <= theta-min <= theta-max".into(),
        ));
    }
    let seed = effective_seed(base.seed)?;
    let opts = run.to_options()?;
    let verdict_opts = verdict.to_options();

    let q = base.spec.queues();
    let mut csv = String::from("theta");
    for i in 1..=q {
        csv.push_str(&format!(",rho_{i}"));
    }
    csv.push_str(
        ",member,deficit,verdict,growth,endpoint_max,tail_max,flow_residual,events,guards,sliding_fraction\n",
    );

    for k in 0..steps {
        let theta = if steps == 1 {
            theta_min
        } else {
            theta_min + (theta_max - theta_min) * k as f64 / (steps - 1) as f64
        };
        let mut built = base.clone();
        built.traffic.load = dir.iter().map(|d| theta * d).collect();

        let deficit = predicted_deficit(&built)?;
        let traj = simulate(
            &built.spec,
            &built.matrix,
            &built.traffic,
            &built.envtrace,
            built.horizon,
            seed,
            &opts,
        )?;
        let v = rate_stability(&traj, deficit, &verdict_opts);
        let balance = flow_balance_check(&traj);
        let max = |xs: &[f64]| xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let t = traj.final_time().max(f64::MIN_POSITIVE);

        let mut row = format!("{theta}");
        for rho in &built.traffic.load {
            row.push_str(&format!(",{rho}"));
        }
        row.push_str(&format!(
            ",{},{},{},{},{},{},{},{},{},{}\n",
            deficit.is_none(),
            deficit.unwrap_or(0.0),
            v.verdict,
            v.growth,
            max(&v.endpoint_slope),
            max(&v.tail_slope),
            max(&balance.residuals),
            traj.event_counts.total(),
            traj.guard_activations,
            traj.sliding_time / t,
        ));
        csv.push_str(&row);
    }

    match out {
        Some(path) => write_output(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// repro
// ---------------------------------------------------------------------------

fn cmd_repro(criterion: Option<usize>) -> Result<ExitCode, CliError> {
    let results = match criterion {
        Some(i) => {
            if i == 0 || i > conesched::repro::NAMES.len() {
                return Err(CliError::Validation(format!(
                    "criterion {i} is not in 1..={}",
                    conesched::repro::NAMES.len()
                )));
            }
            vec![conesched::repro::run_criterion(i)]
        }
        None => conesched::repro::run_all(),
    };
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        if !r.passed {
            failed += 1;
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_ACCEPTANCE))
    }
}
