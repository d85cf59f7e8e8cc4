mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use decomp_core::error::CoreError;
use decomp_core::mc::{energy_distance_test, simulate_paths, write_samples_csv};
use decomp_core::measure::NoiseModel;
use decomp_core::solver::{
    analyze_existence, extremal_family, solve_fundamental, strong_decomposability_check,
    verify_solution, ExistenceStatus, MeasureRepr,
};
use nalgebra::DVector;

use config::RunConfig;
use report::{RunReport, SimulationSummary};

/// Exit codes: 0 success/exists, 1 input or configuration error,
/// 3 certified non-existence, 4 undetermined, 5 verification failure.
const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_NOT_EXISTS: u8 = 3;
const EXIT_UNDETERMINED: u8 = 4;
const EXIT_VERIFY_FAIL: u8 = 5;

#[derive(Parser)]
#[command(
    name = "decomp-solve",
    about = "Existence analysis, fundamental solutions and Monte Carlo checks \
             for the lag-one convolution equation on R^d",
    after_help = "Exit codes: 0 success/exists, 1 input error, \
                  3 certified non-existence, 4 undetermined, 5 verification failure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the report and data files (default: current dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Override the configured series/truncation horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Override the configured numerical tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the configured moment order p.
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Decide existence of a solution family and report the evidence.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Construct the fundamental solution window (optionally shifted).
    Solve {
        #[command(flatten)]
        common: Common,
        /// Extremal shift parameter v as comma-separated coordinates.
        #[arg(long = "shift-v", value_name = "CSV")]
        shift_v: Option<String>,
        /// Build an uncertified empirical solution even without an
        /// existence certificate.
        #[arg(long)]
        force: bool,
    },
    /// Re-check a previously solved family against the one-step identity.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Path to a solve report to verify (default: <out>/solve_report.json).
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Simulate forward paths of the recursion and compare the terminal
    /// marginal with the fundamental solution when one is available.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CoreError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        CoreError::Input(format!("cannot read {}: {e}", common.config.display()))
    })?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CoreError::Input(format!("{}: {e}", common.config.display())))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.samples {
        cfg.samples = n;
    }
    if let Some(h) = common.horizon {
        cfg.horizon = h;
    }
    if let Some(t) = common.tol {
        cfg.tol = t;
    }
    if let Some(p) = common.p {
        cfg.p = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf, CoreError> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CoreError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn base_report(command: &str, cfg: &RunConfig, started: Instant) -> RunReport {
    RunReport {
        schema: report::SCHEMA.to_string(),
        command: command.to_string(),
        config: cfg.clone(),
        config_sha256: report::config_hash(cfg),
        seed: cfg.seed,
        wall_clock_ms: started.elapsed().as_millis() as u64,
        existence: None,
        solution: None,
        verification: None,
        decay: None,
        simulation: None,
    }
}

fn write_report(dir: &Path, name: &str, rep: &RunReport) -> Result<(), CoreError> {
    let mut bytes = serde_json::to_vec_pretty(rep).expect("report serializes");
    bytes.push(b'\n');
    report::write_atomic(&dir.join(name), &bytes)
        .map_err(|e| CoreError::Input(format!("cannot write {name}: {e}")))
}

fn exit_for_error(e: &CoreError) -> u8 {
    match e {
        CoreError::NoEmpiricalConvergence(_) => EXIT_VERIFY_FAIL,
        _ => EXIT_INPUT,
    }
}

fn parse_shift(text: &str, dim: usize) -> Result<DVector<f64>, CoreError> {
    let coords: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let coords =
        coords.map_err(|e| CoreError::Input(format!("bad --shift-v coordinate: {e}")))?;
    if coords.len() != dim {
        return Err(CoreError::DimensionMismatch {
            expected: dim,
            got: coords.len(),
        });
    }
    Ok(DVector::from_column_slice(&coords))
}

fn cmd_analyze(common: &Common) -> Result<u8, CoreError> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let process = cfg.process()?;
    let map = cfg.map()?;
    let existence = analyze_existence(&process, &map, &cfg.opts(false))?;

    println!("existence: {:?}", existence.status);
    for ev in &existence.evidence {
        println!("  [{}] {} = {} -> {}", ev.verdict, ev.name, ev.value, ev.verdict);
    }
    let status = existence.status;
    let mut rep = base_report("analyze", &cfg, started);
    rep.existence = Some(existence);
    rep.wall_clock_ms = started.elapsed().as_millis() as u64;
    write_report(&dir, "analyze_report.json", &rep)?;
    Ok(match status {
        ExistenceStatus::Exists => EXIT_OK,
        ExistenceStatus::NotExists => EXIT_NOT_EXISTS,
        ExistenceStatus::Undetermined => EXIT_UNDETERMINED,
    })
}

fn cmd_solve(common: &Common, shift_v: &Option<String>, force: bool) -> Result<u8, CoreError> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let process = cfg.process()?;
    let map = cfg.map()?;
    let opts = cfg.opts(force);

    let existence = analyze_existence(&process, &map, &opts)?;
    let status = existence.status;
    let mut rep = base_report("solve", &cfg, started);
    rep.existence = Some(existence);
    if status != ExistenceStatus::Exists && !force {
        println!(
            "existence: {status:?}; not solving (pass --force for an uncertified \
             empirical construction)"
        );
        rep.wall_clock_ms = started.elapsed().as_millis() as u64;
        write_report(&dir, "solve_report.json", &rep)?;
        return Ok(match status {
            ExistenceStatus::NotExists => EXIT_NOT_EXISTS,
            _ => EXIT_UNDETERMINED,
        });
    }

    let mut family = solve_fundamental(&process, &map, cfg.k_min, cfg.k_max, &opts)?;
    if let Some(text) = shift_v {
        let v = parse_shift(text, cfg.dim)?;
        family = extremal_family(&family, &v, &map)?;
    }
    println!(
        "solved: {:?} on [{}, {}], certified = {}",
        family.kind,
        family.k_min(),
        family.k_max(),
        family.certified
    );
    rep.solution = Some(
        report::summarize_solution(&family, &dir)
            .map_err(|e| CoreError::Input(format!("cannot write marginal data: {e}")))?,
    );
    rep.wall_clock_ms = started.elapsed().as_millis() as u64;
    write_report(&dir, "solve_report.json", &rep)?;
    Ok(EXIT_OK)
}

fn cmd_verify(common: &Common, solution: &Option<PathBuf>) -> Result<u8, CoreError> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let process = cfg.process()?;
    let map = cfg.map()?;
    let opts = cfg.opts(false);

    let sol_path = solution
        .clone()
        .unwrap_or_else(|| dir.join("solve_report.json"));
    let text = std::fs::read_to_string(&sol_path)
        .map_err(|e| CoreError::Input(format!("cannot read {}: {e}", sol_path.display())))?;
    let sol_rep: RunReport = serde_json::from_str(&text)
        .map_err(|e| CoreError::Input(format!("{}: {e}", sol_path.display())))?;
    let summary = sol_rep.solution.ok_or_else(|| {
        CoreError::Input(format!("{}: report has no solution section", sol_path.display()))
    })?;
    let base = sol_path
        .parent()
        .map(Path::to_owned)
        .unwrap_or_else(|| PathBuf::from("."));
    let family = report::restore_solution(&summary, &base)?;

    let verification = verify_solution(&family, &process, &map, &opts)?;
    let pass = verification.pass;
    println!(
        "verify: {} (max residual {:.3e}, min p-value {:.4})",
        if pass { "pass" } else { "FAIL" },
        verification.max_residual,
        verification.min_p_value
    );

    let mut rep = base_report("verify", &cfg, started);
    // Decay of the backward remainder is informational; a short window is not
    // an error here.
    let span = (family.k_max() - family.k_min()) as usize;
    if span >= 2 {
        match strong_decomposability_check(&family, &map, span.min(10)) {
            Ok(decay) => rep.decay = Some(decay),
            Err(CoreError::WindowTooShort(_)) => {}
            Err(e) => return Err(e),
        }
    }
    rep.verification = Some(verification);
    rep.wall_clock_ms = started.elapsed().as_millis() as u64;
    write_report(&dir, "verify_report.json", &rep)?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFY_FAIL })
}

/// Long-format path ensemble CSV: `k,path,x0,..,x{d-1}`, one row per
/// path-and-time.
fn encode_paths_csv(ensemble: &decomp_core::mc::PathEnsemble) -> Result<Vec<u8>, CoreError> {
    use std::io::Write;
    let mut buf = Vec::new();
    let d = ensemble.states[0].ncols();
    let coords: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(buf, "k,path,{}", coords.join(",")).expect("vec write");
    for (i, cloud) in ensemble.states.iter().enumerate() {
        let k = ensemble.k_start + i as i64;
        for r in 0..cloud.nrows() {
            let row: Vec<String> = (0..d).map(|c| format!("{:.16e}", cloud[(r, c)])).collect();
            writeln!(buf, "{k},{r},{}", row.join(",")).expect("vec write");
        }
    }
    Ok(buf)
}

fn cmd_simulate(common: &Common) -> Result<u8, CoreError> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let process = cfg.process()?;
    let map = cfg.map()?;
    let opts = cfg.opts(false);

    // Start paths from the fundamental law when none is given and one is
    // constructible; then the terminal marginal is exactly stationary and the
    // two-sample comparison below is calibrated.
    let fundamental = solve_fundamental(&process, &map, cfg.k_min, cfg.k_max, &opts).ok();
    let initial = match (&cfg.initial, &fundamental) {
        (Some(m), _) => m.clone(),
        (None, Some(family)) => family.window[&cfg.k_min].as_model(),
        (None, None) => NoiseModel::dirac_zero(cfg.dim),
    };

    let ensemble = simulate_paths(
        &process, &map, &initial, cfg.k_min, cfg.k_max, cfg.samples, cfg.seed,
    )?;
    let terminal = ensemble
        .marginal(cfg.k_max)
        .expect("terminal marginal exists")
        .clone();
    let name = format!("simulated_k{}.csv", cfg.k_max);
    let mut buf = Vec::new();
    write_samples_csv(&terminal, &mut buf)
        .map_err(|e| CoreError::Input(format!("cannot encode samples: {e}")))?;
    report::write_atomic(&dir.join(&name), &buf)
        .map_err(|e| CoreError::Input(format!("cannot write {name}: {e}")))?;
    let paths_name = "paths.csv";
    let paths_csv = encode_paths_csv(&ensemble)?;
    report::write_atomic(&dir.join(paths_name), &paths_csv)
        .map_err(|e| CoreError::Input(format!("cannot write {paths_name}: {e}")))?;
    println!(
        "simulated {} paths on [{}, {}] -> {}, {}",
        cfg.samples, cfg.k_min, cfg.k_max, paths_name, name
    );

    // Compare the terminal marginal against the fundamental marginal at
    // k_max; informational (with a user-specified initial law the residual
    // burn-in gap is real and expected to be visible).
    let fundamental_test = fundamental.as_ref().and_then(|family| {
        let repr = &family.window[&cfg.k_max];
        let reference = match repr {
            MeasureRepr::Empirical { samples, .. } => Some(samples.clone()),
            other => {
                let model = other.as_model();
                decomp_core::measure::sample(&model, terminal.nrows(), cfg.seed ^ 1).ok()
            }
        };
        match reference {
            Some(r) if terminal.nrows() >= 50 && r.nrows() >= 50 => {
                energy_distance_test(&terminal, &r, cfg.permutations.max(200), cfg.seed).ok()
            }
            _ => None,
        }
    });
    if let Some(t) = &fundamental_test {
        println!(
            "terminal marginal vs fundamental: statistic {:.4e}, p = {:.4}",
            t.statistic, t.p_value
        );
    }

    let mut rep = base_report("simulate", &cfg, started);
    rep.simulation = Some(SimulationSummary {
        k_start: cfg.k_min,
        k_end: cfg.k_max,
        n_paths: cfg.samples,
        paths_file: paths_name.to_string(),
        marginal_file: name,
        fundamental_test,
    });
    rep.wall_clock_ms = started.elapsed().as_millis() as u64;
    write_report(&dir, "simulate_report.json", &rep)?;
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { common } => cmd_analyze(common),
        Command::Solve {
            common,
            shift_v,
            force,
        } => cmd_solve(common, shift_v, *force),
        Command::Verify { common, solution } => cmd_verify(common, solution),
        Command::Simulate { common } => cmd_simulate(common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for_error(&e))
        }
    }
}
