//! Command-line driver: forward data manufacture, single inversions, Monte
//! Carlo MISE sweeps, the ill-posedness demonstration, and the invariant
//! validation suite.  Exit status is nonzero exactly when a validation or
//! experiment assertion fails or the configuration is invalid; all file
//! outputs are deterministic functions of (configuration, seed).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use backpar::config::{load_config, RunConfig};
use backpar::error::{Error, Result};
use backpar::experiments::{
    emit_report, illposed_demo, invert_once, run_mise, ManufacturedCase, MISEReport,
};
use backpar::validate::run_all;

#[derive(Parser)]
#[command(
    name = "backpar",
    version,
    about = "Reconstruct the initial state of semilinear parabolic equations \
             from noisy final-time observations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configuration's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the configuration's Monte Carlo trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (falls back to the BACKPAR_THREADS environment
    /// variable, then to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Manufacture a ground truth: solve forward, write the final state and
    /// the reference trajectory.
    Forward,
    /// Draw one observation, run one inversion, and report errors against
    /// the reference together with the derived rule parameters.
    Invert,
    /// Monte Carlo mean-integrated-squared-error sweep over the noise grid.
    Mise,
    /// Demonstrate ill-posedness: data energy vanishes with the noise while
    /// the backward fixed-point solution's energy explodes.
    Illposed,
    /// Run the library's end-to-end invariant checks.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Validate => cmd_validate(cli.seed),
        _ => {
            let mut cfg = load_required_config(cli.config.as_deref(), &cli.command)?;
            if let Some(seed) = cli.seed {
                cfg.noise.seed = seed;
            }
            if let Some(trials) = cli.trials {
                if trials == 0 {
                    return Err(Error::Config("trials must be positive".to_string()));
                }
                cfg.noise.trials = trials;
            }
            if let Some(out) = cli.out {
                cfg.output.dir = out;
            }
            std::fs::create_dir_all(&cfg.output.dir)?;
            match cli.command {
                Command::Forward => cmd_forward(&cfg),
                Command::Invert => cmd_invert(&cfg),
                Command::Mise => cmd_mise(&cfg),
                Command::Illposed => cmd_illposed(&cfg),
                Command::Validate => unreachable!(),
            }
        }
    }
}

/// Worker-thread count: flag, then BACKPAR_THREADS, then all cores.
fn configure_threads(flag: Option<usize>) -> Result<()> {
    let count = match flag {
        Some(n) => Some(n),
        None => match std::env::var("BACKPAR_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|e| {
                Error::Config(format!("BACKPAR_THREADS must be a thread count: {e}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = count {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_required_config(path: Option<&Path>, command: &Command) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None if matches!(command, Command::Illposed) => {
            // The demonstration has a canonical default setup.
            backpar::config::parse_config("[case]\nu0 = [[1, 1.0]]\nT = 1.0\n")
        }
        None => Err(Error::Config(
            "this command needs --config <path> (a TOML experiment description)".to_string(),
        )),
    }
}

/// Write `text` then return `Ok(())`, for uniform summary emission.
fn write_summary(path: &Path, provenance: &str, body: &str) -> Result<()> {
    std::fs::write(path, format!("{provenance}{body}"))?;
    Ok(())
}

fn cmd_forward(cfg: &RunConfig) -> Result<()> {
    let case = cfg.build_case()?;
    let dir = &cfg.output.dir;

    let mut g_csv = String::from("mode,coefficient\n");
    for (i, c) in case.g.coeffs().iter().enumerate() {
        let _ = writeln!(g_csv, "{},{}", i + 1, c);
    }
    std::fs::write(dir.join("final_state.csv"), &g_csv)?;

    let mut traj_csv = String::from("t");
    for i in 0..case.g.basis().len() {
        let _ = write!(traj_csv, ",c{}", i + 1);
    }
    traj_csv.push('\n');
    for (t, state) in case.reference.times().iter().zip(case.reference.states()) {
        let _ = write!(traj_csv, "{t}");
        for c in state.coeffs() {
            let _ = write!(traj_csv, ",{c}");
        }
        traj_csv.push('\n');
    }
    std::fs::write(dir.join("trajectory.csv"), &traj_csv)?;

    let mut body = String::new();
    let _ = writeln!(body, "case: {}", case.name);
    let _ = writeln!(body, "final-state energy: {}", case.g.coeffs().iter().map(|c| c * c).sum::<f64>());
    let _ = writeln!(body, "smoothness constants:");
    let _ = writeln!(body, "  g_smooth_sq = {}", case.constants.g_smooth_sq);
    let _ = writeln!(body, "  a_prime = {} (weight exponent {})", case.constants.a_prime, case.constants.beta_smooth);
    let _ = writeln!(body, "  a_double_prime = {} (margin r = {})", case.constants.a_double_prime, case.constants.r_margin);
    let _ = writeln!(body, "  sup |u| = {}", case.constants.sup_abs_u);
    let _ = writeln!(body, "wrote: final_state.csv, trajectory.csv");
    write_summary(&dir.join("forward.summary.txt"), &cfg.provenance_header(), &body)?;
    println!("forward solve complete: {} modes, {} time nodes", case.g.basis().len(), case.reference.times().len());
    Ok(())
}

fn cmd_invert(cfg: &RunConfig) -> Result<()> {
    let case = cfg.build_case()?;
    let method = cfg.method(&case)?;
    let delta = cfg.noise.deltas[0];
    let t_list = cfg.t_list(case.t_horizon);
    let out = invert_once(&case, &method, delta, &t_list, cfg.noise.seed)?;

    let dir = &cfg.output.dir;
    let mut csv = String::from("t,error_sq\n");
    for (t, e) in &out.rows {
        let _ = writeln!(csv, "{t},{e}");
    }
    std::fs::write(dir.join("invert.csv"), &csv)?;

    let mut body = String::new();
    let _ = writeln!(body, "case: {}", case.name);
    let _ = writeln!(body, "method: {}", method.name());
    let _ = writeln!(body, "delta: {delta}");
    let _ = writeln!(body, "observation band: {} modes", out.n_obs);
    let _ = writeln!(body, "derived parameters: {}", out.diagnostics);
    for (t, e) in &out.rows {
        let _ = writeln!(body, "  t = {t}: squared error {e}");
    }
    write_summary(&dir.join("invert.summary.txt"), &cfg.provenance_header(), &body)?;
    println!("inversion complete ({}); {}", method.name(), out.diagnostics);
    Ok(())
}

fn cmd_mise(cfg: &RunConfig) -> Result<()> {
    let case = cfg.build_case()?;
    let method = cfg.method(&case)?;
    let t_list = cfg.t_list(case.t_horizon);
    let report = run_mise(
        &case,
        &method,
        &cfg.noise.deltas,
        &t_list,
        cfg.noise.trials,
        cfg.noise.seed,
    )?;

    let dir = &cfg.output.dir;
    let csv_path = dir.join(format!("mise-{}.csv", method.name()));
    let summary = emit_report(&report, &csv_path)?;
    write_summary(
        &csv_path.with_extension("summary.txt"),
        &cfg.provenance_header(),
        &summary,
    )?;
    println!("wrote {}", csv_path.display());
    enforce_report_health(&case, &report)
}

/// Experiment assertions: a flagged report or an envelope violation makes
/// the command fail.
fn enforce_report_health(case: &ManufacturedCase, report: &MISEReport) -> Result<()> {
    if report.flagged {
        return Err(Error::Config(format!(
            "more than 10% of trials failed ({} failures); see the summary file",
            report.failures.len()
        )));
    }
    let _ = case;
    for row in &report.rows {
        if row.envelope.is_finite() && row.mise_mean > 10.0 * row.envelope {
            return Err(Error::Config(format!(
                "measured error {} exceeds 10x the theoretical envelope {} at \
                 delta = {}, t = {}",
                row.mise_mean, row.envelope, row.delta, row.t
            )));
        }
    }
    Ok(())
}

fn cmd_illposed(cfg: &RunConfig) -> Result<()> {
    let t_horizon = cfg.case.t_horizon.unwrap_or(1.0);
    let rows = illposed_demo(t_horizon, &cfg.noise.deltas, cfg.noise.trials, cfg.noise.seed)?;

    let dir = &cfg.output.dir;
    let mut csv = String::from(
        "delta,n_stated,n_modes,g_energy_mc,g_energy_se,g_energy_pred,g_energy_stated,\
         v_sup_mc,v_sup_se,v_lower_bound,note\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.delta,
            r.n_stated,
            r.n_modes,
            r.g_energy_mc,
            r.g_energy_se,
            r.g_energy_pred,
            r.g_energy_stated,
            r.v_sup_mc,
            r.v_sup_se,
            r.v_lower_bound,
            r.note
        );
    }
    std::fs::write(dir.join("illposed.csv"), &csv)?;

    let mut body = String::new();
    let _ = writeln!(body, "T = {t_horizon}; data energy vs backward solution energy:");
    let mut violation = None;
    for r in &rows {
        if !r.note.is_empty() {
            let _ = writeln!(body, "  delta = {}: {}", r.delta, r.note);
            continue;
        }
        let _ = writeln!(
            body,
            "  delta = {}: data {} (se {}, predicted {}), solution sup {} (se {}, \
             lower bound {})",
            r.delta, r.g_energy_mc, r.g_energy_se, r.g_energy_pred, r.v_sup_mc, r.v_sup_se,
            r.v_lower_bound
        );
        if (r.g_energy_mc - r.g_energy_pred).abs() > 3.0 * r.g_energy_se {
            violation = Some(format!(
                "data energy at delta = {} is not within 3 se of its mean",
                r.delta
            ));
        }
        if r.v_sup_mc - 2.0 * r.v_sup_se < r.v_lower_bound {
            violation = Some(format!(
                "solution energy at delta = {} does not clear its blow-up bound",
                r.delta
            ));
        }
    }
    write_summary(&dir.join("illposed.summary.txt"), &cfg.provenance_header(), &body)?;
    println!("wrote {}", dir.join("illposed.csv").display());
    match violation {
        Some(v) => Err(Error::Config(v)),
        None => Ok(()),
    }
}

fn cmd_validate(seed: Option<u64>) -> Result<()> {
    let outcome = run_all(seed.unwrap_or(0));
    for c in &outcome.checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("{tag} {} — {}", c.name, c.detail);
    }
    if outcome.all_pass() {
        println!("all {} checks passed", outcome.checks.len());
        Ok(())
    } else {
        Err(Error::Config("one or more validation checks failed".to_string()))
    }
}
