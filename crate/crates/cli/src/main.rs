use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aggdiff_core::analysis::{
    all_passed, assess_sweep, calibrate_c1, calibrate_cp, compare_with_heat_kernel, epsilon_sweep,
    execute_run, p_label, prepare_run, recheck, resolve_lambda, run_verdicts, HeatSetup,
    RunSettings, SweepRow, Verdict,
};
use aggdiff_core::config::Config;
use aggdiff_core::output::{
    self, load_run, sweep_run_dir, write_json, write_run, write_sweep, write_text, RESOLVED_CONFIG,
    RUN_FILE, SWEEP_JSON,
};
use aggdiff_core::radial_field::InitSpec;
use aggdiff_core::solver::TrajectoryRecord;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "aggdiff", version, about = "Radial aggregation-diffusion solver and inequality checker")]
struct Cli {
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true, env = "AGGDIFF_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every epsilon of the config and check the per-run inequalities.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Epsilon sweep with calibration, scaling fits and concentration checks.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-verify a run or sweep directory without simulating.
    Check {
        #[arg(long)]
        traj: PathBuf,
    },
    /// Zero-kernel runs against the closed-form heat kernel.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tolerance on the relative L^1 profile error.
        #[arg(long, default_value_t = 1e-3)]
        l1_tol: f64,
        /// Tolerance on the relative error of the recorded L^p norms.
        #[arg(long, default_value_t = 5e-3)]
        lp_tol: f64,
    },
    /// Fit the unnamed barrier constants on the config's epsilons.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Sweep { config, out } => sweep(&config, &out),
        Command::Check { traj } => check(&traj),
        Command::Baseline { config, out, l1_tol, lp_tol } => baseline(&config, out.as_deref(), l1_tol, lp_tol),
        Command::Calibrate { config, out } => calibrate(&config, out.as_deref()),
    }
}

fn load(config: &Path, out: Option<&Path>) -> Result<Config> {
    let cfg = Config::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(out) = out {
        write_text(&out.join(RESOLVED_CONFIG), &cfg.resolved_toml()?)?;
    }
    Ok(cfg)
}

fn largest(eps: &[f64]) -> f64 {
    eps.iter().copied().fold(f64::MIN, f64::max)
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        println!("{v}");
    }
}

fn simulate(config: &Path, out: &Path) -> Result<bool> {
    let cfg = load(config, Some(out))?;
    let settings = cfg.run_settings()?;
    let lambda = resolve_lambda(&settings, largest(&cfg.eps))?;
    let mut ok = true;
    for &eps in &cfg.eps {
        let mut prepared = prepare_run(&settings, eps, lambda)?;
        prepared.solver.store_snapshots = cfg.solver.snapshot_every > 0;
        let result = execute_run(&prepared, &settings).with_context(|| format!("run at eps = {eps}"))?;
        let verdicts = run_verdicts(&result.summary);
        let dir = if cfg.eps.len() == 1 { out.to_path_buf() } else { sweep_run_dir(out, eps) };
        write_run(&dir, "simulate", &settings.kernel.id(), &result, &verdicts, cfg.solver.snapshot_every)?;
        println!(
            "eps = {eps}: {} cells, {} steps, Lambda = {lambda}",
            result.summary.cells, result.summary.steps
        );
        print_verdicts(&verdicts);
        ok &= all_passed(&verdicts);
    }
    Ok(ok)
}

fn sweep(config: &Path, out: &Path) -> Result<bool> {
    let cfg = load(config, Some(out))?;
    let settings = cfg.run_settings()?;
    let outcome = epsilon_sweep(&settings, &cfg.eps)?;
    write_sweep(out, &outcome, cfg.solver.snapshot_every)?;
    let r = &outcome.report;
    println!("Lambda = {}", r.lambda);
    for row in &r.rows {
        match (&row.summary, &row.error) {
            (Some(s), _) => println!(
                "eps = {:<8} cells = {:<6} steps = {:<7} sup|u|_2 = {:.6e}",
                row.epsilon,
                s.cells,
                s.steps,
                s.sup(2.0).unwrap_or(f64::NAN)
            ),
            (None, Some(e)) => println!("eps = {:<8} failed: {e}", row.epsilon),
            _ => {}
        }
    }
    for f in &r.fits {
        println!(
            "fit {} p={}: slope {:.4} (target {:.4}), R^2 {:.5}",
            f.quantity, f.p, f.fit.slope, f.target, f.fit.r_squared
        );
    }
    if let Some(c) = r.c_star {
        println!("C_* = {c:.6e}");
    }
    match r.eps_star {
        Some(e) => println!("eps_* = {e}"),
        None => println!("eps_* = none (smallest eps fails a per-run check)"),
    }
    print_verdicts(&r.verdicts);
    Ok(all_passed(&r.verdicts))
}

fn check(dir: &Path) -> Result<bool> {
    let resolved = dir.join(RESOLVED_CONFIG);
    let cfg = if resolved.exists() {
        Some(Config::load(&resolved).with_context(|| format!("loading {}", resolved.display()))?)
    } else {
        None
    };
    let checks = cfg.as_ref().map(|c| c.check_settings()).unwrap_or_default();
    if dir.join(SWEEP_JSON).exists() {
        let Some(cfg) = cfg else {
            bail!("{} is missing; cannot re-assess the sweep", resolved.display());
        };
        let report: aggdiff_core::analysis::SweepReport = output::read_json(&dir.join(SWEEP_JSON))?;
        let mut settings: RunSettings = cfg.run_settings()?;
        settings.checks = checks;
        let mut rows = Vec::new();
        let mut trajs: Vec<Option<TrajectoryRecord>> = Vec::new();
        for row in &report.rows {
            let run_dir = sweep_run_dir(dir, row.epsilon);
            if row.summary.is_none() {
                rows.push(row.clone());
                trajs.push(None);
                continue;
            }
            let (run, traj) = load_run(&run_dir).with_context(|| format!("loading {}", run_dir.display()))?;
            let summary = recheck(&run.summary, &traj, &settings.checks)?;
            rows.push(SweepRow {
                epsilon: row.epsilon,
                summary: Some(summary),
                concentration: None,
                barriers: Vec::new(),
                error: None,
            });
            trajs.push(Some(traj));
        }
        let fresh = assess_sweep(&settings, report.lambda, rows, &trajs);
        print_verdicts(&fresh.verdicts);
        return Ok(all_passed(&fresh.verdicts));
    }
    if !dir.join(RUN_FILE).exists() {
        bail!("{} holds neither {RUN_FILE} nor {SWEEP_JSON}", dir.display());
    }
    let (run, traj) = load_run(dir)?;
    let summary = recheck(&run.summary, &traj, &checks)?;
    let verdicts = run_verdicts(&summary);
    print_verdicts(&verdicts);
    Ok(all_passed(&verdicts))
}

fn baseline(config: &Path, out: Option<&Path>, l1_tol: f64, lp_tol: f64) -> Result<bool> {
    let cfg = load(config, out)?;
    let InitSpec::Gaussian { mass, width } = cfg.initial else {
        bail!("baseline needs a gaussian initial profile");
    };
    let t_end = cfg.solver.t_end.value().unwrap_or(1.0);
    let mut lp = vec![1.0];
    lp.extend(cfg.check_settings().lp.iter().copied().filter(|p| *p != 1.0));
    let mut ok = true;
    let mut csv = String::from("epsilon,t,p,solver,exact,rel_err\n");
    for &eps in &cfg.eps {
        let dr = cfg.grid.dr.unwrap_or(eps / cfg.grid.dr_per_eps);
        let r_max = cfg
            .grid
            .r_max
            .value()
            .unwrap_or(8.0 * width + 10.0 * (eps * t_end).sqrt());
        let setup = HeatSetup {
            dimension: cfg.dimension,
            mass,
            width,
            epsilon: eps,
            dr,
            r_max,
            t_end,
            record_interval: cfg.solver.record_interval.value().unwrap_or(t_end / 20.0),
            diffusion: cfg.solver.diffusion,
            lp: lp.clone(),
        };
        let cmp = compare_with_heat_kernel(&setup).with_context(|| format!("heat run at eps = {eps}"))?;
        for r in &cmp.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                output::fmt_f64(eps),
                output::fmt_f64(r.t),
                r.p,
                output::fmt_f64(r.solver),
                output::fmt_f64(r.exact),
                output::fmt_f64(r.rel_err)
            ));
        }
        let verdicts = cmp.verdicts(&lp[1..], l1_tol, lp_tol);
        println!("eps = {eps}: t0 = {:.6e}, outflow = {:.3e}", cmp.t0, cmp.boundary_flux);
        for p in &lp {
            println!("  max rel err |u|_{} = {:.3e}", p_label(*p), cmp.max_rel_err(*p));
        }
        print_verdicts(&verdicts);
        ok &= all_passed(&verdicts);
    }
    if let Some(out) = out {
        write_text(&out.join("baseline.csv"), &csv)?;
    }
    Ok(ok)
}

fn calibrate(config: &Path, out: Option<&Path>) -> Result<bool> {
    let cfg = load(config, out)?;
    if cfg.eps.len() < 3 {
        bail!("calibration needs at least 3 epsilons, got {}", cfg.eps.len());
    }
    let settings = cfg.run_settings()?;
    let lambda = resolve_lambda(&settings, largest(&cfg.eps))?;
    let runs = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let prepared = prepare_run(&settings, eps, lambda)?;
            Ok(execute_run(&prepared, &settings)?.trajectory)
        })
        .collect::<Result<Vec<_>>>()?;
    let probes: Vec<&TrajectoryRecord> = runs.iter().collect();
    let mass = cfg.initial.mass();
    let safety = settings.checks.safety_factor;
    let mut constants = serde_json::Map::new();
    if cfg.dimension.get() == 1 {
        let c1 = calibrate_c1(&probes, mass, safety)?;
        println!("C1 = {c1:.6e}");
        constants.insert("c1".into(), c1.into());
    }
    for &p in &settings.checks.lp {
        let c = calibrate_cp(&probes, p, mass, safety)?;
        println!("C_{} = {c:.6e}", p_label(p));
        constants.insert(format!("c_{}", p_label(p)), c.into());
    }
    if let Some(out) = out {
        let doc = serde_json::json!({
            "lambda": lambda,
            "epsilons": cfg.eps,
            "safety_factor": safety,
            "constants": constants,
        });
        write_json(&out.join("calibration.json"), &doc)?;
    }
    Ok(true)
}
