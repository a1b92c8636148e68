//! CSV/JSON persistence of runs and sweeps.
//!
//! Floats in CSV files are written with 17 significant digits, enough to
//! reload every value bit for bit. JSON uses the shortest representation
//! that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{p_label, parse_p_label, RunResult, RunSummary, SweepOutcome, SweepReport, Verdict};
use crate::error::{Error, Result};
use crate::radial_field::{DensityField, Dimension, RadialGrid};
use crate::solver::{LpSeries, RunStats, TrajectoryRecord};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const RUN_FILE: &str = "run.json";
pub const VERDICTS_FILE: &str = "verdicts.txt";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const RESOLVED_CONFIG: &str = "config.resolved";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::parse(path, format!("line {line}: {e} in {s:?}")))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Columns `t, mass, i_lambda, d_lambda, lp_<p>..., [h1], boundary_flux`.
pub fn trajectory_csv(traj: &TrajectoryRecord) -> String {
    let mut header = vec!["t".to_string(), "mass".into(), "i_lambda".into(), "d_lambda".into()];
    header.extend(traj.lp.iter().map(|s| format!("lp_{}", p_label(s.p))));
    if traj.h1.is_some() {
        header.push("h1".into());
    }
    header.push("boundary_flux".into());
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..traj.len() {
        let mut row = vec![traj.times[k], traj.mass[k], traj.i_lambda[k], traj.d_lambda[k]];
        row.extend(traj.lp.iter().map(|s| s.values[k]));
        if let Some(h1) = &traj.h1 {
            row.push(h1[k]);
        }
        row.push(traj.boundary_flux[k]);
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads the series written by [`trajectory_csv`]. Metadata that is not in
/// the file comes from the arguments; snapshots are left empty.
pub fn read_trajectory_csv(
    path: &Path,
    dimension: Dimension,
    epsilon: f64,
    lambda: f64,
    stats: RunStats,
) -> Result<TrajectoryRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse(path, "missing header"))?
        .split(',')
        .collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::parse(path, format!("missing column {name}")));
    let (ct, cm, ci, cd, cf) = (need("t")?, need("mass")?, need("i_lambda")?, need("d_lambda")?, need("boundary_flux")?);
    let ch = col("h1");
    let lp_cols: Vec<(f64, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(j, h)| h.strip_prefix("lp_").map(|l| (l, j)))
        .map(|(l, j)| {
            parse_p_label(l)
                .map(|p| (p, j))
                .ok_or_else(|| Error::parse(path, format!("bad exponent column lp_{l}")))
        })
        .collect::<Result<_>>()?;
    let mut traj = TrajectoryRecord {
        dimension,
        epsilon,
        lambda,
        times: Vec::new(),
        mass: Vec::new(),
        i_lambda: Vec::new(),
        d_lambda: Vec::new(),
        lp: lp_cols
            .iter()
            .map(|&(p, _)| LpSeries { p, values: Vec::new() })
            .collect(),
        h1: ch.map(|_| Vec::new()),
        boundary_flux: Vec::new(),
        snapshots: Vec::new(),
        stats,
    };
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::parse(path, format!("line {lineno}: expected {} columns", header.len())));
        }
        let v = |j: usize| parse_f64(cells[j], path, lineno);
        traj.times.push(v(ct)?);
        traj.mass.push(v(cm)?);
        traj.i_lambda.push(v(ci)?);
        traj.d_lambda.push(v(cd)?);
        for (s, &(_, j)) in traj.lp.iter_mut().zip(&lp_cols) {
            s.values.push(v(j)?);
        }
        if let (Some(h1), Some(j)) = (&mut traj.h1, ch) {
            h1.push(v(j)?);
        }
        traj.boundary_flux.push(v(cf)?);
    }
    Ok(traj)
}

/// Columns `r, u` at the cell centres.
pub fn snapshot_csv(field: &DensityField) -> String {
    let mut out = String::from("r,u\n");
    for (r, u) in field.grid().centers().iter().zip(field.values()) {
        let _ = writeln!(out, "{},{}", fmt_f64(*r), fmt_f64(*u));
    }
    out
}

pub fn read_snapshot_csv(path: &Path, grid: Arc<RadialGrid>, time: f64) -> Result<DensityField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::with_capacity(grid.len());
    for (k, line) in text.lines().enumerate().skip(1) {
        let u = line
            .split(',')
            .nth(1)
            .ok_or_else(|| Error::parse(path, format!("line {}: expected r,u", k + 1)))?;
        values.push(parse_f64(u, path, k + 1)?);
    }
    DensityField::new(grid, values, time)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dimension: Dimension,
    pub cells: usize,
    pub dr: f64,
    pub r_max: f64,
}

impl GridInfo {
    pub fn of(grid: &RadialGrid) -> Self {
        Self {
            dimension: grid.dimension(),
            cells: grid.len(),
            dr: grid.dr(),
            r_max: grid.r_max(),
        }
    }

    pub fn build(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.dimension, self.cells, self.r_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub file: String,
    pub t: f64,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub command: String,
    /// Nothing in a run draws random numbers.
    pub seed_free: bool,
    pub kernel: String,
    pub epsilon: f64,
    pub lambda: f64,
    pub grid: GridInfo,
    pub stats: RunStats,
    pub summary: RunSummary,
    pub snapshots: Vec<SnapshotEntry>,
    pub verdicts: Vec<Verdict>,
}

/// One line per verdict.
pub fn verdicts_text(verdicts: &[Verdict]) -> String {
    verdicts.iter().map(|v| format!("{v}\n")).collect()
}

/// Writes `trajectory.csv`, `run.json`, `verdicts.txt` and every
/// `snapshot_every`-th stored profile (0 writes none) into `dir`.
pub fn write_run(
    dir: &Path,
    command: &str,
    kernel: &str,
    result: &RunResult,
    verdicts: &[Verdict],
    snapshot_every: usize,
) -> Result<RunFile> {
    let traj = &result.trajectory;
    write_text(&dir.join(TRAJECTORY_FILE), &trajectory_csv(traj))?;
    let mut snapshots = Vec::new();
    if snapshot_every > 0 {
        for (k, s) in traj.snapshots.iter().enumerate().step_by(snapshot_every) {
            let file = format!("{SNAPSHOT_DIR}/snap_{k:05}.csv");
            write_text(&dir.join(&file), &snapshot_csv(s))?;
            snapshots.push(SnapshotEntry { file, t: s.time() });
        }
    }
    let s = &result.summary;
    let grid = match traj.snapshots.first() {
        Some(f) => GridInfo::of(f.grid()),
        None => GridInfo {
            dimension: traj.dimension,
            cells: s.cells,
            dr: s.dr,
            r_max: s.r_max,
        },
    };
    let run = RunFile {
        command: command.into(),
        seed_free: true,
        kernel: kernel.into(),
        epsilon: traj.epsilon,
        lambda: traj.lambda,
        grid,
        stats: traj.stats.clone(),
        summary: s.clone(),
        snapshots,
        verdicts: verdicts.to_vec(),
    };
    write_json(&dir.join(RUN_FILE), &run)?;
    write_text(&dir.join(VERDICTS_FILE), &verdicts_text(verdicts))?;
    Ok(run)
}

/// Reloads a run directory written by [`write_run`], snapshots included.
pub fn load_run(dir: &Path) -> Result<(RunFile, TrajectoryRecord)> {
    let run: RunFile = read_json(&dir.join(RUN_FILE))?;
    let mut traj = read_trajectory_csv(
        &dir.join(TRAJECTORY_FILE),
        run.grid.dimension,
        run.epsilon,
        run.lambda,
        run.stats.clone(),
    )?;
    if !run.snapshots.is_empty() {
        let grid = Arc::new(run.grid.build()?);
        traj.snapshots = run
            .snapshots
            .iter()
            .map(|s| read_snapshot_csv(&dir.join(&s.file), grid.clone(), s.t))
            .collect::<Result<_>>()?;
    }
    Ok((run, traj))
}

/// Subdirectory of a sweep holding the run at `eps`.
pub fn sweep_run_dir(root: &Path, eps: f64) -> PathBuf {
    root.join("runs").join(format!("eps_{eps}"))
}

/// One row per epsilon; empty cells for missing values.
pub fn sweep_csv(report: &SweepReport) -> String {
    let lp: Vec<String> = report
        .rows
        .iter()
        .flat_map(|r| r.summary.iter().flat_map(|s| s.sup_lp.iter().map(|v| v.p.clone())))
        .fold(Vec::new(), |mut acc, p| {
            if !acc.contains(&p) {
                acc.push(p);
            }
            acc
        });
    let barriers: Vec<String> = report
        .rows
        .iter()
        .flat_map(|r| r.barriers.iter().map(|b| b.p.clone()))
        .fold(Vec::new(), |mut acc, p| {
            if !acc.contains(&p) {
                acc.push(p);
            }
            acc
        });
    let mut header: Vec<String> = ["epsilon", "cells", "dr", "steps", "mass_defect", "boundary_flux"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(lp.iter().map(|p| format!("sup_lp_{p}")));
    header.push("sup_h1".into());
    header.extend(barriers.iter().map(|p| format!("barrier_{p}")));
    header.extend(
        [
            "moment_max_excess",
            "moment_violations",
            "weighted_ratio",
            "ball_radius",
            "ball_mass_integral",
            "ball_lp_integral",
            "error",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut out = header.join(",");
    out.push('\n');
    let f = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for row in &report.rows {
        let s = row.summary.as_ref();
        let mut cells = vec![
            fmt_f64(row.epsilon),
            s.map(|s| s.cells.to_string()).unwrap_or_default(),
            f(s.map(|s| s.dr)),
            s.map(|s| s.steps.to_string()).unwrap_or_default(),
            f(s.map(|s| s.mass_defect)),
            f(s.map(|s| s.boundary_flux)),
        ];
        for p in &lp {
            cells.push(f(s.and_then(|s| s.sup_lp.iter().find(|v| &v.p == p).map(|v| v.value))));
        }
        cells.push(f(s.and_then(|s| s.sup_h1)));
        for p in &barriers {
            cells.push(f(row.barriers.iter().find(|b| &b.p == p).map(|b| b.value)));
        }
        let m = s.and_then(|s| s.moment.as_ref());
        cells.push(f(m.map(|m| m.max_excess)));
        cells.push(m.map(|m| m.violations.to_string()).unwrap_or_default());
        cells.push(f(s.and_then(|s| s.weighted.map(|w| w.ratio))));
        let c = row.concentration.as_ref();
        cells.push(f(c.map(|c| c.radius)));
        cells.push(f(c.map(|c| c.mass_integral)));
        cells.push(f(c.map(|c| c.localized_lp)));
        cells.push(
            row.error
                .as_deref()
                .map(|e| format!("\"{}\"", e.replace('"', "'")))
                .unwrap_or_default(),
        );
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes `sweep.json`, `sweep.csv`, `verdicts.txt` and one run directory
/// per successful epsilon under `runs/`.
pub fn write_sweep(dir: &Path, outcome: &SweepOutcome, snapshot_every: usize) -> Result<()> {
    let report = &outcome.report;
    for (row, traj) in report.rows.iter().zip(&outcome.trajectories) {
        let (Some(summary), Some(traj)) = (&row.summary, traj) else { continue };
        let result = RunResult {
            summary: summary.clone(),
            trajectory: traj.clone(),
        };
        let verdicts = crate::analysis::run_verdicts(summary);
        write_run(&sweep_run_dir(dir, row.epsilon), "sweep", &report.kernel, &result, &verdicts, snapshot_every)?;
    }
    write_json(&dir.join(SWEEP_JSON), report)?;
    write_text(&dir.join(SWEEP_CSV), &sweep_csv(report))?;
    write_text(&dir.join(VERDICTS_FILE), &verdicts_text(&report.verdicts))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::radial_field::{make_initial_condition, InitSpec};
    use crate::solver::{run, SolverConfig};
    use proptest::prelude::*;

    fn small_run(n: usize) -> TrajectoryRecord {
        let g = Arc::new(RadialGrid::new(Dimension::new(n).unwrap(), 64, 2.0).unwrap());
        let u0 = make_initial_condition(&InitSpec::Gaussian { mass: 1.0, width: 0.2 }, g).unwrap();
        let mut cfg = SolverConfig::new(0.1, 0.2, 0.02);
        cfg.store_snapshots = true;
        run(&u0, &KernelSpec::neg_abs(), &cfg, 1.0).unwrap()
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let mut t = small_run(1);
        let keep = t.lp.clone();
        t.times.clear();
        t.mass.clear();
        t.i_lambda.clear();
        t.d_lambda.clear();
        t.boundary_flux.clear();
        t.h1 = Some(Vec::new());
        t.lp = keep.into_iter().map(|s| LpSeries { p: s.p, values: Vec::new() }).collect();
        let csv = trajectory_csv(&t);
        assert_eq!(csv, "t,mass,i_lambda,d_lambda,lp_1,lp_2,lp_inf,h1,boundary_flux\n");
    }

    #[test]
    fn trajectory_csv_reloads_exactly() {
        for n in [1, 2] {
            let t = small_run(n);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(TRAJECTORY_FILE);
            write_text(&path, &trajectory_csv(&t)).unwrap();
            let back = read_trajectory_csv(&path, t.dimension, t.epsilon, t.lambda, t.stats.clone()).unwrap();
            assert_eq!(back.times, t.times);
            assert_eq!(back.mass, t.mass);
            assert_eq!(back.i_lambda, t.i_lambda);
            assert_eq!(back.d_lambda, t.d_lambda);
            assert_eq!(back.lp, t.lp);
            assert_eq!(back.h1, t.h1);
            assert_eq!(back.boundary_flux, t.boundary_flux);
        }
    }

    #[test]
    fn run_directory_reloads_with_snapshots() {
        let traj = small_run(1);
        let summary = RunSummary {
            epsilon: traj.epsilon,
            dr: 2.0 / 64.0,
            cells: 64,
            r_max: 2.0,
            t_end: 0.2,
            steps: traj.stats.steps,
            constants: None,
            mass_defect: traj.max_mass_defect(),
            boundary_flux: 0.0,
            boundary_loss_exceeded: false,
            sup_lp: Vec::new(),
            initial_lp: Vec::new(),
            sup_h1: None,
            initial_h1: None,
            moment: None,
            weighted: None,
        };
        let result = RunResult { summary, trajectory: traj.clone() };
        let dir = tempfile::tempdir().unwrap();
        let verdicts = vec![Verdict::failed("x", "y"), Verdict::at_most("m", 0.0, 1.0, "ok")];
        let run = write_run(dir.path(), "simulate", "neg_abs", &result, &verdicts, 5).unwrap();
        assert_eq!(run.snapshots.len(), 3);
        let (back, t) = load_run(dir.path()).unwrap();
        assert_eq!(back, run);
        assert_eq!(t.snapshots.len(), 3);
        assert_eq!(t.snapshots[1].values(), traj.snapshots[5].values());
        assert_eq!(t.snapshots[1].time(), traj.snapshots[5].time());
        let text = fs::read_to_string(dir.path().join(VERDICTS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("FAIL x margin="));
        assert!(lines[1].starts_with("PASS m margin="));
    }

    proptest! {
        #[test]
        fn float_format_roundtrips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }

        #[test]
        fn json_floats_roundtrip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = serde_json::from_str(&serde_json::to_string(&x).unwrap()).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
