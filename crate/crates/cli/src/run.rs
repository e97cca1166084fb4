use std::fmt::Write as _;
use std::time::Instant;

use prehistory::hamiltonian::HamiltonianModel;
use prehistory::model::{deterministic_limit, simulate_forward, ModelSpec};
use prehistory::nop::{
    alpha_grid, nop_closed_affine, scan_alpha0, solve_nop, solve_nop_scanned, ShootingConfig,
    ShootingResult,
};
use prehistory::nppd::{
    compute_nppd, default_grid, fmt_float, resolution_warning, reversed_kernel, write_nppd_csv,
    write_peaks_csv, Grid, PeakOptions,
};
use prehistory::oracle::AffineGaussianModel;
use prehistory::reversal::{
    hitting_probabilities, lln_experiment, write_paths_csv, LlnConfig, ReversedChain,
};
use prehistory::rng::{stream_id, substream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Experiment, NopSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{commit, Output, RunManifest};

/// Runs the configured experiment and commits its outputs plus the manifest.
pub fn run(config: &RunConfig) -> CliResult<RunManifest> {
    let start = Instant::now();
    let outputs = match config.experiment {
        Experiment::SimulateForward => simulate(config)?,
        Experiment::SolveNop => nop(config)?,
        Experiment::ScanAlpha0 => scan(config)?,
        Experiment::ComputeNppd => nppd(config)?,
        Experiment::SampleBridges => bridges(config)?,
        Experiment::LlnSweep => lln(config)?,
        Experiment::VerifyOracles => verify(config)?,
    };
    commit(config, outputs, start.elapsed())
}

fn core(experiment: &'static str) -> impl FnOnce(prehistory::Error) -> CliError {
    move |e| CliError::from_core(experiment, e)
}

fn text(name: &str, body: String) -> Output {
    Output {
        name: name.to_string(),
        bytes: body.into_bytes(),
    }
}

fn json_output(name: &str, value: &impl Serialize) -> Output {
    let mut bytes = serde_json::to_vec_pretty(value).expect("outputs serialize");
    bytes.push(b'\n');
    Output {
        name: name.to_string(),
        bytes,
    }
}

fn csv_output(name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Output {
    let mut bytes = Vec::new();
    write(&mut bytes).expect("writing to memory cannot fail");
    Output {
        name: name.to_string(),
        bytes,
    }
}

fn hamiltonian(
    spec: &ModelSpec<f64>,
    experiment: &'static str,
) -> CliResult<HamiltonianModel<f64>> {
    HamiltonianModel::for_measure(spec.measure.clone()).map_err(core(experiment))
}

fn solve(
    spec: &ModelSpec<f64>,
    section: &NopSection,
    experiment: &'static str,
) -> CliResult<ShootingResult<f64>> {
    let model = hamiltonian(spec, experiment)?;
    let cfg = ShootingConfig::default();
    let r = match section.bracket {
        Some([a, b]) => solve_nop(&model, spec.x0, spec.x_t, spec.horizon, (a, b), &cfg),
        None => {
            let [lo, hi] = section.alpha_range;
            solve_nop_scanned(
                &model,
                spec.x0,
                spec.x_t,
                spec.horizon,
                (lo, hi),
                section.points,
                &cfg,
            )
        }
    };
    r.map_err(core(experiment))
}

/// The configured grid, or one padded around the endpoints and (when it can be
/// found) the NOP.
fn grid_for(config: &RunConfig, spec: &ModelSpec<f64>, n_bins: usize) -> CliResult<Grid<f64>> {
    if let Some(g) = config.fixed_grid()? {
        return Ok(g);
    }
    let nop = solve(spec, &config.file.nop, "grid").ok();
    default_grid(
        spec,
        nop.as_ref().map(|r| &r.trajectory),
        n_bins,
        config.file.grid.padding,
    )
    .map_err(core("grid"))
}

fn simulate(config: &RunConfig) -> CliResult<Vec<Output>> {
    let spec = &config.spec;
    let paths: Vec<_> = (0..config.file.simulate.paths)
        .into_par_iter()
        .map(|k| simulate_forward(spec, &mut substream(config.seed(), stream_id(0, k as u32))))
        .collect();
    let limit = deterministic_limit(spec, spec.steps().max(1000)).map_err(core("simulate"))?;
    let mut det = String::from("t,x\n");
    for (t, x) in limit.times.iter().zip(&limit.states) {
        writeln!(det, "{},{}", fmt_float(*t), fmt_float(*x)).unwrap();
    }
    Ok(vec![
        csv_output("paths.csv", |w| write_paths_csv(&paths, w)),
        text("deterministic.csv", det),
    ])
}

fn nop(config: &RunConfig) -> CliResult<Vec<Output>> {
    let r = solve(&config.spec, &config.file.nop, "nop")?;
    let mut csv = String::from("t,x,alpha,action\n");
    for ((t, p), a) in r
        .trajectory
        .times
        .iter()
        .zip(&r.trajectory.points)
        .zip(&r.trajectory.cumulative_action)
    {
        writeln!(
            csv,
            "{},{},{},{}",
            fmt_float(*t),
            fmt_float(p.x),
            fmt_float(p.alpha),
            fmt_float(*a)
        )
        .unwrap();
    }
    let summary = json!({
        "alpha0": r.alpha0,
        "action": r.action,
        "terminal_error": r.terminal_error,
    });
    Ok(vec![
        text("nop.csv", csv),
        json_output("nop.json", &summary),
    ])
}

fn scan(config: &RunConfig) -> CliResult<Vec<Output>> {
    let spec = &config.spec;
    let model = hamiltonian(spec, "scan")?;
    let [lo, hi] = config.file.scan.alpha_range;
    let grid = alpha_grid(lo, hi, config.file.scan.points);
    let s = scan_alpha0(
        &model,
        spec.x0,
        spec.x_t,
        spec.horizon,
        &grid,
        &ShootingConfig::default(),
    )
    .map_err(core("scan"))?;
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    let mut shots = String::from("alpha0,hit_time,terminal_x\n");
    for ((a, h), x) in s
        .alpha0_grid
        .iter()
        .zip(&s.hit_times)
        .zip(&s.terminal_values)
    {
        writeln!(shots, "{},{},{}", fmt_float(*a), opt(*h), opt(*x)).unwrap();
    }
    let row = |r: &ShootingResult<f64>| json!({"alpha0": r.alpha0, "action": r.action, "terminal_error": r.terminal_error});
    let mut roots = String::from("root,alpha0,action,terminal_error\n");
    for (k, r) in s.roots.iter().enumerate() {
        writeln!(
            roots,
            "{k},{},{},{}",
            fmt_float(r.alpha0),
            fmt_float(r.action),
            fmt_float(r.terminal_error)
        )
        .unwrap();
    }
    let mut paths = String::from("root,t,x,alpha\n");
    for (k, r) in s.roots.iter().enumerate() {
        for (t, p) in r.trajectory.times.iter().zip(&r.trajectory.points) {
            writeln!(
                paths,
                "{k},{},{},{}",
                fmt_float(*t),
                fmt_float(p.x),
                fmt_float(p.alpha)
            )
            .unwrap();
        }
    }
    let summary = json!({
        "roots": s.roots.iter().map(row).collect::<Vec<_>>(),
        "candidates": s.candidates.iter().map(row).collect::<Vec<_>>(),
    });
    Ok(vec![
        text("scan.csv", shots),
        text("roots.csv", roots),
        text("nop_paths.csv", paths),
        json_output("roots.json", &summary),
    ])
}

fn peak_options(config: &RunConfig) -> PeakOptions<f64> {
    PeakOptions {
        min_relative_height: config.file.peaks.min_relative_height,
    }
}

fn nppd(config: &RunConfig) -> CliResult<Vec<Output>> {
    let spec = &config.spec;
    let grid = grid_for(config, spec, config.file.grid.n_bins)?;
    let warning = resolution_warning(spec, &grid);
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let run = compute_nppd(spec, &grid, &peak_options(config)).map_err(core("nppd"))?;
    let summary = json!({
        "steps": spec.steps(),
        "delta": spec.delta(),
        "grid": {"xl": grid.xl, "xr": grid.xr, "n_bins": grid.n_bins},
        "escape_mass": run.escape_mass(),
        "max_mass_defect": run.conditioned.max_mass_defect,
        "resolution_warning": warning,
    });
    Ok(vec![
        csv_output("nppd.csv", |w| write_nppd_csv(&run.field, w)),
        csv_output("peaks.csv", |w| write_peaks_csv(&run.field.peaks, w)),
        json_output("nppd.json", &summary),
    ])
}

fn bridges(config: &RunConfig) -> CliResult<Vec<Output>> {
    let spec = &config.spec;
    let grid = grid_for(config, spec, config.file.grid.n_bins)?;
    let run = compute_nppd(spec, &grid, &peak_options(config)).map_err(core("bridges"))?;
    let hits = hitting_probabilities(&run.matrix, &grid, spec.x_t, spec.steps())
        .map_err(core("bridges"))?;
    let forward =
        ReversedChain::forward(&run.matrix, &hits, &grid, spec).map_err(core("bridges"))?;
    let backward =
        ReversedChain::backward(&run.matrix, &run.forward, &grid, spec).map_err(core("bridges"))?;
    let n = config.file.bridges.paths;
    let fwd = forward
        .sample_many(n, config.seed(), 1)
        .map_err(core("bridges"))?;
    let bwd = backward
        .sample_many(n, config.seed(), 2)
        .map_err(core("bridges"))?;
    let summary = json!({
        "paths": n,
        "delta": spec.delta(),
        "forward": {"convention": "right_continuous", "lattice_offset": 0.0},
        "backward": {"convention": "left_continuous", "lattice_offset": spec.delta()},
        "grid": {"xl": grid.xl, "xr": grid.xr, "n_bins": grid.n_bins},
    });
    Ok(vec![
        csv_output("bridges_forward.csv", |w| write_paths_csv(&fwd, w)),
        csv_output("bridges_backward.csv", |w| write_paths_csv(&bwd, w)),
        json_output("bridges.json", &summary),
    ])
}

fn lln(config: &RunConfig) -> CliResult<Vec<Output>> {
    let spec = &config.spec;
    let l = &config.file.lln;
    let closed = match (
        spec.measure.is_gaussian(),
        spec.measure.drift().affine_coefficients(),
    ) {
        (true, Some((a0, a1))) => Some((a0, a1)),
        _ => None,
    };
    let trajectory = match closed {
        Some(_) => None,
        None => Some(solve(spec, &config.file.nop, "lln")?.trajectory),
    };
    let nop_fn = |t: f64| match (closed, &trajectory) {
        (Some((a0, a1)), _) => nop_closed_affine(a0, a1, spec.x0, spec.x_t, spec.horizon, t),
        (None, Some(traj)) => traj.x_at(t),
        (None, None) => unreachable!("a NOP is always available"),
    };
    let fixed = config.fixed_grid()?;
    let g = &config.file.grid;
    let sigma = spec.measure.sigma();
    // Without an explicit grid, bins shrink with ε to keep h ≤ εσ/2.
    let grid_for_eps = |eps: f64| -> prehistory::Result<Grid<f64>> {
        if let Some(grid) = fixed {
            return Ok(grid);
        }
        let s = spec.with_epsilon(eps)?;
        let base = default_grid(&s, trajectory.as_ref(), g.n_bins, g.padding)?;
        let needed = ((base.xr - base.xl) / (0.5 * eps * sigma)).ceil() as usize;
        Grid::new(base.xl, base.xr, g.n_bins.max(needed))
    };
    let cfg = LlnConfig {
        epsilons: l.epsilons.clone(),
        samples: l.samples,
        t_star_fraction: l.t_star_fraction,
        bootstrap_resamples: l.bootstrap_resamples,
    };
    let rows =
        lln_experiment(spec, &grid_for_eps, &nop_fn, &cfg, config.seed()).map_err(core("lln"))?;
    let mut csv = String::from("epsilon,median,p90,samples,median_ci_lo,median_ci_hi\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_float(r.epsilon),
            fmt_float(r.median),
            fmt_float(r.p90),
            r.samples,
            fmt_float(r.median_ci.0),
            fmt_float(r.median_ci.1)
        )
        .unwrap();
    }
    Ok(vec![text("lln.csv", csv), json_output("lln.json", &rows)])
}

#[derive(Debug, Clone, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

fn verify(config: &RunConfig) -> CliResult<Vec<Output>> {
    let spec = &config.spec;
    let model = hamiltonian(spec, "verify")?;
    let grid = grid_for(config, spec, config.file.grid.n_bins)?;
    let run = compute_nppd(spec, &grid, &peak_options(config)).map_err(core("verify"))?;
    let mut checks = Vec::new();

    let row_defect = (0..run.matrix.dim())
        .map(|i| (run.matrix.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "transition_rows_stochastic",
        row_defect,
        1e-10,
    ));

    let mid = spec.steps() / 2;
    let bar = reversed_kernel(&run.matrix, &run.forward, mid).map_err(core("verify"))?;
    let bar_defect = bar
        .iter()
        .map(|r| r.iter().sum::<f64>())
        .filter(|&s| s > 0.0)
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "reversed_rows_stochastic",
        bar_defect,
        1e-10,
    ));

    let mass_defect = (0..=spec.steps())
        .map(|n| (run.field.mass(n) - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("nppd_slices_normalized", mass_defect, 1e-10));

    let xs: Vec<f64> = (0..21)
        .map(|k| grid.xl + (grid.xr - grid.xl) * k as f64 / 20.0)
        .collect();
    let h0 = xs
        .iter()
        .map(|&x| model.h(x, 0.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "hamiltonian_vanishes_at_zero_momentum",
        h0,
        1e-12,
    ));

    let mut legendre = 0.0_f64;
    for &x in &xs {
        for k in 0..11 {
            let alpha = -1.0 + 0.2 * k as f64;
            let beta = model.h_alpha(x, alpha);
            let l = model.lagrangian(x, beta).map_err(core("verify"))?;
            legendre = legendre.max((l - (alpha * beta - model.h(x, alpha))).abs());
        }
    }
    checks.push(Check::at_most("legendre_involution", legendre, 1e-8));

    if let (true, Some((a0, a1))) = (
        spec.measure.is_gaussian(),
        spec.measure.drift().affine_coefficients(),
    ) {
        let oracle =
            AffineGaussianModel::new(a0, a1, spec.measure.sigma(), spec.epsilon, spec.horizon)
                .map_err(core("verify"))?;
        let (start, end) = (
            grid.bin_of(spec.x0).unwrap(),
            grid.bin_of(spec.x_t).unwrap(),
        );
        let want = oracle
            .nppd_moments(
                grid.midpoint(start),
                grid.midpoint(end),
                mid as f64 * spec.epsilon,
            )
            .mean;
        let got: f64 = run.conditioned.vectors[mid]
            .iter()
            .enumerate()
            .map(|(i, p)| p * grid.midpoint(i))
            .sum();
        checks.push(Check::at_most(
            "affine_bridge_mean",
            (got - want).abs(),
            grid.width(),
        ));
    }

    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect();
    for c in &checks {
        println!(
            "{} {}: {:.3e} (tolerance {:.0e})",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    if !failed.is_empty() {
        return Err(CliError::Check {
            experiment: "verify",
            reason: format!("failed checks: {}", failed.join(", ")),
        });
    }
    Ok(vec![json_output(
        "verify.json",
        &json!({ "checks": checks }),
    )])
}
