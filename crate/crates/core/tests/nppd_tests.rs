// Index loops mirror the matrix notation of the identities under test.
#![allow(clippy::needless_range_loop)]

mod common;

use common::gaussian_spec;
use prehistory::hamiltonian::HamiltonianModel;
use prehistory::model::{DriftFunction, JumpMeasure};
use prehistory::nop::{solve_nop, ShootingConfig};
use prehistory::nppd::{
    assemble_nppd, backward_recursion, build_grid, build_transition_matrix, compute_nppd,
    default_grid, domain_adequacy_check, forward_recursion, peak_trajectory, read_nppd_csv,
    resolution_warning, reversed_kernel, slice_peaks, write_nppd_csv, write_peaks_csv,
    AdequacyOptions, Grid, NppdField, PeakOptions, TransitionMatrix,
};
use prehistory::oracle::AffineGaussianModel;
use prehistory::Error;
use proptest::prelude::*;

fn toy_matrix() -> TransitionMatrix<f64> {
    TransitionMatrix::from_rows(vec![
        vec![0.5, 0.3, 0.1, 0.1],
        vec![0.2, 0.6, 0.2, 0.0],
        vec![0.0, 0.25, 0.7, 0.05],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap()
}

fn normal_mass(m: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let (zl, zh) = ((lo - m) / (sd * 2f64.sqrt()), (hi - m) / (sd * 2f64.sqrt()));
    if zl >= 0.0 {
        0.5 * (libm::erfc(zl) - libm::erfc(zh))
    } else if zh <= 0.0 {
        0.5 * (libm::erfc(-zh) - libm::erfc(-zl))
    } else {
        1.0 - 0.5 * (libm::erfc(-zl) + libm::erfc(zh))
    }
}

#[test]
fn grid_examples() {
    let g = build_grid(0.0, 1.0, 2).unwrap();
    assert_eq!(g.midpoints(), vec![0.25, 0.75]);
    let g = build_grid(-2.0, 2.0, 4).unwrap();
    assert_eq!(g.width(), 1.0);
    assert_eq!(g.midpoints(), vec![-1.5, -0.5, 0.5, 1.5]);
    assert_eq!(g.bin_of(-2.0).unwrap(), 0);
    assert_eq!(g.bin_of(2.0 - 1e-12).unwrap(), 3);
    assert_eq!(g.bin_of(-1.0).unwrap(), 1);
    assert_eq!(g.absorbing(), 4);
    assert!(matches!(g.bin_of(2.0), Err(Error::OutOfDomain { .. })));
    assert!(build_grid(1.0, 1.0, 4).is_err());
    assert!(build_grid(0.0, 1.0, 1).is_err());
}

#[test]
fn toy_matrix_matches_cdf_differences() {
    let (eps, drift) = (0.5, DriftFunction::Affine { a0: 0.3, a1: -0.6 });
    let spec = gaussian_spec(drift.clone(), eps, 1.0, 0.0, 0.0);
    let grid = Grid::new(-1.5, 1.5, 3).unwrap();
    let p = build_transition_matrix(&spec, &grid);
    let sd = 0.5_f64.sqrt();
    for i in 0..3 {
        let x = grid.midpoint(i);
        let mean = drift.eval(x);
        let mut inside = 0.0;
        for j in 0..3 {
            let want = normal_mass(
                mean,
                sd,
                (grid.edge(j) - x) / eps,
                (grid.edge(j + 1) - x) / eps,
            );
            assert!((p.get(i, j) - want).abs() < 1e-10);
            inside += want;
        }
        assert!((p.get(i, 3) - (1.0 - inside)).abs() < 1e-10);
    }
    assert_eq!(p.row(3), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn wide_bins_make_the_chain_lazy() {
    let spec = gaussian_spec(DriftFunction::Zero, 0.001, 1.0, 0.0, 0.0);
    let grid = Grid::new(-10.0, 10.0, 4).unwrap();
    let p = build_transition_matrix(&spec, &grid);
    for i in 0..4 {
        assert!((p.get(i, i) - 1.0).abs() < 1e-12);
    }
    assert!(resolution_warning(&spec, &grid).is_some());
    let fine = Grid::new(-1.0, 1.0, 4000).unwrap();
    assert!(resolution_warning(&spec, &fine).is_none());
}

#[test]
fn forward_recursion_examples() {
    let identity = TransitionMatrix::from_rows(vec![
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    let grid = Grid::new(0.0, 3.0, 3).unwrap();
    let seq = forward_recursion(&identity, &grid, 1.5, 4).unwrap();
    for n in 0..=4 {
        assert_eq!(seq.vector(n), vec![0.0, 1.0, 0.0, 0.0]);
    }

    let p = toy_matrix();
    let seq = forward_recursion(&p, &grid, 0.2, 2).unwrap();
    // By hand: p1 = (.5, .3, .1, .1); p2 = p1 P.
    let p2 = [
        0.5 * 0.5 + 0.3 * 0.2,
        0.5 * 0.3 + 0.3 * 0.6 + 0.1 * 0.25,
        0.5 * 0.1 + 0.3 * 0.2 + 0.1 * 0.7,
    ];
    let escape = 1.0 - p2.iter().sum::<f64>();
    let got = seq.vector(2);
    for i in 0..3 {
        assert!((got[i] - p2[i]).abs() < 1e-15);
    }
    assert!((got[3] - escape).abs() < 1e-15);
    let one = seq.vector(1);
    assert!(one
        .iter()
        .zip([0.5, 0.3, 0.1, 0.1])
        .all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn forward_recursion_is_a_matrix_power() {
    let spec = gaussian_spec(DriftFunction::Bistable, 0.1, 2.0, -0.3, 0.5);
    let grid = Grid::new(-1.5, 1.5, 30).unwrap();
    let p = build_transition_matrix(&spec, &grid);
    let seq = forward_recursion(&p, &grid, spec.x0, spec.steps()).unwrap();
    let rows = p.to_rows();
    let mut v = vec![0.0; 31];
    v[grid.bin_of(spec.x0).unwrap()] = 1.0;
    for n in 0..=spec.steps() {
        let got = seq.vector(n);
        assert!(
            got.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-12),
            "n = {n}"
        );
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        v = (0..31)
            .map(|j| (0..31).map(|i| v[i] * rows[i][j]).sum())
            .collect();
    }
}

#[test]
fn forward_moments_track_the_affine_oracle() {
    let (a0, eps) = (0.4, 0.02);
    let spec = gaussian_spec(DriftFunction::Affine { a0, a1: 0.0 }, eps, 1.0, 0.0, 0.5);
    let grid = Grid::new(-1.5, 2.0, 700).unwrap();
    let run = compute_nppd(&spec, &grid, &PeakOptions::default()).unwrap();
    let oracle = AffineGaussianModel::new(a0, 0.0, 1.0, eps, 1.0).unwrap();
    let h = grid.width();
    let mids = grid.midpoints();
    for n in [10, 25, 50] {
        let p = run.forward.normalized(n);
        let mean: f64 = p.iter().zip(&mids).map(|(w, x)| w * x).sum();
        let var: f64 = p
            .iter()
            .zip(&mids)
            .map(|(w, x)| w * (x - mean) * (x - mean))
            .sum();
        let want = oracle.forward_moments(
            grid.midpoint(grid.bin_of(0.0).unwrap()),
            0.0,
            n as f64 * eps,
        );
        assert!(
            (mean - want.mean).abs() < h,
            "n {n}: mean {mean} vs {}",
            want.mean
        );
        assert!(
            (var - want.variance).abs() < 5.0 * h * h,
            "n {n}: var {var} vs {}",
            want.variance
        );
    }
    assert!(run.escape_mass() < 1e-6);
}

#[test]
fn reversed_kernel_rows() {
    let p = toy_matrix();
    let grid = Grid::new(0.0, 3.0, 3).unwrap();
    let seq = forward_recursion(&p, &grid, 2.5, 3).unwrap();
    // From bin 2 the chain never reaches bin 0 at step 1.
    let k = reversed_kernel(&p, &seq, 0).unwrap();
    assert!(k[0].iter().all(|&v| v == 0.0));
    for n in 0..3 {
        let k = reversed_kernel(&p, &seq, n).unwrap();
        let next = seq.vector(n + 1);
        for (i, row) in k.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if next[i] > 0.0 {
                assert!((s - 1.0).abs() < 1e-10);
            } else {
                assert_eq!(s, 0.0);
            }
        }
    }
    assert!(reversed_kernel(&p, &seq, 3).is_err());
}

#[test]
fn backward_recursion_examples() {
    let p = toy_matrix();
    let grid = Grid::new(0.0, 3.0, 3).unwrap();
    let seq = forward_recursion(&p, &grid, 0.5, 3).unwrap();
    let cond = backward_recursion(&p, &seq, &grid, 2.5).unwrap();
    assert_eq!(cond.vectors[0], vec![1.0, 0.0, 0.0]);
    assert_eq!(cond.vectors[3], vec![0.0, 0.0, 1.0]);
    for v in &cond.vectors {
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
    // Hand Bayes at n = 1: P(x1 = i, x3 = 2) / P(x3 = 2).
    let rows = p.to_rows();
    let two_step = |i: usize| (0..3).map(|k| rows[i][k] * rows[k][2]).sum::<f64>();
    let joint: Vec<f64> = (0..3).map(|i| rows[0][i] * two_step(i)).collect();
    let z: f64 = joint.iter().sum();
    for i in 0..3 {
        assert!((cond.vectors[1][i] - joint[i] / z).abs() < 1e-14);
    }

    // A chain that cannot reach the last bin in one step.
    let stuck = TransitionMatrix::from_rows(vec![
        vec![0.9, 0.1, 0.0, 0.0],
        vec![0.1, 0.8, 0.1, 0.0],
        vec![0.0, 0.1, 0.9, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    let seq = forward_recursion(&stuck, &grid, 0.5, 1).unwrap();
    assert_eq!(
        backward_recursion(&stuck, &seq, &grid, 2.5).unwrap_err(),
        Error::ZeroConditioningMass
    );
}

#[test]
fn nppd_field_examples() {
    let spec = gaussian_spec(DriftFunction::Zero, 0.01, 1.0, 0.0, 1.0);
    let grid = Grid::new(-1.5, 2.5, 400).unwrap();
    let run = compute_nppd(&spec, &grid, &PeakOptions::default()).unwrap();
    let field = &run.field;
    let start = grid.bin_of(0.0).unwrap();
    assert_eq!(field.density[0][start], 100.0);
    assert_eq!(field.density[0].iter().filter(|&&q| q != 0.0).count(), 1);
    let end = grid.bin_of(1.0).unwrap();
    assert_eq!(field.density[100][end], 100.0);
    for n in 0..=100 {
        assert!((field.mass(n) - 1.0).abs() < 1e-6);
    }
    assert!(run.escape_mass() < 1e-6);
    assert!(run.conditioned.max_mass_defect < 1e-8);

    // The peak follows the bridge mean.
    let oracle = AffineGaussianModel::new(0.0, 0.0, 1.0, 0.01, 1.0).unwrap();
    for n in [20, 50, 80] {
        let peak = field.peaks[n].primary().unwrap();
        let mean = oracle
            .nppd_moments(grid.midpoint(start), grid.midpoint(end), n as f64 * 0.01)
            .mean;
        assert!(
            (peak.x - mean).abs() <= grid.width(),
            "n {n}: {} vs {mean}",
            peak.x
        );
    }
}

#[test]
fn escape_mass_is_negligible_for_reference_setups() {
    let ou = gaussian_spec(
        DriftFunction::Affine { a0: 0.2, a1: -1.0 },
        0.01,
        1.0,
        0.0,
        1.0,
    );
    let run = compute_nppd(
        &ou,
        &Grid::new(-1.5, 2.5, 400).unwrap(),
        &PeakOptions::default(),
    )
    .unwrap();
    assert!(run.escape_mass() < 1e-6);

    let model = HamiltonianModel::closed_kappa2(
        JumpMeasure::gaussian(DriftFunction::Bistable, 1.0).unwrap(),
    )
    .unwrap();
    let nop = solve_nop(
        &model,
        -1.0,
        1.0,
        5.0,
        (0.1, 2.0),
        &ShootingConfig::default(),
    )
    .unwrap();
    let spec = gaussian_spec(DriftFunction::Bistable, 0.01, 5.0, -1.0, 1.0);
    let grid = default_grid(&spec, Some(&nop.trajectory), 400, 0.3).unwrap();
    let run = compute_nppd(&spec, &grid, &PeakOptions::default()).unwrap();
    assert!(run.escape_mass() < 1e-6);
    let sup = run
        .field
        .peaks
        .iter()
        .map(|s| (s.primary().unwrap().x - nop.trajectory.x_at(s.t)).abs())
        .fold(0.0, f64::max);
    assert!(sup <= 0.05, "peak-to-NOP {sup}");
}

#[test]
fn peaks_on_synthetic_slices() {
    let grid = Grid::new(-3.0, 3.0, 600).unwrap();
    let mids = grid.midpoints();
    let gauss = |m: f64, s: f64| {
        mids.iter()
            .map(|x| (-(x - m) * (x - m) / (2.0 * s * s)).exp())
            .collect::<Vec<_>>()
    };
    let single = slice_peaks(&gauss(0.4321, 0.3), &grid, &PeakOptions::default());
    assert_eq!(single.len(), 1);
    assert!((single[0].x - 0.4321).abs() <= grid.width());

    let (a, b) = (gauss(-1.0, 0.25), gauss(1.0, 0.25));
    let both: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
    let peaks = slice_peaks(&both, &grid, &PeakOptions::default());
    assert_eq!(peaks.len(), 2);
    assert!((peaks[0].x + peaks[1].x).abs() < 1e-9);
    assert!(peaks[0].x < peaks[1].x);

    // A minor bump below half height only shows with a lower threshold.
    let minor: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + 0.1 * v).collect();
    assert_eq!(slice_peaks(&minor, &grid, &PeakOptions::default()).len(), 1);
    assert_eq!(
        slice_peaks(
            &minor,
            &grid,
            &PeakOptions {
                min_relative_height: 0.05
            }
        )
        .len(),
        2
    );
}

#[test]
fn domain_adequacy_examples() {
    let model = HamiltonianModel::closed_kappa2(
        JumpMeasure::gaussian(DriftFunction::Bistable, 1.0).unwrap(),
    )
    .unwrap();
    let cfg = ShootingConfig::default();
    let spec = gaussian_spec(DriftFunction::Bistable, 0.01, 5.0, -1.0, 1.0);
    let nop = solve_nop(&model, -1.0, 1.0, 5.0, (0.1, 2.0), &cfg).unwrap();
    let opts = AdequacyOptions::default();
    let wide = domain_adequacy_check(
        &spec,
        &Grid::new(-2.0, 2.0, 400).unwrap(),
        &nop,
        &cfg,
        &opts,
    );
    assert!(wide.passes, "{:?}", wide.warnings);
    assert!(wide.margin.unwrap() >= 0.2);

    let tiny = domain_adequacy_check(
        &spec,
        &Grid::new(-1.01, -0.99, 10).unwrap(),
        &nop,
        &cfg,
        &opts,
    );
    assert!(!tiny.passes && !tiny.endpoints_inside);

    let free =
        HamiltonianModel::closed_kappa2(JumpMeasure::gaussian(DriftFunction::Zero, 1.0).unwrap())
            .unwrap();
    let spec = gaussian_spec(DriftFunction::Zero, 0.01, 1.0, 0.0, 0.5);
    let nop = solve_nop(&free, 0.0, 0.5, 1.0, (-5.0, 5.0), &cfg).unwrap();
    let margins: Vec<f64> = [1.5, 2.5, 3.5]
        .iter()
        .map(|&w| {
            domain_adequacy_check(&spec, &Grid::new(-w, w, 100).unwrap(), &nop, &cfg, &opts)
                .margin
                .unwrap()
        })
        .collect();
    assert!(margins.windows(2).all(|m| m[1] > m[0]), "{margins:?}");
}

#[test]
fn csv_round_trip_is_exact() {
    let spec = gaussian_spec(DriftFunction::Bistable, 0.05, 1.0, -0.2, 0.3);
    let grid = Grid::new(-1.0, 1.0, 40).unwrap();
    let run = compute_nppd(&spec, &grid, &PeakOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_nppd_csv(&run.field, &mut buf).unwrap();
    let rows = read_nppd_csv::<f64, _>(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), 21 * 40);
    for r in rows {
        assert_eq!(r.q.to_bits(), run.field.density[r.n][r.i].to_bits());
        assert_eq!(r.t.to_bits(), run.field.times[r.n].to_bits());
        assert_eq!(r.x_mid.to_bits(), grid.midpoint(r.i).to_bits());
    }

    let mut peaks = Vec::new();
    write_peaks_csv(&run.field.peaks, &mut peaks).unwrap();
    let text = String::from_utf8(peaks).unwrap();
    assert!(text.starts_with("t,x_peak"));
    assert_eq!(text.lines().count(), 22);
    assert!(read_nppd_csv::<f64, _>("n,t\n".as_bytes()).is_err());
}

#[test]
fn peak_csv_lists_the_highest_peak_first() {
    let grid = Grid::<f64>::new(-3.0, 3.0, 600).unwrap();
    let bump = |x: f64, c: f64| (-(x - c) * (x - c) * 8.0).exp();
    let slice: Vec<f64> = grid
        .midpoints()
        .iter()
        .map(|&x| 0.7 * bump(x, -1.0) + bump(x, 1.0))
        .collect();
    let field = NppdField {
        grid,
        epsilon: 1.0,
        times: vec![0.0],
        density: vec![slice],
        peaks: Vec::new(),
    };
    let peaks = peak_trajectory(&field, &grid, &PeakOptions::default());
    let mut out = Vec::new();
    write_peaks_csv(&peaks, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    assert!((row[1] - 1.0).abs() < 0.01 && (row[2] + 1.0).abs() < 0.01);
}

#[test]
fn assemble_scales_by_bin_width() {
    let p = toy_matrix();
    let grid = Grid::new(0.0, 1.5, 3).unwrap();
    let seq = forward_recursion(&p, &grid, 0.1, 2).unwrap();
    let cond = backward_recursion(&p, &seq, &grid, 1.2).unwrap();
    let field = assemble_nppd(&cond, &grid, 0.5, &PeakOptions::default());
    for (v, q) in cond.vectors.iter().zip(&field.density) {
        for (a, b) in v.iter().zip(q) {
            assert_eq!(*b, a * 2.0);
        }
    }
    assert_eq!(field.times, vec![0.0, 0.5, 1.0]);
}

#[test]
fn f32_pipeline() {
    let spec = prehistory::ModelSpecF32::new(
        JumpMeasure::gaussian(DriftFunction::Zero, 1.0).unwrap(),
        0.05,
        1.0,
        0.0,
        1.0,
    )
    .unwrap();
    let grid = prehistory::GridF32::new(-1.0, 2.0, 120).unwrap();
    let run = compute_nppd(&spec, &grid, &PeakOptions::default()).unwrap();
    for n in 0..=20 {
        assert!((run.field.mass(n) - 1.0).abs() < 1e-4);
    }
    let mid = run.field.peaks[10].primary().unwrap().x;
    assert!((mid - 0.5).abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rows_are_stochastic(
        kappa in 1.2_f64..5.0,
        eps in 0.01_f64..0.5,
        n_bins in 3_usize..80,
        span in 0.5_f64..4.0,
        drift in 0_usize..3,
    ) {
        let drift = match drift {
            0 => DriftFunction::Bistable,
            1 => DriftFunction::Affine { a0: 0.5, a1: -1.5 },
            _ => DriftFunction::Zero,
        };
        let spec = common::spec_with_kappa(drift, kappa, eps, 1.0, 0.0, 0.0);
        let grid = Grid::new(-span, span, n_bins).unwrap();
        let p = build_transition_matrix(&spec, &grid);
        for i in 0..=n_bins {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {} sums to {}", i, s);
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn midpoints_follow_the_formula(xl in -10.0_f64..10.0, w in 0.01_f64..20.0, n in 2_usize..500) {
        let grid = Grid::new(xl, xl + w, n).unwrap();
        let mids = grid.midpoints();
        prop_assert!(mids.windows(2).all(|m| m[1] > m[0]));
        for (i, &m) in mids.iter().enumerate() {
            prop_assert!((m - (xl + w * (i as f64 + 0.5) / n as f64)).abs() <= 1e-12 * (1.0 + xl.abs() + w));
            prop_assert_eq!(grid.bin_of(m).unwrap(), i);
            prop_assert_eq!(grid.bin_of(grid.edge(i)).unwrap(), i);
        }
    }

    #[test]
    fn csv_floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let s = prehistory::nppd::fmt_float(v);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}
