//! Independent re-computations checked against the library.

use memlb_core::base::{
    exhaustive_prefix_counts, random_orthonormal_columns, sample_base_vector, sample_sign_matrix, BaseVector,
    SignMatrix,
};
use memlb_core::experiment::{reference_optimum, run_once, AlgorithmId, BudgetRule, ExperimentConfig, Scaling};
use memlb_core::geometry::{clamp_to_ball, validate_robust_set, LiftedFunction};
use memlb_core::harness::{
    replay, replay_equals, run, snapshot, Ellipsoid, NullSpaceDescent, Retention, RunConfig, StepSchedule,
    SubgradientDescent,
};
use memlb_core::instance::{
    eval_ainf, eval_f, Branch, FirstOrderOracle, FirstOrderResponse, FnOracle, HardInstance, InformativeLog,
    InstanceParams,
};
use memlb_core::linalg::norm;
use memlb_core::ovg::check_success;
use memlb_core::tape::RandomTape;
use memlb_core::verify::{ball_point, gaussian_vector};
use nalgebra::{DMatrix, DVector};

fn dense(v: &BaseVector) -> Vec<f64> {
    v.signs().iter().map(|&s| f64::from(s) * v.scale()).collect()
}

fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn base_vector_rerun_is_bit_exact() {
    let a = sample_base_vector(16, 0.25, &mut RandomTape::new(7)).unwrap();
    let b = sample_base_vector(16, 0.25, &mut RandomTape::new(7)).unwrap();
    assert_eq!(a, b);
    let m1 = sample_sign_matrix(16, 8, &mut RandomTape::new(3)).unwrap();
    let m2 = sample_sign_matrix(16, 8, &mut RandomTape::new(3)).unwrap();
    assert_eq!(m1.to_packed(), m2.to_packed());
}

#[test]
fn two_by_one_rows_are_uniform() {
    let mut cells = [0u32; 4];
    let seeds = 10_000;
    for seed in 0..seeds {
        let m = sample_sign_matrix(2, 1, &mut RandomTape::new(seed)).unwrap();
        let s = m.row(0).signs();
        cells[usize::from(s[0] > 0) * 2 + usize::from(s[1] > 0)] += 1;
    }
    let expected = seeds as f64 / 4.0;
    let chi2: f64 = cells.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    for c in cells {
        let f = c as f64 / seeds as f64;
        assert!((f - 0.25).abs() <= 0.02, "{cells:?}");
    }
    // 3 degrees of freedom, 0.999 quantile.
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

#[test]
fn prefix_counts_match_plain_enumeration() {
    let d = 16;
    let cols = random_orthonormal_columns(d, 8, &mut RandomTape::new(11)).unwrap();
    let t = 0.5;
    let counts = exhaustive_prefix_counts(&cols, t).unwrap();
    let mut brute = vec![0u64; cols.len()];
    for bits in 0u32..(1 << d) {
        let h: Vec<f64> = (0..d).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        for (c, z) in cols.iter().enumerate() {
            if naive_dot(z, &h).abs() > t {
                break;
            }
            brute[c] += 1;
        }
    }
    assert_eq!(counts, brute);
    assert!(counts[3] <= 1 << d);
    assert!(counts[7] <= counts[1]);
}

#[test]
fn eval_f_matches_linear_scan() {
    let p = InstanceParams::at_depth_cap(16, 1, 5).unwrap().with_global_scale(1.0);
    let inst = HardInstance::sample(p, 4).unwrap();
    let mut tape = RandomTape::new(99);
    for _ in 0..200 {
        let x = ball_point(16, &mut tape);
        let (v, i) = eval_f(inst.vectors(), p.gamma, &x);
        let scan: Vec<f64> = inst
            .vectors()
            .iter()
            .enumerate()
            .map(|(j, vj)| naive_dot(&dense(vj), &x) - (j + 1) as f64 * p.gamma)
            .collect();
        let best = scan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((v - best).abs() <= 1e-12);
        assert!((scan[i] - best).abs() <= 1e-12 * best.abs().max(1.0));
    }
}

#[test]
fn eval_ainf_matches_row_scan() {
    let mut tape = RandomTape::new(5);
    for seed in 0..20 {
        let a = sample_sign_matrix(12, 6, &mut RandomTape::new(seed)).unwrap();
        let x = gaussian_vector(12, &mut tape);
        let r = eval_ainf(&a, &x);
        let rows: Vec<f64> = a.rows().iter().map(|row| naive_dot(&dense(row), &x).abs()).collect();
        let max = rows.iter().cloned().fold(0.0, f64::max);
        assert!((r.value - max).abs() <= 1e-12);
        let first = rows.iter().position(|&v| (v - max).abs() <= 1e-12).unwrap();
        assert_eq!(r.row, first);
    }
}

#[test]
fn subgradients_satisfy_plane_inequality() {
    for (seed, p) in [
        (1, InstanceParams::at_depth_cap(24, 1, 3).unwrap().with_global_scale(1.0)),
        (2, InstanceParams::at_depth_cap(24, 1, 3).unwrap()),
        (3, InstanceParams::at_depth_cap(24, 1, 3).unwrap().unit_lipschitz()),
    ] {
        let inst = HardInstance::sample(p, seed).unwrap();
        let basis = inst.matrix().row_basis();
        let mut tape = RandomTape::new(seed + 100);
        for i in 0..1000 {
            let mut x = ball_point(24, &mut tape);
            if i % 2 == 0 {
                x = basis.project_complement(&x);
            }
            let y = ball_point(24, &mut tape);
            let r = inst.respond(&x).unwrap();
            let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let lin = r.value + naive_dot(&r.subgradient, &diff);
            let fy = inst.value(&y);
            let tol = 1e-9 * fy.abs().max(lin.abs()).max(1.0);
            assert!(fy >= lin - tol, "seed {seed} pair {i}: {fy} < {lin}");
        }
    }
}

fn response(value: f64, g: Vec<f64>, branch: Branch) -> FirstOrderResponse {
    FirstOrderResponse {
        value,
        subgradient: g,
        branch,
        attained_index: 0,
        informative: false,
    }
}

#[test]
fn informative_selection_by_hand() {
    // Queries: f-branch g1, A-branch, f-branch g1 again, f-branch g2, f-branch g3.
    let g1 = vec![1.0, 0.0, 0.0];
    let g2 = vec![0.0, 1.0, 0.0];
    let g3 = vec![0.0, 0.0, 1.0];
    let run = [
        (vec![0.1, 0.0, 0.0], response(-0.1, g1.clone(), Branch::Nemirovski)),
        (vec![0.2, 0.0, 0.0], response(0.5, g2.clone(), Branch::Matrix)),
        (vec![0.3, 0.0, 0.0], response(-0.2, g1.clone(), Branch::Nemirovski)),
        (vec![0.0, 0.4, 0.0], response(-0.3, g2.clone(), Branch::Nemirovski)),
        (vec![0.0, 0.4, 0.5], response(-0.4, g3.clone(), Branch::Nemirovski)),
    ];
    let mut log = InformativeLog::new(1);
    let kept: Vec<bool> = run.iter().enumerate().map(|(i, (x, r))| log.track(i, x, r)).collect();
    assert_eq!(kept, vec![true, false, false, true, true]);
    let steps: Vec<usize> = log.entries().iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![0, 3, 4]);
    // S_1 = span(x_0), S_2 = span(x_3) with k = 1, so x_4 projects onto x_3 only.
    assert_eq!(log.projection_ratio(1), 0.0);
    assert!(log.projection_ratio(2).abs() < 1e-15);
    let expected = 0.4 / (0.4f64 * 0.4 + 0.25).sqrt();
    assert!((log.projection_ratio(3) - expected).abs() < 1e-12);
}

#[test]
fn subgradient_descent_meets_classic_bound() {
    // 1-Lipschitz, scale 1, eps = 0.05: ceil(1/eps^2) + 1 = 401.
    let cfg = ExperimentConfig {
        scaling: Scaling::Lipschitz,
        epsilon: Some(0.05),
        max_queries: Some(401),
        ..Default::default()
    };
    for seed in 0..5 {
        let (s, _) = run_once(&cfg, AlgorithmId::Subgradient, 32, &BudgetRule::State, seed).unwrap();
        let q = s.queries_to_eps.expect("reaches eps");
        assert!(q <= 401, "seed {seed}: {q}");
    }
}

#[test]
fn subgradient_descent_long_run_gap() {
    let p = InstanceParams::at_depth_cap(32, 1, 4).unwrap().unit_lipschitz();
    let inst = HardInstance::sample(p, 8).unwrap();
    let reference = reference_optimum(&inst, 0).unwrap();
    let bits = 32;
    let t = 10_000;
    let sd = SubgradientDescent::new(32, StepSchedule::InverseSqrt(0.5), bits).unwrap();
    let rec = run(
        &sd,
        &mut inst.session(),
        &RunConfig::new(sd.state_bits(), t).retaining(Retention::None),
        RandomTape::new(1),
    )
    .unwrap();
    let gap = rec.best_value().unwrap() - reference.value;
    let slack = (32f64).sqrt() / f64::from(1u32 << (bits - 1));
    assert!(gap <= 1.0 / (t as f64).sqrt() + slack, "gap {gap}");
}

#[test]
fn mid_run_snapshot_replays_suffix() {
    let p = InstanceParams::at_depth_cap(16, 1, 3).unwrap().with_global_scale(1.0);
    let inst = HardInstance::sample(p, 2).unwrap();
    let e = Ellipsoid::new(16);
    let cfg = RunConfig::new(e.state_bits(), 120);
    let original = run(&e, &mut inst.session(), &cfg, RandomTape::new(4)).unwrap();
    let snap = snapshot(&original, 57).unwrap();
    let suffix = replay(&e, &mut inst.session(), &snap, &cfg, RandomTape::new(4)).unwrap();
    assert!(replay_equals(&original, &suffix));
    assert_eq!(suffix.queries(), 120 - 57);
}

#[test]
fn ellipsoid_on_hard_instance() {
    let cfg = ExperimentConfig::default();
    let (s, _) = run_once(&cfg, AlgorithmId::Ellipsoid, 16, &BudgetRule::State, 0).unwrap();
    let eps = s.epsilon;
    let bound = 5.0 * 256.0 * (1.0 / eps).ln();
    let q = s.queries_to_eps.expect("reaches eps");
    eprintln!("ellipsoid d=16: {q} queries, bound {bound:.0}");
    assert!((q as f64) <= bound);
}

#[test]
fn nullspace_driver_stays_on_f_branch() {
    let p = InstanceParams::at_depth_cap(32, 1, 3).unwrap().with_global_scale(1.0);
    for seed in 0..5 {
        let inst = HardInstance::sample(p, seed).unwrap();
        let reference = reference_optimum(&inst, 0).unwrap().value;
        let alg = NullSpaceDescent::new(inst.matrix(), StepSchedule::InverseSqrt(0.5));
        let cap = p.depth * p.d;
        let rec = run(
            &alg,
            &mut inst.session(),
            &RunConfig::new(NullSpaceDescent::state_bits_for(32), cap),
            RandomTape::new(seed),
        )
        .unwrap();
        for s in &rec.steps {
            assert!(norm(&inst.matrix().mul(&s.x)) <= 1e-9);
            assert_eq!(s.response.branch, Branch::Nemirovski, "seed {seed} step {}", s.step);
        }
        let q = rec.queries_to(reference + p.epsilon());
        assert!(q.is_some_and(|q| q <= cap), "seed {seed}: {q:?}");
    }
}

/// Projection ratio via least squares on the explicit predecessor matrix.
fn lstsq_ratio(prev: &[Vec<f64>], y: &[f64]) -> f64 {
    if prev.is_empty() {
        return 0.0;
    }
    let d = y.len();
    let b = DMatrix::from_fn(d, prev.len(), |i, j| prev[j][i]);
    let yv = DVector::from_column_slice(y);
    let svd = b.clone().svd(true, true);
    let coef = svd.solve(&yv, 1e-12).unwrap();
    let proj = &b * coef;
    proj.norm() / yv.norm()
}

#[test]
fn robust_set_ratios_match_least_squares() {
    let d = 30;
    let mut tape = RandomTape::new(21);
    let mut ys: Vec<Vec<f64>> = (0..6).map(|_| gaussian_vector(d, &mut tape)).collect();
    ys.push(ys[1].iter().zip(&ys[2]).map(|(a, b)| a + 0.01 * b).collect());
    let report = validate_robust_set(&ys, 1.0 / (d * d) as f64);
    for i in 0..ys.len() {
        let want = lstsq_ratio(&ys[..i], &ys[i]);
        assert!((report.ratios[i] - want).abs() < 1e-9, "{i}: {} vs {want}", report.ratios[i]);
    }
}

#[test]
fn game_verdicts_match_qr_reimplementation() {
    let d = 40;
    let a = sample_sign_matrix(d, d / 2, &mut RandomTape::new(6)).unwrap();
    let mut tape = RandomTape::new(7);
    let null = a.row_basis().complement_basis();
    let mut ys: Vec<Vec<f64>> = null[..3].to_vec();
    ys.push(gaussian_vector(d, &mut tape));
    ys.push(null[0].iter().zip(&null[1]).map(|(u, v)| u + v).collect());
    let theta = (d as f64).powi(-4);
    let slack = (d as f64).powi(-2);
    let verdicts = check_success(&a, &ys, theta, slack);
    let rows = DMatrix::from_fn(d / 2, d, |i, j| f64::from(a.row(i).signs()[j]));
    for (i, v) in verdicts.iter().enumerate() {
        let y = DVector::from_column_slice(&ys[i]);
        let orth = (&rows * &y).amax() / y.norm();
        assert!((v.orthogonality - orth).abs() <= 1e-12 * orth.max(1.0));
        assert_eq!(v.orthogonal, orth <= theta);
        let ratio = if i == 0 {
            0.0
        } else {
            let prev = DMatrix::from_fn(d, i, |r, c| ys[c][r]);
            let q = prev.qr().q();
            (q.transpose() * &y).norm() / y.norm()
        };
        assert!((v.projection - ratio).abs() <= 1e-9, "{i}");
        assert_eq!(v.independent, ratio <= 1.0 - slack);
    }
    assert!(verdicts[..3].iter().all(|v| v.success()));
    assert!(!verdicts[3].orthogonal);
    assert!(!verdicts[4].independent);
}

fn nemirovski_oracle(d: usize, seed: u64) -> FnOracle<impl FnMut(&[f64]) -> (f64, Vec<f64>) + Clone> {
    let mut tape = RandomTape::new(seed);
    let vectors: Vec<BaseVector> = (0..4)
        .map(|_| sample_base_vector(d, 1.0 / (d as f64).sqrt(), &mut tape).unwrap())
        .collect();
    FnOracle::new(d, move |x: &[f64]| {
        let (v, i) = eval_f(&vectors, 0.05, x);
        (v, dense(&vectors[i]))
    })
}

#[test]
fn lift_agrees_inside_and_dominates_on_sphere() {
    let d = 16;
    let r = 0.5;
    let mut plain = nemirovski_oracle(d, 1);
    let mut g = LiftedFunction::new(nemirovski_oracle(d, 1), r, 1.0).unwrap();
    let mut tape = RandomTape::new(2);
    for _ in 0..1000 {
        let x: Vec<f64> = ball_point(d, &mut tape).iter().map(|v| v * r).collect();
        assert_eq!(g.eval(&x).unwrap().value, plain.query(&x).unwrap().value);
        let s = clamp_to_ball(&gaussian_vector(d, &mut tape));
        let on_sphere = g.eval(&s).unwrap();
        assert!(on_sphere.cone_active);
        assert!(on_sphere.value >= plain.query(&s).unwrap().value);
        let f0 = plain.query(&vec![0.0; d]).unwrap().value;
        assert!((on_sphere.value - (f0 + 1.0)).abs() < 1e-12);
    }
    for _ in 0..1000 {
        let scale = 1.0 + 3.0 * tape.read_unit().unwrap();
        let x: Vec<f64> = clamp_to_ball(&gaussian_vector(d, &mut tape)).iter().map(|v| v * scale).collect();
        let outside = g.eval(&x).unwrap().value;
        let clamped = g.eval(&clamp_to_ball(&x)).unwrap().value;
        assert!(clamped <= outside);
    }
}

#[test]
fn sign_matrix_text_matches_dense_rows() {
    let a = sample_sign_matrix(10, 5, &mut RandomTape::new(12)).unwrap();
    let b = SignMatrix::from_text(&a.to_text()).unwrap();
    for i in 0..5 {
        assert_eq!(dense(a.row(i)), dense(b.row(i)));
    }
}
