use netdof::compress::{sample_nodes, solve_beta, CompressTargets, Compressor, RidgeSystem, WidthRule};
use netdof::net::{make_teacher, Activation, Layer, TeacherKind, TeacherSpec};
use netdof::{Matrix, Network, NormBudget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cube(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Dense solve by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Ridge solution `(AᵀA + μI)^{-1} Aᵀ y` for the design `A = √m Ψ`.
fn ridge(psi: &Matrix, y: &[f64], mu: f64) -> Vec<f64> {
    let m = psi.cols();
    let a = psi.scale((m as f64).sqrt());
    let ata = a.gram_cols();
    let lhs = (0..m)
        .map(|i| (0..m).map(|j| ata[(i, j)] + if i == j { mu } else { 0.0 }).collect())
        .collect();
    let rhs = a.transpose().matvec(y).unwrap();
    solve(lhs, rhs)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[test]
fn weight_mass_averages_to_one() {
    let q = [0.05, 0.1, 0.15, 0.2, 0.5];
    let trials = 4000;
    let masses: Vec<f64> = (0..trials)
        .map(|s| sample_nodes(&q, 10, 0.49, s).unwrap().weight_mass)
        .collect();
    let mean = masses.iter().sum::<f64>() / trials as f64;
    let sd = (masses.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * sd / (trials as f64).sqrt(), "mean mass {mean}");
}

#[test]
fn inactive_cap_returns_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let psi = Matrix::from_fn(40, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta0 = [0.01, -0.02, 0.0, 0.03, 0.005];
    let y = psi.scale(5f64.sqrt()).matvec(&beta0).unwrap();
    let row = RidgeSystem::new(&psi).unwrap().solve(&y, 1.0).unwrap();
    assert!(!row.active);
    assert_eq!(row.multiplier, 0.0);
    for (b, t) in row.beta.iter().zip(beta0) {
        assert!((b - t).abs() <= 1e-8);
    }
}

#[test]
fn active_cap_matches_closed_form_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let psi = Matrix::from_fn(30, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = psi.column(2).iter().map(|v| 1e3 * v).collect();
    let cap = 0.5;
    let row = RidgeSystem::new(&psi).unwrap().solve(&y, cap).unwrap();
    assert!(row.active);
    assert!((sq_norm(&row.beta) - cap).abs() <= 1e-8 * cap);

    // independent bisection on the ridge multiplier
    let (mut lo, mut hi) = (0.0f64, 1e12f64);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if sq_norm(&ridge(&psi, &y, mid)) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = ridge(&psi, &y, hi);
    for (b, o) in row.beta.iter().zip(&oracle) {
        assert!((b - o).abs() <= 1e-6 * cap.sqrt(), "{b} vs {o}");
    }
}

#[test]
fn identity_activation_recovers_low_rank_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w1 = Matrix::from_fn(6, 2, |_, _| rng.random_range(-0.5..0.5));
    let w2 = Matrix::from_fn(1, 6, |_, _| rng.random_range(-0.05..0.05));
    let teacher = Network::new(
        2,
        Activation::Identity,
        vec![Layer::new(w1, vec![0.0; 6]).unwrap(), Layer::new(w2, vec![0.1]).unwrap()],
    )
    .unwrap();
    let comp = Compressor::new(&teacher, NormBudget::default(), &cube(200, 2, 0), &cube(500, 2, 1)).unwrap();
    let mut plan = comp.plan(&CompressTargets::Widths(vec![2]), 0).unwrap();
    let layer = &mut plan.layers[0];
    layer.m = 2;
    layer.node_ids = vec![0, 1];
    layer.w = vec![1.0, 1.0];
    let (net, report) = comp.build(&plan).unwrap();
    assert!(report.layers[0].err_emp <= 1e-10, "{}", report.layers[0].err_emp);
    assert!(report.end_to_end_sq_err <= 1e-10);
    assert_eq!(net.widths(), vec![2, 2, 1]);
}

#[test]
fn layer_weights_follow_the_beta_scaling() {
    let spec = TeacherSpec::new(TeacherKind::KernelTwoLayer, vec![3, 64, 48, 1], 5);
    let teacher = make_teacher(&spec).unwrap();
    let x = cube(300, 3, 2);
    let comp = Compressor::new(&teacher, NormBudget::default(), &x, &cube(100, 3, 3)).unwrap();
    let mut plan = comp.plan(&CompressTargets::Widths(vec![10, 6]), 1).unwrap();
    for pl in &mut plan.layers {
        pl.w = vec![1.0; pl.m];
    }
    let (net, _) = comp.build(&plan).unwrap();
    let (m2, m3) = (plan.layers[0].m, plan.layers[1].m);
    let r = 1.0;

    // layer 2: targets are teacher pre-activations (minus bias) of the sampled layer-3 nodes
    let acts1 = teacher.layer_activations(&x, 1).unwrap();
    let psi = Matrix::from_fn(x.rows(), m2, |i, j| 1.0 / (m2 as f64).sqrt() * acts1[(i, plan.layers[0].node_ids[j])]);
    let pre2 = teacher.pre_activations(&x, 2).unwrap();
    let ids3 = &plan.layers[1].node_ids;
    let targets = Matrix::from_fn(x.rows(), m3, |i, k| pre2[(i, ids3[k])] - teacher.layer(2).bias[ids3[k]]);
    let (beta, _) = solve_beta(&targets, &psi, 4.0 * r * r / m2 as f64).unwrap();
    let w2 = &net.layer(2).weight;
    let scale = (m2 as f64 / m3 as f64).sqrt();
    for i in 0..m3 {
        for j in 0..m2 {
            assert!((w2[(i, j)] - scale * beta[(i, j)]).abs() <= 1e-12 * (1.0 + beta[(i, j)].abs()), "{} vs {}", w2[(i, j)], scale * beta[(i, j)]);
        }
    }
    let fro = w2.frobenius_norm();
    assert!((fro - scale * beta.frobenius_norm()).abs() <= 1e-12 * fro.max(1.0));

    // output layer: W^(L) = √m_L βᵀ with a single row
    assert_eq!(net.layer(3).weight.rows(), 1);
}

#[test]
fn identity_targets_reproduce_the_teacher() {
    let spec = TeacherSpec::new(TeacherKind::KernelTwoLayer, vec![4, 64, 32, 1], 2);
    let teacher = make_teacher(&spec).unwrap();
    let comp = Compressor::new(&teacher, NormBudget::default(), &cube(256, 4, 0), &cube(512, 4, 1)).unwrap();
    let (net, _, report) = comp.compress(&CompressTargets::Identity, 0).unwrap();
    assert!(report.end_to_end_sq_err <= 1e-8);
    assert_eq!(net.widths(), teacher.widths());
}

#[test]
fn halving_lambda_does_not_raise_median_error() {
    let spec = TeacherSpec::new(TeacherKind::KernelTwoLayer, vec![4, 256, 1], 7);
    let teacher = make_teacher(&spec).unwrap();
    let comp = Compressor::new(&teacher, NormBudget::default(), &cube(512, 4, 0), &cube(1024, 4, 1)).unwrap();
    let med = |lam: f64| {
        let targets = CompressTargets::Lambdas {
            lambdas: vec![lam],
            rule: WidthRule::Theorem,
        };
        median((0..20).map(|s| comp.compress(&targets, s).unwrap().2.layers[0].err_emp).collect())
    };
    let mut prev = med(0.04);
    for lam in [0.02, 0.01, 0.005] {
        let cur = med(lam);
        assert!(cur <= prev, "λ={lam}: median {cur} above {prev}");
        prev = cur;
    }
}

#[test]
fn wider_layers_do_not_raise_median_error_and_stay_in_budget() {
    let spec = TeacherSpec::new(TeacherKind::KernelTwoLayer, vec![3, 128, 128, 1], 4);
    let teacher = make_teacher(&spec).unwrap();
    let comp = Compressor::new(&teacher, NormBudget::default(), &cube(512, 3, 0), &cube(1024, 3, 1)).unwrap();
    let mut prev = f64::INFINITY;
    for m in [8, 16, 32, 64, 128] {
        let runs: Vec<_> = (0..9)
            .map(|s| comp.compress(&CompressTargets::Widths(vec![m, m]), s).unwrap().2)
            .collect();
        for r in &runs {
            assert!(r.norms.iter().all(|a| a.ok), "m={m}: {:?}", r.norms);
        }
        let cur = median(runs.iter().map(|r| r.end_to_end_sq_err).collect());
        assert!(cur <= prev, "m={m}: median {cur} above {prev}");
        prev = cur;
    }
}

#[test]
fn telescoping_bound_covers_end_to_end_error() {
    let spec = TeacherSpec::new(TeacherKind::KernelTwoLayer, vec![4, 128, 96, 1], 9);
    let teacher = make_teacher(&spec).unwrap();
    let comp = Compressor::new(&teacher, NormBudget::default(), &cube(512, 4, 0), &cube(1024, 4, 1)).unwrap();
    for (s, m) in [(0, 8), (1, 16), (2, 32), (3, 64)] {
        let (_, _, r) = comp.compress(&CompressTargets::Widths(vec![m, m]), s).unwrap();
        assert!(
            r.end_to_end_sq_err.sqrt() <= r.telescoping_bound + 1e-6,
            "m={m}: {} > {}",
            r.end_to_end_sq_err.sqrt(),
            r.telescoping_bound
        );
        assert!(r.layers.iter().all(|l| l.err_emp >= 0.0 && l.err_mean >= 0.0));
    }
}
