use netdof::bounds::{
    balance_lambda, delta2, g_hat, lambda_for_width, poly_row, required_width, total_bound, BalanceRule, BoundInputs,
    TableRow,
};
use netdof::spectral::dof;
use netdof::{NormBudget, Spectrum};
use proptest::prelude::*;

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn power_law(a: f64, s: f64, len: usize) -> Spectrum {
    Spectrum::from_values((1..=len).map(|j| a * (j as f64).powf(-1.0 / s)).collect()).unwrap()
}

#[test]
fn finite_rank_balance_lands_on_rank_width() {
    let delta = 0.1;
    for r in [1usize, 3, 10] {
        let mut values = vec![0.5; r];
        values.extend(vec![0.0; 20]);
        let spec = Spectrum::from_values(values).unwrap();
        let n = 1usize << 40;
        let b = balance_lambda(&spec, n, delta, BalanceRule::Deep).unwrap();
        let m = required_width(r as f64, delta).unwrap().m;
        assert!(b.converged);
        assert_eq!(b.m, m, "rank {r}");
        assert_eq!(b.lambda, (m * m) as f64 / n as f64);
    }
}

#[test]
fn delta2_is_nonincreasing_in_n() {
    let widths = [3, 20, 20, 1];
    let budget = NormBudget::default();
    let g = g_hat(3, budget.r_bar(), budget.d_x);
    let mut prev = f64::INFINITY;
    for k in 0..=40 {
        let n = 10f64.powf(2.0 + 0.1 * k as f64).round() as usize;
        let d = delta2(n, 0.1, &widths, g, budget.r_bar(), budget.r_bar_b()).unwrap();
        assert!(d <= prev, "n = {n}");
        prev = d;
    }
}

#[test]
fn poly_row_decreases_with_the_deep_exponent() {
    let ns: Vec<f64> = (0..=16).map(|k| 10f64.powf(3.0 + 0.25 * k as f64)).collect();
    let logs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    for s in [0.25, 0.5, 0.75] {
        let rows: Vec<f64> = ns.iter().map(|&n| poly_row(n, 1.0, 1, &[s, s])).collect();
        assert!(rows.windows(2).all(|p| p[1] < p[0]));
        let target = -1.0 / (1.0 + 2.0 * s);
        // the pure power law once the ln n factor is divided out
        let corrected: Vec<f64> = rows.iter().zip(&ns).map(|(r, n)| (r / n.ln()).ln()).collect();
        let got = slope(&logs, &corrected);
        assert!((got - target).abs() <= 0.02, "s = {s}: corrected slope {got}");
        // the raw row differs by at most the log factor's local slope 1/ln n
        let raw: Vec<f64> = rows.iter().map(|r| r.ln()).collect();
        let got = slope(&logs, &raw);
        assert!(got > target && got <= target + 0.02 + 1.0 / ns[0].ln(), "s = {s}: raw slope {got}");
    }
}

#[test]
fn poly_row_through_total_bound() {
    let inputs = BoundInputs {
        n: 10_000,
        sigma: 0.1,
        budget: NormBudget::default(),
        widths: vec![2, 30, 30, 1],
        lambdas: vec![0.01, 0.01],
        decay_s: Some(vec![0.5, 0.5]),
    };
    let want = poly_row(10_000.0, 1.0, 2, &[0.5, 0.5]);
    assert_eq!(total_bound(&inputs, TableRow::Poly).unwrap(), want);
    let missing = BoundInputs {
        decay_s: None,
        ..inputs
    };
    assert!(total_bound(&missing, TableRow::Poly).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn required_width_is_monotone(n1 in 1e-3f64..1e4, f in 1.0f64..3.0, d1 in 0.01f64..0.9, g in 1.0f64..1.1) {
        let n2 = n1 * f;
        let d2 = (d1 * g).min(0.99);
        prop_assert!(required_width(n2, d1).unwrap().m >= required_width(n1, d1).unwrap().m);
        prop_assert!(required_width(n1, d2).unwrap().m <= required_width(n1, d1).unwrap().m);
    }

    #[test]
    fn balance_meets_both_conditions(a in 0.01f64..10.0, s in 0.2f64..0.8, log_n in 2.0f64..7.0, delta in 0.01f64..0.5) {
        let spec = power_law(a, s, 2000);
        let n = 10f64.powf(log_n) as usize;
        let b = balance_lambda(&spec, n, delta, BalanceRule::Deep).unwrap();
        prop_assert!(b.converged);
        prop_assert_eq!(b.lambda, (b.m * b.m) as f64 / n as f64);
        // the returned width covers N at the returned λ, and one unit less
        // would not cover N at its own λ
        let need = required_width(dof(&spec, b.lambda).unwrap(), delta).unwrap().m;
        prop_assert!(b.m >= need);
        let m_less = (b.m - 1).max(1) as f64;
        let need_less = required_width(dof(&spec, m_less * m_less / n as f64).unwrap(), delta).unwrap().m;
        prop_assert!(b.m == 1 || need_less > b.m - 1);
    }

    #[test]
    fn doubling_n_never_raises_lambda(a in 0.01f64..10.0, s in 0.2f64..0.8, log_n in 2.0f64..6.0) {
        let spec = power_law(a, s, 2000);
        let n = 10f64.powf(log_n) as usize;
        for rule in [BalanceRule::Deep, BalanceRule::TwoLayer { d_x: 3 }] {
            let l1 = balance_lambda(&spec, n, 0.1, rule).unwrap().lambda;
            let l2 = balance_lambda(&spec, 2 * n, 0.1, rule).unwrap().lambda;
            prop_assert!(l2 <= l1, "{:?}: {} then {}", rule, l1, l2);
        }
    }

    #[test]
    fn width_inversion_is_tight(a in 0.01f64..10.0, s in 0.2f64..0.8, m in 2usize..2000) {
        let spec = power_law(a, s, 2000);
        let lam = lambda_for_width(&spec, m, 0.1).unwrap();
        prop_assert!(required_width(dof(&spec, lam).unwrap(), 0.1).unwrap().m <= m);
        let below = dof(&spec, lam * (1.0 - 1e-6)).unwrap();
        prop_assert!(required_width(below, 0.1).unwrap().m >= m);
    }
}
