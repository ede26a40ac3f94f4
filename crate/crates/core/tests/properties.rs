use dynaclear::assignment::{brute_force_k_assignment, min_edge, min_k_assignment, CostMatrix};
use dynaclear::cost_model::{CostSampler, RateModel};
use dynaclear::oracles::{expected_abs_walk, expected_min_k_assignment, zeta};
use dynaclear::schedules::ScheduleSpec;
use proptest::prelude::*;

fn matrix(max_dim: usize, integer: bool) -> impl Strategy<Value = CostMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(move |(r, c)| {
        let entry = if integer {
            (0u32..12).prop_map(f64::from).boxed()
        } else {
            (0.0f64..10.0).boxed()
        };
        prop::collection::vec(entry, r * c).prop_map(move |data| CostMatrix::new(r, c, data).unwrap())
    })
}

fn any_matrix(max_dim: usize) -> impl Strategy<Value = CostMatrix> {
    prop_oneof![matrix(max_dim, true), matrix(max_dim, false)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ssp_matches_brute_force(m in any_matrix(6)) {
        for k in 1..=m.n_rows().min(m.n_cols()) {
            let fast = min_k_assignment(&m, k).unwrap();
            let slow = brute_force_k_assignment(&m, k).unwrap();
            prop_assert_eq!(fast.total_cost, slow.total_cost, "k = {}", k);
            prop_assert_eq!(fast.pairs.len(), k);
            prop_assert!(fast.is_one_to_one());
        }
    }

    #[test]
    fn optimum_non_decreasing_in_k(m in any_matrix(7)) {
        let totals: Vec<f64> = (1..=m.n_rows().min(m.n_cols()))
            .map(|k| min_k_assignment(&m, k).unwrap().total_cost)
            .collect();
        prop_assert!(totals.windows(2).all(|w| w[1] >= w[0]), "{:?}", totals);
    }

    #[test]
    fn optimum_monotone_in_entries(m in matrix(6, false), bump in 0.0f64..5.0, at in any::<prop::sample::Index>()) {
        let cells = m.n_rows() * m.n_cols();
        let idx = at.index(cells);
        let (i, j) = (idx / m.n_cols(), idx % m.n_cols());
        let bigger = CostMatrix::from_fn(m.n_rows(), m.n_cols(), |r, c| {
            m.get(r, c) + if (r, c) == (i, j) { bump } else { 0.0 }
        }).unwrap();
        for k in 1..=m.n_rows().min(m.n_cols()) {
            let lo = min_k_assignment(&m, k).unwrap().total_cost;
            let hi = min_k_assignment(&bigger, k).unwrap().total_cost;
            prop_assert!(hi >= lo - 1e-12, "k = {}: {} < {}", k, hi, lo);
        }
    }

    #[test]
    fn min_edge_is_the_one_assignment(m in any_matrix(8)) {
        let (i, j, w) = min_edge(&m).unwrap();
        prop_assert_eq!(m.get(i, j), w);
        prop_assert_eq!(w, min_k_assignment(&m, 1).unwrap().total_cost);
    }

    #[test]
    fn buck_identity(n in 1u64..=200) {
        let direct: f64 = (1..=n).rev().map(|k| 1.0 / (k * k) as f64).sum();
        prop_assert!((expected_min_k_assignment(n, n, n).unwrap() - direct).abs() <= 1e-12);
    }

    #[test]
    fn buck_monotonicity(nc in 1u64..40, np in 1u64..40, k in 1u64..40) {
        let k = k.min(nc.min(np));
        let v = expected_min_k_assignment(nc, np, k).unwrap();
        prop_assert!(expected_min_k_assignment(nc + 1, np, k).unwrap() <= v);
        prop_assert!(expected_min_k_assignment(nc, np + 1, k).unwrap() <= v);
        if k < nc.min(np) {
            prop_assert!(expected_min_k_assignment(nc, np, k + 1).unwrap() >= v);
        }
    }

    #[test]
    fn thresholds_non_decreasing(gamma in 0.0f64..=1.0, scale in 0.1f64..4.0, k in 1u64..1_000_000) {
        for spec in [
            ScheduleSpec::greedy(),
            ScheduleSpec::fcfs(),
            ScheduleSpec::power_law(gamma, scale).unwrap(),
            ScheduleSpec::balanced(scale).unwrap(),
        ] {
            let (a, b) = (spec.threshold(k).unwrap(), spec.threshold(k + 1).unwrap());
            prop_assert!(a >= 1 && b >= a, "{}: f({}) = {}, f({}) = {}", spec, k, a, k + 1, b);
        }
    }

    #[test]
    fn order_key_refines_cost(seed in any::<u64>(), pairs in prop::collection::vec((0u64..1000, 1000u64..2000), 2..40)) {
        for model in [
            RateModel::constant(1.0).unwrap(),
            RateModel::constant(2.5).unwrap(),
            RateModel::uniform_iid(0.5, 2.0).unwrap(),
        ] {
            let s = CostSampler::new(model, seed).unwrap();
            for w in pairs.windows(2) {
                let ((a, b), (c, d)) = (w[0], w[1]);
                if s.order_key(a, b) < s.order_key(c, d) {
                    prop_assert!(s.cost(a, b) <= s.cost(c, d));
                }
            }
        }
    }
}

#[test]
fn abs_walk_matches_binomial_sum() {
    for k in 0..=60u32 {
        // Σ_h C(k, h) |2h − k| / 2^k with exact integers
        let mut binom = 1u128;
        let mut total = 0u128;
        for h in 0..=k {
            total += binom * (2 * h as i128 - k as i128).unsigned_abs();
            binom = binom * (k - h) as u128 / (h + 1) as u128;
        }
        let exact = total as f64 / (k as f64).exp2();
        let v = expected_abs_walk(k as u64);
        assert!((v - exact).abs() <= 1e-12 * exact.max(1.0), "k = {k}: {v} vs {exact}");
    }
}

#[test]
fn abs_walk_bracket() {
    for k in 1..=10_000u64 {
        let r = expected_abs_walk(k) / (k as f64).sqrt();
        assert!((0.67..=1.23).contains(&r), "k = {k}: {r}");
    }
}

#[test]
fn zeta_direct_sum() {
    for s in [1.2, 1.35, 1.5, 2.0, 3.0] {
        let n = 1_000_000u64;
        let nf = n as f64;
        let direct: f64 =
            (1..=n).rev().map(|k| (k as f64).powf(-s)).sum::<f64>() + nf.powf(1.0 - s) / (s - 1.0) - 0.5 * nf.powf(-s);
        assert!((zeta(s).unwrap() - direct).abs() < 1e-9, "s = {s}");
    }
}
