use condmv::fleming_viot::{simulate_fv_finite, DEFAULT_REINSERTION_CAP};
use condmv::geometry::{bridge_exit_probability, Domain};
use condmv::killed_sim::{simulate_killed, InitialLaw, SimConfig};
use condmv::linalg::Matrix;
use condmv::measures::EmpiricalMeasure;
use condmv::model::{Control, FeedbackPolicy, RewardSpec};
use condmv::picard::placeholder_flow;
use condmv::renewal::{volterra_solve, RestartKernel};
use condmv::verify::{default_meanfield, driftless_interval};
use proptest::prelude::*;

fn unit() -> Domain<f64> {
    Domain::interval(-1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bridge_probability_monotone(
        d1 in 0.0f64..0.5, d2 in 0.0f64..0.5, extra in 0.0f64..0.3,
        dt in 1e-4f64..0.05, dt_extra in 0.0f64..0.05,
    ) {
        let s = Matrix::identity(1);
        let p = |a: f64, b: f64, h: f64| bridge_exit_probability(&unit(), &[1.0 - a], &[1.0 - b], h, &s).unwrap();
        let base = p(d1, d2, dt);
        prop_assert!(p(d1 + extra, d2, dt) <= base + 1e-15);
        prop_assert!(p(d1, d2 + extra, dt) <= base + 1e-15);
        prop_assert!(p(d1, d2, dt + dt_extra) >= base - 1e-15);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn drift_is_tv_lipschitz_in_the_measure(
        support in prop::collection::vec(-1.0f64..1.0, 2..8),
        w1 in prop::collection::vec(1usize..6, 8),
        w2 in prop::collection::vec(1usize..6, 8),
        x in -0.99f64..0.99, a in -1.0f64..1.0,
    ) {
        let (mut model, _, _) = default_meanfield(1.0);
        model.drift.clip_bound = 100.0;
        let n = support.len();
        // Integer weights on a shared support make TV exact.
        let build = |w: &[usize]| {
            let pts: Vec<f64> = support.iter().zip(w).flat_map(|(&p, &k)| std::iter::repeat_n(p, k)).collect();
            let total: usize = w[..n].iter().sum();
            (EmpiricalMeasure::new(1, pts).unwrap(), total)
        };
        let (m1, t1) = build(&w1[..n]);
        let (m2, t2) = build(&w2[..n]);
        let tv: f64 = (0..n).map(|i| (w1[i] as f64 / t1 as f64 - w2[i] as f64 / t2 as f64).abs()).sum::<f64>() / 2.0;
        let b1 = model.eval_drift(0.1, &[x], &m1, &[a]).unwrap()[0];
        let b2 = model.eval_drift(0.1, &[x], &m2, &[a]).unwrap()[0];
        let bound = model.drift.mf_gain * model.domain.diameter() * tv;
        prop_assert!((b1 - b2).abs() <= bound + 1e-12);
    }

    #[test]
    fn running_reward_is_concave_in_control(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, x in -1.0f64..1.0, r_a in 0.0f64..2.0) {
        let r = RewardSpec { r_a, r_x: 1.0, ..Default::default() };
        let f = |a: f64| r.running_with_mean(0.0, &[x], &[0.1], &[a]);
        prop_assert!(f(0.5 * (a1 + a2)) >= 0.5 * (f(a1) + f(a2)) - 1e-12);
    }

    #[test]
    fn volterra_output_is_nondecreasing_from_zero(
        raw_cdf in prop::collection::vec(0.0f64..0.2, 4..20),
        p in 0.0f64..0.9,
    ) {
        let mut cdf = vec![0.0];
        let mut acc = 0.0;
        for v in &raw_cdf {
            acc = (acc + v).min(0.99);
            cdf.push(acc);
        }
        let m = cdf.len() - 1;
        let kernel = RestartKernel::from_fn(0.1, m, |_, u: f64| p * (1.0 - (-10.0 * u).exp()));
        let f = volterra_solve(&cdf, &kernel).unwrap();
        prop_assert_eq!(f[0], 0.0);
        prop_assert!(f.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn killed_survival_is_nonincreasing(seed in any::<u64>(), drift in -1.0f64..1.0) {
        let model = driftless_interval(0.5);
        let cfg = SimConfig::new(300, 2e-3, 5, seed);
        let policy = FeedbackPolicy::Constant { value: vec![drift] };
        let p = placeholder_flow(&model, &cfg).unwrap();
        let ens = simulate_killed(&model, Control::Feedback(&policy), &p, &cfg, &InitialLaw::dirac(vec![0.0])).unwrap();
        let s = ens.survival();
        prop_assert_eq!(s[0], 1.0);
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        let flow = ens.conditional_flow().unwrap();
        prop_assert!(flow.survival().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fv_snapshots_stay_in_closed_domain(seed in any::<u64>(), drift in -1.0f64..1.0) {
        let model = driftless_interval(0.5);
        let cfg = SimConfig::new(200, 2e-3, 5, seed);
        let policy = FeedbackPolicy::Constant { value: vec![drift] };
        let xi = InitialLaw::Uniform { lo: vec![-0.9], hi: vec![0.9] };
        let fv = simulate_fv_finite(&model, &policy, &cfg, &xi, DEFAULT_REINSERTION_CAP).unwrap();
        for snap in &fv.snapshots {
            for x in snap.iter() {
                prop_assert!(model.domain.signed_boundary_distance(x).unwrap() >= -1e-12);
            }
        }
        prop_assert!(fv.f_curve.windows(2).all(|w| w[1] >= w[0]));
    }
}
