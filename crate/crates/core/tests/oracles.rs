//! Cross-checks of the simulators against closed-form values and against each
//! other, at reduced scale.

use condmv::fleming_viot::{simulate_fv_finite, simulate_fv_meanfield, DEFAULT_REINSERTION_CAP};
use condmv::killed_sim::{
    analytic_interval_survival, girsanov_survival_floor, simulate_killed, InitialLaw, SimConfig,
};
use condmv::measures::{measure_distance, w1_sampling_scale, MeasureFlow};
use condmv::mimic::{mimic_compare, RegressionBins};
use condmv::model::{Control, FeedbackPolicy, ModelSpec, RewardSpec, StateFeature};
use condmv::picard::{placeholder_flow, solve_fixed_point, PicardSettings};
use condmv::renewal::{
    estimate_restart_kernel, log_survival_check, resample_curve, volterra_solve,
};
use condmv::reward_opt::{
    eval_reward_conditional, eval_reward_fv, optimize_policy, Objective, PolicyFamily, Problem,
    SearchMethod, SearchSettings,
};
use condmv::verify::{default_meanfield, driftless_interval, mimic_concave_scenario};

const PICARD: PicardSettings<f64> = PicardSettings {
    tol: 1e-2,
    max_iter: 10,
};

fn origin() -> InitialLaw<f64> {
    InitialLaw::dirac(vec![0.0])
}

fn killed_flow(model: &ModelSpec<f64>, cfg: &SimConfig<f64>) -> MeasureFlow<f64> {
    let zero = FeedbackPolicy::zero(1);
    let p = placeholder_flow(model, cfg).unwrap();
    simulate_killed(model, Control::Feedback(&zero), &p, cfg, &origin())
        .unwrap()
        .conditional_flow()
        .unwrap()
}

#[test]
fn restart_kernel_from_origin_matches_series() {
    let model = driftless_interval(1.0);
    let flow = killed_flow(&model, &SimConfig::new(4000, 1e-3, 50, 1));
    let cfg = SimConfig::new(4000, 1e-3, 50, 2);
    let kernel =
        estimate_restart_kernel(&model, &FeedbackPolicy::zero(1), &flow, &cfg, 0.05).unwrap();
    for u in 1..kernel.values[0].len() {
        let t = u as f64 * 0.05;
        let oracle = 1.0 - analytic_interval_survival(0.0, 1.0, 1.0, t, 60);
        let (k, se) = (kernel.values[0][u], kernel.se[0][u]);
        assert!(
            (k - oracle).abs() <= 3.0 * se + 1e-3,
            "u={u}: {k} vs {oracle} (se {se})"
        );
    }
    let p_hat = kernel.contraction_diagnostic();
    assert!(p_hat.iter().all(|&p| (0.0..1.0).contains(&p)));
}

#[test]
fn reinsertion_counts_agree_with_log_survival_three_ways() {
    let model = driftless_interval(1.0);
    let zero = FeedbackPolicy::zero(1);
    let flow = killed_flow(&model, &SimConfig::new(20_000, 1e-3, 10, 3));
    let cfg = SimConfig::new(4000, 1e-3, 10, 4);
    let fin = simulate_fv_finite(&model, &zero, &cfg, &origin(), DEFAULT_REINSERTION_CAP).unwrap();
    let mf = simulate_fv_meanfield(
        &model,
        &zero,
        &flow,
        &cfg.with_seed(5),
        &origin(),
        DEFAULT_REINSERTION_CAP,
    )
    .unwrap();

    let target = -analytic_interval_survival(0.0f64, 1.0, 1.0, 1.0, 60).ln();
    assert!((target - 0.992).abs() < 1e-3);
    for f in [fin.f_final(), mf.f_final()] {
        assert!((f - target).abs() <= 0.05 * target, "{f} vs {target}");
    }
    let k = fin.f_curve.len() - 1;
    let se = fin.f_se[k].hypot(mf.f_se[k]);
    assert!((fin.f_final() - mf.f_final()).abs() <= 3.0 * se, "se {se}");

    let kernel = estimate_restart_kernel(
        &model,
        &zero,
        &flow,
        &SimConfig::new(2000, 1e-3, 10, 6),
        0.02,
    )
    .unwrap();
    let s = resample_curve(flow.grid(), flow.survival(), 0.02, kernel.intervals()).unwrap();
    let cdf: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
    let f = volterra_solve(&cdf, &kernel).unwrap();
    let rep = log_survival_check(&f, &s, &kernel.grid()).unwrap();
    assert!(rep.max_abs <= 0.05, "{}", rep.max_abs);
    let fv_on_grid = resample_curve(&fin.grid, &fin.f_curve, 0.02, kernel.intervals()).unwrap();
    for (a, b) in f.iter().zip(&fv_on_grid) {
        assert!((a - b).abs() <= 0.05);
    }
}

#[test]
fn finite_and_meanfield_marginals_agree() {
    let model = driftless_interval(0.5);
    let zero = FeedbackPolicy::zero(1);
    let flow = killed_flow(&model, &SimConfig::new(10_000, 1e-3, 50, 7));
    let cfg = SimConfig::new(3000, 1e-3, 50, 8);
    let fin = simulate_fv_finite(&model, &zero, &cfg, &origin(), DEFAULT_REINSERTION_CAP).unwrap();
    let mf = simulate_fv_meanfield(
        &model,
        &zero,
        &flow,
        &cfg.with_seed(9),
        &origin(),
        DEFAULT_REINSERTION_CAP,
    )
    .unwrap();
    for (a, b) in fin.snapshots.iter().zip(&mf.snapshots).skip(1) {
        let d = measure_distance(a, b).unwrap();
        let scale = w1_sampling_scale(a, b).unwrap();
        assert!(d <= 4.0 * scale + 0.01, "{d} vs scale {scale}");
    }
}

#[test]
fn meanfield_fv_reproduces_picard_flow() {
    let (model, policy, xi) = default_meanfield(0.5);
    let cfg = SimConfig::new(5000, 1e-3, 50, 10);
    let fp = solve_fixed_point(&model, Control::Feedback(&policy), &cfg, &xi, &PICARD).unwrap();
    let fv = simulate_fv_meanfield(
        &model,
        &policy,
        &fp.flow,
        &cfg.with_seed(11),
        &xi,
        DEFAULT_REINSERTION_CAP,
    )
    .unwrap();
    for (a, b) in fv.snapshots.iter().zip(fp.flow.nodes()) {
        let d = measure_distance(a, b).unwrap();
        assert!(d <= 4.0 * w1_sampling_scale(a, b).unwrap() + 0.01, "{d}");
    }
}

#[test]
fn picard_survival_respects_floor() {
    let (mut model, policy, xi) = default_meanfield(1.0);
    model.drift.clip_bound = 1.0;
    let cfg = SimConfig::new(3000, 1e-3, 50, 12);
    let fp = solve_fixed_point(&model, Control::Feedback(&policy), &cfg, &xi, &PICARD).unwrap();
    let p0 = analytic_interval_survival(0.5, 1.0, 1.0, 1.0, 60);
    let floor = girsanov_survival_floor(1.0, &model.sigma, 1.0, p0).unwrap();
    assert!(*fp.survival.last().unwrap() >= floor);
}

#[test]
fn reinsertion_component_is_minus_log_survival() {
    let model = driftless_interval(1.0);
    let zero = FeedbackPolicy::zero(1);
    let flow = killed_flow(&model, &SimConfig::new(10_000, 1e-3, 50, 13));
    let fv = simulate_fv_meanfield(
        &model,
        &zero,
        &flow,
        &SimConfig::new(5000, 1e-3, 50, 14),
        &origin(),
        DEFAULT_REINSERTION_CAP,
    )
    .unwrap();
    let rep = eval_reward_fv(&fv, &flow, &model.reward, 1.0).unwrap();
    let target = analytic_interval_survival(0.0f64, 1.0, 1.0, 1.0, 60).ln();
    assert!(
        (rep.j_reinsertion - target).abs() <= 0.05 * target.abs(),
        "{}",
        rep.j_reinsertion
    );
}

#[test]
fn conditional_and_fv_rewards_agree() {
    let (model, policy, xi) = default_meanfield(1.0);
    let cfg = SimConfig::new(4000, 1e-3, 50, 15);
    let control = Control::Feedback(&policy);
    let fp = solve_fixed_point(&model, control, &cfg, &xi, &PICARD).unwrap();
    let ens = simulate_killed(&model, control, &fp.flow, &cfg, &xi).unwrap();
    let cp = eval_reward_conditional(&ens, &fp.flow, &model.reward).unwrap();
    let fv = simulate_fv_meanfield(
        &model,
        &policy,
        &fp.flow,
        &cfg.with_seed(16),
        &xi,
        DEFAULT_REINSERTION_CAP,
    )
    .unwrap();
    let j0 = eval_reward_fv(&fv, &fp.flow, &model.reward, 0.0).unwrap();
    assert!((cp.j_total - j0.j_total).abs() <= 3.0 * cp.se_total.hypot(j0.se_total));
}

fn mean_seeking_model() -> ModelSpec<f64> {
    let mut model = driftless_interval(1.0);
    model.reward = RewardSpec {
        feature: StateFeature::Linear { w: vec![1.0] },
        r_x: 1.0,
        r_a: 0.05,
        ..Default::default()
    };
    model
}

#[test]
fn optimizer_beats_zero_policy_and_running_best_is_monotone() {
    let model = mean_seeking_model();
    let cfg = SimConfig::new(2000, 2e-3, 25, 17);
    let xi = origin();
    let problem = Problem {
        model: &model,
        config: &cfg,
        initial: &xi,
        picard: &PICARD,
        family: PolicyFamily::Linear,
        objective: Objective::Conditional,
    };
    let zero = problem.evaluate(&[0.0, 0.0]).unwrap();
    for method in [SearchMethod::NelderMead, SearchMethod::CrossEntropy] {
        let res = optimize_policy(
            &problem,
            &SearchSettings {
                method,
                budget: 40,
                start: vec![0.0, 0.0],
                step: 0.5,
            },
        )
        .unwrap();
        assert!(
            res.best_j - zero.j_total > 3.0 * res.best_se.hypot(zero.se_total),
            "{method:?}"
        );
        let mut best = f64::NEG_INFINITY;
        for e in &res.trace {
            best = best.max(e.j);
        }
        assert_eq!(best, res.best_j);
    }
}

#[test]
fn heavy_reinsertion_cost_pushes_inward() {
    let mut model = driftless_interval(1.0);
    model.reward = RewardSpec {
        r_a: 0.05,
        ..Default::default()
    };
    let cfg = SimConfig::new(1500, 2e-3, 25, 18);
    let xi = InitialLaw::dirac(vec![0.5]);
    let problem = Problem {
        model: &model,
        config: &cfg,
        initial: &xi,
        picard: &PICARD,
        family: PolicyFamily::Constant,
        objective: Objective::Fv { c: 10.0 },
    };
    // Grid scan oracle over constant policies.
    let scan: Vec<(f64, f64)> = (-4..=4)
        .map(|k| {
            let a = k as f64 * 0.25;
            (a, problem.evaluate(&[a]).unwrap().j_total)
        })
        .collect();
    let best_scan =
        scan.iter().cloned().fold(
            (0.0, f64::NEG_INFINITY),
            |b, x| if x.1 > b.1 { x } else { b },
        );
    assert!(best_scan.0 < 0.0, "{scan:?}");
    let res = optimize_policy(
        &problem,
        &SearchSettings {
            method: SearchMethod::NelderMead,
            budget: 30,
            start: vec![0.0],
            step: 0.5,
        },
    )
    .unwrap();
    assert!(res.best_params[0] < 0.0, "{:?}", res.best_params);
}

#[test]
fn mimicking_does_not_lose_and_survives_refinement() {
    let (model, open, xi) = mimic_concave_scenario();
    let cfg = SimConfig::new(2000, 1.0 / 1024.0, 32, 19);
    let coarse = RegressionBins {
        time_bins: 8,
        space_bins: 10,
    };
    let fine = RegressionBins {
        time_bins: 16,
        space_bins: 20,
    };
    let (a, grid) = mimic_compare(&model, &open, coarse, &cfg, &xi, &PICARD).unwrap();
    let (b, _) = mimic_compare(&model, &open, fine, &cfg, &xi, &PICARD).unwrap();
    assert!(a.j_closed >= a.j_open - 3.0 * a.se);
    assert!((a.j_closed - b.j_closed).abs() <= 3.0 * a.se_closed.hypot(b.se_closed));
    let (lo, hi) = (model.control_set.lo[0], model.control_set.hi[0]);
    for cell in 0..grid.grid.n_cells() {
        let v = grid.grid.cell_value(cell)[0];
        assert!((lo..=hi).contains(&v));
    }
}
