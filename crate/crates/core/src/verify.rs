//! Acceptance suite shared by `condmv verify` and the `acceptance` test target.
//! Every criterion runs at its pinned scale and tolerance; the report holds no
//! timing or thread information so it is byte-stable across runs.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleming_viot::{
    fv_correspondence_report, simulate_fv_finite, simulate_fv_meanfield, DEFAULT_REINSERTION_CAP,
};
use crate::geometry::Domain;
use crate::killed_sim::{
    analytic_interval_survival, boundary_exit_frequency, girsanov_survival_floor, simulate_killed,
    InitialLaw, SimConfig,
};
use crate::linalg::Matrix;
use crate::measures::MeasureFlow;
use crate::mimic::{mimic_compare, RegressionBins};
use crate::model::{
    BaseDrift, Control, ControlBox, DriftSpec, FeedbackPolicy, ModelSpec, OpenLoopControl,
    RewardSpec, StateFeature,
};
use crate::picard::{compare_fixed_points, placeholder_flow, solve_fixed_point, PicardSettings};
use crate::renewal::{
    estimate_restart_kernel, log_survival_check, volterra_solve, write_volterra_csv,
};
use crate::reward_opt::{
    eval_reward_conditional, eval_reward_fv, optimize_policy, Objective, PolicyFamily, Problem,
    SearchMethod, SearchSettings,
};
use crate::rng::{mix_seed, CounterRng, Purpose};

pub const SURVIVAL_REL_TOL: f64 = 0.01;
pub const SURVIVAL_RUNTIME_LIMIT_SECS: f64 = 60.0;
pub const SURVIVAL_CHECK_TIMES: [f64; 3] = [0.25, 0.5, 1.0];
pub const QSD_TIME: f64 = 3.0;
pub const QSD_MOMENT_TOL: f64 = 0.01;
pub const MARGINAL_W1_TOL: f64 = 0.02;
pub const F_IDENTITY_TOL: f64 = 0.05;
pub const RENEWAL_RESIDUAL_TOL: f64 = 0.03;
pub const RENEWAL_DT: f64 = 0.01;
pub const PICARD_TOL: f64 = 1e-2;
pub const PICARD_MAX_ITER: usize = 10;
pub const SEED_AGREEMENT_SES: f64 = 5.0;
pub const MIMIC_GAIN_SES: f64 = 2.0;
pub const MIMIC_REPETITIONS: usize = 10;
pub const MIMIC_MIN_POSITIVE: usize = 9;
pub const MIMIC_IDENTITY_SES: f64 = 3.0;
pub const REWARD_EQUIVALENCE_SES: f64 = 3.0;
pub const DECOMPOSITION_TOL: f64 = 1e-12;
pub const FLOOR_POLICIES: usize = 20;
pub const FLOOR_SES: f64 = 3.0;
pub const BOUNDARY_EPS: f64 = 0.01;
pub const BOUNDARY_MIN_FREQ_NO_BRIDGE: f64 = 0.9;
pub const DETERMINISM_THREADS: [usize; 3] = [1, 4, 8];

const N_KILLED: usize = 100_000;
const N_FV: usize = 10_000;
const N_KERNEL: usize = 2_000;
const N_PICARD: usize = 20_000;
const N_MIMIC: usize = 3_000;
const N_REWARD: usize = 5_000;
const N_FLOOR: usize = 2_000;
const N_BOUNDARY: usize = 1_000;
const DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Criterion {
    fn new(id: u32, name: &str) -> Self {
        Self {
            id,
            name: name.to_string(),
            passed: false,
            metrics: BTreeMap::new(),
            error: None,
        }
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    fn failed_with(mut self, e: &Error) -> Self {
        self.passed = false;
        self.error = Some(format!("{}: {e}", e.name()));
        self
    }

    /// One line: `criterion  N PASS name key=value ...`.
    pub fn summary_line(&self) -> String {
        let mut line = format!(
            "criterion {:>2} {} {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name
        );
        for (k, v) in &self.metrics {
            line.push_str(&format!(" {k}={v:.6}"));
        }
        if let Some(e) = &self.error {
            line.push_str(&format!(" error=\"{e}\""));
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub all_passed: bool,
    pub criteria: Vec<Criterion>,
}

/// Report, CSV artifacts by file name, and wall-clock timings (kept apart from
/// the report).
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub report: VerifyReport,
    pub artifacts: BTreeMap<String, Vec<u8>>,
    pub timings: BTreeMap<String, f64>,
}

/// `D = (-1, 1)`, `sigma = 1`, no base drift or mean-field term, controls in
/// `[-1, 1]` entering additively, drift clipped at 5.
pub fn driftless_interval(horizon: f64) -> ModelSpec<f64> {
    ModelSpec {
        domain: Domain::Interval { lo: -1.0, hi: 1.0 },
        sigma: Matrix::identity(1),
        drift: DriftSpec {
            base: BaseDrift::Zero,
            mf_gain: 0.0,
            control_matrix: Matrix::identity(1),
            clip_bound: 5.0,
        },
        control_set: ControlBox::symmetric(1, 1.0),
        horizon,
        reward: RewardSpec::default(),
    }
}

/// Mean-field scenario: the driftless interval model with gain 0.5 toward the
/// conditional mean, constant control 0.3, uniform start on `[-0.5, 0.5]` and a
/// reward depending on state, mean, control and terminal mean.
pub fn default_meanfield(horizon: f64) -> (ModelSpec<f64>, FeedbackPolicy<f64>, InitialLaw<f64>) {
    let mut model = driftless_interval(horizon);
    model.drift.mf_gain = 0.5;
    model.reward = RewardSpec {
        r_x: 1.0,
        feature: StateFeature::SquaredNorm,
        r_m: 0.5,
        w: vec![1.0],
        r_a: 0.5,
        g_w: 1.0,
        w_g: vec![1.0],
        ..Default::default()
    };
    (
        model,
        FeedbackPolicy::Constant { value: vec![0.3] },
        InitialLaw::Uniform {
            lo: vec![-0.5],
            hi: vec![0.5],
        },
    )
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn node_at(grid: &[f64], t: f64) -> Option<usize> {
    grid.iter().position(|&g| (g - t).abs() < 1e-9)
}

/// Runs all criteria with seeds derived from `seed`.
pub fn run_verify(seed: u64) -> VerifyOutcome {
    let mut criteria = Vec::new();
    let mut artifacts = BTreeMap::new();
    let mut timings = BTreeMap::new();

    killed_family(seed, &mut criteria, &mut artifacts, &mut timings);
    criteria.push(picard_criterion(seed, &mut artifacts));
    criteria.push(mimic_criterion(seed, &mut artifacts));
    criteria.push(reward_criterion(seed));
    criteria.push(floor_criterion(seed));
    criteria.push(boundary_criterion(seed));
    criteria.push(determinism_criterion(seed));
    criteria.sort_by_key(|c| c.id);
    let all_passed = criteria.iter().all(|c| c.passed);
    let report = VerifyReport {
        seed,
        all_passed,
        criteria,
    };
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    artifacts.insert("verify_report.json".into(), json);
    VerifyOutcome {
        report,
        artifacts,
        timings,
    }
}

/// Criteria 1-5 share one large killed run of the driftless model.
fn killed_family(
    seed: u64,
    criteria: &mut Vec<Criterion>,
    artifacts: &mut BTreeMap<String, Vec<u8>>,
    timings: &mut BTreeMap<String, f64>,
) {
    let mut c1 = Criterion::new(1, "survival oracle");
    let mut c2 = Criterion::new(2, "quasi-stationary second moment");
    let names = [
        (3, "mean-field FV marginal identity"),
        (4, "reinsertion counter identity"),
        (5, "renewal solver"),
    ];
    let model3 = driftless_interval(QSD_TIME);
    let zero = FeedbackPolicy::zero(1);
    let xi = InitialLaw::dirac(vec![0.0]);
    let mut cfg = SimConfig::new(N_KILLED, DT, 10, mix_seed(seed, 1));
    cfg.record_details = false;
    let start = Instant::now();
    let run = placeholder_flow(&model3, &cfg)
        .and_then(|p| simulate_killed(&model3, Control::Feedback(&zero), &p, &cfg, &xi))
        .and_then(|e| e.conditional_flow().map(|f| (e, f)));
    let elapsed = start.elapsed().as_secs_f64();
    timings.insert("survival_oracle_run_secs".into(), elapsed);
    let (ens, flow) = match run {
        Ok(v) => v,
        Err(e) => {
            criteria.push(c1.failed_with(&e));
            criteria.push(c2.failed_with(&e));
            for (id, name) in names {
                criteria.push(Criterion::new(id, name).failed_with(&e));
            }
            return;
        }
    };
    artifacts.insert(
        "survival.csv".into(),
        csv_bytes(|w| ens.write_survival_csv(w)),
    );

    let grid = ens.grid().to_vec();
    let survival = ens.survival();
    let mut worst = 0.0f64;
    for &t in &SURVIVAL_CHECK_TIMES {
        let k = node_at(&grid, t).expect("check time on grid");
        let series = analytic_interval_survival(0.0, 1.0, 1.0, t, 50);
        let rel = (survival[k] - series).abs() / series;
        c1.metric(&format!("rel_err_t{t}"), rel);
        worst = worst.max(rel);
    }
    c1.passed = worst <= SURVIVAL_REL_TOL && elapsed <= SURVIVAL_RUNTIME_LIMIT_SECS;
    criteria.push(c1);

    let k3 = node_at(&grid, QSD_TIME).expect("QSD time on grid");
    let m2 = flow.nodes()[k3].second_moment();
    let target = 1.0 - 8.0 / (std::f64::consts::PI * std::f64::consts::PI);
    c2.metric("second_moment", m2);
    c2.metric("target", target);
    c2.metric("survivors", flow.nodes()[k3].len() as f64);
    c2.passed = (m2 - target).abs() <= QSD_MOMENT_TOL;
    criteria.push(c2);

    let k1 = node_at(&grid, 1.0).expect("t = 1 on grid");
    let model1 = driftless_interval(1.0);
    let res = ens
        .truncated(k1 + 1)
        .and_then(|short| short.conditional_flow().map(|f| (short, f)));
    let (short, flow1) = match res {
        Ok(v) => v,
        Err(e) => {
            for (id, name) in names {
                criteria.push(Criterion::new(id, name).failed_with(&e));
            }
            return;
        }
    };
    let fv_cfg = SimConfig::new(N_FV, DT, 10, mix_seed(seed, 3));
    let mf = simulate_fv_meanfield(
        &model1,
        &zero,
        &flow1,
        &fv_cfg,
        &xi,
        DEFAULT_REINSERTION_CAP,
    );
    let fin = simulate_fv_finite(
        &model1,
        &zero,
        &fv_cfg.with_seed(mix_seed(seed, 4)),
        &xi,
        DEFAULT_REINSERTION_CAP,
    );

    let mut c3 = Criterion::new(3, names[0].1);
    let mut c4 = Criterion::new(4, names[1].1);
    let log_s1 = flow1.survival()[k1].ln();
    match &mf {
        Ok(mf) => match fv_correspondence_report(mf, &short) {
            Ok(rep) => {
                c3.metric("max_w1", rep.max_w1);
                c3.passed = rep.max_w1 <= MARGINAL_W1_TOL;
                c4.metric("meanfield_residual", (mf.f_final() + log_s1).abs());
                c4.metric("meanfield_f", mf.f_final());
                artifacts.insert(
                    "f_curve_meanfield.csv".into(),
                    csv_bytes(|w| mf.write_f_curve_csv(w)),
                );
            }
            Err(e) => c3 = c3.failed_with(&e),
        },
        Err(e) => {
            c3 = c3.failed_with(e);
            c4 = c4.failed_with(e);
        }
    }
    criteria.push(c3);
    match (&mf, &fin) {
        (Ok(mf), Ok(fin)) => {
            let r_mf = (mf.f_final() + log_s1).abs();
            let r_fin = (fin.f_final() + log_s1).abs();
            c4.metric("finite_residual", r_fin);
            c4.metric("finite_f", fin.f_final());
            c4.metric("minus_log_survival", -log_s1);
            c4.passed = r_mf <= F_IDENTITY_TOL && r_fin <= F_IDENTITY_TOL;
            artifacts.insert(
                "f_curve_finite.csv".into(),
                csv_bytes(|w| fin.write_f_curve_csv(w)),
            );
        }
        (_, Err(e)) => c4 = c4.failed_with(e),
        _ => {}
    }
    criteria.push(c4);

    let mut c5 = Criterion::new(5, names[2].1);
    let kcfg = SimConfig::new(N_KERNEL, DT, 10, mix_seed(seed, 5));
    let renewal =
        estimate_restart_kernel(&model1, &zero, &flow1, &kcfg, RENEWAL_DT).and_then(|kernel| {
            let s: Vec<f64> = flow1.survival().to_vec();
            let cdf: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
            let f = volterra_solve(&cdf, &kernel)?;
            let rep = log_survival_check(&f, &s, flow1.grid())?;
            Ok((kernel, f, rep))
        });
    match renewal {
        Ok((kernel, f, rep)) => {
            let p_hat = *kernel.contraction_diagnostic().last().expect("grid");
            c5.metric("max_residual", rep.max_abs);
            c5.metric("p_hat_T", p_hat);
            c5.metric("f_volterra_T", *f.last().expect("grid"));
            c5.passed = rep.max_abs <= RENEWAL_RESIDUAL_TOL && p_hat < 1.0;
            artifacts.insert("kernel.csv".into(), csv_bytes(|w| kernel.write_csv(w)));
            artifacts.insert(
                "f_volterra.csv".into(),
                csv_bytes(|w| write_volterra_csv(w, flow1.grid(), &f, &rep)),
            );
        }
        Err(e) => c5 = c5.failed_with(&e),
    }
    criteria.push(c5);
}

fn picard_criterion(seed: u64, artifacts: &mut BTreeMap<String, Vec<u8>>) -> Criterion {
    let mut c = Criterion::new(6, "Picard contraction");
    let (model, policy, xi) = default_meanfield(1.0);
    let settings = PicardSettings {
        tol: PICARD_TOL,
        max_iter: PICARD_MAX_ITER,
    };
    let solve = |s: u64| {
        let cfg = SimConfig::new(N_PICARD, DT, 50, s);
        solve_fixed_point(&model, Control::Feedback(&policy), &cfg, &xi, &settings)
    };
    let res = solve(mix_seed(seed, 6)).and_then(|a| {
        let b = solve(mix_seed(seed, 7))?;
        let cmp = compare_fixed_points(&a, &b)?;
        Ok((a, b, cmp))
    });
    match res {
        Ok((a, b, cmp)) => {
            let t = &a.distance_trace;
            let monotone = t.windows(2).skip(1).all(|w| w[1] <= w[0]);
            c.metric("iterations", a.iterations as f64);
            c.metric("iterations_second_seed", b.iterations as f64);
            c.metric("final_distance", *t.last().expect("nonempty trace"));
            c.metric("first_distance", t[0]);
            c.metric("seed_distance", cmp.distance);
            c.metric("seed_se", cmp.se);
            c.passed = a.converged
                && b.converged
                && a.iterations <= PICARD_MAX_ITER
                && monotone
                && cmp.distance <= SEED_AGREEMENT_SES * cmp.se;
            artifacts.insert(
                "iterations.csv".into(),
                csv_bytes(|w| a.write_iterations_csv(w)),
            );
        }
        Err(e) => c = c.failed_with(&e),
    }
    c
}

/// Strict-concavity scenario: reward `-|a|^2`, randomized-sign open-loop
/// control, symmetric uniform start.
pub fn mimic_concave_scenario() -> (ModelSpec<f64>, OpenLoopControl<f64>, InitialLaw<f64>) {
    let mut model = driftless_interval(0.5);
    model.drift.mf_gain = 0.5;
    model.reward = RewardSpec {
        r_a: 1.0,
        ..Default::default()
    };
    (
        model,
        OpenLoopControl::RandomizedSign {
            a0: vec![0.8],
            direction: vec![1.0],
        },
        InitialLaw::Uniform {
            lo: vec![-0.5],
            hi: vec![0.5],
        },
    )
}

/// Identity scenario: a deterministic switch on a regression bin boundary, so
/// the open-loop control is already of feedback form.
pub fn mimic_identity_scenario() -> (ModelSpec<f64>, OpenLoopControl<f64>, InitialLaw<f64>) {
    let (mut model, _, xi) = mimic_concave_scenario();
    model.reward = RewardSpec {
        r_x: 1.0,
        feature: StateFeature::SquaredNorm,
        r_a: 1.0,
        ..Default::default()
    };
    (
        model,
        OpenLoopControl::Piecewise {
            t_switch: 0.25,
            before: vec![0.5],
            after: vec![-0.3],
        },
        xi,
    )
}

pub const MIMIC_BINS: RegressionBins = RegressionBins {
    time_bins: 8,
    space_bins: 10,
};
pub const MIMIC_DT: f64 = 1.0 / 1024.0;

fn mimic_criterion(seed: u64, artifacts: &mut BTreeMap<String, Vec<u8>>) -> Criterion {
    let mut c = Criterion::new(7, "open-loop to feedback mimicking");
    let settings = PicardSettings {
        tol: PICARD_TOL,
        max_iter: PICARD_MAX_ITER,
    };
    let mut run = || -> Result<()> {
        let (model, open, xi) = mimic_concave_scenario();
        let mut positive = 0;
        let mut first = None;
        for r in 0..MIMIC_REPETITIONS {
            let cfg = SimConfig::new(N_MIMIC, MIMIC_DT, 32, mix_seed(seed, 100 + r as u64));
            let (rep, grid) = mimic_compare(&model, &open, MIMIC_BINS, &cfg, &xi, &settings)?;
            if rep.delta > 0.0 {
                positive += 1;
            }
            if r == 0 {
                artifacts.insert("compare.csv".into(), csv_bytes(|w| rep.write_csv(w)));
                artifacts.insert("policy_grid.csv".into(), csv_bytes(|w| grid.write_csv(w)));
                first = Some(rep);
            }
        }
        let first = first.expect("at least one repetition");
        let (model, open, xi) = mimic_identity_scenario();
        let cfg = SimConfig::new(N_MIMIC, MIMIC_DT, 32, mix_seed(seed, 200));
        let (ident, _) = mimic_compare(&model, &open, MIMIC_BINS, &cfg, &xi, &settings)?;
        c.metric("concave_delta", first.delta);
        c.metric("concave_se", first.se);
        c.metric("positive_repetitions", positive as f64);
        c.metric("identity_delta", ident.delta);
        c.metric("identity_se", ident.se);
        c.passed = first.delta > MIMIC_GAIN_SES * first.se
            && positive >= MIMIC_MIN_POSITIVE
            && ident.delta.abs() <= MIMIC_IDENTITY_SES * ident.se;
        Ok(())
    };
    if let Err(e) = run() {
        c = c.failed_with(&e);
    }
    c
}

/// Policies compared in the reward-equivalence check.
pub fn reward_policies() -> Vec<(&'static str, FeedbackPolicy<f64>)> {
    vec![
        ("zero", FeedbackPolicy::zero(1)),
        ("constant", FeedbackPolicy::Constant { value: vec![0.3] }),
        (
            "linear",
            FeedbackPolicy::Linear {
                theta0: vec![0.1],
                theta1: Matrix::from_row_major(1, 1, vec![-0.5]).expect("1x1"),
            },
        ),
    ]
}

fn reward_criterion(seed: u64) -> Criterion {
    let mut c = Criterion::new(8, "reward equivalence");
    let (model, _, xi) = default_meanfield(1.0);
    let settings = PicardSettings {
        tol: PICARD_TOL,
        max_iter: PICARD_MAX_ITER,
    };
    let mut run = || -> Result<bool> {
        let mut ok = true;
        for (k, (name, policy)) in reward_policies().into_iter().enumerate() {
            let cfg = SimConfig::new(N_REWARD, DT, 50, mix_seed(seed, 300 + k as u64));
            let control = Control::Feedback(&policy);
            let fp = solve_fixed_point(&model, control, &cfg, &xi, &settings)?;
            let mu: &MeasureFlow<f64> = &fp.flow;
            let ens = simulate_killed(&model, control, mu, &cfg, &xi)?;
            let cp = eval_reward_conditional(&ens, mu, &model.reward)?;
            let fv_cfg = cfg.with_seed(mix_seed(seed, 310 + k as u64));
            let fv =
                simulate_fv_meanfield(&model, &policy, mu, &fv_cfg, &xi, DEFAULT_REINSERTION_CAP)?;
            let j0 = eval_reward_fv(&fv, mu, &model.reward, 0.0)?;
            let j1 = eval_reward_fv(&fv, mu, &model.reward, 1.0)?;
            let se = (cp.se_total * cp.se_total + j0.se_total * j0.se_total).sqrt();
            let gap = (cp.j_total - j0.j_total).abs();
            let decomposition = (j1.j_total - (j0.j_total - fv.f_final())).abs();
            c.metric(&format!("{name}_gap"), gap);
            c.metric(&format!("{name}_se"), se);
            c.metric(&format!("{name}_decomposition"), decomposition);
            ok &= gap <= REWARD_EQUIVALENCE_SES * se
                && decomposition <= DECOMPOSITION_TOL
                && j1.j_running == j0.j_running
                && j1.j_reinsertion == -fv.f_final();
        }
        Ok(ok)
    };
    match run() {
        Ok(ok) => c.passed = ok,
        Err(e) => c = c.failed_with(&e),
    }
    c
}

fn floor_criterion(seed: u64) -> Criterion {
    let mut c = Criterion::new(9, "survival floor");
    let mut model = driftless_interval(1.0);
    model.drift.clip_bound = 1.0;
    let c_b = model.drift.clip_bound;
    let p0 = analytic_interval_survival(0.0, 1.0, 1.0, model.horizon, 50);
    let rng = CounterRng::new(mix_seed(seed, 9));
    let xi = InitialLaw::dirac(vec![0.0]);
    let mut run = || -> Result<bool> {
        let floor = girsanov_survival_floor(c_b, &model.sigma, model.horizon, p0)?;
        let mut cfg = SimConfig::new(N_FLOOR, DT, 100, mix_seed(seed, 10));
        cfg.record_details = false;
        let placeholder = placeholder_flow(&model, &cfg)?;
        let mut worst_margin = f64::INFINITY;
        let mut min_s = f64::INFINITY;
        for k in 0..FLOOR_POLICIES {
            let mut s = rng.stream(k as u64, 0, Purpose::Search);
            let theta0 = 2.0 * s.unit() - 1.0;
            let theta1 = 6.0 * s.unit() - 3.0;
            let policy = FeedbackPolicy::Linear {
                theta0: vec![theta0],
                theta1: Matrix::from_row_major(1, 1, vec![theta1])?,
            };
            let ens = simulate_killed(
                &model,
                Control::Feedback(&policy),
                &placeholder,
                &cfg.with_seed(mix_seed(seed, 20 + k as u64)),
                &xi,
            )?;
            let s_t = *ens.survival().last().expect("grid");
            let se = *ens.survival_se().last().expect("grid");
            min_s = min_s.min(s_t);
            worst_margin = worst_margin.min(s_t - (floor - FLOOR_SES * se));
        }
        c.metric("floor", floor);
        c.metric("min_survival", min_s);
        c.metric("worst_margin", worst_margin);
        Ok(worst_margin >= 0.0)
    };
    match run() {
        Ok(ok) => c.passed = ok,
        Err(e) => c = c.failed_with(&e),
    }
    c
}

fn boundary_criterion(seed: u64) -> Criterion {
    let mut c = Criterion::new(10, "boundary start exits immediately");
    let dom = Domain::Interval { lo: -1.0, hi: 1.0 };
    let sigma = Matrix::identity(1);
    let run = || -> Result<(f64, f64)> {
        let with = boundary_exit_frequency(
            &dom,
            &sigma,
            &[1.0],
            BOUNDARY_EPS,
            DT,
            true,
            N_BOUNDARY,
            mix_seed(seed, 11),
        )?;
        let without = boundary_exit_frequency(
            &dom,
            &sigma,
            &[1.0],
            BOUNDARY_EPS,
            1e-5,
            false,
            N_BOUNDARY,
            mix_seed(seed, 12),
        )?;
        Ok((with, without))
    };
    match run() {
        Ok((with, without)) => {
            c.metric("frequency_bridge", with);
            c.metric("frequency_no_bridge", without);
            c.passed = with == 1.0 && without >= BOUNDARY_MIN_FREQ_NO_BRIDGE;
        }
        Err(e) => c = c.failed_with(&e),
    }
    c
}

fn determinism_criterion(seed: u64) -> Criterion {
    let mut c = Criterion::new(11, "determinism across thread counts");
    let mut outputs = Vec::new();
    for &threads in &DETERMINISM_THREADS {
        let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(p) => p,
            Err(e) => {
                c.error = Some(format!("thread pool: {e}"));
                return c;
            }
        };
        match pool.install(|| determinism_probe(seed)) {
            Ok(a) => outputs.push(a),
            Err(e) => return c.failed_with(&e),
        }
    }
    let files = outputs[0].len();
    let bytes: usize = outputs[0].values().map(Vec::len).sum();
    c.metric("artifacts", files as f64);
    c.metric("bytes", bytes as f64);
    c.passed = files > 0 && outputs.windows(2).all(|w| w[0] == w[1]);
    c
}

/// Reduced-scale run of every pipeline, returning its CSV artifacts.
pub fn determinism_probe(seed: u64) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let seed = mix_seed(seed, 999);
    let zero = FeedbackPolicy::zero(1);
    let xi0 = InitialLaw::dirac(vec![0.0]);

    let m = driftless_interval(0.5);
    let cfg = SimConfig::new(2_000, DT, 50, seed);
    let ens = simulate_killed(
        &m,
        Control::Feedback(&zero),
        &placeholder_flow(&m, &cfg)?,
        &cfg,
        &xi0,
    )?;
    let flow = ens.conditional_flow()?;
    out.insert(
        "survival.csv".into(),
        csv_bytes(|w| ens.write_survival_csv(w)),
    );
    out.insert("flow.csv".into(), csv_bytes(|w| flow.write_csv(w)));
    out.insert("paths.bin".into(), csv_bytes(|w| ens.write_paths_binary(w)));

    let small = SimConfig::new(500, DT, 50, seed);
    let fin = simulate_fv_finite(&m, &zero, &small, &xi0, DEFAULT_REINSERTION_CAP)?;
    let mf = simulate_fv_meanfield(&m, &zero, &flow, &small, &xi0, DEFAULT_REINSERTION_CAP)?;
    out.insert(
        "events_finite.csv".into(),
        csv_bytes(|w| fin.write_events_csv(w)),
    );
    out.insert(
        "f_curve_finite.csv".into(),
        csv_bytes(|w| fin.write_f_curve_csv(w)),
    );
    out.insert(
        "events_meanfield.csv".into(),
        csv_bytes(|w| mf.write_events_csv(w)),
    );

    let kcfg = SimConfig::new(200, DT, 50, seed);
    let kernel = estimate_restart_kernel(&m, &zero, &flow, &kcfg, 0.05)?;
    out.insert("kernel.csv".into(), csv_bytes(|w| kernel.write_csv(w)));

    let (pm, policy, xi) = default_meanfield(0.5);
    let pcfg = SimConfig::new(1_000, DT, 50, seed);
    let settings = PicardSettings {
        tol: 1e-3,
        max_iter: 3,
    };
    let fp = solve_fixed_point(&pm, Control::Feedback(&policy), &pcfg, &xi, &settings)?;
    out.insert(
        "iterations.csv".into(),
        csv_bytes(|w| fp.write_iterations_csv(w)),
    );
    out.insert(
        "picard_flow.csv".into(),
        csv_bytes(|w| fp.flow.write_csv(w)),
    );

    let (mm, open, mxi) = mimic_concave_scenario();
    let mcfg = SimConfig::new(500, MIMIC_DT, 32, seed);
    let (rep, grid) = mimic_compare(&mm, &open, MIMIC_BINS, &mcfg, &mxi, &settings)?;
    out.insert("compare.csv".into(), csv_bytes(|w| rep.write_csv(w)));
    out.insert("policy_grid.csv".into(), csv_bytes(|w| grid.write_csv(w)));

    let ocfg = SimConfig::new(200, 5e-3, 10, seed);
    let problem = Problem {
        model: &pm,
        config: &ocfg,
        initial: &xi,
        picard: &PicardSettings {
            tol: 1e-2,
            max_iter: 2,
        },
        family: PolicyFamily::Constant,
        objective: Objective::Fv { c: 1.0 },
    };
    let opt = optimize_policy(
        &problem,
        &SearchSettings {
            method: SearchMethod::CrossEntropy,
            budget: 16,
            start: vec![0.0],
            step: 0.5,
        },
    )?;
    out.insert("trace.csv".into(), csv_bytes(|w| opt.write_trace_csv(w)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_is_thread_independent() {
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| determinism_probe(3).unwrap());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| determinism_probe(3).unwrap());
        assert_eq!(a, b);
        assert!(a.len() >= 10);
    }

    #[test]
    fn summary_lines() {
        let mut c = Criterion::new(4, "x");
        c.metric("a", 0.5);
        assert_eq!(c.summary_line(), "criterion  4 FAIL x a=0.500000");
        c.passed = true;
        assert!(c.summary_line().contains("PASS"));
    }
}
