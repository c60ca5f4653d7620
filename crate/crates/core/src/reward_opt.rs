//! Reward functionals in conditional and Fleming-Viot form, and derivative-free
//! search over parametric feedback policies.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleming_viot::{simulate_fv_meanfield, FvTrace, DEFAULT_REINSERTION_CAP};
use crate::io::fmt_real;
use crate::killed_sim::{simulate_killed, InitialLaw, KilledEnsemble, SimConfig};
use crate::linalg::Matrix;
use crate::measures::MeasureFlow;
use crate::model::{Control, FeedbackPolicy, ModelSpec, RewardSpec};
use crate::picard::{solve_fixed_point, PicardSettings};
use crate::rng::{CounterRng, Purpose};
use crate::scalar::Real;

/// Number of particle batches behind every reported standard error.
pub const REWARD_BATCHES: usize = 20;

/// Reward split into components; `j_total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RewardReport<T> {
    pub j_running: T,
    pub j_terminal: T,
    pub j_reinsertion: T,
    pub j_total: T,
    pub se_running: T,
    pub se_terminal: T,
    pub se_reinsertion: T,
    pub se_total: T,
}

fn mean_se<T: Real>(v: &[T]) -> T {
    let n = T::from_usize_lossy(v.len());
    let m = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / (n - T::one());
    (var / n).sqrt()
}

fn batch_of(i: usize, n: usize) -> usize {
    i * REWARD_BATCHES / n
}

fn node_steps<T: Real>(grid: &[T]) -> Vec<T> {
    grid.windows(2).map(|w| w[1] - w[0]).collect()
}

fn check_grid<T: Real>(grid: &[T], flow: &MeasureFlow<T>) -> Result<()> {
    if grid.len() != flow.grid().len()
        || grid
            .iter()
            .zip(flow.grid())
            .any(|(a, b)| (*a - *b).abs() > T::lit(1e-9))
    {
        return Err(Error::GridMismatch(
            "reward inputs live on different grids".into(),
        ));
    }
    Ok(())
}

/// `sum_m h_m * E[f(t_m, X, mu_{t_m}, alpha) | tau > t_m] + g(mu_T)`, with the
/// measure arguments read from `flow` and a left-endpoint rule on the grid.
pub fn eval_reward_conditional<T: Real>(
    ens: &KilledEnsemble<T>,
    flow: &MeasureFlow<T>,
    reward: &RewardSpec<T>,
) -> Result<RewardReport<T>> {
    check_grid(ens.grid(), flow)?;
    if !ens.has_details() {
        return Err(Error::invalid("reward evaluation needs recorded controls"));
    }
    let n = ens.n_particles();
    if n < REWARD_BATCHES {
        return Err(Error::invalid(format!(
            "need at least {REWARD_BATCHES} particles"
        )));
    }
    let grid = ens.grid();
    let h = node_steps(grid);
    let mut total = T::zero();
    let mut batch_total = vec![T::zero(); REWARD_BATCHES];
    for (k, &hk) in h.iter().enumerate() {
        let mean = flow.nodes()[k].mean();
        let mut sum = T::zero();
        let mut alive = 0usize;
        let mut b_sum = [T::zero(); REWARD_BATCHES];
        let mut b_alive = [0usize; REWARD_BATCHES];
        for i in 0..n {
            if !ens.alive(i, k) {
                continue;
            }
            let f = reward.running_with_mean(
                grid[k],
                ens.position(i, k),
                &mean,
                ens.control(i, k).expect("details"),
            );
            sum += f;
            alive += 1;
            let b = batch_of(i, n);
            b_sum[b] += f;
            b_alive[b] += 1;
        }
        if alive == 0 {
            return Err(Error::SurvivorDepletion {
                time: grid[k].to_f64_lossy(),
                survivors: 0,
                required: 1,
            });
        }
        total += hk * sum / T::from_usize_lossy(alive);
        for b in 0..REWARD_BATCHES {
            // A batch without survivors borrows the pooled average.
            let avg = if b_alive[b] > 0 {
                b_sum[b] / T::from_usize_lossy(b_alive[b])
            } else {
                sum / T::from_usize_lossy(alive)
            };
            batch_total[b] += hk * avg;
        }
    }
    let terminal = reward.terminal(flow.nodes().last().expect("nonempty flow"));
    let se = mean_se(&batch_total);
    Ok(RewardReport {
        j_running: total,
        j_terminal: terminal,
        j_reinsertion: T::zero(),
        j_total: total + terminal,
        se_running: se,
        se_terminal: T::zero(),
        se_reinsertion: T::zero(),
        se_total: se,
    })
}

/// `sum_m h_m * mean_i f(t_m, X_i, mu_{t_m}, a_i) - c F_T + g(mu_T)` over all
/// Fleming-Viot particles.
pub fn eval_reward_fv<T: Real>(
    fv: &FvTrace<T>,
    flow: &MeasureFlow<T>,
    reward: &RewardSpec<T>,
    c: T,
) -> Result<RewardReport<T>> {
    check_grid(&fv.grid, flow)?;
    if c < T::zero() {
        return Err(Error::invalid("reinsertion cost must be nonnegative"));
    }
    let n = fv.n_particles();
    if n < REWARD_BATCHES {
        return Err(Error::invalid(format!(
            "need at least {REWARD_BATCHES} particles"
        )));
    }
    let h = node_steps(&fv.grid);
    let mut running = T::zero();
    let mut b_running = vec![T::zero(); REWARD_BATCHES];
    let mut b_size = vec![0usize; REWARD_BATCHES];
    for i in 0..n {
        b_size[batch_of(i, n)] += 1;
    }
    for (k, &hk) in h.iter().enumerate() {
        let mean = flow.nodes()[k].mean();
        let snap = &fv.snapshots[k];
        let mut sum = T::zero();
        let mut b_sum = [T::zero(); REWARD_BATCHES];
        for i in 0..n {
            let f = reward.running_with_mean(fv.grid[k], snap.point(i), &mean, fv.control(k, i));
            sum += f;
            b_sum[batch_of(i, n)] += f;
        }
        running += hk * sum / T::from_usize_lossy(n);
        for b in 0..REWARD_BATCHES {
            b_running[b] += hk * b_sum[b] / T::from_usize_lossy(b_size[b]);
        }
    }
    let mut b_counts = [T::zero(); REWARD_BATCHES];
    for (i, &cnt) in fv.counts.iter().enumerate() {
        b_counts[batch_of(i, n)] += T::from_usize_lossy(cnt);
    }
    let b_f: Vec<T> = b_counts
        .iter()
        .zip(&b_size)
        .map(|(&s, &m)| s / T::from_usize_lossy(m))
        .collect();
    let b_total: Vec<T> = b_running
        .iter()
        .zip(&b_f)
        .map(|(&r, &f)| r - c * f)
        .collect();
    let reinsertion = -(c * fv.f_final());
    let terminal = reward.terminal(flow.nodes().last().expect("nonempty flow"));
    Ok(RewardReport {
        j_running: running,
        j_terminal: terminal,
        j_reinsertion: reinsertion,
        j_total: running + reinsertion + terminal,
        se_running: mean_se(&b_running),
        se_terminal: T::zero(),
        se_reinsertion: c * mean_se(&b_f),
        se_total: mean_se(&b_total),
    })
}

/// Parametric feedback families searched by [`optimize_policy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    /// Parameters: the constant value.
    Constant,
    /// Parameters: `theta0` then `theta1` row-major, `a = theta0 + theta1 x`.
    Linear,
}

impl PolicyFamily {
    pub fn n_params(self, dim: usize, control_dim: usize) -> usize {
        match self {
            PolicyFamily::Constant => control_dim,
            PolicyFamily::Linear => control_dim * (1 + dim),
        }
    }

    pub fn policy<T: Real>(
        self,
        params: &[T],
        dim: usize,
        control_dim: usize,
    ) -> Result<FeedbackPolicy<T>> {
        if params.len() != self.n_params(dim, control_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(dim, control_dim),
                got: params.len(),
            });
        }
        Ok(match self {
            PolicyFamily::Constant => FeedbackPolicy::Constant {
                value: params.to_vec(),
            },
            PolicyFamily::Linear => FeedbackPolicy::Linear {
                theta0: params[..control_dim].to_vec(),
                theta1: Matrix::from_row_major(control_dim, dim, params[control_dim..].to_vec())?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", bound = "T: Real")]
pub enum Objective<T> {
    Conditional,
    Fv { c: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    NelderMead,
    CrossEntropy,
}

/// Search settings. `step` is the initial simplex edge (Nelder-Mead) or the
/// initial sampling standard deviation (cross-entropy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SearchSettings<T> {
    pub method: SearchMethod,
    pub budget: usize,
    pub start: Vec<T>,
    pub step: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Evaluation<T> {
    pub params: Vec<T>,
    /// `-inf` when the evaluation failed.
    pub j: T,
    pub se: T,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OptResult<T> {
    pub best_params: Vec<T>,
    pub best_j: T,
    pub best_se: T,
    pub trace: Vec<Evaluation<T>>,
    pub method: SearchMethod,
    pub family: PolicyFamily,
    pub seed: u64,
}

impl<T: Real> OptResult<T> {
    /// `trace.csv`: `eval_id,p_0..,J,J_se`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ps: Vec<String> = (0..self.best_params.len())
            .map(|k| format!("p_{k}"))
            .collect();
        writeln!(w, "eval_id,{},J,J_se", ps.join(","))?;
        for (id, e) in self.trace.iter().enumerate() {
            let vals: Vec<String> = e.params.iter().map(|&v| fmt_real(v)).collect();
            writeln!(
                w,
                "{id},{},{},{}",
                vals.join(","),
                fmt_real(e.j),
                fmt_real(e.se)
            )?;
        }
        Ok(())
    }
}

/// Everything an objective evaluation needs besides the parameters.
pub struct Problem<'a, T> {
    pub model: &'a ModelSpec<T>,
    pub config: &'a SimConfig<T>,
    pub initial: &'a InitialLaw<T>,
    pub picard: &'a PicardSettings<T>,
    pub family: PolicyFamily,
    pub objective: Objective<T>,
}

impl<T: Real> Problem<'_, T> {
    /// Solves the fixed point for the policy and evaluates the reward. All
    /// evaluations share the seed in `config`.
    pub fn evaluate(&self, params: &[T]) -> Result<RewardReport<T>> {
        let policy = self
            .family
            .policy(params, self.model.dim(), self.model.control_dim())?;
        let control = Control::Feedback(&policy);
        let fp = solve_fixed_point(self.model, control, self.config, self.initial, self.picard)?;
        match self.objective {
            Objective::Conditional => {
                let ens =
                    simulate_killed(self.model, control, &fp.flow, self.config, self.initial)?;
                eval_reward_conditional(&ens, &fp.flow, &self.model.reward)
            }
            Objective::Fv { c } => {
                let fv = simulate_fv_meanfield(
                    self.model,
                    &policy,
                    &fp.flow,
                    self.config,
                    self.initial,
                    DEFAULT_REINSERTION_CAP,
                )?;
                eval_reward_fv(&fv, &fp.flow, &self.model.reward, c)
            }
        }
    }

    fn record(&self, params: Vec<T>) -> Evaluation<T> {
        match self.evaluate(&params) {
            Ok(r) => Evaluation {
                params,
                j: r.j_total,
                se: r.se_total,
                error: None,
            },
            Err(e) => Evaluation {
                params,
                j: T::neg_infinity(),
                se: T::zero(),
                error: Some(e.name().to_string()),
            },
        }
    }
}

/// Maximizes the Monte Carlo reward over the policy family.
pub fn optimize_policy<T: Real>(
    problem: &Problem<'_, T>,
    settings: &SearchSettings<T>,
) -> Result<OptResult<T>> {
    let dim = problem
        .family
        .n_params(problem.model.dim(), problem.model.control_dim());
    if dim == 0 || dim > 64 {
        return Err(Error::invalid(
            "policy family must have between 1 and 64 parameters",
        ));
    }
    if settings.start.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: settings.start.len(),
        });
    }
    if settings.budget < 10 || !(settings.step > T::zero()) {
        return Err(Error::invalid("search needs budget >= 10 and step > 0"));
    }
    let trace = match settings.method {
        SearchMethod::NelderMead => nelder_mead(problem, settings),
        SearchMethod::CrossEntropy => cross_entropy(problem, settings),
    };
    let best = trace
        .iter()
        .enumerate()
        .fold(0, |b, (k, e)| if e.j > trace[b].j { k } else { b });
    Ok(OptResult {
        best_params: trace[best].params.clone(),
        best_j: trace[best].j,
        best_se: trace[best].se,
        method: settings.method,
        family: problem.family,
        seed: problem.config.seed,
        trace,
    })
}

fn nelder_mead<T: Real>(
    problem: &Problem<'_, T>,
    settings: &SearchSettings<T>,
) -> Vec<Evaluation<T>> {
    let (alpha, gamma, rho, shrink) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));
    let n = settings.start.len();
    let mut trace: Vec<Evaluation<T>> = Vec::new();
    let budget = settings.budget;
    let eval = |p: Vec<T>, trace: &mut Vec<Evaluation<T>>| -> T {
        let e = problem.record(p);
        let j = e.j;
        trace.push(e);
        j
    };
    // Simplex as (params, value), sorted best (largest) first.
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if trace.len() >= budget {
            break;
        }
        let mut p = settings.start.clone();
        if k > 0 {
            p[k - 1] += settings.step;
        }
        let j = eval(p.clone(), &mut trace);
        simplex.push((p, j));
    }
    let order = |s: &mut Vec<(Vec<T>, T)>| {
        s.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    let lerp = |a: &[T], b: &[T], t: T| -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| x + t * (y - x)).collect()
    };
    while simplex.len() == n + 1 && trace.len() < budget {
        order(&mut simplex);
        let mut centroid = vec![T::zero(); n];
        for (p, _) in &simplex[..n] {
            for (c, &v) in centroid.iter_mut().zip(p) {
                *c += v / T::from_usize_lossy(n);
            }
        }
        let worst = simplex[n].clone();
        // x_r = c + alpha (c - x_w)
        let xr = lerp(&centroid, &worst.0, -alpha);
        let jr = eval(xr.clone(), &mut trace);
        if jr > simplex[0].1 {
            if trace.len() >= budget {
                simplex[n] = (xr, jr);
                break;
            }
            let xe = lerp(&centroid, &worst.0, -gamma);
            let je = eval(xe.clone(), &mut trace);
            simplex[n] = if je > jr { (xe, je) } else { (xr, jr) };
            continue;
        }
        if jr > simplex[n - 1].1 {
            simplex[n] = (xr, jr);
            continue;
        }
        if trace.len() >= budget {
            break;
        }
        let outside = jr > worst.1;
        let xc = if outside {
            lerp(&centroid, &xr, rho)
        } else {
            lerp(&centroid, &worst.0, rho)
        };
        let jc = eval(xc.clone(), &mut trace);
        if (outside && jc >= jr) || (!outside && jc > worst.1) {
            simplex[n] = (xc, jc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if trace.len() >= budget {
                break;
            }
            let p = lerp(&best, &v.0, shrink);
            let j = eval(p.clone(), &mut trace);
            *v = (p, j);
        }
    }
    trace
}

const CE_POPULATION: usize = 16;
const CE_ELITE: usize = 4;
const CE_SMOOTHING: f64 = 0.7;

fn cross_entropy<T: Real>(
    problem: &Problem<'_, T>,
    settings: &SearchSettings<T>,
) -> Vec<Evaluation<T>> {
    let n = settings.start.len();
    let rng = CounterRng::new(problem.config.seed);
    let mut mean = settings.start.clone();
    let mut sd = vec![settings.step; n];
    let mut trace: Vec<Evaluation<T>> = Vec::new();
    let mut generation = 0u64;
    while trace.len() < settings.budget {
        let size = CE_POPULATION.min(settings.budget - trace.len());
        let candidates: Vec<Vec<T>> = (0..size)
            .map(|c| {
                let mut s = rng.stream(c as u64, generation, Purpose::Search);
                (0..n)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut s);
                        mean[k] + sd[k] * T::lit(z)
                    })
                    .collect()
            })
            .collect();
        let evals: Vec<Evaluation<T>> = candidates
            .into_par_iter()
            .map(|p| problem.record(p))
            .collect();
        let mut idx: Vec<usize> = (0..evals.len()).collect();
        idx.sort_by(|&a, &b| {
            evals[b]
                .j
                .partial_cmp(&evals[a].j)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let elite: Vec<&Vec<T>> = idx
            .iter()
            .take(CE_ELITE)
            .filter(|&&k| evals[k].j.is_finite())
            .map(|&k| &evals[k].params)
            .collect();
        if !elite.is_empty() {
            let w = T::lit(CE_SMOOTHING);
            let ne = T::from_usize_lossy(elite.len());
            for k in 0..n {
                let m = elite.iter().map(|p| p[k]).sum::<T>() / ne;
                let v = elite.iter().map(|p| (p[k] - m) * (p[k] - m)).sum::<T>() / ne;
                mean[k] = w * m + (T::one() - w) * mean[k];
                sd[k] = w * v.sqrt() + (T::one() - w) * sd[k];
            }
        }
        trace.extend(evals);
        generation += 1;
    }
    trace
}
