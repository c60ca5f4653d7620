//! Renewal equation for the expected reinsertion count: restart kernels
//! estimated by simulation, a Volterra-Stieltjes solver and the comparison of
//! its solution with `-log S`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::killed_sim::{check_flow, step_means, Engine, Scratch, SimConfig};
use crate::measures::MeasureFlow;
use crate::model::{Control, FeedbackPolicy, ModelSpec};
use crate::rng::mix_seed;
use crate::scalar::Real;

/// Exit-time CDFs of the process restarted at `s_j = j dt_r` from `mu_{s_j}`.
/// Row `j` holds `K[j][k] = P(tau <= k dt_r)` for `k = 0..=M - j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartKernel<T> {
    pub dt_r: T,
    pub values: Vec<Vec<T>>,
    pub se: Vec<Vec<T>>,
    /// Number of entries moved by the isotonic projection.
    pub projected_entries: usize,
}

impl<T: Real> RestartKernel<T> {
    /// Kernel built from a given function of `(s, u)`, on `M` intervals.
    pub fn from_fn(dt_r: T, m: usize, f: impl Fn(T, T) -> T) -> Self {
        let values: Vec<Vec<T>> = (0..=m)
            .map(|j| {
                (0..=m - j)
                    .map(|k| f(T::from_usize_lossy(j) * dt_r, T::from_usize_lossy(k) * dt_r))
                    .collect()
            })
            .collect();
        let se = values.iter().map(|r| vec![T::zero(); r.len()]).collect();
        Self {
            dt_r,
            values,
            se,
            projected_entries: 0,
        }
    }

    /// Number of grid intervals `M`.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn grid(&self) -> Vec<T> {
        (0..=self.intervals())
            .map(|k| T::from_usize_lossy(k) * self.dt_r)
            .collect()
    }

    /// `p_hat(t_m) = max_{j <= m} K[j][m - j]`.
    pub fn contraction_diagnostic(&self) -> Vec<T> {
        (0..=self.intervals())
            .map(|m| {
                (0..=m)
                    .map(|j| self.values[j][m - j])
                    .fold(T::zero(), T::max)
            })
            .collect()
    }

    /// Projects every row onto nondecreasing sequences in `[0, 1]` starting at 0.
    pub fn project(&mut self) {
        let mut moved = 0;
        for row in &mut self.values {
            let before = row.clone();
            for v in row.iter_mut() {
                *v = v.max(T::zero()).min(T::one());
            }
            isotonic_projection(row);
            if let Some(first) = row.first_mut() {
                *first = T::zero();
            }
            moved += row.iter().zip(&before).filter(|(a, b)| a != b).count();
        }
        self.projected_entries = moved;
    }

    /// `kernel.csv`: `s,u,K,K_se`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,u,K,K_se")?;
        for (j, (row, se)) in self.values.iter().zip(&self.se).enumerate() {
            for (k, (v, e)) in row.iter().zip(se).enumerate() {
                let s = T::from_usize_lossy(j) * self.dt_r;
                let u = T::from_usize_lossy(k) * self.dt_r;
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_real(s),
                    fmt_real(u),
                    fmt_real(*v),
                    fmt_real(*e)
                )?;
            }
        }
        Ok(())
    }
}

/// Least-squares projection onto nondecreasing sequences (pool adjacent
/// violators, equal weights), in place.
pub fn isotonic_projection<T: Real>(v: &mut [T]) {
    let mut blocks: Vec<(T, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let (a, b) = (T::from_usize_lossy(n1), T::from_usize_lossy(n2));
            *blocks.last_mut().expect("two blocks") = ((m1 * a + m2 * b) / (a + b), n1 + n2);
        }
    }
    let mut k = 0;
    for (m, n) in blocks {
        for slot in &mut v[k..k + n] {
            *slot = m;
        }
        k += n;
    }
}

/// Estimates the restart kernel: for each `s_j` on the `dt_r` grid,
/// `config.n_particles` paths start from draws of `mu_{s_j}` at time `s_j` and
/// run with the drift reading `flow` at absolute time.
pub fn estimate_restart_kernel<T: Real>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    flow: &MeasureFlow<T>,
    config: &SimConfig<T>,
    dt_r: T,
) -> Result<RestartKernel<T>> {
    check_flow(flow, model)?;
    let n_steps = config.n_steps(model.horizon)?;
    let ratio = dt_r / config.dt;
    let stride = ratio.round().to_usize().unwrap_or(0);
    if stride == 0
        || (ratio - T::from_usize_lossy(stride)).abs() > T::lit(1e-6)
        || n_steps % stride != 0
    {
        return Err(Error::invalid(
            "dt_r must be a multiple of dt dividing the horizon",
        ));
    }
    let m_int = n_steps / stride;
    let (d, da) = (model.dim(), model.control_dim());
    let means = step_means(flow, config, 0, n_steps);
    let n = config.n_particles;

    let rows: Vec<Vec<T>> = (0..m_int)
        .into_par_iter()
        .map(|j| {
            let engine = Engine::new(
                model,
                Control::Feedback(policy),
                config,
                mix_seed(config.seed, j as u64 + 1),
            )?;
            let start = j * stride;
            let mu_s = flow.at(config.step_time(start));
            if mu_s.is_empty() {
                return Err(Error::SurvivorDepletion {
                    time: config.step_time(start).to_f64_lossy(),
                    survivors: 0,
                    required: 1,
                });
            }
            // exits[k] = paths whose exit falls in ((k-1) dt_r, k dt_r].
            let mut exits = vec![0usize; m_int - j + 1];
            let mut s = Scratch::new(d, da);
            let mut x = vec![T::zero(); d];
            for i in 0..n {
                x.copy_from_slice(mu_s.sample(engine.rng.uniform(
                    i as u64,
                    0,
                    crate::rng::Purpose::Initial,
                )));
                for m in start..n_steps {
                    let t = config.step_time(m);
                    policy.eval_into(&model.control_set, t, &x, &mut s.a);
                    engine.advance(i, m, t, &x, &means[m], &mut s);
                    if engine.detect_exit(i, m, t, &x, &s.x_new).is_some() {
                        exits[(m - start) / stride + 1] += 1;
                        break;
                    }
                    std::mem::swap(&mut x, &mut s.x_new);
                }
            }
            let mut acc = 0usize;
            Ok(exits
                .into_iter()
                .map(|c| {
                    acc += c;
                    T::from_usize_lossy(acc) / T::from_usize_lossy(n)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut values = rows;
    values.push(vec![T::zero()]);
    let nn = T::from_usize_lossy(n);
    let se = values
        .iter()
        .map(|r| {
            r.iter()
                .map(|&k| (k * (T::one() - k) / nn).sqrt())
                .collect()
        })
        .collect();
    let mut kernel = RestartKernel {
        dt_r,
        values,
        se,
        projected_entries: 0,
    };
    kernel.project();
    Ok(kernel)
}

fn check_kernel<T: Real>(cdf_tau1: &[T], kernel: &RestartKernel<T>) -> Result<()> {
    if cdf_tau1.len() != kernel.intervals() + 1 {
        return Err(Error::GridMismatch(format!(
            "first-exit CDF has {} nodes, kernel grid has {}",
            cdf_tau1.len(),
            kernel.intervals() + 1
        )));
    }
    let p_hat = kernel
        .contraction_diagnostic()
        .into_iter()
        .fold(T::zero(), T::max);
    if p_hat >= T::one() {
        return Err(Error::ContractionViolation {
            p_hat: p_hat.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Solves `F_m = cdf(t_m) + sum_{j<m} K[j][m-j] (F_{j+1} - F_j)` with `F_0 = 0`,
/// marching in `m`. The `j = m-1` term involves `F_m` and is solved exactly.
pub fn volterra_solve<T: Real>(cdf_tau1: &[T], kernel: &RestartKernel<T>) -> Result<Vec<T>> {
    check_kernel(cdf_tau1, kernel)?;
    let k = &kernel.values;
    let mut f = vec![T::zero(); cdf_tau1.len()];
    for m in 1..f.len() {
        let mut rhs = cdf_tau1[m];
        for j in 0..m - 1 {
            rhs += k[j][m - j] * (f[j + 1] - f[j]);
        }
        let diag = k[m - 1][1];
        f[m] = (rhs - diag * f[m - 1]) / (T::one() - diag);
    }
    Ok(f)
}

/// The same discrete equation solved by iterating its right-hand side from
/// `F = 0` until the update falls below `1e-15` or `max_iter` is reached.
pub fn volterra_solve_iterative<T: Real>(
    cdf_tau1: &[T],
    kernel: &RestartKernel<T>,
    max_iter: usize,
) -> Result<Vec<T>> {
    check_kernel(cdf_tau1, kernel)?;
    let k = &kernel.values;
    let mut f = vec![T::zero(); cdf_tau1.len()];
    for _ in 0..max_iter {
        let mut next = vec![T::zero(); f.len()];
        for m in 1..f.len() {
            let mut v = cdf_tau1[m];
            for j in 0..m {
                v += k[j][m - j] * (f[j + 1] - f[j]);
            }
            next[m] = v;
        }
        let change = next
            .iter()
            .zip(&f)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
        f = next;
        if change <= T::lit(1e-15) {
            break;
        }
    }
    Ok(f)
}

/// Pointwise `F + log S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSurvivalReport {
    pub residual: Vec<f64>,
    pub max_abs: f64,
}

pub fn log_survival_check<T: Real>(
    f: &[T],
    survival: &[T],
    grid: &[T],
) -> Result<LogSurvivalReport> {
    if f.len() != survival.len() || f.len() != grid.len() {
        return Err(Error::GridMismatch(
            "F and survival curves differ in length".into(),
        ));
    }
    let mut residual = Vec::with_capacity(f.len());
    for ((fv, s), t) in f.iter().zip(survival).zip(grid) {
        if !(*s > T::zero()) {
            return Err(Error::SurvivorDepletion {
                time: t.to_f64_lossy(),
                survivors: 0,
                required: 1,
            });
        }
        residual.push((*fv + s.ln()).to_f64_lossy());
    }
    let max_abs = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(LogSurvivalReport { residual, max_abs })
}

/// `f_volterra.csv`: `time,F,residual_vs_log_survival`.
pub fn write_volterra_csv<T: Real, W: Write>(
    mut w: W,
    grid: &[T],
    f: &[T],
    report: &LogSurvivalReport,
) -> std::io::Result<()> {
    writeln!(w, "time,F,residual_vs_log_survival")?;
    for ((t, fv), r) in grid.iter().zip(f).zip(&report.residual) {
        writeln!(w, "{},{},{}", fmt_real(*t), fmt_real(*fv), fmt_real(*r))?;
    }
    Ok(())
}

/// Survival curve sampled on the `dt_r` grid from a curve on a finer grid.
pub fn resample_curve<T: Real>(
    grid: &[T],
    values: &[T],
    dt_r: T,
    intervals: usize,
) -> Result<Vec<T>> {
    (0..=intervals)
        .map(|k| {
            let t = T::from_usize_lossy(k) * dt_r;
            let idx = grid.partition_point(|&g| g <= t + T::lit(1e-9) * dt_r);
            if idx == 0 || (grid[idx - 1] - t).abs() > T::lit(1e-9) {
                return Err(Error::GridMismatch(format!(
                    "time {} is not on the curve grid",
                    t.to_f64_lossy()
                )));
            }
            Ok(values[idx - 1])
        })
        .collect()
}
