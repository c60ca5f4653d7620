//! Euler-Maruyama simulation of the controlled diffusion against a frozen
//! measure flow, with first-exit detection (node check plus optional
//! Brownian-bridge kill), the outside-occupation clock and recorded controls.
//!
//! Paths are not absorbed at the exit time: they run on to the horizon so that
//! the clock and the open-loop control data exist after exit. Killed statistics
//! only read times before the exit.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BridgeCorrection;
use crate::io::fmt_real;
use crate::linalg::Matrix;
use crate::measures::{conditional_from_flat, EmpiricalMeasure, MeasureFlow};
use crate::model::{Control, ModelSpec};
use crate::rng::{CounterRng, Purpose};
use crate::scalar::Real;

const BRIDGE_MIN_PROB: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Simulation settings shared by every particle method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SimConfig<T> {
    pub n_particles: usize,
    pub dt: T,
    /// Output grid step, in Euler steps.
    pub record_every: usize,
    #[serde(default = "yes")]
    pub bridge_correction: bool,
    pub seed: u64,
    #[serde(default = "one")]
    pub min_survivors: usize,
    /// Keep the outside clock and the control values at grid nodes.
    #[serde(default = "yes")]
    pub record_details: bool,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl<T: Real> SimConfig<T> {
    pub fn new(n_particles: usize, dt: T, record_every: usize, seed: u64) -> Self {
        Self {
            n_particles,
            dt,
            record_every,
            bridge_correction: true,
            seed,
            min_survivors: 1,
            record_details: true,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        if self.min_survivors == 0 || self.n_particles < self.min_survivors {
            return Err(Error::invalid("need n_particles >= min_survivors >= 1"));
        }
        Ok(())
    }

    /// Number of Euler steps covering `[0, horizon]`.
    pub fn n_steps(&self, horizon: T) -> Result<usize> {
        let ratio = horizon / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > T::lit(1e-6) || n < T::one() {
            return Err(Error::invalid("horizon must be a positive multiple of dt"));
        }
        let n = n.to_usize().expect("step count");
        if !n.is_multiple_of(self.record_every) {
            return Err(Error::invalid(
                "horizon must be a multiple of the output grid step",
            ));
        }
        Ok(n)
    }

    /// Time of Euler step `m`.
    #[inline]
    pub fn step_time(&self, m: usize) -> T {
        T::from_usize_lossy(m) * self.dt
    }

    /// Output grid for `[0, horizon]`.
    pub fn grid(&self, horizon: T) -> Result<Vec<T>> {
        let n = self.n_steps(horizon)?;
        Ok((0..=n / self.record_every)
            .map(|k| self.step_time(k * self.record_every))
            .collect())
    }
}

/// Law of the initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum InitialLaw<T> {
    /// Particle `i` starts at `points[i mod len]`.
    Points { points: Vec<Vec<T>> },
    /// Independent draws from the uniform measure on `points`.
    Sample { points: Vec<Vec<T>> },
    /// Independent uniform draws on the box `[lo, hi]`.
    Uniform { lo: Vec<T>, hi: Vec<T> },
}

impl<T: Real> InitialLaw<T> {
    pub fn dirac(x: Vec<T>) -> Self {
        InitialLaw::Points { points: vec![x] }
    }

    pub fn from_measure(m: &EmpiricalMeasure<T>) -> Self {
        InitialLaw::Sample {
            points: m.iter().map(<[T]>::to_vec).collect(),
        }
    }

    pub fn validate(&self, model: &ModelSpec<T>) -> Result<()> {
        let d = model.dim();
        let pts = match self {
            InitialLaw::Points { points } | InitialLaw::Sample { points } => points.clone(),
            InitialLaw::Uniform { lo, hi } => {
                if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::invalid(
                        "uniform initial law needs lo <= hi of the model dimension",
                    ));
                }
                vec![lo.clone(), hi.clone()]
            }
        };
        if pts.is_empty() {
            return Err(Error::invalid("initial law has no points"));
        }
        for p in &pts {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if !model.domain.contains_unchecked(p) {
                return Err(Error::invalid(
                    "initial law must be supported inside the domain",
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn draw(&self, rng: &CounterRng, i: usize, out: &mut [T]) {
        match self {
            InitialLaw::Points { points } => out.copy_from_slice(&points[i % points.len()]),
            InitialLaw::Sample { points } => {
                let u = rng.uniform(i as u64, 0, Purpose::Initial);
                let k = ((u * points.len() as f64) as usize).min(points.len() - 1);
                out.copy_from_slice(&points[k]);
            }
            InitialLaw::Uniform { lo, hi } => {
                let mut s = rng.stream(i as u64, 0, Purpose::Initial);
                for ((o, &l), &h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = l + T::lit(s.unit()) * (h - l);
                }
            }
        }
    }
}

/// Per-step machinery shared by the killed, restart and Fleming-Viot simulators.
pub(crate) struct Engine<'a, T: Real> {
    pub model: &'a ModelSpec<T>,
    pub control: Control<'a, T>,
    pub rng: CounterRng,
    pub dt: T,
    sqrt_dt: T,
    sigma: &'a Matrix<T>,
    bridge: Option<BridgeCorrection<T>>,
    peek_step: Option<usize>,
}

/// Mutable per-particle scratch space.
pub(crate) struct Scratch<T> {
    pub a: Vec<T>,
    b: Vec<T>,
    z: Vec<T>,
    sz: Vec<T>,
    pub x_new: Vec<T>,
}

impl<T: Real> Scratch<T> {
    pub fn new(d: usize, da: usize) -> Self {
        Self {
            a: vec![T::zero(); da],
            b: vec![T::zero(); d],
            z: vec![T::zero(); d],
            sz: vec![T::zero(); d],
            x_new: vec![T::zero(); d],
        }
    }
}

impl<'a, T: Real> Engine<'a, T> {
    pub fn new(
        model: &'a ModelSpec<T>,
        control: Control<'a, T>,
        config: &SimConfig<T>,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        control.validate(model)?;
        let bridge = if config.bridge_correction {
            Some(BridgeCorrection::new(&model.domain, &model.sigma)?)
        } else {
            None
        };
        let peek_step = match control {
            Control::OpenLoop(c) => c.peek_time().map(|p| {
                (p / config.dt + T::lit(1e-9))
                    .floor()
                    .to_usize()
                    .unwrap_or(0)
            }),
            Control::Feedback(_) => None,
        };
        Ok(Self {
            model,
            control,
            rng: CounterRng::new(seed),
            dt: config.dt,
            sqrt_dt: config.dt.sqrt(),
            sigma: &model.sigma,
            bridge,
            peek_step,
        })
    }

    /// Control value at step time `t`.
    #[inline]
    pub fn control_into(&self, t: T, x: &[T], xi: &[T], w1_peek: T, out: &mut [T]) {
        match self.control {
            Control::Feedback(p) => p.eval_into(&self.model.control_set, t, x, out),
            Control::OpenLoop(c) => c.eval_into(&self.model.control_set, t, xi, w1_peek, out),
        }
    }

    /// One Euler step from `x` at step `m` into `s.x_new`, using control `s.a`.
    /// Returns the Brownian increment of the first coordinate.
    #[inline]
    pub fn advance(
        &self,
        particle: usize,
        m: usize,
        t: T,
        x: &[T],
        mean: &[T],
        s: &mut Scratch<T>,
    ) -> T {
        self.model.drift_into(t, x, mean, &s.a, &mut s.b);
        let mut stream = self.rng.stream(particle as u64, m as u64, Purpose::Noise);
        for zk in s.z.iter_mut() {
            let v: f64 = StandardNormal.sample(&mut stream);
            *zk = T::lit(v);
        }
        self.sigma.mul_vec_into(&s.z, &mut s.sz);
        for k in 0..x.len() {
            s.x_new[k] = x[k] + s.b[k] * self.dt + s.sz[k] * self.sqrt_dt;
        }
        s.z[0] * self.sqrt_dt
    }

    /// Exit time inside step `m` (from `x` at `t` to `x_new`), if any.
    #[inline]
    pub fn detect_exit(&self, particle: usize, m: usize, t: T, x: &[T], x_new: &[T]) -> Option<T> {
        let domain = &self.model.domain;
        if !domain.contains_unchecked(x_new) {
            return Some(t + self.dt);
        }
        if let Some(bridge) = &self.bridge {
            let p = bridge.exit_probability(x, x_new, self.dt);
            // Below 2^-53 no uniform on the 53-bit lattice other than 0 could
            // fall under p, so the draw is skipped.
            if p >= T::lit(BRIDGE_MIN_PROB) {
                let u = self.rng.uniform(particle as u64, m as u64, Purpose::Bridge);
                if T::lit(u) < p {
                    return Some(t + self.dt / T::lit(2.0));
                }
            }
        }
        None
    }

    #[inline]
    pub fn peek_active(&self, m_next: usize) -> bool {
        self.peek_step.is_some_and(|p| m_next <= p)
    }
}

/// Simulated particles: exit times, grid snapshots, outside clock and controls.
/// Arrays are particle-major.
#[derive(Debug, Clone)]
pub struct KilledEnsemble<T> {
    dim: usize,
    control_dim: usize,
    grid: Vec<T>,
    dt: T,
    initial: Vec<T>,
    exit_time: Vec<Option<T>>,
    positions: Vec<T>,
    clock: Vec<T>,
    controls: Vec<T>,
}

struct ParticleRecord<T> {
    exit: Option<T>,
    positions: Vec<T>,
    clock: Vec<T>,
    controls: Vec<T>,
}

/// Simulates the SDE with drift reading `flow` (right-continuous in time) and
/// records every particle until the model horizon.
pub fn simulate_killed<T: Real>(
    model: &ModelSpec<T>,
    control: Control<'_, T>,
    flow: &MeasureFlow<T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
) -> Result<KilledEnsemble<T>> {
    let ens = simulate_paths(model, control, flow, config, initial)?;
    ens.check_survivors(config.min_survivors)?;
    Ok(ens)
}

/// Like [`simulate_killed`] but without the survivor check.
pub(crate) fn simulate_paths<T: Real>(
    model: &ModelSpec<T>,
    control: Control<'_, T>,
    flow: &MeasureFlow<T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
) -> Result<KilledEnsemble<T>> {
    let engine = Engine::new(model, control, config, config.seed)?;
    initial.validate(model)?;
    let n_steps = config.n_steps(model.horizon)?;
    let grid = config.grid(model.horizon)?;
    check_flow(flow, model)?;
    let (d, da) = (model.dim(), model.control_dim());
    let step_means = step_means(flow, config, 0, n_steps);
    let n_nodes = grid.len();
    let record = config.record_details;

    let records: Vec<ParticleRecord<T>> = (0..config.n_particles)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![T::zero(); d];
            initial.draw(&engine.rng, i, &mut x);
            let xi = x.clone();
            let mut s = Scratch::new(d, da);
            let mut rec = ParticleRecord {
                exit: None,
                positions: Vec::with_capacity(n_nodes * d),
                clock: Vec::with_capacity(if record { n_nodes } else { 0 }),
                controls: Vec::with_capacity(if record { n_nodes * da } else { 0 }),
            };
            let mut clock = T::zero();
            let (mut w1, mut w1_peek) = (T::zero(), T::zero());
            for m in 0..=n_steps {
                let t = config.step_time(m);
                engine.control_into(t, &x, &xi, w1_peek, &mut s.a);
                if m % config.record_every == 0 {
                    rec.positions.extend_from_slice(&x);
                    if record {
                        rec.clock.push(clock);
                        rec.controls.extend_from_slice(&s.a);
                    }
                }
                if m == n_steps {
                    break;
                }
                let dw1 = engine.advance(i, m, t, &x, &step_means[m], &mut s);
                w1 += dw1;
                if engine.peek_active(m + 1) {
                    w1_peek = w1;
                }
                if model.domain.outside_closure_unchecked(&x) {
                    clock += engine.dt;
                }
                if rec.exit.is_none() {
                    rec.exit = engine.detect_exit(i, m, t, &x, &s.x_new);
                }
                if s.x_new.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite state for particle {i} at t = {}",
                        t.to_f64_lossy()
                    )));
                }
                std::mem::swap(&mut x, &mut s.x_new);
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let n = config.n_particles;
    let mut ens = KilledEnsemble {
        dim: d,
        control_dim: da,
        grid,
        dt: config.dt,
        initial: Vec::with_capacity(n * d),
        exit_time: Vec::with_capacity(n),
        positions: Vec::with_capacity(n * n_nodes * d),
        clock: Vec::with_capacity(if record { n * n_nodes } else { 0 }),
        controls: Vec::with_capacity(if record { n * n_nodes * da } else { 0 }),
    };
    for r in records {
        ens.initial.extend_from_slice(&r.positions[..d]);
        ens.exit_time.push(r.exit);
        ens.positions.extend_from_slice(&r.positions);
        ens.clock.extend_from_slice(&r.clock);
        ens.controls.extend_from_slice(&r.controls);
    }
    Ok(ens)
}

pub(crate) fn check_flow<T: Real>(flow: &MeasureFlow<T>, model: &ModelSpec<T>) -> Result<()> {
    if flow.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: flow.dim(),
        });
    }
    if flow.horizon() < model.horizon * (T::one() - T::lit(1e-9)) {
        return Err(Error::GridMismatch(
            "flow does not cover the model horizon".into(),
        ));
    }
    Ok(())
}

/// Flow mean seen by the drift at each Euler step `first..=last`, indexed from 0.
pub(crate) fn step_means<T: Real>(
    flow: &MeasureFlow<T>,
    config: &SimConfig<T>,
    first: usize,
    last: usize,
) -> Vec<Vec<T>> {
    let node_means: Vec<Vec<T>> = flow.nodes().iter().map(EmpiricalMeasure::mean).collect();
    (first..=last)
        .map(|m| node_means[flow.node_index_at(config.step_time(m))].clone())
        .collect()
}

impl<T: Real> KilledEnsemble<T> {
    pub fn n_particles(&self) -> usize {
        self.exit_time.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn has_details(&self) -> bool {
        !self.clock.is_empty()
    }

    pub fn exit_time(&self, i: usize) -> Option<T> {
        self.exit_time[i]
    }

    pub fn initial(&self, i: usize) -> &[T] {
        &self.initial[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn position(&self, i: usize, node: usize) -> &[T] {
        let base = (i * self.grid.len() + node) * self.dim;
        &self.positions[base..base + self.dim]
    }

    /// Outside-occupation clock at a node, if recorded.
    pub fn clock(&self, i: usize, node: usize) -> Option<T> {
        self.clock.get(i * self.grid.len() + node).copied()
    }

    /// Control value used from a node on, if recorded.
    pub fn control(&self, i: usize, node: usize) -> Option<&[T]> {
        if self.controls.is_empty() {
            return None;
        }
        let base = (i * self.grid.len() + node) * self.control_dim;
        Some(&self.controls[base..base + self.control_dim])
    }

    /// `tau_i > t_node`
    #[inline]
    pub fn alive(&self, i: usize, node: usize) -> bool {
        self.exit_time[i].is_none_or(|tau| tau > self.grid[node])
    }

    pub fn survivors(&self, node: usize) -> usize {
        (0..self.n_particles())
            .filter(|&i| self.alive(i, node))
            .count()
    }

    fn check_survivors(&self, required: usize) -> Result<()> {
        for k in 0..self.grid.len() {
            let s = self.survivors(k);
            if s < required {
                return Err(Error::SurvivorDepletion {
                    time: self.grid[k].to_f64_lossy(),
                    survivors: s,
                    required,
                });
            }
        }
        Ok(())
    }

    /// `S_m = #{tau_i > t_m} / N` on the output grid.
    pub fn survival(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.n_particles());
        (0..self.grid.len())
            .map(|k| T::from_usize_lossy(self.survivors(k)) / n)
            .collect()
    }

    pub fn survival_curve(&self) -> Vec<(T, T)> {
        self.grid.iter().copied().zip(self.survival()).collect()
    }

    /// Binomial standard error of the survival estimate.
    pub fn survival_se(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.n_particles());
        self.survival()
            .into_iter()
            .map(|s| (s * (T::one() - s) / n).sqrt())
            .collect()
    }

    /// Conditional law of the survivors at each node.
    pub fn conditional_flow(&self) -> Result<MeasureFlow<T>> {
        let mut nodes = Vec::with_capacity(self.grid.len());
        for k in 0..self.grid.len() {
            let mut flat = Vec::new();
            for i in 0..self.n_particles() {
                if self.alive(i, k) {
                    flat.extend_from_slice(self.position(i, k));
                }
            }
            nodes.push(conditional_from_flat(
                self.dim,
                flat,
                self.grid[k].to_f64_lossy(),
            )?);
        }
        MeasureFlow::new(self.grid.clone(), nodes, self.survival())
    }

    /// Unconditioned empirical law of all particles at a node.
    pub fn marginal(&self, node: usize) -> EmpiricalMeasure<T> {
        let flat: Vec<T> = (0..self.n_particles())
            .flat_map(|i| self.position(i, node).to_vec())
            .collect();
        EmpiricalMeasure::new(self.dim, flat).expect("nonempty ensemble")
    }

    /// The same ensemble restricted to the first `nodes` grid nodes.
    pub fn truncated(&self, nodes: usize) -> Result<Self> {
        let k = self.grid.len();
        if nodes == 0 || nodes > k {
            return Err(Error::invalid(
                "truncation must keep between 1 and all nodes",
            ));
        }
        let n = self.n_particles();
        let pick = |v: &[T], width: usize| -> Vec<T> {
            if v.is_empty() {
                return Vec::new();
            }
            (0..n)
                .flat_map(|i| v[i * k * width..(i * k + nodes) * width].iter().copied())
                .collect()
        };
        Ok(Self {
            dim: self.dim,
            control_dim: self.control_dim,
            grid: self.grid[..nodes].to_vec(),
            dt: self.dt,
            initial: self.initial.clone(),
            exit_time: self.exit_time.clone(),
            positions: pick(&self.positions, self.dim),
            clock: pick(&self.clock, 1),
            controls: pick(&self.controls, self.control_dim),
        })
    }

    /// `survival.csv`: `time,survival,survival_se`.
    pub fn write_survival_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,survival,survival_se")?;
        for ((t, s), se) in self
            .grid
            .iter()
            .zip(self.survival())
            .zip(self.survival_se())
        {
            writeln!(w, "{},{},{}", fmt_real(*t), fmt_real(s), fmt_real(se))?;
        }
        Ok(())
    }

    /// Path dump: little-endian `f64`, particle-major, then node, then
    /// coordinate. The layout has no header; the shape is
    /// `n_particles x grid.len() x dim`.
    pub fn write_paths_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for &v in &self.positions {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }
}

/// Fraction of driftless paths started at `start` (in the closure of the
/// domain) that register an exit within `eps`.
pub fn boundary_exit_frequency<T: Real>(
    domain: &crate::geometry::Domain<T>,
    sigma: &Matrix<T>,
    start: &[T],
    eps: T,
    dt: T,
    bridge_correction: bool,
    n_paths: usize,
    seed: u64,
) -> Result<T> {
    domain.validate()?;
    let d = domain.dim();
    if start.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: start.len(),
        });
    }
    if domain.distance_unchecked(start) < -crate::scalar::boundary_tol::<T>() {
        return Err(Error::invalid(
            "start must lie in the closure of the domain",
        ));
    }
    let model = ModelSpec {
        domain: domain.clone(),
        sigma: sigma.clone(),
        drift: crate::model::DriftSpec {
            base: crate::model::BaseDrift::Zero,
            mf_gain: T::zero(),
            control_matrix: Matrix::from_row_major(d, 1, vec![T::zero(); d])?,
            clip_bound: T::one(),
        },
        control_set: crate::model::ControlBox::symmetric(1, T::zero()),
        horizon: eps,
        reward: Default::default(),
    };
    let mut config = SimConfig::new(n_paths.max(1), dt, 1, seed);
    config.bridge_correction = bridge_correction;
    let n_steps = config.n_steps(eps)?;
    let zero = crate::model::FeedbackPolicy::zero(1);
    let engine = Engine::new(&model, Control::Feedback(&zero), &config, seed)?;
    let mean = vec![T::zero(); d];
    let hits = (0..n_paths)
        .into_par_iter()
        .filter(|&i| {
            let mut s = Scratch::new(d, 1);
            let mut x = start.to_vec();
            for m in 0..n_steps {
                let t = config.step_time(m);
                engine.advance(i, m, t, &x, &mean, &mut s);
                if engine.detect_exit(i, m, t, &x, &s.x_new).is_some() {
                    return true;
                }
                std::mem::swap(&mut x, &mut s.x_new);
            }
            false
        })
        .count();
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(n_paths.max(1)))
}

/// Truncated eigenfunction series for the probability that Brownian motion
/// with volatility `sigma` started at `x0` stays in `(-half_width, half_width)`
/// up to time `t`.
pub fn analytic_interval_survival<T: Real>(
    x0: T,
    half_width: T,
    sigma: T,
    t: T,
    n_terms: usize,
) -> T {
    let pi = T::PI();
    let l = half_width;
    let mut total = T::zero();
    for n in 0..n_terms {
        let k = T::from_usize_lossy(2 * n + 1);
        let sign = if n % 2 == 0 { T::one() } else { -T::one() };
        total += T::lit(4.0) / pi * sign / k
            * (k * pi * x0 / (T::lit(2.0) * l)).cos()
            * (-(k * k) * pi * pi * sigma * sigma * t / (T::lit(8.0) * l * l)).exp();
    }
    total
}

/// Lower bound `p0^2 exp(-|sigma^{-1}|^2 C_b^2 d t)` on the survival probability
/// under any drift bounded componentwise by `c_b`, from the driftless survival
/// probability `p0` (Cauchy-Schwarz on the Girsanov density). `|.|` is the
/// Frobenius norm, which dominates the operator norm, so the bound stays valid.
pub fn girsanov_survival_floor<T: Real>(c_b: T, sigma: &Matrix<T>, t: T, p0: T) -> Result<T> {
    if !(p0 > T::zero() && p0 <= T::one()) || c_b < T::zero() {
        return Err(Error::invalid("need p0 in (0, 1] and C_b >= 0"));
    }
    let inv = sigma.inverse()?;
    let norm = inv.frobenius_norm();
    let d = T::from_usize_lossy(sigma.rows());
    Ok(p0 * p0 * (-(norm * norm) * c_b * c_b * d * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::model::{ControlBox, DriftSpec, FeedbackPolicy, RewardSpec};

    fn driftless(horizon: f64) -> ModelSpec<f64> {
        ModelSpec {
            domain: Domain::interval(-1.0, 1.0).unwrap(),
            sigma: Matrix::identity(1),
            drift: DriftSpec {
                base: crate::model::BaseDrift::Zero,
                mf_gain: 0.0,
                control_matrix: Matrix::identity(1),
                clip_bound: 10.0,
            },
            control_set: ControlBox::symmetric(1, 1.0),
            horizon,
            reward: RewardSpec::default(),
        }
    }

    fn dummy_flow(horizon: f64) -> MeasureFlow<f64> {
        let m = EmpiricalMeasure::dirac(vec![0.0]).unwrap();
        MeasureFlow::new(vec![0.0, horizon], vec![m.clone(), m], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn series_values() {
        let s: f64 = analytic_interval_survival(0.0, 1.0, 1.0, 1.0, 5);
        let first: f64 = 4.0 / std::f64::consts::PI * (-std::f64::consts::PI.powi(2) / 8.0).exp();
        assert!((s - 0.3707774297995).abs() < 1e-12, "{s}");
        assert!((s - first).abs() < 7e-6);
        assert!((s - 0.37081).abs() < 5e-5);
        let n1: f64 = analytic_interval_survival(0.0, 1.0, 1.0, 1.0, 2)
            - analytic_interval_survival(0.0, 1.0, 1.0, 1.0, 1);
        assert!((n1 + 6.4e-6).abs() < 0.1e-6, "{n1}");
        assert!((analytic_interval_survival(0.0, 1.0, 1.0, 0.01, 200) - 1.0f64).abs() < 1e-9);
        assert!(analytic_interval_survival(1.0f64 - 1e-9, 1.0, 1.0, 0.5, 50).abs() < 1e-6);
    }

    #[test]
    fn girsanov_floor_values() {
        let s = Matrix::identity(1);
        assert_eq!(girsanov_survival_floor(0.0, &s, 1.0, 0.5).unwrap(), 0.25);
        let v = girsanov_survival_floor(1.0, &s, 1.0, 0.37081).unwrap();
        assert!((v - 0.37081f64.powi(2) * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.0506).abs() < 1e-4);
        let singular = Matrix::from_row_major(1, 1, vec![0.0]).unwrap();
        assert_eq!(
            girsanov_survival_floor(1.0, &singular, 1.0, 0.5).unwrap_err(),
            Error::SingularSigma
        );
    }

    #[test]
    fn initial_node_and_invariants() {
        let model = driftless(0.5);
        let zero = FeedbackPolicy::zero(1);
        let cfg = SimConfig::new(2000, 1e-3, 50, 7);
        let law = InitialLaw::Uniform {
            lo: vec![-0.5],
            hi: vec![0.5],
        };
        let ens = simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.5),
            &cfg,
            &law,
        )
        .unwrap();
        let flow = ens.conditional_flow().unwrap();
        assert_eq!(flow.survival()[0], 1.0);
        assert!(flow.survival().windows(2).all(|w| w[1] <= w[0]));
        for i in 0..ens.n_particles() {
            assert_eq!(ens.position(i, 0), ens.initial(i));
            for k in 0..ens.grid().len() {
                let lam = ens.clock(i, k).unwrap();
                if ens.alive(i, k) {
                    assert_eq!(lam, 0.0);
                    assert!(model.domain.contains_unchecked(ens.position(i, k)));
                }
                if k > 0 {
                    assert!(lam >= ens.clock(i, k - 1).unwrap());
                }
            }
        }
        let t0: Vec<f64> = flow.nodes()[0].as_flat().to_vec();
        let init: Vec<f64> = (0..ens.n_particles()).map(|i| ens.initial(i)[0]).collect();
        assert_eq!(t0, init);
    }

    #[test]
    fn no_exit_before_tiny_horizon() {
        let model = driftless(0.002);
        let zero = FeedbackPolicy::zero(1);
        let cfg = SimConfig::new(500, 1e-3, 1, 3);
        let ens = simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.002),
            &cfg,
            &InitialLaw::dirac(vec![0.0]),
        )
        .unwrap();
        assert!(ens.survival().iter().all(|&s| s == 1.0));
        let flow = ens.conditional_flow().unwrap();
        for k in 0..ens.grid().len() {
            assert_eq!(flow.nodes()[k], ens.marginal(k));
        }
    }

    #[test]
    fn clipped_displacement_bound() {
        let mut model = driftless(0.2);
        model.drift.clip_bound = 0.5;
        model.drift.base = crate::model::BaseDrift::Constant { value: vec![30.0] };
        let zero = FeedbackPolicy::zero(1);
        let mut cfg = SimConfig::new(300, 1e-3, 1, 5);
        cfg.min_survivors = 1;
        let ens = simulate_paths(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.2),
            &cfg,
            &InitialLaw::dirac(vec![0.0]),
        )
        .unwrap();
        let engine = Engine::new(&model, Control::Feedback(&zero), &cfg, cfg.seed).unwrap();
        for i in 0..ens.n_particles() {
            for m in 0..ens.grid().len() - 1 {
                let z: f64 = StandardNormal.sample(&mut engine.rng.stream(
                    i as u64,
                    m as u64,
                    Purpose::Noise,
                ));
                let step = ens.position(i, m + 1)[0] - ens.position(i, m)[0];
                assert!(step.abs() <= 0.5 * 1e-3 + z.abs() * 1e-3f64.sqrt() + 1e-15);
            }
        }
    }

    #[test]
    fn survivor_depletion_is_reported() {
        let mut model = driftless(0.5);
        model.drift.base = crate::model::BaseDrift::Constant { value: vec![10.0] };
        let zero = FeedbackPolicy::zero(1);
        let mut cfg = SimConfig::new(200, 1e-3, 50, 1);
        cfg.min_survivors = 50;
        let err = simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.5),
            &cfg,
            &InitialLaw::dirac(vec![0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SurvivorDepletion { required: 50, .. }));
    }

    #[test]
    fn bad_inputs() {
        let model = driftless(0.5);
        let zero = FeedbackPolicy::zero(1);
        let cfg = SimConfig::new(10, 0.3, 1, 1);
        assert!(simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.5),
            &cfg,
            &InitialLaw::dirac(vec![0.0])
        )
        .is_err());
        let cfg = SimConfig::new(10, 1e-3, 1, 1);
        assert!(simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.5),
            &cfg,
            &InitialLaw::dirac(vec![1.5])
        )
        .is_err());
        assert!(simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.25),
            &cfg,
            &InitialLaw::dirac(vec![0.0])
        )
        .is_err());
    }

    #[test]
    fn boundary_start_exits_immediately() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let s = Matrix::identity(1);
        assert_eq!(
            boundary_exit_frequency(&dom, &s, &[1.0], 0.01, 1e-3, true, 300, 1).unwrap(),
            1.0
        );
        let f = boundary_exit_frequency(&dom, &s, &[-1.0], 0.01, 1e-5, false, 300, 1).unwrap();
        assert!(f >= 0.9, "{f}");
        assert!(boundary_exit_frequency(&dom, &s, &[1.5], 0.01, 1e-3, true, 10, 1).is_err());
    }

    #[test]
    fn truncation_keeps_prefix() {
        let model = driftless(0.2);
        let zero = FeedbackPolicy::zero(1);
        let cfg = SimConfig::new(300, 1e-3, 20, 8);
        let ens = simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(0.2),
            &cfg,
            &InitialLaw::dirac(vec![0.0]),
        )
        .unwrap();
        let tr = ens.truncated(6).unwrap();
        assert_eq!(tr.grid(), &ens.grid()[..6]);
        assert_eq!(tr.survival()[..], ens.survival()[..6]);
        for i in 0..ens.n_particles() {
            for k in 0..6 {
                assert_eq!(tr.position(i, k), ens.position(i, k));
                assert_eq!(tr.clock(i, k), ens.clock(i, k));
                assert_eq!(tr.control(i, k), ens.control(i, k));
            }
        }
        assert!(ens.truncated(0).is_err());
    }

    #[test]
    fn survival_matches_series_small() {
        let model = driftless(1.0);
        let zero = FeedbackPolicy::zero(1);
        let mut cfg = SimConfig::new(20_000, 1e-3, 250, 2024);
        cfg.record_details = false;
        let ens = simulate_killed(
            &model,
            Control::Feedback(&zero),
            &dummy_flow(1.0),
            &cfg,
            &InitialLaw::dirac(vec![0.0]),
        )
        .unwrap();
        for (k, (t, s)) in ens.survival_curve().into_iter().enumerate().skip(1) {
            let want = analytic_interval_survival(0.0, 1.0, 1.0, t, 50);
            let se = ens.survival_se()[k];
            assert!(
                (s - want).abs() <= 4.0 * se,
                "t={t}: {s} vs {want} (se {se})"
            );
        }
    }
}
