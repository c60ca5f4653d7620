//! Model coefficients: bounded drift with a mean-field term, constant
//! diffusion matrix, box control set, feedback and open-loop controls, and the
//! reward components.
//!
//! The drift depends on the measure only through its mean over the bounded
//! closure of the domain, which makes it Lipschitz in total variation with
//! constant `mf_gain * diam(D)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg::Matrix;
use crate::measures::EmpiricalMeasure;
use crate::scalar::Real;

const CONTROL_TOL: f64 = 1e-12;

/// Compact box `[lo, hi]` of admissible control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ControlBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> ControlBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn symmetric(dim: usize, half_width: T) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::invalid(
                "control box bounds must be nonempty and of equal length",
            ));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
        {
            return Err(Error::invalid("control box requires finite lo <= hi"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, a: &[T]) -> bool {
        let tol = T::lit(CONTROL_TOL);
        a.len() == self.dim()
            && a.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    #[inline]
    pub fn clamp_in_place(&self, a: &mut [T]) {
        for ((v, &l), &h) in a.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.max(l).min(h);
        }
    }

    /// Largest `|a|^2` over the box.
    pub fn max_sq_norm(&self) -> T {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let m = l.abs().max(h.abs());
                m * m
            })
            .sum()
    }
}

/// Control-free part of the drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum BaseDrift<T> {
    Zero,
    Constant {
        value: Vec<T>,
    },
    /// `-gain * (x - center)`
    Restoring {
        gain: T,
        center: Vec<T>,
    },
    /// `amplitude * sin(2 pi frequency t)`
    Oscillating {
        amplitude: Vec<T>,
        frequency: T,
    },
}

impl<T: Real> BaseDrift<T> {
    #[inline]
    fn add_into(&self, t: T, x: &[T], out: &mut [T]) {
        match self {
            BaseDrift::Zero => {}
            BaseDrift::Constant { value } => {
                for (o, &v) in out.iter_mut().zip(value) {
                    *o += v;
                }
            }
            BaseDrift::Restoring { gain, center } => {
                for ((o, &xi), &c) in out.iter_mut().zip(x).zip(center) {
                    *o -= *gain * (xi - c);
                }
            }
            BaseDrift::Oscillating {
                amplitude,
                frequency,
            } => {
                let s = (T::lit(2.0) * T::PI() * *frequency * t).sin();
                for (o, &a) in out.iter_mut().zip(amplitude) {
                    *o += a * s;
                }
            }
        }
    }

    /// Componentwise bound on the closure of `domain`.
    pub fn sup_norm(&self, domain: &Domain<T>) -> T {
        let max_abs = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        match self {
            BaseDrift::Zero => T::zero(),
            BaseDrift::Constant { value } => max_abs(value),
            BaseDrift::Restoring { gain, center } => {
                let (lo, hi) = domain.bounding_box();
                let reach = lo
                    .iter()
                    .zip(&hi)
                    .zip(center)
                    .map(|((&l, &h), &c)| (l - c).abs().max((h - c).abs()))
                    .fold(T::zero(), T::max);
                gain.abs() * reach
            }
            BaseDrift::Oscillating { amplitude, .. } => max_abs(amplitude),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            BaseDrift::Zero => None,
            BaseDrift::Constant { value } => Some(value.len()),
            BaseDrift::Restoring { center, .. } => Some(center.len()),
            BaseDrift::Oscillating { amplitude, .. } => Some(amplitude.len()),
        }
    }
}

/// `clip(base(t, x) + mf_gain * (mean(m) - x) + B a, clip_bound)`, clipped
/// componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DriftSpec<T> {
    #[serde(default = "zero_drift")]
    pub base: BaseDrift<T>,
    #[serde(default)]
    pub mf_gain: T,
    pub control_matrix: Matrix<T>,
    pub clip_bound: T,
}

fn zero_drift<T>() -> BaseDrift<T> {
    BaseDrift::Zero
}

/// State feature used by the running reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum StateFeature<T> {
    /// `phi = 1`
    #[default]
    One,
    /// `phi = <w, x>`
    Linear { w: Vec<T> },
    /// `phi = |x|^2`
    SquaredNorm,
}

/// Running reward `f = r_x phi(x) + r_m <mean(m), w> - r_a |a|^2`, terminal
/// reward `g = g_w <mean(mu_T), w_g> + g_var var(mu_T)` and reinsertion cost `c`.
/// Empty weight vectors are read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, bound = "T: Real")]
pub struct RewardSpec<T> {
    pub r_x: T,
    pub feature: StateFeature<T>,
    pub r_m: T,
    pub w: Vec<T>,
    pub r_a: T,
    pub g_w: T,
    pub w_g: Vec<T>,
    pub g_var: T,
    pub reinsertion_cost: T,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl<T: Real> RewardSpec<T> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.r_a < T::zero() {
            return Err(Error::Config(
                "reward.r_a must be >= 0 (running reward concave in a)".into(),
            ));
        }
        if self.reinsertion_cost < T::zero() {
            return Err(Error::Config("reward.reinsertion_cost must be >= 0".into()));
        }
        for (name, w) in [("reward.w", &self.w), ("reward.w_g", &self.w_g)] {
            if !w.is_empty() && w.len() != dim {
                return Err(Error::Config(format!("{name} must have length {dim}")));
            }
        }
        if let StateFeature::Linear { w } = &self.feature {
            if w.len() != dim {
                return Err(Error::Config(format!(
                    "reward.feature.w must have length {dim}"
                )));
            }
        }
        Ok(())
    }

    /// `f(t, x, m, a)` with the measure given by its mean.
    #[inline]
    pub fn running_with_mean(&self, _t: T, x: &[T], mean: &[T], a: &[T]) -> T {
        let phi = match &self.feature {
            StateFeature::One => T::one(),
            StateFeature::Linear { w } => dot(w, x),
            StateFeature::SquaredNorm => dot(x, x),
        };
        self.r_x * phi + self.r_m * dot(mean, &self.w) - self.r_a * dot(a, a)
    }

    pub fn running(&self, t: T, x: &[T], m: &EmpiricalMeasure<T>, a: &[T]) -> T {
        self.running_with_mean(t, x, &m.mean(), a)
    }

    pub fn terminal(&self, mu_t: &EmpiricalMeasure<T>) -> T {
        let mut g = T::zero();
        if self.g_w != T::zero() {
            g += self.g_w * dot(&mu_t.mean(), &self.w_g);
        }
        if self.g_var != T::zero() {
            g += self.g_var * mu_t.variance();
        }
        g
    }

    /// Bound on `|f|` over the closure of `domain` and the control box.
    pub fn running_bound(&self, domain: &Domain<T>, control: &ControlBox<T>) -> T {
        let r = domain.max_norm();
        let phi_max = match &self.feature {
            StateFeature::One => T::one(),
            StateFeature::Linear { w } => dot(w, w).sqrt() * r,
            StateFeature::SquaredNorm => r * r,
        };
        self.r_x.abs() * phi_max
            + self.r_m.abs() * dot(&self.w, &self.w).sqrt() * r
            + self.r_a * control.max_sq_norm()
    }

    /// Bound on `|g|` over measures on the closure of `domain`.
    pub fn terminal_bound(&self, domain: &Domain<T>) -> T {
        let r = domain.max_norm();
        self.g_w.abs() * dot(&self.w_g, &self.w_g).sqrt() * r + self.g_var.abs() * r * r
    }

    /// True when `f` does not depend on the state.
    pub fn state_free(&self) -> bool {
        self.r_x == T::zero() && self.r_m == T::zero()
    }
}

/// Coefficients and reward of the controlled problem on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ModelSpec<T> {
    pub domain: Domain<T>,
    pub sigma: Matrix<T>,
    pub drift: DriftSpec<T>,
    pub control_set: ControlBox<T>,
    pub horizon: T,
    #[serde(default)]
    pub reward: RewardSpec<T>,
}

impl<T: Real> ModelSpec<T> {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let d = self.dim();
        if self.sigma.rows() != d || self.sigma.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.sigma.rows(),
            });
        }
        self.sigma.inverse()?;
        self.control_set.validate()?;
        let b = &self.drift.control_matrix;
        if b.rows() != d || b.cols() != self.control_dim() {
            return Err(Error::invalid(format!(
                "control matrix must be {d}x{}",
                self.control_dim()
            )));
        }
        if let Some(k) = self.drift.base.dim() {
            if k != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: k,
                });
            }
        }
        if !(self.drift.clip_bound > T::zero()) || !self.drift.clip_bound.is_finite() {
            return Err(Error::invalid(
                "drift clip bound must be positive and finite",
            ));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        self.reward.validate(d)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.control_set.dim()
    }

    /// Drift with the measure summarized by its mean. Vanishes for `t > horizon`.
    #[inline]
    pub fn drift_into(&self, t: T, x: &[T], mean: &[T], a: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        if t > self.horizon {
            return;
        }
        let spec = &self.drift;
        spec.base.add_into(t, x, out);
        if spec.mf_gain != T::zero() {
            for ((o, &xi), &m) in out.iter_mut().zip(x).zip(mean) {
                *o += spec.mf_gain * (m - xi);
            }
        }
        let b = &spec.control_matrix;
        for (r, o) in out.iter_mut().enumerate() {
            for (c, &ac) in a.iter().enumerate() {
                *o += b.get(r, c) * ac;
            }
        }
        let cb = spec.clip_bound;
        for o in out.iter_mut() {
            *o = o.max(-cb).min(cb);
        }
    }

    /// `b(t, x, m, a)`. The control must lie in the control set.
    pub fn eval_drift(&self, t: T, x: &[T], m: &EmpiricalMeasure<T>, a: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() || m.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() {
                    x.len()
                } else {
                    m.dim()
                },
            });
        }
        if !self.control_set.contains(a) {
            return Err(Error::invalid("control value outside the control set"));
        }
        let mut out = vec![T::zero(); self.dim()];
        self.drift_into(t, x, &m.mean(), a, &mut out);
        Ok(out)
    }

    /// Lipschitz constant of the drift in the measure, in total variation.
    pub fn measure_lipschitz_constant(&self) -> T {
        self.drift.mf_gain.abs() * self.domain.diameter()
    }

    /// True when clipping never binds on the control set, so the drift is affine
    /// in the control (required together with `r_a >= 0` for mimicking).
    pub fn drift_affine_in_control(&self) -> bool {
        let b = &self.drift.control_matrix;
        let control_reach = (0..b.rows())
            .map(|r| {
                (0..b.cols())
                    .map(|c| {
                        let v = b.get(r, c);
                        (v * self.control_set.lo[c])
                            .abs()
                            .max((v * self.control_set.hi[c]).abs())
                    })
                    .sum::<T>()
            })
            .fold(T::zero(), T::max);
        let bound = self.drift.base.sup_norm(&self.domain)
            + self.measure_lipschitz_constant()
            + control_reach;
        bound <= self.drift.clip_bound
    }

    /// Checks the convexity requirements used by the mimicking construction.
    pub fn check_convexity(&self) -> Result<()> {
        if self.reward.r_a < T::zero() {
            return Err(Error::Config(
                "running reward must be concave in the control (r_a >= 0)".into(),
            ));
        }
        if !self.drift_affine_in_control() {
            return Err(Error::Config(
                "drift clipping binds on the control set, so the drift is not affine in the control".into(),
            ));
        }
        Ok(())
    }

    /// Copy with the mean-field gain replaced.
    pub fn with_mf_gain(&self, gain: T) -> Self {
        let mut m = self.clone();
        m.drift.mf_gain = gain;
        m
    }
}

/// Uniform grid of cells over `[t_lo, t_hi] x box` holding one control value per
/// cell. Values are stored time-major, then row-major over space coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GridPolicy<T> {
    pub t_lo: T,
    pub t_hi: T,
    pub time_bins: usize,
    pub x_lo: Vec<T>,
    pub x_hi: Vec<T>,
    pub space_bins: Vec<usize>,
    pub control_dim: usize,
    pub values: Vec<T>,
}

impl<T: Real> GridPolicy<T> {
    pub fn n_space_cells(&self) -> usize {
        self.space_bins.iter().product()
    }

    pub fn n_cells(&self) -> usize {
        self.time_bins * self.n_space_cells()
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_bins == 0 || self.space_bins.is_empty() || self.space_bins.contains(&0) {
            return Err(Error::invalid(
                "grid policy needs at least one bin per axis",
            ));
        }
        if !(self.t_lo < self.t_hi)
            || self.x_lo.len() != self.space_bins.len()
            || self.x_hi.len() != self.space_bins.len()
            || self.x_lo.iter().zip(&self.x_hi).any(|(l, h)| !(l < h))
        {
            return Err(Error::invalid("grid policy ranges are inconsistent"));
        }
        if self.values.len() != self.n_cells() * self.control_dim {
            return Err(Error::invalid(format!(
                "grid policy expects {} values, got {}",
                self.n_cells() * self.control_dim,
                self.values.len()
            )));
        }
        Ok(())
    }

    #[inline]
    fn bin(v: T, lo: T, hi: T, n: usize) -> usize {
        let f = ((v - lo) / (hi - lo) * T::from_usize_lossy(n)).floor();
        if !(f > T::zero()) {
            0
        } else {
            f.to_usize().unwrap_or(usize::MAX).min(n - 1)
        }
    }

    pub fn time_bin(&self, t: T) -> usize {
        Self::bin(t, self.t_lo, self.t_hi, self.time_bins)
    }

    /// Row-major space cell; out-of-range points use the nearest cell.
    pub fn space_cell(&self, x: &[T]) -> usize {
        let mut idx = 0;
        for k in 0..self.space_bins.len() {
            idx = idx * self.space_bins[k]
                + Self::bin(x[k], self.x_lo[k], self.x_hi[k], self.space_bins[k]);
        }
        idx
    }

    pub fn cell_index(&self, t: T, x: &[T]) -> usize {
        self.time_bin(t) * self.n_space_cells() + self.space_cell(x)
    }

    pub fn cell_value(&self, cell: usize) -> &[T] {
        &self.values[cell * self.control_dim..(cell + 1) * self.control_dim]
    }
}

/// Feedback function `a(t, x)`; outputs are clamped to the control set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum FeedbackPolicy<T> {
    Constant {
        value: Vec<T>,
    },
    /// `theta0 + theta1 x`
    Linear {
        theta0: Vec<T>,
        theta1: Matrix<T>,
    },
    Grid(GridPolicy<T>),
}

impl<T: Real> FeedbackPolicy<T> {
    pub fn zero(control_dim: usize) -> Self {
        FeedbackPolicy::Constant {
            value: vec![T::zero(); control_dim],
        }
    }

    pub fn validate(&self, dim: usize, control_dim: usize) -> Result<()> {
        match self {
            FeedbackPolicy::Constant { value } => {
                if value.len() != control_dim {
                    return Err(Error::DimensionMismatch {
                        expected: control_dim,
                        got: value.len(),
                    });
                }
            }
            FeedbackPolicy::Linear { theta0, theta1 } => {
                if theta0.len() != control_dim
                    || theta1.rows() != control_dim
                    || theta1.cols() != dim
                {
                    return Err(Error::invalid(format!(
                        "linear policy needs theta0 of length {control_dim} and theta1 of shape {control_dim}x{dim}"
                    )));
                }
            }
            FeedbackPolicy::Grid(g) => {
                g.validate()?;
                if g.control_dim != control_dim || g.space_bins.len() != dim {
                    return Err(Error::invalid(
                        "grid policy dimensions do not match the model",
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval_into(&self, set: &ControlBox<T>, t: T, x: &[T], out: &mut [T]) {
        match self {
            FeedbackPolicy::Constant { value } => out.copy_from_slice(value),
            FeedbackPolicy::Linear { theta0, theta1 } => {
                theta1.mul_vec_into(x, out);
                for (o, &c) in out.iter_mut().zip(theta0) {
                    *o += c;
                }
            }
            FeedbackPolicy::Grid(g) => out.copy_from_slice(g.cell_value(g.cell_index(t, x))),
        }
        set.clamp_in_place(out);
    }

    /// `a(t, x)`, always inside `set`.
    pub fn eval(&self, set: &ControlBox<T>, t: T, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); set.dim()];
        self.eval_into(set, t, x, &mut out);
        out
    }
}

/// Progressively measurable controls that are not of feedback form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum OpenLoopControl<T> {
    /// `a0 * sign(<direction, xi>)`: randomized by the initial condition.
    RandomizedSign { a0: Vec<T>, direction: Vec<T> },
    /// `before` on `[0, t_switch)`, `after` from then on.
    Piecewise {
        t_switch: T,
        before: Vec<T>,
        after: Vec<T>,
    },
    /// `a0 * sign(W^1_{t ^ peek_time})`: reads the first driving Brownian motion.
    NoisePeek { a0: Vec<T>, peek_time: T },
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> OpenLoopControl<T> {
    pub fn validate(&self, dim: usize, control_dim: usize) -> Result<()> {
        let ok = match self {
            OpenLoopControl::RandomizedSign { a0, direction } => {
                a0.len() == control_dim && direction.len() == dim
            }
            OpenLoopControl::Piecewise { before, after, .. } => {
                before.len() == control_dim && after.len() == control_dim
            }
            OpenLoopControl::NoisePeek { a0, peek_time } => {
                a0.len() == control_dim && *peek_time >= T::zero()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "open-loop control dimensions do not match the model",
            ))
        }
    }

    /// `alpha_t` given the initial condition and `W^1_{t ^ peek_time}`.
    #[inline]
    pub fn eval_into(&self, set: &ControlBox<T>, t: T, xi: &[T], w1_peek: T, out: &mut [T]) {
        match self {
            OpenLoopControl::RandomizedSign { a0, direction } => {
                let s = sign(dot(direction, xi));
                for (o, &a) in out.iter_mut().zip(a0) {
                    *o = a * s;
                }
            }
            OpenLoopControl::Piecewise {
                t_switch,
                before,
                after,
            } => out.copy_from_slice(if t < *t_switch { before } else { after }),
            OpenLoopControl::NoisePeek { a0, .. } => {
                let s = sign(w1_peek);
                for (o, &a) in out.iter_mut().zip(a0) {
                    *o = a * s;
                }
            }
        }
        set.clamp_in_place(out);
    }

    pub fn peek_time(&self) -> Option<T> {
        match self {
            OpenLoopControl::NoisePeek { peek_time, .. } => Some(*peek_time),
            _ => None,
        }
    }
}

/// Either kind of control, as consumed by the simulators.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a, T> {
    Feedback(&'a FeedbackPolicy<T>),
    OpenLoop(&'a OpenLoopControl<T>),
}

impl<'a, T: Real> Control<'a, T> {
    pub fn validate(&self, model: &ModelSpec<T>) -> Result<()> {
        match self {
            Control::Feedback(p) => p.validate(model.dim(), model.control_dim()),
            Control::OpenLoop(c) => c.validate(model.dim(), model.control_dim()),
        }
    }
}
