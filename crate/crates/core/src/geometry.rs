//! Bounded open convex domains: membership, boundary distance and the
//! probability that a Brownian bridge between two interior points leaves the
//! domain within one time step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{boundary_tol, Real};

/// Open domain `D`. All variants are convex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", bound = "T: Real")]
pub enum Domain<T> {
    Interval { lo: T, hi: T },
    Box { lo: Vec<T>, hi: Vec<T> },
    Ball { center: Vec<T>, radius: T },
}

impl<T: Real> Domain<T> {
    pub fn interval(lo: T, hi: T) -> Result<Self> {
        let d = Domain::Interval { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn cube(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        let d = Domain::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: Vec<T>, radius: T) -> Result<Self> {
        let d = Domain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Interval { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::invalid("interval requires finite lo < hi"));
                }
            }
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::invalid(
                        "box bounds must be nonempty and of equal length",
                    ));
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
                {
                    return Err(Error::invalid("box requires finite lo[i] < hi[i]"));
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() || !(*radius > T::zero()) || !radius.is_finite() {
                    return Err(Error::invalid("ball requires a center and radius > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// True iff `x` is strictly inside; points within the boundary tolerance
    /// of the boundary are not.
    pub fn contains_open(&self, x: &[T]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[T]) -> bool {
        self.distance_unchecked(x) > boundary_tol()
    }

    /// True iff `x` is outside the closure.
    #[inline]
    pub(crate) fn outside_closure_unchecked(&self, x: &[T]) -> bool {
        self.distance_unchecked(x) < -boundary_tol::<T>()
    }

    /// Positive inside, zero on the boundary, negative outside; the magnitude is
    /// the Euclidean distance to the boundary.
    pub fn signed_boundary_distance(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(self.distance_unchecked(x))
    }

    #[inline]
    pub(crate) fn distance_unchecked(&self, x: &[T]) -> T {
        match self {
            Domain::Interval { lo, hi } => (x[0] - *lo).min(*hi - x[0]),
            Domain::Box { lo, hi } => {
                let mut inside = T::infinity();
                let mut outside_sq = T::zero();
                for i in 0..lo.len() {
                    let below = lo[i] - x[i];
                    let above = x[i] - hi[i];
                    inside = inside.min(-below).min(-above);
                    let gap = below.max(above).max(T::zero());
                    outside_sq += gap * gap;
                }
                if outside_sq > T::zero() {
                    -outside_sq.sqrt()
                } else {
                    inside
                }
            }
            Domain::Ball { center, radius } => {
                let r2: T = x.iter().zip(center).map(|(&a, &c)| (a - c) * (a - c)).sum();
                *radius - r2.sqrt()
            }
        }
    }

    /// Axis-aligned bounding box of the closure.
    pub fn bounding_box(&self) -> (Vec<T>, Vec<T>) {
        match self {
            Domain::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|&c| c - *radius).collect(),
                center.iter().map(|&c| c + *radius).collect(),
            ),
        }
    }

    pub fn diameter(&self) -> T {
        match self {
            Domain::Interval { lo, hi } => *hi - *lo,
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| (h - l) * (h - l))
                .sum::<T>()
                .sqrt(),
            Domain::Ball { radius, .. } => *radius + *radius,
        }
    }

    /// Largest Euclidean norm of a point of the closure.
    pub fn max_norm(&self) -> T {
        match self {
            Domain::Ball { center, radius } => {
                center.iter().map(|&c| c * c).sum::<T>().sqrt() + *radius
            }
            _ => {
                let (lo, hi) = self.bounding_box();
                lo.iter()
                    .zip(&hi)
                    .map(|(&l, &h)| {
                        let m = l.abs().max(h.abs());
                        m * m
                    })
                    .sum::<T>()
                    .sqrt()
            }
        }
    }

    /// A point well inside the domain.
    pub fn center(&self) -> Vec<T> {
        match self {
            Domain::Ball { center, .. } => center.clone(),
            _ => {
                let (lo, hi) = self.bounding_box();
                lo.iter()
                    .zip(&hi)
                    .map(|(&l, &h)| (l + h) / T::lit(2.0))
                    .collect()
            }
        }
    }
}

/// Brownian-bridge crossing probabilities for a fixed domain and diffusion
/// matrix. Construction validates `sigma` once so the per-step query is cheap.
#[derive(Debug, Clone)]
pub struct BridgeCorrection<T> {
    domain: Domain<T>,
    /// `sigma sigma^T`
    gram: Matrix<T>,
}

impl<T: Real> BridgeCorrection<T> {
    pub fn new(domain: &Domain<T>, sigma: &Matrix<T>) -> Result<Self> {
        let d = domain.dim();
        if sigma.rows() != d || sigma.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.rows(),
            });
        }
        sigma.inverse()?;
        Ok(Self {
            domain: domain.clone(),
            gram: sigma.gram(),
        })
    }

    /// Probability that the bridge from `from` to `to` over `dt` leaves the
    /// domain. Both points are expected in the closure; endpoints on (or past)
    /// the boundary give 1.
    #[inline]
    pub fn exit_probability(&self, from: &[T], to: &[T], dt: T) -> T {
        let tol = boundary_tol::<T>();
        let two = T::lit(2.0);
        match &self.domain {
            Domain::Interval { lo, hi } => {
                let var = self.gram.get(0, 0) * dt;
                let (a_lo, b_lo) = (from[0] - *lo, to[0] - *lo);
                let (a_hi, b_hi) = (*hi - from[0], *hi - to[0]);
                if a_lo.min(b_lo).min(a_hi).min(b_hi) <= tol {
                    return T::one();
                }
                let p_lo = (-two * a_lo * b_lo / var).exp();
                let p_hi = (-two * a_hi * b_hi / var).exp();
                clamp01(T::one() - (T::one() - p_lo) * (T::one() - p_hi))
            }
            Domain::Box { lo, hi } => {
                let mut survive = T::one();
                for i in 0..lo.len() {
                    let var = self.gram.get(i, i) * dt;
                    let (a_lo, b_lo) = (from[i] - lo[i], to[i] - lo[i]);
                    let (a_hi, b_hi) = (hi[i] - from[i], hi[i] - to[i]);
                    if a_lo.min(b_lo).min(a_hi).min(b_hi) <= tol {
                        return T::one();
                    }
                    survive *= T::one() - (-two * a_lo * b_lo / var).exp();
                    survive *= T::one() - (-two * a_hi * b_hi / var).exp();
                }
                clamp01(T::one() - survive)
            }
            Domain::Ball { center, radius } => {
                // Tangent half-space at the boundary point nearest the midpoint.
                let d = center.len();
                let mut normal: Vec<T> = (0..d)
                    .map(|i| (from[i] + to[i]) / two - center[i])
                    .collect();
                let mut len = normal.iter().map(|&v| v * v).sum::<T>().sqrt();
                if len <= tol {
                    normal = (0..d).map(|i| from[i] - center[i]).collect();
                    len = normal.iter().map(|&v| v * v).sum::<T>().sqrt();
                }
                if len <= tol {
                    normal = vec![T::zero(); d];
                    normal[0] = T::one();
                    len = T::one();
                }
                for v in normal.iter_mut() {
                    *v /= len;
                }
                let proj =
                    |p: &[T]| -> T { (0..d).map(|i| (p[i] - center[i]) * normal[i]).sum::<T>() };
                let a = *radius - proj(from);
                let b = *radius - proj(to);
                if self.domain.distance_unchecked(from) <= tol
                    || self.domain.distance_unchecked(to) <= tol
                    || a.min(b) <= tol
                {
                    return T::one();
                }
                let var = self.gram.quad_form(&normal) * dt;
                clamp01((-two * a * b / var).exp())
            }
        }
    }
}

#[inline]
fn clamp01<T: Real>(p: T) -> T {
    p.max(T::zero()).min(T::one())
}

/// Probability that a Brownian bridge with diffusion matrix `sigma` over a step
/// of length `dt` leaves `domain` between `from` and `to`.
pub fn bridge_exit_probability<T: Real>(
    domain: &Domain<T>,
    from: &[T],
    to: &[T],
    dt: T,
    sigma: &Matrix<T>,
) -> Result<T> {
    if from.len() != domain.dim() || to.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: if from.len() != domain.dim() {
                from.len()
            } else {
                to.len()
            },
        });
    }
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt must be positive"));
    }
    Ok(BridgeCorrection::new(domain, sigma)?.exit_probability(from, to, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, Purpose};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn unit() -> Domain<f64> {
        Domain::interval(-1.0, 1.0).unwrap()
    }

    fn sigma1() -> Matrix<f64> {
        Matrix::identity(1)
    }

    #[test]
    fn membership() {
        let d = unit();
        assert!(d.contains_open(&[0.0]).unwrap());
        assert!(!d.contains_open(&[1.0]).unwrap());
        assert!(!d.contains_open(&[1.0 - 1e-13]).unwrap());
        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(!b.contains_open(&[0.6, 0.8]).unwrap());
        assert!(b.contains_open(&[0.6, 0.79]).unwrap());
        assert_eq!(
            d.contains_open(&[0.0, 0.0]).unwrap_err(),
            Error::DimensionMismatch {
                expected: 1,
                got: 2
            }
        );
    }

    #[test]
    fn distances() {
        assert_eq!(unit().signed_boundary_distance(&[0.25]).unwrap(), 0.75);
        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(b.signed_boundary_distance(&[2.0, 0.0]).unwrap(), -1.0);
        let bx = Domain::cube(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(bx.signed_boundary_distance(&[1.0, 0.5]).unwrap(), 0.5);
        assert!((bx.signed_boundary_distance(&[3.0, 2.0]).unwrap() + 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(bx.signed_boundary_distance(&[1.0, 1.5]).unwrap(), -0.5);
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::cube(vec![0.0, 1.0], vec![1.0, 0.5]).is_err());
        assert!(Domain::ball(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn serde_layout() {
        let d: Domain<f64> = serde_json::from_str(r#"{"type":"interval","lo":-1,"hi":1}"#).unwrap();
        assert_eq!(d, unit());
        let b: Domain<f64> =
            serde_json::from_str(r#"{"type":"ball","center":[0,0],"radius":2}"#).unwrap();
        assert_eq!(b.dim(), 2);
        let x: Domain<f64> =
            serde_json::from_str(r#"{"type":"box","lo":[0,0],"hi":[1,2]}"#).unwrap();
        assert_eq!(x.diameter(), 5f64.sqrt());
    }

    #[test]
    fn reflection_formula_near_upper_endpoint() {
        let p = bridge_exit_probability(&unit(), &[0.9], &[0.9], 0.01, &sigma1()).unwrap();
        // exp(-2 * 0.1 * 0.1 / 0.01) from the upper face, exp(-2 * 1.9^2 / 0.01) ~ 0 from the lower one.
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn boundary_endpoint_and_vanishing_step() {
        let d = unit();
        assert_eq!(
            bridge_exit_probability(&d, &[1.0], &[0.5], 0.01, &sigma1()).unwrap(),
            1.0
        );
        assert_eq!(
            bridge_exit_probability(&d, &[0.2], &[-1.0], 0.01, &sigma1()).unwrap(),
            1.0
        );
        assert_eq!(
            bridge_exit_probability(&d, &[0.2], &[0.3], 1e-9, &sigma1()).unwrap(),
            0.0
        );
        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let s2 = Matrix::identity(2);
        assert_eq!(
            bridge_exit_probability(&b, &[0.6, 0.8], &[0.0, 0.0], 0.1, &s2).unwrap(),
            1.0
        );
        let bx = Domain::cube(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(
            bridge_exit_probability(&bx, &[0.0, 0.5], &[0.5, 0.5], 0.1, &s2).unwrap(),
            1.0
        );
    }

    #[test]
    fn singular_sigma_is_rejected() {
        let s = Matrix::from_row_major(1, 1, vec![0.0]).unwrap();
        assert_eq!(
            bridge_exit_probability(&unit(), &[0.0], &[0.0], 0.01, &s).unwrap_err(),
            Error::SingularSigma
        );
    }

    #[test]
    fn box_uses_whitened_face_variances() {
        // sigma = diag(1, 2): the y faces see variance 4 dt.
        let bx = Domain::cube(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let s = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let p = bridge_exit_probability(&bx, &[0.0, 0.9], &[0.0, 0.9], 0.01, &s).unwrap();
        let want = (-2.0 * 0.01 / 0.04f64).exp();
        assert!((p - want).abs() < 1e-9, "{p} vs {want}");
    }

    #[test]
    fn ball_matches_half_space_formula() {
        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let s = Matrix::identity(2);
        let p = bridge_exit_probability(&b, &[0.9, 0.0], &[0.9, 0.0], 0.01, &s).unwrap();
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }

    // Pinned-bridge oracle: simulate Brownian bridges on a fine grid and count
    // those that leave (-1, 1).
    #[test]
    fn reflection_formula_against_pinned_bridges() {
        let d = unit();
        let (from, to, dt) = (0.9, 0.9, 0.01);
        let n_bridges = 100_000u64;
        let sub = 1000u64;
        let h = dt / sub as f64;
        let rng = CounterRng::new(11);
        let mut exits = 0u64;
        for i in 0..n_bridges {
            let mut w = 0.0f64;
            let mut path_max = f64::NEG_INFINITY;
            let mut path_min = f64::INFINITY;
            let mut s = rng.stream(i, 0, Purpose::Noise);
            let mut ws = Vec::with_capacity(sub as usize);
            for _ in 0..sub {
                let z: f64 = StandardNormal.sample(&mut s);
                w += z * h.sqrt();
                ws.push(w);
            }
            let w_end = w;
            for (k, wk) in ws.iter().enumerate() {
                let t = (k + 1) as f64 * h;
                let x = from + wk - t / dt * (w_end - (to - from));
                path_max = path_max.max(x);
                path_min = path_min.min(x);
            }
            // Discrete monitoring shifts the effective barrier outward by
            // 0.5826 * sqrt(h) (Broadie-Glasserman-Kou); undo that shift.
            let shift = 0.5826 * h.sqrt();
            if path_max >= 1.0 - shift || path_min <= -1.0 + shift {
                exits += 1;
            }
        }
        let mc = exits as f64 / n_bridges as f64;
        let p = bridge_exit_probability(&d, &[from], &[to], dt, &sigma1()).unwrap();
        assert!((mc - p).abs() <= 0.01, "monte carlo {mc} vs formula {p}");
    }

    proptest! {
        #[test]
        fn sign_of_distance_matches_membership(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let doms = [
                Domain::ball(vec![0.0, 0.0], 1.0).unwrap(),
                Domain::cube(vec![-1.0, -0.5], vec![1.0, 0.5]).unwrap(),
            ];
            for d in &doms {
                let dist = d.signed_boundary_distance(&[x, y]).unwrap();
                prop_assert_eq!(dist > 1e-12, d.contains_open(&[x, y]).unwrap());
            }
            let i = unit();
            let dist = i.signed_boundary_distance(&[x]).unwrap();
            prop_assert_eq!(dist > 1e-12, i.contains_open(&[x]).unwrap());
        }

        #[test]
        fn interval_bridge_monotonicity(
            a in 0.01f64..0.5, b in 0.01f64..0.5, da in 0.0f64..0.1, dt in 1e-4f64..0.1, f in 1.0f64..3.0,
        ) {
            let d = unit();
            let s = sigma1();
            // points given by their distance below the upper endpoint
            let p = |da_: f64, db_: f64, dt_: f64| {
                bridge_exit_probability(&d, &[1.0 - da_], &[1.0 - db_], dt_, &s).unwrap()
            };
            let base = p(a, b, dt);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(p(a + da, b, dt) <= base + 1e-15);
            prop_assert!(p(a, b + da, dt) <= base + 1e-15);
            prop_assert!(p(a, b, dt * f) >= base - 1e-15);
        }
    }
}
