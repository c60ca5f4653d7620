//! Empirical measures, measure flows on a time grid and Wasserstein-type
//! distances between them.

use std::cmp::Ordering;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::rng::{CounterRng, Purpose};
use crate::scalar::Real;

/// Directions used by [`flow_distance`] for `d >= 2`.
pub const FLOW_SLICED_DIRECTIONS: usize = 32;
const FLOW_METRIC_SEED: u64 = 0x5eed_f10e;

/// Uniform measure on a nonempty point cloud in `R^d`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<T> {
    dim: usize,
    points: Vec<T>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(dim: usize, points: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("measure dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::invalid("empirical measure needs at least one point"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: points.len() % dim,
            });
        }
        Ok(Self { dim, points })
    }

    pub fn from_points(points: &[Vec<T>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(dim, points.concat())
    }

    pub fn dirac(x: Vec<T>) -> Result<Self> {
        Self::new(x.len(), x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.points
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for p in self.iter() {
            for (mi, &pi) in m.iter_mut().zip(p) {
                *mi += pi;
            }
        }
        let n = T::from_usize_lossy(self.len());
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Trace of the covariance matrix.
    pub fn variance(&self) -> T {
        let m = self.mean();
        let n = T::from_usize_lossy(self.len());
        self.iter()
            .map(|p| {
                p.iter()
                    .zip(&m)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
            })
            .sum::<T>()
            / n
    }

    /// `E|X|^2`.
    pub fn second_moment(&self) -> T {
        let n = T::from_usize_lossy(self.len());
        self.points.iter().map(|&x| x * x).sum::<T>() / n
    }

    /// Inverse-CDF sample of the uniform weights: `support[floor(u n)]`.
    #[inline]
    pub fn sample(&self, u: f64) -> &[T] {
        let n = self.len();
        let idx = ((u * n as f64) as usize).min(n - 1);
        self.point(idx)
    }

    /// Coordinates projected on `dir`, sorted ascending.
    fn sorted_projection(&self, dir: &[T]) -> Vec<T> {
        let mut v: Vec<T> = self
            .iter()
            .map(|p| p.iter().zip(dir).map(|(&a, &b)| a * b).sum())
            .collect();
        v.sort_by(cmp_real);
        v
    }

    fn sorted_coordinates(&self) -> Vec<T> {
        let mut v = self.points.clone();
        v.sort_by(cmp_real);
        v
    }
}

fn cmp_real<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Uniform measure on the alive positions.
pub fn conditional_empirical<T: Real>(
    positions: &[Vec<T>],
    alive: &[bool],
) -> Result<EmpiricalMeasure<T>> {
    if positions.len() != alive.len() {
        return Err(Error::invalid(format!(
            "{} positions but {} alive flags",
            positions.len(),
            alive.len()
        )));
    }
    let dim = positions.first().map_or(1, Vec::len);
    let mut flat = Vec::new();
    for (p, &a) in positions.iter().zip(alive) {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if a {
            flat.extend_from_slice(p);
        }
    }
    conditional_from_flat(dim, flat, 0.0)
}

pub(crate) fn conditional_from_flat<T: Real>(
    dim: usize,
    flat: Vec<T>,
    time: f64,
) -> Result<EmpiricalMeasure<T>> {
    if flat.is_empty() {
        return Err(Error::SurvivorDepletion {
            time,
            survivors: 0,
            required: 1,
        });
    }
    EmpiricalMeasure::new(dim, flat)
}

/// W1 between two sorted samples by integrating the difference of their
/// quantile functions over the merged breakpoints.
fn w1_sorted<T: Real>(a: &[T], b: &[T]) -> T {
    let (n1, n2) = (a.len() as u128, b.len() as u128);
    if n1 == n2 {
        let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
        return s / T::from_usize_lossy(a.len());
    }
    // Quantile levels in units of 1 / (n1 n2).
    let total = n1 * n2;
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev: u128 = 0;
    let mut acc = T::zero();
    while prev < total {
        let next_a = (i as u128 + 1) * n2;
        let next_b = (j as u128 + 1) * n1;
        let next = next_a.min(next_b);
        let width = T::from_u128(next - prev).expect("width") / T::from_u128(total).expect("total");
        acc += width * (a[i] - b[j]).abs();
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
        prev = next;
    }
    acc
}

/// Exact Wasserstein-1 distance between one-dimensional empirical measures.
pub fn w1_distance_1d<T: Real>(m1: &EmpiricalMeasure<T>, m2: &EmpiricalMeasure<T>) -> Result<T> {
    if m1.dim() != 1 || m2.dim() != 1 {
        return Err(Error::invalid(
            "w1_distance_1d needs d = 1; use sliced_w1 for d > 1",
        ));
    }
    Ok(w1_sorted(
        &m1.sorted_coordinates(),
        &m2.sorted_coordinates(),
    ))
}

/// Unit directions drawn from a seeded Gaussian, normalized.
pub fn unit_directions<T: Real>(dim: usize, n: usize, seed: u64) -> Vec<Vec<T>> {
    let rng = CounterRng::new(seed);
    (0..n)
        .map(|k| {
            let mut s = rng.stream(k as u64, 0, Purpose::Direction);
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut s)).collect();
                let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if len > 1e-12 {
                    return v.iter().map(|x| T::lit(x / len)).collect();
                }
            }
        })
        .collect()
}

/// Sliced W1: mean of the 1-d distances of projections on `n_directions`
/// seeded random directions.
pub fn sliced_w1<T: Real>(
    m1: &EmpiricalMeasure<T>,
    m2: &EmpiricalMeasure<T>,
    n_directions: usize,
    seed: u64,
) -> Result<T> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch {
            expected: m1.dim(),
            got: m2.dim(),
        });
    }
    if n_directions == 0 {
        return Err(Error::invalid("sliced_w1 needs at least one direction"));
    }
    let dirs = unit_directions::<T>(m1.dim(), n_directions, seed);
    Ok(sliced_with(m1, m2, &dirs, |a, b| w1_sorted(a, b)))
}

fn sliced_with<T: Real>(
    m1: &EmpiricalMeasure<T>,
    m2: &EmpiricalMeasure<T>,
    dirs: &[Vec<T>],
    f: impl Fn(&[T], &[T]) -> T,
) -> T {
    let total: T = dirs
        .iter()
        .map(|u| f(&m1.sorted_projection(u), &m2.sorted_projection(u)))
        .sum();
    total / T::from_usize_lossy(dirs.len())
}

/// Sampling-noise scale of W1 between independent samples of one law:
/// `sqrt(1/n1 + 1/n2) * integral sqrt(F (1 - F))` with `F` the pooled CDF. It
/// bounds the expected distance under the null hypothesis of equal laws.
fn w1_scale_sorted<T: Real>(a: &[T], b: &[T]) -> T {
    let (n1, n2) = (a.len(), b.len());
    let n = T::from_usize_lossy(n1 + n2);
    let mut pooled: Vec<T> = a.iter().chain(b).copied().collect();
    pooled.sort_by(cmp_real);
    let mut integral = T::zero();
    for k in 1..pooled.len() {
        let f = T::from_usize_lossy(k) / n;
        integral += (f * (T::one() - f)).sqrt() * (pooled[k] - pooled[k - 1]);
    }
    let w = (T::one() / T::from_usize_lossy(n1) + T::one() / T::from_usize_lossy(n2)).sqrt();
    w * integral
}

pub fn w1_sampling_scale<T: Real>(m1: &EmpiricalMeasure<T>, m2: &EmpiricalMeasure<T>) -> Result<T> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch {
            expected: m1.dim(),
            got: m2.dim(),
        });
    }
    if m1.dim() == 1 {
        return Ok(w1_scale_sorted(m1.as_flat(), m2.as_flat()));
    }
    let dirs = unit_directions::<T>(m1.dim(), FLOW_SLICED_DIRECTIONS, FLOW_METRIC_SEED);
    Ok(sliced_with(m1, m2, &dirs, |a, b| w1_scale_sorted(a, b)))
}

/// W1 for `d = 1`, sliced W1 with a fixed direction set otherwise.
pub fn measure_distance<T: Real>(m1: &EmpiricalMeasure<T>, m2: &EmpiricalMeasure<T>) -> Result<T> {
    if m1.dim() == 1 && m2.dim() == 1 {
        w1_distance_1d(m1, m2)
    } else {
        sliced_w1(m1, m2, FLOW_SLICED_DIRECTIONS, FLOW_METRIC_SEED)
    }
}

/// Per-node conditional measures on a time grid together with the survival
/// curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow<T> {
    grid: Vec<T>,
    nodes: Vec<EmpiricalMeasure<T>>,
    survival: Vec<T>,
}

impl<T: Real> MeasureFlow<T> {
    pub fn new(grid: Vec<T>, nodes: Vec<EmpiricalMeasure<T>>, survival: Vec<T>) -> Result<Self> {
        if grid.is_empty() || grid.len() != nodes.len() || grid.len() != survival.len() {
            return Err(Error::invalid(
                "flow grid, nodes and survival must have equal nonzero length",
            ));
        }
        if grid[0] != T::zero() || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(
                "flow grid must start at 0 and increase strictly",
            ));
        }
        if survival[0] != T::one()
            || survival.windows(2).any(|w| w[1] > w[0])
            || survival.iter().any(|&s| !(s > T::zero()))
        {
            return Err(Error::invalid(
                "survival must start at 1, stay positive and not increase",
            ));
        }
        let dim = nodes[0].dim();
        if let Some(bad) = nodes.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self {
            grid,
            nodes,
            survival,
        })
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn nodes(&self) -> &[EmpiricalMeasure<T>] {
        &self.nodes
    }

    pub fn survival(&self) -> &[T] {
        &self.survival
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }

    pub fn horizon(&self) -> T {
        *self.grid.last().expect("nonempty grid")
    }

    /// Index of the first grid node at or after `t` (right-continuous step
    /// interpolation); queries past the horizon get the last node.
    pub fn node_index_at(&self, t: T) -> usize {
        let eps = T::lit(1e-9) * self.horizon().max(T::one());
        self.grid
            .partition_point(|&g| g < t - eps)
            .min(self.grid.len() - 1)
    }

    pub fn at(&self, t: T) -> &EmpiricalMeasure<T> {
        &self.nodes[self.node_index_at(t)]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        let eps = T::lit(1e-9) * self.horizon().max(T::one());
        self.grid.len() == other.grid.len()
            && self
                .grid
                .iter()
                .zip(&other.grid)
                .all(|(&a, &b)| (a - b).abs() <= eps)
    }

    /// CSV with columns `time,survival,particle_index,x_0..x_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header = String::from("time,survival,particle_index");
        for k in 0..d {
            header.push_str(&format!(",x_{k}"));
        }
        writeln!(w, "{header}")?;
        for ((t, s), m) in self.grid.iter().zip(&self.survival).zip(&self.nodes) {
            let (t, s) = (fmt_real(*t), fmt_real(*s));
            for (i, p) in m.iter().enumerate() {
                write!(w, "{t},{s},{i}")?;
                for &x in p {
                    write!(w, ",{}", fmt_real(x))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Largest node-wise distance between two flows on the same grid.
pub fn flow_distance<T: Real>(f1: &MeasureFlow<T>, f2: &MeasureFlow<T>) -> Result<T> {
    Ok(flow_distance_profile(f1, f2)?
        .into_iter()
        .fold(T::zero(), T::max))
}

/// Node-wise distances between two flows on the same grid.
pub fn flow_distance_profile<T: Real>(f1: &MeasureFlow<T>, f2: &MeasureFlow<T>) -> Result<Vec<T>> {
    if !f1.same_grid(f2) {
        return Err(Error::GridMismatch(format!(
            "{} nodes vs {} nodes",
            f1.grid.len(),
            f2.grid.len()
        )));
    }
    f1.nodes
        .iter()
        .zip(&f2.nodes)
        .map(|(a, b)| measure_distance(a, b))
        .collect()
}

/// Largest node-wise sampling scale (see [`w1_sampling_scale`]); the standard
/// error attached to [`flow_distance`] between independent estimates.
pub fn flow_sampling_scale<T: Real>(f1: &MeasureFlow<T>, f2: &MeasureFlow<T>) -> Result<T> {
    if !f1.same_grid(f2) {
        return Err(Error::GridMismatch("sampling scale".into()));
    }
    let mut worst = T::zero();
    for (a, b) in f1.nodes.iter().zip(&f2.nodes) {
        worst = worst.max(w1_sampling_scale(a, b)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m1d(v: &[f64]) -> EmpiricalMeasure<f64> {
        EmpiricalMeasure::new(1, v.to_vec()).unwrap()
    }

    // Brute-force W1 between uniform measures with n1, n2 atoms: expand both to
    // n1*n2 equally weighted atoms, where sorted matching is optimal.
    fn w1_expanded(a: &[f64], b: &[f64]) -> f64 {
        let mut ea: Vec<f64> = a
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, b.len()))
            .collect();
        let mut eb: Vec<f64> = b
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, a.len()))
            .collect();
        ea.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ea.len() as f64
    }

    #[test]
    fn conditional_filters_alive() {
        let pos = vec![vec![0.1], vec![0.9], vec![1.5]];
        let m = conditional_empirical(&pos, &[true, true, false]).unwrap();
        assert_eq!(m.as_flat(), &[0.1, 0.9]);
        let all = conditional_empirical(&pos, &[true; 3]).unwrap();
        assert_eq!(all.len(), 3);
        assert!(matches!(
            conditional_empirical(&pos, &[false; 3]),
            Err(Error::SurvivorDepletion { .. })
        ));
    }

    #[test]
    fn sampling_indices() {
        let x = m1d(&[4.0]);
        assert_eq!(x.sample(0.0), &[4.0]);
        assert_eq!(x.sample(0.999), &[4.0]);
        let m = m1d(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(m.sample(0.0), &[0.0]);
        assert_eq!(m.sample(1.0 - 1e-16), &[3.0]);
    }

    #[test]
    fn sampling_frequencies() {
        let m = m1d(&[0.0, 1.0, 2.0, 3.0]);
        let rng = CounterRng::new(5);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for i in 0..n {
            let x = m.sample(rng.uniform(i, 0, Purpose::Reinsert))[0];
            counts[x as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() <= 0.01);
        }
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_distance_1d(&m1d(&[0.0]), &m1d(&[1.0])).unwrap(), 1.0);
        let m = m1d(&[0.3, -0.2, 0.7]);
        assert_eq!(w1_distance_1d(&m, &m).unwrap(), 0.0);
        // 2x2 transport plans between {0,1} and {0.5,0.5}: every plan costs 0.5.
        let a = m1d(&[0.0, 1.0]);
        let b = m1d(&[0.5, 0.5]);
        assert_eq!(w1_distance_1d(&a, &b).unwrap(), 0.5);
        let two_d = EmpiricalMeasure::new(2, vec![0.0, 0.0]).unwrap();
        assert!(w1_distance_1d(&two_d, &two_d).is_err());
    }

    #[test]
    fn w1_unequal_counts_matches_expansion() {
        let a = [0.1, 0.5, -0.3];
        let b = [0.0, 0.9, 0.2, 0.2, -1.0];
        let got = w1_distance_1d(&m1d(&a), &m1d(&b)).unwrap();
        assert!((got - w1_expanded(&a, &b)).abs() < 1e-14);
    }

    #[test]
    fn sliced_translation() {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let v = [0.3, -0.4];
        let shifted: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + v[0], p[1] + v[1]]).collect();
        let m = EmpiricalMeasure::from_points(&pts).unwrap();
        let ms = EmpiricalMeasure::from_points(&shifted).unwrap();
        assert_eq!(sliced_w1(&m, &m, 16, 1).unwrap(), 0.0);
        // Per direction u the projected clouds differ by a shift of <u, v>.
        let dirs = unit_directions::<f64>(2, 16, 1);
        let want: f64 = dirs
            .iter()
            .map(|u| (u[0] * v[0] + u[1] * v[1]).abs())
            .sum::<f64>()
            / 16.0;
        let got = sliced_w1(&m, &ms, 16, 1).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert_eq!(got, sliced_w1(&ms, &m, 16, 1).unwrap());
    }

    fn flow_of(nodes: Vec<Vec<f64>>) -> MeasureFlow<f64> {
        let n = nodes.len();
        MeasureFlow::new(
            (0..n).map(|k| k as f64 * 0.5).collect(),
            nodes.into_iter().map(|v| m1d(&v)).collect(),
            vec![1.0; n],
        )
        .unwrap()
    }

    #[test]
    fn flow_distance_examples() {
        let f = flow_of(vec![vec![0.0], vec![0.2, 0.4]]);
        assert_eq!(flow_distance(&f, &f).unwrap(), 0.0);
        let g = flow_of(vec![vec![0.0], vec![0.0]]);
        let h = flow_of(vec![vec![0.0], vec![1.0]]);
        assert_eq!(flow_distance(&g, &h).unwrap(), 1.0);
        let short = flow_of(vec![vec![0.0]]);
        assert!(matches!(
            flow_distance(&g, &short),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn flow_validation_and_interpolation() {
        let m = m1d(&[0.0]);
        assert!(
            MeasureFlow::new(vec![0.0, 1.0], vec![m.clone(), m.clone()], vec![1.0, 1.1]).is_err()
        );
        assert!(
            MeasureFlow::new(vec![0.0, 0.0], vec![m.clone(), m.clone()], vec![1.0, 1.0]).is_err()
        );
        let f = flow_of(vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert_eq!(f.node_index_at(0.0), 0);
        assert_eq!(f.node_index_at(0.1), 1);
        assert_eq!(f.node_index_at(0.5), 1);
        assert_eq!(f.node_index_at(0.75), 2);
        assert_eq!(f.node_index_at(9.0), 2);
    }

    #[test]
    fn csv_layout() {
        let f = flow_of(vec![vec![0.0], vec![0.25, 0.5]]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,survival,particle_index,x_0");
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[3],
            "5.0000000000000000e-1,1.0000000000000000e0,1,5.0000000000000000e-1"
        );
    }

    #[test]
    fn sampling_scale_bounds_null_distance() {
        let rng = CounterRng::new(9);
        let draw = |off: u64, n: u64| {
            m1d(&(0..n)
                .map(|i| rng.uniform(i + off, 0, Purpose::Initial))
                .collect::<Vec<_>>())
        };
        let (a, b) = (draw(0, 4000), draw(10_000, 4000));
        let d = w1_distance_1d(&a, &b).unwrap();
        let s = w1_sampling_scale(&a, &b).unwrap();
        // For U(0,1), integral of sqrt(F(1-F)) is pi/8.
        let want = (2.0f64 / 4000.0).sqrt() * std::f64::consts::PI / 8.0;
        assert!((s - want).abs() / want < 0.05);
        assert!(d < 3.0 * s);
    }

    proptest! {
        #[test]
        fn w1_is_a_metric(
            a in prop::collection::vec(-2.0f64..2.0, 1..8),
            b in prop::collection::vec(-2.0f64..2.0, 1..8),
            c in prop::collection::vec(-2.0f64..2.0, 1..8),
        ) {
            let (ma, mb, mc) = (m1d(&a), m1d(&b), m1d(&c));
            let ab = w1_distance_1d(&ma, &mb).unwrap();
            let ba = w1_distance_1d(&mb, &ma).unwrap();
            let ac = w1_distance_1d(&ma, &mc).unwrap();
            let bc = w1_distance_1d(&mb, &mc).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - w1_expanded(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn flow_distance_triangle(
            x in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..5), 3),
            y in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..5), 3),
            z in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..5), 3),
        ) {
            let (fx, fy, fz) = (flow_of(x), flow_of(y), flow_of(z));
            let xy = flow_distance(&fx, &fy).unwrap();
            let yz = flow_distance(&fy, &fz).unwrap();
            let xz = flow_distance(&fx, &fz).unwrap();
            prop_assert!(xz <= xy + yz + 1e-12);
            prop_assert_eq!(xy, flow_distance(&fy, &fx).unwrap());
        }

        #[test]
        fn sliced_is_a_metric(
            a in prop::collection::vec(-2.0f64..2.0, 2..10),
            b in prop::collection::vec(-2.0f64..2.0, 2..10),
            c in prop::collection::vec(-2.0f64..2.0, 2..10),
        ) {
            let even = |v: &Vec<f64>| EmpiricalMeasure::new(2, v[..v.len() / 2 * 2].to_vec()).unwrap();
            let (ma, mb, mc) = (even(&a), even(&b), even(&c));
            let ab = sliced_w1(&ma, &mb, 8, 3).unwrap();
            let ac = sliced_w1(&ma, &mc, 8, 3).unwrap();
            let bc = sliced_w1(&mb, &mc, 8, 3).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(sliced_w1(&ma, &ma, 8, 3).unwrap(), 0.0);
        }
    }
}
