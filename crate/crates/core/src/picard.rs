//! Fixed point of the map sending a measure flow to the conditional law flow of
//! the diffusion driven by it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::killed_sim::{simulate_killed, InitialLaw, SimConfig};
use crate::measures::{flow_distance, flow_sampling_scale, EmpiricalMeasure, MeasureFlow};
use crate::model::{Control, ModelSpec};
use crate::scalar::Real;

/// Outcome of [`solve_fixed_point`].
#[derive(Debug, Clone)]
pub struct FixedPointResult<T> {
    pub flow: MeasureFlow<T>,
    pub iterations: usize,
    /// `distance_trace[k]` is the flow distance between iterates `k` and `k + 1`.
    pub distance_trace: Vec<T>,
    pub survival: Vec<T>,
    pub converged: bool,
}

impl<T: Real> FixedPointResult<T> {
    /// `iterations.csv`: `iter,distance`, iterations counted from 1.
    pub fn write_iterations_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,distance")?;
        for (k, d) in self.distance_trace.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, crate::io::fmt_real(*d))?;
        }
        Ok(())
    }
}

/// Stopping rule for the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PicardSettings<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> PicardSettings<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) || self.max_iter == 0 {
            return Err(Error::invalid("picard needs tol > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

/// One application of the map: simulate against `flow_in` and return the
/// conditional flow. The seed in `config` is the common random number stream.
pub fn phi_map<T: Real>(
    model: &ModelSpec<T>,
    control: Control<'_, T>,
    flow_in: &MeasureFlow<T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
) -> Result<MeasureFlow<T>> {
    let ens = simulate_killed(model, control, flow_in, config, initial)?;
    let out = ens.conditional_flow()?;
    if !out.same_grid(flow_in) {
        return Err(Error::GridMismatch(
            "input flow must live on the simulation output grid".into(),
        ));
    }
    Ok(out)
}

/// A flow on the output grid that carries no information; only valid input
/// when the drift ignores the measure.
pub fn placeholder_flow<T: Real>(
    model: &ModelSpec<T>,
    config: &SimConfig<T>,
) -> Result<MeasureFlow<T>> {
    let grid = config.grid(model.horizon)?;
    let node = EmpiricalMeasure::dirac(model.domain.center())?;
    let n = grid.len();
    MeasureFlow::new(grid, vec![node; n], vec![T::one(); n])
}

/// Starting point of the iteration: the conditional flow of the model with the
/// mean-field gain switched off.
pub fn initial_guess<T: Real>(
    model: &ModelSpec<T>,
    control: Control<'_, T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
) -> Result<MeasureFlow<T>> {
    let decoupled = model.with_mf_gain(T::zero());
    let placeholder = placeholder_flow(model, config)?;
    phi_map(&decoupled, control, &placeholder, config, initial)
}

/// Iterates [`phi_map`] from [`initial_guess`] until successive iterates are
/// within `settings.tol` or the iteration budget runs out.
pub fn solve_fixed_point<T: Real>(
    model: &ModelSpec<T>,
    control: Control<'_, T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
    settings: &PicardSettings<T>,
) -> Result<FixedPointResult<T>> {
    settings.validate()?;
    let mut flow = initial_guess(model, control, config, initial)?;
    let mut trace = Vec::new();
    let mut converged = false;
    while trace.len() < settings.max_iter {
        let next = phi_map(model, control, &flow, config, initial)?;
        let d = flow_distance(&flow, &next)?;
        trace.push(d);
        flow = next;
        if d <= settings.tol {
            converged = true;
            break;
        }
    }
    Ok(FixedPointResult {
        survival: flow.survival().to_vec(),
        flow,
        iterations: trace.len(),
        distance_trace: trace,
        converged,
    })
}

/// Distance between fixed points solved with two seeds and its noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison<T> {
    pub distance: T,
    pub se: T,
}

pub fn compare_fixed_points<T: Real>(
    a: &FixedPointResult<T>,
    b: &FixedPointResult<T>,
) -> Result<SeedComparison<T>> {
    Ok(SeedComparison {
        distance: flow_distance(&a.flow, &b.flow)?,
        se: flow_sampling_scale(&a.flow, &b.flow)?,
    })
}
