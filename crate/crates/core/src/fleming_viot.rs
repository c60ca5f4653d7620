//! Fleming-Viot reinsertion dynamics: the finite-N system where an exiting
//! particle jumps onto a uniformly chosen peer, and the mean-field system where
//! it is redrawn from a given measure flow.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::killed_sim::{
    check_flow, step_means, Engine, InitialLaw, KilledEnsemble, Scratch, SimConfig,
};
use crate::measures::{measure_distance, EmpiricalMeasure, MeasureFlow};
use crate::model::{Control, FeedbackPolicy, ModelSpec};
use crate::rng::Purpose;
use crate::scalar::Real;

/// Per-particle reinsertion cap; exceeding it raises `ReinsertionBlowup`.
pub const DEFAULT_REINSERTION_CAP: usize = 10_000;

/// Where a reinserted particle was sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReinsertionSource {
    /// Current location of another particle.
    UniformPeer,
    /// Fresh draw from the flow node.
    FlowSample,
}

impl ReinsertionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ReinsertionSource::UniformPeer => "uniform-peer",
            ReinsertionSource::FlowSample => "flow-sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinsertionEvent<T> {
    pub time: T,
    pub particle: usize,
    pub position: Vec<T>,
    pub source: ReinsertionSource,
}

/// Snapshots, controls and reinsertion bookkeeping of a Fleming-Viot run.
#[derive(Debug, Clone)]
pub struct FvTrace<T> {
    pub grid: Vec<T>,
    /// Positions of all particles at each grid node.
    pub snapshots: Vec<EmpiricalMeasure<T>>,
    /// Control values at each node, particle-major within the node.
    pub controls: Vec<Vec<T>>,
    pub control_dim: usize,
    /// Events sorted by time, then particle index.
    pub events: Vec<ReinsertionEvent<T>>,
    /// Average number of reinsertions per particle up to each node.
    pub f_curve: Vec<T>,
    pub f_se: Vec<T>,
    /// Reinsertions per particle over the whole run.
    pub counts: Vec<usize>,
}

impl<T: Real> FvTrace<T> {
    pub fn n_particles(&self) -> usize {
        self.counts.len()
    }

    pub fn control(&self, node: usize, i: usize) -> &[T] {
        &self.controls[node][i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn f_final(&self) -> T {
        *self.f_curve.last().expect("nonempty grid")
    }

    /// `events.csv`: `time,particle,x_new_0..,source`.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.snapshots[0].dim();
        let coords: Vec<String> = (0..d).map(|k| format!("x_new_{k}")).collect();
        writeln!(w, "time,particle,{},source", coords.join(","))?;
        for e in &self.events {
            let xs: Vec<String> = e.position.iter().map(|&v| fmt_real(v)).collect();
            writeln!(
                w,
                "{},{},{},{}",
                fmt_real(e.time),
                e.particle,
                xs.join(","),
                e.source.as_str()
            )?;
        }
        Ok(())
    }

    /// `f_curve.csv`: `time,F,F_se`.
    pub fn write_f_curve_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,F,F_se")?;
        for ((t, f), se) in self.grid.iter().zip(&self.f_curve).zip(&self.f_se) {
            writeln!(w, "{},{},{}", fmt_real(*t), fmt_real(*f), fmt_real(*se))?;
        }
        Ok(())
    }
}

/// Mean and standard error of per-particle counts at each node.
fn count_stats<T: Real>(per_node: &[Vec<u32>]) -> (Vec<T>, Vec<T>) {
    per_node
        .iter()
        .map(|c| {
            let n = T::from_usize_lossy(c.len());
            let mean = c
                .iter()
                .map(|&v| T::from_usize_lossy(v as usize))
                .sum::<T>()
                / n;
            let var = c
                .iter()
                .map(|&v| {
                    let e = T::from_usize_lossy(v as usize) - mean;
                    e * e
                })
                .sum::<T>()
                / n;
            (mean, (var / n).sqrt())
        })
        .unzip()
}

fn blowup_check(count: usize, particle: usize, cap: usize) -> Result<()> {
    if count > cap {
        Err(Error::ReinsertionBlowup { particle, cap })
    } else {
        Ok(())
    }
}

/// Finite-N system: the drift reads the empirical mean of all particles; an
/// exiting particle jumps to the current position of a uniformly chosen other
/// particle that is not itself waiting to be reinserted. Exits within one step
/// are processed by increasing particle index.
pub fn simulate_fv_finite<T: Real>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
    cap: usize,
) -> Result<FvTrace<T>> {
    if config.n_particles < 2 {
        return Err(Error::invalid(
            "finite Fleming-Viot needs at least two particles",
        ));
    }
    let engine = Engine::new(model, Control::Feedback(policy), config, config.seed)?;
    initial.validate(model)?;
    let n_steps = config.n_steps(model.horizon)?;
    let grid = config.grid(model.horizon)?;
    let (n, d, da) = (config.n_particles, model.dim(), model.control_dim());

    let mut x = vec![T::zero(); n * d];
    for (i, xi) in x.chunks_mut(d).enumerate() {
        initial.draw(&engine.rng, i, xi);
    }
    let mut counts = vec![0u32; n];
    let mut per_node_counts = Vec::with_capacity(grid.len());
    let mut snapshots = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());
    let mut events = Vec::new();
    let mut a_all = vec![T::zero(); n * da];
    let mut x_new = vec![T::zero(); n * d];
    let mut exits: Vec<Option<T>> = vec![None; n];
    let mut pending = vec![false; n];

    for m in 0..=n_steps {
        let t = config.step_time(m);
        a_all
            .par_chunks_mut(da)
            .zip(x.par_chunks(d))
            .for_each(|(a, xi)| policy.eval_into(&model.control_set, t, xi, a));
        if m % config.record_every == 0 {
            snapshots.push(EmpiricalMeasure::new(d, x.clone())?);
            controls.push(a_all.clone());
            per_node_counts.push(counts.clone());
        }
        if m == n_steps {
            break;
        }
        let mean = EmpiricalMeasure::new(d, x.clone())?.mean();
        x_new
            .par_chunks_mut(d)
            .zip(exits.par_iter_mut())
            .enumerate()
            .for_each_init(
                || Scratch::new(d, da),
                |s, (i, (out, exit))| {
                    let xi = &x[i * d..(i + 1) * d];
                    s.a.copy_from_slice(&a_all[i * da..(i + 1) * da]);
                    engine.advance(i, m, t, xi, &mean, s);
                    *exit = engine.detect_exit(i, m, t, xi, &s.x_new);
                    out.copy_from_slice(&s.x_new);
                },
            );
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite state at t = {}",
                t.to_f64_lossy()
            )));
        }
        std::mem::swap(&mut x, &mut x_new);

        let exiting: Vec<usize> = (0..n).filter(|&i| exits[i].is_some()).collect();
        if exiting.len() == n {
            return Err(Error::TotalExtinction {
                time: config.step_time(m + 1).to_f64_lossy(),
            });
        }
        for &i in &exiting {
            pending[i] = true;
        }
        for &i in &exiting {
            let j = pick_peer(&engine, i, m, &pending);
            let (src, dst) = (j * d, i * d);
            for k in 0..d {
                x[dst + k] = x[src + k];
            }
            pending[i] = false;
            counts[i] += 1;
            blowup_check(counts[i] as usize, i, cap)?;
            events.push(ReinsertionEvent {
                time: exits[i].expect("exiting particle"),
                particle: i,
                position: x[dst..dst + d].to_vec(),
                source: ReinsertionSource::UniformPeer,
            });
        }
    }
    let (f_curve, f_se) = count_stats(&per_node_counts);
    Ok(FvTrace {
        grid,
        snapshots,
        controls,
        control_dim: da,
        events,
        f_curve,
        f_se,
        counts: counts.into_iter().map(|c| c as usize).collect(),
    })
}

/// Uniform choice among particles other than `i` that are not pending; tries
/// rejection sampling first and falls back to an explicit list.
fn pick_peer<T: Real>(engine: &Engine<'_, T>, i: usize, m: usize, pending: &[bool]) -> usize {
    let n = pending.len();
    let mut stream = engine.rng.stream(i as u64, m as u64, Purpose::Peer);
    for _ in 0..64 {
        let j = ((stream.unit() * n as f64) as usize).min(n - 1);
        if j != i && !pending[j] {
            return j;
        }
    }
    let eligible: Vec<usize> = (0..n).filter(|&j| j != i && !pending[j]).collect();
    let k = ((stream.unit() * eligible.len() as f64) as usize).min(eligible.len() - 1);
    eligible[k]
}

/// Mean-field system: independent particles whose drift reads `flow`; on exit
/// within step `m` a particle is redrawn from the flow node in force at the end
/// of the step.
pub fn simulate_fv_meanfield<T: Real>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    flow: &MeasureFlow<T>,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
    cap: usize,
) -> Result<FvTrace<T>> {
    let engine = Engine::new(model, Control::Feedback(policy), config, config.seed)?;
    initial.validate(model)?;
    let n_steps = config.n_steps(model.horizon)?;
    let grid = config.grid(model.horizon)?;
    check_flow(flow, model)?;
    let (d, da) = (model.dim(), model.control_dim());
    let means = step_means(flow, config, 0, n_steps);
    let n_nodes = grid.len();

    struct Run<T> {
        positions: Vec<T>,
        controls: Vec<T>,
        counts: Vec<u32>,
        events: Vec<ReinsertionEvent<T>>,
    }

    let runs: Vec<Run<T>> = (0..config.n_particles)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![T::zero(); d];
            initial.draw(&engine.rng, i, &mut x);
            let mut s = Scratch::new(d, da);
            let mut run = Run {
                positions: Vec::with_capacity(n_nodes * d),
                controls: Vec::with_capacity(n_nodes * da),
                counts: Vec::with_capacity(n_nodes),
                events: Vec::new(),
            };
            let mut count = 0u32;
            for m in 0..=n_steps {
                let t = config.step_time(m);
                policy.eval_into(&model.control_set, t, &x, &mut s.a);
                if m % config.record_every == 0 {
                    run.positions.extend_from_slice(&x);
                    run.controls.extend_from_slice(&s.a);
                    run.counts.push(count);
                }
                if m == n_steps {
                    break;
                }
                engine.advance(i, m, t, &x, &means[m], &mut s);
                if s.x_new.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite state for particle {i} at t = {}",
                        t.to_f64_lossy()
                    )));
                }
                if let Some(tau) = engine.detect_exit(i, m, t, &x, &s.x_new) {
                    let node = flow.at(config.step_time(m + 1));
                    let u = engine.rng.uniform(i as u64, m as u64, Purpose::Reinsert);
                    x.copy_from_slice(node.sample(u));
                    count += 1;
                    blowup_check(count as usize, i, cap)?;
                    run.events.push(ReinsertionEvent {
                        time: tau,
                        particle: i,
                        position: x.clone(),
                        source: ReinsertionSource::FlowSample,
                    });
                } else {
                    std::mem::swap(&mut x, &mut s.x_new);
                }
            }
            Ok(run)
        })
        .collect::<Result<_>>()?;

    let n = config.n_particles;
    let mut snapshots = Vec::with_capacity(n_nodes);
    let mut controls = Vec::with_capacity(n_nodes);
    let mut per_node_counts = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        let mut pts = Vec::with_capacity(n * d);
        let mut ctl = Vec::with_capacity(n * da);
        let mut cnt = Vec::with_capacity(n);
        for r in &runs {
            pts.extend_from_slice(&r.positions[k * d..(k + 1) * d]);
            ctl.extend_from_slice(&r.controls[k * da..(k + 1) * da]);
            cnt.push(r.counts[k]);
        }
        snapshots.push(EmpiricalMeasure::new(d, pts)?);
        controls.push(ctl);
        per_node_counts.push(cnt);
    }
    let counts = runs
        .iter()
        .map(|r| *r.counts.last().expect("nodes") as usize)
        .collect();
    let mut events: Vec<ReinsertionEvent<T>> = runs.into_iter().flat_map(|r| r.events).collect();
    events.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .expect("finite times")
            .then(a.particle.cmp(&b.particle))
    });
    let (f_curve, f_se) = count_stats(&per_node_counts);
    Ok(FvTrace {
        grid,
        snapshots,
        controls,
        control_dim: da,
        events,
        f_curve,
        f_se,
        counts,
    })
}

/// Node-wise comparison of a Fleming-Viot run with a killed ensemble: distance
/// between the FV marginal and the killed conditional law, and `|F + log S|`.
/// The first argument must be the FV trace, the second the killed ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    pub time: Vec<f64>,
    pub w1: Vec<f64>,
    pub f: Vec<f64>,
    pub log_survival: Vec<f64>,
    pub f_residual: Vec<f64>,
    pub max_w1: f64,
    pub max_f_residual: f64,
}

pub fn fv_correspondence_report<T: Real>(
    fv: &FvTrace<T>,
    killed: &KilledEnsemble<T>,
) -> Result<CorrespondenceReport> {
    let kg = killed.grid();
    if kg.len() != fv.grid.len()
        || kg
            .iter()
            .zip(&fv.grid)
            .any(|(a, b)| (*a - *b).abs() > T::lit(1e-9))
    {
        return Err(Error::GridMismatch(
            "FV trace and killed ensemble grids differ".into(),
        ));
    }
    let cond = killed.conditional_flow()?;
    let mut rep = CorrespondenceReport {
        time: Vec::new(),
        w1: Vec::new(),
        f: Vec::new(),
        log_survival: Vec::new(),
        f_residual: Vec::new(),
        max_w1: 0.0,
        max_f_residual: 0.0,
    };
    for k in 0..kg.len() {
        let w = measure_distance(&fv.snapshots[k], &cond.nodes()[k])?.to_f64_lossy();
        let ls = cond.survival()[k].to_f64_lossy().ln();
        let f = fv.f_curve[k].to_f64_lossy();
        let r = (f + ls).abs();
        rep.time.push(kg[k].to_f64_lossy());
        rep.w1.push(w);
        rep.f.push(f);
        rep.log_survival.push(ls);
        rep.f_residual.push(r);
        rep.max_w1 = rep.max_w1.max(w);
        rep.max_f_residual = rep.max_f_residual.max(r);
    }
    Ok(rep)
}
