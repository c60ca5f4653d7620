//! Open-loop to feedback conversion by regressing recorded controls on
//! `(t, X_t)` over surviving samples, and the reward comparison it supports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::killed_sim::{simulate_killed, InitialLaw, KilledEnsemble, SimConfig};
use crate::model::{Control, FeedbackPolicy, GridPolicy, ModelSpec, OpenLoopControl};
use crate::picard::{solve_fixed_point, PicardSettings};
use crate::reward_opt::eval_reward_conditional;
use crate::rng::mix_seed;
use crate::scalar::Real;

/// Seed tag for the closed-loop run of [`mimic_compare`].
const CLOSED_LOOP_TAG: u64 = 0x6d69_6d69;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBins {
    pub time_bins: usize,
    /// Bins per space coordinate.
    pub space_bins: usize,
}

/// Regressed feedback grid with the number of samples behind each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionGrid<T> {
    pub grid: GridPolicy<T>,
    pub counts: Vec<usize>,
    /// Standard error of each cell mean (first control coordinate); zero for
    /// cells with fewer than two samples.
    pub se: Vec<T>,
}

impl<T: Real> RegressionGrid<T> {
    pub fn policy(&self) -> FeedbackPolicy<T> {
        FeedbackPolicy::Grid(self.grid.clone())
    }

    /// `policy_grid.csv`: `t_bin,x_bin_0..,value_0..,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.grid;
        let d = g.space_bins.len();
        let xb: Vec<String> = (0..d).map(|k| format!("x_bin_{k}")).collect();
        let vb: Vec<String> = (0..g.control_dim).map(|k| format!("value_{k}")).collect();
        writeln!(w, "t_bin,{},{},count", xb.join(","), vb.join(","))?;
        for cell in 0..g.n_cells() {
            let (tb, mut sc) = (cell / g.n_space_cells(), cell % g.n_space_cells());
            let mut idx = vec![0; d];
            for k in (0..d).rev() {
                idx[k] = sc % g.space_bins[k];
                sc /= g.space_bins[k];
            }
            let is: Vec<String> = idx.iter().map(usize::to_string).collect();
            let vs: Vec<String> = g.cell_value(cell).iter().map(|&v| fmt_real(v)).collect();
            writeln!(
                w,
                "{tb},{},{},{}",
                is.join(","),
                vs.join(","),
                self.counts[cell]
            )?;
        }
        Ok(())
    }
}

fn cell_coords(cell: usize, space_bins: &[usize]) -> Vec<usize> {
    let n_space: usize = space_bins.iter().product();
    let mut out = vec![cell / n_space];
    let mut sc = cell % n_space;
    let mut rest = vec![0; space_bins.len()];
    for k in (0..space_bins.len()).rev() {
        rest[k] = sc % space_bins[k];
        sc /= space_bins[k];
    }
    out.extend(rest);
    out
}

/// Per-cell mean of the recorded control over samples alive at the node,
/// clamped to the control set. Empty cells copy the nearest nonempty cell in
/// Manhattan distance over (time bin, space bins), ties to the lowest index.
pub fn regress_feedback<T: Real>(
    ens: &KilledEnsemble<T>,
    model: &ModelSpec<T>,
    bins: RegressionBins,
) -> Result<RegressionGrid<T>> {
    if !ens.has_details() {
        return Err(Error::invalid("regression needs recorded controls"));
    }
    if bins.time_bins == 0 || bins.space_bins == 0 {
        return Err(Error::invalid("regression needs at least one bin per axis"));
    }
    let (d, da) = (model.dim(), model.control_dim());
    if ens.dim() != d || ens.control_dim() != da {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: ens.dim(),
        });
    }
    let (x_lo, x_hi) = model.domain.bounding_box();
    let mut grid = GridPolicy {
        t_lo: T::zero(),
        t_hi: model.horizon,
        time_bins: bins.time_bins,
        x_lo,
        x_hi,
        space_bins: vec![bins.space_bins; d],
        control_dim: da,
        values: Vec::new(),
    };
    let n_cells = grid.n_cells();
    let mut sums = vec![T::zero(); n_cells * da];
    let mut sq = vec![T::zero(); n_cells];
    let mut counts = vec![0usize; n_cells];
    let mut time_seen = vec![false; bins.time_bins];
    let mut time_alive = vec![false; bins.time_bins];
    for (k, &t) in ens.grid().iter().enumerate() {
        let tb = grid.time_bin(t);
        time_seen[tb] = true;
        for i in 0..ens.n_particles() {
            if !ens.alive(i, k) {
                continue;
            }
            time_alive[tb] = true;
            let cell = tb * grid.n_space_cells() + grid.space_cell(ens.position(i, k));
            let a = ens.control(i, k).expect("details");
            for c in 0..da {
                sums[cell * da + c] += a[c];
            }
            sq[cell] += a[0] * a[0];
            counts[cell] += 1;
        }
    }
    if let Some(tb) = (0..bins.time_bins).find(|&b| time_seen[b] && !time_alive[b]) {
        return Err(Error::SurvivorDepletion {
            time: (model.horizon * T::from_usize_lossy(tb) / T::from_usize_lossy(bins.time_bins))
                .to_f64_lossy(),
            survivors: 0,
            required: 1,
        });
    }
    let mut values = vec![T::zero(); n_cells * da];
    let mut se = vec![T::zero(); n_cells];
    for cell in 0..n_cells {
        if counts[cell] == 0 {
            continue;
        }
        let n = T::from_usize_lossy(counts[cell]);
        for c in 0..da {
            values[cell * da + c] = sums[cell * da + c] / n;
        }
        model
            .control_set
            .clamp_in_place(&mut values[cell * da..(cell + 1) * da]);
        if counts[cell] > 1 {
            let m = sums[cell * da] / n;
            let var = ((sq[cell] / n - m * m) * n / (n - T::one())).max(T::zero());
            se[cell] = (var / n).sqrt();
        }
    }
    let filled: Vec<usize> = (0..n_cells).filter(|&c| counts[c] > 0).collect();
    if filled.is_empty() {
        return Err(Error::SurvivorDepletion {
            time: 0.0,
            survivors: 0,
            required: 1,
        });
    }
    let coords: Vec<Vec<usize>> = (0..n_cells)
        .map(|c| cell_coords(c, &grid.space_bins))
        .collect();
    for cell in 0..n_cells {
        if counts[cell] > 0 {
            continue;
        }
        let src = *filled
            .iter()
            .min_by_key(|&&f| {
                coords[cell]
                    .iter()
                    .zip(&coords[f])
                    .map(|(&a, &b)| a.abs_diff(b))
                    .sum::<usize>()
            })
            .expect("nonempty");
        for c in 0..da {
            values[cell * da + c] = values[src * da + c];
        }
    }
    grid.values = values;
    grid.validate()?;
    Ok(RegressionGrid { grid, counts, se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimicReport {
    pub j_open: f64,
    pub j_closed: f64,
    pub delta: f64,
    pub se: f64,
    pub se_open: f64,
    pub se_closed: f64,
    pub picard_iterations: usize,
    pub picard_converged: bool,
}

impl MimicReport {
    /// `compare.csv`: `J_open,J_closed,delta,se`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "J_open,J_closed,delta,se")?;
        writeln!(
            w,
            "{},{},{},{}",
            fmt_real(self.j_open),
            fmt_real(self.j_closed),
            fmt_real(self.delta),
            fmt_real(self.se)
        )
    }
}

/// Solves the open-loop fixed point, regresses the open-loop control onto a
/// feedback grid and runs that feedback against the same frozen flow. The
/// closed-loop run uses an independent seed derived from `config.seed`.
pub fn mimic_compare<T: Real>(
    model: &ModelSpec<T>,
    open: &OpenLoopControl<T>,
    bins: RegressionBins,
    config: &SimConfig<T>,
    initial: &InitialLaw<T>,
    picard: &PicardSettings<T>,
) -> Result<(MimicReport, RegressionGrid<T>)> {
    model.check_convexity()?;
    if !config.record_details {
        return Err(Error::invalid("mimic needs recorded controls"));
    }
    let control = Control::OpenLoop(open);
    let fp = solve_fixed_point(model, control, config, initial, picard)?;
    let mu = &fp.flow;
    let open_ens = simulate_killed(model, control, mu, config, initial)?;
    let regressed = regress_feedback(&open_ens, model, bins)?;
    let policy = regressed.policy();
    let closed_cfg = config.with_seed(mix_seed(config.seed, CLOSED_LOOP_TAG));
    let closed_ens = simulate_killed(model, Control::Feedback(&policy), mu, &closed_cfg, initial)?;
    let jo = eval_reward_conditional(&open_ens, mu, &model.reward)?;
    let jc = eval_reward_conditional(&closed_ens, mu, &model.reward)?;
    let (so, sc) = (jo.se_total.to_f64_lossy(), jc.se_total.to_f64_lossy());
    let report = MimicReport {
        j_open: jo.j_total.to_f64_lossy(),
        j_closed: jc.j_total.to_f64_lossy(),
        delta: (jc.j_total - jo.j_total).to_f64_lossy(),
        se: (so * so + sc * sc).sqrt(),
        se_open: so,
        se_closed: sc,
        picard_iterations: fp.iterations,
        picard_converged: fp.converged,
    };
    Ok((report, regressed))
}
