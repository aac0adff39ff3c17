//! Block-stochastic gradient epochs, automatic step tuning, and the
//! TV-regularized variant.
//!
//! The solver keeps per-block memories on the master: one forward-projection
//! vector z^j per column block and one back-projection vector g_hat^i per row
//! block.  An epoch refreshes the memories of the sampled (row, column) block
//! pairs, recomputes the stale residual r = y - sum_j z^j in ascending j
//! order, aggregates the update direction g = sum_i g_hat^i in ascending i
//! order, and moves only the sampled column tiles of the image.  Those two
//! orders, together with the shared block kernels, make the degenerate cases
//! exact: selecting everything with one block each reproduces full gradient
//! descent bit for bit, and a full column fraction reproduces the
//! gradient-averaging baseline bit for bit.
//!
//! Parallel phases fan tasks out with rayon and merge results in task order,
//! so results do not depend on the worker count.

use crate::block::{back_block, back_block_rows, forward_block, forward_block_rows};
use crate::error::{Error, Result};
use crate::importance::ImportanceSampler;
use crate::ledger::CostLedger;
use crate::partition::SamplingFractions;
use crate::system::{double_in_place, BlockSystem};
use crate::tv::{tv_prox, TvParams};
use crate::util::{dot, norm2, sample_indices};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Master-side solver state.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x_est: Vec<f64>,
    /// Forward memories z^j, one full-length measurement vector per column
    /// block; rows never touched stay zero.
    pub z: Vec<Vec<f64>>,
    /// Back-projection memories g_hat^i, one full-length image vector per
    /// row block; columns never touched stay zero.
    pub g_hat: Vec<Vec<f64>>,
    /// Stale residual y - sum_j z^j, recomputed once per epoch.
    pub r_vec: Vec<f64>,
    pub y: Vec<f64>,
    pub mu: f64,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    /// Update directions summed since the last tuning checkpoint.
    eud_accum: Vec<f64>,
    /// The previous checkpoint's summed direction.
    prev_eud: Option<Vec<f64>>,
    /// Angle between the two most recent summed directions, and its
    /// predecessor.
    pub theta: Option<f64>,
    pub theta_prev: Option<f64>,
    /// ||r|| at initialization and at every tuning checkpoint since.
    pub residual_checkpoints: Vec<f64>,
}

/// How an importance epoch picks one sub-detector tile per angle.
#[derive(Clone, Copy)]
pub enum TileMode<'a> {
    /// Footprint-weighted draws.
    Importance(&'a ImportanceSampler),
    /// Uniform draws; consumes the same random stream as `Importance` so
    /// runs with either mode stay seed-comparable.
    Uniform,
}

pub fn init_state(system: &BlockSystem, y: &[f64], mu0: f64, seed: u64) -> Result<SolverState> {
    if y.len() != system.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements for a {}-row system",
            y.len(),
            system.rows()
        )));
    }
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive and finite, got {mu0}"
        )));
    }
    let r_vec = y.to_vec();
    let norm0 = norm2(&r_vec);
    Ok(SolverState {
        x_est: vec![0.0; system.cols()],
        z: vec![vec![0.0; system.rows()]; system.col_blocks()],
        g_hat: vec![vec![0.0; system.cols()]; system.row_blocks()],
        r_vec,
        y: y.to_vec(),
        mu: mu0,
        epoch: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        eud_accum: vec![0.0; system.cols()],
        prev_eud: None,
        theta: None,
        theta_prev: None,
        residual_checkpoints: vec![norm0],
    })
}

/// One plain epoch: sample row and column blocks without replacement and
/// refresh every sampled pair in full.
pub fn bsgd_epoch(
    state: &mut SolverState,
    system: &BlockSystem,
    fractions: &SamplingFractions,
    ledger: &CostLedger,
) -> Result<()> {
    let (rows, cols) = sample_blocks(state, system, fractions);
    epoch_core(state, system, ledger, &rows, &cols, None)
}

/// Same epoch body with the selection supplied by the caller instead of
/// drawn from the state's stream.  Both index lists must be ascending and
/// nonempty.
pub fn bsgd_epoch_with_selection(
    state: &mut SolverState,
    system: &BlockSystem,
    rows: &[usize],
    cols: &[usize],
    ledger: &CostLedger,
) -> Result<()> {
    for (name, sel, count) in [
        ("row", rows, system.row_blocks()),
        ("column", cols, system.col_blocks()),
    ] {
        if sel.is_empty()
            || sel.windows(2).any(|w| w[0] >= w[1])
            || *sel.last().unwrap() >= count
        {
            return Err(Error::InvalidPartition(format!(
                "{name} selection must be ascending, distinct, and within {count} blocks"
            )));
        }
    }
    epoch_core(state, system, ledger, rows, cols, None)
}

/// One importance epoch: per sampled pair and per angle, only one
/// sub-detector tile's rows are refreshed.
pub fn bsgd_im_epoch(
    state: &mut SolverState,
    system: &BlockSystem,
    fractions: &SamplingFractions,
    tiles: TileMode<'_>,
    ledger: &CostLedger,
) -> Result<()> {
    let (rows, cols) = sample_blocks(state, system, fractions);
    let masks = draw_tile_masks(state, system, &rows, &cols, tiles);
    epoch_core(state, system, ledger, &rows, &cols, Some(&masks))
}

/// One TV-regularized epoch: a plain epoch, then a proximal smoothing step
/// every round(1 / (alpha gamma)) epochs so regularization work scales with
/// the fraction of the system touched.
pub fn bsgd_tv_epoch(
    state: &mut SolverState,
    system: &BlockSystem,
    fractions: &SamplingFractions,
    lambda: f64,
    params: &TvParams,
    ledger: &CostLedger,
) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tv strength must be finite and nonnegative, got {lambda}"
        )));
    }
    bsgd_epoch(state, system, fractions, ledger)?;
    let interval = (1.0 / fractions.epoch_fraction()).round().max(1.0) as usize;
    if state.epoch % interval == 0 {
        let k = system.geom().volume_side;
        let dims: Vec<usize> = vec![k; system.geom().dim()];
        state.x_est = tv_prox(&state.x_est, &dims, state.mu * lambda, params)?;
    }
    Ok(())
}

fn sample_blocks(
    state: &mut SolverState,
    system: &BlockSystem,
    fractions: &SamplingFractions,
) -> (Vec<usize>, Vec<usize>) {
    let m = system.row_blocks();
    let n = system.col_blocks();
    let rows = sample_indices(&mut state.rng, m, fractions.row_count(m));
    let cols = sample_indices(&mut state.rng, n, fractions.col_count(n));
    (rows, cols)
}

/// Per-task masked rows: block-local positions and their global row ids,
/// both ascending.  Draws are made sequentially in task order (row-major
/// over selected rows then columns, angles ascending within a task) so the
/// random stream is identical for both tile modes.
fn draw_tile_masks(
    state: &mut SolverState,
    system: &BlockSystem,
    rows: &[usize],
    cols: &[usize],
    tiles: TileMode<'_>,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let part = system.partition();
    let rpv = system.geom().rays_per_view();
    let ntiles = part.num_tiles();
    let mut masks = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        for &j in cols {
            let mut locals = Vec::new();
            let mut globals = Vec::new();
            for (apos, &a) in part.row_block_angles[i].iter().enumerate() {
                let unit: f64 = state.rng.random();
                let tile = match tiles {
                    TileMode::Importance(s) => s.draw(j, a, unit),
                    TileMode::Uniform => {
                        ((unit * ntiles as f64) as usize).min(ntiles - 1)
                    }
                };
                for &w in &part.subdetector_tiles[tile] {
                    locals.push(apos * rpv + w);
                    globals.push(a * rpv + w);
                }
            }
            masks.push((locals, globals));
        }
    }
    masks
}

fn epoch_core(
    state: &mut SolverState,
    system: &BlockSystem,
    ledger: &CostLedger,
    rows: &[usize],
    cols: &[usize],
    masks: Option<&[(Vec<usize>, Vec<usize>)]>,
) -> Result<()> {
    let part = system.partition();
    let x_tiles: Vec<Vec<f64>> = cols
        .iter()
        .map(|&j| system.gather_cols(&state.x_est, j))
        .collect();
    // Positions into `rows` and `cols`, row-major; the mask list follows the
    // same order.
    let tasks: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|ip| (0..cols.len()).map(move |jp| (ip, jp)))
        .collect();

    // Forward phase: servants project the sampled image tiles; the master
    // overwrites the matching rows of each z^j in task order.
    let fp: Vec<Vec<f64>> = tasks
        .par_iter()
        .enumerate()
        .map(|(t, &(ip, jp))| {
            let block = system.block(rows[ip], cols[jp]);
            match masks {
                None => forward_block(&block, &x_tiles[jp], ledger),
                Some(ms) => forward_block_rows(&block, &ms[t].0, &x_tiles[jp], ledger),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    for (t, vals) in fp.iter().enumerate() {
        let (i, j) = (rows[tasks[t].0], cols[tasks[t].1]);
        match masks {
            None => {
                for (pos, &row) in part.row_blocks[i].iter().enumerate() {
                    state.z[j][row] = vals[pos];
                }
            }
            Some(ms) => {
                for (pos, &row) in ms[t].1.iter().enumerate() {
                    state.z[j][row] = vals[pos];
                }
            }
        }
    }

    // Stale residual: subtract every memory, fresh or not, in ascending j.
    state.r_vec.copy_from_slice(&state.y);
    for zj in &state.z {
        for (rv, zv) in state.r_vec.iter_mut().zip(zj) {
            *rv -= zv;
        }
    }

    // Back phase: servants project the residual rows back; the master
    // overwrites the matching columns of each g_hat^i in task order.
    let r_rows: Vec<Vec<f64>> = match masks {
        None => rows.iter().map(|&i| system.gather_rows(&state.r_vec, i)).collect(),
        Some(ms) => ms
            .iter()
            .map(|(_, globals)| globals.iter().map(|&row| state.r_vec[row]).collect())
            .collect(),
    };
    let bp: Vec<Vec<f64>> = tasks
        .par_iter()
        .enumerate()
        .map(|(t, &(ip, jp))| {
            let block = system.block(rows[ip], cols[jp]);
            let mut vals = match masks {
                None => back_block(&block, &r_rows[ip], ledger)?,
                Some(ms) => back_block_rows(&block, &ms[t].0, &r_rows[t], ledger)?,
            };
            double_in_place(&mut vals);
            Ok(vals)
        })
        .collect::<Result<Vec<_>>>()?;
    for (t, vals) in bp.iter().enumerate() {
        let (i, j) = (rows[tasks[t].0], cols[tasks[t].1]);
        for (pos, &col) in part.col_blocks[j].iter().enumerate() {
            state.g_hat[i][col] = vals[pos];
        }
    }

    // Aggregate every memory, fresh or not, in ascending i; step only the
    // sampled column tiles.
    let mut g = vec![0.0; system.cols()];
    for gi in &state.g_hat {
        for (gc, gv) in g.iter_mut().zip(gi) {
            *gc += gv;
        }
    }
    for &j in cols {
        for &col in &part.col_blocks[j] {
            state.x_est[col] += state.mu * g[col];
        }
    }
    for (acc, gv) in state.eud_accum.iter_mut().zip(&g) {
        *acc += gv;
    }
    state.epoch += 1;
    Ok(())
}

/// Constants for the automatic step-size rule.
#[derive(Debug, Clone, Copy)]
pub struct TuningConstants {
    /// Growth factor: mu <- (1 + epsilon) mu on a sustained residual drop.
    pub epsilon: f64,
    /// Shrink factor: mu <- (1 - delta) mu on a sustained residual rise.
    pub delta: f64,
    /// Direction-angle jump that confirms a shrink.
    pub t1: f64,
    /// Direction-angle floor that confirms a shrink.
    pub t2: f64,
    /// Epochs between checkpoints; usually the row-block count so every
    /// summed direction covers about one pass over the data.
    pub period: usize,
    /// When false, a sustained residual rise alone triggers the shrink and
    /// the angle conditions are ignored.
    pub direction_gate: bool,
}

impl TuningConstants {
    pub fn defaults(row_blocks: usize) -> Self {
        TuningConstants {
            epsilon: 0.05,
            delta: 0.4,
            t1: 0.5,
            t2: 0.0,
            period: row_blocks.max(1),
            direction_gate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.t1 >= 0.0 && self.t1.is_finite() && self.t2.is_finite()) {
            return Err(Error::InvalidParameter(
                "angle thresholds must be finite and t1 nonnegative".into(),
            ));
        }
        if self.period == 0 {
            return Err(Error::InvalidParameter("tuning period must be positive".into()));
        }
        Ok(())
    }
}

/// Record a checkpoint if one is due and apply the step-size rule.  Call
/// after every epoch; between checkpoints this is a no-op.  Returns the
/// current step size.
pub fn maybe_tune(state: &mut SolverState, constants: &TuningConstants) -> Result<f64> {
    constants.validate()?;
    if state.epoch == 0 || state.epoch % constants.period != 0 {
        return Ok(state.mu);
    }
    let gbar = std::mem::replace(&mut state.eud_accum, vec![0.0; state.x_est.len()]);
    state.residual_checkpoints.push(norm2(&state.r_vec));
    state.theta_prev = state.theta;
    state.theta = state.prev_eud.as_ref().and_then(|prev| {
        let denom = norm2(&gbar) * norm2(prev);
        (denom > 0.0).then(|| dot(&gbar, prev) / denom)
    });
    state.prev_eud = Some(gbar);
    if state.epoch > constants.period {
        let history = state.residual_checkpoints.clone();
        tune_step(state, constants, &history);
    }
    Ok(state.mu)
}

/// The step-size rule itself.  `residual_history` lists ||r|| at successive
/// checkpoints, oldest first and ending with the current one.  Two straight
/// drops grow the step; two straight rises shrink it, subject to the
/// direction-angle gate when enabled.
pub fn tune_step(
    state: &mut SolverState,
    constants: &TuningConstants,
    residual_history: &[f64],
) -> f64 {
    let n = residual_history.len();
    if n < 3 {
        return state.mu;
    }
    let (r_old, r_mid, r_now) = (
        residual_history[n - 3],
        residual_history[n - 2],
        residual_history[n - 1],
    );
    if r_now < r_mid && r_mid < r_old {
        state.mu *= 1.0 + constants.epsilon;
    } else if r_now > r_mid && r_mid > r_old {
        let confirmed = if constants.direction_gate {
            match state.theta {
                None => {
                    warn!(
                        "update-direction angle undefined at epoch {}; step decrease skipped",
                        state.epoch
                    );
                    false
                }
                Some(th) => {
                    let jumped = state
                        .theta_prev
                        .map(|prev| (th - prev).abs() > constants.t1)
                        .unwrap_or(false);
                    jumped || th < constants.t2
                }
            }
        } else {
            true
        };
        if confirmed {
            state.mu *= 1.0 - constants.delta;
        }
    }
    state.mu
}
