//! Classical, stochastic, and proximal baseline solvers.
//!
//! Every baseline runs through the same block kernels as the block-stochastic
//! solver, in the same traversal order (ascending j when subtracting forward
//! partials, ascending i when summing back-projections).  That makes the
//! overlapping cases exact rather than merely close: plain gradient descent
//! equals a one-block solver epoch bit for bit, the gradient-averaging epoch
//! equals a full-column-fraction solver epoch bit for bit, and the proximal
//! methods with zero regularization collapse to gradient descent bit for bit.

use crate::block::{back_block, forward_block};
use crate::error::{Error, Result};
use crate::ledger::CostLedger;
use crate::partition::SamplingFractions;
use crate::system::{double_in_place, BlockSystem};
use crate::tv::{tv_prox, TvParams};
use crate::util::{dot, sample_indices};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// y - Ax through the hooked kernels, ascending j then i.
fn hooked_residual(
    system: &BlockSystem,
    x: &[f64],
    y: &[f64],
    ledger: &CostLedger,
) -> Result<Vec<f64>> {
    let mut r = y.to_vec();
    for j in 0..system.col_blocks() {
        let xj = system.gather_cols(x, j);
        for i in 0..system.row_blocks() {
            let vals = forward_block(&system.block(i, j), &xj, ledger)?;
            for (pos, &row) in system.partition().row_blocks[i].iter().enumerate() {
                r[row] -= vals[pos];
            }
        }
    }
    Ok(r)
}

/// A^T r (doubled when `scale2`) through the hooked kernels, ascending i
/// then j.
fn hooked_back(
    system: &BlockSystem,
    r: &[f64],
    scale2: bool,
    ledger: &CostLedger,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; system.cols()];
    for i in 0..system.row_blocks() {
        let ri = system.gather_rows(r, i);
        for j in 0..system.col_blocks() {
            let mut vals = back_block(&system.block(i, j), &ri, ledger)?;
            if scale2 {
                double_in_place(&mut vals);
            }
            system.scatter_cols(&mut out, &vals, j);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalMethod {
    /// Simultaneous iteration with row and column sum scaling.
    Sirt,
    /// Component averaging: rows weighted by sparsity-aware norms.
    Cav,
    /// Fixed-step gradient descent on ||y - Ax||^2.
    Gd,
    /// Gradient descent with the two-point secant step.
    GdBb,
}

#[derive(Debug, Clone)]
pub struct ClassicalState {
    pub method: ClassicalMethod,
    pub x: Vec<f64>,
    /// Relaxation for Sirt/Cav, fixed step for Gd, initial step for GdBb.
    pub step: f64,
    /// The step actually used last; differs from `step` only for GdBb.
    pub last_step: f64,
    pub iterations: usize,
    /// Sirt: reciprocal row sums.  Cav: sparsity-weighted row weights.
    row_scale: Vec<f64>,
    /// Sirt only: reciprocal column sums.
    col_scale: Vec<f64>,
    prev_x: Option<Vec<f64>>,
    prev_dir: Option<Vec<f64>>,
}

pub fn classical_init(
    method: ClassicalMethod,
    system: &BlockSystem,
    step: f64,
) -> Result<ClassicalState> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive and finite, got {step}"
        )));
    }
    let recip = |v: Vec<f64>| -> Vec<f64> {
        // Zero-sum rows or columns take no part in the update.
        v.into_iter().map(|s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect()
    };
    let (row_scale, col_scale) = match method {
        ClassicalMethod::Sirt => (recip(system.row_sums()), recip(system.col_sums())),
        ClassicalMethod::Cav => {
            let nnz = system.column_nnz_counts();
            let mut norms = vec![0.0f64; system.rows()];
            for i in 0..system.row_blocks() {
                for j in 0..system.col_blocks() {
                    let blk = system.block(i, j);
                    for local in 0..blk.nrows() {
                        let row = blk.row_ids()[local];
                        for (lc, a) in blk.row_entries(local) {
                            norms[row] += nnz[blk.col_ids()[lc]] as f64 * a * a;
                        }
                    }
                }
            }
            (recip(norms), Vec::new())
        }
        ClassicalMethod::Gd | ClassicalMethod::GdBb => (Vec::new(), Vec::new()),
    };
    Ok(ClassicalState {
        method,
        x: vec![0.0; system.cols()],
        step,
        last_step: step,
        iterations: 0,
        row_scale,
        col_scale,
        prev_x: None,
        prev_dir: None,
    })
}

pub fn classical_step(
    state: &mut ClassicalState,
    system: &BlockSystem,
    y: &[f64],
    ledger: &CostLedger,
) -> Result<()> {
    let r = hooked_residual(system, &state.x, y, ledger)?;
    match state.method {
        ClassicalMethod::Gd => {
            let d = hooked_back(system, &r, true, ledger)?;
            for (xv, dv) in state.x.iter_mut().zip(&d) {
                *xv += state.step * dv;
            }
        }
        ClassicalMethod::GdBb => {
            let d = hooked_back(system, &r, true, ledger)?;
            if let (Some(px), Some(pd)) = (&state.prev_x, &state.prev_dir) {
                // Secant step s's / s'q with s = x - x_prev and q the change
                // in the true gradient -d.
                let s: Vec<f64> = state.x.iter().zip(px).map(|(a, b)| a - b).collect();
                let q: Vec<f64> = pd.iter().zip(&d).map(|(a, b)| a - b).collect();
                let ss = dot(&s, &s);
                let sq = dot(&s, &q);
                if sq > 0.0 && sq.is_finite() && ss.is_finite() {
                    state.last_step = ss / sq;
                } else {
                    warn!(
                        "secant denominator {sq} unusable at iteration {}; keeping step {}",
                        state.iterations, state.last_step
                    );
                }
            }
            state.prev_x = Some(state.x.clone());
            state.prev_dir = Some(d.clone());
            for (xv, dv) in state.x.iter_mut().zip(&d) {
                *xv += state.last_step * dv;
            }
        }
        ClassicalMethod::Sirt => {
            let rw: Vec<f64> = r.iter().zip(&state.row_scale).map(|(rv, s)| rv * s).collect();
            let b = hooked_back(system, &rw, false, ledger)?;
            for ((xv, bv), cs) in state.x.iter_mut().zip(&b).zip(&state.col_scale) {
                *xv += state.step * cs * bv;
            }
        }
        ClassicalMethod::Cav => {
            let rw: Vec<f64> = r.iter().zip(&state.row_scale).map(|(rv, s)| rv * s).collect();
            let b = hooked_back(system, &rw, false, ledger)?;
            for (xv, bv) in state.x.iter_mut().zip(&b) {
                *xv += state.step * bv;
            }
        }
    }
    state.iterations += 1;
    Ok(())
}

/// Gradient averaging with per-row-block memories.
#[derive(Debug, Clone)]
pub struct SagState {
    pub x: Vec<f64>,
    pub mu: f64,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    g_hat: Vec<Vec<f64>>,
}

pub fn sag_init(system: &BlockSystem, mu: f64, seed: u64) -> Result<SagState> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {mu}")));
    }
    Ok(SagState {
        x: vec![0.0; system.cols()],
        mu,
        epoch: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        g_hat: vec![vec![0.0; system.cols()]; system.row_blocks()],
    })
}

/// Refresh the memories of `alpha M` sampled row blocks against the current
/// iterate and step along the sum of all memories.  Mirrors the solver's
/// random stream: the (no-op) full column draw is kept so seeds line up.
pub fn sag_epoch(
    state: &mut SagState,
    system: &BlockSystem,
    y: &[f64],
    fractions: &SamplingFractions,
    ledger: &CostLedger,
) -> Result<()> {
    let m = system.row_blocks();
    let n = system.col_blocks();
    let rows = sample_indices(&mut state.rng, m, fractions.row_count(m));
    let _cols = sample_indices(&mut state.rng, n, n);
    let part = system.partition();
    let x_tiles: Vec<Vec<f64>> = (0..n).map(|j| system.gather_cols(&state.x, j)).collect();
    for &i in &rows {
        let mut r_i = system.gather_rows(y, i);
        for j in 0..n {
            let vals = forward_block(&system.block(i, j), &x_tiles[j], ledger)?;
            for (rv, v) in r_i.iter_mut().zip(&vals) {
                *rv -= v;
            }
        }
        for j in 0..n {
            let mut vals = back_block(&system.block(i, j), &r_i, ledger)?;
            double_in_place(&mut vals);
            for (pos, &col) in part.col_blocks[j].iter().enumerate() {
                state.g_hat[i][col] = vals[pos];
            }
        }
    }
    let mut g = vec![0.0; system.cols()];
    for gi in &state.g_hat {
        for (gc, gv) in g.iter_mut().zip(gi) {
            *gc += gv;
        }
    }
    for (xv, gv) in state.x.iter_mut().zip(&g) {
        *xv += state.mu * gv;
    }
    state.epoch += 1;
    Ok(())
}

/// Variance-reduced stochastic gradient with a periodically refreshed
/// anchor.
#[derive(Debug, Clone)]
pub struct SvrgState {
    pub x: Vec<f64>,
    pub mu: f64,
    pub rng: ChaCha8Rng,
    pub inner_steps: usize,
    anchor_x: Vec<f64>,
    anchor_grads: Vec<Vec<f64>>,
    full_anchor: Vec<f64>,
}

pub fn svrg_init(system: &BlockSystem, mu: f64, seed: u64) -> Result<SvrgState> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {mu}")));
    }
    Ok(SvrgState {
        x: vec![0.0; system.cols()],
        mu,
        rng: ChaCha8Rng::seed_from_u64(seed),
        inner_steps: 0,
        anchor_x: Vec::new(),
        anchor_grads: Vec::new(),
        full_anchor: Vec::new(),
    })
}

/// 2 A_i^T (y_i - A_i x) for one row block, as a full-length image vector.
fn row_block_gradient(
    system: &BlockSystem,
    x: &[f64],
    y: &[f64],
    i: usize,
    ledger: &CostLedger,
) -> Result<Vec<f64>> {
    let n = system.col_blocks();
    let mut r_i = system.gather_rows(y, i);
    for j in 0..n {
        let xj = system.gather_cols(x, j);
        let vals = forward_block(&system.block(i, j), &xj, ledger)?;
        for (rv, v) in r_i.iter_mut().zip(&vals) {
            *rv -= v;
        }
    }
    let mut out = vec![0.0; system.cols()];
    for j in 0..n {
        let mut vals = back_block(&system.block(i, j), &r_i, ledger)?;
        double_in_place(&mut vals);
        system.scatter_cols(&mut out, &vals, j);
    }
    Ok(out)
}

fn refresh_anchor(
    state: &mut SvrgState,
    system: &BlockSystem,
    y: &[f64],
    ledger: &CostLedger,
) -> Result<()> {
    let m = system.row_blocks();
    state.anchor_x = state.x.clone();
    state.anchor_grads = (0..m)
        .map(|i| row_block_gradient(system, &state.anchor_x, y, i, ledger))
        .collect::<Result<Vec<_>>>()?;
    let mut full = vec![0.0; system.cols()];
    for gi in &state.anchor_grads {
        for (fc, gv) in full.iter_mut().zip(gi) {
            *fc += gv;
        }
    }
    state.full_anchor = full;
    Ok(())
}

/// One pass of M inner steps; the anchor refreshes every M steps, so once at
/// the top of each pass.
pub fn svrg_epoch(
    state: &mut SvrgState,
    system: &BlockSystem,
    y: &[f64],
    ledger: &CostLedger,
) -> Result<()> {
    let m = system.row_blocks();
    for _ in 0..m {
        if state.inner_steps % m == 0 {
            refresh_anchor(state, system, y, ledger)?;
        }
        let i = state.rng.random_range(0..m);
        let gi = row_block_gradient(system, &state.x, y, i, ledger)?;
        let mf = m as f64;
        for ((xv, gv), (av, fv)) in state
            .x
            .iter_mut()
            .zip(&gi)
            .zip(state.anchor_grads[i].iter().zip(&state.full_anchor))
        {
            *xv += state.mu * (mf * (gv - av) + fv);
        }
        state.inner_steps += 1;
    }
    Ok(())
}

/// Anchor self-consistency: the stored full gradient is the sum of the
/// stored per-block gradients at the anchor point.  Exposed for tests and
/// diagnostics.
pub fn svrg_anchor_gap(state: &SvrgState, system: &BlockSystem, y: &[f64]) -> f64 {
    if state.anchor_x.is_empty() {
        return 0.0;
    }
    let expect = system.gradient_dir(&system.residual(&state.anchor_x, y));
    state
        .full_anchor
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Proximal gradient iterations for the TV-regularized problem, with
/// optional momentum.
#[derive(Debug, Clone)]
pub struct ProxState {
    pub x: Vec<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub accelerated: bool,
    pub tv_params: TvParams,
    pub steps: usize,
    /// Momentum scalar t_k; stays 1 without acceleration.
    pub momentum: f64,
    prev_x: Vec<f64>,
}

pub fn prox_init(
    system: &BlockSystem,
    mu: f64,
    lambda: f64,
    accelerated: bool,
    tv_params: TvParams,
) -> Result<ProxState> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {mu}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tv strength must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(ProxState {
        x: vec![0.0; system.cols()],
        mu,
        lambda,
        accelerated,
        tv_params,
        steps: 0,
        momentum: 1.0,
        prev_x: vec![0.0; system.cols()],
    })
}

/// One proximal step: gradient move on ||y - Ax||^2 from the (possibly
/// extrapolated) point, then the TV proximal map with weight mu lambda.
pub fn prox_step(
    state: &mut ProxState,
    system: &BlockSystem,
    y: &[f64],
    ledger: &CostLedger,
) -> Result<()> {
    let w: Vec<f64> = if state.accelerated && state.steps > 0 {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * state.momentum * state.momentum).sqrt());
        let blend = (state.momentum - 1.0) / t_next;
        state.momentum = t_next;
        state
            .x
            .iter()
            .zip(&state.prev_x)
            .map(|(c, p)| c + blend * (c - p))
            .collect()
    } else {
        if state.accelerated && state.steps == 0 {
            // First step: t_1 = 1 makes the blend zero; advance the scalar.
            state.momentum = 0.5 * (1.0 + 5.0f64.sqrt());
        }
        state.x.clone()
    };
    let r = hooked_residual(system, &w, y, ledger)?;
    let d = hooked_back(system, &r, true, ledger)?;
    let v: Vec<f64> = w.iter().zip(&d).map(|(wv, dv)| wv + state.mu * dv).collect();
    let k = system.geom().volume_side;
    let dims: Vec<usize> = vec![k; system.geom().dim()];
    let next = tv_prox(&v, &dims, state.mu * state.lambda, &state.tv_params)?;
    state.prev_x = std::mem::replace(&mut state.x, next);
    state.steps += 1;
    Ok(())
}
