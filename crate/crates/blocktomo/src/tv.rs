//! Isotropic total-variation value and proximal operator.
//!
//! `tv_prox` approximately minimizes ||t - x||^2 + 2 w TV(t) by projection
//! iterations on the dual problem: projected gradient ascent with momentum
//! drives the dual field p toward the pointwise unit ball, and the primal
//! answer is read off as t = x + w div(p).  Forward differences with a zero
//! difference across the far edge (Neumann boundary) everywhere, so the
//! volume layout matches the solver's x-fastest voxel order.

use crate::error::{Error, Result};
use log::warn;

/// Iteration budget for the dual projection.
#[derive(Debug, Clone, Copy)]
pub struct TvParams {
    pub iterations: usize,
    /// Stop when the largest dual-field update falls below this.
    pub tolerance: f64,
}

impl Default for TvParams {
    fn default() -> Self {
        TvParams { iterations: 20, tolerance: 1e-4 }
    }
}

fn unpack_dims(dims: &[usize], len: usize) -> Result<(usize, usize, usize)> {
    let (nx, ny, nz) = match dims {
        [nx, ny] => (*nx, *ny, 1),
        [nx, ny, nz] => (*nx, *ny, *nz),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "image must be 2- or 3-dimensional, got {} dims",
                dims.len()
            )))
        }
    };
    if nx * ny * nz != len {
        return Err(Error::DimensionMismatch(format!(
            "dims {dims:?} describe {} values but the image has {len}",
            nx * ny * nz
        )));
    }
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidParameter("image dims must be positive".into()));
    }
    Ok((nx, ny, nz))
}

/// Isotropic total variation: sum over voxels of the Euclidean norm of the
/// forward-difference gradient.
pub fn tv_value(x: &[f64], dims: &[usize]) -> Result<f64> {
    let (nx, ny, nz) = unpack_dims(dims, x.len())?;
    let mut total = 0.0;
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let i = (iz * ny + iy) * nx + ix;
                let dx = if ix + 1 < nx { x[i + 1] - x[i] } else { 0.0 };
                let dy = if iy + 1 < ny { x[i + nx] - x[i] } else { 0.0 };
                let dz = if iz + 1 < nz { x[i + nx * ny] - x[i] } else { 0.0 };
                total += (dx * dx + dy * dy + dz * dz).sqrt();
            }
        }
    }
    Ok(total)
}

/// The quantity tv_prox drives down: ||t - x||^2 + 2 w TV(t).
pub fn prox_objective(t: &[f64], x: &[f64], dims: &[usize], weight: f64) -> Result<f64> {
    Ok(crate::util::dist2(t, x).powi(2) + 2.0 * weight * tv_value(t, dims)?)
}

/// Approximate minimizer of ||t - x||^2 + 2 w TV(t).
///
/// The result never has a larger objective than x itself; if rounding in a
/// degenerate case ever violates that, the input is returned unchanged and a
/// warning is logged.
pub fn tv_prox(x: &[f64], dims: &[usize], weight: f64, params: &TvParams) -> Result<Vec<f64>> {
    let (nx, ny, nz) = unpack_dims(dims, x.len())?;
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tv weight must be finite and nonnegative, got {weight}"
        )));
    }
    if weight == 0.0 {
        return Ok(x.to_vec());
    }
    // 1 / (c w) is the dual ascent step; c bounds the squared norm of the
    // difference operator (8 in 2D, 12 in 3D).
    let step = 1.0 / (if dims.len() == 2 { 8.0 } else { 12.0 } * weight);
    let n = x.len();
    let plane = nx * ny;
    // Dual field and its momentum extrapolation, one component per axis;
    // far-edge components stay zero.
    let mut p = vec![vec![0.0f64; n]; 3];
    let mut q = vec![vec![0.0f64; n]; 3];
    let mut t_field = vec![0.0f64; n];
    let mut momentum = 1.0f64;

    // t(q) = x + w div(q); overwritten into t_field.
    let primal = |dual: &[Vec<f64>], t_field: &mut [f64]| {
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = (iz * ny + iy) * nx + ix;
                    let mut d = dual[0][i] + dual[1][i] + dual[2][i];
                    if ix > 0 {
                        d -= dual[0][i - 1];
                    }
                    if iy > 0 {
                        d -= dual[1][i - nx];
                    }
                    if iz > 0 {
                        d -= dual[2][i - plane];
                    }
                    t_field[i] = x[i] + weight * d;
                }
            }
        }
    };

    for _ in 0..params.iterations {
        primal(&q, &mut t_field);
        // Ascend along grad(t(q)), then project each per-voxel dual vector
        // onto the unit ball; momentum extrapolates between iterates.
        let mut max_step = 0.0f64;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let blend = (momentum - 1.0) / next_momentum;
        momentum = next_momentum;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = (iz * ny + iy) * nx + ix;
                    let gx = if ix + 1 < nx { t_field[i + 1] - t_field[i] } else { 0.0 };
                    let gy = if iy + 1 < ny { t_field[i + nx] - t_field[i] } else { 0.0 };
                    let gz = if iz + 1 < nz { t_field[i + plane] - t_field[i] } else { 0.0 };
                    let cx = q[0][i] + step * gx;
                    let cy = q[1][i] + step * gy;
                    let cz = q[2][i] + step * gz;
                    let scale = 1.0 / (cx * cx + cy * cy + cz * cz).sqrt().max(1.0);
                    for (a, c) in [(0, cx), (1, cy), (2, cz)] {
                        let next = c * scale;
                        max_step = max_step.max((next - p[a][i]).abs());
                        q[a][i] = next + blend * (next - p[a][i]);
                        p[a][i] = next;
                    }
                }
            }
        }
        if max_step <= params.tolerance {
            break;
        }
    }

    let mut t = vec![0.0f64; n];
    primal(&p, &mut t);

    if prox_objective(&t, x, dims, weight)? > prox_objective(x, x, dims, weight)? {
        warn!("tv proximal step failed to decrease its objective; returning the input");
        return Ok(x.to_vec());
    }
    Ok(t)
}
