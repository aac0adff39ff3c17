//! LSQR least-squares oracle.
//!
//! Golub-Kahan bidiagonalization with the usual plane-rotation recurrences.
//! Convergence is certified against the normal equations directly: the
//! iteration's cheap estimate of the optimality residual only triggers an
//! explicit evaluation of Aᵀ(y - Ax), and the solve returns once that true
//! value drops below `tol * |Aᵀy|`.  Results feed the DS metric and the
//! fixed-point checks, so the certificate matters more than saving a few
//! products.

use crate::system::BlockSystem;
use crate::util::norm2;

#[derive(Debug, Clone)]
pub struct LsqrResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True when the normal-equation residual met the tolerance.
    pub converged: bool,
    /// Final |Aᵀ(y - Ax)|.
    pub normal_residual: f64,
    /// |Aᵀy|, the scale the tolerance is relative to.
    pub normal_rhs: f64,
}

/// LSQR on explicit forward/back closures.
pub fn lsqr_solve_op<F, B>(
    cols: usize,
    forward: F,
    back: B,
    y: &[f64],
    tol: f64,
    max_iters: usize,
) -> LsqrResult
where
    F: Fn(&[f64]) -> Vec<f64>,
    B: Fn(&[f64]) -> Vec<f64>,
{
    assert!(tol > 0.0, "tolerance must be positive");
    let normal_rhs = norm2(&back(y));
    let target = tol * normal_rhs;
    let mut x = vec![0.0; cols];

    let optimality = |x: &[f64]| -> f64 {
        let ax = forward(x);
        let r: Vec<f64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
        norm2(&back(&r))
    };

    if normal_rhs == 0.0 {
        // y is orthogonal to the range; x = 0 is already optimal.
        return LsqrResult { x, iterations: 0, converged: true, normal_residual: 0.0, normal_rhs };
    }

    let mut u = y.to_vec();
    let mut beta = norm2(&u);
    scale(&mut u, 1.0 / beta);
    let mut v = back(&u);
    let mut alpha = norm2(&v);
    scale(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let (mut phibar, mut rhobar) = (beta, alpha);

    let mut best_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        // Bidiagonalization step.
        let av = forward(&v);
        for (ui, avi) in u.iter_mut().zip(&av) {
            *ui = avi - alpha * *ui;
        }
        beta = norm2(&u);
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
        }
        let atu = back(&u);
        for (vi, ati) in v.iter_mut().zip(&atu) {
            *vi = ati - beta * *vi;
        }
        alpha = norm2(&v);
        if alpha > 0.0 {
            scale(&mut v, 1.0 / alpha);
        }

        // Plane rotation and iterate update.
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        let t1 = phi / rho;
        let t2 = -theta / rho;
        for i in 0..cols {
            x[i] += t1 * w[i];
            w[i] = v[i] + t2 * w[i];
        }

        // phibar*alpha*|c| estimates |Aᵀr|; verify explicitly before
        // declaring victory.
        let estimate = phibar * alpha * c.abs();
        if estimate <= target || alpha == 0.0 || beta == 0.0 {
            let true_norm = optimality(&x);
            best_norm = true_norm;
            if true_norm <= target {
                converged = true;
                break;
            }
            if alpha == 0.0 || beta == 0.0 {
                // Krylov space exhausted; nothing further to gain.
                break;
            }
        }
    }
    if best_norm.is_infinite() {
        best_norm = optimality(&x);
        if best_norm <= target {
            converged = true;
        }
    }
    LsqrResult {
        x,
        iterations,
        converged,
        normal_residual: best_norm,
        normal_rhs,
    }
}

/// LSQR on the block system (unaccounted whole-matrix products).
pub fn lsqr_solve(system: &BlockSystem, y: &[f64], tol: f64, max_iters: usize) -> LsqrResult {
    assert_eq!(y.len(), system.rows());
    lsqr_solve_op(
        system.cols(),
        |x| system.full_forward(x),
        |r| system.full_back(r),
        y,
        tol,
        max_iters,
    )
}

fn scale(v: &mut [f64], s: f64) {
    for t in v {
        *t *= s;
    }
}
