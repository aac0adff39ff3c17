//! Evaluation metrics and calibrated measurement noise.

use crate::error::{Error, Result};
use crate::partition::SamplingFractions;
use crate::system::BlockSystem;
use crate::util::{dist2, norm2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Reported instead of +inf when a reconstruction matches the truth exactly.
pub const SNR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    /// Distance to the least-squares solution, when one is supplied.
    pub ds: Option<f64>,
    /// 20 log10(|x_true| / |x_rec - x_true|), capped at [`SNR_CAP_DB`].
    pub snr_db: f64,
    /// True when the cap replaced an infinite value.
    pub snr_capped: bool,
    /// Projection-space mismatch |y - A x_rec|.
    pub gap: f64,
}

/// Evaluate a reconstruction.  Runs outside the cluster accounting: scoring
/// a run must not change its cost totals.
pub fn compute_metrics(
    x_rec: &[f64],
    x_true: &[f64],
    x_lsq: Option<&[f64]>,
    system: &BlockSystem,
    y: &[f64],
) -> Metrics {
    let ds = x_lsq.map(|xl| dist2(x_rec, xl));
    let err = dist2(x_rec, x_true);
    let (snr_db, snr_capped) = if err == 0.0 {
        (SNR_CAP_DB, true)
    } else {
        let raw = 20.0 * (norm2(x_true) / err).log10();
        if raw > SNR_CAP_DB {
            (SNR_CAP_DB, true)
        } else {
            (raw, false)
        }
    };
    let gap = norm2(&system.residual(x_rec, y));
    Metrics { ds, snr_db, snr_capped, gap }
}

/// Epochs normalized by the fraction of blocks each epoch touches, so
/// methods updating subsets are cost-comparable.
pub fn effective_epochs(epoch: usize, fractions: &SamplingFractions) -> f64 {
    epoch as f64 * fractions.epoch_fraction()
}

/// Add white Gaussian noise scaled so that 20 log10(|y| / |e|) equals
/// `target_snr_db` exactly (up to rounding).  `f64::INFINITY` returns the
/// input unchanged.
pub fn add_noise(y: &[f64], target_snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if target_snr_db == f64::INFINITY {
        return Ok(y.to_vec());
    }
    if !target_snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target SNR must be finite or +inf, got {target_snr_db}"
        )));
    }
    let y_norm = norm2(y);
    if y_norm == 0.0 {
        return Err(Error::InvalidParameter(
            "cannot calibrate noise against an all-zero projection vector".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..y.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let e_norm = norm2(&e);
    if e_norm == 0.0 {
        return Err(Error::InvalidParameter("degenerate noise draw".into()));
    }
    let scale = y_norm / (e_norm * 10f64.powf(target_snr_db / 20.0));
    Ok(y.iter().zip(&e).map(|(&yi, &ei)| yi + scale * ei).collect())
}
