//! Siddon-style ray tracing through the voxel grid.
//!
//! A ray is clipped to the grid, the parametric crossings with all interior
//! voxel planes are merged into one sorted list, and each surviving interval
//! contributes (voxel index, intersection length).  The voxel of an interval
//! is read off at the interval midpoint, which resolves rays through voxel
//! corners or along grid lines with a half-open `[low, high)` convention and
//! never counts a boundary twice.

use crate::geometry::{Geometry, Mode};

/// Sparse system-matrix row for one ray: `(voxel index, length)` pairs with
/// strictly ascending voxel indices.  Rays that miss the grid yield an empty
/// vector.
pub fn siddon_trace(geom: &Geometry, ray: usize) -> Vec<(usize, f64)> {
    let (p0, p1) = geom.ray_endpoints(ray);
    trace_segment(geom, p0, p1)
}

/// Trace an arbitrary segment through the grid of `geom`.
///
/// `siddon_trace` delegates here; tests and footprint estimation use it with
/// endpoints that are not source/detector pairs.
pub fn trace_segment(geom: &Geometry, p0: [f64; 3], p1: [f64; 3]) -> Vec<(usize, f64)> {
    let k = geom.volume_side;
    let vs = geom.voxel_size;
    let h = geom.half_extent();
    // Axis extents and interior plane counts; in 2D the z axis is a single
    // slab of one voxel thickness so it clips but never subdivides.
    let (bounds, cells): ([(f64, f64); 3], [usize; 3]) = match geom.mode {
        Mode::Fan2d => (
            [(-h, h), (-h, h), (-0.5 * vs, 0.5 * vs)],
            [k, k, 1],
        ),
        Mode::Cone3d => ([(-h, h), (-h, h), (-h, h)], [k, k, k]),
    };

    let d = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let seg_len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if seg_len == 0.0 {
        return Vec::new();
    }

    // Clip the parameter range to the grid box.
    let (mut tmin, mut tmax) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        let (lo, hi) = bounds[ax];
        if d[ax] == 0.0 {
            if p0[ax] < lo || p0[ax] >= hi {
                return Vec::new();
            }
        } else {
            let (mut t1, mut t2) = ((lo - p0[ax]) / d[ax], (hi - p0[ax]) / d[ax]);
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            tmin = tmin.max(t1);
            tmax = tmax.min(t2);
        }
    }
    if !(tmin < tmax) {
        return Vec::new();
    }

    // All interior plane crossings inside (tmin, tmax), merged across axes.
    let mut ts: Vec<f64> = Vec::with_capacity(2 * k + 2);
    ts.push(tmin);
    ts.push(tmax);
    for ax in 0..3 {
        if d[ax] == 0.0 {
            continue;
        }
        let lo = bounds[ax].0;
        for plane in 1..cells[ax] {
            let t = (lo + plane as f64 * vs - p0[ax]) / d[ax];
            if t > tmin && t < tmax {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        if tb <= ta {
            continue;
        }
        let tm = 0.5 * (ta + tb);
        let mut idx = [0usize; 3];
        for ax in 0..3 {
            let pos = p0[ax] + tm * d[ax];
            let cell = ((pos - bounds[ax].0) / vs).floor() as isize;
            idx[ax] = cell.clamp(0, cells[ax] as isize - 1) as usize;
        }
        let col = (idx[2] * k + idx[1]) * k + idx[0];
        out.push((col, (tb - ta) * seg_len));
    }

    // Ascending column order; corner-degenerate intervals can land in the
    // same voxel, so merge duplicates by summing.
    out.sort_by_key(|&(col, _)| col);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(out.len());
    for (col, len) in out {
        match merged.last_mut() {
            Some((c, l)) if *c == col => *l += len,
            _ => merged.push((col, len)),
        }
    }
    merged
}

/// Chord length of the segment inside the grid box (slab clipping only).
///
/// Independent of the voxel walk; used as the oracle for the invariant that
/// per-voxel lengths sum to the in-grid chord.
pub fn chord_length(geom: &Geometry, p0: [f64; 3], p1: [f64; 3]) -> f64 {
    let vs = geom.voxel_size;
    let h = geom.half_extent();
    let bounds: [(f64, f64); 3] = match geom.mode {
        Mode::Fan2d => [(-h, h), (-h, h), (-0.5 * vs, 0.5 * vs)],
        Mode::Cone3d => [(-h, h), (-h, h), (-h, h)],
    };
    let d = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let seg_len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let (mut tmin, mut tmax) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        let (lo, hi) = bounds[ax];
        if d[ax] == 0.0 {
            if p0[ax] < lo || p0[ax] >= hi {
                return 0.0;
            }
        } else {
            let (mut t1, mut t2) = ((lo - p0[ax]) / d[ax], (hi - p0[ax]) / d[ax]);
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            tmin = tmin.max(t1);
            tmax = tmax.min(t2);
        }
    }
    if tmin < tmax {
        (tmax - tmin) * seg_len
    } else {
        0.0
    }
}
