//! Footprint-based importance weights for sub-detector tile sampling.
//!
//! For a column block (a sub-volume) and a view angle, the weight of each
//! sub-detector tile is proportional to how much of the sub-volume's
//! projected footprint lands on that tile.  The footprint is estimated from
//! the bounding-box corners alone (4 in 2D, 8 in 3D) projected through the
//! source onto the detector, so it works without access to the assembled
//! matrix: in 2D the corner projections span an interval, in 3D their convex
//! hull is clipped against each tile rectangle.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Mode};
use crate::partition::BlockPartition;
use log::warn;

/// Precomputed cumulative tile distributions per (column block, angle).
#[derive(Debug, Clone)]
pub struct ImportanceSampler {
    /// cumulative[j][angle][tile] = P(tile' <= tile).
    cumulative: Vec<Vec<Vec<f64>>>,
}

impl ImportanceSampler {
    pub fn build(geom: &Geometry, partition: &BlockPartition) -> Self {
        let cumulative = (0..partition.num_col_blocks())
            .map(|j| {
                (0..geom.angles_deg.len())
                    .map(|a| {
                        let w = weights_for_view(geom, partition, j, a);
                        let mut acc = 0.0;
                        w.into_iter()
                            .map(|wi| {
                                acc += wi;
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ImportanceSampler { cumulative }
    }

    /// Map a uniform draw in [0,1) to a tile index by inverse CDF.
    pub fn draw(&self, col_block: usize, angle: usize, unit: f64) -> usize {
        let cum = &self.cumulative[col_block][angle];
        cum.iter().position(|&c| unit < c).unwrap_or(cum.len() - 1)
    }

    pub fn num_tiles(&self) -> usize {
        self.cumulative[0][0].len()
    }
}

/// Normalized tile weights for one column block at one view angle (given in
/// degrees, matched against the geometry's angle list).
pub fn importance_weights(
    geom: &Geometry,
    partition: &BlockPartition,
    col_block: usize,
    angle_deg: f64,
) -> Result<Vec<f64>> {
    if col_block >= partition.num_col_blocks() {
        return Err(Error::InvalidParameter(format!(
            "column block {col_block} out of range"
        )));
    }
    let angle = geom
        .angles_deg
        .iter()
        .position(|&a| (a - angle_deg).abs() < 1e-9)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("angle {angle_deg} deg is not a view of this scan"))
        })?;
    Ok(weights_for_view(geom, partition, col_block, angle))
}

fn weights_for_view(
    geom: &Geometry,
    partition: &BlockPartition,
    col_block: usize,
    angle: usize,
) -> Vec<f64> {
    let tiles = &partition.subdetector_tiles;
    let raw = footprint_overlaps(geom, partition, col_block, angle);
    let total: f64 = raw.iter().map(|r| r.unwrap_or(0.0)).sum();
    if raw.iter().any(|r| r.is_none()) || total <= 0.0 {
        warn!(
            "footprint of column block {col_block} at view {angle} missed the detector; \
             falling back to uniform tile weights"
        );
        return vec![1.0 / tiles.len() as f64; tiles.len()];
    }
    raw.into_iter().map(|r| r.unwrap() / total).collect()
}

/// Per-tile overlap measure, or None when the projection is degenerate.
fn footprint_overlaps(
    geom: &Geometry,
    partition: &BlockPartition,
    col_block: usize,
    angle: usize,
) -> Vec<Option<f64>> {
    let ranges = partition.col_tile_ranges[col_block];
    let h = geom.half_extent();
    let vs = geom.voxel_size;
    let world = |r: (usize, usize)| (-h + r.0 as f64 * vs, -h + r.1 as f64 * vs);
    let (x0, x1) = world(ranges[0]);
    let (y0, y1) = world(ranges[1]);

    match geom.mode {
        Mode::Fan2d => {
            let mut umin = f64::INFINITY;
            let mut umax = f64::NEG_INFINITY;
            for &x in &[x0, x1] {
                for &y in &[y0, y1] {
                    match project_to_detector(geom, angle, [x, y, 0.0]) {
                        Some((u, _)) => {
                            umin = umin.min(u);
                            umax = umax.max(u);
                        }
                        None => return vec![None; partition.num_tiles()],
                    }
                }
            }
            partition
                .subdetector_tiles
                .iter()
                .map(|tile| {
                    let (lo, hi) = tile_u_extent(geom, tile);
                    Some((umax.min(hi) - umin.max(lo)).max(0.0))
                })
                .collect()
        }
        Mode::Cone3d => {
            let (z0, z1) = world(ranges[2]);
            let mut pts = Vec::with_capacity(8);
            for &x in &[x0, x1] {
                for &y in &[y0, y1] {
                    for &z in &[z0, z1] {
                        match project_to_detector(geom, angle, [x, y, z]) {
                            Some(p) => pts.push(p),
                            None => return vec![None; partition.num_tiles()],
                        }
                    }
                }
            }
            let hull = convex_hull(&mut pts);
            partition
                .subdetector_tiles
                .iter()
                .map(|tile| {
                    let (ulo, uhi) = tile_u_extent(geom, tile);
                    let (vlo, vhi) = tile_v_extent(geom, tile);
                    Some(clipped_area(&hull, ulo, uhi, vlo, vhi))
                })
                .collect()
        }
    }
}

/// Project a world point through the source onto the detector plane,
/// returning detector-plane coordinates (u along the element axis, v along
/// +z).  None when the point does not project forward onto the detector.
fn project_to_detector(geom: &Geometry, angle: usize, p: [f64; 3]) -> Option<(f64, f64)> {
    let s = geom.source_pos(angle);
    let d = geom.detector_center(angle);
    let th = geom.angles_deg[angle].to_radians();
    let normal = [th.cos(), th.sin(), 0.0];
    let dir = [p[0] - s[0], p[1] - s[1], p[2] - s[2]];
    let denom = dir[0] * normal[0] + dir[1] * normal[1];
    if denom <= 1e-12 {
        return None;
    }
    let dist = (d[0] - s[0]) * normal[0] + (d[1] - s[1]) * normal[1];
    let t = dist / denom;
    let q = [s[0] + t * dir[0], s[1] + t * dir[1], s[2] + t * dir[2]];
    let axis_u = geom.detector_axis_u(angle);
    let u = (q[0] - d[0]) * axis_u[0] + (q[1] - d[1]) * axis_u[1];
    Some((u, q[2]))
}

/// Detector-axis extent covered by a tile's elements (2D and 3D share the
/// u axis; tiles are contiguous index grids by construction).
fn tile_u_extent(geom: &Geometry, tile: &[usize]) -> (f64, f64) {
    let n = geom.detector_elements;
    let offset =
        |i: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * geom.detector_pitch;
    let umin = tile.iter().map(|w| w % n).min().unwrap();
    let umax = tile.iter().map(|w| w % n).max().unwrap();
    (
        offset(umin) - 0.5 * geom.detector_pitch,
        offset(umax) + 0.5 * geom.detector_pitch,
    )
}

fn tile_v_extent(geom: &Geometry, tile: &[usize]) -> (f64, f64) {
    let n = geom.detector_elements;
    let offset =
        |i: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * geom.detector_pitch;
    let vmin = tile.iter().map(|w| w / n).min().unwrap();
    let vmax = tile.iter().map(|w| w / n).max().unwrap();
    (
        offset(vmin) - 0.5 * geom.detector_pitch,
        offset(vmax) + 0.5 * geom.detector_pitch,
    )
}

/// Monotone-chain convex hull; returns counterclockwise vertices.
fn convex_hull(pts: &mut Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts.clone();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter() {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Area of a convex polygon clipped to an axis-aligned rectangle
/// (Sutherland-Hodgman, then the shoelace formula).
fn clipped_area(hull: &[(f64, f64)], ulo: f64, uhi: f64, vlo: f64, vhi: f64) -> f64 {
    if hull.len() < 3 {
        return 0.0;
    }
    let mut poly: Vec<(f64, f64)> = hull.to_vec();
    // Each closure keeps the half-plane inside >= 0.
    let edges: [Box<dyn Fn((f64, f64)) -> f64>; 4] = [
        Box::new(move |p| p.0 - ulo),
        Box::new(move |p| uhi - p.0),
        Box::new(move |p| p.1 - vlo),
        Box::new(move |p| vhi - p.1),
    ];
    for edge in &edges {
        if poly.is_empty() {
            return 0.0;
        }
        let mut next = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let (dc, dp) = (edge(cur), edge(prev));
            if dp >= 0.0 && dc >= 0.0 {
                next.push(cur);
            } else if dp >= 0.0 || dc >= 0.0 {
                let t = dp / (dp - dc);
                let inter = (
                    prev.0 + t * (cur.0 - prev.0),
                    prev.1 + t * (cur.1 - prev.1),
                );
                next.push(inter);
                if dc >= 0.0 {
                    next.push(cur);
                }
            }
        }
        poly = next;
    }
    if poly.len() < 3 {
        return 0.0;
    }
    let mut area = 0.0;
    for i in 0..poly.len() {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % poly.len()];
        area += x1 * y2 - x2 * y1;
    }
    0.5 * area.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::assemble_block;
    use crate::geometry::build_geometry;
    use crate::partition::make_partition;

    #[test]
    fn weights_are_distributions() {
        let g2 = build_geometry(
            Mode::Fan2d,
            50.0,
            50.0,
            30,
            1.0,
            (0..12).map(|i| 30.0 * i as f64).collect(),
            8,
            1.0,
        )
        .unwrap();
        let p2 = make_partition(&g2, 3, 4, 4).unwrap();
        let g3 = build_geometry(Mode::Cone3d, 50.0, 50.0, 12, 1.0, vec![0.0, 45.0, 120.0], 8, 1.0)
            .unwrap();
        let p3 = make_partition(&g3, 1, 8, 4).unwrap();
        for (g, p) in [(&g2, &p2), (&g3, &p3)] {
            for j in 0..p.num_col_blocks() {
                for a in 0..g.angles_deg.len() {
                    let w = weights_for_view(g, p, j, a);
                    assert_eq!(w.len(), p.num_tiles());
                    assert!(w.iter().all(|&x| x >= 0.0));
                    let s: f64 = w.iter().sum();
                    assert!((s - 1.0).abs() <= 1e-12, "sum {s}");
                }
            }
        }
    }

    #[test]
    fn upper_left_subvolume_projects_to_high_detector_tiles() {
        // Wide detector so the footprint stays well inside; at angle 0 the
        // detector axis is +y, so a +y sub-volume lands at positive u.
        let g = build_geometry(Mode::Fan2d, 100.0, 100.0, 40, 1.0, vec![0.0], 16, 1.0).unwrap();
        let p = make_partition(&g, 1, 4, 4).unwrap();
        // Tile grid is 2x2 over the volume; block index 2 is the low-x,
        // high-y quadrant.
        let w = importance_weights(&g, &p, 2, 0.0).unwrap();
        assert_eq!(w.len(), 4);
        assert!(w[0] == 0.0 && w[1] == 0.0, "negative-u tiles see nothing, got {w:?}");
        assert!(w[2] > 0.0 && w[3] > 0.0, "footprint spans the positive-u tiles, got {w:?}");
        assert!(importance_weights(&g, &p, 2, 33.0).is_err(), "unknown angle");
    }

    #[test]
    fn top_subvolumes_weight_top_detector_tiles_in_3d() {
        let g = build_geometry(Mode::Cone3d, 60.0, 60.0, 16, 1.0, vec![0.0, 90.0], 8, 1.0).unwrap();
        let p = make_partition(&g, 1, 8, 4).unwrap();
        // Blocks 4..8 are the top-z sub-volumes; tiles 2,3 are the top-v
        // detector row.
        for j in 4..8 {
            for a in 0..2 {
                let w = weights_for_view(&g, &p, j, a);
                let top = w[2] + w[3];
                let bottom = w[0] + w[1];
                assert!(
                    top > bottom + 0.5,
                    "top sub-volume {j} view {a}: top {top} vs bottom {bottom}"
                );
            }
        }
    }

    #[test]
    fn off_detector_footprint_falls_back_to_uniform() {
        // A detector far narrower than the magnified volume footprint: corner
        // tiles of the volume project entirely off it.
        let g = build_geometry(Mode::Fan2d, 20.0, 20.0, 4, 0.05, vec![0.0], 16, 1.0).unwrap();
        let p = make_partition(&g, 1, 16, 4).unwrap();
        // Block 0 covers x,y in [-8,-4]; at angle 0 the detector axis is +y,
        // so its footprint sits around u in [-27,-10], far past the detector
        // half-width of 0.1.
        let w = importance_weights(&g, &p, 0, 0.0).unwrap();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-12), "uniform fallback, got {w:?}");
    }

    #[test]
    fn argmax_tile_matches_sparsity_pattern_oracle() {
        let g = build_geometry(
            Mode::Fan2d,
            50.0,
            50.0,
            24,
            1.0,
            (0..18).map(|i| 20.0 * i as f64).collect(),
            8,
            1.0,
        )
        .unwrap();
        let p = make_partition(&g, 1, 4, 4).unwrap();
        let mut agree = 0usize;
        let mut total = 0usize;
        for j in 0..p.num_col_blocks() {
            let block = assemble_block(
                &g,
                &(0..g.num_rays()).collect::<Vec<_>>(),
                &p.col_blocks[j],
            )
            .unwrap();
            for a in 0..g.angles_deg.len() {
                // Oracle: count nonzeros of the true block per tile at this
                // angle.
                let nnz_per_tile: Vec<usize> = p
                    .subdetector_tiles
                    .iter()
                    .map(|tile| {
                        tile.iter()
                            .map(|&w| {
                                let row = a * g.rays_per_view() + w;
                                block.row_entries(row).count()
                            })
                            .sum()
                    })
                    .collect();
                let w = weights_for_view(&g, &p, j, a);
                // Ties count as agreement when the argmax sets intersect.
                let wmax = w.iter().cloned().fold(f64::MIN, f64::max);
                let omax = *nnz_per_tile.iter().max().unwrap();
                total += 1;
                if (0..w.len()).any(|t| w[t] == wmax && nnz_per_tile[t] == omax) {
                    agree += 1;
                }
            }
        }
        assert!(
            agree * 100 >= total * 95,
            "footprint argmax agrees with sparsity argmax in {agree}/{total} cases"
        );
    }
}
