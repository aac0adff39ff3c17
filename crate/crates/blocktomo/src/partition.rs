//! Row/column block partitions, detector tilings, and sampling fractions.
//!
//! Row blocks group whole projection angles; column blocks are axis-aligned
//! equal-size image tiles; the detector is cut into a fixed grid of
//! sub-detector tiles reused at every angle.  Sampling fractions pick how
//! many row and column blocks an epoch touches and carry the node-budget
//! selection rule.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Mode};

#[derive(Debug, Clone)]
pub struct BlockPartition {
    /// Global row index sets I_i, ascending within each block.
    pub row_blocks: Vec<Vec<usize>>,
    /// Angle indices backing each row block, ascending.
    pub row_block_angles: Vec<Vec<usize>>,
    /// Global column index sets J_j, ascending within each block.
    pub col_blocks: Vec<Vec<usize>>,
    /// Voxel index ranges per column tile: half-open (lo, hi) per axis.
    pub col_tile_ranges: Vec<[(usize, usize); 3]>,
    /// Within-view detector indices per sub-detector tile; the same tiling
    /// applies at every angle.
    pub subdetector_tiles: Vec<Vec<usize>>,
    rays_per_view: usize,
}

impl BlockPartition {
    pub fn num_row_blocks(&self) -> usize {
        self.row_blocks.len()
    }

    pub fn num_col_blocks(&self) -> usize {
        self.col_blocks.len()
    }

    pub fn num_tiles(&self) -> usize {
        self.subdetector_tiles.len()
    }

    /// Block-local row positions of the given within-view detector indices
    /// for one angle of a row block.  Block rows are ordered angle-major, so
    /// the position of (angle, within) is the angle's position in the block
    /// times rays-per-view plus the within-view index.
    pub fn local_rows(&self, row_block: usize, angle: usize, within: &[usize]) -> Vec<usize> {
        let apos = self.row_block_angles[row_block]
            .iter()
            .position(|&a| a == angle)
            .expect("angle must belong to the row block");
        within.iter().map(|&w| apos * self.rays_per_view + w).collect()
    }

    /// Check that row and column blocks exactly partition the system and
    /// tiles exactly partition the detector.
    pub fn validate(&self, geom: &Geometry) -> Result<()> {
        let mut rows: Vec<usize> = self.row_blocks.iter().flatten().copied().collect();
        rows.sort_unstable();
        if rows != (0..geom.num_rays()).collect::<Vec<_>>() {
            return Err(Error::InvalidPartition("row blocks do not cover all rows".into()));
        }
        let mut cols: Vec<usize> = self.col_blocks.iter().flatten().copied().collect();
        cols.sort_unstable();
        if cols != (0..geom.num_voxels()).collect::<Vec<_>>() {
            return Err(Error::InvalidPartition(
                "column blocks do not cover all columns".into(),
            ));
        }
        let mut within: Vec<usize> = self.subdetector_tiles.iter().flatten().copied().collect();
        within.sort_unstable();
        if within != (0..geom.rays_per_view()).collect::<Vec<_>>() {
            return Err(Error::InvalidPartition(
                "detector tiles do not cover the detector".into(),
            ));
        }
        Ok(())
    }
}

/// Split `total` items into `parts` contiguous runs, remainder spread one
/// extra item per run from the first run onward.
fn spread_split(total: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = total / parts;
    let rem = total % parts;
    let mut runs = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < rem);
        runs.push((start, start + len));
        start += len;
    }
    runs
}

/// Factor `n` into `dims` factors, each pair as close as possible, sorted
/// ascending.  Returns None if `n` has no such factorization (never happens;
/// 1s pad the front).
fn near_equal_factors(n: usize, dims: usize) -> Vec<usize> {
    if dims == 1 {
        return vec![n];
    }
    // Largest divisor of n not exceeding the dims-th root.
    let root = (n as f64).powf(1.0 / dims as f64).round() as usize;
    let mut first = 1;
    for d in (1..=root.max(1)).rev() {
        if n % d == 0 {
            first = d;
            break;
        }
    }
    let mut rest = near_equal_factors(n / first, dims - 1);
    rest.insert(0, first);
    rest
}

/// Build a block partition: `m` row blocks of whole angles, `n` column tiles,
/// and `tiles_per_angle` sub-detector tiles.
pub fn make_partition(
    geom: &Geometry,
    m: usize,
    n: usize,
    tiles_per_angle: usize,
) -> Result<BlockPartition> {
    let n_angles = geom.angles_deg.len();
    if m == 0 || n == 0 || tiles_per_angle == 0 {
        return Err(Error::InvalidPartition("block and tile counts must be positive".into()));
    }
    if m > n_angles {
        return Err(Error::InvalidPartition(format!(
            "{m} row blocks but only {n_angles} angles"
        )));
    }
    if n > geom.num_voxels() {
        return Err(Error::InvalidPartition(format!(
            "{n} column blocks but only {} voxels",
            geom.num_voxels()
        )));
    }

    let rpv = geom.rays_per_view();
    let mut row_blocks = Vec::with_capacity(m);
    let mut row_block_angles = Vec::with_capacity(m);
    for (lo, hi) in spread_split(n_angles, m) {
        let angles: Vec<usize> = (lo..hi).collect();
        let rows: Vec<usize> = angles
            .iter()
            .flat_map(|&a| (a * rpv)..((a + 1) * rpv))
            .collect();
        row_block_angles.push(angles);
        row_blocks.push(rows);
    }

    // Column tiles: factor n over the volume axes, finest split on x so the
    // tile grid is traversed in the same order as the voxel layout.
    let k = geom.volume_side;
    let dim = geom.dim();
    let factors = near_equal_factors(n, dim);
    for &f in &factors {
        if k % f != 0 {
            return Err(Error::InvalidPartition(format!(
                "{n} column tiles need a {factors:?} grid, but {f} does not divide the volume side {k}"
            )));
        }
    }
    // factors ascending; x gets the largest count, z the smallest.
    let (gx, gy, gz) = match dim {
        2 => (factors[1], factors[0], 1),
        _ => (factors[2], factors[1], factors[0]),
    };
    let (sx, sy, sz) = (k / gx, k / gy, if dim == 2 { 1 } else { k / gz });
    let mut col_blocks = Vec::with_capacity(n);
    let mut col_tile_ranges = Vec::with_capacity(n);
    for tz in 0..gz {
        for ty in 0..gy {
            for tx in 0..gx {
                let (zr, yr, xr) = (
                    (tz * sz, (tz + 1) * sz),
                    (ty * sy, (ty + 1) * sy),
                    (tx * sx, (tx + 1) * sx),
                );
                let mut cols = Vec::with_capacity(sx * sy * sz);
                for iz in zr.0..zr.1 {
                    for iy in yr.0..yr.1 {
                        for ix in xr.0..xr.1 {
                            cols.push(geom.voxel_index(ix, iy, iz));
                        }
                    }
                }
                col_tile_ranges.push([xr, yr, zr]);
                col_blocks.push(cols);
            }
        }
    }

    // Sub-detector tiles over within-view indices.
    let det = geom.detector_elements;
    let subdetector_tiles = match geom.mode {
        Mode::Fan2d => {
            if tiles_per_angle > det {
                return Err(Error::InvalidPartition(format!(
                    "{tiles_per_angle} detector tiles but only {det} elements"
                )));
            }
            spread_split(det, tiles_per_angle)
                .into_iter()
                .map(|(lo, hi)| (lo..hi).collect())
                .collect()
        }
        Mode::Cone3d => {
            let tf = near_equal_factors(tiles_per_angle, 2);
            let (gu, gv) = (tf[1], tf[0]);
            if gu > det || gv > det {
                return Err(Error::InvalidPartition(format!(
                    "{tiles_per_angle} detector tiles need a {gv}x{gu} grid on {det} elements"
                )));
            }
            let u_runs = spread_split(det, gu);
            let v_runs = spread_split(det, gv);
            let mut tiles = Vec::with_capacity(tiles_per_angle);
            for &(vlo, vhi) in &v_runs {
                for &(ulo, uhi) in &u_runs {
                    let mut ids = Vec::with_capacity((vhi - vlo) * (uhi - ulo));
                    for v in vlo..vhi {
                        for u in ulo..uhi {
                            ids.push(v * det + u);
                        }
                    }
                    tiles.push(ids);
                }
            }
            tiles
        }
    };

    let part = BlockPartition {
        row_blocks,
        row_block_angles,
        col_blocks,
        col_tile_ranges,
        subdetector_tiles,
        rays_per_view: rpv,
    };
    part.validate(geom)?;
    Ok(part)
}

/// Fractions of row and column blocks an epoch selects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingFractions {
    pub alpha: f64,
    pub gamma: f64,
}

impl SamplingFractions {
    /// Validate against block counts: both fractions in (0, 1] and both
    /// selected counts positive integers.
    pub fn new(alpha: f64, gamma: f64, m: usize, n: usize) -> Result<Self> {
        for (name, frac, blocks) in [("alpha", alpha, m), ("gamma", gamma, n)] {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {frac}"
                )));
            }
            let count = frac * blocks as f64;
            if (count - count.round()).abs() > 1e-9 || count.round() < 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} * {blocks} = {count} is not a positive whole number of blocks"
                )));
            }
        }
        Ok(SamplingFractions { alpha, gamma })
    }

    /// Row blocks selected per epoch.
    pub fn row_count(&self, m: usize) -> usize {
        (self.alpha * m as f64).round() as usize
    }

    /// Column blocks selected per epoch.
    pub fn col_count(&self, n: usize) -> usize {
        (self.gamma * n as f64).round() as usize
    }

    /// Fraction of all blocks touched per epoch (the effective-epoch rate).
    pub fn epoch_fraction(&self) -> f64 {
        self.alpha * self.gamma
    }
}

/// Choose sampling fractions for a node budget: gamma = min(1, nodes/N),
/// alpha = nodes / (M N gamma), both rounded half-up to whole blocks and
/// clamped to at least one block.
pub fn select_alpha_gamma(node_num: usize, m: usize, n: usize) -> SamplingFractions {
    assert!(node_num >= 1 && m >= 1 && n >= 1);
    let gamma_raw = (node_num as f64 / n as f64).min(1.0);
    let gamma_count = (gamma_raw * n as f64).round().clamp(1.0, n as f64);
    let gamma = gamma_count / n as f64;
    let alpha_raw = node_num as f64 / (m as f64 * n as f64 * gamma);
    let alpha_count = (alpha_raw * m as f64).round().clamp(1.0, m as f64);
    let alpha = alpha_count / m as f64;
    SamplingFractions { alpha, gamma }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geometry;

    fn fan(k: usize, angles: usize) -> Geometry {
        build_geometry(
            Mode::Fan2d,
            50.0,
            50.0,
            30,
            1.0,
            (0..angles).map(|i| 360.0 * i as f64 / angles as f64).collect(),
            k,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn even_angle_split() {
        let g = fan(16, 36);
        let p = make_partition(&g, 4, 2, 4).unwrap();
        assert_eq!(p.num_row_blocks(), 4);
        for b in &p.row_block_angles {
            assert_eq!(b.len(), 9);
        }
        for rows in &p.row_blocks {
            assert_eq!(rows.len(), 9 * 30);
        }
    }

    #[test]
    fn remainder_angles_spread_from_first_block() {
        let g = fan(16, 36);
        let p = make_partition(&g, 5, 2, 4).unwrap();
        let sizes: Vec<usize> = p.row_block_angles.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![8, 7, 7, 7, 7]);
    }

    #[test]
    fn two_column_tiles_split_along_x() {
        let g = fan(16, 36);
        let p = make_partition(&g, 4, 2, 4).unwrap();
        assert_eq!(p.num_col_blocks(), 2);
        for (b, ranges) in p.col_blocks.iter().zip(&p.col_tile_ranges) {
            assert_eq!(b.len(), 128, "16x8 tiles");
            let [xr, yr, _] = *ranges;
            assert_eq!(yr, (0, 16), "full height");
            assert_eq!(xr.1 - xr.0, 8, "half width");
        }
        // Tile 0 holds the low-x half of every voxel row.
        assert!(p.col_blocks[0].contains(&0));
        assert!(!p.col_blocks[0].contains(&8));
    }

    #[test]
    fn square_and_cubic_tiles() {
        let g = fan(16, 36);
        let p = make_partition(&g, 4, 4, 4).unwrap();
        for ranges in &p.col_tile_ranges {
            assert_eq!(ranges[0].1 - ranges[0].0, 8);
            assert_eq!(ranges[1].1 - ranges[1].0, 8);
        }
        let g3 = build_geometry(Mode::Cone3d, 50.0, 50.0, 12, 1.0, vec![0.0, 90.0], 8, 1.0).unwrap();
        let p3 = make_partition(&g3, 2, 8, 4).unwrap();
        assert_eq!(p3.num_col_blocks(), 8);
        for b in &p3.col_blocks {
            assert_eq!(b.len(), 64, "eight 4x4x4 sub-volumes");
        }
        p3.validate(&g3).unwrap();
    }

    #[test]
    fn detector_tiles_cover_exactly() {
        let g = fan(16, 36);
        let p = make_partition(&g, 4, 2, 4).unwrap();
        let sizes: Vec<usize> = p.subdetector_tiles.iter().map(|t| t.len()).collect();
        assert_eq!(sizes, vec![8, 8, 7, 7], "30 elements over 4 tiles");
        let g3 = build_geometry(Mode::Cone3d, 50.0, 50.0, 12, 1.0, vec![0.0], 8, 1.0).unwrap();
        let p3 = make_partition(&g3, 1, 8, 4).unwrap();
        assert_eq!(p3.num_tiles(), 4);
        for t in &p3.subdetector_tiles {
            assert_eq!(t.len(), 36, "12x12 detector in 2x2 tiles");
        }
    }

    #[test]
    fn local_rows_follow_angle_major_order() {
        let g = fan(16, 36);
        let p = make_partition(&g, 4, 2, 4).unwrap();
        // Row block 1 holds angles 9..18; within-view 5 of angle 10 sits at
        // local position 1*30 + 5.
        let locals = p.local_rows(1, 10, &[5, 7]);
        assert_eq!(locals, vec![35, 37]);
        assert_eq!(p.row_blocks[1][35], 10 * 30 + 5);
    }

    #[test]
    fn partition_rejects_impossible_requests() {
        let g = fan(16, 36);
        assert!(make_partition(&g, 37, 2, 4).is_err(), "more blocks than angles");
        assert!(make_partition(&g, 4, 257, 4).is_err(), "more tiles than voxels");
        assert!(make_partition(&g, 4, 9, 4).is_err(), "3x3 grid cannot tile side 16");
        assert!(make_partition(&g, 4, 2, 31).is_err(), "more tiles than elements");
        assert!(make_partition(&g, 0, 2, 4).is_err());
    }

    #[test]
    fn fractions_validate_integrality() {
        assert!(SamplingFractions::new(0.25, 0.5, 4, 2).is_ok());
        assert!(SamplingFractions::new(0.3, 0.5, 4, 2).is_err(), "0.3*4 not integral");
        assert!(SamplingFractions::new(0.0, 0.5, 4, 2).is_err());
        assert!(SamplingFractions::new(1.1, 0.5, 4, 2).is_err());
        let f = SamplingFractions::new(0.25, 0.5, 4, 2).unwrap();
        assert_eq!(f.row_count(4), 1);
        assert_eq!(f.col_count(2), 1);
        assert!((f.epoch_fraction() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn node_budget_rule_matches_known_cases() {
        let f = select_alpha_gamma(2, 20, 8);
        assert!((f.gamma - 0.25).abs() < 1e-12);
        assert!((f.alpha - 0.05).abs() < 1e-12);
        let f = select_alpha_gamma(4, 8, 8);
        assert!((f.gamma - 0.5).abs() < 1e-12);
        assert!((f.alpha - 0.125).abs() < 1e-12);
        let f = select_alpha_gamma(8 * 4, 8, 4);
        assert!((f.gamma - 1.0).abs() < 1e-12);
        assert!((f.alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn node_budget_rule_always_yields_valid_fractions() {
        for node in 1..40 {
            for m in 1..12 {
                for n in 1..12 {
                    let f = select_alpha_gamma(node, m, n);
                    SamplingFractions::new(f.alpha, f.gamma, m, n).unwrap();
                    let tasks = f.row_count(m) * f.col_count(n);
                    let rounds = crate::ledger::plan_rounds(
                        node,
                        &vec![(0usize, 0usize); tasks],
                    );
                    assert_eq!(rounds.len(), tasks.div_ceil(node));
                }
            }
        }
    }
}
