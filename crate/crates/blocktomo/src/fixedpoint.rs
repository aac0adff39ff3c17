//! Stationary-point analysis for the block-iterative update.
//!
//! One epoch of the solver is an affine map on the augmented state
//! u = [z; g; x], where z stacks the per-column-block forward memories,
//! g stacks the per-row-block gradient memories, and x is the image.
//! This module builds that map two ways: a structured, matrix-free
//! application that reuses the sparse blocks (cheap, any size), and an
//! explicit dense recursion matrix for desk-scale systems.  Both are used
//! to certify that the least-squares solution, together with memories
//! computed at it, is a fixed point for every admissible block selection.

use crate::error::{Error, Result};
use crate::lsqr::{lsqr_solve, LsqrResult};
use crate::system::{double_in_place, BlockSystem};
use crate::util::{norm2, sample_indices};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hard ceiling on image columns for the dense recursion matrix.
const DENSE_COL_LIMIT: usize = 256;
/// Hard ceiling on total entries of the dense recursion matrix.
const DENSE_ENTRY_LIMIT: usize = 32_000_000;

/// Which parts of the augmented state one epoch refreshes.
///
/// An entry (i, j) in `z_pairs` recomputes the rows of z^j covered by row
/// block i; an entry in `g_pairs` recomputes the columns of g^i covered by
/// column block j; `x_blocks` lists the column blocks whose image tiles
/// take the gradient step.  The solver always uses the aligned form where
/// both pair lists are the same product set, but the fixed-point property
/// is selection-free, so independent lists are allowed here.
#[derive(Debug, Clone)]
pub struct SelectionMasks {
    pub z_pairs: Vec<(usize, usize)>,
    pub g_pairs: Vec<(usize, usize)>,
    pub x_blocks: Vec<usize>,
}

impl SelectionMasks {
    /// Every pair refreshed, every tile stepped.
    pub fn full(m: usize, n: usize) -> Self {
        let rows: Vec<usize> = (0..m).collect();
        let cols: Vec<usize> = (0..n).collect();
        Self::consistent(&rows, &cols)
    }

    /// The selection the solver itself would make from these block draws:
    /// both refresh sets are the full product of the drawn rows and
    /// columns, and exactly the drawn column tiles step.
    pub fn consistent(rows: &[usize], cols: &[usize]) -> Self {
        let mut pairs = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                pairs.push((i, j));
            }
        }
        SelectionMasks {
            z_pairs: pairs.clone(),
            g_pairs: pairs,
            x_blocks: cols.to_vec(),
        }
    }

    /// A random draw in the aligned form the solver uses.
    pub fn random_consistent<R: Rng>(rng: &mut R, m: usize, n: usize) -> Self {
        let a = rng.random_range(1..=m);
        let g = rng.random_range(1..=n);
        let rows = sample_indices(rng, m, a);
        let cols = sample_indices(rng, n, g);
        Self::consistent(&rows, &cols)
    }

    /// Three unrelated nonempty draws: refresh sets need not align with
    /// each other or with the stepped tiles.
    pub fn random_independent<R: Rng>(rng: &mut R, m: usize, n: usize) -> Self {
        let z_pairs = random_pair_subset(rng, m, n);
        let g_pairs = random_pair_subset(rng, m, n);
        let mut x_blocks: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.5).collect();
        if x_blocks.is_empty() {
            x_blocks.push(rng.random_range(0..n));
        }
        SelectionMasks { z_pairs, g_pairs, x_blocks }
    }

    fn validate(&self, m: usize, n: usize) -> Result<()> {
        for (name, pairs) in [("z", &self.z_pairs), ("g", &self.g_pairs)] {
            if pairs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidPartition(format!(
                    "{name} refresh pairs must be strictly ascending"
                )));
            }
            if pairs.iter().any(|&(i, j)| i >= m || j >= n) {
                return Err(Error::InvalidPartition(format!(
                    "{name} refresh pair out of range for {m}x{n} blocks"
                )));
            }
        }
        if self.x_blocks.windows(2).any(|w| w[0] >= w[1])
            || self.x_blocks.iter().any(|&j| j >= n)
        {
            return Err(Error::InvalidPartition(format!(
                "stepped column blocks must be ascending, distinct, and below {n}"
            )));
        }
        Ok(())
    }
}

fn random_pair_subset<R: Rng>(rng: &mut R, m: usize, n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.random::<f64>() < 0.5 {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((rng.random_range(0..m), rng.random_range(0..n)));
    }
    pairs
}

/// Augmented state in structured form, mirroring the solver's memories.
#[derive(Debug, Clone)]
pub struct AugState {
    /// One full-length measurement vector per column block.
    pub z: Vec<Vec<f64>>,
    /// One full-length image vector per row block.
    pub g_hat: Vec<Vec<f64>>,
    pub x: Vec<f64>,
}

impl AugState {
    pub fn zeros(system: &BlockSystem) -> Self {
        AugState {
            z: vec![vec![0.0; system.rows()]; system.col_blocks()],
            g_hat: vec![vec![0.0; system.cols()]; system.row_blocks()],
            x: vec![0.0; system.cols()],
        }
    }

    /// Stack into [z (block-major); g (block-major); x], the ordering the
    /// dense recursion matrix acts on.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for zj in &self.z {
            out.extend_from_slice(zj);
        }
        for gi in &self.g_hat {
            out.extend_from_slice(gi);
        }
        out.extend_from_slice(&self.x);
        out
    }

    pub fn dim(&self) -> usize {
        self.z.iter().map(Vec::len).sum::<usize>()
            + self.g_hat.iter().map(Vec::len).sum::<usize>()
            + self.x.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.flatten())
    }

    /// Euclidean distance to another state of the same shape.
    pub fn distance(&self, other: &AugState) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        assert_eq!(a.len(), b.len(), "augmented states differ in shape");
        let mut acc = 0.0;
        for (av, bv) in a.iter().zip(&b) {
            let d = av - bv;
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// One epoch of the update applied in place, matrix-free and
/// single-threaded.  Follows the solver's operation order exactly:
/// refresh the selected z rows from the current image, rebuild the
/// residual by subtracting every memory in ascending block order, refresh
/// the selected g columns with twice the back projection, aggregate every
/// g memory in ascending block order, then step the selected image tiles.
pub fn apply_epoch(
    system: &BlockSystem,
    y: &[f64],
    mu: f64,
    masks: &SelectionMasks,
    state: &mut AugState,
) -> Result<()> {
    masks.validate(system.row_blocks(), system.col_blocks())?;
    if y.len() != system.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements for a {}-row system",
            y.len(),
            system.rows()
        )));
    }
    if state.z.len() != system.col_blocks()
        || state.g_hat.len() != system.row_blocks()
        || state.x.len() != system.cols()
    {
        return Err(Error::DimensionMismatch(
            "augmented state shape does not match the system".into(),
        ));
    }
    let part = system.partition();
    for &(i, j) in &masks.z_pairs {
        let xj = system.gather_cols(&state.x, j);
        let vals = system.block(i, j).forward(&xj);
        for (pos, &row) in part.row_blocks[i].iter().enumerate() {
            state.z[j][row] = vals[pos];
        }
    }
    let mut r = y.to_vec();
    for zj in &state.z {
        for (rv, zv) in r.iter_mut().zip(zj) {
            *rv -= zv;
        }
    }
    for &(i, j) in &masks.g_pairs {
        let ri = system.gather_rows(&r, i);
        let mut vals = system.block(i, j).back(&ri);
        double_in_place(&mut vals);
        for (pos, &col) in part.col_blocks[j].iter().enumerate() {
            state.g_hat[i][col] = vals[pos];
        }
    }
    let mut g = vec![0.0; system.cols()];
    for gi in &state.g_hat {
        for (gc, gv) in g.iter_mut().zip(gi) {
            *gc += gv;
        }
    }
    for &j in &masks.x_blocks {
        for &col in &part.col_blocks[j] {
            state.x[col] += mu * g[col];
        }
    }
    Ok(())
}

/// The candidate fixed point: x from the least-squares solver, z and g
/// recomputed at it the same way a full epoch would.
pub fn stationary_state(
    system: &BlockSystem,
    y: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(AugState, LsqrResult)> {
    if y.len() != system.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements for a {}-row system",
            y.len(),
            system.rows()
        )));
    }
    let sol = lsqr_solve(system, y, tol, max_iters);
    let mut state = AugState::zeros(system);
    state.x = sol.x.clone();
    let full = SelectionMasks::full(system.row_blocks(), system.col_blocks());
    // A zero-step full refresh writes exactly z = A x blockwise and
    // g = 2 A^T r without moving the image.
    apply_epoch(system, y, 0.0, &full, &mut state)?;
    Ok((state, sol))
}

/// Row-major dense matrix, just enough for the recursion assembly.
#[derive(Debug, Clone)]
pub struct DenseMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec shape mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }
}

fn matmul(a: &DenseMat, b: &DenseMat) -> DenseMat {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = DenseMat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.at(i, k);
            if av == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += av * b.at(k, j);
            }
        }
    }
    out
}

/// The epoch map written out as one affine recursion on the stacked state.
///
/// Block layout of the state vector: z occupies the first N*r entries
/// (block-major), g the next M*c, and x the final c.  `m_matrix` is the
/// linear part; the constant part depends on the measurements and is
/// rebuilt inside [`AugmentedSystem::apply`].
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub m_blocks: usize,
    pub n_blocks: usize,
    pub rows: usize,
    pub cols: usize,
    pub mu: f64,
    /// N*r x c: the system matrix repeated down the column blocks, each
    /// band restricted to its block's columns.
    pub a_bar: DenseMat,
    /// M*c x r: the transpose repeated down the row blocks, each band
    /// restricted to its block's rows.
    pub a_t_bar: DenseMat,
    /// r x N*r horizontal concatenation of identities; collapses stacked
    /// z memories into their sum.
    pub i_bar_nr: DenseMat,
    /// c x M*c horizontal concatenation of identities; collapses stacked
    /// g memories into their sum.
    pub i_bar_mc: DenseMat,
    /// Diagonal 0/1 refresh selector on z, length N*r.
    pub r1: Vec<f64>,
    /// Diagonal 0/1 refresh selector on g, length M*c.
    pub r2: Vec<f64>,
    /// Diagonal 0/1 step selector on x, length c.
    pub r3: Vec<f64>,
    /// The full (N*r + M*c + c) square linear part of the epoch map.
    pub m_matrix: DenseMat,
}

impl AugmentedSystem {
    pub fn state_dim(&self) -> usize {
        self.n_blocks * self.rows + self.m_blocks * self.cols + self.cols
    }

    /// One epoch: m_matrix * state + b(y), where b collects the
    /// measurement terms 2 R2 A_T_bar y and its image-step image.
    pub fn apply(&self, state: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        if state.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, recursion expects {d}",
                state.len()
            )));
        }
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} measurements for a {}-row recursion",
                y.len(),
                self.rows
            )));
        }
        let mut out = self.m_matrix.matvec(state);
        let bt = self.a_t_bar.matvec(y);
        let og = self.n_blocks * self.rows;
        let ox = og + self.m_blocks * self.cols;
        for (p, &v) in bt.iter().enumerate() {
            out[og + p] += 2.0 * self.r2[p] * v;
        }
        for col in 0..self.cols {
            let mut acc = 0.0;
            for i in 0..self.m_blocks {
                acc += 2.0 * self.r2[i * self.cols + col] * bt[i * self.cols + col];
            }
            out[ox + col] += self.mu * self.r3[col] * acc;
        }
        Ok(out)
    }
}

/// Assemble the dense epoch recursion for the given selection.  Refuses
/// systems beyond desk scale rather than thrash memory.
pub fn build_recursion(
    system: &BlockSystem,
    masks: &SelectionMasks,
    mu: f64,
) -> Result<AugmentedSystem> {
    let (r, c) = (system.rows(), system.cols());
    let (m, n) = (system.row_blocks(), system.col_blocks());
    masks.validate(m, n)?;
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step size must be finite, got {mu}"
        )));
    }
    if c > DENSE_COL_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "dense recursion is limited to {DENSE_COL_LIMIT} image columns, got {c}; \
             use the matrix-free epoch application instead"
        )));
    }
    let d = n * r + m * c + c;
    if d * d > DENSE_ENTRY_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "recursion matrix would hold {d}x{d} entries, above the \
             {DENSE_ENTRY_LIMIT} entry ceiling"
        )));
    }
    let part = system.partition();
    let mut row_of = vec![0usize; r];
    for (i, rows) in part.row_blocks.iter().enumerate() {
        for &row in rows {
            row_of[row] = i;
        }
    }
    let mut col_of = vec![0usize; c];
    for (j, cols) in part.col_blocks.iter().enumerate() {
        for &col in cols {
            col_of[col] = j;
        }
    }

    let mut a_bar = DenseMat::zeros(n * r, c);
    let mut a_t_bar = DenseMat::zeros(m * c, r);
    for i in 0..m {
        for j in 0..n {
            let block = system.block(i, j);
            let rows_g = block.row_ids().to_vec();
            let cols_g = block.col_ids().to_vec();
            for (lr, &grow) in rows_g.iter().enumerate() {
                for (lc, v) in block.row_entries(lr) {
                    let gcol = cols_g[lc];
                    a_bar.set(j * r + grow, gcol, v);
                    a_t_bar.set(i * c + gcol, grow, v);
                }
            }
        }
    }
    let mut i_bar_nr = DenseMat::zeros(r, n * r);
    for j in 0..n {
        for row in 0..r {
            i_bar_nr.set(row, j * r + row, 1.0);
        }
    }
    let mut i_bar_mc = DenseMat::zeros(c, m * c);
    for i in 0..m {
        for col in 0..c {
            i_bar_mc.set(col, i * c + col, 1.0);
        }
    }

    let mut r1 = vec![0.0; n * r];
    for &(i, j) in &masks.z_pairs {
        for &row in &part.row_blocks[i] {
            r1[j * r + row] = 1.0;
        }
    }
    let mut r2 = vec![0.0; m * c];
    for &(i, j) in &masks.g_pairs {
        for &col in &part.col_blocks[j] {
            r2[i * c + col] = 1.0;
        }
    }
    let mut r3 = vec![0.0; c];
    for &j in &masks.x_blocks {
        for &col in &part.col_blocks[j] {
            r3[col] = 1.0;
        }
    }

    // P = 2 R2 A_T_bar I_bar_Nr without forming the product: the identity
    // concatenation just tiles A_T_bar across the z blocks.
    let mut p_mat = DenseMat::zeros(m * c, n * r);
    for pr in 0..m * c {
        if r2[pr] == 0.0 {
            continue;
        }
        for row in 0..r {
            let v = 2.0 * a_t_bar.at(pr, row);
            if v == 0.0 {
                continue;
            }
            for j in 0..n {
                p_mat.set(pr, j * r + row, v);
            }
        }
    }
    // A1 = R1 A_bar, the refreshed forward map.
    let mut a1 = a_bar.clone();
    for zr in 0..n * r {
        if r1[zr] == 0.0 {
            for col in 0..c {
                a1.set(zr, col, 0.0);
            }
        }
    }
    let pa1 = matmul(&p_mat, &a1);

    let (og, ox) = (n * r, n * r + m * c);
    let mut mm = DenseMat::zeros(d, d);
    // z rows: unrefreshed entries keep their value, refreshed rows read
    // the image through the forward map.
    for zr in 0..n * r {
        if r1[zr] == 0.0 {
            mm.set(zr, zr, 1.0);
        } else {
            for col in 0..c {
                let v = a_bar.at(zr, col);
                if v != 0.0 {
                    mm.set(zr, ox + col, v);
                }
            }
        }
    }
    // g rows: unrefreshed entries keep their value; refreshed entries read
    // the rebuilt residual, which subtracts the kept z memories directly
    // and the recomputed ones through the forward map.  The measurement
    // term lives in the constant part, added during apply().
    for gr in 0..m * c {
        if r2[gr] == 0.0 {
            mm.set(og + gr, og + gr, 1.0);
            continue;
        }
        for zr in 0..n * r {
            if r1[zr] == 0.0 {
                let v = p_mat.at(gr, zr);
                if v != 0.0 {
                    mm.set(og + gr, zr, -v);
                }
            }
        }
        for col in 0..c {
            let v = pa1.at(gr, col);
            if v != 0.0 {
                mm.set(og + gr, ox + col, -v);
            }
        }
    }
    // x rows: identity plus mu R3 times the sum over row blocks of the
    // post-refresh g rows just assembled.
    for col in 0..c {
        mm.set(ox + col, ox + col, 1.0);
    }
    for col in 0..c {
        if r3[col] == 0.0 {
            continue;
        }
        for i in 0..m {
            let gr = og + i * c + col;
            for q in 0..d {
                let v = mm.at(gr, q);
                if v != 0.0 {
                    let cur = mm.at(ox + col, q);
                    mm.set(ox + col, q, cur + mu * v);
                }
            }
        }
    }

    Ok(AugmentedSystem {
        m_blocks: m,
        n_blocks: n,
        rows: r,
        cols: c,
        mu,
        a_bar,
        a_t_bar,
        i_bar_nr,
        i_bar_mc,
        r1,
        r2,
        r3,
        m_matrix: mm,
    })
}

/// Outcome of hammering the candidate fixed point with random selections.
#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub trials: usize,
    pub mu: f64,
    pub state_norm: f64,
    pub lsqr_iterations: usize,
    pub lsqr_converged: bool,
    /// Largest state movement over trials with solver-aligned masks.
    pub max_change_consistent: f64,
    /// Largest state movement over trials with unaligned masks.
    pub max_change_independent: f64,
    pub max_rel_change_consistent: f64,
    pub max_rel_change_independent: f64,
    /// Norm of the image perturbation applied for the sensitivity probe.
    pub perturbation_norm: f64,
    /// State movement of one full epoch started from stale memories and
    /// the perturbed image; must be clearly nonzero.
    pub perturbed_change: f64,
}

impl FixedPointReport {
    /// Plain-text summary, one finding per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "fixed point check: {} trials per mask family, mu = {:.6e}\n",
            self.trials, self.mu
        ));
        out.push_str(&format!(
            "least squares anchor: {} iterations, converged = {}\n",
            self.lsqr_iterations, self.lsqr_converged
        ));
        out.push_str(&format!("state norm: {:.6e}\n", self.state_norm));
        out.push_str(&format!(
            "aligned masks:   max change {:.6e} (relative {:.6e})\n",
            self.max_change_consistent, self.max_rel_change_consistent
        ));
        out.push_str(&format!(
            "unaligned masks: max change {:.6e} (relative {:.6e})\n",
            self.max_change_independent, self.max_rel_change_independent
        ));
        out.push_str(&format!(
            "perturbed start (|delta| = {:.3e}): state change {:.6e}\n",
            self.perturbation_norm, self.perturbed_change
        ));
        out
    }
}

/// Certify the least-squares solution as a fixed point of the epoch map.
///
/// Runs `trials` random aligned selections and `trials` random unaligned
/// ones from the given seed, each starting at the stationary state, and
/// records the largest movement.  Also probes sensitivity: perturbing the
/// image by a random direction of norm 1e-3 while keeping the memories
/// stale must move the state.
pub fn verify_fixed_point(
    system: &BlockSystem,
    y: &[f64],
    mu: f64,
    trials: usize,
    seed: u64,
) -> Result<FixedPointReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive and finite, got {mu}"
        )));
    }
    let (star, sol) = stationary_state(system, y, 1e-13, 50_000)?;
    let state_norm = star.norm();
    let (m, n) = (system.row_blocks(), system.col_blocks());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_consistent = 0.0f64;
    let mut max_independent = 0.0f64;
    for _ in 0..trials {
        let masks = SelectionMasks::random_consistent(&mut rng, m, n);
        let mut s = star.clone();
        apply_epoch(system, y, mu, &masks, &mut s)?;
        max_consistent = max_consistent.max(s.distance(&star));

        let masks = SelectionMasks::random_independent(&mut rng, m, n);
        let mut s = star.clone();
        apply_epoch(system, y, mu, &masks, &mut s)?;
        max_independent = max_independent.max(s.distance(&star));
    }
    let mut delta: Vec<f64> = (0..system.cols())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let dn = norm2(&delta);
    let perturbation_norm = 1e-3;
    for v in &mut delta {
        *v *= perturbation_norm / dn;
    }
    let mut perturbed = star.clone();
    for (xv, dv) in perturbed.x.iter_mut().zip(&delta) {
        *xv += dv;
    }
    let before = perturbed.clone();
    apply_epoch(system, y, mu, &SelectionMasks::full(m, n), &mut perturbed)?;
    let perturbed_change = perturbed.distance(&before);
    let scale = if state_norm > 0.0 { state_norm } else { 1.0 };
    Ok(FixedPointReport {
        trials,
        mu,
        state_norm,
        lsqr_iterations: sol.iterations,
        lsqr_converged: sol.converged,
        max_change_consistent: max_consistent,
        max_change_independent: max_independent,
        max_rel_change_consistent: max_consistent / scale,
        max_rel_change_independent: max_independent / scale,
        perturbation_norm,
        perturbed_change,
    })
}
