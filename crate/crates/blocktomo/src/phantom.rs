//! Test phantoms: the Shepp-Logan head section and a labeled-cube volume.
//!
//! Ellipse parameters follow the widely published "modified" Shepp-Logan
//! table with contrast-enhanced intensities in [0, 1]; the 3D variant uses
//! the matching ellipsoid table with rotations about z only.  Pixel centers
//! are evaluated on the grid normalized to [-1, 1] per axis, with +y up and
//! +z toward the top slices, matching the voxel layout of the geometry
//! module.

#[derive(Debug, Clone)]
pub struct Phantom {
    /// Grid size per axis.
    pub dims: Vec<usize>,
    /// Row-major values (x fastest), all in [0, 1].
    pub values: Vec<f64>,
}

/// (additive intensity, semi-axes a/b/c, center x0/y0/z0, rotation about z in degrees)
struct Ellipsoid {
    add: f64,
    axes: [f64; 3],
    center: [f64; 3],
    phi_deg: f64,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        let q = (xr / self.axes[0]).powi(2)
            + (yr / self.axes[1]).powi(2)
            + (dz / self.axes[2]).powi(2);
        q <= 1.0
    }
}

/// The 2D table; the z entries are placeholders ignored in 2D evaluation.
fn table_2d() -> Vec<Ellipsoid> {
    let rows: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
        (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
        (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
        (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
    ];
    rows.iter()
        .map(|&(add, a, b, x0, y0, phi)| Ellipsoid {
            add,
            axes: [a, b, 1.0],
            center: [x0, y0, 0.0],
            phi_deg: phi,
        })
        .collect()
}

fn table_3d() -> Vec<Ellipsoid> {
    let rows: [(f64, f64, f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.8740, 0.780, 0.0, -0.0184, 0.0, 0.0),
        (-0.2, 0.1100, 0.3100, 0.220, 0.22, 0.0, 0.0, -18.0),
        (-0.2, 0.1600, 0.4100, 0.280, -0.22, 0.0, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.410, 0.0, 0.35, -0.15, 0.0),
        (0.1, 0.0460, 0.0460, 0.050, 0.0, 0.1, 0.25, 0.0),
        (0.1, 0.0460, 0.0460, 0.050, 0.0, -0.1, 0.25, 0.0),
        (0.1, 0.0460, 0.0230, 0.050, -0.08, -0.605, 0.0, 0.0),
        (0.1, 0.0230, 0.0230, 0.020, 0.0, -0.606, 0.0, 0.0),
        (0.1, 0.0230, 0.0460, 0.020, 0.06, -0.605, 0.0, 0.0),
    ];
    rows.iter()
        .map(|&(add, a, b, c, x0, y0, z0, phi)| Ellipsoid {
            add,
            axes: [a, b, c],
            center: [x0, y0, z0],
            phi_deg: phi,
        })
        .collect()
}

/// Normalized center coordinate of grid cell `i` out of `k`.
fn cell_coord(i: usize, k: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) * (2.0 / k as f64)
}

/// Shepp-Logan phantom on a K-per-axis grid; `dims` selects 2 or 3 axes.
pub fn shepp_logan(k: usize, dims: usize) -> Phantom {
    assert!(k >= 4, "grid too small for the ellipse structure");
    assert!(dims == 2 || dims == 3, "2D and 3D only");
    let table = if dims == 2 { table_2d() } else { table_3d() };
    let plane = k * k;
    let total = if dims == 2 { plane } else { plane * k };
    let mut values = vec![0.0; total];
    let layers = if dims == 2 { 1 } else { k };
    for iz in 0..layers {
        let z = if dims == 2 { 0.0 } else { cell_coord(iz, k) };
        for iy in 0..k {
            let y = cell_coord(iy, k);
            for ix in 0..k {
                let x = cell_coord(ix, k);
                let mut v = 0.0;
                for e in &table {
                    if e.contains([x, y, z]) {
                        v += e.add;
                    }
                }
                // The table sums stay inside [0, 1] exactly; clamp away the
                // ~1e-16 rounding from the signed additions.
                values[iz * plane + iy * k + ix] = v.clamp(0.0, 1.0);
            }
        }
    }
    Phantom { dims: vec![k; dims], values }
}

/// Simple labeled-cube volume: a cubic shell around two embedded boxes.
///
/// Stand-in for externally sourced clinical volumes; it is deliberately
/// asymmetric in x and z so footprint-weighted sampling has structure to
/// find.  Not comparable to any clinical data in absolute intensity.
pub fn labeled_cube(k: usize) -> Phantom {
    assert!(k >= 4);
    let plane = k * k;
    let mut values = vec![0.0; plane * k];
    for iz in 0..k {
        let z = cell_coord(iz, k);
        for iy in 0..k {
            let y = cell_coord(iy, k);
            for ix in 0..k {
                let x = cell_coord(ix, k);
                let linf = x.abs().max(y.abs()).max(z.abs());
                let mut v = 0.0;
                if linf <= 0.95 {
                    v = if linf >= 0.8 { 1.0 } else { 0.2 };
                }
                // Upper box, shifted toward +x and +z.
                if (x - 0.3).abs() <= 0.25 && y.abs() <= 0.25 && (0.1..=0.6).contains(&z) {
                    v += 0.3;
                }
                // Smaller lower box toward -x.
                if (x + 0.4).abs() <= 0.15 && y.abs() <= 0.35 && (-0.55..=-0.2).contains(&z) {
                    v += 0.1;
                }
                values[iz * plane + iy * k + ix] = v;
            }
        }
    }
    Phantom { dims: vec![k; 3], values }
}
