//! Scan geometry: source/detector placement and ray endpoints.
//!
//! Both modes place the rotation center at the origin of a voxel grid that is
//! centered there as well.  At angle `theta` the source sits at distance
//! `source_to_center` on the side opposite the detector, and the flat
//! detector is centered at distance `center_to_detector` with its element
//! axis perpendicular to the center ray.  The cone-beam mode stacks a square
//! detector symmetrically around the central slice and keeps the source in
//! that slice; rows of the system matrix are ordered angle-major, then
//! detector row, then detector column.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fan2d,
    Cone3d,
}

#[derive(Debug, Clone)]
pub struct Geometry {
    pub mode: Mode,
    /// Distance from the source to the rotation center.
    pub source_to_center: f64,
    /// Distance from the rotation center to the detector midpoint.
    pub center_to_detector: f64,
    /// Detector elements along one axis (squared in cone-beam mode).
    pub detector_elements: usize,
    /// Element-center spacing on the detector.
    pub detector_pitch: f64,
    /// View angles in degrees.
    pub angles_deg: Vec<f64>,
    /// Voxels along each axis of the reconstruction grid.
    pub volume_side: usize,
    /// Edge length of a voxel.
    pub voxel_size: f64,
}

/// Validate scan parameters and assemble a [`Geometry`].
#[allow(clippy::too_many_arguments)]
pub fn build_geometry(
    mode: Mode,
    source_to_center: f64,
    center_to_detector: f64,
    detector_elements: usize,
    detector_pitch: f64,
    angles_deg: Vec<f64>,
    volume_side: usize,
    voxel_size: f64,
) -> Result<Geometry> {
    if !(source_to_center > 0.0) || !(center_to_detector > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "source/detector distances must be positive, got {source_to_center} and {center_to_detector}"
        )));
    }
    if detector_elements == 0 {
        return Err(Error::InvalidGeometry("detector needs at least one element".into()));
    }
    if !(detector_pitch > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "detector pitch must be positive, got {detector_pitch}"
        )));
    }
    if angles_deg.is_empty() {
        return Err(Error::InvalidGeometry("angle list is empty".into()));
    }
    if !angles_deg.iter().all(|a| a.is_finite()) {
        return Err(Error::InvalidGeometry("angle list contains a non-finite value".into()));
    }
    if volume_side == 0 {
        return Err(Error::InvalidGeometry("volume side must be at least one voxel".into()));
    }
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    Ok(Geometry {
        mode,
        source_to_center,
        center_to_detector,
        detector_elements,
        detector_pitch,
        angles_deg,
        volume_side,
        voxel_size,
    })
}

impl Geometry {
    /// Number of spatial dimensions (2 or 3).
    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::Fan2d => 2,
            Mode::Cone3d => 3,
        }
    }

    /// Rays measured per view angle.
    pub fn rays_per_view(&self) -> usize {
        match self.mode {
            Mode::Fan2d => self.detector_elements,
            Mode::Cone3d => self.detector_elements * self.detector_elements,
        }
    }

    /// Total number of rays, i.e. rows of the system matrix.
    pub fn num_rays(&self) -> usize {
        self.rays_per_view() * self.angles_deg.len()
    }

    /// Total number of voxels, i.e. columns of the system matrix.
    pub fn num_voxels(&self) -> usize {
        self.volume_side.pow(self.dim() as u32)
    }

    /// Half the edge length of the (cubic) reconstruction grid.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.volume_side as f64 * self.voxel_size
    }

    /// Source position at the given view.
    pub fn source_pos(&self, angle_idx: usize) -> [f64; 3] {
        let th = self.angles_deg[angle_idx].to_radians();
        [
            -self.source_to_center * th.cos(),
            -self.source_to_center * th.sin(),
            0.0,
        ]
    }

    /// Unit vector along the detector element axis at the given view.
    pub fn detector_axis_u(&self, angle_idx: usize) -> [f64; 3] {
        let th = self.angles_deg[angle_idx].to_radians();
        [-th.sin(), th.cos(), 0.0]
    }

    /// Center of the flat detector at the given view.
    pub fn detector_center(&self, angle_idx: usize) -> [f64; 3] {
        let th = self.angles_deg[angle_idx].to_radians();
        [
            self.center_to_detector * th.cos(),
            self.center_to_detector * th.sin(),
            0.0,
        ]
    }

    /// Center of one detector element.
    ///
    /// `within` is the within-view index: the element number in 2D, or
    /// `v * detector_elements + u` in 3D with `v` counting detector rows
    /// along +z and `u` counting columns along the in-slice axis.
    pub fn detector_element_pos(&self, angle_idx: usize, within: usize) -> [f64; 3] {
        let n = self.detector_elements;
        debug_assert!(within < self.rays_per_view());
        let center = self.detector_center(angle_idx);
        let axis_u = self.detector_axis_u(angle_idx);
        let offset = |i: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * self.detector_pitch;
        match self.mode {
            Mode::Fan2d => {
                let du = offset(within);
                [center[0] + du * axis_u[0], center[1] + du * axis_u[1], 0.0]
            }
            Mode::Cone3d => {
                let (v, u) = (within / n, within % n);
                let (du, dv) = (offset(u), offset(v));
                [
                    center[0] + du * axis_u[0],
                    center[1] + du * axis_u[1],
                    dv,
                ]
            }
        }
    }

    /// Split a global ray index into (angle index, within-view index).
    pub fn split_ray(&self, ray: usize) -> (usize, usize) {
        let rpv = self.rays_per_view();
        (ray / rpv, ray % rpv)
    }

    /// Endpoints of a ray: source position and detector element center.
    pub fn ray_endpoints(&self, ray: usize) -> ([f64; 3], [f64; 3]) {
        debug_assert!(ray < self.num_rays());
        let (a, w) = self.split_ray(ray);
        (self.source_pos(a), self.detector_element_pos(a, w))
    }

    /// Flat voxel index from per-axis indices (x fastest, then y, then z).
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let k = self.volume_side;
        debug_assert!(ix < k && iy < k && (iz < k || (self.dim() == 2 && iz == 0)));
        (iz * k + iy) * k + ix
    }
}
