//! Voxel-density point-cloud alignment and the baselines it is measured
//! against.
//!
//! A cloud is binned into an axis-aligned grid: each point gets a scalar
//! voxel index ⌊(x-x_min)/Δx⌋ + ⌊(y-y_min)/Δy⌋·Nx + ⌊(z-z_min)/Δz⌋·Nx·Ny,
//! the per-voxel counting vector C_i = n - ‖sign(|V - i|)‖₁ turns those
//! indices into an exact histogram, and the density ρ = C/n is compared
//! across frames with a KL divergence. Flooring and the sign function use
//! straight-through surrogate gradients so the whole chain participates in
//! differentiation: floor passes gradients unchanged, sign backpropagates
//! the derivative of Htanh(r) = clip(r, -1, 1) with r = (x - 1/2)·2.
//!
//! Out-of-bounds points clamp to boundary voxels and are flagged rather than
//! dropped, so both frames keep density vectors that sum to one.

use crate::camera::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

/// KL stabilizer added to both density arguments before the log.
pub const DEFAULT_KL_EPS: f64 = 1e-8;

/// Default grid subdivision (Nx, Ny, Nz).
pub const DEFAULT_SUBDIVISIONS: (usize, usize, usize) = (40, 40, 24);

/// Default subdivision sweep for the grid-resolution experiment.
pub const DEFAULT_SWEEP: [(usize, usize, usize); 3] = [(20, 20, 24), (40, 40, 24), (60, 60, 24)];

/// Axis-aligned voxel grid: bounds in meters plus per-axis subdivision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl VoxelGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        z_min: f64,
        z_max: f64,
        nx: usize,
        ny: usize,
        nz: usize,
    ) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min && z_max > z_min) {
            return Err(Error::contract(
                "VoxelGrid",
                format!("degenerate extent: x [{x_min}, {x_max}], y [{y_min}, {y_max}], z [{z_min}, {z_max}]"),
            ));
        }
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::contract("VoxelGrid", "voxel counts must be positive"));
        }
        Ok(VoxelGrid { x_min, x_max, y_min, y_max, z_min, z_max, nx, ny, nz })
    }

    /// Joint axis-aligned bounding box of both clouds, expanded by 1% per
    /// side (with an absolute floor for degenerate extents) so that every
    /// point lands strictly inside the grid.
    pub fn around_clouds(
        a: &[[f64; 3]],
        b: &[[f64; 3]],
        (nx, ny, nz): (usize, usize, usize),
    ) -> Result<Self> {
        if a.is_empty() && b.is_empty() {
            return Err(Error::contract("VoxelGrid", "cannot bound two empty clouds"));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in a.iter().chain(b) {
            for ax in 0..3 {
                lo[ax] = lo[ax].min(p[ax]);
                hi[ax] = hi[ax].max(p[ax]);
            }
        }
        for ax in 0..3 {
            let margin = (0.01 * (hi[ax] - lo[ax])).max(1e-6);
            lo[ax] -= margin;
            hi[ax] += margin;
        }
        VoxelGrid::new(lo[0], hi[0], lo[1], hi[1], lo[2], hi[2], nx, ny, nz)
    }

    /// Reads bounds (`x_min` .. `z_max`) and subdivisions (`nx`, `ny`, `nz`).
    pub fn from_config(section: &crate::config::Section) -> Result<Self> {
        VoxelGrid::new(
            section.f64("x_min")?,
            section.f64("x_max")?,
            section.f64("y_min")?,
            section.f64("y_max")?,
            section.f64("z_min")?,
            section.f64("z_max")?,
            section.usize_or("nx", DEFAULT_SUBDIVISIONS.0)?,
            section.usize_or("ny", DEFAULT_SUBDIVISIONS.1)?,
            section.usize_or("nz", DEFAULT_SUBDIVISIONS.2)?,
        )
    }

    pub fn total_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / self.nz as f64
    }

    /// Same bounds, each axis subdivided `factor` times finer. The coarse
    /// grid's voxel boundaries are a subset of the refined grid's.
    pub fn refined(&self, factor: usize) -> Result<VoxelGrid> {
        VoxelGrid::new(
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.z_min,
            self.z_max,
            self.nx * factor,
            self.ny * factor,
            self.nz * factor,
        )
    }

    /// Scalar voxel index of one point with the clamp-and-flag convention.
    /// The boolean is true when the point lies inside the grid.
    pub fn index_of(&self, p: [f64; 3]) -> (usize, bool) {
        let cell = |v: f64, min: f64, delta: f64, n: usize| -> (usize, bool) {
            let raw = ((v - min) / delta).floor();
            let inside = raw >= 0.0 && raw <= (n - 1) as f64;
            ((raw.max(0.0) as usize).min(n - 1), inside)
        };
        let (ix, okx) = cell(p[0], self.x_min, self.dx(), self.nx);
        let (iy, oky) = cell(p[1], self.y_min, self.dy(), self.ny);
        let (iz, okz) = cell(p[2], self.z_min, self.dz(), self.nz);
        (ix + iy * self.nx + iz * self.nx * self.ny, okx && oky && okz)
    }
}

/// Extract one coordinate column of an `(n, 3)` cloud as an `(n,)` tensor.
fn column(g: &mut Graph, points: &Tensor, axis: usize) -> Tensor {
    let n = points.shape()[0];
    let pv = g.data_arc(points);
    let data: Vec<f64> = (0..n).map(|i| pv[3 * i + axis]).collect();
    let id = points.id();
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for (i, &u) in up.iter().enumerate() {
            sink.add(id, 3 * i + axis, u);
        }
    });
    g.record("column", &[points], vec![n], data, backward)
}

/// Result of voxel indexing: the per-point scalar index as a tensor (so the
/// straight-through gradients keep flowing) plus an in-bounds flag per point.
#[derive(Debug, Clone)]
pub struct VoxelIndices {
    pub values: Tensor,
    pub in_bounds: Vec<bool>,
}

fn combined_index(
    g: &mut Graph,
    cloud: &PointCloud,
    grid: &VoxelGrid,
    apply_floor: bool,
) -> Result<Tensor> {
    let axis_cells = |g: &mut Graph, points: &Tensor, axis: usize, min: f64, delta: f64, n: usize| -> Result<Tensor> {
        let col = column(g, points, axis);
        let shifted = g.add_scalar(&col, -min)?;
        let delta_t = g.scalar(delta);
        let scaled = g.div(&shifted, &delta_t)?;
        if apply_floor {
            let floored = g.floor_ste(&scaled);
            g.clip(&floored, 0.0, (n - 1) as f64)
        } else {
            // Floorless surrogate: in-bounds cell values live in [0, n), so
            // the clamp that boxes floored cells into [0, n-1] widens to n
            // here, keeping the derivative 1 across the whole last cell.
            g.clip(&scaled, 0.0, n as f64)
        }
    };
    let ix = axis_cells(g, &cloud.points, 0, grid.x_min, grid.dx(), grid.nx)?;
    let iy = axis_cells(g, &cloud.points, 1, grid.y_min, grid.dy(), grid.ny)?;
    let iz = axis_cells(g, &cloud.points, 2, grid.z_min, grid.dz(), grid.nz)?;
    let iy_s = g.scale(&iy, grid.nx as f64)?;
    let iz_s = g.scale(&iz, (grid.nx * grid.ny) as f64)?;
    let xy = g.add(&ix, &iy_s)?;
    g.add(&xy, &iz_s)
}

fn check_cloud_shape(op: &'static str, cloud: &PointCloud) -> Result<()> {
    let shape = cloud.points.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::contract(op, format!("cloud must be (n, 3), got {:?}", shape)));
    }
    Ok(())
}

/// Per-point voxel index ν(P), built from floor-with-STE and clip ops so it
/// is differentiable end to end. Out-of-bounds points are clamped to the
/// boundary voxel on each axis and flagged.
pub fn voxel_index(g: &mut Graph, cloud: &PointCloud, grid: &VoxelGrid) -> Result<VoxelIndices> {
    check_cloud_shape("voxel_index", cloud)?;
    let values = combined_index(g, cloud, grid, true)?;
    let pv = g.value(&cloud.points);
    let in_bounds: Vec<bool> = (0..cloud.len())
        .map(|i| grid.index_of([pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]]).1)
        .collect();
    Ok(VoxelIndices { values, in_bounds })
}

// ── Declared surrogates ───────────────────────────────────────────────────
//
// The straight-through ops' backward passes are the derivatives of these
// smooth(er) forward functions. Gradient checks difference the surrogates,
// not the staircase forwards.

/// Three-valued sign with the straight-through backward (gradient 2 where
/// 0 < x < 1, zero elsewhere).
pub fn ste_sign(g: &mut Graph, x: &Tensor) -> Tensor {
    g.sign_ste(x)
}

/// What `ste_sign`'s backward differentiates: Htanh(r) = clip(r, -1, 1)
/// with r = (x - 1/2) · 2.
pub fn ste_sign_surrogate(g: &mut Graph, x: &Tensor) -> Result<Tensor> {
    let r = g.scale(x, 2.0)?;
    let r = g.add_scalar(&r, -1.0)?;
    g.clip(&r, -1.0, 1.0)
}

/// Surrogate of [`voxel_index`]: the same affine/clip chain with the floor
/// replaced by its identity surrogate.
pub fn voxel_index_surrogate(g: &mut Graph, cloud: &PointCloud, grid: &VoxelGrid) -> Result<Tensor> {
    check_cloud_shape("voxel_index_surrogate", cloud)?;
    combined_index(g, cloud, grid, false)
}

/// Surrogate of [`count_vector`]: C̃_i = n - Σ_j Htanh(2·|V_j - i| - 1).
/// The ℓ₁ norm's outer absolute value acts on sign outputs, which are 0 or 1
/// for the non-negative inputs |V - i|, so it contributes a unit factor and
/// drops out of the surrogate.
pub fn count_vector_surrogate(g: &mut Graph, indices: &Tensor, total_voxels: usize) -> Result<Tensor> {
    if indices.rank() != 1 {
        return Err(Error::contract(
            "count_vector_surrogate",
            format!("index vector must be rank 1, got {:?}", indices.shape()),
        ));
    }
    let n = indices.shape()[0];
    if total_voxels == 0 || n == 0 {
        return Err(Error::contract("count_vector_surrogate", "empty input"));
    }
    let mut parts = Vec::with_capacity(total_voxels);
    for i in 0..total_voxels {
        let d = g.add_scalar(indices, -(i as f64))?;
        let a = g.abs(&d);
        let h = ste_sign_surrogate(g, &a)?;
        let s = g.sum(&h, None)?;
        let neg = g.scale(&s, -1.0)?;
        parts.push(g.add_scalar(&neg, n as f64)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    g.concat_flat(&refs)
}

/// Surrogate of [`voxel_density`]: the full chain with both straight-through
/// ops replaced by what their backwards differentiate.
pub fn voxel_density_surrogate(g: &mut Graph, cloud: &PointCloud, grid: &VoxelGrid) -> Result<DensityVector> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::contract("voxel_density_surrogate", "empty point cloud"));
    }
    let idx = voxel_index_surrogate(g, cloud, grid)?;
    let counts = count_vector_surrogate(g, &idx, grid.total_voxels())?;
    let n_t = g.scalar(n as f64);
    let values = g.div(&counts, &n_t)?;
    Ok(DensityVector { values, in_bounds: vec![true; n] })
}

/// Counting vector C_i = n - ‖sign(|V - i|)‖₁ for i in [0, N): the number of
/// points whose index equals i. The forward pass is an exact histogram (the
/// formula reduces to one for the integer-valued indices `voxel_index`
/// produces); the backward pass is the chain rule of the formula through the
/// straight-through sign and the two absolute values.
pub fn count_vector(g: &mut Graph, indices: &Tensor, total_voxels: usize) -> Result<Tensor> {
    if indices.rank() != 1 {
        return Err(Error::contract(
            "count_vector",
            format!("index vector must be rank 1, got {:?}", indices.shape()),
        ));
    }
    let n = indices.shape()[0];
    if total_voxels == 0 {
        return Err(Error::contract("count_vector", "total voxel count must be positive"));
    }
    if n == 0 {
        return Err(Error::contract("count_vector", "empty index vector"));
    }
    let vv = g.data_arc(indices);
    let mut data = vec![0.0; total_voxels];
    for &v in vv.iter() {
        // Only exact integer matches count: |sign(|V_j - i|)| is 0 iff V_j == i.
        if v >= 0.0 && v <= (total_voxels - 1) as f64 && v.floor() == v {
            data[v as usize] += 1.0;
        }
    }
    let id = indices.id();
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        // dC_i/dV_j = -2·sign(V_j - i) where 0 < |V_j - i| < 1, else 0; only
        // i ∈ {⌊V_j⌋, ⌊V_j⌋+1} can fall inside that band.
        for (j, &v) in vv.iter().enumerate() {
            let base = v.floor();
            for cand in [base, base + 1.0] {
                if cand < 0.0 || cand > (total_voxels - 1) as f64 {
                    continue;
                }
                let d = v - cand;
                if d != 0.0 && d.abs() < 1.0 {
                    let i = cand as usize;
                    sink.add(id, j, up[i] * -2.0 * d.signum());
                }
            }
        }
    });
    Ok(g.record("count_vector", &[indices], vec![total_voxels], data, backward))
}

/// Voxel density vector of a point cloud on a graph, with per-point
/// in-bounds flags.
#[derive(Debug, Clone)]
pub struct DensityVector {
    pub values: Tensor,
    pub in_bounds: Vec<bool>,
}

impl DensityVector {
    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.rank() != 1 {
            return Err(Error::contract(
                "DensityVector",
                format!("density must be rank 1, got {:?}", values.shape()),
            ));
        }
        let n = values.numel();
        Ok(DensityVector { values, in_bounds: vec![true; n] })
    }
}

/// ρ = count_vector(ν(cloud)) / n. Sums to one when the cloud is in bounds;
/// differentiable end to end through the straight-through surrogates.
pub fn voxel_density(g: &mut Graph, cloud: &PointCloud, grid: &VoxelGrid) -> Result<DensityVector> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::contract("voxel_density", "empty point cloud"));
    }
    let idx = voxel_index(g, cloud, grid)?;
    let counts = count_vector(g, &idx.values, grid.total_voxels())?;
    let n_t = g.scalar(n as f64);
    let values = g.div(&counts, &n_t)?;
    Ok(DensityVector { values, in_bounds: idx.in_bounds })
}

/// KL divergence D(ρ_ref ‖ ρ_src) with `eps` added to both arguments of the
/// log; entries with ρ_ref(i) = 0 contribute exactly zero.
pub fn vda_loss(
    g: &mut Graph,
    rho_ref: &DensityVector,
    rho_src: &DensityVector,
    eps: f64,
) -> Result<Tensor> {
    if rho_ref.values.shape() != rho_src.values.shape() {
        return Err(Error::ShapeMismatch {
            op: "vda_loss",
            lhs: rho_ref.values.shape().to_vec(),
            rhs: rho_src.values.shape().to_vec(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::contract("vda_loss", format!("eps must be positive, got {eps}")));
    }
    let p_eps = g.add_scalar(&rho_ref.values, eps)?;
    let q_eps = g.add_scalar(&rho_src.values, eps)?;
    let log_p = g.log(&p_eps)?;
    let log_q = g.log(&q_eps)?;
    let log_ratio = g.sub(&log_p, &log_q)?;
    let terms = g.mul(&rho_ref.values, &log_ratio)?;
    g.sum(&terms, None)
}

/// Rigid point-cloud alignment loss: Σ_i ‖P_ref(i) - P̂(i)‖₁ over index
/// correspondence (sum convention).
pub fn point_cloud_loss(g: &mut Graph, reference: &PointCloud, transformed: &PointCloud) -> Result<Tensor> {
    if reference.points.shape() != transformed.points.shape() {
        return Err(Error::contract(
            "point_cloud_loss",
            format!(
                "point counts differ: {:?} vs {:?}",
                reference.points.shape(),
                transformed.points.shape()
            ),
        ));
    }
    let diff = g.sub(&reference.points, &transformed.points)?;
    g.l1_norm(&diff, None)
}

/// Diagnostic L1 norm of voxel-index differences between corresponding
/// points; not differentiable (plain value), used by the robustness
/// experiment to show when displacements cross voxel boundaries.
pub fn voxel_index_loss(
    reference: &[[f64; 3]],
    transformed: &[[f64; 3]],
    grid: &VoxelGrid,
) -> Result<f64> {
    if reference.len() != transformed.len() {
        return Err(Error::contract(
            "voxel_index_loss",
            format!("point counts differ: {} vs {}", reference.len(), transformed.len()),
        ));
    }
    let mut total = 0.0;
    for (a, b) in reference.iter().zip(transformed) {
        let (ia, _) = grid.index_of(*a);
        let (ib, _) = grid.index_of(*b);
        total += (ia as f64 - ib as f64).abs();
    }
    Ok(total)
}

// ── Alignment-loss strategy registry ─────────────────────────────────────
//
// The three cloud-consistency losses share one evaluation surface so the
// robustness experiment can sweep them uniformly.

/// A cloud-consistency loss evaluated on plain (already transformed) clouds
/// with index correspondence.
pub trait CloudConsistencyLoss: Send + Sync {
    fn name(&self) -> &'static str;
    fn evaluate(&self, reference: &[[f64; 3]], transformed: &[[f64; 3]], grid: &VoxelGrid) -> Result<f64>;
}

/// Rigid per-point L1 alignment (ignores the grid).
pub struct RigidPointLoss;

impl CloudConsistencyLoss for RigidPointLoss {
    fn name(&self) -> &'static str {
        "point_cloud_loss"
    }

    fn evaluate(&self, reference: &[[f64; 3]], transformed: &[[f64; 3]], _grid: &VoxelGrid) -> Result<f64> {
        let mut g = Graph::new();
        let a = PointCloud::from_rows(&mut g, reference, false)?;
        let b = PointCloud::from_rows(&mut g, transformed, false)?;
        let loss = point_cloud_loss(&mut g, &a, &b)?;
        Ok(g.scalar_value(&loss))
    }
}

/// Voxel-index L1 diagnostic.
pub struct VoxelIndexDiagnostic;

impl CloudConsistencyLoss for VoxelIndexDiagnostic {
    fn name(&self) -> &'static str {
        "voxel_index_loss"
    }

    fn evaluate(&self, reference: &[[f64; 3]], transformed: &[[f64; 3]], grid: &VoxelGrid) -> Result<f64> {
        voxel_index_loss(reference, transformed, grid)
    }
}

/// KL divergence between the two clouds' voxel densities.
pub struct VdaKlLoss {
    pub eps: f64,
}

impl Default for VdaKlLoss {
    fn default() -> Self {
        VdaKlLoss { eps: DEFAULT_KL_EPS }
    }
}

impl CloudConsistencyLoss for VdaKlLoss {
    fn name(&self) -> &'static str {
        "vda_loss"
    }

    fn evaluate(&self, reference: &[[f64; 3]], transformed: &[[f64; 3]], grid: &VoxelGrid) -> Result<f64> {
        let mut g = Graph::new();
        let a = PointCloud::from_rows(&mut g, reference, false)?;
        let b = PointCloud::from_rows(&mut g, transformed, false)?;
        let rho_a = voxel_density(&mut g, &a, grid)?;
        let rho_b = voxel_density(&mut g, &b, grid)?;
        let loss = vda_loss(&mut g, &rho_a, &rho_b, self.eps)?;
        Ok(g.scalar_value(&loss))
    }
}

/// All cloud-consistency losses, in the order experiments report them.
pub fn cloud_loss_registry() -> Vec<Box<dyn CloudConsistencyLoss>> {
    vec![
        Box::new(RigidPointLoss),
        Box::new(VoxelIndexDiagnostic),
        Box::new(VdaKlLoss::default()),
    ]
}
