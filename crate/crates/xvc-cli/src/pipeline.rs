//! Shared experiment plumbing: rendered frame pairs with exact ground truth
//! and the graph-side constructions (warps, analytic offsets, depth
//! features) the loss experiments feed on.

use xvc_core::camera::{warp_image, CameraIntrinsics, RigidTransform};
use xvc_core::deformable::OffsetField;
use xvc_core::error::Result;
use xvc_core::scene::{render, RenderOutput, SyntheticScene};
use xvc_core::tensor::{Graph, Tensor};

/// Two views of a scene pair: the reference camera sits at the world origin,
/// the source camera is translated by `shift`.
pub struct RenderedPair {
    pub k: CameraIntrinsics,
    pub height: usize,
    pub width: usize,
    pub shift: [f64; 3],
    pub reference: RenderOutput,
    pub source: RenderOutput,
}

impl RenderedPair {
    pub fn render(
        scene_ref: &SyntheticScene,
        scene_src: &SyntheticScene,
        k: &CameraIntrinsics,
        height: usize,
        width: usize,
        shift: [f64; 3],
    ) -> Result<RenderedPair> {
        let reference = render(scene_ref, k, &RigidTransform::identity(), height, width)?;
        let source = render(scene_src, k, &RigidTransform::from_translation(shift), height, width)?;
        Ok(RenderedPair { k: *k, height, width, shift, reference, source })
    }

    /// Maps reference-camera coordinates into the source camera.
    pub fn t_ref_to_src(&self) -> RigidTransform {
        RigidTransform::from_translation([-self.shift[0], -self.shift[1], -self.shift[2]])
    }

    /// Maps source-camera coordinates into the reference camera.
    pub fn t_src_to_ref(&self) -> RigidTransform {
        RigidTransform::from_translation(self.shift)
    }

    /// Warp the source image into the reference view with exact depth/pose.
    pub fn warp_into_reference(&self, g: &mut Graph) -> Result<(Tensor, Vec<bool>)> {
        let src_img = self.source.image_tensor(g, false)?;
        let depth = self.reference.depth.to_tensor(g, false)?;
        warp_image(g, &src_img, &depth, &self.reference.depth.valid, &self.t_ref_to_src(), &self.k)
    }

    /// Exact per-pixel alignment offsets from ground truth: for each
    /// reference pixel, where its world point lands in the source image,
    /// minus the pixel itself, replicated over every group and kernel tap.
    pub fn analytic_offsets(&self, g: &mut Graph, groups: usize, kernel: usize) -> Result<OffsetField> {
        let (h, w) = (self.height, self.width);
        let channels = groups * 2 * kernel * kernel;
        let mut data = vec![0.0; channels * h * w];
        let t = self.t_ref_to_src();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if !self.reference.depth.valid[i] {
                    continue;
                }
                let d = self.reference.depth.values[i];
                let ray = self.k.ray(c as f64, r as f64);
                let world = [d * ray[0], d * ray[1], d];
                let in_src = t.apply(world);
                let (u, v, _z) = self.k.project_point(in_src);
                let (du, dv) = (u - c as f64, v - r as f64);
                for ch in 0..channels {
                    let value = if ch % 2 == 0 { du } else { dv };
                    data[ch * h * w + i] = value;
                }
            }
        }
        let values = g.leaf(data, &[channels, h, w], false)?;
        OffsetField::new(groups, kernel, values)
    }
}

/// Mean-normalized inverse depth μ = (1/D) / mean(1/D) as an (H, W) tensor;
/// the depth feature the alignment experiments use.
pub fn normalized_inverse_depth(g: &mut Graph, depth: &xvc_core::camera::DepthMap) -> Result<Tensor> {
    let d = depth.to_tensor(g, false)?;
    let ones = g.constant(vec![1.0; d.numel()], d.shape())?;
    let inv = g.div(&ones, &d)?;
    let mean_inv = g.mean(&inv, None)?;
    g.div(&inv, &mean_inv)
}

/// Per-pixel losses above `threshold`, normalized for PGM export.
pub fn normalize_map(values: &[f64]) -> (Vec<f64>, f64) {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return (vec![0.0; values.len()], 0.0);
    }
    (values.iter().map(|v| v / max).collect(), max)
}
