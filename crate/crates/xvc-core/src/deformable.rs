//! Grouped deformable sampling of feature maps by supplied offset fields,
//! reference reconstruction, and the combined alignment loss that transfers
//! RGB-feature alignment to depth features.
//!
//! Feature maps are `(C, H, W)` tensors. An offset field holds, per output
//! position, per group, per kernel tap, a (Δx, Δy) displacement in pixels;
//! kernel taps enumerate the n×n neighborhood row-major, so for n = 3 the
//! taps are (-1,-1), (0,-1), ..., (1,1) in (dx, dy) form. Channel c belongs
//! to offset group c / (C/G). Out-of-image samples clamp to the border, the
//! same policy the camera sampler uses.

use std::sync::Arc;

use crate::camera::bilinear_tap;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

/// Per-position, per-group, per-tap 2D displacements as a
/// `(G * 2 * n^2, H, W)` tensor: channel `(g*n^2 + k)*2 + d` holds Δx for
/// d = 0 and Δy for d = 1.
#[derive(Debug, Clone)]
pub struct OffsetField {
    pub groups: usize,
    pub kernel: usize,
    pub values: Tensor,
}

impl OffsetField {
    pub fn new(groups: usize, kernel: usize, values: Tensor) -> Result<Self> {
        if groups == 0 || kernel == 0 || kernel % 2 == 0 {
            return Err(Error::contract(
                "OffsetField",
                format!("need positive groups and odd kernel, got G={groups}, n={kernel}"),
            ));
        }
        let expect = groups * 2 * kernel * kernel;
        match values.shape() {
            [c, _, _] if *c == expect => Ok(OffsetField { groups, kernel, values }),
            other => Err(Error::contract(
                "OffsetField",
                format!("values must be ({expect}, H, W) for G={groups}, n={kernel}, got {other:?}"),
            )),
        }
    }

    /// Field with the same (dx, dy) at every position, group, and tap.
    pub fn constant(
        g: &mut Graph,
        groups: usize,
        kernel: usize,
        height: usize,
        width: usize,
        dx: f64,
        dy: f64,
        requires_grad: bool,
    ) -> Result<Self> {
        let channels = groups * 2 * kernel * kernel;
        let mut data = vec![0.0; channels * height * width];
        for ch in 0..channels {
            let v = if ch % 2 == 0 { dx } else { dy };
            data[ch * height * width..(ch + 1) * height * width].fill(v);
        }
        let values = g.leaf(data, &[channels, height, width], requires_grad)?;
        OffsetField::new(groups, kernel, values)
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }

    /// Load from a tensor file written in the flat binary format; the file's
    /// channel count must match G·2·n².
    pub fn load(
        g: &mut Graph,
        path: &std::path::Path,
        groups: usize,
        kernel: usize,
        requires_grad: bool,
    ) -> Result<Self> {
        let t = crate::io::read_tensor(path)?;
        let values = g.leaf(t.data, &t.shape, requires_grad)?;
        OffsetField::new(groups, kernel, values)
    }
}

/// Per-group, spatially shared kernel tap weights γ(p_k): a `(G, n^2)` tensor.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    pub groups: usize,
    pub kernel: usize,
    pub values: Tensor,
}

impl KernelWeights {
    pub fn new(groups: usize, kernel: usize, values: Tensor) -> Result<Self> {
        if values.shape() != [groups, kernel * kernel] {
            return Err(Error::contract(
                "KernelWeights",
                format!(
                    "values must be ({groups}, {}), got {:?}",
                    kernel * kernel,
                    values.shape()
                ),
            ));
        }
        Ok(KernelWeights { groups, kernel, values })
    }

    /// Load (G, n²) tap weights from a tensor file.
    pub fn load(
        g: &mut Graph,
        path: &std::path::Path,
        groups: usize,
        kernel: usize,
        requires_grad: bool,
    ) -> Result<Self> {
        let t = crate::io::read_tensor(path)?;
        let values = g.leaf(t.data, &t.shape, requires_grad)?;
        KernelWeights::new(groups, kernel, values)
    }

    /// Discrete delta at the center tap: weight 1 there, 0 elsewhere.
    pub fn delta_center(g: &mut Graph, groups: usize, kernel: usize) -> Result<Self> {
        let n2 = kernel * kernel;
        let center = (kernel / 2) * kernel + kernel / 2;
        let mut data = vec![0.0; groups * n2];
        for grp in 0..groups {
            data[grp * n2 + center] = 1.0;
        }
        let values = g.leaf(data, &[groups, n2], false)?;
        KernelWeights::new(groups, kernel, values)
    }
}

/// Deformed feature map per the grouped deformable-convolution rule:
/// out(p) = Σ_k γ(p_k) · src(p + p_k + Δp_k), each sample bilinear, where
/// channel group g uses offset group g. Differentiable w.r.t. the source,
/// the offsets, and the weights.
pub fn deformable_sample(
    g: &mut Graph,
    src: &Tensor,
    offsets: &OffsetField,
    weights: &KernelWeights,
) -> Result<Tensor> {
    let [c, h, w] = src.shape() else {
        return Err(Error::contract(
            "deformable_sample",
            format!("src must be (C, H, W), got {:?}", src.shape()),
        ));
    };
    let (c, h, w) = (*c, *h, *w);
    if h < 2 || w < 2 {
        return Err(Error::contract("deformable_sample", "spatial dims must be at least 2x2"));
    }
    let groups = offsets.groups;
    let n = offsets.kernel;
    if offsets.spatial() != (h, w) {
        return Err(Error::contract(
            "deformable_sample",
            format!("offset spatial dims {:?} do not match src {}x{}", offsets.spatial(), h, w),
        ));
    }
    if c % groups != 0 {
        return Err(Error::contract(
            "deformable_sample",
            format!("channels {} not divisible by groups {}", c, groups),
        ));
    }
    if weights.groups != groups || weights.kernel != n {
        return Err(Error::contract(
            "deformable_sample",
            "kernel weights do not match the offset field's groups/kernel",
        ));
    }
    let n2 = n * n;
    let half = (n / 2) as f64;
    let per_group = c / groups;
    let sv = g.data_arc(src);
    let ov = g.data_arc(&offsets.values);
    let wv = g.data_arc(&weights.values);
    let plane = h * w;

    let tap_dx = |k: usize| (k % n) as f64 - half;
    let tap_dy = |k: usize| (k / n) as f64 - half;
    let off_at = |grp: usize, k: usize, d: usize, y: usize, x: usize| {
        ov[((grp * n2 + k) * 2 + d) * plane + y * w + x]
    };

    let mut data = vec![0.0; c * plane];
    for ch in 0..c {
        let grp = ch / per_group;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..n2 {
                    let u = x as f64 + tap_dx(k) + off_at(grp, k, 0, y, x);
                    let v = y as f64 + tap_dy(k) + off_at(grp, k, 1, y, x);
                    let tap = bilinear_tap(u, v, h, w);
                    let at = |yy: usize, xx: usize| sv[ch * plane + yy * w + xx];
                    let sample = (1.0 - tap.fu) * (1.0 - tap.fv) * at(tap.y0, tap.x0)
                        + tap.fu * (1.0 - tap.fv) * at(tap.y0, tap.x0 + 1)
                        + (1.0 - tap.fu) * tap.fv * at(tap.y0 + 1, tap.x0)
                        + tap.fu * tap.fv * at(tap.y0 + 1, tap.x0 + 1);
                    acc += wv[grp * n2 + k] * sample;
                }
                data[ch * plane + y * w + x] = acc;
            }
        }
    }

    let (src_id, off_id, wgt_id) = (src.id(), offsets.values.id(), weights.values.id());
    let backward = {
        let (sv, ov, wv) = (Arc::clone(&sv), Arc::clone(&ov), Arc::clone(&wv));
        Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
            let tap_dx = |k: usize| (k % n) as f64 - half;
            let tap_dy = |k: usize| (k / n) as f64 - half;
            let off_at = |grp: usize, k: usize, d: usize, y: usize, x: usize| {
                ov[((grp * n2 + k) * 2 + d) * plane + y * w + x]
            };
            for ch in 0..c {
                let grp = ch / per_group;
                for y in 0..h {
                    for x in 0..w {
                        let u_out = up[ch * plane + y * w + x];
                        if u_out == 0.0 {
                            continue;
                        }
                        for k in 0..n2 {
                            let u = x as f64 + tap_dx(k) + off_at(grp, k, 0, y, x);
                            let v = y as f64 + tap_dy(k) + off_at(grp, k, 1, y, x);
                            let tap = bilinear_tap(u, v, h, w);
                            let at = |yy: usize, xx: usize| sv[ch * plane + yy * w + xx];
                            let (i00, i01) = (at(tap.y0, tap.x0), at(tap.y0, tap.x0 + 1));
                            let (i10, i11) = (at(tap.y0 + 1, tap.x0), at(tap.y0 + 1, tap.x0 + 1));
                            let weight = wv[grp * n2 + k];
                            let sample = (1.0 - tap.fu) * (1.0 - tap.fv) * i00
                                + tap.fu * (1.0 - tap.fv) * i01
                                + (1.0 - tap.fu) * tap.fv * i10
                                + tap.fu * tap.fv * i11;
                            // γ weight
                            sink.add(wgt_id, grp * n2 + k, u_out * sample);
                            // source corners
                            let uw = u_out * weight;
                            sink.add(src_id, ch * plane + tap.y0 * w + tap.x0, uw * (1.0 - tap.fu) * (1.0 - tap.fv));
                            sink.add(src_id, ch * plane + tap.y0 * w + tap.x0 + 1, uw * tap.fu * (1.0 - tap.fv));
                            sink.add(src_id, ch * plane + (tap.y0 + 1) * w + tap.x0, uw * (1.0 - tap.fu) * tap.fv);
                            sink.add(src_id, ch * plane + (tap.y0 + 1) * w + tap.x0 + 1, uw * tap.fu * tap.fv);
                            // offsets, zero where the sampler clamped
                            if !tap.clamped_u {
                                let du = (1.0 - tap.fv) * (i01 - i00) + tap.fv * (i11 - i10);
                                sink.add(off_id, ((grp * n2 + k) * 2) * plane + y * w + x, uw * du);
                            }
                            if !tap.clamped_v {
                                let dv = (1.0 - tap.fu) * (i10 - i00) + tap.fu * (i11 - i01);
                                sink.add(off_id, ((grp * n2 + k) * 2 + 1) * plane + y * w + x, uw * dv);
                            }
                        }
                    }
                }
            }
        })
    };
    Ok(g.record(
        "deformable_sample",
        &[src, &offsets.values, &weights.values],
        vec![c, h, w],
        data,
        backward,
    ))
}

/// Mean squared difference between a reference image and its reconstruction.
pub fn recon_loss(g: &mut Graph, reference: &Tensor, reconstructed: &Tensor) -> Result<Tensor> {
    if reference.shape() != reconstructed.shape() {
        return Err(Error::ShapeMismatch {
            op: "recon_loss",
            lhs: reference.shape().to_vec(),
            rhs: reconstructed.shape().to_vec(),
        });
    }
    let diff = g.sub(reference, reconstructed)?;
    let sq = g.mul(&diff, &diff)?;
    g.mean(&sq, None)
}

/// Align the source depth features with the *same* offsets and weights used
/// for RGB alignment, then return the mean squared difference against the
/// reference depth features.
pub fn df_loss(
    g: &mut Graph,
    depth_feat_ref: &Tensor,
    depth_feat_src: &Tensor,
    offsets: &OffsetField,
    weights: &KernelWeights,
) -> Result<Tensor> {
    if depth_feat_ref.shape() != depth_feat_src.shape() {
        return Err(Error::ShapeMismatch {
            op: "df_loss",
            lhs: depth_feat_ref.shape().to_vec(),
            rhs: depth_feat_src.shape().to_vec(),
        });
    }
    let aligned = deformable_sample(g, depth_feat_src, offsets, weights)?;
    recon_loss(g, depth_feat_ref, &aligned)
}

/// Fixed per-position channel map: `out[o] = Σ_i weight[o][i]·in[i] + bias[o]`.
/// Stands in for the trained feature extractor and reconstruction networks;
/// gradients flow through the features, not the map parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ChannelAffine {
    pub fn new(out_channels: usize, in_channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_channels * in_channels || bias.len() != out_channels {
            return Err(Error::contract(
                "ChannelAffine",
                format!("need {}x{} weights and {} biases", out_channels, in_channels, out_channels),
            ));
        }
        Ok(ChannelAffine { out_channels, in_channels, weight, bias })
    }

    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels];
        for i in 0..channels {
            weight[i * channels + i] = 1.0;
        }
        ChannelAffine { out_channels: channels, in_channels: channels, weight, bias: vec![0.0; channels] }
    }

    pub fn apply(&self, g: &mut Graph, input: &Tensor) -> Result<Tensor> {
        let [c, h, w] = input.shape() else {
            return Err(Error::contract(
                "ChannelAffine",
                format!("input must be (C, H, W), got {:?}", input.shape()),
            ));
        };
        let (c, h, w) = (*c, *h, *w);
        if c != self.in_channels {
            return Err(Error::contract(
                "ChannelAffine",
                format!("input has {} channels, map expects {}", c, self.in_channels),
            ));
        }
        let plane = h * w;
        let iv = g.data_arc(input);
        let weight = Arc::new(self.weight.clone());
        let out_c = self.out_channels;
        let mut data = vec![0.0; out_c * plane];
        for o in 0..out_c {
            for p in 0..plane {
                let mut acc = self.bias[o];
                for i in 0..c {
                    acc += weight[o * c + i] * iv[i * plane + p];
                }
                data[o * plane + p] = acc;
            }
        }
        let id = input.id();
        let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
            for o in 0..out_c {
                for p in 0..plane {
                    let u = up[o * plane + p];
                    if u == 0.0 {
                        continue;
                    }
                    for i in 0..c {
                        sink.add(id, i * plane + p, u * weight[o * c + i]);
                    }
                }
            }
        });
        Ok(g.record("channel_affine", &[input], vec![out_c, h, w], data, backward))
    }
}

/// Combined alignment loss: reconstruct the reference image from deformably
/// aligned source features and add the depth-feature alignment term. The two
/// terms enter unweighted; the caller's total-loss weighting handles scaling.
#[allow(clippy::too_many_arguments)]
pub fn dfa_loss(
    g: &mut Graph,
    ref_image: &Tensor,
    src_image: &Tensor,
    depth_feat_ref: &Tensor,
    depth_feat_src: &Tensor,
    offsets: &OffsetField,
    weights: &KernelWeights,
    extractor: &ChannelAffine,
    reconstructor: &ChannelAffine,
) -> Result<Tensor> {
    if ref_image.shape() != src_image.shape() {
        return Err(Error::ShapeMismatch {
            op: "dfa_loss",
            lhs: ref_image.shape().to_vec(),
            rhs: src_image.shape().to_vec(),
        });
    }
    let src_features = extractor.apply(g, src_image)?;
    let aligned = deformable_sample(g, &src_features, offsets, weights)?;
    let reconstructed = reconstructor.apply(g, &aligned)?;
    let re = recon_loss(g, ref_image, &reconstructed)?;
    let df = df_loss(g, depth_feat_ref, depth_feat_src, offsets, weights)?;
    g.add(&re, &df)
}
