//! 2D baseline losses: photometric error between a reference frame and a
//! warped source frame (weighted L1 + SSIM), and edge-aware smoothness on
//! mean-normalized inverse depth.

use crate::camera::image_dims;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

/// SSIM/L1 mixing parameters. The defaults follow the common baseline
/// convention (0.85 SSIM weight, 3x3 window, c1 = 1e-4, c2 = 9e-4); they are
/// configurable rather than fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricConfig {
    pub ssim_weight: f64,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        PhotometricConfig { ssim_weight: 0.85, ssim_window: 3, ssim_c1: 1e-4, ssim_c2: 9e-4 }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::contract(
                "PhotometricConfig",
                format!("ssim_weight {} outside [0, 1]", self.ssim_weight),
            ));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::contract(
                "PhotometricConfig",
                format!("ssim_window {} must be odd and >= 3", self.ssim_window),
            ));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::contract("PhotometricConfig", "stabilizers must be positive"));
        }
        Ok(())
    }
}

/// Local mean over a `window`x`window` neighborhood with border replication.
pub fn box_filter(g: &mut Graph, image: &Tensor, window: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims("box_filter", image.shape())?;
    if window % 2 == 0 || window == 0 {
        return Err(Error::contract("box_filter", format!("window {} must be odd", window)));
    }
    let k = (window / 2) as isize;
    let inv = 1.0 / (window * window) as f64;
    let iv = g.data_arc(image);
    let mut data = vec![0.0; h * w * c];
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in -k..=k {
                    for dx in -k..=k {
                        let (rr, cc) = (clamp(r as isize + dy, h), clamp(col as isize + dx, w));
                        acc += iv[(rr * w + cc) * c + ch];
                    }
                }
                data[(r * w + col) * c + ch] = acc * inv;
            }
        }
    }
    let id = image.id();
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let u = up[(r * w + col) * c + ch] * inv;
                    if u == 0.0 {
                        continue;
                    }
                    for dy in -k..=k {
                        for dx in -k..=k {
                            let (rr, cc) = (clamp(r as isize + dy, h), clamp(col as isize + dx, w));
                            sink.add(id, (rr * w + cc) * c + ch, u);
                        }
                    }
                }
            }
        }
    });
    Ok(g.record("box_filter", &[image], image.shape().to_vec(), data, backward))
}

/// Forward difference along x: out[r, c] = a[r, c+1] - a[r, c], width shrinks by one.
pub fn diff_x(g: &mut Graph, a: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image_dims("diff_x", a.shape())?;
    if w < 2 {
        return Err(Error::contract("diff_x", "width must be at least 2"));
    }
    let av = g.data_arc(a);
    let mut data = vec![0.0; h * (w - 1) * c];
    for r in 0..h {
        for col in 0..w - 1 {
            for ch in 0..c {
                data[(r * (w - 1) + col) * c + ch] =
                    av[(r * w + col + 1) * c + ch] - av[(r * w + col) * c + ch];
            }
        }
    }
    let id = a.id();
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for r in 0..h {
            for col in 0..w - 1 {
                for ch in 0..c {
                    let u = up[(r * (w - 1) + col) * c + ch];
                    sink.add(id, (r * w + col + 1) * c + ch, u);
                    sink.add(id, (r * w + col) * c + ch, -u);
                }
            }
        }
    });
    let mut shape = vec![h, w - 1];
    if a.rank() == 3 {
        shape.push(c);
    }
    Ok(g.record("diff_x", &[a], shape, data, backward))
}

/// Forward difference along y: out[r, c] = a[r+1, c] - a[r, c], height shrinks by one.
pub fn diff_y(g: &mut Graph, a: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image_dims("diff_y", a.shape())?;
    if h < 2 {
        return Err(Error::contract("diff_y", "height must be at least 2"));
    }
    let av = g.data_arc(a);
    let mut data = vec![0.0; (h - 1) * w * c];
    for r in 0..h - 1 {
        for col in 0..w {
            for ch in 0..c {
                data[(r * w + col) * c + ch] =
                    av[((r + 1) * w + col) * c + ch] - av[(r * w + col) * c + ch];
            }
        }
    }
    let id = a.id();
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for r in 0..h - 1 {
            for col in 0..w {
                for ch in 0..c {
                    let u = up[(r * w + col) * c + ch];
                    sink.add(id, ((r + 1) * w + col) * c + ch, u);
                    sink.add(id, (r * w + col) * c + ch, -u);
                }
            }
        }
    });
    let mut shape = vec![h - 1, w];
    if a.rank() == 3 {
        shape.push(c);
    }
    Ok(g.record("diff_y", &[a], shape, data, backward))
}

/// Mean |x| over the channel axis, turning (H, W, C) into (H, W);
/// rank-2 inputs just get abs.
fn channel_mean_abs(g: &mut Graph, t: &Tensor) -> Result<Tensor> {
    let a = g.abs(t);
    if t.rank() == 3 {
        g.mean(&a, Some(&[2]))
    } else {
        Ok(a)
    }
}

/// Per-pixel SSIM map (channel-averaged) between two same-shape images.
fn ssim_map(g: &mut Graph, a: &Tensor, b: &Tensor, cfg: &PhotometricConfig) -> Result<Tensor> {
    let win = cfg.ssim_window;
    let mu_a = box_filter(g, a, win)?;
    let mu_b = box_filter(g, b, win)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = box_filter(g, &aa, win)?;
    let e_bb = box_filter(g, &bb, win)?;
    let e_ab = box_filter(g, &ab, win)?;
    let mu_aa = g.mul(&mu_a, &mu_a)?;
    let mu_bb = g.mul(&mu_b, &mu_b)?;
    let mu_ab = g.mul(&mu_a, &mu_b)?;
    let var_a = g.sub(&e_aa, &mu_aa)?;
    let var_b = g.sub(&e_bb, &mu_bb)?;
    let cov = g.sub(&e_ab, &mu_ab)?;

    let two_mu = g.scale(&mu_ab, 2.0)?;
    let two_mu_c1 = g.add_scalar(&two_mu, cfg.ssim_c1)?;
    let two_cov = g.scale(&cov, 2.0)?;
    let two_cov_c2 = g.add_scalar(&two_cov, cfg.ssim_c2)?;
    let num = g.mul(&two_mu_c1, &two_cov_c2)?;

    let mu_sum = g.add(&mu_aa, &mu_bb)?;
    let mu_sum_c1 = g.add_scalar(&mu_sum, cfg.ssim_c1)?;
    let var_sum = g.add(&var_a, &var_b)?;
    let var_sum_c2 = g.add_scalar(&var_sum, cfg.ssim_c2)?;
    let den = g.mul(&mu_sum_c1, &var_sum_c2)?;

    let ssim = g.div(&num, &den)?;
    if ssim.rank() == 3 {
        g.mean(&ssim, Some(&[2]))
    } else {
        Ok(ssim)
    }
}

/// Per-pixel photometric error map (H, W):
/// ssim_weight * (1 - SSIM)/2 + (1 - ssim_weight) * L1.
pub fn photometric_error_map(
    g: &mut Graph,
    reference: &Tensor,
    warped: &Tensor,
    cfg: &PhotometricConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if reference.shape() != warped.shape() {
        return Err(Error::ShapeMismatch {
            op: "photometric_loss",
            lhs: reference.shape().to_vec(),
            rhs: warped.shape().to_vec(),
        });
    }
    let diff = g.sub(reference, warped)?;
    let l1 = channel_mean_abs(g, &diff)?;
    if cfg.ssim_weight == 0.0 {
        return Ok(l1);
    }
    let ssim = ssim_map(g, reference, warped, cfg)?;
    let one_minus = g.neg(&ssim);
    let one_minus = g.add_scalar(&one_minus, 1.0)?;
    let dssim = g.scale(&one_minus, 0.5 * cfg.ssim_weight)?;
    let l1w = g.scale(&l1, 1.0 - cfg.ssim_weight)?;
    g.add(&dssim, &l1w)
}

/// Mean of `map` over pixels where `mask` is true.
pub fn masked_mean(g: &mut Graph, map: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if map.numel() != mask.len() {
        return Err(Error::contract(
            "masked_mean",
            format!("mask length {} does not match map {:?}", mask.len(), map.shape()),
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::domain("masked_mean", "no valid pixels"));
    }
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let wt = g.constant(weights, map.shape())?;
    let masked = g.mul(map, &wt)?;
    let total = g.sum(&masked, None)?;
    g.scale(&total, 1.0 / count as f64)
}

/// Photometric cross-view loss averaged over valid pixels. Symmetric in
/// (reference, warped) for a fixed configuration; zero for identical images.
pub fn photometric_loss(
    g: &mut Graph,
    reference: &Tensor,
    warped: &Tensor,
    mask: &[bool],
    cfg: &PhotometricConfig,
) -> Result<Tensor> {
    let map = photometric_error_map(g, reference, warped, cfg)?;
    masked_mean(g, &map, mask)
}

/// Optional per-pixel minimum-reprojection reduction over several warped
/// sources. Each pixel takes the smallest error among the sources whose mask
/// covers it; pixels covered by no source are excluded from the mean.
pub fn photometric_loss_min(
    g: &mut Graph,
    reference: &Tensor,
    sources: &[(Tensor, Vec<bool>)],
    cfg: &PhotometricConfig,
) -> Result<Tensor> {
    if sources.is_empty() {
        return Err(Error::contract("photometric_loss_min", "no sources"));
    }
    let maps: Vec<Tensor> = sources
        .iter()
        .map(|(warped, _)| photometric_error_map(g, reference, warped, cfg))
        .collect::<Result<_>>()?;
    let npix = maps[0].numel();
    for (_, mask) in sources {
        if mask.len() != npix {
            return Err(Error::contract("photometric_loss_min", "mask length mismatch"));
        }
    }
    // Pick, per pixel, the valid source with the smallest error.
    let values: Vec<std::sync::Arc<Vec<f64>>> = maps.iter().map(|m| g.data_arc(m)).collect();
    let mut choice: Vec<Option<usize>> = vec![None; npix];
    for pix in 0..npix {
        let mut best: Option<(usize, f64)> = None;
        for (s, (_, mask)) in sources.iter().enumerate() {
            if mask[pix] {
                let v = values[s][pix];
                if best.map_or(true, |(_, bv)| v < bv) {
                    best = Some((s, v));
                }
            }
        }
        choice[pix] = best.map(|(s, _)| s);
    }
    let count = choice.iter().filter(|c| c.is_some()).count();
    if count == 0 {
        return Err(Error::domain("photometric_loss_min", "no valid pixels"));
    }
    let data: Vec<f64> = choice
        .iter()
        .enumerate()
        .map(|(pix, c)| c.map_or(0.0, |s| values[s][pix]))
        .collect();
    let ids: Vec<usize> = maps.iter().map(|m| m.id()).collect();
    let choice = std::sync::Arc::new(choice);
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for (pix, c) in choice.iter().enumerate() {
            if let Some(s) = c {
                sink.add(ids[*s], pix, up[pix]);
            }
        }
    });
    let inputs: Vec<&Tensor> = maps.iter().collect();
    let shape = maps[0].shape().to_vec();
    let min_map = g.record("min_reproject", &inputs, shape, data, backward);
    let total = g.sum(&min_map, None)?;
    g.scale(&total, 1.0 / count as f64)
}

/// Edge-aware smoothness on mean-normalized inverse depth:
/// mean |∂x μ| e^{-|∂x I|} + mean |∂y μ| e^{-|∂y I|}, with forward
/// differences and μ = (1/D) / mean(1/D). Invariant to uniform depth scaling.
pub fn smoothness_loss(g: &mut Graph, depth: &Tensor, image: &Tensor) -> Result<Tensor> {
    let (h, w, _) = image_dims("smoothness_loss", image.shape())?;
    if depth.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "smoothness_loss",
            lhs: depth.shape().to_vec(),
            rhs: image.shape().to_vec(),
        });
    }
    let ones = g.constant(vec![1.0; depth.numel()], depth.shape())?;
    let inv = g.div(&ones, depth)?;
    let mean_inv = g.mean(&inv, None)?;
    if g.scalar_value(&mean_inv) == 0.0 {
        return Err(Error::domain("smoothness_loss", "mean inverse depth is zero"));
    }
    let mu = g.div(&inv, &mean_inv)?;

    let dmu_x = diff_x(g, &mu)?;
    let dmu_x = g.abs(&dmu_x);
    let dmu_y = diff_y(g, &mu)?;
    let dmu_y = g.abs(&dmu_y);

    let di_x = diff_x(g, image)?;
    let di_x = channel_mean_abs(g, &di_x)?;
    let di_y = diff_y(g, image)?;
    let di_y = channel_mean_abs(g, &di_y)?;

    let wx = {
        let n = g.neg(&di_x);
        g.exp(&n)?
    };
    let wy = {
        let n = g.neg(&di_y);
        g.exp(&n)?
    };
    let tx = g.mul(&dmu_x, &wx)?;
    let ty = g.mul(&dmu_y, &wy)?;
    let mx = g.mean(&tx, None)?;
    let my = g.mean(&ty, None)?;
    g.add(&mx, &my)
}
