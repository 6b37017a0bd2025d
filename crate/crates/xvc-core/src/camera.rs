//! Pinhole camera model, SE(3) rigid transforms, and the differentiable
//! warping chain that reconstructs a reference view from a source view.
//!
//! Conventions, fixed once for the whole crate: camera frame is x right,
//! y down, z forward; the pixel origin sits at the image top-left with pixel
//! centers on integer coordinates. Images are `(H, W)` or `(H, W, C)`
//! tensors, depth maps `(H, W)`.
//!
//! Bilinear sampling clamps out-of-range coordinates to the border but marks
//! those samples invalid, so losses can exclude them while gradients stay
//! defined everywhere.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

const Z_GUARD: f64 = 1e-12;

/// Pinhole intrinsics: focal lengths and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::contract(
                "CameraIntrinsics",
                format!("focal lengths must be positive, got fx={fx}, fy={fy}"),
            ));
        }
        Ok(CameraIntrinsics { fx, fy, u0, v0 })
    }

    pub fn from_config(section: &crate::config::Section) -> Result<Self> {
        CameraIntrinsics::new(
            section.f64("fx")?,
            section.f64("fy")?,
            section.f64("u0")?,
            section.f64("v0")?,
        )
    }

    /// Unit-depth ray direction through pixel (u, v).
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.u0) / self.fx, (v - self.v0) / self.fy, 1.0]
    }

    /// Project a camera-frame point; returns (u, v, z).
    pub fn project_point(&self, p: [f64; 3]) -> (f64, f64, f64) {
        (
            self.fx * p[0] / p[2] + self.u0,
            self.fy * p[1] / p[2] + self.v0,
            p[2],
        )
    }
}

/// SE(3) pose: orthonormal rotation (row-major) plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    const ORTHO_TOL: f64 = 1e-9;

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let t = RigidTransform { rotation, translation };
        // R^T R = I and det R = +1, both within 1e-9.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > Self::ORTHO_TOL {
                    return Err(Error::contract(
                        "RigidTransform",
                        format!("rotation is not orthonormal (RtR[{i}][{j}] = {dot})"),
                    ));
                }
            }
        }
        let det = t.det();
        if (det - 1.0).abs() > Self::ORTHO_TOL {
            return Err(Error::contract(
                "RigidTransform",
                format!("rotation determinant {det} != +1"),
            ));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        RigidTransform { translation: t, ..RigidTransform::identity() }
    }

    /// Rotation by `angle` radians about a coordinate axis (0 = x, 1 = y, 2 = z).
    pub fn from_axis_angle(axis: usize, angle: f64) -> Result<Self> {
        let (c, s) = (angle.cos(), angle.sin());
        let rotation = match axis {
            0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
            1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            2 => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            _ => return Err(Error::contract("RigidTransform", format!("bad axis {axis}"))),
        };
        Ok(RigidTransform { rotation, translation: [0.0; 3] })
    }

    fn det(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        // (self ∘ other)(p) = self(other(p))
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        let translation = self.apply(other.translation);
        RigidTransform { rotation, translation }
    }

    pub fn inverse(&self) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = self.rotation[j][i];
            }
        }
        let t = self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        RigidTransform { rotation, translation }
    }

    /// Reads `rotation` (9 row-major values, defaulting to identity) and
    /// `translation` (3 values, defaulting to zero).
    pub fn from_config(section: &crate::config::Section) -> Result<Self> {
        let rotation = match section.get("rotation") {
            Some(_) => {
                let r: [f64; 9] = section.f64_array("rotation")?;
                [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]
            }
            None => RigidTransform::identity().rotation,
        };
        let translation = match section.get("translation") {
            Some(_) => section.f64_array("translation")?,
            None => [0.0; 3],
        };
        RigidTransform::new(rotation, translation)
    }
}

/// Depth values with a per-pixel validity mask, plain data (not on a graph).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || valid.len() != height * width {
            return Err(Error::contract(
                "DepthMap",
                format!("buffer lengths do not match {height}x{width}"),
            ));
        }
        for (i, (&d, &ok)) in values.iter().zip(&valid).enumerate() {
            if ok && !(d > 0.0) {
                return Err(Error::contract(
                    "DepthMap",
                    format!("non-positive depth {} at valid pixel ({}, {})", d, i / width, i % width),
                ));
            }
        }
        Ok(DepthMap { height, width, values, valid })
    }

    pub fn all_valid(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; height * width];
        DepthMap::new(height, width, values, valid)
    }

    /// Lift onto a graph as an `(H, W)` tensor.
    pub fn to_tensor(&self, g: &mut Graph, requires_grad: bool) -> Result<Tensor> {
        g.leaf(self.values.clone(), &[self.height, self.width], requires_grad)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }
}

/// Points in the camera frame as an `(n, 3)` tensor on a graph.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Tensor,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_rows(g: &mut Graph, rows: &[[f64; 3]], requires_grad: bool) -> Result<PointCloud> {
        let mut data = Vec::with_capacity(rows.len() * 3);
        for r in rows {
            data.extend_from_slice(r);
        }
        let points = g.leaf(data, &[rows.len(), 3], requires_grad)?;
        Ok(PointCloud { points })
    }

    pub fn rows(&self, g: &Graph) -> Vec<[f64; 3]> {
        let v = g.value(&self.points);
        (0..self.len()).map(|i| [v[3 * i], v[3 * i + 1], v[3 * i + 2]]).collect()
    }

    /// Load an (n, 3) cloud from a tensor file.
    pub fn load(g: &mut Graph, path: &std::path::Path, requires_grad: bool) -> Result<PointCloud> {
        let t = crate::io::read_tensor(path)?;
        if t.shape.len() != 2 || t.shape[1] != 3 {
            return Err(Error::Format(format!(
                "{}: point cloud must be (n, 3), got {:?}",
                path.display(),
                t.shape
            )));
        }
        let points = g.leaf(t.data, &t.shape, requires_grad)?;
        Ok(PointCloud { points })
    }

    pub fn save(&self, g: &Graph, path: &std::path::Path) -> Result<()> {
        crate::io::write_tensor(path, self.points.shape(), g.value(&self.points))
    }
}

/// Result of projecting a cloud: pixel coordinates stay on the graph, the
/// per-point depth and front-of-camera flags are plain metadata.
#[derive(Debug, Clone)]
pub struct Projection {
    pub pixels: Tensor,
    pub depths: Vec<f64>,
    pub in_front: Vec<bool>,
}

/// Accepts `(H, W)` or `(H, W, C)` shapes, returning (H, W, C).
pub(crate) fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w] => Ok((*h, *w, 1)),
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::contract(
            op,
            format!("expected (H, W) or (H, W, C) image, got {:?}", other),
        )),
    }
}

/// Backproject valid depth pixels into a camera-frame point cloud, one row
/// per valid pixel in row-major pixel order. Differentiable w.r.t. depth.
pub fn backproject(
    g: &mut Graph,
    depth: &Tensor,
    valid: &[bool],
    k: &CameraIntrinsics,
) -> Result<PointCloud> {
    let [h, w] = depth.shape() else {
        return Err(Error::contract(
            "backproject",
            format!("depth must be (H, W), got {:?}", depth.shape()),
        ));
    };
    let (h, w) = (*h, *w);
    if valid.len() != h * w {
        return Err(Error::contract(
            "backproject",
            format!("mask length {} does not match {}x{}", valid.len(), h, w),
        ));
    }
    let dv = g.data_arc(depth);
    for (i, &ok) in valid.iter().enumerate() {
        if ok && !(dv[i] > 0.0) {
            return Err(Error::contract(
                "backproject",
                format!("non-positive depth {} at valid pixel ({}, {})", dv[i], i / w, i % w),
            ));
        }
    }
    // Per valid pixel: ray direction scaled by depth, plus the depth partial.
    let mut pixel_of_row = Vec::new();
    let mut rays = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if valid[i] {
                pixel_of_row.push(i);
                rays.push(k.ray(col as f64, row as f64));
            }
        }
    }
    let n = pixel_of_row.len();
    let mut data = Vec::with_capacity(n * 3);
    for (r, &pix) in pixel_of_row.iter().enumerate() {
        let d = dv[pix];
        data.extend_from_slice(&[d * rays[r][0], d * rays[r][1], d]);
    }
    let id = depth.id();
    let pixel_of_row = Arc::new(pixel_of_row);
    let rays = Arc::new(rays);
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for (r, &pix) in pixel_of_row.iter().enumerate() {
            let ray = rays[r];
            let contrib = up[3 * r] * ray[0] + up[3 * r + 1] * ray[1] + up[3 * r + 2];
            sink.add(id, pix, contrib);
        }
    });
    let points = g.record("backproject", &[depth], vec![n, 3], data, backward);
    Ok(PointCloud { points })
}

/// Project camera-frame points to pixels. Points with |z| below the division
/// guard are flagged invalid and produce zero coordinates and gradients;
/// points behind the camera keep their coordinates but are flagged not in
/// front.
pub fn project(g: &mut Graph, cloud: &PointCloud, k: &CameraIntrinsics) -> Result<Projection> {
    let shape = cloud.points.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::contract(
            "project",
            format!("cloud must be (n, 3), got {:?}", shape),
        ));
    }
    let n = shape[0];
    let pv = g.data_arc(&cloud.points);
    let mut data = vec![0.0; n * 2];
    let mut depths = vec![0.0; n];
    let mut in_front = vec![false; n];
    let mut usable = vec![false; n];
    for i in 0..n {
        let (x, y, z) = (pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]);
        depths[i] = z;
        if z.abs() <= Z_GUARD {
            continue;
        }
        usable[i] = true;
        in_front[i] = z > 0.0;
        data[2 * i] = k.fx * x / z + k.u0;
        data[2 * i + 1] = k.fy * y / z + k.v0;
    }
    let id = cloud.points.id();
    let (fx, fy) = (k.fx, k.fy);
    let usable_b = Arc::new(usable);
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for i in 0..n {
            if !usable_b[i] {
                continue;
            }
            let (x, y, z) = (pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]);
            let (du, dv) = (up[2 * i], up[2 * i + 1]);
            sink.add(id, 3 * i, du * fx / z);
            sink.add(id, 3 * i + 1, dv * fy / z);
            sink.add(id, 3 * i + 2, -(du * fx * x + dv * fy * y) / (z * z));
        }
    });
    let pixels = g.record("project", &[&cloud.points], vec![n, 2], data, backward);
    Ok(Projection { pixels, depths, in_front })
}

/// Map every point by R·p + t. Differentiable w.r.t. the points.
pub fn transform_points(g: &mut Graph, cloud: &PointCloud, t: &RigidTransform) -> Result<PointCloud> {
    let shape = cloud.points.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::contract(
            "transform_points",
            format!("cloud must be (n, 3), got {:?}", shape),
        ));
    }
    let n = shape[0];
    let pv = g.data_arc(&cloud.points);
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        let p = t.apply([pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]]);
        data.extend_from_slice(&p);
    }
    let id = cloud.points.id();
    let rot = t.rotation;
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for i in 0..n {
            // grad_p = R^T · upstream_row
            for a in 0..3 {
                let mut acc = 0.0;
                for b in 0..3 {
                    acc += rot[b][a] * up[3 * i + b];
                }
                sink.add(id, 3 * i + a, acc);
            }
        }
    });
    let points = g.record("transform_points", &[&cloud.points], vec![n, 3], data, backward);
    Ok(PointCloud { points })
}

pub(crate) struct BilinearTap {
    pub x0: usize,
    pub y0: usize,
    pub fu: f64,
    pub fv: f64,
    pub clamped_u: bool,
    pub clamped_v: bool,
    pub in_bounds: bool,
}

/// Sample positions this close to the image rectangle still count as
/// in-bounds; covers floating error in projective round trips.
const BORDER_EPS: f64 = 1e-9;

/// Clamp a sample position into the image and split it into base cell and
/// fractions. Requires W, H >= 2. `clamped_*` report exact clamping (used to
/// zero coordinate gradients); `in_bounds` allows `BORDER_EPS` of slack.
pub(crate) fn bilinear_tap(u: f64, v: f64, h: usize, w: usize) -> BilinearTap {
    let (u_max, v_max) = ((w - 1) as f64, (h - 1) as f64);
    let clamped_u = !(0.0..=u_max).contains(&u);
    let clamped_v = !(0.0..=v_max).contains(&v);
    let in_bounds = u >= -BORDER_EPS && u <= u_max + BORDER_EPS && v >= -BORDER_EPS && v <= v_max + BORDER_EPS;
    let uc = u.clamp(0.0, u_max);
    let vc = v.clamp(0.0, v_max);
    let x0 = (uc.floor() as usize).min(w - 2);
    let y0 = (vc.floor() as usize).min(h - 2);
    BilinearTap { x0, y0, fu: uc - x0 as f64, fv: vc - y0 as f64, clamped_u, clamped_v, in_bounds }
}

/// Bilinearly sample an image at n coordinate pairs. Returns an `(n, C)`
/// tensor and a flag per sample that is false when the coordinate had to be
/// clamped to the border. Differentiable w.r.t. both the image and the
/// coordinates; clamped samples have zero coordinate gradients.
pub fn bilinear_sample(
    g: &mut Graph,
    image: &Tensor,
    coords: &Tensor,
) -> Result<(Tensor, Vec<bool>)> {
    let (h, w, c) = image_dims("bilinear_sample", image.shape())?;
    if h < 2 || w < 2 {
        return Err(Error::contract(
            "bilinear_sample",
            format!("image must be at least 2x2, got {}x{}", h, w),
        ));
    }
    let cshape = coords.shape();
    if cshape.len() != 2 || cshape[1] != 2 {
        return Err(Error::contract(
            "bilinear_sample",
            format!("coords must be (n, 2), got {:?}", cshape),
        ));
    }
    let n = cshape[0];
    let iv = g.data_arc(image);
    let cv = g.data_arc(coords);
    let mut data = vec![0.0; n * c];
    let mut in_bounds = vec![true; n];
    for i in 0..n {
        let tap = bilinear_tap(cv[2 * i], cv[2 * i + 1], h, w);
        in_bounds[i] = tap.in_bounds;
        let (x0, y0, fu, fv) = (tap.x0, tap.y0, tap.fu, tap.fv);
        for ch in 0..c {
            let at = |y: usize, x: usize| iv[(y * w + x) * c + ch];
            data[i * c + ch] = (1.0 - fu) * (1.0 - fv) * at(y0, x0)
                + fu * (1.0 - fv) * at(y0, x0 + 1)
                + (1.0 - fu) * fv * at(y0 + 1, x0)
                + fu * fv * at(y0 + 1, x0 + 1);
        }
    }
    let (img_id, coord_id) = (image.id(), coords.id());
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for i in 0..n {
            let tap = bilinear_tap(cv[2 * i], cv[2 * i + 1], h, w);
            let (x0, y0, fu, fv) = (tap.x0, tap.y0, tap.fu, tap.fv);
            let (mut du, mut dv) = (0.0, 0.0);
            for ch in 0..c {
                let u = up[i * c + ch];
                if u == 0.0 {
                    continue;
                }
                let at = |y: usize, x: usize| iv[(y * w + x) * c + ch];
                let (i00, i01) = (at(y0, x0), at(y0, x0 + 1));
                let (i10, i11) = (at(y0 + 1, x0), at(y0 + 1, x0 + 1));
                sink.add(img_id, (y0 * w + x0) * c + ch, u * (1.0 - fu) * (1.0 - fv));
                sink.add(img_id, (y0 * w + x0 + 1) * c + ch, u * fu * (1.0 - fv));
                sink.add(img_id, ((y0 + 1) * w + x0) * c + ch, u * (1.0 - fu) * fv);
                sink.add(img_id, ((y0 + 1) * w + x0 + 1) * c + ch, u * fu * fv);
                du += u * ((1.0 - fv) * (i01 - i00) + fv * (i11 - i10));
                dv += u * ((1.0 - fu) * (i10 - i00) + fu * (i11 - i01));
            }
            if !tap.clamped_u {
                sink.add(coord_id, 2 * i, du);
            }
            if !tap.clamped_v {
                sink.add(coord_id, 2 * i + 1, dv);
            }
        }
    });
    let samples = g.record("bilinear_sample", &[image, coords], vec![n, c], data, backward);
    Ok((samples, in_bounds))
}

/// Scatter per-point samples `(n, C)` back into an `(H, W, C)` image at the
/// given row-major pixel indices; pixels with no sample stay zero.
fn scatter_rows(
    g: &mut Graph,
    samples: &Tensor,
    pixel_of_row: Arc<Vec<usize>>,
    h: usize,
    w: usize,
) -> Tensor {
    let c = samples.shape()[1];
    let n = samples.shape()[0];
    let sv = g.data_arc(samples);
    let mut data = vec![0.0; h * w * c];
    for i in 0..n {
        let pix = pixel_of_row[i];
        data[pix * c..pix * c + c].copy_from_slice(&sv[i * c..i * c + c]);
    }
    let id = samples.id();
    let backward = Box::new(move |up: &[f64], sink: &mut crate::tensor::GradSink<'_>| {
        for i in 0..n {
            let pix = pixel_of_row[i];
            for ch in 0..c {
                sink.add(id, i * c + ch, up[pix * c + ch]);
            }
        }
    });
    g.record("scatter_rows", &[samples], vec![h, w, c], data, backward)
}

/// Reconstruct the reference view from `src`: each reference pixel is
/// backprojected with `depth_ref`, moved by `t_ref_to_src`, projected into
/// the source camera, and sampled bilinearly. Returns the warped image (same
/// shape as `src`) and a validity mask that excludes invalid-depth pixels,
/// points not in front of the source camera, and border-clamped samples.
/// Excluded pixels keep their (border-clamped) sample values so windowed
/// statistics of neighboring valid pixels stay unpolluted; only pixels with
/// invalid depth are zero. Differentiable w.r.t. `src` values and
/// `depth_ref`.
pub fn warp_image(
    g: &mut Graph,
    src: &Tensor,
    depth_ref: &Tensor,
    depth_valid: &[bool],
    t_ref_to_src: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<(Tensor, Vec<bool>)> {
    let (h, w, _c) = image_dims("warp_image", src.shape())?;
    if depth_ref.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "warp_image",
            lhs: src.shape().to_vec(),
            rhs: depth_ref.shape().to_vec(),
        });
    }
    let cloud = backproject(g, depth_ref, depth_valid, k)?;
    let moved = transform_points(g, &cloud, t_ref_to_src)?;
    let proj = project(g, &moved, k)?;
    let (samples, sample_ok) = bilinear_sample(g, src, &proj.pixels)?;

    let pixel_of_row: Vec<usize> = (0..h * w).filter(|&i| depth_valid[i]).collect();
    let mut mask = vec![false; h * w];
    for (r, &pix) in pixel_of_row.iter().enumerate() {
        mask[pix] = proj.in_front[r] && sample_ok[r];
    }
    let warped3 = scatter_rows(g, &samples, Arc::new(pixel_of_row), h, w);
    let warped = if src.rank() == 2 {
        g.reshape(&warped3, &[h, w])?
    } else {
        warped3
    };
    Ok((warped, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    fn test_k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn intrinsics_validate() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn principal_and_unit_slope_rays() {
        // pixel (u0, v0) at depth 5 backprojects to (0, 0, 5);
        // pixel (u0 + fx, v0) at depth 2 backprojects to (2, 0, 2).
        let k = test_k();
        let ray = k.ray(50.0, 50.0);
        assert_eq!([5.0 * ray[0], 5.0 * ray[1], 5.0], [0.0, 0.0, 5.0]);
        let ray = k.ray(150.0, 50.0);
        assert_eq!([2.0 * ray[0], 2.0 * ray[1], 2.0], [2.0, 0.0, 2.0]);
    }

    #[test]
    fn backproject_unit_cases() {
        let k = test_k();
        let mut g = Graph::new();
        let depth = g.leaf(vec![5.0, 2.0], &[1, 2], false).unwrap();
        // Need H,W semantics: 1x2 depth, pixels (0,0) and (0,1).
        let pc = backproject(&mut g, &depth, &[true, true], &k).unwrap();
        let pts = g.value(&pc.points);
        // pixel (0,0): ray ((0-50)/100, (0-50)/100, 1) * 5
        assert!((pts[0] - 5.0 * (-0.5)).abs() < 1e-12);
        assert!((pts[1] - 5.0 * (-0.5)).abs() < 1e-12);
        assert_eq!(pts[2], 5.0);
    }

    #[test]
    fn backproject_rejects_bad_depth() {
        let k = test_k();
        let mut g = Graph::new();
        let depth = g.leaf(vec![1.0, 0.0], &[1, 2], false).unwrap();
        let err = backproject(&mut g, &depth, &[true, true], &k).unwrap_err();
        assert!(err.is_contract());
        assert!(err.to_string().contains("(0, 1)"));
    }

    #[test]
    fn project_unit_cases() {
        let k = test_k();
        let mut g = Graph::new();
        let pc = PointCloud::from_rows(
            &mut g,
            &[[0.0, 0.0, 5.0], [1.0, 1.0, 1.0], [0.0, 0.0, -1.0]],
            false,
        )
        .unwrap();
        let proj = project(&mut g, &pc, &k).unwrap();
        let px = g.value(&proj.pixels);
        assert_eq!(&px[0..2], &[50.0, 50.0]);
        assert_eq!(proj.depths[0], 5.0);
        assert_eq!(&px[2..4], &[150.0, 150.0]);
        assert!(!proj.in_front[2]);
        assert!(proj.in_front[0] && proj.in_front[1]);
    }

    #[test]
    fn project_guards_near_zero_depth() {
        let k = test_k();
        let mut g = Graph::new();
        let pc = PointCloud::from_rows(&mut g, &[[0.3, 0.3, 5e-13]], true).unwrap();
        let proj = project(&mut g, &pc, &k).unwrap();
        assert!(!proj.in_front[0]);
        assert_eq!(g.value(&proj.pixels), &[0.0, 0.0]);
        // and no gradient flows through the guarded point
        let s = g.sum(&proj.pixels, None).unwrap();
        g.backward(&s).unwrap();
        assert_eq!(g.grad(&pc.points).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn project_backproject_roundtrip() {
        let k = test_k();
        let mut rng = crate::rng::SplitMix64::new(11);
        let (h, w) = (4, 4);
        let depth: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.5, 20.0)).collect();
        let mut g = Graph::new();
        let d = g.leaf(depth, &[h, w], false).unwrap();
        let valid = vec![true; h * w];
        let pc = backproject(&mut g, &d, &valid, &k).unwrap();
        let proj = project(&mut g, &pc, &k).unwrap();
        let px = g.value(&proj.pixels);
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                assert!((px[2 * i] - col as f64).abs() < 1e-9, "u at ({row},{col})");
                assert!((px[2 * i + 1] - row as f64).abs() < 1e-9, "v at ({row},{col})");
            }
        }
    }

    #[test]
    fn rigid_transform_validation_and_inverse() {
        assert!(RigidTransform::new([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]).is_err());
        // Reflection: orthonormal but det = -1.
        assert!(RigidTransform::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]], [0.0; 3]).is_err());

        let t = RigidTransform::from_axis_angle(1, 0.3)
            .unwrap()
            .compose(&RigidTransform::from_translation([1.0, -2.0, 0.5]));
        let round = t.compose(&t.inverse());
        let id = RigidTransform::identity();
        for i in 0..3 {
            for j in 0..3 {
                assert!((round.rotation[i][j] - id.rotation[i][j]).abs() < 1e-9);
            }
            assert!(round.translation[i].abs() < 1e-9);
        }
    }

    #[test]
    fn transform_points_cases() {
        let mut g = Graph::new();
        let pc = PointCloud::from_rows(&mut g, &[[0.0, 0.0, 5.0]], false).unwrap();
        let ident = transform_points(&mut g, &pc, &RigidTransform::identity()).unwrap();
        assert_eq!(g.value(&ident.points), g.value(&pc.points));
        let shifted =
            transform_points(&mut g, &pc, &RigidTransform::from_translation([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(g.value(&shifted.points), &[1.0, 0.0, 5.0]);
    }

    #[test]
    fn rigid_transform_preserves_distances() {
        let mut rng = crate::rng::SplitMix64::new(3);
        let t = RigidTransform::from_axis_angle(0, 0.7)
            .unwrap()
            .compose(&RigidTransform::from_axis_angle(2, -0.2).unwrap())
            .compose(&RigidTransform::from_translation([0.3, 1.0, -2.0]));
        for _ in 0..50 {
            let a = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
            let b = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
            let (ta, tb) = (t.apply(a), t.apply(b));
            let d0 = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            let d1 = ((ta[0] - tb[0]).powi(2) + (ta[1] - tb[1]).powi(2) + (ta[2] - tb[2]).powi(2)).sqrt();
            assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn bilinear_sample_interpolates() {
        let mut g = Graph::new();
        let img = g
            .leaf(vec![0.0, 1.0, 2.0, 3.0], &[2, 2], false)
            .unwrap();
        let coords = g.leaf(vec![0.5, 0.5], &[1, 2], false).unwrap();
        let (s, ok) = bilinear_sample(&mut g, &img, &coords).unwrap();
        assert_eq!(g.value(&s), &[1.5]);
        assert!(ok[0]);
        // out-of-range clamps and flags
        let coords = g.leaf(vec![-0.5, 0.0], &[1, 2], false).unwrap();
        let (s, ok) = bilinear_sample(&mut g, &img, &coords).unwrap();
        assert_eq!(g.value(&s), &[0.0]);
        assert!(!ok[0]);
    }

    #[test]
    fn identity_warp_is_identity_on_valid_pixels() {
        let k = test_k();
        let mut rng = crate::rng::SplitMix64::new(5);
        let (h, w) = (6, 7);
        let img: Vec<f64> = (0..h * w).map(|_| rng.next_f64()).collect();
        let depth: Vec<f64> = (0..h * w).map(|_| rng.uniform(1.0, 30.0)).collect();
        let mut g = Graph::new();
        let src = g.leaf(img.clone(), &[h, w], false).unwrap();
        let d = g.leaf(depth, &[h, w], false).unwrap();
        let valid = vec![true; h * w];
        let (warped, mask) =
            warp_image(&mut g, &src, &d, &valid, &RigidTransform::identity(), &k).unwrap();
        let wv = g.value(&warped);
        for i in 0..h * w {
            assert!(mask[i]);
            assert!((wv[i] - img[i]).abs() < 1e-12, "pixel {i}: {} vs {}", wv[i], img[i]);
        }
    }

    #[test]
    fn warp_gradient_matches_fd() {
        // gradient of mean(warped) w.r.t. depth on a smooth scene
        let k = CameraIntrinsics::new(20.0, 20.0, 3.5, 3.5).unwrap();
        let (h, w) = (8, 8);
        let mut img = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                img[r * w + c] =
                    0.5 + 0.25 * (0.5 * c as f64).sin() + 0.2 * (0.4 * r as f64).cos();
            }
        }
        let t = RigidTransform::from_translation([0.05, -0.02, 0.0]);
        let depth0 = vec![10.0; h * w];
        let img_leafed = img.clone();
        let f = move |g: &mut Graph, depth: &Tensor| {
            let src = g.leaf(img_leafed.clone(), &[h, w], false)?;
            let valid = vec![true; h * w];
            let (warped, _) = warp_image(g, &src, depth, &valid, &t, &k)?;
            g.mean(&warped, None)
        };
        let err = finite_difference_check(f, &depth0, &[h, w], 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
