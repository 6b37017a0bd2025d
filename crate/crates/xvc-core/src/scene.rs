//! Deterministic analytic ray-cast renderer.
//!
//! Scenes are lists of textured axis-aligned planes and boxes in the world
//! frame (which coincides with the reference camera frame: x right, y down,
//! z forward). Rendering casts one ray through each pixel center and keeps
//! the nearest hit, so depth maps are exact and bit-identical across runs —
//! the properties every oracle experiment in this crate leans on.
//!
//! Textures are procedural and band-limited by default (linear gradients and
//! a smooth sinusoidal checker) so that bilinear interpolation error stays
//! far below loss signals; seeded value noise exists as a stress fixture.

use crate::camera::{CameraIntrinsics, DepthMap, RigidTransform};
use crate::config::ConfigDoc;
use crate::error::{Error, Result};
use crate::rng::lattice_hash;
use crate::tensor::{Graph, Tensor};

const RAY_EPS: f64 = 1e-9;

/// Procedural surface texture sampled in local face coordinates (meters).
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Constant { value: f64 },
    /// base + slope_u·u + slope_v·v. Linear, so bilinear image resampling
    /// reproduces it exactly.
    Gradient { base: f64, slope_u: f64, slope_v: f64 },
    /// base + amplitude·sin(2πu/period)·sin(2πv/period). Low-frequency,
    /// checker-like, smooth.
    Checker { base: f64, amplitude: f64, period: f64 },
    /// Seeded value noise, smoothstep-interpolated on a lattice of spacing
    /// `scale`. Small scales make a high-frequency stress texture.
    Noise { base: f64, amplitude: f64, scale: f64, seed: u64 },
}

impl Texture {
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        match *self {
            Texture::Constant { value } => value,
            Texture::Gradient { base, slope_u, slope_v } => base + slope_u * u + slope_v * v,
            Texture::Checker { base, amplitude, period } => {
                let w = std::f64::consts::TAU / period;
                base + amplitude * (w * u).sin() * (w * v).sin()
            }
            Texture::Noise { base, amplitude, scale, seed } => {
                base + amplitude * (value_noise(u / scale, v / scale, seed) * 2.0 - 1.0)
            }
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (smoothstep(x - x0), smoothstep(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice_hash(seed, ix, iy);
    let v01 = lattice_hash(seed, ix + 1, iy);
    let v10 = lattice_hash(seed, ix, iy + 1);
    let v11 = lattice_hash(seed, ix + 1, iy + 1);
    (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v01 + (1.0 - fx) * fy * v10 + fx * fy * v11
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Rectangle normal to `axis` (0 = x, 1 = y, 2 = z), centered at the
    /// primitive's center, with full extents along the two in-plane axes in
    /// ascending axis order.
    Plane { axis: usize, extent: [f64; 2] },
    /// Axis-aligned box with half-extents per axis.
    Box3 { half_extent: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub name: String,
    pub center: [f64; 3],
    pub shape: Shape,
    pub texture: Texture,
    /// Marked primitives are dropped from occlusion-free scene variants.
    pub occluder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub light_scale: f64,
}

struct Hit {
    t: f64,
    primitive: usize,
    tex_value: f64,
}

impl SyntheticScene {
    pub fn new(primitives: Vec<Primitive>, light_scale: f64) -> Result<Self> {
        if !(light_scale > 0.0) {
            return Err(Error::contract("SyntheticScene", "light scale must be positive"));
        }
        Ok(SyntheticScene { primitives, light_scale })
    }

    /// New scene with `light_scale` replaced.
    pub fn with_light_scale(&self, light_scale: f64) -> Result<SyntheticScene> {
        SyntheticScene::new(self.primitives.clone(), light_scale)
    }

    /// New scene containing only non-occluder primitives.
    pub fn without_occluders(&self) -> SyntheticScene {
        SyntheticScene {
            primitives: self.primitives.iter().filter(|p| !p.occluder).cloned().collect(),
            light_scale: self.light_scale,
        }
    }

    /// New scene with the named object translated by `delta`; the original is
    /// untouched.
    pub fn perturb(&self, object_name: &str, delta: [f64; 3]) -> Result<SyntheticScene> {
        let mut scene = self.clone();
        let prim = scene
            .primitives
            .iter_mut()
            .find(|p| p.name == object_name)
            .ok_or_else(|| Error::contract("perturb", format!("unknown object {object_name:?}")))?;
        for ax in 0..3 {
            prim.center[ax] += delta[ax];
        }
        Ok(scene)
    }

    pub fn primitive_index(&self, name: &str) -> Option<usize> {
        self.primitives.iter().position(|p| p.name == name)
    }

    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some((t, face_axis)) = intersect_primitive(prim, origin, dir) {
                if best.as_ref().map_or(true, |b| t < b.t) {
                    let p = [
                        origin[0] + t * dir[0],
                        origin[1] + t * dir[1],
                        origin[2] + t * dir[2],
                    ];
                    let (a, b) = in_plane_axes(face_axis);
                    let tex_value =
                        prim.texture.sample(p[a] - prim.center[a], p[b] - prim.center[b]);
                    best = Some(Hit { t, primitive: i, tex_value });
                }
            }
        }
        best
    }
}

fn in_plane_axes(normal_axis: usize) -> (usize, usize) {
    match normal_axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Ray/primitive intersection: nearest positive parameter plus the axis of
/// the face that was hit.
fn intersect_primitive(prim: &Primitive, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
    match prim.shape {
        Shape::Plane { axis, extent } => {
            if dir[axis].abs() < 1e-15 {
                return None;
            }
            let t = (prim.center[axis] - origin[axis]) / dir[axis];
            if t <= RAY_EPS {
                return None;
            }
            let (a, b) = in_plane_axes(axis);
            let pa = origin[a] + t * dir[a] - prim.center[a];
            let pb = origin[b] + t * dir[b] - prim.center[b];
            if pa.abs() <= extent[0] / 2.0 && pb.abs() <= extent[1] / 2.0 {
                Some((t, axis))
            } else {
                None
            }
        }
        Shape::Box3 { half_extent } => {
            // Slab test, tracking which axis bounds the entry parameter.
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut near_axis = 0;
            for ax in 0..3 {
                let lo = prim.center[ax] - half_extent[ax];
                let hi = prim.center[ax] + half_extent[ax];
                if dir[ax].abs() < 1e-15 {
                    if origin[ax] < lo || origin[ax] > hi {
                        return None;
                    }
                    continue;
                }
                let mut t0 = (lo - origin[ax]) / dir[ax];
                let mut t1 = (hi - origin[ax]) / dir[ax];
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > t_near {
                    t_near = t0;
                    near_axis = ax;
                }
                t_far = t_far.min(t1);
                if t_near > t_far {
                    return None;
                }
            }
            if t_near > RAY_EPS {
                Some((t_near, near_axis))
            } else {
                None
            }
        }
    }
}

/// One rendered view: grayscale image, exact depth along the camera z axis,
/// and the per-pixel primitive index (a diagnostic for region analyses and
/// occlusion masks).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub height: usize,
    pub width: usize,
    pub image: Vec<f64>,
    pub depth: DepthMap,
    pub primitive_ids: Vec<Option<usize>>,
}

impl RenderOutput {
    /// Lift the image onto a graph as an `(H, W)` tensor.
    pub fn image_tensor(&self, g: &mut Graph, requires_grad: bool) -> Result<Tensor> {
        g.leaf(self.image.clone(), &[self.height, self.width], requires_grad)
    }

    /// Export for inspection and fixtures: `<stem>.pgm` (image),
    /// `<stem>_depth.xvt` plus its validity-mask sidecar.
    pub fn save(&self, dir: &std::path::Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        let image_path = dir.join(format!("{stem}.pgm"));
        crate::io::write_pgm(&image_path, self.width, self.height, &self.image)?;
        let depth_path = dir.join(format!("{stem}_depth.xvt"));
        crate::io::write_depth(&depth_path, &self.depth)?;
        let mask = crate::io::mask_path(&depth_path);
        Ok(vec![image_path, depth_path, mask])
    }
}

/// Render the scene from `cam_pose` (camera-to-world). Per-pixel nearest-hit
/// ray cast; image value is texture × light scale, depth is the hit distance
/// along the camera z axis. Pixels that hit nothing are invalid in the depth
/// mask (their depth reads as 1 to keep buffers well-formed).
pub fn render(
    scene: &SyntheticScene,
    k: &CameraIntrinsics,
    cam_pose: &RigidTransform,
    height: usize,
    width: usize,
) -> Result<RenderOutput> {
    if height < 2 || width < 2 {
        return Err(Error::contract("render", "image must be at least 2x2"));
    }
    let mut image = vec![0.0; height * width];
    let mut depth = vec![1.0; height * width];
    let mut valid = vec![false; height * width];
    let mut primitive_ids = vec![None; height * width];
    let origin = cam_pose.translation;
    let mut any = false;
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            let d_cam = k.ray(col as f64, row as f64);
            let r = &cam_pose.rotation;
            let d_world = [
                r[0][0] * d_cam[0] + r[0][1] * d_cam[1] + r[0][2] * d_cam[2],
                r[1][0] * d_cam[0] + r[1][1] * d_cam[1] + r[1][2] * d_cam[2],
                r[2][0] * d_cam[0] + r[2][1] * d_cam[1] + r[2][2] * d_cam[2],
            ];
            if let Some(hit) = scene.intersect(origin, d_world) {
                any = true;
                // The camera-frame ray has unit z, so the camera-frame depth
                // of a hit at parameter t is exactly t.
                image[i] = hit.tex_value * scene.light_scale;
                depth[i] = hit.t;
                valid[i] = true;
                primitive_ids[i] = Some(hit.primitive);
            }
        }
    }
    if !any {
        return Err(Error::domain("render", "no visible geometry"));
    }
    Ok(RenderOutput {
        height,
        width,
        image,
        depth: DepthMap::new(height, width, depth, valid)?,
        primitive_ids,
    })
}

fn texture_from_config(section: &crate::config::Section) -> Result<Texture> {
    match section.str_or("texture", "constant") {
        "constant" => Ok(Texture::Constant { value: section.f64_or("value", 0.5)? }),
        "gradient" => {
            let slope: [f64; 2] = match section.get("slope") {
                Some(_) => section.f64_array("slope")?,
                None => [0.0, 0.0],
            };
            Ok(Texture::Gradient {
                base: section.f64_or("base", 0.5)?,
                slope_u: slope[0],
                slope_v: slope[1],
            })
        }
        "checker" => Ok(Texture::Checker {
            base: section.f64_or("base", 0.5)?,
            amplitude: section.f64_or("amplitude", 0.05)?,
            period: section.f64_or("period", 4.0)?,
        }),
        "noise" => Ok(Texture::Noise {
            base: section.f64_or("base", 0.5)?,
            amplitude: section.f64_or("amplitude", 0.3)?,
            scale: section.f64_or("scale", 0.25)?,
            seed: section.u64_or("seed", 1)?,
        }),
        other => Err(Error::Config(format!("unknown texture {other:?}"))),
    }
}

fn axis_from_config(section: &crate::config::Section) -> Result<usize> {
    match section.str_or("axis", "z") {
        "x" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        "z" | "2" => Ok(2),
        other => Err(Error::Config(format!("unknown axis {other:?}"))),
    }
}

/// Build a scene from `[scene]` / `[plane]` / `[box]` sections.
pub fn scene_from_config(doc: &ConfigDoc) -> Result<SyntheticScene> {
    let light_scale = match doc.section("scene") {
        Some(s) => s.f64_or("light_scale", 1.0)?,
        None => 1.0,
    };
    let mut primitives = Vec::new();
    for section in &doc.sections {
        let shape = match section.name.as_str() {
            "plane" => Shape::Plane {
                axis: axis_from_config(section)?,
                extent: section.f64_array("extent")?,
            },
            "box" => Shape::Box3 { half_extent: section.f64_array("half_extent")? },
            _ => continue,
        };
        primitives.push(Primitive {
            name: section.str_or("name", &format!("prim{}", primitives.len())).to_string(),
            center: section.f64_array("center")?,
            shape,
            texture: texture_from_config(section)?,
            occluder: section.bool_or("occluder", false)?,
        });
    }
    SyntheticScene::new(primitives, light_scale)
}
