//! Finite-difference verification of every registered differentiable
//! operation, at 8x8 scale. Each case is a strategy: it builds a scalar
//! probe of the operation in a fresh graph, generates inputs away from
//! non-smooth points, and (for straight-through ops) supplies the declared
//! surrogate as the differencing reference.

use std::time::Instant;

use crate::context::{csv_row, fmt_f64, Context};
use crate::experiments::{Assertion, Experiment, ExperimentReport};
use crate::parallel::parallel_map;
use xvc_core::camera::{
    backproject, bilinear_sample, project, transform_points, warp_image, CameraIntrinsics,
    PointCloud, RigidTransform,
};
use xvc_core::deformable::{
    deformable_sample, df_loss, dfa_loss, recon_loss, ChannelAffine, KernelWeights, OffsetField,
};
use xvc_core::photometric::{photometric_loss, smoothness_loss, PhotometricConfig};
use xvc_core::rng::SplitMix64;
use xvc_core::tensor::{finite_difference_check_against, Graph, Tensor};
use xvc_core::voxel::{
    count_vector, count_vector_surrogate, ste_sign_surrogate, vda_loss, voxel_density,
    voxel_index, voxel_index_surrogate, DensityVector, VoxelGrid,
};
use xvc_core::Result;

type CaseFn = Box<dyn Fn(&mut Graph, &Tensor) -> Result<Tensor> + Send + Sync>;
type InputFn = Box<dyn Fn(&mut SplitMix64) -> (Vec<f64>, Vec<usize>) + Send + Sync>;

pub struct GradCheckCase {
    pub name: &'static str,
    input: InputFn,
    builder: CaseFn,
    /// Differencing reference for straight-through ops; `None` differences
    /// the operation itself.
    reference: Option<CaseFn>,
}

impl GradCheckCase {
    fn plain(name: &'static str, input: InputFn, builder: CaseFn) -> Self {
        GradCheckCase { name, input, builder, reference: None }
    }

    fn with_reference(name: &'static str, input: InputFn, builder: CaseFn, reference: CaseFn) -> Self {
        GradCheckCase { name, input, builder, reference: Some(reference) }
    }

    pub fn run(&self, rng: &mut SplitMix64, eps: f64) -> Result<f64> {
        let (x, shape) = (self.input)(rng);
        match &self.reference {
            Some(r) => finite_difference_check_against(&self.builder, r, &x, &shape, eps),
            None => finite_difference_check_against(&self.builder, &self.builder, &x, &shape, eps),
        }
    }
}

const N: usize = 8; // spatial scale of every case

fn signed_away_from_zero(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.uniform(0.2, 2.0);
            if rng.next_f64() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect()
}

fn smooth_image(rng: &mut SplitMix64) -> Vec<f64> {
    let (fu, fv) = (rng.uniform(0.3, 0.5), rng.uniform(0.25, 0.45));
    (0..N * N)
        .map(|i| {
            let (r, c) = (i / N, i % N);
            0.5 + 0.25 * (fu * c as f64).sin() + 0.2 * (fv * r as f64).cos()
        })
        .collect()
}

fn flat_input(lo: f64, hi: f64, n: usize) -> InputFn {
    shaped_input(lo, hi, vec![n])
}

fn shaped_input(lo: f64, hi: f64, shape: Vec<usize>) -> InputFn {
    let n: usize = shape.iter().product();
    Box::new(move |rng| ((0..n).map(|_| rng.uniform(lo, hi)).collect(), shape.clone()))
}

fn elementwise_cases(cases: &mut Vec<GradCheckCase>) {
    let other: Vec<f64> = (0..N * N).map(|i| 0.5 + 0.01 * i as f64).collect();
    for (name, op) in [("add", 0usize), ("sub", 1), ("mul", 2), ("div", 3)] {
        let other = other.clone();
        cases.push(GradCheckCase::plain(
            match name {
                "add" => "add",
                "sub" => "sub",
                "mul" => "mul",
                _ => "div",
            },
            Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N * N])),
            Box::new(move |g, t| {
                let c = g.constant(other.clone(), &[N * N])?;
                let r = match op {
                    0 => g.add(t, &c)?,
                    1 => g.sub(t, &c)?,
                    2 => g.mul(t, &c)?,
                    _ => g.div(t, &c)?,
                };
                let sq = g.mul(&r, &r)?;
                g.sum(&sq, None)
            }),
        ));
    }
    cases.push(GradCheckCase::plain(
        "abs",
        Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N * N])),
        Box::new(|g, t| {
            let a = g.abs(t);
            g.sum(&a, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "exp",
        Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N * N])),
        Box::new(|g, t| {
            let e = g.exp(t)?;
            g.sum(&e, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "log",
        flat_input(0.3, 3.0, N * N),
        Box::new(|g, t| {
            let l = g.log(t)?;
            g.sum(&l, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "sqrt",
        flat_input(0.3, 3.0, N * N),
        Box::new(|g, t| {
            let s = g.sqrt(t)?;
            g.sum(&s, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "clip",
        Box::new(|rng| {
            // mixture of interior and saturated values, none near the limits
            let v: Vec<f64> = (0..N * N)
                .map(|_| {
                    if rng.next_f64() < 0.5 {
                        rng.uniform(-0.8, 0.8)
                    } else if rng.next_f64() < 0.5 {
                        rng.uniform(1.2, 2.0)
                    } else {
                        rng.uniform(-2.0, -1.2)
                    }
                })
                .collect();
            (v, vec![N * N])
        }),
        Box::new(|g, t| {
            let c = g.clip(t, -1.0, 1.0)?;
            let w = g.constant((0..N * N).map(|i| 0.5 + 0.01 * i as f64).collect(), &[N * N])?;
            let p = g.mul(&c, &w)?;
            g.sum(&p, None)
        }),
    ));
    // floor with the straight-through (identity) backward
    cases.push(GradCheckCase::with_reference(
        "floor_ste",
        Box::new(|rng| {
            let v: Vec<f64> = (0..N * N)
                .map(|_| rng.uniform(-4.0, 4.0))
                .map(|x| x.floor() + 0.2 + 0.6 * (x - x.floor()))
                .collect();
            (v, vec![N * N])
        }),
        Box::new(|g, t| {
            let f = g.floor_ste(t);
            let w = g.constant((0..N * N).map(|i| 0.3 + 0.02 * i as f64).collect(), &[N * N])?;
            let p = g.mul(&f, &w)?;
            g.sum(&p, None)
        }),
        Box::new(|g, t| {
            let w = g.constant((0..N * N).map(|i| 0.3 + 0.02 * i as f64).collect(), &[N * N])?;
            let p = g.mul(t, &w)?;
            g.sum(&p, None)
        }),
    ));
    // sign with the Htanh((x - 1/2)·2) backward
    cases.push(GradCheckCase::with_reference(
        "ste_sign",
        Box::new(|rng| {
            let v: Vec<f64> = (0..N * N)
                .map(|_| {
                    if rng.next_f64() < 0.5 {
                        rng.uniform(0.05, 0.45)
                    } else if rng.next_f64() < 0.5 {
                        rng.uniform(0.55, 0.95)
                    } else {
                        rng.uniform(1.1, 4.0)
                    }
                })
                .collect();
            (v, vec![N * N])
        }),
        Box::new(|g, t| {
            let s = g.sign_ste(t);
            let w = g.constant((0..N * N).map(|i| 0.4 + 0.02 * i as f64).collect(), &[N * N])?;
            let p = g.mul(&s, &w)?;
            g.sum(&p, None)
        }),
        Box::new(|g, t| {
            let s = ste_sign_surrogate(g, t)?;
            let w = g.constant((0..N * N).map(|i| 0.4 + 0.02 * i as f64).collect(), &[N * N])?;
            let p = g.mul(&s, &w)?;
            g.sum(&p, None)
        }),
    ));
}

fn reduce_cases(cases: &mut Vec<GradCheckCase>) {
    cases.push(GradCheckCase::plain(
        "sum",
        Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N, N])),
        Box::new(|g, t| {
            let s = g.sum(t, Some(&[1]))?;
            let sq = g.mul(&s, &s)?;
            g.sum(&sq, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "mean",
        Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N, N])),
        Box::new(|g, t| {
            let m = g.mean(t, Some(&[0]))?;
            let sq = g.mul(&m, &m)?;
            g.sum(&sq, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "l1_norm",
        Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N * N])),
        Box::new(|g, t| g.l1_norm(t, None)),
    ));
    cases.push(GradCheckCase::plain(
        "l2_norm_sq",
        Box::new(|rng| (signed_away_from_zero(rng, N * N), vec![N * N])),
        Box::new(|g, t| g.l2_norm_sq(t, None)),
    ));
}

fn camera_cases(cases: &mut Vec<GradCheckCase>) {
    let k = CameraIntrinsics::new(20.0, 20.0, (N - 1) as f64 / 2.0, (N - 1) as f64 / 2.0).unwrap();
    cases.push(GradCheckCase::plain(
        "backproject",
        shaped_input(2.0, 12.0, vec![N, N]),
        Box::new(move |g, depth| {
            let valid = vec![true; N * N];
            let cloud = backproject(g, depth, &valid, &k)?;
            let w = g.constant((0..N * N * 3).map(|i| 0.2 + 0.001 * i as f64).collect(), &[N * N, 3])?;
            let p = g.mul(&cloud.points, &w)?;
            g.sum(&p, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "transform_points",
        Box::new(|rng| (signed_away_from_zero(rng, 3 * N), vec![N, 3])),
        Box::new(|g, pts| {
            let t = RigidTransform::from_axis_angle(2, 0.4)
                .unwrap()
                .compose(&RigidTransform::from_translation([0.5, -0.2, 1.0]));
            let cloud = PointCloud { points: pts.clone() };
            let moved = transform_points(g, &cloud, &t)?;
            let sq = g.mul(&moved.points, &moved.points)?;
            g.sum(&sq, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "project",
        Box::new(|rng| {
            let pts: Vec<f64> = (0..N)
                .flat_map(|_| {
                    [
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(2.0, 10.0),
                    ]
                })
                .collect();
            (pts, vec![N, 3])
        }),
        Box::new(move |g, pts| {
            let cloud = PointCloud { points: pts.clone() };
            let proj = project(g, &cloud, &k)?;
            let w = g.constant((0..N * 2).map(|i| 0.1 + 0.01 * i as f64).collect(), &[N, 2])?;
            let p = g.mul(&proj.pixels, &w)?;
            g.sum(&p, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "bilinear_sample",
        Box::new(|rng| (smooth_image(rng), vec![N, N])),
        Box::new(|g, img| {
            let coords = g.constant(vec![1.3, 2.6, 4.4, 3.3, 5.5, 1.7, 2.2, 6.4], &[4, 2])?;
            let (s, _) = bilinear_sample(g, img, &coords)?;
            g.sum(&s, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "warp_image",
        Box::new(|rng| {
            let d: Vec<f64> = (0..N * N).map(|_| rng.uniform(8.5, 9.5)).collect();
            (d, vec![N, N])
        }),
        Box::new(move |g, depth| {
            let img = smooth_image(&mut SplitMix64::new(40));
            let src = g.constant(img, &[N, N])?;
            let valid = vec![true; N * N];
            let t = RigidTransform::from_translation([0.07, -0.03, 0.0]);
            let (warped, _) = warp_image(g, &src, depth, &valid, &t, &k)?;
            g.mean(&warped, None)
        }),
    ));
}

fn loss_cases(cases: &mut Vec<GradCheckCase>) {
    cases.push(GradCheckCase::plain(
        "photometric_loss",
        shaped_input(0.2, 0.8, vec![N, N]),
        Box::new(|g, warped| {
            let reference = g.constant(smooth_image(&mut SplitMix64::new(41)), &[N, N])?;
            let mask = vec![true; N * N];
            photometric_loss(g, &reference, warped, &mask, &PhotometricConfig::default())
        }),
    ));
    cases.push(GradCheckCase::plain(
        "smoothness_loss",
        shaped_input(2.0, 10.0, vec![N, N]),
        Box::new(|g, depth| {
            let image = g.constant(smooth_image(&mut SplitMix64::new(42)), &[N, N])?;
            smoothness_loss(g, depth, &image)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "deformable_sample",
        Box::new(|rng| {
            let channels = 2 * 9; // one group, 3x3 kernel
            let offs: Vec<f64> = (0..channels * N * N).map(|_| rng.uniform(0.15, 0.35)).collect();
            (offs, vec![channels, N, N])
        }),
        Box::new(|g, offs| {
            let src = g.constant(smooth_image(&mut SplitMix64::new(43)), &[1, N, N])?;
            let field = OffsetField::new(1, 3, offs.clone())?;
            let wdata: Vec<f64> = (0..9).map(|k| 0.05 + 0.1 * k as f64).collect();
            let wt = g.constant(wdata, &[1, 9])?;
            let weights = KernelWeights::new(1, 3, wt)?;
            let out = deformable_sample(g, &src, &field, &weights)?;
            g.mean(&out, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "recon_loss",
        Box::new(|rng| ((0..N * N).map(|_| rng.uniform(0.1, 0.9)).collect(), vec![N, N])),
        Box::new(|g, t| {
            let reference = g.constant(smooth_image(&mut SplitMix64::new(44)), &[N, N])?;
            recon_loss(g, &reference, t)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "df_loss",
        Box::new(|rng| (smooth_image(rng), vec![1, N, N])),
        Box::new(|g, src_feat| {
            let ref_feat = g.constant(smooth_image(&mut SplitMix64::new(45)), &[1, N, N])?;
            let offsets = OffsetField::constant(g, 1, 3, N, N, 0.3, -0.25, false)?;
            let weights = KernelWeights::delta_center(g, 1, 3)?;
            df_loss(g, &ref_feat, src_feat, &offsets, &weights)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "dfa_loss",
        shaped_input(0.2, 0.8, vec![N * N]),
        Box::new(|g, src_img| {
            let src3 = g.reshape(src_img, &[1, N, N])?;
            let ref_img = g.constant(smooth_image(&mut SplitMix64::new(46)), &[1, N, N])?;
            let dref = g.constant(smooth_image(&mut SplitMix64::new(47)), &[1, N, N])?;
            let dsrc = g.constant(smooth_image(&mut SplitMix64::new(48)), &[1, N, N])?;
            let offsets = OffsetField::constant(g, 1, 3, N, N, 0.35, 0.3, false)?;
            let weights = KernelWeights::delta_center(g, 1, 3)?;
            let ident = ChannelAffine::identity(1);
            dfa_loss(g, &ref_img, &src3, &dref, &dsrc, &offsets, &weights, &ident, &ident)
        }),
    ));
}

fn voxel_cases(cases: &mut Vec<GradCheckCase>) {
    let grid = VoxelGrid::new(0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 2, 2, 2).unwrap();
    cases.push(GradCheckCase::with_reference(
        "voxel_index",
        Box::new(|rng| {
            let pts: Vec<f64> = (0..N * 3).map(|_| rng.uniform(0.15, 1.85)).collect();
            (pts, vec![N, 3])
        }),
        Box::new(move |g, pts| {
            let cloud = PointCloud { points: pts.clone() };
            let idx = voxel_index(g, &cloud, &grid)?;
            let w = g.constant((0..N).map(|i| 0.5 + 0.1 * i as f64).collect(), &[N])?;
            let p = g.mul(&idx.values, &w)?;
            g.sum(&p, None)
        }),
        Box::new(move |g, pts| {
            let cloud = PointCloud { points: pts.clone() };
            let idx = voxel_index_surrogate(g, &cloud, &grid)?;
            let w = g.constant((0..N).map(|i| 0.5 + 0.1 * i as f64).collect(), &[N])?;
            let p = g.mul(&idx, &w)?;
            g.sum(&p, None)
        }),
    ));
    cases.push(GradCheckCase::with_reference(
        "count_vector",
        Box::new(|rng| {
            let total = 6.0;
            let v: Vec<f64> = (0..N)
                .map(|_| {
                    let cell = rng.below(total as usize) as f64;
                    let frac = if rng.next_f64() < 0.5 {
                        rng.uniform(0.15, 0.42)
                    } else {
                        rng.uniform(0.58, 0.85)
                    };
                    cell + frac
                })
                .collect();
            (v, vec![N])
        }),
        Box::new(|g, v| {
            let c = count_vector(g, v, 6)?;
            let w = g.constant((0..6).map(|i| 0.5 + 0.2 * i as f64).collect(), &[6])?;
            let p = g.mul(&c, &w)?;
            g.sum(&p, None)
        }),
        Box::new(|g, v| {
            let c = count_vector_surrogate(g, v, 6)?;
            let w = g.constant((0..6).map(|i| 0.5 + 0.2 * i as f64).collect(), &[6])?;
            let p = g.mul(&c, &w)?;
            g.sum(&p, None)
        }),
    ));
    // Behind the literal floor, indices are integers and the straight-through
    // band is empty, so the density is locally flat: analytic and numeric
    // gradients both vanish at cell-interior points.
    cases.push(GradCheckCase::plain(
        "voxel_density",
        Box::new(|rng| {
            let pts: Vec<f64> = (0..N * 3)
                .map(|_| rng.below(2) as f64 + rng.uniform(0.2, 0.8))
                .collect();
            (pts, vec![N, 3])
        }),
        Box::new(move |g, pts| {
            let cloud = PointCloud { points: pts.clone() };
            let rho = voxel_density(g, &cloud, &grid)?;
            let w = g.constant((0..8).map(|i| 0.3 + 0.1 * i as f64).collect(), &[8])?;
            let p = g.mul(&rho.values, &w)?;
            g.sum(&p, None)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "vda_loss",
        Box::new(|rng| {
            let raw: Vec<f64> = (0..N).map(|_| rng.uniform(0.5, 2.0)).collect();
            let total: f64 = raw.iter().sum();
            (raw.into_iter().map(|v| v / total).collect(), vec![N])
        }),
        Box::new(|g, q| {
            let p_raw: Vec<f64> = (0..N).map(|i| 1.0 + i as f64).collect();
            let total: f64 = p_raw.iter().sum();
            let p: Vec<f64> = p_raw.into_iter().map(|v| v / total).collect();
            let pt = g.constant(p, &[N])?;
            let rho_p = DensityVector::from_tensor(pt)?;
            let rho_q = DensityVector::from_tensor(q.clone())?;
            vda_loss(g, &rho_p, &rho_q, 1e-8)
        }),
    ));
    cases.push(GradCheckCase::plain(
        "point_cloud_loss",
        Box::new(|rng| (signed_away_from_zero(rng, N * 3), vec![N, 3])),
        Box::new(|g, pts| {
            let reference = g.constant(vec![0.0; N * 3], &[N, 3])?;
            let rc = PointCloud { points: reference };
            let tc = PointCloud { points: pts.clone() };
            xvc_core::voxel::point_cloud_loss(g, &rc, &tc)
        }),
    ));
}

/// Every registered differentiable operation, one case each.
pub fn gradcheck_registry() -> Vec<GradCheckCase> {
    let mut cases = Vec::new();
    elementwise_cases(&mut cases);
    reduce_cases(&mut cases);
    camera_cases(&mut cases);
    loss_cases(&mut cases);
    voxel_cases(&mut cases);
    cases
}

/// A deliberately corrupted backward rule; running it through the checker
/// must produce a named failure.
pub fn negative_control_case() -> GradCheckCase {
    GradCheckCase::plain(
        "square_wrong_backward",
        Box::new(|rng| (signed_away_from_zero(rng, N), vec![N])),
        Box::new(|g, t| {
            let sq = xvc_core::tensor::fixtures::square_wrong_backward(g, t);
            g.sum(&sq, None)
        }),
    )
}

/// Run cases in parallel (deterministically seeded per case) and return
/// (name, max relative error) rows in registry order.
pub fn run_cases(cases: &[GradCheckCase], seed: u64, eps: f64, threads: usize) -> Vec<(String, Result<f64>)> {
    let mut seeder = SplitMix64::new(seed);
    let seeds: Vec<u64> = (0..cases.len()).map(|_| seeder.next_u64()).collect();
    let indexed: Vec<usize> = (0..cases.len()).collect();
    parallel_map(&indexed, threads, |&i| {
        let mut rng = SplitMix64::new(seeds[i]);
        (cases[i].name.to_string(), cases[i].run(&mut rng, eps))
    })
}

pub struct GradCheck;

impl Experiment for GradCheck {
    fn name(&self) -> &'static str {
        "gradcheck"
    }

    fn summary(&self) -> &'static str {
        "finite-difference checks on every registered differentiable op"
    }

    fn default_config(&self) -> &'static str {
        "[experiment]\nname = gradcheck\nseed = 7\n\n[gradcheck]\ntolerance = 1e-4\neps = 1e-5\n"
    }

    fn run(&self, ctx: &Context) -> Result<ExperimentReport> {
        let started = Instant::now();
        let section = ctx.section("gradcheck");
        let tolerance = match section {
            Some(s) => s.f64_or("tolerance", 1e-4)?,
            None => 1e-4,
        };
        let eps = match section {
            Some(s) => s.f64_or("eps", 1e-5)?,
            None => 1e-5,
        };
        let cases = gradcheck_registry();
        let results = run_cases(&cases, ctx.seed, eps, ctx.threads);

        let mut report = ExperimentReport::new(self.name());
        let mut rows = Vec::new();
        for (name, outcome) in &results {
            match outcome {
                Ok(err) => {
                    let pass = *err < tolerance;
                    rows.push(csv_row(&[
                        name.clone(),
                        fmt_f64(*err),
                        fmt_f64(tolerance),
                        pass.to_string(),
                    ]));
                    report.assertions.push(Assertion::check(
                        format!("gradcheck/{name}"),
                        pass,
                        format!("max relative error {err} (tolerance {tolerance})"),
                    ));
                }
                Err(e) => {
                    rows.push(csv_row(&[name.clone(), "error".into(), fmt_f64(tolerance), "false".into()]));
                    report.assertions.push(Assertion::check(
                        format!("gradcheck/{name}"),
                        false,
                        format!("failed to evaluate: {e}"),
                    ));
                }
            }
        }
        report.assertions.push(Assertion::check(
            "gradcheck/registry_coverage",
            results.len() == cases.len(),
            format!("{} rows for {} registered ops", results.len(), cases.len()),
        ));
        let path = ctx.write_csv("gradcheck.csv", "op,max_rel_err,tolerance,pass", &rows)?;
        report.outputs.push(path);
        let elapsed = started.elapsed().as_secs_f64();
        report.assertions.push(Assertion::check(
            "gradcheck/runtime",
            elapsed < 60.0,
            format!("{elapsed:.2} s (budget 60 s)"),
        ));
        Ok(report)
    }
}
