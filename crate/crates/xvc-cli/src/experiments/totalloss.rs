//! Total training loss on one rendered frame pair with exact ground truth:
//! L = α·L_ph + β·L_sm + γ·L_DFA + η·L_VDA, evaluated on a single graph and
//! reported term by term, pre- and post-weighting.

use crate::context::{csv_row, fmt_f64, Context};
use crate::experiments::{Assertion, Experiment, ExperimentReport};
use crate::pipeline::{normalized_inverse_depth, RenderedPair};
use xvc_core::camera::{backproject, transform_points, PointCloud};
use xvc_core::deformable::{dfa_loss, ChannelAffine, KernelWeights};
use xvc_core::error::{Error, Result};
use xvc_core::photometric::{photometric_loss, smoothness_loss, PhotometricConfig};
use xvc_core::tensor::Graph;
use xvc_core::voxel::{vda_loss, voxel_density, VoxelGrid, DEFAULT_KL_EPS};

pub struct TotalLoss;

impl Experiment for TotalLoss {
    fn name(&self) -> &'static str {
        "totalloss"
    }

    fn summary(&self) -> &'static str {
        "weighted total of all four losses on a ground-truth frame pair, with breakdown"
    }

    fn default_config(&self) -> &'static str {
        concat!(
            "[experiment]\nname = totalloss\nseed = 7\n\n",
            "[camera]\nfx = 100\nfy = 100\nu0 = 31.5\nv0 = 23.5\nwidth = 64\nheight = 48\n\n",
            "[weights]\nalpha = 1\nbeta = 0.01\ngamma = 0.05\neta = 0.05\n\n",
            "[grid]\nx_min = -10\nx_max = 10\ny_min = -10\ny_max = 10\nz_min = 0\nz_max = 12\n",
            "nx = 40\nny = 40\nnz = 24\n\n",
            "[totalloss]\ncamera_shift = 0.1 0 0\n\n",
            "[scene]\nlight_scale = 1\n\n",
            "[plane]\nname = bg\naxis = z\ncenter = 0 0 10\nextent = 400 400\n",
            "texture = checker\nbase = 0.5\namplitude = 0.02\nperiod = 8\n\n",
            "[plane]\nname = floor\naxis = y\ncenter = 0 2 0\nextent = 400 400\n",
            "texture = gradient\nbase = 0.4\nslope = 0.01 0.008\n",
        )
    }

    fn run(&self, ctx: &Context) -> Result<ExperimentReport> {
        let (k, h, w) = ctx.camera()?;
        let scene = ctx.scene()?;
        let weights = ctx.weights()?;
        let shift: [f64; 3] = ctx
            .section("totalloss")
            .ok_or_else(|| Error::Config("missing [totalloss] section".into()))?
            .f64_array("camera_shift")?;

        let pair = RenderedPair::render(&scene, &scene, &k, h, w, shift)?;
        let mut report = ExperimentReport::new(self.name());
        report.outputs.extend(pair.reference.save(&ctx.out_dir, "reference")?);
        report.outputs.extend(pair.source.save(&ctx.out_dir, "source")?);
        let mut g = Graph::new();

        // Photometric: warp the source into the reference with exact
        // depth/pose. The reference depth is the one leaf that requires
        // gradients, proving the whole total differentiates end to end.
        let depth_ref = pair.reference.depth.to_tensor(&mut g, true)?;
        let ref_img = pair.reference.image_tensor(&mut g, false)?;
        let src_img = pair.source.image_tensor(&mut g, false)?;
        let (warped, mask) = xvc_core::camera::warp_image(
            &mut g,
            &src_img,
            &depth_ref,
            &pair.reference.depth.valid,
            &pair.t_ref_to_src(),
            &k,
        )?;
        let l_ph = photometric_loss(&mut g, &ref_img, &warped, &mask, &PhotometricConfig::default())?;

        // Smoothness on the reference depth against the reference image.
        let l_sm = smoothness_loss(&mut g, &depth_ref, &ref_img)?;

        // Feature alignment with exact analytic offsets and the 8-group
        // offset field: the extractor lifts the grayscale image to eight
        // channels (one per offset group), the reconstructor averages them
        // back to an image. Depth features are the mean-normalized inverse
        // depth maps, lifted the same way so the same offsets apply.
        let groups = 8;
        let offsets = pair.analytic_offsets(&mut g, groups, 3)?;
        let kweights = KernelWeights::delta_center(&mut g, groups, 3)?;
        let extractor = ChannelAffine::new(groups, 1, vec![1.0; groups], vec![0.0; groups])?;
        let reconstructor =
            ChannelAffine::new(1, groups, vec![1.0 / groups as f64; groups], vec![0.0])?;
        let ref_chw = g.reshape(&ref_img, &[1, h, w])?;
        let src_chw = g.reshape(&src_img, &[1, h, w])?;
        let dfeat_ref = {
            let mu = normalized_inverse_depth(&mut g, &pair.reference.depth)?;
            let mu3 = g.reshape(&mu, &[1, h, w])?;
            extractor.apply(&mut g, &mu3)?
        };
        let dfeat_src = {
            let mu = normalized_inverse_depth(&mut g, &pair.source.depth)?;
            let mu3 = g.reshape(&mu, &[1, h, w])?;
            extractor.apply(&mut g, &mu3)?
        };
        let l_dfa = dfa_loss(
            &mut g, &ref_chw, &src_chw, &dfeat_ref, &dfeat_src, &offsets, &kweights, &extractor,
            &reconstructor,
        )?;

        // Voxel density alignment between the two frames' clouds, the source
        // cloud transformed into the reference frame.
        let cloud_ref = backproject(&mut g, &depth_ref, &pair.reference.depth.valid, &k)?;
        let depth_src = pair.source.depth.to_tensor(&mut g, false)?;
        let cloud_src = backproject(&mut g, &depth_src, &pair.source.depth.valid, &k)?;
        let cloud_src_in_ref: PointCloud = transform_points(&mut g, &cloud_src, &pair.t_src_to_ref())?;
        // Explicit bounds in [grid] fix the grid; otherwise it is the joint
        // bounding box of both clouds, 1% expanded, so corresponding voxels
        // align across the pair.
        let grid_section = ctx
            .section("grid")
            .ok_or_else(|| Error::Config("missing [grid] section".into()))?;
        let grid = if grid_section.get("x_min").is_some() {
            VoxelGrid::from_config(grid_section)?
        } else {
            let dims = (
                grid_section.usize_or("nx", xvc_core::voxel::DEFAULT_SUBDIVISIONS.0)?,
                grid_section.usize_or("ny", xvc_core::voxel::DEFAULT_SUBDIVISIONS.1)?,
                grid_section.usize_or("nz", xvc_core::voxel::DEFAULT_SUBDIVISIONS.2)?,
            );
            VoxelGrid::around_clouds(&cloud_ref.rows(&g), &cloud_src_in_ref.rows(&g), dims)?
        };
        let rho_ref = voxel_density(&mut g, &cloud_ref, &grid)?;
        let rho_src = voxel_density(&mut g, &cloud_src_in_ref, &grid)?;
        let l_vda = vda_loss(&mut g, &rho_ref, &rho_src, DEFAULT_KL_EPS)?;

        // Weighted total on the same graph.
        let a = g.scale(&l_ph, weights.alpha)?;
        let b = g.scale(&l_sm, weights.beta)?;
        let c = g.scale(&l_dfa, weights.gamma)?;
        let d = g.scale(&l_vda, weights.eta)?;
        let ab = g.add(&a, &b)?;
        let cd = g.add(&c, &d)?;
        let total = g.add(&ab, &cd)?;

        let raw = [
            g.scalar_value(&l_ph),
            g.scalar_value(&l_sm),
            g.scalar_value(&l_dfa),
            g.scalar_value(&l_vda),
        ];
        let weighted = [
            g.scalar_value(&a),
            g.scalar_value(&b),
            g.scalar_value(&c),
            g.scalar_value(&d),
        ];
        let total_value = g.scalar_value(&total);

        g.backward(&total)?;
        let depth_grad = g.grad(&depth_ref).expect("depth requires grad");
        report.assertions.push(Assertion::check(
            "totalloss/differentiable",
            depth_grad.iter().all(|v| v.is_finite()),
            "backward through the weighted total produces finite depth gradients",
        ));

        let names = ["photometric", "smoothness", "dfa", "vda"];
        let weight_values = [weights.alpha, weights.beta, weights.gamma, weights.eta];
        let mut rows = Vec::new();
        for i in 0..4 {
            rows.push(csv_row(&[
                names[i].to_string(),
                fmt_f64(raw[i]),
                fmt_f64(weight_values[i]),
                fmt_f64(weighted[i]),
            ]));
        }
        rows.push(csv_row(&[
            "total".to_string(),
            String::new(),
            String::new(),
            fmt_f64(total_value),
        ]));

        let sum: f64 = weighted.iter().sum();
        report.assertions.push(Assertion::check(
            "totalloss/breakdown_sums_to_total",
            (sum - total_value).abs() < 1e-12,
            format!("Σ weighted = {} vs total = {}", fmt_f64(sum), fmt_f64(total_value)),
        ));
        report.assertions.push(Assertion::check(
            "totalloss/terms_finite_and_nonnegative",
            raw.iter().all(|v| v.is_finite() && *v >= 0.0),
            format!(
                "ph {}, sm {}, dfa {}, vda {}",
                fmt_f64(raw[0]),
                fmt_f64(raw[1]),
                fmt_f64(raw[2]),
                fmt_f64(raw[3])
            ),
        ));

        let csv = ctx.write_csv("totalloss.csv", "term,raw,weight,weighted", &rows)?;
        report.outputs.push(csv);
        Ok(report)
    }
}
