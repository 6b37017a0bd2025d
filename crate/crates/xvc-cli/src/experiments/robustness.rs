//! Perturbation analysis: sweep an object displacement δ and report the
//! rigid point-cloud loss (grows as n_obj·Σ|δ| immediately), the voxel-index
//! diagnostic, and the voxel-density KL loss (both stay exactly zero until a
//! voxel boundary is crossed).

use crate::context::{csv_row, fmt_f64, Context};
use crate::experiments::{Assertion, Experiment, ExperimentReport};
use crate::parallel::parallel_map;
use crate::pipeline::RenderedPair;
use xvc_core::error::{Error, Result};
use xvc_core::voxel::{
    CloudConsistencyLoss, RigidPointLoss, VdaKlLoss, VoxelIndexDiagnostic,
};

pub struct RobustnessSweep;

impl Experiment for RobustnessSweep {
    fn name(&self) -> &'static str {
        "robustness"
    }

    fn summary(&self) -> &'static str {
        "object-displacement sweep comparing rigid point, voxel-index, and voxel-density losses"
    }

    fn default_config(&self) -> &'static str {
        // The box sits at x, y in [0.15, 0.35] inside 0.5 m voxel cells, so
        // every surface point keeps >= 0.05 m of margin to the nearest cell
        // boundary: displacements up to the invariance margin cannot cross.
        concat!(
            "[experiment]\nname = robustness\nseed = 7\n\n",
            "[camera]\nfx = 100\nfy = 100\nu0 = 31.5\nv0 = 23.5\nwidth = 64\nheight = 48\n\n",
            "[grid]\nx_min = -10\nx_max = 10\ny_min = -10\ny_max = 10\nz_min = 0\nz_max = 12\n",
            "nx = 40\nny = 40\nnz = 24\n\n",
            "[sweep]\ndisplacements = 0 0 0,0.05 0 0,0.1 0 0,0.3 0 0,0.6 0 0,1 0 0\n\n",
            "[robustness]\nobject = box\ninvariance_margin = 0.1\n\n",
            "[scene]\nlight_scale = 1\n\n",
            "[plane]\nname = bg\naxis = z\ncenter = 0 0 10\nextent = 400 400\n",
            "texture = gradient\nbase = 0.5\nslope = 0.02 0.01\n\n",
            "[box]\nname = box\ncenter = 0.25 0.25 5\nhalf_extent = 0.1 0.1 0.25\n",
            "texture = constant\nvalue = 0.9\noccluder = true\n",
        )
    }

    fn run(&self, ctx: &Context) -> Result<ExperimentReport> {
        let (k, h, w) = ctx.camera()?;
        let scene = ctx.scene()?;
        let grid = ctx.grid()?;
        let section = ctx
            .section("robustness")
            .ok_or_else(|| Error::Config("missing [robustness] section".into()))?;
        let object = section.str_or("object", "box").to_string();
        let margin = section.f64_or("invariance_margin", 0.1)?;
        let kl_eps = section.f64_or("kl_eps", xvc_core::voxel::DEFAULT_KL_EPS)?;
        let displacements = ctx.sweep_vectors("displacements", 3)?;

        let object_id = scene
            .primitive_index(&object)
            .ok_or_else(|| Error::Config(format!("no primitive named {object:?}")))?;
        let pair = RenderedPair::render(&scene, &scene, &k, h, w, [0.0; 3])?;
        let depth = &pair.reference.depth;
        let mut cloud: Vec<[f64; 3]> = Vec::new();
        let mut is_object: Vec<bool> = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if !depth.valid[i] {
                    continue;
                }
                let d = depth.values[i];
                let ray = k.ray(c as f64, r as f64);
                cloud.push([d * ray[0], d * ray[1], d]);
                is_object.push(pair.reference.primitive_ids[i] == Some(object_id));
            }
        }
        let n_obj = is_object.iter().filter(|&&b| b).count();
        if n_obj == 0 {
            return Err(Error::domain("robustness", "object has no visible surface points"));
        }

        let strategies: Vec<Box<dyn CloudConsistencyLoss>> = vec![
            Box::new(RigidPointLoss),
            Box::new(VoxelIndexDiagnostic),
            Box::new(VdaKlLoss { eps: kl_eps }),
        ];
        let rows_data = parallel_map(&displacements, ctx.threads, |delta| {
            let moved: Vec<[f64; 3]> = cloud
                .iter()
                .zip(&is_object)
                .map(|(p, &obj)| {
                    if obj {
                        [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]]
                    } else {
                        *p
                    }
                })
                .collect();
            let values: Result<Vec<f64>> = strategies
                .iter()
                .map(|s| s.evaluate(&cloud, &moved, &grid))
                .collect();
            values
        });

        let mut report = ExperimentReport::new(self.name());
        let mut rows = Vec::new();
        let mut crossing_seen = false;
        for (delta, values) in displacements.iter().zip(rows_data) {
            let values = values?;
            let (l_pc, l_v, l_vda) = (values[0], values[1], values[2]);
            rows.push(csv_row(&[
                fmt_f64(delta[0]),
                fmt_f64(delta[1]),
                fmt_f64(delta[2]),
                fmt_f64(l_pc),
                fmt_f64(l_v),
                fmt_f64(l_vda),
            ]));
            let l1: f64 = delta.iter().map(|d| d.abs()).sum();
            let max_component = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let tag = format!("robustness/delta({},{},{})", delta[0], delta[1], delta[2]);

            // rigid loss tracks n_obj·Σ|δ| exactly for every row
            let expected_pc = n_obj as f64 * l1;
            report.assertions.push(Assertion::check(
                format!("{tag}/point_cloud_exact"),
                (l_pc - expected_pc).abs() <= 1e-9 * expected_pc.max(1.0),
                format!("L_pc {} vs n_obj·Σ|δ| = {}", fmt_f64(l_pc), fmt_f64(expected_pc)),
            ));
            if l1 == 0.0 {
                report.assertions.push(Assertion::check(
                    format!("{tag}/all_zero"),
                    l_pc == 0.0 && l_v == 0.0 && l_vda == 0.0,
                    format!("losses ({}, {}, {})", fmt_f64(l_pc), fmt_f64(l_v), fmt_f64(l_vda)),
                ));
            } else if max_component <= margin {
                report.assertions.push(Assertion::check(
                    format!("{tag}/voxel_losses_stay_zero"),
                    l_v == 0.0 && l_vda == 0.0 && l_pc > 0.0,
                    format!(
                        "sub-voxel motion: L_v {}, L_vda {}, L_pc {}",
                        fmt_f64(l_v),
                        fmt_f64(l_vda),
                        fmt_f64(l_pc)
                    ),
                ));
            }
            if l_v > 0.0 && l_vda > 0.0 {
                crossing_seen = true;
            }
        }
        report.assertions.push(Assertion::check(
            "robustness/boundary_crossing_detected",
            crossing_seen,
            "some sweep row crosses a voxel boundary and both voxel losses fire",
        ));

        let csv = ctx.write_csv(
            "robustness.csv",
            "dx,dy,dz,point_cloud_loss,voxel_index_loss,vda_loss",
            &rows,
        )?;
        report.outputs.push(csv);
        let gp = ctx.write_gnuplot(
            "robustness.gp",
            concat!(
                "set datafile separator ','\n",
                "set key autotitle columnhead\n",
                "set xlabel 'object displacement along x (m)'\n",
                "set ylabel 'loss'\n",
                "set terminal pngcairo size 800,500\n",
                "set output 'robustness.png'\n",
                "plot 'robustness.csv' using 1:4 with linespoints, \\\n",
                "     '' using 1:5 with linespoints, \\\n",
                "     '' using 1:6 with linespoints\n",
            ),
        )?;
        report.outputs.push(gp);
        Ok(report)
    }
}
