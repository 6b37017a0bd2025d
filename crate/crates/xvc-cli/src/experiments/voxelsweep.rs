//! Grid-resolution sweep: per subdivision, the voxel edges (the minimum
//! displacement each axis can detect), the loss on a rigid-agreement pair
//! (always zero), and the loss after a displacement of 1.5 voxel edges
//! (positive whenever the grid has more than one cell to cross into).

use crate::context::{csv_row, fmt_f64, Context};
use crate::experiments::{Assertion, Experiment, ExperimentReport};
use crate::parallel::parallel_map;
use crate::pipeline::RenderedPair;
use xvc_core::error::{Error, Result};
use xvc_core::voxel::{VdaKlLoss, VoxelGrid, VoxelIndexDiagnostic, CloudConsistencyLoss};

pub struct VoxelSweep;

impl Experiment for VoxelSweep {
    fn name(&self) -> &'static str {
        "voxelsweep"
    }

    fn summary(&self) -> &'static str {
        "voxel-count ablation: sensitivity of the density loss to grid resolution"
    }

    fn default_config(&self) -> &'static str {
        concat!(
            "[experiment]\nname = voxelsweep\nseed = 7\n\n",
            "[camera]\nfx = 100\nfy = 100\nu0 = 31.5\nv0 = 23.5\nwidth = 64\nheight = 48\n\n",
            "[grid]\nx_min = -10\nx_max = 10\ny_min = -10\ny_max = 10\nz_min = 0\nz_max = 12\n\n",
            "[sweep]\ngrids = 1 1 1,20 20 24,40 40 24,60 60 24\n\n",
            "[voxelsweep]\nobject = box\ncrossing_factor = 1.5\n\n",
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
        let bounds = ctx
            .section("grid")
            .ok_or_else(|| Error::Config("missing [grid] section".into()))?;
        let (x_min, x_max) = (bounds.f64("x_min")?, bounds.f64("x_max")?);
        let (y_min, y_max) = (bounds.f64("y_min")?, bounds.f64("y_max")?);
        let (z_min, z_max) = (bounds.f64("z_min")?, bounds.f64("z_max")?);
        let section = ctx
            .section("voxelsweep")
            .ok_or_else(|| Error::Config("missing [voxelsweep] section".into()))?;
        let object = section.str_or("object", "box").to_string();
        let crossing_factor = section.f64_or("crossing_factor", 1.5)?;
        let grids_raw = ctx.sweep_vectors("grids", 3)?;

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

        struct Row {
            dims: (usize, usize, usize),
            edges: (f64, f64, f64),
            vda_rigid: f64,
            vda_crossing: f64,
            lv_crossing: f64,
        }

        let vda = VdaKlLoss::default();
        let lv = VoxelIndexDiagnostic;
        let rows_data: Vec<Result<Row>> = parallel_map(&grids_raw, ctx.threads, |dims_raw| {
            let dims = (dims_raw[0] as usize, dims_raw[1] as usize, dims_raw[2] as usize);
            let grid = VoxelGrid::new(x_min, x_max, y_min, y_max, z_min, z_max, dims.0, dims.1, dims.2)?;
            let vda_rigid = vda.evaluate(&cloud, &cloud, &grid)?;
            let delta = crossing_factor * grid.dx();
            let moved: Vec<[f64; 3]> = cloud
                .iter()
                .zip(&is_object)
                .map(|(p, &obj)| if obj { [p[0] + delta, p[1], p[2]] } else { *p })
                .collect();
            Ok(Row {
                dims,
                edges: (grid.dx(), grid.dy(), grid.dz()),
                vda_rigid,
                vda_crossing: vda.evaluate(&cloud, &moved, &grid)?,
                lv_crossing: lv.evaluate(&cloud, &moved, &grid)?,
            })
        });

        let mut report = ExperimentReport::new(self.name());
        let mut rows = Vec::new();
        for row in rows_data {
            let row = row?;
            let (nx, ny, nz) = row.dims;
            rows.push(csv_row(&[
                nx.to_string(),
                ny.to_string(),
                nz.to_string(),
                (nx * ny * nz).to_string(),
                fmt_f64(row.edges.0),
                fmt_f64(row.edges.1),
                fmt_f64(row.edges.2),
                fmt_f64(row.vda_rigid),
                fmt_f64(row.vda_crossing),
                fmt_f64(row.lv_crossing),
            ]));
            let tag = format!("voxelsweep/({nx},{ny},{nz})");
            report.assertions.push(Assertion::check(
                format!("{tag}/rigid_agreement_zero"),
                row.vda_rigid == 0.0,
                format!("VDA on identical clouds = {}", fmt_f64(row.vda_rigid)),
            ));
            if nx * ny * nz == 1 {
                report.assertions.push(Assertion::check(
                    format!("{tag}/single_voxel_always_zero"),
                    row.vda_crossing == 0.0,
                    format!("single-voxel VDA after displacement = {}", fmt_f64(row.vda_crossing)),
                ));
            } else {
                report.assertions.push(Assertion::check(
                    format!("{tag}/crossing_detected"),
                    row.vda_crossing > 0.0 && row.lv_crossing > 0.0,
                    format!(
                        "1.5·Δx displacement: VDA {}, L_v {}",
                        fmt_f64(row.vda_crossing),
                        fmt_f64(row.lv_crossing)
                    ),
                ));
            }
        }

        let csv = ctx.write_csv(
            "voxelsweep.csv",
            "nx,ny,nz,voxels,dx,dy,dz,vda_rigid,vda_after_crossing,lv_after_crossing",
            &rows,
        )?;
        report.outputs.push(csv);
        let gp = ctx.write_gnuplot(
            "voxelsweep.gp",
            concat!(
                "set datafile separator ','\n",
                "set key autotitle columnhead\n",
                "set logscale x\n",
                "set xlabel 'total voxels'\n",
                "set ylabel 'loss after 1.5 voxel-edge displacement'\n",
                "set terminal pngcairo size 800,500\n",
                "set output 'voxelsweep.png'\n",
                "plot 'voxelsweep.csv' using 4:9 with linespoints, \\\n",
                "     '' using 4:10 with linespoints axes x1y2\n",
            ),
        )?;
        report.outputs.push(gp);
        Ok(report)
    }
}
