//! Independent oracles for the voxel pipeline: a nested-loop bounds-check
//! indexer, a brute-force histogram, the literal tape-op composition of the
//! counting formula, and property tests for the sub-voxel motion invariance
//! and grid-refinement monotonicity.

use proptest::prelude::*;

use xvc_core::camera::PointCloud;
use xvc_core::rng::SplitMix64;
use xvc_core::tensor::Graph;
use xvc_core::voxel::{
    cloud_loss_registry, count_vector, point_cloud_loss, vda_loss, voxel_density, voxel_index,
    voxel_index_loss, DensityVector, VoxelGrid,
};

/// Literal nested-loop bounds check: scan cells per axis until the half-open
/// interval [min + i·Δ, min + (i+1)·Δ) contains the coordinate. Out-of-bounds
/// coordinates clamp to the boundary cell and clear the flag.
fn oracle_index(grid: &VoxelGrid, p: [f64; 3]) -> (usize, bool) {
    fn axis(v: f64, min: f64, delta: f64, n: usize) -> (usize, bool) {
        for i in 0..n {
            let lo = min + i as f64 * delta;
            let hi = min + (i + 1) as f64 * delta;
            if v >= lo && v < hi {
                return (i, true);
            }
        }
        if v < min {
            (0, false)
        } else {
            (n - 1, false)
        }
    }
    let (ix, okx) = axis(p[0], grid.x_min, grid.dx(), grid.nx);
    let (iy, oky) = axis(p[1], grid.y_min, grid.dy(), grid.ny);
    let (iz, okz) = axis(p[2], grid.z_min, grid.dz(), grid.nz);
    (ix + iy * grid.nx + iz * grid.nx * grid.ny, okx && oky && okz)
}

fn random_cloud(rng: &mut SplitMix64, n: usize, lo: [f64; 3], hi: [f64; 3]) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.uniform(lo[0], hi[0]),
                rng.uniform(lo[1], hi[1]),
                rng.uniform(lo[2], hi[2]),
            ]
        })
        .collect()
}

#[test]
fn indices_match_nested_loop_oracle_on_random_clouds() {
    let mut rng = SplitMix64::new(2024);
    for trial in 0..30 {
        let n = 50 + rng.below(500);
        let cloud = random_cloud(&mut rng, n, [-8.0, -5.0, 0.5], [8.0, 5.0, 30.0]);
        let dims = (2 + rng.below(15), 2 + rng.below(15), 2 + rng.below(15));
        let grid = VoxelGrid::around_clouds(&cloud, &cloud, dims).unwrap();
        let mut g = Graph::new();
        let pc = PointCloud::from_rows(&mut g, &cloud, false).unwrap();
        let idx = voxel_index(&mut g, &pc, &grid).unwrap();
        let vals = g.value(&idx.values);
        for (i, p) in cloud.iter().enumerate() {
            let (expect, inside) = oracle_index(&grid, *p);
            assert_eq!(vals[i], expect as f64, "trial {trial}, point {i}");
            assert_eq!(idx.in_bounds[i], inside, "trial {trial}, point {i}");
            assert!(inside, "around_clouds must keep points interior");
        }
    }
}

#[test]
fn out_of_bounds_points_agree_with_oracle() {
    let grid = VoxelGrid::new(0.0, 4.0, 0.0, 4.0, 0.0, 4.0, 4, 4, 4).unwrap();
    let mut rng = SplitMix64::new(2025);
    for _ in 0..200 {
        let p = [
            rng.uniform(-2.0, 6.0),
            rng.uniform(-2.0, 6.0),
            rng.uniform(-2.0, 6.0),
        ];
        let (oi, oin) = oracle_index(&grid, p);
        let (ii, iin) = grid.index_of(p);
        assert_eq!((oi, oin), (ii, iin), "point {:?}", p);
    }
}

#[test]
fn count_vector_matches_brute_force_histogram() {
    let mut rng = SplitMix64::new(2026);
    for _ in 0..30 {
        let n = 1 + rng.below(2000);
        let total = 1 + rng.below(512);
        let indices: Vec<f64> = (0..n).map(|_| rng.below(total) as f64).collect();
        let mut hist = vec![0.0; total];
        for &v in &indices {
            hist[v as usize] += 1.0;
        }
        let mut g = Graph::new();
        let v = g.leaf(indices, &[n], false).unwrap();
        let c = count_vector(&mut g, &v, total).unwrap();
        assert_eq!(g.value(&c), hist.as_slice());
    }
}

#[test]
fn count_vector_matches_literal_composition_forward_and_backward() {
    // Route A: the fused counting op. Route B: the formula built op by op on
    // the tape (n - ‖sign(|V - i|)‖₁ per voxel). Values and gradients must
    // agree exactly, for integer and non-integer index vectors alike.
    let total = 5usize;
    let mut rng = SplitMix64::new(2027);
    for trial in 0..20 {
        let n = 3 + rng.below(12);
        let indices: Vec<f64> = (0..n)
            .map(|_| {
                let cell = rng.below(total) as f64;
                if trial % 2 == 0 {
                    cell
                } else {
                    cell + rng.uniform(0.1, 0.9)
                }
            })
            .collect();
        let probe: Vec<f64> = (0..total).map(|_| rng.uniform(0.5, 2.0)).collect();

        // Route A
        let mut ga = Graph::new();
        let va = ga.leaf(indices.clone(), &[n], true).unwrap();
        let ca = count_vector(&mut ga, &va, total).unwrap();
        let wa = ga.constant(probe.clone(), &[total]).unwrap();
        let pa = ga.mul(&ca, &wa).unwrap();
        let la = ga.sum(&pa, None).unwrap();
        ga.backward(&la).unwrap();
        let value_a = g_value(&ga, &ca);
        let grad_a = ga.grad(&va).unwrap().to_vec();

        // Route B
        let mut gb = Graph::new();
        let vb = gb.leaf(indices.clone(), &[n], true).unwrap();
        let mut parts = Vec::new();
        for i in 0..total {
            let d = gb.add_scalar(&vb, -(i as f64)).unwrap();
            let inner = gb.abs(&d);
            let s = gb.sign_ste(&inner);
            let norm = gb.l1_norm(&s, None).unwrap();
            let neg = gb.scale(&norm, -1.0).unwrap();
            parts.push(gb.add_scalar(&neg, n as f64).unwrap());
        }
        let refs: Vec<&xvc_core::Tensor> = parts.iter().collect();
        let cb = gb.concat_flat(&refs).unwrap();
        let wb = gb.constant(probe.clone(), &[total]).unwrap();
        let pb = gb.mul(&cb, &wb).unwrap();
        let lb = gb.sum(&pb, None).unwrap();
        gb.backward(&lb).unwrap();
        let value_b = g_value(&gb, &cb);
        let grad_b = gb.grad(&vb).unwrap().to_vec();

        assert_eq!(value_a, value_b, "trial {trial}: forward routes disagree");
        assert_eq!(grad_a, grad_b, "trial {trial}: backward routes disagree");
    }
}

fn g_value(g: &Graph, t: &xvc_core::Tensor) -> Vec<f64> {
    g.value(t).to_vec()
}

#[test]
fn density_is_normalized_histogram() {
    let mut rng = SplitMix64::new(2028);
    for _ in 0..20 {
        let n = 1 + rng.below(1000);
        let cloud = random_cloud(&mut rng, n, [-3.0, -3.0, 1.0], [3.0, 3.0, 9.0]);
        let grid = VoxelGrid::around_clouds(&cloud, &cloud, (7, 5, 6)).unwrap();
        let mut g = Graph::new();
        let pc = PointCloud::from_rows(&mut g, &cloud, false).unwrap();
        let rho = voxel_density(&mut g, &pc, &grid).unwrap();
        let rv = g.value(&rho.values);
        let sum: f64 = rv.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "density sums to {sum}");
        // against brute-force histogram / n
        let mut hist = vec![0usize; grid.total_voxels()];
        for p in &cloud {
            hist[grid.index_of(*p).0] += 1;
        }
        for (i, &h) in hist.iter().enumerate() {
            assert_eq!(rv[i], h as f64 / n as f64);
        }
    }
}

#[test]
fn kl_non_negative_on_random_density_pairs() {
    let mut rng = SplitMix64::new(2029);
    let mut g = Graph::new();
    for _ in 0..1000 {
        let bins = 2 + rng.below(64);
        let n = 1 + rng.below(500);
        let mut a = vec![0.0; bins];
        let mut b = vec![0.0; bins];
        for _ in 0..n {
            a[rng.below(bins)] += 1.0 / n as f64;
            b[rng.below(bins)] += 1.0 / n as f64;
        }
        let at = g.leaf(a, &[bins], false).unwrap();
        let bt = g.leaf(b, &[bins], false).unwrap();
        let rho_a = DensityVector::from_tensor(at).unwrap();
        let rho_b = DensityVector::from_tensor(bt).unwrap();
        let kl = vda_loss(&mut g, &rho_a, &rho_b, 1e-8).unwrap();
        let v = g.scalar_value(&kl);
        assert!(v >= 0.0, "KL went negative: {v}");
        let self_kl = vda_loss(&mut g, &rho_a, &rho_a, 1e-8).unwrap();
        assert!(g.scalar_value(&self_kl).abs() < 1e-12);
    }
}

#[test]
fn point_cloud_loss_matches_brute_force() {
    let mut rng = SplitMix64::new(2030);
    for _ in 0..20 {
        let n = 1 + rng.below(200);
        let a = random_cloud(&mut rng, n, [-5.0; 3], [5.0; 3]);
        let b = random_cloud(&mut rng, n, [-5.0; 3], [5.0; 3]);
        let mut brute = 0.0;
        for i in 0..n {
            for ax in 0..3 {
                brute += (a[i][ax] - b[i][ax]).abs();
            }
        }
        let mut g = Graph::new();
        let pa = PointCloud::from_rows(&mut g, &a, false).unwrap();
        let pb = PointCloud::from_rows(&mut g, &b, false).unwrap();
        let l = point_cloud_loss(&mut g, &pa, &pb).unwrap();
        assert!((g.scalar_value(&l) - brute).abs() < 1e-12);
    }
}

#[test]
fn registry_strategies_agree_with_direct_functions() {
    let mut rng = SplitMix64::new(2031);
    let a = random_cloud(&mut rng, 100, [-4.0, -4.0, 1.0], [4.0, 4.0, 12.0]);
    let b: Vec<[f64; 3]> = a
        .iter()
        .map(|p| [p[0] + rng.uniform(-0.3, 0.3), p[1], p[2] + rng.uniform(-0.2, 0.2)])
        .collect();
    let grid = VoxelGrid::around_clouds(&a, &b, (8, 8, 6)).unwrap();
    for strategy in cloud_loss_registry() {
        let via_registry = strategy.evaluate(&a, &b, &grid).unwrap();
        let direct = match strategy.name() {
            "point_cloud_loss" => {
                let mut g = Graph::new();
                let pa = PointCloud::from_rows(&mut g, &a, false).unwrap();
                let pb = PointCloud::from_rows(&mut g, &b, false).unwrap();
                let l = point_cloud_loss(&mut g, &pa, &pb).unwrap();
                g.scalar_value(&l)
            }
            "voxel_index_loss" => voxel_index_loss(&a, &b, &grid).unwrap(),
            "vda_loss" => {
                let mut g = Graph::new();
                let pa = PointCloud::from_rows(&mut g, &a, false).unwrap();
                let pb = PointCloud::from_rows(&mut g, &b, false).unwrap();
                let ra = voxel_density(&mut g, &pa, &grid).unwrap();
                let rb = voxel_density(&mut g, &pb, &grid).unwrap();
                let l = vda_loss(&mut g, &ra, &rb, 1e-8).unwrap();
                g.scalar_value(&l)
            }
            other => panic!("unknown strategy {other}"),
        };
        assert_eq!(via_registry, direct, "strategy {}", strategy.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Any per-point displacement that crosses no voxel boundary leaves the
    /// voxel index (and so both voxel losses) unchanged, while the rigid
    /// point loss sees exactly Σ|δ|.
    #[test]
    fn sub_voxel_motion_invariance(seed in 0u64..1_000_000) {
        let mut rng = SplitMix64::new(seed);
        let n = 5 + rng.below(60);
        let dims = (2 + rng.below(6), 2 + rng.below(6), 2 + rng.below(6));
        let grid = VoxelGrid::new(-4.0, 4.0, -4.0, 4.0, 0.0, 8.0, dims.0, dims.1, dims.2).unwrap();
        let cloud = random_cloud(&mut rng, n, [-3.9, -3.9, 0.1], [3.9, 3.9, 7.9]);
        // displace each point within its own cell, keeping a 5% margin
        let mut moved = Vec::with_capacity(n);
        let mut total_l1 = 0.0;
        for p in &cloud {
            let mut q = *p;
            let deltas = [grid.dx(), grid.dy(), grid.dz()];
            let mins = [grid.x_min, grid.y_min, grid.z_min];
            for ax in 0..3 {
                let cell = ((p[ax] - mins[ax]) / deltas[ax]).floor();
                let lo = mins[ax] + (cell + 0.05) * deltas[ax];
                let hi = mins[ax] + (cell + 0.95) * deltas[ax];
                q[ax] = rng.uniform(lo.min(hi), hi.max(lo));
                total_l1 += (q[ax] - p[ax]).abs();
            }
            moved.push(q);
        }
        prop_assume!(total_l1 > 1e-9);

        prop_assert_eq!(voxel_index_loss(&cloud, &moved, &grid).unwrap(), 0.0);

        let mut g = Graph::new();
        let pa = PointCloud::from_rows(&mut g, &cloud, false).unwrap();
        let pb = PointCloud::from_rows(&mut g, &moved, false).unwrap();
        let ra = voxel_density(&mut g, &pa, &grid).unwrap();
        let rb = voxel_density(&mut g, &pb, &grid).unwrap();
        prop_assert_eq!(g.value(&ra.values), g.value(&rb.values));
        let kl = vda_loss(&mut g, &ra, &rb, 1e-8).unwrap();
        prop_assert_eq!(g.scalar_value(&kl), 0.0);

        let pc = point_cloud_loss(&mut g, &pa, &pb).unwrap();
        let got = g.scalar_value(&pc);
        prop_assert!((got - total_l1).abs() < 1e-9);
        prop_assert!(got > 0.0);
    }

    /// Refining the grid never loses a detection: if the coarse grid sees a
    /// changed voxel index, the doubled grid (whose boundaries are a
    /// superset) sees one too.
    #[test]
    fn refinement_preserves_detection(seed in 0u64..1_000_000) {
        let mut rng = SplitMix64::new(seed);
        let n = 10 + rng.below(50);
        let coarse = VoxelGrid::new(-4.0, 4.0, -4.0, 4.0, 0.0, 8.0, 4, 4, 4).unwrap();
        let fine = coarse.refined(2).unwrap();
        let cloud = random_cloud(&mut rng, n, [-3.5, -3.5, 0.5], [3.5, 3.5, 7.5]);
        let delta = [
            rng.uniform(-1.5, 1.5),
            rng.uniform(-1.5, 1.5),
            rng.uniform(-1.5, 1.5),
        ];
        let moved: Vec<[f64; 3]> = cloud
            .iter()
            .map(|p| [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]])
            .collect();
        let coarse_loss = voxel_index_loss(&cloud, &moved, &coarse).unwrap();
        let fine_loss = voxel_index_loss(&cloud, &moved, &fine).unwrap();
        if coarse_loss > 0.0 {
            prop_assert!(fine_loss > 0.0, "coarse detected but refined did not");
        }
    }

    /// Doubling a grid axis halves that axis's voxel edge (the minimum
    /// displacement the grid can detect).
    #[test]
    fn refinement_halves_voxel_edges(nx in 1usize..32, ny in 1usize..32, nz in 1usize..32) {
        let g1 = VoxelGrid::new(0.0, 16.0, -8.0, 8.0, 0.0, 12.0, nx, ny, nz).unwrap();
        let g2 = g1.refined(2).unwrap();
        prop_assert!((g2.dx() - g1.dx() / 2.0).abs() < 1e-12);
        prop_assert!((g2.dy() - g1.dy() / 2.0).abs() < 1e-12);
        prop_assert!((g2.dz() - g1.dz() / 2.0).abs() < 1e-12);
    }
}
