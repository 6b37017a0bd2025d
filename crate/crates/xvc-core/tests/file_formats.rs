//! Round trips through the on-disk interfaces: depth maps with mask
//! sidecars, point clouds, offset fields and kernel weights, config-file
//! sections, and image export.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;

use xvc_core::camera::{CameraIntrinsics, PointCloud, RigidTransform};
use xvc_core::config::ConfigDoc;
use xvc_core::deformable::{deformable_sample, KernelWeights, OffsetField};
use xvc_core::io;
use xvc_core::scene::{render, Primitive, Shape, SyntheticScene, Texture};
use xvc_core::tensor::Graph;
use xvc_core::voxel::VoxelGrid;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("xvc_formats_{}_{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn render_output_save_and_depth_roundtrip() {
    let dir = temp_dir("render");
    let scene = SyntheticScene::new(
        vec![Primitive {
            name: "bg".into(),
            center: [0.0, 0.0, 6.0],
            shape: Shape::Plane { axis: 2, extent: [100.0, 100.0] },
            texture: Texture::Gradient { base: 0.5, slope_u: 0.05, slope_v: 0.02 },
            occluder: false,
        }],
        1.0,
    )
    .unwrap();
    let k = CameraIntrinsics::new(50.0, 50.0, 7.5, 5.5).unwrap();
    let out = render(&scene, &k, &RigidTransform::identity(), 12, 16).unwrap();
    let files = out.save(&dir, "frame").unwrap();
    assert_eq!(files.len(), 3);
    for f in &files {
        assert!(f.exists(), "{} missing", f.display());
    }
    let depth = io::read_depth(&dir.join("frame_depth.xvt")).unwrap();
    assert_eq!(depth.values, out.depth.values);
    assert_eq!(depth.valid, out.depth.valid);

    // PGM header sanity
    let pgm = fs::read(&dir.join("frame.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 12\n255\n"));
}

#[test]
fn point_cloud_file_roundtrip() {
    let dir = temp_dir("cloud");
    let path = dir.join("cloud.xvt");
    let rows = vec![[1.0, -2.0, 3.5], [0.25, 0.5, 9.0]];
    let mut g = Graph::new();
    let pc = PointCloud::from_rows(&mut g, &rows, false).unwrap();
    pc.save(&g, &path).unwrap();
    let mut g2 = Graph::new();
    let back = PointCloud::load(&mut g2, &path, false).unwrap();
    assert_eq!(back.rows(&g2), rows);

    // wrong shape rejected
    io::write_tensor(&dir.join("bad.xvt"), &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(PointCloud::load(&mut g2, &dir.join("bad.xvt"), false).is_err());
}

#[test]
fn offsets_and_weights_load_from_files() {
    let dir = temp_dir("offsets");
    let (groups, n, h, w) = (2, 3, 4, 4);
    let channels = groups * 2 * n * n;
    let off_data: Vec<f64> = (0..channels * h * w).map(|i| (i % 7) as f64 * 0.1).collect();
    io::write_tensor(&dir.join("off.xvt"), &[channels, h, w], &off_data).unwrap();
    let wt_data: Vec<f64> = (0..groups * n * n).map(|i| i as f64 * 0.01).collect();
    io::write_tensor(&dir.join("wt.xvt"), &[groups, n * n], &wt_data).unwrap();

    let mut g = Graph::new();
    let offsets = OffsetField::load(&mut g, &dir.join("off.xvt"), groups, n, false).unwrap();
    let weights = KernelWeights::load(&mut g, &dir.join("wt.xvt"), groups, n, false).unwrap();
    assert_eq!(g.value(&offsets.values), off_data.as_slice());
    assert_eq!(g.value(&weights.values), wt_data.as_slice());

    // mismatched group count rejected
    assert!(OffsetField::load(&mut g, &dir.join("off.xvt"), 3, n, false).is_err());
}

#[test]
fn five_by_five_kernel_identity() {
    // the larger kernel from the size ablation behaves like the 3x3 one
    let mut g = Graph::new();
    let src = g
        .leaf((0..2 * 6 * 6).map(|i| i as f64 * 0.01).collect(), &[2, 6, 6], false)
        .unwrap();
    let offsets = OffsetField::constant(&mut g, 2, 5, 6, 6, 0.0, 0.0, false).unwrap();
    assert_eq!(offsets.values.shape()[0], 2 * 2 * 25); // 100-channel field per pair
    let weights = KernelWeights::delta_center(&mut g, 2, 5).unwrap();
    let out = deformable_sample(&mut g, &src, &offsets, &weights).unwrap();
    assert_eq!(g.value(&out), g.value(&src));
}

#[test]
fn intrinsics_pose_and_grid_from_config() {
    let doc = ConfigDoc::parse(
        "[camera]\nfx = 120\nfy = 110\nu0 = 32\nv0 = 24\n\
         [pose]\nrotation = 0 -1 0 1 0 0 0 0 1\ntranslation = 0.5 0 -1\n\
         [grid]\nx_min = -2\nx_max = 2\ny_min = -1\ny_max = 1\nz_min = 0\nz_max = 8\nnx = 4\nny = 2\nnz = 8\n",
    )
    .unwrap();
    let k = CameraIntrinsics::from_config(doc.section("camera").unwrap()).unwrap();
    assert_eq!((k.fx, k.fy, k.u0, k.v0), (120.0, 110.0, 32.0, 24.0));
    let pose = RigidTransform::from_config(doc.section("pose").unwrap()).unwrap();
    assert_eq!(pose.apply([1.0, 0.0, 0.0]), [0.5, 1.0, -1.0]);
    let grid = VoxelGrid::from_config(doc.section("grid").unwrap()).unwrap();
    assert_eq!(grid.total_voxels(), 64);
    assert_eq!(grid.dx(), 1.0);

    // a non-orthonormal rotation is rejected
    let bad = ConfigDoc::parse("[pose]\nrotation = 1 0 0 0 1 0 0 0 2\n").unwrap();
    assert!(RigidTransform::from_config(bad.section("pose").unwrap()).is_err());
}

#[test]
fn ppm_export_writes_rgb_triples() {
    let dir = temp_dir("ppm");
    let path = dir.join("img.ppm");
    io::write_ppm(&path, 2, 1, &[0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
    assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 128, 0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Tensor files survive a write/read round trip bit-exactly for any
    /// shape and payload.
    #[test]
    fn tensor_roundtrip_property(
        dims in proptest::collection::vec(1usize..5, 0..4),
        seed in 0u64..u64::MAX,
    ) {
        let numel: usize = dims.iter().product();
        let mut rng = xvc_core::rng::SplitMix64::new(seed);
        let data: Vec<f64> = (0..numel).map(|_| rng.uniform(-1e6, 1e6)).collect();
        let dir = temp_dir("prop");
        let path = dir.join(format!("t{seed}.xvt"));
        io::write_tensor(&path, &dims, &data).unwrap();
        let back = io::read_tensor(&path).unwrap();
        prop_assert_eq!(back.shape, dims);
        prop_assert_eq!(back.data, data);
    }
}
