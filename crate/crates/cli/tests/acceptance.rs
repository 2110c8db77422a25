//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The end-to-end criteria drive the `labelfuse` binary the way a user would
//! and score its outputs against the analytic scene. The rest exercise the
//! library directly against independent oracles.

use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use labelfuse::geometry::{
    backproject_pixel, depth_to_cloud, estimate_normals, project_point, DepthImage, Intrinsics,
    LabelImage, LabeledPointCloud, NeighborSearch, Orientation, RgbdFrame, RigidPose,
};
use labelfuse::io::{
    decode_ply, encode_ply, parse_sfm_images, read_depth_image, read_label_image, read_labeled_ply,
    read_sfm_model, write_depth_image, write_label_image, write_sfm_images, PlyFormat, RunConfig,
    SfmView,
};
use labelfuse::mvs::{filter_labeled_cloud, fuse_views, FilterPolicy, FusionParams, FusionView};
use labelfuse::oracle::{
    absolute_trajectory_error, default_intrinsics, render_frame, render_normals, Primitive, Scene,
    SceneConfig, Shape,
};
use labelfuse::rgbd::{
    compute_fpfh, default_icp_scales, evaluate_registration, point_to_plane_icp,
    preprocess_fragment, refine_multiscale_icp, register_pair_fgr, register_pair_ransac,
    voxel_downsample, Fragment, RegistrationParams,
};
use labelfuse::tracker::{track_sequence, TrackerConfig};
use labelfuse::tsdf::{euler_characteristic, MaskdFrame, TsdfVolume};
use labelfuse::Error;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scene_file(name: &str) -> PathBuf {
    workspace().join("scenes").join(name)
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

/// Runs the binary quietly; returns stdout, or an error carrying stderr.
fn labelfuse<I, S>(args: I) -> Result<String, String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let args: Vec<_> = args.into_iter().map(|a| a.as_ref().to_owned()).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_labelfuse"))
        .arg("--quiet")
        .args(&args)
        .env_remove("LABELFUSE_SEED")
        .output()
        .map_err(|e| format!("cannot start labelfuse: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "labelfuse {args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Report {
    rms: f64,
    iou: BTreeMap<String, f64>,
}

fn parse_report(json: &str) -> Result<Report, String> {
    let v: serde_json::Value = serde_json::from_str(json).map_err(|e| format!("report: {e}"))?;
    let rms = v["surface_rms"]
        .as_f64()
        .ok_or("report lacks surface_rms")?;
    let iou = v["iou"]
        .as_object()
        .ok_or("report lacks iou")?
        .iter()
        .map(|(k, x)| (k.clone(), x.as_f64().unwrap_or(f64::NAN)))
        .collect();
    Ok(Report { rms, iou })
}

fn iou_text(iou: &BTreeMap<String, f64>) -> String {
    iou.iter()
        .map(|(k, v)| format!("{k}: {v:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn check_report(r: &Report, labels: &[&str], max_rms: f64) -> Result<(), String> {
    for l in labels {
        let v = r.iou.get(*l).copied().unwrap_or(0.0);
        ensure(v >= 0.98, || format!("label {l} IoU {v:.4} < 0.98"))?;
    }
    ensure(r.rms <= max_rms, || {
        format!(
            "surface RMS {:.3} mm > {:.3} mm",
            r.rms * 1e3,
            max_rms * 1e3
        )
    })
}

fn mvs_end_to_end() -> Outcome {
    let dir = tempdir();
    let fx = dir.path().join("fx");
    let out = dir.path().join("fused.ply");
    let scene = scene_file("two-spheres.cfg");
    let start = Instant::now();
    labelfuse([
        OsStr::new("--threads"),
        "1".as_ref(),
        "synth".as_ref(),
        "--scene".as_ref(),
        scene.as_os_str(),
        "--frames".as_ref(),
        "8".as_ref(),
        "--out".as_ref(),
        fx.as_os_str(),
    ])?;
    labelfuse([
        OsStr::new("--threads"),
        "1".as_ref(),
        "fuse-mvs".as_ref(),
        "--model".as_ref(),
        fx.as_os_str(),
        "--depth".as_ref(),
        fx.as_os_str(),
        "--normals".as_ref(),
        fx.as_os_str(),
        "--masks".as_ref(),
        fx.as_os_str(),
        "--stride".as_ref(),
        "1".as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
    ])?;
    let json = labelfuse([
        OsStr::new("--threads"),
        "1".as_ref(),
        "eval".as_ref(),
        "--pred".as_ref(),
        out.as_os_str(),
        "--scene".as_ref(),
        scene.as_os_str(),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let cloud = read_labeled_ply(&out).map_err(|e| e.to_string())?.cloud;
    let r = parse_report(&json)?;
    check_report(&r, &["1", "2"], 0.002)?;
    ensure(secs <= 60.0, || format!("took {secs:.1} s single-threaded"))?;
    Ok(format!(
        "{} points, IoU {{{}}}, RMS {:.3} mm, {secs:.1} s on one thread",
        cloud.len(),
        iou_text(&r.iou),
        r.rms * 1e3
    ))
}

fn parse_poses(text: &str) -> Result<Vec<RigidPose>, String> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .skip(1)
                .map(|t| t.parse::<f64>().map_err(|e| format!("poses: {e}")))
                .collect::<Result<_, _>>()?;
            ensure(v.len() == 7, || format!("poses line `{l}`"))?;
            RigidPose::from_quaternion(
                [v[0], v[1], v[2], v[3]],
                Vector3::new(v[4], v[5], v[6]),
                1e-6,
            )
            .map_err(|e| e.to_string())
        })
        .collect()
}

fn rgbd_end_to_end() -> Outcome {
    const FRAMES: usize = 100;
    const FRAGMENT: usize = 20;
    const VOXEL: f64 = 0.008;
    let dir = tempdir();
    let fx = dir.path().join("fx");
    let prefix = dir.path().join("run");
    let config = dir.path().join("recon.cfg");
    fs::write(
        &config,
        format!("fragment_size = {FRAGMENT}\nvoxel_size = {VOXEL}\n"),
    )
    .map_err(|e| e.to_string())?;
    let scene = scene_file("two-spheres-checkered.cfg");
    labelfuse([
        OsStr::new("synth"),
        "--scene".as_ref(),
        scene.as_os_str(),
        "--frames".as_ref(),
        FRAMES.to_string().as_ref(),
        "--out".as_ref(),
        fx.as_os_str(),
    ])?;
    let start = Instant::now();
    labelfuse([
        OsStr::new("recon-rgbd"),
        "--frames".as_ref(),
        fx.as_os_str(),
        "--masks".as_ref(),
        fx.as_os_str(),
        "--config".as_ref(),
        config.as_os_str(),
        "--out".as_ref(),
        prefix.as_os_str(),
        "--extract".as_ref(),
        "mesh".as_ref(),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let mesh = dir.path().join("run_mesh.ply");
    let r = parse_report(&labelfuse([
        OsStr::new("eval"),
        "--pred".as_ref(),
        mesh.as_os_str(),
        "--scene".as_ref(),
        scene.as_os_str(),
    ])?)?;

    let poses_text =
        fs::read_to_string(dir.path().join("run_poses.txt")).map_err(|e| e.to_string())?;
    let estimate = parse_poses(&poses_text)?;
    let model = read_sfm_model(&fx).map_err(|e| e.to_string())?;
    let truth: Vec<RigidPose> = model
        .views
        .values()
        .step_by(FRAGMENT)
        .map(|v| v.pose.inverse())
        .collect();
    ensure(estimate.len() == FRAMES / FRAGMENT, || {
        format!("{} fragment poses", estimate.len())
    })?;
    let ate = absolute_trajectory_error(&estimate, &truth).map_err(|e| e.to_string())?;
    let diameter = SceneConfig::load(&scene)
        .map_err(|e| e.to_string())?
        .scene
        .diameter();

    check_report(&r, &["1", "2"], VOXEL)?;
    ensure(ate <= 0.01 * diameter, || {
        format!("ATE {:.2} mm > 1% of {diameter:.3} m", ate * 1e3)
    })?;
    ensure(secs <= 300.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "mesh IoU {{{}}}, RMS {:.3} mm, ATE {:.2} mm ({:.3}% of diameter), {secs:.1} s",
        iou_text(&r.iou),
        r.rms * 1e3,
        ate * 1e3,
        100.0 * ate / diameter
    ))
}

struct View {
    color: labelfuse::geometry::ColorImage,
    depth: DepthImage,
    labels: LabelImage,
    camera_to_world: RigidPose,
}

fn orbit_views(scene: &Scene, frames: usize) -> (Intrinsics, Vec<View>) {
    let cfg = SceneConfig::for_scene(scene.clone());
    let k = default_intrinsics();
    let views = cfg
        .trajectory(frames)
        .expect("orbit")
        .poses
        .into_iter()
        .map(|pose| {
            let (color, depth, labels) = render_frame(scene, &k, &pose);
            View {
                color,
                depth,
                labels,
                camera_to_world: pose,
            }
        })
        .collect();
    (k, views)
}

fn fusion_views(scene: &Scene, frames: usize) -> Vec<FusionView> {
    let (k, views) = orbit_views(scene, frames);
    views
        .into_iter()
        .map(|v| {
            let normal = render_normals(scene, &k, &v.camera_to_world);
            FusionView::new(
                v.depth,
                Some(normal),
                v.color,
                v.labels,
                v.camera_to_world.inverse(),
                k,
            )
            .expect("valid view")
        })
        .collect()
}

fn structural_identity() -> Outcome {
    let (k, views) = orbit_views(&Scene::two_spheres(), 12);
    let mut rgb = TsdfVolume::with_voxel_size(0.01).map_err(|e| e.to_string())?;
    let mut mask = TsdfVolume::with_voxel_size(0.01).map_err(|e| e.to_string())?;
    for v in &views {
        let frame =
            RgbdFrame::new(v.color.clone(), v.depth.clone(), k).map_err(|e| e.to_string())?;
        rgb.integrate_rgbd(&frame, &v.camera_to_world)
            .map_err(|e| e.to_string())?;
        let maskd =
            MaskdFrame::new(v.labels.clone(), v.depth.clone()).map_err(|e| e.to_string())?;
        mask.integrate_maskd(&maskd, &k, &v.camera_to_world)
            .map_err(|e| e.to_string())?;
    }
    ensure(rgb.block_keys() == mask.block_keys(), || {
        "allocated blocks differ".into()
    })?;
    let mut n = 0usize;
    for ((ga, a), (gb, b)) in rgb.voxels().zip(mask.voxels()) {
        ensure(
            ga == gb
                && a.tsdf.to_bits() == b.tsdf.to_bits()
                && a.weight.to_bits() == b.weight.to_bits(),
            || format!("voxel {ga:?} differs"),
        )?;
        n += usize::from(a.is_observed());
    }
    ensure(n > 0, || "nothing integrated".into())?;
    Ok(format!(
        "{} blocks, {n} observed voxels bit-identical over {} frames",
        rgb.block_count(),
        views.len()
    ))
}

fn same_bits(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(p, q)| (0..3).all(|i| p[i].to_bits() == q[i].to_bits()))
}

fn swap_color(labels: &LabelImage) -> labelfuse::geometry::ColorImage {
    labels.map(|&l| [l as u8, (l >> 8) as u8, 0])
}

fn swap_labels(color: &labelfuse::geometry::ColorImage) -> LabelImage {
    color.map(|c| u16::from_le_bytes([c[0], c[1]]))
}

fn channel_alignment() -> Outcome {
    let scene = Scene::two_spheres();
    let views = fusion_views(&scene, 6);
    let a = fuse_views(&views, &FusionParams::default()).map_err(|e| e.to_string())?;
    let swapped: Vec<FusionView> = views
        .iter()
        .map(|v| {
            let mut s = v.clone();
            s.color = swap_color(&v.labels);
            s.labels = swap_labels(&v.color);
            s
        })
        .collect();
    let b = fuse_views(&swapped, &FusionParams::default()).map_err(|e| e.to_string())?;
    ensure(same_bits(&a.positions, &b.positions), || {
        format!("MVS positions differ ({} vs {} points)", a.len(), b.len())
    })?;
    ensure(a.colors.as_ref().map(Vec::len) == Some(a.len()), || {
        "color list does not match the positions".into()
    })?;

    let (k, orbit) = orbit_views(&scene, 6);
    let mut vol_a = TsdfVolume::with_voxel_size(0.01).map_err(|e| e.to_string())?;
    let mut vol_b = vol_a.clone();
    for v in &orbit {
        let fa = RgbdFrame::new(v.color.clone(), v.depth.clone(), k).map_err(|e| e.to_string())?;
        let fb =
            RgbdFrame::new(swap_color(&v.labels), v.depth.clone(), k).map_err(|e| e.to_string())?;
        vol_a
            .integrate_labeled(&fa, &v.labels, &v.camera_to_world)
            .map_err(|e| e.to_string())?;
        vol_b
            .integrate_labeled(&fb, &swap_labels(&v.color), &v.camera_to_world)
            .map_err(|e| e.to_string())?;
    }
    let (ca, cb) = (vol_a.extract_point_cloud(), vol_b.extract_point_cloud());
    ensure(same_bits(&ca.positions, &cb.positions), || {
        "TSDF cloud positions differ".into()
    })?;
    ensure(ca.labels.len() == ca.len(), || {
        "label list does not match the positions".into()
    })?;
    Ok(format!(
        "MVS {} points and TSDF {} points unchanged by the payload swap",
        a.len(),
        ca.len()
    ))
}

fn noise_suppression() -> Outcome {
    let scene = Scene::two_spheres();
    let views = fusion_views(&scene, 8);
    let fused = fuse_views(&views, &FusionParams::default()).map_err(|e| e.to_string())?;
    let labeled: Vec<Vector3<f64>> = fused
        .positions
        .iter()
        .zip(&fused.labels)
        .filter(|(_, &l)| l != 0)
        .map(|(p, _)| *p)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut noise = LabeledPointCloud::with_colors();
    while noise.len() < 500 {
        let p = Vector3::new(
            rng.random_range(-1.2..1.2),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if scene.sdf(&p).0.abs() < 0.05 {
            continue;
        }
        let masked = views.iter().any(|v| {
            project_point(&v.world_to_camera.apply(&p), &v.intrinsics)
                .ok()
                .and_then(|(u, w, _)| v.intrinsics.pixel_at(u, w))
                .is_some_and(|(x, y)| *v.labels.get(x, y) != 0)
        });
        if !masked {
            noise.push(p, Some([255, 255, 255]), None, 0);
        }
    }
    let mut noisy = fused.clone();
    noisy.append(&noise);
    let kept = filter_labeled_cloud(&noisy, FilterPolicy::KeepLabeled);
    let noise_left = kept
        .positions
        .iter()
        .filter(|p| noise.positions.contains(p))
        .count();
    ensure(noise_left == 0, || {
        format!("{noise_left} of 500 noise points survived")
    })?;
    ensure(same_bits(&kept.positions, &labeled), || {
        format!("{} of {} labeled points kept", kept.len(), labeled.len())
    })?;
    Ok(format!(
        "500/500 noise points removed, {}/{} labeled points kept",
        kept.len(),
        labeled.len()
    ))
}

/// Cameras on a Fibonacci sphere around `center`, all looking at it.
fn surrounding_poses(center: Vector3<f64>, distance: f64, n: usize) -> Vec<RigidPose> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 0.9 - 1.8 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            let eye = center + Vector3::new(r * th.cos(), r * th.sin(), z) * distance;
            RigidPose::look_at(eye, center, Vector3::z()).expect("camera off the up axis")
        })
        .collect()
}

fn fragment_of(cloud: LabeledPointCloud, id: usize) -> Fragment {
    Fragment {
        id,
        pose: RigidPose::identity(),
        cloud,
        start: 0,
        end: 1,
        frame_poses: vec![RigidPose::identity()],
    }
}

/// Scattered primitives seen from all around, fused into one cloud.
fn registration_cloud() -> LabeledPointCloud {
    let scene = Scene::scattered(16, 7);
    let k = default_intrinsics();
    let center = SceneConfig::for_scene(scene.clone()).orbit.center;
    let mut cloud = LabeledPointCloud::with_colors();
    for pose in surrounding_poses(center, 2.2, 12) {
        let (color, depth, labels) = render_frame(&scene, &k, &pose);
        cloud.append(
            &depth_to_cloud(&depth, &k, &pose.inverse(), Some(&color), Some(&labels))
                .expect("rendered depth is valid"),
        );
    }
    voxel_downsample(&cloud, 0.004).expect("positive voxel")
}

fn registration_suite() -> Outcome {
    const VOXEL_DOWN: f64 = 0.016;
    let cloud = registration_cloud();
    let truth = RigidPose::from_axis_angle(
        Vector3::new(0.0, 0.0, 30f64.to_radians()),
        Vector3::new(0.3, -0.3, 0.07f64.sqrt()),
    );
    let moved = cloud.transformed(&truth);
    let params = RegistrationParams::new(VOXEL_DOWN);
    let src = preprocess_fragment(
        &fragment_of(cloud.clone(), 0),
        VOXEL_DOWN,
        params.feature_radius(),
    )
    .map_err(|e| e.to_string())?;
    let dst = preprocess_fragment(
        &fragment_of(moved.clone(), 1),
        VOXEL_DOWN,
        params.feature_radius(),
    )
    .map_err(|e| e.to_string())?;

    let ransac = register_pair_ransac(&src, &dst, &params).map_err(|e| e.to_string())?;
    let (_, dt_ransac) = ransac.pose.difference(&truth);
    ensure(dt_ransac <= 2.0 * VOXEL_DOWN, || {
        format!("RANSAC translation error {:.1} mm", dt_ransac * 1e3)
    })?;
    let fgr = register_pair_fgr(&src, &dst, &params).map_err(|e| e.to_string())?;
    let (_, dt_fgr) = fgr.pose.difference(&truth);
    ensure(dt_fgr <= 2.0 * VOXEL_DOWN, || {
        format!("FGR translation error {:.1} mm", dt_fgr * 1e3)
    })?;

    let nudge = RigidPose::from_axis_angle(
        Vector3::new(1.0, 1.0, 0.0).normalize() * 5f64.to_radians(),
        Vector3::new(0.03, -0.04, 0.0),
    );
    let init = nudge.compose(&truth);
    let scales = default_icp_scales(VOXEL_DOWN);
    let icp = refine_multiscale_icp(&cloud, &moved, &init, &scales).map_err(|e| e.to_string())?;
    let (dr, dt) = icp.pose.difference(&truth);
    ensure(dr.to_degrees() <= 0.5 && dt <= 0.005, || {
        format!("ICP left {:.3} deg, {:.2} mm", dr.to_degrees(), dt * 1e3)
    })?;

    // single-scale ICP from assorted starts never ends above its start RMSE
    let max = 2.0 * VOXEL_DOWN;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..8 {
        let w = Vector3::from_fn(|_, _| rng.random_range(-0.03..0.03));
        let t = Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01));
        let start_pose = RigidPose::from_axis_angle(w, t).compose(&truth);
        let start =
            evaluate_registration(&src.cloud.positions, &dst.cloud.positions, &start_pose, max);
        for iters in [1, 5, 30] {
            let r = point_to_plane_icp(&src.cloud.positions, &dst.cloud, &start_pose, max, iters)
                .map_err(|e| e.to_string())?;
            worst = worst.max(r.inlier_rmse - start.inlier_rmse);
        }
    }
    ensure(worst <= 1e-12, || {
        format!("ICP raised the RMSE by {worst:e}")
    })?;
    Ok(format!(
        "RANSAC {:.1} mm, FGR {:.1} mm (limit {:.0} mm); ICP 5 deg/5 cm -> {:.4} deg/{:.3} mm; \
         24 ICP runs never degraded",
        dt_ransac * 1e3,
        dt_fgr * 1e3,
        2e3 * VOXEL_DOWN,
        dr.to_degrees(),
        dt * 1e3
    ))
}

struct Square {
    label: u16,
    color: [u8; 3],
    origin: (i64, i64),
    side: i64,
    velocity: (i64, i64),
}

/// Two colored squares translating at constant velocity.
fn square_frame(t: usize) -> (labelfuse::geometry::ColorImage, LabelImage) {
    const SQUARES: [Square; 2] = [
        Square {
            label: 1,
            color: [220, 40, 40],
            origin: (5, 5),
            side: 14,
            velocity: (3, 2),
        },
        Square {
            label: 4,
            color: [40, 60, 220],
            origin: (70, 8),
            side: 10,
            velocity: (-2, 3),
        },
    ];
    let hit = |x: usize, y: usize| {
        SQUARES.iter().find(|q| {
            let t = t as i64;
            let (ox, oy) = (q.origin.0 + q.velocity.0 * t, q.origin.1 + q.velocity.1 * t);
            let (x, y) = (x as i64, y as i64);
            x >= ox && x < ox + q.side && y >= oy && y < oy + q.side
        })
    };
    (
        labelfuse::geometry::ColorImage::from_fn(96, 72, |x, y| {
            hit(x, y).map_or([90, 90, 90], |q| q.color)
        }),
        LabelImage::from_fn(96, 72, |x, y| hit(x, y).map_or(0, |q| q.label)),
    )
}

fn mask_iou(a: &LabelImage, b: &LabelImage, label: u16) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        inter += usize::from(p == label && q == label);
        union += usize::from(p == label || q == label);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn tracker_suite() -> Outcome {
    const FRAMES: usize = 10;
    let (images, truth): (Vec<_>, Vec<_>) = (0..FRAMES).map(square_frame).unzip();
    let cfg = TrackerConfig::default();
    let tracked = track_sequence(&images, &BTreeMap::from([(0, truth[0].clone())]), &cfg)
        .map_err(|e| e.to_string())?;
    for (t, m) in tracked.iter().enumerate() {
        for l in [1, 4] {
            let v = mask_iou(m, &truth[t], l);
            ensure(v == 1.0, || format!("frame {t} label {l}: IoU {v}"))?;
        }
    }
    let corrupt_at = 4;
    let mut bad = truth[corrupt_at].clone();
    for y in 40..60 {
        for x in 40..60 {
            bad.set(x, y, 1);
        }
    }
    let seeds = BTreeMap::from([
        (0, truth[0].clone()),
        (corrupt_at, bad),
        (corrupt_at + 1, truth[corrupt_at + 1].clone()),
    ]);
    let healed = track_sequence(&images, &seeds, &cfg).map_err(|e| e.to_string())?;
    for t in corrupt_at + 1..FRAMES {
        ensure(healed[t] == truth[t], || {
            format!("frame {t} differs from ground truth after the corrective seed")
        })?;
    }
    Ok(format!(
        "{FRAMES} translated frames at IoU 1.0; corruption at frame {corrupt_at} healed from frame {}",
        corrupt_at + 1
    ))
}

fn parser_suite() -> Outcome {
    let data = workspace().join("crates/core/tests/data");
    let model = read_sfm_model(&data.join("sfm")).map_err(|e| e.to_string())?;
    let k1 = model.cameras[&1];
    ensure(
        (k1.fx, k1.fy, k1.cx, k1.cy, k1.width, k1.height) == (500.0, 510.0, 320.0, 240.0, 640, 480)
            && model.views[&1].pose == RigidPose::identity()
            && model.sparse_points.len() == 2,
        || "golden SfM model parsed wrong".into(),
    )?;
    let golden = fs::read(data.join("triangle_ascii.ply")).map_err(|e| e.to_string())?;
    let ply = decode_ply(&golden).map_err(|e| e.to_string())?;
    let again =
        encode_ply(&ply.cloud, Some(&ply.faces), PlyFormat::Ascii).map_err(|e| e.to_string())?;
    ensure(again == golden, || {
        "golden PLY does not re-encode byte-identically".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let views: BTreeMap<u32, SfmView> = (1..=20)
        .map(|id| {
            let q = UnitQuaternion::from_quaternion(Quaternion::from(Vector4::from_fn(|_, _| {
                rng.random_range(-1.0..1.0)
            })));
            let t = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let pose = RigidPose::new(*q.to_rotation_matrix().matrix(), t).expect("rotation");
            (
                id,
                SfmView {
                    pose,
                    camera_id: 1,
                    name: format!("img_{id}.png"),
                },
            )
        })
        .collect();
    let parsed = parse_sfm_images(&write_sfm_images(&views)).map_err(|e| e.to_string())?;
    for (id, v) in &views {
        let (dr, dt) = v.pose.difference(&parsed[id].pose);
        ensure(
            dr <= 1e-9 && dt <= 1e-9 && v.name == parsed[id].name,
            || format!("view {id} changed by {dr:e} rad, {dt:e} m"),
        )?;
    }

    let dir = tempdir();
    let depth = DepthImage::from_fn(37, 23, |x, y| {
        if (x + y) % 7 == 0 {
            0.0
        } else {
            ((x * 131 + y * 17) % 60_000) as f64 / 1000.0
        }
    });
    let dpath = dir.path().join("d.png");
    write_depth_image(&depth, &dpath).map_err(|e| e.to_string())?;
    ensure(
        read_depth_image(&dpath).map_err(|e| e.to_string())? == depth,
        || "depth raster changed on round trip".into(),
    )?;
    let labels = LabelImage::from_fn(37, 23, |x, y| ((x * 977 + y * 31) % 65_536) as u16);
    let lpath = dir.path().join("l.png");
    write_label_image(&labels, &lpath).map_err(|e| e.to_string())?;
    ensure(
        read_label_image(&lpath).map_err(|e| e.to_string())? == labels,
        || "label raster changed on round trip".into(),
    )?;

    let mut cloud = LabeledPointCloud::with_colors();
    for i in 0..200 {
        let p = Vector3::from_fn(|_, _| rng.random_range(-3.0f32..3.0) as f64);
        cloud.push(p, Some([i as u8, 255 - i as u8, 7]), None, (i % 5) as u16);
    }
    let faces = [[0u32, 1, 2], [3, 4, 5]];
    let ascii =
        decode_ply(&encode_ply(&cloud, Some(&faces), PlyFormat::Ascii).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let binary = decode_ply(
        &encode_ply(&cloud, Some(&faces), PlyFormat::BinaryLittleEndian)
            .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(ascii == binary && ascii.cloud == cloud, || {
        "ASCII and binary PLY decode differently".into()
    })?;

    let sfm_line =
        match parse_sfm_images("1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 0 0 zero 1 b.png\n\n") {
            Err(Error::Parse { line, .. }) => line,
            other => return Err(format!("malformed images.txt accepted: {other:?}")),
        };
    let ply_line = match decode_ply(
        b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
property float z\nend_header\n0 0 0\n1 x 1\n",
    ) {
        Err(Error::Parse { line, .. }) => line,
        other => return Err(format!("malformed PLY accepted: {other:?}")),
    };
    let cfg_line = match RunConfig::parse("stride = 2\nvoxel_size = big\n") {
        Err(Error::Parse { line, .. }) => line,
        other => return Err(format!("malformed config accepted: {other:?}")),
    };
    ensure((sfm_line, ply_line, cfg_line) == (3, 9, 2), || {
        format!("error lines {sfm_line}, {ply_line}, {cfg_line}; expected 3, 9, 2")
    })?;
    Ok(
        "golden SfM and PLY files, 20 views, rasters and ASCII/binary PLY round-trip; \
        malformed inputs report lines 3, 9, 2"
            .into(),
    )
}

fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).abs().min(1.0).acos().to_degrees()
}

fn numerical_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = Intrinsics::new(525.0, 530.0, 319.5, 239.5, 640, 480).map_err(|e| e.to_string())?;
    let mut proj_err: f64 = 0.0;
    for _ in 0..10_000 {
        let (u, v, d) = (
            rng.random_range(0.0..639.0),
            rng.random_range(0.0..479.0),
            rng.random_range(0.05..50.0),
        );
        let p = backproject_pixel(u, v, d, &k).map_err(|e| e.to_string())?;
        let (pu, pv, pd) = project_point(&p, &k).map_err(|e| e.to_string())?;
        proj_err = proj_err
            .max((pu - u).abs())
            .max((pv - v).abs())
            .max((pd - d).abs());
    }
    ensure(proj_err <= 1e-9, || {
        format!("projection round trip off by {proj_err:e}")
    })?;

    let mut rigid_err: f64 = 0.0;
    for _ in 0..10_000 {
        let mut pose = || {
            RigidPose::from_axis_angle(
                Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
            )
        };
        let (a, b) = (pose(), pose());
        let ab = a.compose(&b);
        let r = ab.rotation();
        let p = Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0));
        let q = Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0));
        rigid_err = rigid_err
            .max((r.transpose() * r - nalgebra::Matrix3::identity()).amax())
            .max((r.determinant() - 1.0).abs())
            .max(((ab.apply(&p) - ab.apply(&q)).norm() - (p - q).norm()).abs())
            .max((ab.inverse().apply(&ab.apply(&p)) - p).norm());
    }
    ensure(rigid_err <= 1e-9, || {
        format!("rigidity violated by {rigid_err:e}")
    })?;

    let n = Vector3::new(0.3, -0.5, 0.8).normalize();
    let u = n.cross(&Vector3::x()).normalize();
    let w = n.cross(&u);
    let plane: Vec<Vector3<f64>> = (0..900)
        .map(|i| u * ((i % 30) as f64 * 0.01) + w * ((i / 30) as f64 * 0.01))
        .collect();
    let plane_worst = estimate_normals(&plane, NeighborSearch::Knn(12), Orientation::None)
        .map_err(|e| e.to_string())?
        .iter()
        .flatten()
        .map(|m| angle_deg(m, &n))
        .fold(0.0, f64::max);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let sphere: Vec<Vector3<f64>> = (0..3000)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 3000.0;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Vector3::new(r * a.cos(), r * a.sin(), z) * 0.5
        })
        .collect();
    let sphere_normals = estimate_normals(&sphere, NeighborSearch::Knn(15), Orientation::None)
        .map_err(|e| e.to_string())?;
    let mut sphere_worst: f64 = 0.0;
    for (p, m) in sphere.iter().zip(&sphere_normals) {
        let m = m.ok_or("degenerate sphere neighborhood")?;
        sphere_worst = sphere_worst.max(angle_deg(&m, &p.normalize()));
    }
    ensure(plane_worst <= 2.0 && sphere_worst <= 2.0, || {
        format!("normals off by {plane_worst:.3} deg (plane), {sphere_worst:.3} deg (sphere)")
    })?;

    let ball = Scene::new(vec![Primitive::new(
        Shape::Sphere {
            center: Vector3::zeros(),
            radius: 0.5,
        },
        [180, 120, 40],
        7,
    )])
    .map_err(|e| e.to_string())?;
    let kd = default_intrinsics();
    let mut vol = TsdfVolume::with_voxel_size(0.01).map_err(|e| e.to_string())?;
    for pose in surrounding_poses(Vector3::zeros(), 1.6, 30) {
        let (color, depth, labels) = render_frame(&ball, &kd, &pose);
        let frame = RgbdFrame::new(color, depth, kd).map_err(|e| e.to_string())?;
        vol.integrate_labeled(&frame, &labels, &pose)
            .map_err(|e| e.to_string())?;
    }
    let clamped = vol.voxels().all(|(_, v)| (-1.0..=1.0).contains(&v.tsdf));
    ensure(clamped, || "a tsdf value left [-1, 1]".into())?;
    let mesh = vol.extract_mesh();
    let chi = euler_characteristic(mesh.vertices.len(), &mesh.triangles);
    ensure(chi == 2, || {
        format!("sphere mesh Euler characteristic {chi}")
    })?;

    let cloud = registration_cloud();
    let params = RegistrationParams::new(0.016);
    let pre = preprocess_fragment(&fragment_of(cloud, 0), 0.016, params.feature_radius())
        .map_err(|e| e.to_string())?;
    let normals = pre.cloud.normals.clone().ok_or("no normals")?;
    let t = RigidPose::from_axis_angle(Vector3::new(0.4, -0.2, 0.5), Vector3::new(0.3, 0.1, -0.2));
    let moved: Vec<_> = pre.cloud.positions.iter().map(|p| t.apply(p)).collect();
    let moved_normals: Vec<_> = normals.iter().map(|m| t.rotate(m)).collect();
    let a = compute_fpfh(&pre.cloud.positions, &normals, params.feature_radius())
        .map_err(|e| e.to_string())?;
    let b =
        compute_fpfh(&moved, &moved_normals, params.feature_radius()).map_err(|e| e.to_string())?;
    let fpfh_worst = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    ensure(fpfh_worst <= 1e-3, || {
        format!("FPFH bin moved by {fpfh_worst:e}")
    })?;

    Ok(format!(
        "projection {proj_err:.1e}, rigidity {rigid_err:.1e}, normals {plane_worst:.2}/{sphere_worst:.2} deg, \
         tsdf clamped, Euler {chi}, FPFH {fpfh_worst:.1e} over {} descriptors",
        a.len()
    ))
}

/// Every file under `root` except run manifests, keyed by relative path.
fn output_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable output directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.to_string_lossy().ends_with("manifest.json") {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, fs::read(&path).expect("readable output"));
            }
        }
    }
    out
}

/// Every subcommand once, writing under `root`; returns the eval report.
fn pipeline_run(root: &Path, threads: Option<&str>) -> Result<String, String> {
    let global: Vec<&str> = match threads {
        Some(n) => vec!["--threads", n],
        None => vec![],
    };
    let run = |args: &[&OsStr]| {
        let mut all: Vec<&OsStr> = global.iter().map(OsStr::new).collect();
        all.extend_from_slice(args);
        labelfuse(all)
    };
    let p = |name: &str| root.join(name);
    let (fx, seeds, masks) = (p("fx"), p("seeds"), p("masks"));
    let scene = scene_file("two-spheres-checkered.cfg");
    run(&[
        "synth".as_ref(),
        "--scene".as_ref(),
        scene.as_os_str(),
        "--frames".as_ref(),
        "24".as_ref(),
        "--out".as_ref(),
        fx.as_os_str(),
    ])?;
    fs::create_dir_all(&seeds).map_err(|e| e.to_string())?;
    fs::copy(
        fx.join("frame_0000.mask.png"),
        seeds.join("frame_0000.mask.png"),
    )
    .map_err(|e| e.to_string())?;
    run(&[
        "track".as_ref(),
        "--images".as_ref(),
        fx.as_os_str(),
        "--seeds".as_ref(),
        seeds.as_os_str(),
        "--out".as_ref(),
        masks.as_os_str(),
    ])?;
    let fused = p("fused.ply");
    run(&[
        "fuse-mvs".as_ref(),
        "--model".as_ref(),
        fx.as_os_str(),
        "--depth".as_ref(),
        fx.as_os_str(),
        "--masks".as_ref(),
        fx.as_os_str(),
        "--stride".as_ref(),
        "3".as_ref(),
        "--out".as_ref(),
        fused.as_os_str(),
    ])?;
    let config = p("recon.cfg");
    fs::write(&config, "fragment_size = 8\nvoxel_size = 0.01\n").map_err(|e| e.to_string())?;
    let prefix = p("recon/run");
    run(&[
        "recon-rgbd".as_ref(),
        "--frames".as_ref(),
        fx.as_os_str(),
        "--masks".as_ref(),
        fx.as_os_str(),
        "--config".as_ref(),
        config.as_os_str(),
        "--out".as_ref(),
        prefix.as_os_str(),
        "--extract".as_ref(),
        "mesh".as_ref(),
        "--extract".as_ref(),
        "cloud".as_ref(),
        "--extract".as_ref(),
        "voxel".as_ref(),
    ])?;
    let report = p("report.json");
    let stdout = run(&[
        "eval".as_ref(),
        "--pred".as_ref(),
        fused.as_os_str(),
        "--scene".as_ref(),
        scene.as_os_str(),
        "--out".as_ref(),
        report.as_os_str(),
    ])?;
    let exported = p("mesh_ascii.ply");
    run(&[
        "export".as_ref(),
        "--input".as_ref(),
        p("recon/run_mesh.ply").as_os_str(),
        "--out".as_ref(),
        exported.as_os_str(),
        "--format".as_ref(),
        "ascii".as_ref(),
        "--keep-labeled".as_ref(),
    ])?;
    Ok(stdout)
}

fn determinism() -> Outcome {
    let (a, b) = (tempdir(), tempdir());
    let report_a = pipeline_run(a.path(), Some("1"))?;
    let report_b = pipeline_run(b.path(), None)?;
    ensure(report_a == report_b, || "eval output differs".into())?;
    let (fa, fb) = (output_files(a.path()), output_files(b.path()));
    ensure(fa.keys().eq(fb.keys()), || {
        "the two runs wrote different file sets".into()
    })?;
    let differing: Vec<_> = fa
        .iter()
        .filter(|(k, v)| fb[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), || {
        format!("{} files differ, e.g. {}", differing.len(), differing[0])
    })?;
    let bytes: usize = fa.values().map(Vec::len).sum();
    Ok(format!(
        "all six subcommands, one thread vs all cores: {} files ({:.1} MB) byte-identical",
        fa.len(),
        bytes as f64 / 1e6
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("end-to-end MVS path", mvs_end_to_end),
        ("end-to-end RGBD path", rgbd_end_to_end),
        ("RGBD/MASKD structural identity", structural_identity),
        ("channel alignment", channel_alignment),
        ("noise suppression", noise_suppression),
        ("registration suite", registration_suite),
        ("tracker suite", tracker_suite),
        ("parser suite", parser_suite),
        ("numerical property suite", numerical_suite),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
