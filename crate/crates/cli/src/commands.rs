//! One function per subcommand: read inputs, run the owning module, write
//! outputs and the run manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use labelfuse::geometry::{Intrinsics, LabelImage, LabeledPointCloud, RgbdFrame, RigidPose};
use labelfuse::io::{
    encode_ply, parse_sfm_cameras, parse_sfm_images, read_color_image, read_depth_image,
    read_label_image, read_labeled_ply, read_normal_image, read_sfm_model, write_color_image,
    write_depth_image, write_label_image, write_labeled_ply, write_normal_image, write_sfm_model,
    RunConfig, SfmModel, SfmView,
};
use labelfuse::mvs::{
    filter_labeled_cloud, fuse_views, select_reconstruction_frames, FilterPolicy, FusionView,
};
use labelfuse::oracle::{add_depth_noise, evaluate, render_frame, render_normals, SceneConfig};
use labelfuse::rgbd::{make_fragments, register_fragments, OdometryParams};
use labelfuse::tracker::track_sequence;
use labelfuse::tsdf::TsdfVolume;
use labelfuse::Error;

use crate::failure::{CliResult, During, Failure};
use crate::layout::{
    color_path, color_stems, depth_path, frame_stem, mask_path, normal_path, stem_of,
};
use crate::manifest::RunManifest;
use crate::{EvalArgs, ExportArgs, Extract, FuseMvsArgs, ReconArgs, SynthArgs, TrackArgs};

const IO: &str = "io-ingest";

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a text input and records its checksum.
fn read_text(path: &Path, m: &mut RunManifest) -> CliResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| io_error(path, e))
        .during(IO, format!("read {}", path.display()))?;
    m.input_bytes(path, &bytes);
    String::from_utf8(bytes)
        .map_err(|_| Error::InvalidInput(format!("{} is not UTF-8 text", path.display())))
        .during(IO, format!("read {}", path.display()))
}

fn checksum(path: &Path, m: &mut RunManifest) -> CliResult<()> {
    m.input(path).during(IO, format!("read {}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| io_error(dir, e))
        .during("cli", format!("create {}", dir.display()))
}

fn write_manifest(m: RunManifest, path: &Path) -> CliResult<()> {
    m.write(path)
        .during("cli", format!("write manifest {}", path.display()))
}

/// `path` with `suffix` appended to its final component.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_run_config(path: Option<&Path>, m: &mut RunManifest) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = read_text(p, m)?;
            RunConfig::parse(&text).during(IO, format!("parse config {}", p.display()))
        }
    }
}

fn load_scene(path: &Path, m: &mut RunManifest) -> CliResult<SceneConfig> {
    let text = read_text(path, m)?;
    SceneConfig::parse(&text).during("scene-oracle", format!("parse scene {}", path.display()))
}

pub fn synth(a: &SynthArgs, seed: Option<u64>) -> CliResult<()> {
    let mut m = RunManifest::new("synth");
    m.stage("load scene");
    let cfg = load_scene(&a.scene, &mut m)?;
    if a.frames == 0 {
        return Err(Error::InvalidInput("at least one frame is needed".into()))
            .during("scene-oracle", "orbit trajectory");
    }
    let seed = seed.unwrap_or(0);
    let traj = cfg
        .trajectory(a.frames)
        .during("scene-oracle", "orbit trajectory")?;
    create_dir(&a.out)?;
    m.stage("render");
    let k = cfg.intrinsics;
    let mut views = BTreeMap::new();
    for (i, pose) in traj.poses.iter().enumerate() {
        let stem = frame_stem(i);
        let (color, mut depth, labels) = render_frame(&cfg.scene, &k, pose);
        if cfg.depth_noise > 0.0 {
            add_depth_noise(&mut depth, cfg.depth_noise, seed.wrapping_add(i as u64))
                .during("scene-oracle", format!("depth noise for {stem}"))?;
        }
        let normals = render_normals(&cfg.scene, &k, pose);
        let op = || format!("write {stem}");
        write_color_image(&color, &color_path(&a.out, &stem)).during(IO, op())?;
        write_depth_image(&depth, &depth_path(&a.out, &stem)).during(IO, op())?;
        write_label_image(&labels, &mask_path(&a.out, &stem)).during(IO, op())?;
        write_normal_image(&normals, &normal_path(&a.out, &stem)).during(IO, op())?;
        views.insert(
            i as u32 + 1,
            SfmView {
                pose: pose.inverse(),
                camera_id: 1,
                name: format!("{stem}.png"),
            },
        );
    }
    let model = SfmModel {
        cameras: BTreeMap::from([(1, k)]),
        views,
        sparse_points: LabeledPointCloud::with_colors(),
    };
    write_sfm_model(&a.out, &model).during(IO, "write SfM model")?;
    log::info!("synth: {} frames in {}", a.frames, a.out.display());
    m.config = json!({ "args": a, "depth_noise": cfg.depth_noise });
    m.seed = Some(seed);
    m.output(&a.out);
    write_manifest(m, &a.out.join("manifest.json"))
}

pub fn track(a: &TrackArgs) -> CliResult<()> {
    let mut m = RunManifest::new("track");
    m.stage("load");
    let cfg = load_run_config(a.config.as_deref(), &mut m)?;
    let stems = color_stems(&a.images).during(IO, "list images")?;
    let mut images = Vec::with_capacity(stems.len());
    let mut seeds = BTreeMap::new();
    for (i, stem) in stems.iter().enumerate() {
        let path = color_path(&a.images, stem);
        checksum(&path, &mut m)?;
        images.push(read_color_image(&path).during(IO, format!("read image {stem}"))?);
        let seed = mask_path(&a.seeds, stem);
        if seed.exists() {
            checksum(&seed, &mut m)?;
            seeds.insert(
                i,
                read_label_image(&seed).during(IO, format!("read seed {stem}"))?,
            );
        }
    }
    log::info!("track: {} frames, seeds at {:?}", stems.len(), seeds.keys());
    m.stage("propagate");
    let masks = track_sequence(&images, &seeds, &cfg.tracker_config())
        .during("mask-tracker", "track sequence")?;
    m.stage("write");
    create_dir(&a.out)?;
    for (stem, mask) in stems.iter().zip(&masks) {
        write_label_image(mask, &mask_path(&a.out, stem))
            .during(IO, format!("write mask {stem}"))?;
    }
    m.config = json!({ "args": a, "run": cfg });
    m.output(&a.out);
    write_manifest(m, &a.out.join("manifest.json"))
}

pub fn fuse_mvs(a: &FuseMvsArgs) -> CliResult<()> {
    let mut m = RunManifest::new("fuse-mvs");
    m.stage("load");
    let mut cfg = load_run_config(a.config.as_deref(), &mut m)?;
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    cfg.keep_unlabeled |= a.keep_unlabeled;
    cfg.validate().during("cli", "validate config")?;
    let model = read_sfm_model(&a.model).during(IO, "read SfM model")?;
    checksum(&a.model.join("cameras.txt"), &mut m)?;
    checksum(&a.model.join("images.txt"), &mut m)?;
    let views: Vec<&SfmView> = model.views.values().collect();
    let selected = select_reconstruction_frames(views.len(), cfg.stride)
        .during("mvs-fusion", "select reconstruction frames")?;
    let images = a.images.as_deref().unwrap_or(&a.model);
    let mut fusion = Vec::with_capacity(selected.len());
    for &i in &selected {
        let view = views[i];
        let stem = stem_of(&view.name);
        let k = *model
            .intrinsics_of(view)
            .during(IO, format!("camera of {stem}"))?;
        let mut paths = vec![
            depth_path(&a.depth, &stem),
            color_path(images, &stem),
            mask_path(&a.masks, &stem),
        ];
        if let Some(dir) = &a.normals {
            paths.push(normal_path(dir, &stem));
        }
        for p in &paths {
            checksum(p, &mut m)?;
        }
        let op = || format!("read view {stem}");
        let depth = read_depth_image(&paths[0]).during(IO, op())?;
        let color = read_color_image(&paths[1]).during(IO, op())?;
        let labels = read_label_image(&paths[2]).during(IO, op())?;
        let normal = match paths.get(3) {
            Some(p) => Some(read_normal_image(p).during(IO, op())?),
            None => None,
        };
        fusion.push(
            FusionView::new(depth, normal, color, labels, view.pose, k)
                .during("mvs-fusion", format!("view {stem}"))?,
        );
    }
    m.stage("fuse");
    let cloud = fuse_views(&fusion, &cfg.fusion_params()).during("mvs-fusion", "fuse views")?;
    let kept = filter_labeled_cloud(&cloud, cfg.filter_policy());
    log::info!(
        "fuse-mvs: {} views, {} fused points, {} kept",
        fusion.len(),
        cloud.len(),
        kept.len()
    );
    m.stage("write");
    write_labeled_ply(&a.out, &kept, None, a.format.into()).during(IO, "write PLY")?;
    m.config = json!({ "args": a, "run": cfg });
    m.output(&a.out);
    write_manifest(m, &suffixed(&a.out, ".manifest.json"))
}

/// One RGBD frame to load: its stem, camera and, when the frames come with
/// an SfM model, its camera→world pose.
struct FrameEntry {
    stem: String,
    intrinsics: Intrinsics,
    camera_to_world: Option<RigidPose>,
}

fn frame_entries(dir: &Path, m: &mut RunManifest) -> CliResult<Vec<FrameEntry>> {
    let cameras_path = dir.join("cameras.txt");
    let text = read_text(&cameras_path, m)?;
    let cameras =
        parse_sfm_cameras(&text).during(IO, format!("parse {}", cameras_path.display()))?;
    let images_path = dir.join("images.txt");
    if !images_path.exists() {
        let [(_, k)] =
            <[_; 1]>::try_from(cameras.into_iter().collect::<Vec<_>>()).map_err(|_| {
                Failure::invalid(
                    IO,
                    "list frames",
                    "without images.txt, cameras.txt must hold exactly one camera",
                )
            })?;
        let stems = color_stems(dir).during(IO, "list frames")?;
        return Ok(stems
            .into_iter()
            .map(|stem| FrameEntry {
                stem,
                intrinsics: k,
                camera_to_world: None,
            })
            .collect());
    }
    let text = read_text(&images_path, m)?;
    let views = parse_sfm_images(&text).during(IO, format!("parse {}", images_path.display()))?;
    views
        .values()
        .map(|v| {
            let k = cameras.get(&v.camera_id).copied().ok_or_else(|| {
                Failure::invalid(
                    IO,
                    "list frames",
                    format!("{} uses a missing camera", v.name),
                )
            })?;
            Ok(FrameEntry {
                stem: stem_of(&v.name),
                intrinsics: k,
                camera_to_world: Some(v.pose.inverse()),
            })
        })
        .collect()
}

fn write_poses(path: &Path, poses: &[RigidPose]) -> CliResult<()> {
    let mut s = String::from("# FRAGMENT_ID QW QX QY QZ TX TY TZ (fragment frame to world)\n");
    for (id, p) in poses.iter().enumerate() {
        let q = p.quaternion();
        let t = p.translation();
        let _ = writeln!(
            s,
            "{id} {} {} {} {} {} {} {}",
            q[0], q[1], q[2], q[3], t.x, t.y, t.z
        );
    }
    fs::write(path, s)
        .map_err(|e| io_error(path, e))
        .during(IO, "write poses")
}

pub fn recon_rgbd(a: &ReconArgs, seed: Option<u64>) -> CliResult<()> {
    let mut m = RunManifest::new("recon-rgbd");
    m.stage("load");
    let mut cfg = load_run_config(Some(&a.config), &mut m)?;
    if let Some(v) = a.voxel_size {
        cfg.voxel_size = v;
        cfg.truncation = 4.0 * v;
    }
    if let Some(t) = a.truncation {
        cfg.truncation = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().during("cli", "validate config")?;
    let entries = frame_entries(&a.frames, &mut m)?;
    let selected = select_reconstruction_frames(entries.len(), cfg.stride)
        .during("rgbd-pipeline", "select reconstruction frames")?;
    let mut paths = Vec::new();
    for &i in &selected {
        let stem = &entries[i].stem;
        paths.push([
            color_path(&a.frames, stem),
            depth_path(&a.frames, stem),
            mask_path(&a.masks, stem),
        ]);
    }
    for p in paths.iter().flatten() {
        checksum(p, &mut m)?;
    }
    let loaded: Vec<(RgbdFrame, LabelImage)> = selected
        .par_iter()
        .zip(&paths)
        .map(|(&i, [c, d, l])| {
            let e = &entries[i];
            let op = || format!("read frame {}", e.stem);
            let color = read_color_image(c).during(IO, op())?;
            let depth = read_depth_image(d).during(IO, op())?;
            let labels = read_label_image(l).during(IO, op())?;
            let frame = RgbdFrame::new(color, depth, e.intrinsics).during(IO, op())?;
            Ok((frame, labels))
        })
        .collect::<CliResult<_>>()?;
    let (frames, labels): (Vec<RgbdFrame>, Vec<LabelImage>) = loaded.into_iter().unzip();
    log::info!("recon-rgbd: {} frames", frames.len());

    m.stage("fragments");
    let fragments = make_fragments(
        &frames,
        &labels,
        cfg.fragment_size,
        &OdometryParams::default(),
    )
    .during("rgbd-pipeline", "make fragments")?;
    m.stage("registration");
    let relative = register_fragments(&fragments, cfg.registration, &cfg.registration_params())
        .during("rgbd-pipeline", "register fragments")?;
    // the pipeline's world is the first camera; the SfM model, if any, fixes
    // where that camera sits
    let anchor = entries[selected[0]]
        .camera_to_world
        .unwrap_or_else(RigidPose::identity);
    let poses: Vec<RigidPose> = relative.iter().map(|p| anchor.compose(p)).collect();

    m.stage("integration");
    let mut volume = TsdfVolume::new(cfg.voxel_size, cfg.truncation, cfg.block_edge)
        .during("tsdf-volume", "create volume")?;
    volume
        .integrate_fragments(&frames, &labels, &poses, &fragments)
        .during("tsdf-volume", "integrate fragments")?;

    m.stage("extraction");
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let poses_path = suffixed(&a.out, "_poses.txt");
    write_poses(&poses_path, &poses)?;
    m.output(&poses_path);
    let mut kinds = a.extract.clone();
    kinds.dedup();
    for kind in kinds {
        let (name, cloud, faces) = match kind {
            Extract::Cloud => ("cloud", volume.extract_point_cloud(), None),
            Extract::Mesh => {
                let mesh = volume.extract_mesh();
                ("mesh", mesh.vertex_cloud(), Some(mesh.triangles))
            }
            Extract::Voxel => {
                let band = volume.voxel_size() / volume.truncation();
                ("voxel", volume.extract_voxel_grid(band), None)
            }
        };
        let path = suffixed(&a.out, &format!("_{name}.ply"));
        log::info!("recon-rgbd: {name} with {} vertices", cloud.len());
        write_labeled_ply(&path, &cloud, faces.as_deref(), a.format.into())
            .during(IO, format!("write {name}"))?;
        m.output(&path);
    }
    m.config = json!({ "args": a, "run": cfg });
    m.seed = Some(cfg.seed);
    write_manifest(m, &suffixed(&a.out, "_manifest.json"))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut m = RunManifest::new("eval");
    m.stage("load");
    let scene = load_scene(&a.scene, &mut m)?;
    checksum(&a.pred, &mut m)?;
    let pred = read_labeled_ply(&a.pred).during(IO, "read prediction")?;
    m.stage("evaluate");
    let report = evaluate(&pred.cloud, &scene.scene).during("scene-oracle", "evaluate")?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    print!("{text}");
    if let Some(out) = &a.out {
        fs::write(out, &text)
            .map_err(|e| io_error(out, e))
            .during(IO, "write report")?;
        m.config = json!({ "args": a });
        m.output(out);
        write_manifest(m, &suffixed(out, ".manifest.json"))?;
    }
    Ok(())
}

/// Keeps vertices with a nonzero label and the faces among them.
fn keep_labeled(
    cloud: &LabeledPointCloud,
    faces: &[[u32; 3]],
) -> (LabeledPointCloud, Vec<[u32; 3]>) {
    let kept = filter_labeled_cloud(cloud, FilterPolicy::KeepLabeled);
    let mut remap = vec![None; cloud.len()];
    let mut next = 0u32;
    for (i, &l) in cloud.labels.iter().enumerate() {
        if l != 0 {
            remap[i] = Some(next);
            next += 1;
        }
    }
    let faces = faces
        .iter()
        .filter_map(|f| {
            Some([
                remap[f[0] as usize]?,
                remap[f[1] as usize]?,
                remap[f[2] as usize]?,
            ])
        })
        .collect();
    (kept, faces)
}

pub fn export(a: &ExportArgs) -> CliResult<()> {
    let mut m = RunManifest::new("export");
    m.stage("load");
    checksum(&a.input, &mut m)?;
    let data = read_labeled_ply(&a.input).during(IO, "read PLY")?;
    let (cloud, faces) = if a.keep_labeled {
        keep_labeled(&data.cloud, &data.faces)
    } else {
        (data.cloud, data.faces)
    };
    m.stage("write");
    let faces = (!faces.is_empty()).then_some(faces.as_slice());
    let bytes = encode_ply(&cloud, faces, a.format.into()).during(IO, "encode PLY")?;
    fs::write(&a.out, bytes)
        .map_err(|e| io_error(&a.out, e))
        .during(IO, "write PLY")?;
    m.config = json!({ "args": a });
    m.output(&a.out);
    write_manifest(m, &suffixed(&a.out, ".manifest.json"))
}
