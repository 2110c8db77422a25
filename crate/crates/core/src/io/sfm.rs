//! Sparse SfM model in the common three-file text layout
//! (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! Intrinsics are taken verbatim: the principal point is interpreted in the
//! integer-pixel-center convention used everywhere else in this crate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, LabeledPointCloud, RigidPose};

/// Quaternions further than this from unit norm are rejected.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SfmView {
    /// Extrinsics, world→camera.
    pub pose: RigidPose,
    pub camera_id: u32,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SfmModel {
    pub cameras: BTreeMap<u32, Intrinsics>,
    pub views: BTreeMap<u32, SfmView>,
    pub sparse_points: LabeledPointCloud,
}

impl SfmModel {
    pub fn validate(&self) -> Result<()> {
        for (id, view) in &self.views {
            if !self.cameras.contains_key(&view.camera_id) {
                return Err(Error::invalid(format!(
                    "image {id} references missing camera {}",
                    view.camera_id
                )));
            }
        }
        Ok(())
    }

    pub fn intrinsics_of(&self, view: &SfmView) -> Result<&Intrinsics> {
        self.cameras
            .get(&view.camera_id)
            .ok_or_else(|| Error::invalid(format!("missing camera {}", view.camera_id)))
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(tokens: &[&str], i: usize, line: usize, what: &str) -> Result<T> {
    let tok = tokens
        .get(i)
        .ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("cannot parse {what} from `{tok}`")))
}

pub fn parse_sfm_cameras(text: &str) -> Result<BTreeMap<u32, Intrinsics>> {
    let mut cameras = BTreeMap::new();
    for (line, content) in content_lines(text) {
        let t: Vec<&str> = content.split_whitespace().collect();
        let id: u32 = field(&t, 0, line, "camera id")?;
        let model = *t
            .get(1)
            .ok_or_else(|| Error::parse(line, "missing camera model"))?;
        let width: usize = field(&t, 2, line, "width")?;
        let height: usize = field(&t, 3, line, "height")?;
        let params: Vec<f64> = t[4..]
            .iter()
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::parse(line, format!("cannot parse parameter `{p}`")))
            })
            .collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match model {
            "PINHOLE" if params.len() == 4 => (params[0], params[1], params[2], params[3]),
            "SIMPLE_PINHOLE" if params.len() == 3 => (params[0], params[0], params[1], params[2]),
            "PINHOLE" | "SIMPLE_PINHOLE" => {
                return Err(Error::parse(
                    line,
                    format!("{model} does not take {} parameters", params.len()),
                ))
            }
            other => return Err(Error::UnsupportedModel(other.to_string())),
        };
        let k = Intrinsics::new(fx, fy, cx, cy, width, height)
            .map_err(|e| Error::parse(line, e.to_string()))?;
        if cameras.insert(id, k).is_some() {
            return Err(Error::parse(line, format!("duplicate camera id {id}")));
        }
    }
    Ok(cameras)
}

pub fn parse_sfm_images(text: &str) -> Result<BTreeMap<u32, SfmView>> {
    let mut views = BTreeMap::new();
    // every image takes two lines; the second (2D observations) may be blank
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'));
    while let Some((line, content)) = lines.next() {
        if content.is_empty() {
            continue;
        }
        let t: Vec<&str> = content.split_whitespace().collect();
        let id: u32 = field(&t, 0, line, "image id")?;
        let mut q = [0.0; 4];
        for (j, qj) in q.iter_mut().enumerate() {
            *qj = field(&t, 1 + j, line, "quaternion component")?;
        }
        let mut tr = [0.0; 3];
        for (j, tj) in tr.iter_mut().enumerate() {
            *tj = field(&t, 5 + j, line, "translation component")?;
        }
        let camera_id: u32 = field(&t, 8, line, "camera id")?;
        if t.len() < 10 {
            return Err(Error::parse(line, "missing image name"));
        }
        let name = t[9..].join(" ");
        let pose = RigidPose::from_quaternion(q, Vector3::from(tr), QUATERNION_NORM_TOL)
            .map_err(|e| Error::parse(line, e.to_string()))?;
        if lines.next().is_none() {
            return Err(Error::parse(
                line,
                format!("image {id} has no observation line"),
            ));
        }
        if views
            .insert(
                id,
                SfmView {
                    pose,
                    camera_id,
                    name,
                },
            )
            .is_some()
        {
            return Err(Error::parse(line, format!("duplicate image id {id}")));
        }
    }
    Ok(views)
}

pub fn parse_sfm_points3d(text: &str) -> Result<LabeledPointCloud> {
    let mut cloud = LabeledPointCloud::with_colors();
    for (line, content) in content_lines(text) {
        let t: Vec<&str> = content.split_whitespace().collect();
        let _id: u64 = field(&t, 0, line, "point id")?;
        let x: f64 = field(&t, 1, line, "x")?;
        let y: f64 = field(&t, 2, line, "y")?;
        let z: f64 = field(&t, 3, line, "z")?;
        let r: u8 = field(&t, 4, line, "red")?;
        let g: u8 = field(&t, 5, line, "green")?;
        let b: u8 = field(&t, 6, line, "blue")?;
        let _err: f64 = field(&t, 7, line, "reprojection error")?;
        if !(t.len() - 8).is_multiple_of(2) {
            return Err(Error::parse(
                line,
                "track must hold (image id, point2D index) pairs",
            ));
        }
        cloud.push(Vector3::new(x, y, z), Some([r, g, b]), None, 0);
    }
    Ok(cloud)
}

pub fn write_sfm_cameras(cameras: &BTreeMap<u32, Intrinsics>) -> String {
    let mut s = String::from("# Camera list with one line of data per camera:\n");
    s.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for (id, k) in cameras {
        let _ = writeln!(
            s,
            "{id} PINHOLE {} {} {} {} {} {}",
            k.width, k.height, k.fx, k.fy, k.cx, k.cy
        );
    }
    s
}

pub fn write_sfm_images(views: &BTreeMap<u32, SfmView>) -> String {
    let mut s = String::from("# Image list with two lines of data per image:\n");
    s.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    s.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for (id, v) in views {
        let q = v.pose.quaternion();
        let t = v.pose.translation();
        let _ = writeln!(
            s,
            "{id} {} {} {} {} {} {} {} {} {}\n",
            q[0], q[1], q[2], q[3], t.x, t.y, t.z, v.camera_id, v.name
        );
    }
    s
}

pub fn write_sfm_points3d(cloud: &LabeledPointCloud) -> String {
    let mut s = String::from("# 3D point list with one line of data per point:\n");
    s.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n");
    for (i, p) in cloud.positions.iter().enumerate() {
        let c = cloud.color(i).unwrap_or([0, 0, 0]);
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} 0",
            i + 1,
            p.x,
            p.y,
            p.z,
            c[0],
            c[1],
            c[2]
        );
    }
    s
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Loads `cameras.txt`, `images.txt` and (if present) `points3D.txt`.
pub fn read_sfm_model(dir: &Path) -> Result<SfmModel> {
    let cams = dir.join("cameras.txt");
    let imgs = dir.join("images.txt");
    let pts = dir.join("points3D.txt");
    let cameras = with_file(&cams, parse_sfm_cameras(&read_text(&cams)?))?;
    let views = with_file(&imgs, parse_sfm_images(&read_text(&imgs)?))?;
    let sparse_points = if pts.exists() {
        with_file(&pts, parse_sfm_points3d(&read_text(&pts)?))?
    } else {
        LabeledPointCloud::with_colors()
    };
    let model = SfmModel {
        cameras,
        views,
        sparse_points,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_sfm_model(dir: &Path, model: &SfmModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [
        ("cameras.txt", write_sfm_cameras(&model.cameras)),
        ("images.txt", write_sfm_images(&model.views)),
        ("points3D.txt", write_sfm_points3d(&model.sparse_points)),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pinhole_and_simple_pinhole() {
        let cams = parse_sfm_cameras(
            "# comment\n1 PINHOLE 640 480 500 500 320 240\n\n2 SIMPLE_PINHOLE 640 480 500 320 240\n",
        )
        .unwrap();
        assert_eq!(
            cams[&1],
            Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
        );
        assert_eq!(cams[&2].fx, 500.0);
        assert_eq!(cams[&2].fy, 500.0);
    }

    #[test]
    fn unsupported_model_is_named() {
        let err = parse_sfm_cameras("1 RADIAL 640 480 500 320 240 0.1 0.0\n").unwrap_err();
        match err {
            Error::UnsupportedModel(m) => assert_eq!(m, "RADIAL"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err =
            parse_sfm_cameras("# header\n1 PINHOLE 640 480 500 500 320 240\n2 PINHOLE 640 x\n")
                .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_sfm_points3d("7 1 2 3 255 0 0 0.5\n8 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn identity_image_and_missing_second_line() {
        let views = parse_sfm_images("1 1 0 0 0 0 0 0 1 a.png\n\n").unwrap();
        assert_eq!(views[&1].pose, RigidPose::identity());
        assert_eq!(views[&1].name, "a.png");
        let err = parse_sfm_images("# x\n1 1 0 0 0 0 0 0 1 a.png").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_sfm_images("1 1.1 0 0 0 0 0 0 1 a.png\n\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn single_point_and_empty_file() {
        assert!(parse_sfm_points3d("# only comments\n# here\n")
            .unwrap()
            .is_empty());
        let cloud = parse_sfm_points3d("7 1 2 3 255 0 0 0.5\n").unwrap();
        assert_eq!(cloud.positions, vec![Vector3::new(1.0, 2.0, 3.0)]);
        assert_eq!(cloud.colors.unwrap(), vec![[255, 0, 0]]);
        assert_eq!(cloud.labels, vec![0]);
    }

    #[test]
    fn images_round_trip_through_writer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut views = BTreeMap::new();
        for id in 0..10u32 {
            let mut q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.iter_mut().for_each(|v| *v /= n);
            let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random(), rng.random());
            let pose = RigidPose::from_quaternion(q, t, 1e-9).unwrap();
            views.insert(
                id,
                SfmView {
                    pose,
                    camera_id: 1,
                    name: format!("frame_{id:04}.png"),
                },
            );
        }
        let parsed = parse_sfm_images(&write_sfm_images(&views)).unwrap();
        for (id, v) in &views {
            let p = &parsed[id];
            let (ang, dist) = v.pose.difference(&p.pose);
            assert!(dist < 1e-9 && ang < 1e-9, "{ang} {dist}");
            let dr = (v.pose.rotation() - p.pose.rotation()).abs().max();
            assert!(dr < 1e-9);
            assert_eq!(v.name, p.name);
        }
    }

    #[test]
    fn points_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cloud = LabeledPointCloud::with_colors();
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-9.0..9.0),
                rng.random(),
                rng.random::<f64>() * 1e-3,
            );
            cloud.push(p, Some([rng.random(), rng.random(), rng.random()]), None, 0);
        }
        assert_eq!(
            parse_sfm_points3d(&write_sfm_points3d(&cloud)).unwrap(),
            cloud
        );
    }

    #[test]
    fn model_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = SfmModel::default();
        model.cameras.insert(
            3,
            Intrinsics::new(300.0, 310.0, 159.5, 119.5, 320, 240).unwrap(),
        );
        model.views.insert(
            1,
            SfmView {
                pose: RigidPose::from_axis_angle(
                    Vector3::new(0.1, 0.2, 0.3),
                    Vector3::new(1.0, 2.0, 3.0),
                ),
                camera_id: 3,
                name: "x.png".into(),
            },
        );
        model.sparse_points = LabeledPointCloud::with_colors();
        write_sfm_model(dir.path(), &model).unwrap();
        let back = read_sfm_model(dir.path()).unwrap();
        assert_eq!(back.cameras, model.cameras);
        assert!(back.views[&1].pose.difference(&model.views[&1].pose).1 < 1e-12);

        model.views.get_mut(&1).unwrap().camera_id = 9;
        write_sfm_model(dir.path(), &model).unwrap();
        assert!(read_sfm_model(dir.path()).is_err());
    }
}
