//! Scene description files.
//!
//! ```text
//! # primitives: geometry, color, label, optional checkerboard cell size
//! sphere -0.35 0 0  0.4           200 60 50  1
//! box    0.05 0.6 -0.1  0.15 0.15 0.15  60 170 80  3  checker 0.05
//! plane  0 0 -0.5  0 0 1          90 90 90   4
//! camera 320 240  300 300 159.5 119.5     # width height fx fy cx cy
//! orbit  0 0 0  2.2  25                   # center, radius, elevation (deg)
//! depth_noise 0.0                         # Gaussian sigma in meters
//! ```

use nalgebra::Vector3;

use super::render::{orbit_trajectory, Trajectory};
use super::scene::{Primitive, Scene, Shape};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSpec {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub elevation_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub scene: Scene,
    pub intrinsics: Intrinsics,
    pub orbit: OrbitSpec,
    pub depth_noise: f64,
}

pub const DEFAULT_ORBIT_RADIUS: f64 = 2.2;
pub const DEFAULT_ELEVATION_DEG: f64 = 25.0;

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240).expect("valid")
}

impl SceneConfig {
    /// Default camera and an orbit around the center of the scene bounds.
    pub fn for_scene(scene: Scene) -> Self {
        let center = scene
            .bounds()
            .map_or(Vector3::zeros(), |(lo, hi)| (lo + hi) / 2.0);
        SceneConfig {
            scene,
            intrinsics: default_intrinsics(),
            orbit: OrbitSpec {
                center,
                radius: DEFAULT_ORBIT_RADIUS,
                elevation_deg: DEFAULT_ELEVATION_DEG,
            },
            depth_noise: 0.0,
        }
    }

    pub fn trajectory(&self, frames: usize) -> Result<Trajectory> {
        orbit_trajectory(
            self.orbit.center,
            self.orbit.radius,
            frames,
            self.orbit.elevation_deg.to_radians(),
        )
    }

    pub fn parse(text: &str) -> Result<SceneConfig> {
        let mut prims = Vec::new();
        let mut camera = None;
        let mut orbit = None;
        let mut noise = 0.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let t: Vec<&str> = content.split_whitespace().collect();
            let nums = |from: usize, n: usize| -> Result<Vec<f64>> {
                (from..from + n)
                    .map(|j| {
                        let tok = t.get(j).ok_or_else(|| {
                            Error::parse(line, format!("`{}` needs more values", t[0]))
                        })?;
                        tok.parse::<f64>()
                            .map_err(|_| Error::parse(line, format!("bad number `{tok}`")))
                    })
                    .collect()
            };
            let geometry_len = match t[0] {
                "sphere" => Some(4),
                "box" | "plane" => Some(6),
                _ => None,
            };
            if let Some(g) = geometry_len {
                let v = nums(1, g)?;
                let shape = match t[0] {
                    "sphere" => Shape::Sphere {
                        center: Vector3::new(v[0], v[1], v[2]),
                        radius: v[3],
                    },
                    "box" => Shape::Box {
                        center: Vector3::new(v[0], v[1], v[2]),
                        half_extents: Vector3::new(v[3], v[4], v[5]),
                    },
                    _ => {
                        let n = Vector3::new(v[3], v[4], v[5]);
                        if n.norm() == 0.0 {
                            return Err(Error::parse(line, "plane normal is zero"));
                        }
                        Shape::Plane {
                            point: Vector3::new(v[0], v[1], v[2]),
                            normal: n.normalize(),
                        }
                    }
                };
                let mut rest = t[1 + g..].iter();
                let mut int = |what: &str| -> Result<u16> {
                    let tok = rest
                        .next()
                        .ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
                    tok.parse()
                        .map_err(|_| Error::parse(line, format!("bad {what} `{tok}`")))
                };
                let color = [int("red")?, int("green")?, int("blue")?];
                if color.iter().any(|c| *c > 255) {
                    return Err(Error::parse(line, "color channels must be 0-255"));
                }
                let label = int("label")?;
                let mut prim = Primitive::new(shape, color.map(|c| c as u8), label);
                match (rest.next(), rest.next(), rest.next()) {
                    (None, _, _) => {}
                    (Some(&"checker"), Some(cell), None) => {
                        prim = prim.with_checker(cell.parse().map_err(|_| {
                            Error::parse(line, format!("bad checker size `{cell}`"))
                        })?);
                    }
                    _ => return Err(Error::parse(line, "unexpected trailing values")),
                }
                prims.push((line, prim));
                continue;
            }
            match t[0] {
                "camera" => {
                    let v = nums(1, 6)?;
                    if v[0].fract() != 0.0 || v[1].fract() != 0.0 || v[0] < 1.0 || v[1] < 1.0 {
                        return Err(Error::parse(line, "camera size must be positive integers"));
                    }
                    camera = Some(
                        Intrinsics::new(v[2], v[3], v[4], v[5], v[0] as usize, v[1] as usize)
                            .map_err(|e| Error::parse(line, e.to_string()))?,
                    );
                }
                "orbit" => {
                    let v = nums(1, 5)?;
                    orbit = Some(OrbitSpec {
                        center: Vector3::new(v[0], v[1], v[2]),
                        radius: v[3],
                        elevation_deg: v[4],
                    });
                }
                "depth_noise" => noise = nums(1, 1)?[0],
                other => return Err(Error::parse(line, format!("unknown directive `{other}`"))),
            }
            if t.len()
                > 1 + match t[0] {
                    "camera" => 6,
                    "orbit" => 5,
                    _ => 1,
                }
            {
                return Err(Error::parse(line, "unexpected trailing values"));
            }
        }
        let lines: Vec<usize> = prims.iter().map(|(l, _)| *l).collect();
        let scene = Scene::new(prims.into_iter().map(|(_, p)| p).collect())
            .map_err(|e| Error::parse(lines.last().copied().unwrap_or(0), e.to_string()))?;
        if !(noise >= 0.0) {
            return Err(Error::invalid("depth_noise must be non-negative"));
        }
        let mut cfg = SceneConfig::for_scene(scene);
        if let Some(k) = camera {
            cfg.intrinsics = k;
        }
        if let Some(o) = orbit {
            if !(o.radius > 0.0) {
                return Err(Error::invalid("orbit radius must be positive"));
            }
            cfg.orbit = o;
        }
        cfg.depth_noise = noise;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<SceneConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SceneConfig::parse(&text)
    }
}
