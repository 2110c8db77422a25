use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
    },
    /// Half-space boundary; the normal points to the outside.
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
    },
}

impl Shape {
    /// Exact signed distance, negative inside.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box {
                center,
                half_extents,
            } => {
                let q = (p - center).abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                outside + inside
            }
            Shape::Plane { point, normal } => normal.dot(&(p - point)),
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match *self {
            Shape::Sphere { center, .. } => (p - center).normalize(),
            Shape::Box {
                center,
                half_extents,
            } => {
                let q = (p - center).abs() - half_extents;
                let axis = (0..3).max_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap();
                let mut n = Vector3::zeros();
                n[axis] = (p[axis] - center[axis]).signum();
                n
            }
            Shape::Plane { normal, .. } => normal,
        }
    }

    /// Smallest positive ray parameter `t` with `origin + t·dir` on the surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = dir.dot(&oc);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|t| *t > 0.0)
            }
            Shape::Box {
                center,
                half_extents,
            } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    let lo = center[i] - half_extents[i];
                    let hi = center[i] + half_extents[i];
                    if dir[i] == 0.0 {
                        if origin[i] < lo || origin[i] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = ((lo - origin[i]) / dir[i], (hi - origin[i]) / dir[i]);
                    t_near = t_near.max(t0.min(t1));
                    t_far = t_far.min(t0.max(t1));
                }
                if t_near > t_far {
                    return None;
                }
                [t_near, t_far].into_iter().find(|t| *t > 0.0)
            }
            Shape::Plane { point, normal } => {
                let denom = normal.dot(dir);
                if denom == 0.0 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > 0.0).then_some(t)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Box { half_extents, .. } => half_extents.iter().all(|h| *h > 0.0),
            Shape::Plane { normal, .. } => (normal.norm() - 1.0).abs() < 1e-9,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate primitive {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub color: [u8; 3],
    pub label: u16,
    /// Checkerboard cell size in meters; alternate cells are darkened.
    pub checker: Option<f64>,
}

impl Primitive {
    pub fn new(shape: Shape, color: [u8; 3], label: u16) -> Self {
        Primitive {
            shape,
            color,
            label,
            checker: None,
        }
    }

    pub fn with_checker(mut self, cell: f64) -> Self {
        self.checker = Some(cell);
        self
    }

    /// Surface color at world point `p`.
    pub fn color_at(&self, p: &Vector3<f64>) -> [u8; 3] {
        match self.checker {
            Some(cell) => {
                let parity = p.iter().map(|c| (c / cell).floor() as i64).sum::<i64>();
                if parity.rem_euclid(2) == 0 {
                    self.color
                } else {
                    self.color.map(|c| c / 2)
                }
            }
            None => self.color,
        }
    }
}

/// Union of labeled analytic primitives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        for (i, p) in primitives.iter().enumerate() {
            p.shape.validate()?;
            if p.label == 0 {
                return Err(Error::invalid("primitive labels must be nonzero"));
            }
            if primitives[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::invalid(format!("label {} used twice", p.label)));
            }
            if p.checker.is_some_and(|c| !(c > 0.0)) {
                return Err(Error::invalid("checker cell size must be positive"));
            }
        }
        Ok(Scene { primitives })
    }

    /// Spheres of radius 0.4 m (label 1) and 0.25 m (label 2) side by side.
    pub fn two_spheres() -> Self {
        Scene::new(vec![
            Primitive::new(
                Shape::Sphere {
                    center: Vector3::new(-0.35, 0.0, 0.0),
                    radius: 0.4,
                },
                [200, 60, 50],
                1,
            ),
            Primitive::new(
                Shape::Sphere {
                    center: Vector3::new(0.4, 0.0, 0.0),
                    radius: 0.25,
                },
                [50, 90, 210],
                2,
            ),
        ])
        .expect("valid built-in scene")
    }

    /// [`Scene::two_spheres`] plus a cube (label 3), which removes the
    /// rotational symmetry about the sphere axis that geometric registration
    /// cannot resolve.
    pub fn two_spheres_and_box() -> Self {
        let mut prims = Scene::two_spheres().primitives;
        prims.push(Primitive::new(
            Shape::Box {
                center: Vector3::new(0.05, 0.6, -0.1),
                half_extents: Vector3::new(0.15, 0.15, 0.15),
            },
            [60, 170, 80],
            3,
        ));
        Scene::new(prims).expect("valid built-in scene")
    }

    /// `count` small spheres and boxes (5 to 15 cm) scattered through a 1 m
    /// cube, labels `1..=count`. Reproducible per seed. The many curvatures,
    /// edges and corners give local shape descriptors something to tell apart.
    pub fn scattered(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = (0..count)
            .map(|i| {
                let center = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
                let shape = if i % 2 == 0 {
                    Shape::Sphere {
                        center,
                        radius: rng.random_range(0.05..0.15),
                    }
                } else {
                    Shape::Box {
                        center,
                        half_extents: Vector3::from_fn(|_, _| rng.random_range(0.05..0.15)),
                    }
                };
                let color = [0; 3].map(|_| rng.random_range(40..=230u8));
                Primitive::new(shape, color, i as u16 + 1)
            })
            .collect();
        Scene::new(prims).expect("valid generated scene")
    }

    /// The same scene with every primitive checkered at `cell` meters, for
    /// fixtures that need photometric texture.
    pub fn checkered(mut self, cell: f64) -> Result<Self> {
        if !(cell > 0.0) {
            return Err(Error::invalid("checker cell size must be positive"));
        }
        for p in &mut self.primitives {
            p.checker = Some(cell);
        }
        Ok(self)
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn labels(&self) -> Vec<u16> {
        let mut l: Vec<u16> = self.primitives.iter().map(|p| p.label).collect();
        l.sort_unstable();
        l
    }

    /// Signed distance to the union and the label of the closest primitive.
    /// An empty scene is infinitely far away with label 0.
    pub fn sdf(&self, p: &Vector3<f64>) -> (f64, u16) {
        self.primitives
            .iter()
            .map(|prim| (prim.shape.sdf(p), prim.label))
            .fold(
                (f64::INFINITY, 0),
                |best, cur| if cur.0 < best.0 { cur } else { best },
            )
    }

    /// Nearest hit along a ray: `(t, primitive index)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, prim)| prim.shape.intersect(origin, dir).map(|t| (t, i)))
            .fold(None, |best: Option<(f64, usize)>, cur| match best {
                Some(b) if b.0 <= cur.0 => Some(b),
                _ => Some(cur),
            })
    }

    /// Axis-aligned bounds of all bounded primitives (planes are ignored).
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut any = false;
        for p in &self.primitives {
            let (c, h) = match p.shape {
                Shape::Sphere { center, radius } => (center, Vector3::repeat(radius)),
                Shape::Box {
                    center,
                    half_extents,
                } => (center, half_extents),
                Shape::Plane { .. } => continue,
            };
            lo = lo.inf(&(c - h));
            hi = hi.sup(&(c + h));
            any = true;
        }
        any.then_some((lo, hi))
    }

    /// Diagonal of [`Scene::bounds`], 0 for unbounded or empty scenes.
    pub fn diameter(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }
}
