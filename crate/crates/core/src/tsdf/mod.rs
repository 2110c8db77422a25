//! Sparse truncated signed distance volume with color and label channels.
//!
//! One shared tsdf/weight field serves both the color stream and the mask
//! stream, so integrating the same depth through either path yields the same
//! geometry bit for bit. Labels are accumulated as per-voxel count histograms
//! and read out by argmax.

mod extract;
mod mc;

use std::collections::{BTreeSet, HashMap};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, Intrinsics, LabelImage, RgbdFrame, RigidPose};
use crate::rgbd::Fragment;

pub use extract::{euler_characteristic, LabeledMesh};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.008;
pub const DEFAULT_BLOCK_EDGE: usize = 16;
pub const MAX_WEIGHT: f32 = 255.0;
pub const HISTOGRAM_SLOTS: usize = 8;

/// Label and depth images captured together.
#[derive(Clone, Debug)]
pub struct MaskdFrame {
    pub labels: LabelImage,
    pub depth: DepthImage,
}

impl MaskdFrame {
    pub fn new(labels: LabelImage, depth: DepthImage) -> Result<Self> {
        if !labels.same_dims(&depth) {
            return Err(Error::invalid("mask and depth rasters differ in size"));
        }
        Ok(MaskdFrame { labels, depth })
    }
}

/// Saturating label counts with a dedicated background slot.
///
/// When all slots are taken, a new label evicts the slot with the lowest
/// count (ties: the higher label id goes).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LabelHistogram {
    background: u16,
    slots: [(u16, u16); HISTOGRAM_SLOTS],
    len: u8,
}

impl LabelHistogram {
    pub fn add(&mut self, label: u16, count: u16) {
        if label == 0 {
            self.background = self.background.saturating_add(count);
            return;
        }
        let used = &mut self.slots[..self.len as usize];
        if let Some(slot) = used.iter_mut().find(|s| s.0 == label) {
            slot.1 = slot.1.saturating_add(count);
        } else if (self.len as usize) < HISTOGRAM_SLOTS {
            self.slots[self.len as usize] = (label, count);
            self.len += 1;
        } else {
            let victim = (0..HISTOGRAM_SLOTS)
                .min_by_key(|&i| (self.slots[i].1, std::cmp::Reverse(self.slots[i].0)))
                .expect("slots are full");
            self.slots[victim] = (label, count);
        }
    }

    pub fn count(&self, label: u16) -> u16 {
        if label == 0 {
            return self.background;
        }
        self.slots()
            .iter()
            .find(|s| s.0 == label)
            .map_or(0, |s| s.1)
    }

    pub fn slots(&self) -> &[(u16, u16)] {
        &self.slots[..self.len as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.background == 0 && self.len == 0
    }

    /// Most frequent label, background included as id 0; ties go to the
    /// lower id. An empty histogram reads as 0.
    pub fn argmax(&self) -> u16 {
        let mut best = (0u16, self.background);
        for &(id, c) in self.slots() {
            if c > best.1 || (c == best.1 && id < best.0) {
                best = (id, c);
            }
        }
        best.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TsdfVoxel {
    /// Signed distance in units of the truncation distance, in [-1, 1].
    pub tsdf: f64,
    pub weight: f32,
    pub color: [f32; 3],
    pub labels: LabelHistogram,
}

impl TsdfVoxel {
    pub fn is_observed(&self) -> bool {
        self.weight > 0.0
    }

    fn update(&mut self, sdf: f64, color: Option<[u8; 3]>, label: Option<u16>) {
        let w = self.weight;
        self.tsdf = ((self.tsdf * w as f64 + sdf) / (w as f64 + 1.0)).clamp(-1.0, 1.0);
        if let Some(c) = color {
            for i in 0..3 {
                self.color[i] = (self.color[i] * w + c[i] as f32) / (w + 1.0);
            }
        }
        if let Some(l) = label {
            self.labels.add(l, 1);
        }
        self.weight = (w + 1.0).min(MAX_WEIGHT);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    voxels: Vec<TsdfVoxel>,
}

impl Block {
    pub fn voxels(&self) -> &[TsdfVoxel] {
        &self.voxels
    }
}

pub type BlockKey = [i32; 3];

#[derive(Clone, Debug)]
pub struct TsdfVolume {
    voxel_size: f64,
    truncation: f64,
    block_edge: usize,
    blocks: HashMap<BlockKey, Block>,
    has_color: bool,
}

/// The per-pixel payload carried into the volume.
#[derive(Clone, Copy)]
enum Payload<'a> {
    Color(&'a ColorImage),
    Labels(&'a LabelImage),
    Both(&'a ColorImage, &'a LabelImage),
}

impl Payload<'_> {
    fn at(&self, x: usize, y: usize) -> (Option<[u8; 3]>, Option<u16>) {
        match self {
            Payload::Color(c) => (Some(*c.get(x, y)), None),
            Payload::Labels(l) => (None, Some(*l.get(x, y))),
            Payload::Both(c, l) => (Some(*c.get(x, y)), Some(*l.get(x, y))),
        }
    }
}

impl TsdfVolume {
    pub fn new(voxel_size: f64, truncation: f64, block_edge: usize) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::invalid("voxel size must be positive"));
        }
        if !(truncation >= voxel_size) || !truncation.is_finite() {
            return Err(Error::invalid("truncation must be at least the voxel size"));
        }
        if block_edge == 0 {
            return Err(Error::invalid("block edge must be at least one voxel"));
        }
        Ok(TsdfVolume {
            voxel_size,
            truncation,
            block_edge,
            blocks: HashMap::new(),
            has_color: false,
        })
    }

    /// Truncation of four voxels and 16-voxel blocks.
    pub fn with_voxel_size(voxel_size: f64) -> Result<Self> {
        TsdfVolume::new(voxel_size, 4.0 * voxel_size, DEFAULT_BLOCK_EDGE)
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn block_edge(&self) -> usize {
        self.block_edge
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Allocated block coordinates in ascending order.
    pub fn block_keys(&self) -> Vec<BlockKey> {
        let mut keys: Vec<BlockKey> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn block(&self, key: &BlockKey) -> Option<&Block> {
        self.blocks.get(key)
    }

    /// Whether any color observation has been integrated.
    pub fn has_color(&self) -> bool {
        self.has_color
    }

    /// World position of the voxel with global lattice coordinates `g`.
    pub fn voxel_center(&self, g: [i64; 3]) -> Vector3<f64> {
        Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64) * self.voxel_size
    }

    /// Global lattice coordinates of the voxel nearest to `p`.
    pub fn voxel_at(&self, p: &Vector3<f64>) -> [i64; 3] {
        let s = p / self.voxel_size;
        [s.x.round() as i64, s.y.round() as i64, s.z.round() as i64]
    }

    pub fn voxel(&self, g: [i64; 3]) -> Option<&TsdfVoxel> {
        let e = self.block_edge as i64;
        let key = g.map(|c| c.div_euclid(e) as i32);
        let l = g.map(|c| c.rem_euclid(e) as usize);
        self.blocks
            .get(&key)
            .map(|b| &b.voxels[(l[2] * self.block_edge + l[1]) * self.block_edge + l[0]])
    }

    /// Every allocated voxel with its global lattice coordinates, in block-key
    /// then local order.
    pub fn voxels(&self) -> impl Iterator<Item = ([i64; 3], &TsdfVoxel)> + '_ {
        let e = self.block_edge;
        self.block_keys().into_iter().flat_map(move |key| {
            let block = &self.blocks[&key];
            block.voxels.iter().enumerate().map(move |(i, v)| {
                let l = [i % e, (i / e) % e, i / (e * e)];
                let g = [0, 1, 2].map(|a| key[a] as i64 * e as i64 + l[a] as i64);
                (g, v)
            })
        })
    }

    fn block_of_point(&self, p: &Vector3<f64>) -> BlockKey {
        let g = self.voxel_at(p);
        g.map(|c| c.div_euclid(self.block_edge as i64) as i32)
    }

    /// Allocates every block that the truncation band around the observed
    /// surface passes through.
    pub fn allocate(
        &mut self,
        depth: &DepthImage,
        k: &Intrinsics,
        camera_to_world: &RigidPose,
    ) -> Result<()> {
        check_frame(depth, k, camera_to_world)?;
        let step = self.voxel_size / 2.0;
        let trunc = self.truncation;
        let keys: BTreeSet<BlockKey> = (0..depth.height())
            .into_par_iter()
            .map(|y| {
                let mut keys = BTreeSet::new();
                for x in 0..depth.width() {
                    let d = *depth.get(x, y);
                    if d <= 0.0 {
                        continue;
                    }
                    let ray = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                    let steps = (2.0 * trunc / step).ceil() as usize;
                    for s in 0..=steps {
                        let z = d - trunc + s as f64 * step;
                        if z <= 0.0 {
                            continue;
                        }
                        keys.insert(self.block_of_point(&camera_to_world.apply(&(ray * z))));
                    }
                }
                keys
            })
            .reduce(BTreeSet::new, |mut a, b| {
                a.extend(b);
                a
            });
        let n = self.block_edge.pow(3);
        for key in keys {
            self.blocks.entry(key).or_insert_with(|| Block {
                voxels: vec![TsdfVoxel::default(); n],
            });
        }
        Ok(())
    }

    /// Updates every allocated voxel in view that lies in front of, or within
    /// truncation behind, the observed depth.
    fn update(
        &mut self,
        depth: &DepthImage,
        k: &Intrinsics,
        camera_to_world: &RigidPose,
        payload: Payload<'_>,
    ) {
        let world_to_camera = camera_to_world.inverse();
        let (e, vs, trunc) = (self.block_edge, self.voxel_size, self.truncation);
        let (w, h) = (k.width as f64, k.height as f64);
        self.blocks.par_iter_mut().for_each(|(key, block)| {
            let origin = [0, 1, 2].map(|a| key[a] as i64 * e as i64);
            // skip blocks whose corners all project outside the image
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            let mut in_front = false;
            for c in 0..8 {
                let g = [0, 1, 2]
                    .map(|a| origin[a] as f64 + if c >> a & 1 == 1 { (e - 1) as f64 } else { 0.0 });
                let p = world_to_camera.apply(&(Vector3::from(g) * vs));
                if p.z <= 0.0 {
                    // a corner behind the camera makes the projected bound meaningless
                    lo = [f64::NEG_INFINITY; 2];
                    hi = [f64::INFINITY; 2];
                    continue;
                }
                in_front = true;
                let uv = [k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy];
                for i in 0..2 {
                    lo[i] = lo[i].min(uv[i]);
                    hi[i] = hi[i].max(uv[i]);
                }
            }
            if !in_front || hi[0] < -0.5 || hi[1] < -0.5 || lo[0] > w - 0.5 || lo[1] > h - 0.5 {
                return;
            }
            for (i, voxel) in block.voxels.iter_mut().enumerate() {
                let l = [i % e, (i / e) % e, i / (e * e)];
                let g = [0, 1, 2].map(|a| (origin[a] + l[a] as i64) as f64);
                let p = world_to_camera.apply(&(Vector3::from(g) * vs));
                if p.z <= 0.0 {
                    continue;
                }
                let Some((x, y)) = k.pixel_at(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
                else {
                    continue;
                };
                let d = *depth.get(x, y);
                if d <= 0.0 {
                    continue;
                }
                let sdf = d - p.z;
                if sdf < -trunc {
                    continue;
                }
                let (color, label) = payload.at(x, y);
                voxel.update((sdf / trunc).clamp(-1.0, 1.0), color, label);
            }
        });
        if matches!(payload, Payload::Color(_) | Payload::Both(..)) {
            self.has_color = true;
        }
    }

    fn integrate(
        &mut self,
        depth: &DepthImage,
        k: &Intrinsics,
        camera_to_world: &RigidPose,
        payload: Payload<'_>,
    ) -> Result<()> {
        self.allocate(depth, k, camera_to_world)?;
        self.update(depth, k, camera_to_world, payload);
        Ok(())
    }

    /// Fuses one color + depth frame; `camera_to_world` places the camera.
    pub fn integrate_rgbd(&mut self, frame: &RgbdFrame, camera_to_world: &RigidPose) -> Result<()> {
        self.integrate(
            &frame.depth,
            &frame.intrinsics,
            camera_to_world,
            Payload::Color(&frame.color),
        )
    }

    /// Fuses one label + depth frame through the same traversal and
    /// tsdf/weight update as [`integrate_rgbd`](Self::integrate_rgbd).
    pub fn integrate_maskd(
        &mut self,
        frame: &MaskdFrame,
        k: &Intrinsics,
        camera_to_world: &RigidPose,
    ) -> Result<()> {
        self.integrate(
            &frame.depth,
            k,
            camera_to_world,
            Payload::Labels(&frame.labels),
        )
    }

    /// Fuses color and labels of one frame in a single pass. Equivalent to
    /// integrating the frame into two structurally identical volumes, one per
    /// channel.
    pub fn integrate_labeled(
        &mut self,
        frame: &RgbdFrame,
        labels: &LabelImage,
        camera_to_world: &RigidPose,
    ) -> Result<()> {
        if !labels.same_dims(&frame.depth) {
            return Err(Error::invalid(
                "label raster differs in size from the depth",
            ));
        }
        self.integrate(
            &frame.depth,
            &frame.intrinsics,
            camera_to_world,
            Payload::Both(&frame.color, labels),
        )
    }

    /// Integrates a whole sequence. All blocks are allocated before any voxel
    /// is updated, so the result does not depend on frame order beyond
    /// floating-point rounding.
    pub fn integrate_sequence(
        &mut self,
        frames: &[RgbdFrame],
        labels: &[LabelImage],
        camera_to_world: &[RigidPose],
    ) -> Result<()> {
        if frames.len() != labels.len() || frames.len() != camera_to_world.len() {
            return Err(Error::invalid(
                "frames, labels and poses must have equal length",
            ));
        }
        for ((f, l), pose) in frames.iter().zip(labels).zip(camera_to_world) {
            if !l.same_dims(&f.depth) {
                return Err(Error::invalid(
                    "label raster differs in size from the depth",
                ));
            }
            self.allocate(&f.depth, &f.intrinsics, pose)?;
        }
        for ((f, l), pose) in frames.iter().zip(labels).zip(camera_to_world) {
            self.update(&f.depth, &f.intrinsics, pose, Payload::Both(&f.color, l));
        }
        Ok(())
    }

    /// Integrates every frame of every fragment. A frame's world pose is its
    /// fragment's registered pose composed with its odometry pose inside the
    /// fragment. Fragments must cover the frames exactly once.
    pub fn integrate_fragments(
        &mut self,
        frames: &[RgbdFrame],
        labels: &[LabelImage],
        fragment_poses: &[RigidPose],
        fragments: &[Fragment],
    ) -> Result<()> {
        if fragment_poses.len() != fragments.len() {
            return Err(Error::invalid("one registered pose is needed per fragment"));
        }
        let mut owner = vec![None; frames.len()];
        for (i, f) in fragments.iter().enumerate() {
            if f.end > frames.len() || f.frame_poses.len() != f.end.saturating_sub(f.start) {
                return Err(Error::invalid(format!(
                    "fragment {} does not fit the frame sequence",
                    f.id
                )));
            }
            for t in f.frames() {
                if owner[t].replace(i).is_some() {
                    return Err(Error::invalid(format!(
                        "frame {t} belongs to more than one fragment"
                    )));
                }
            }
        }
        let mut poses = Vec::with_capacity(frames.len());
        for (t, o) in owner.iter().enumerate() {
            let i = o.ok_or_else(|| Error::invalid(format!("frame {t} belongs to no fragment")))?;
            let f = &fragments[i];
            poses.push(fragment_poses[i].compose(&f.frame_poses[t - f.start]));
        }
        self.integrate_sequence(frames, labels, &poses)
    }
}

fn check_frame(depth: &DepthImage, k: &Intrinsics, pose: &RigidPose) -> Result<()> {
    k.validate()?;
    if depth.dims() != (k.width, k.height) {
        return Err(Error::invalid(
            "depth raster does not match the intrinsics size",
        ));
    }
    if !pose.is_valid() {
        return Err(Error::invalid("camera pose is not a rigid transform"));
    }
    Ok(())
}
