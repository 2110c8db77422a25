use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;
use rayon::prelude::*;

use super::mc::{case_table, corner_offset, EDGES};
use super::{TsdfVolume, TsdfVoxel};
use crate::geometry::LabeledPointCloud;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub labels: Vec<u16>,
}

impl LabeledMesh {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// The vertices with their attributes; faces are dropped.
    pub fn vertex_cloud(&self) -> LabeledPointCloud {
        LabeledPointCloud {
            positions: self.vertices.clone(),
            colors: self.colors.clone(),
            normals: None,
            labels: self.labels.clone(),
        }
    }
}

/// V - E + F, counting each undirected edge once.
pub fn euler_characteristic(vertex_count: usize, triangles: &[[u32; 3]]) -> i64 {
    let mut edges = HashSet::new();
    for t in triangles {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    vertex_count as i64 - edges.len() as i64 + triangles.len() as i64
}

/// Global lattice coordinates of an edge's lower voxel, plus its axis.
type EdgeKey = ([i64; 3], usize);

struct Crossing {
    position: Vector3<f64>,
    color: [u8; 3],
    label: u16,
}

fn step(g: [i64; 3], axis: usize) -> [i64; 3] {
    let mut n = g;
    n[axis] += 1;
    n
}

fn is_inside(v: &TsdfVoxel) -> bool {
    v.tsdf < 0.0
}

impl TsdfVolume {
    fn crossing(&self, g: [i64; 3], a: &TsdfVoxel, axis: usize, b: &TsdfVoxel) -> Crossing {
        let t = a.tsdf / (a.tsdf - b.tsdf);
        let mut position = self.voxel_center(g);
        position[axis] += t * self.voxel_size;
        let color = [0, 1, 2].map(|i| {
            let c = a.color[i] as f64 + t * (b.color[i] - a.color[i]) as f64;
            c.round().clamp(0.0, 255.0) as u8
        });
        let closer = if b.tsdf.abs() < a.tsdf.abs() { b } else { a };
        Crossing {
            position,
            color,
            label: closer.labels.argmax(),
        }
    }

    fn cloud_from(&self, items: impl IntoIterator<Item = Crossing>) -> LabeledPointCloud {
        let mut cloud = if self.has_color() {
            LabeledPointCloud::with_colors()
        } else {
            LabeledPointCloud::new()
        };
        let colored = self.has_color();
        for c in items {
            cloud.push(c.position, colored.then_some(c.color), None, c.label);
        }
        cloud
    }

    /// One point per voxel edge whose observed endpoints straddle the zero
    /// level, in block-key order.
    pub fn extract_point_cloud(&self) -> LabeledPointCloud {
        let e = self.block_edge as i64;
        let per_block: Vec<Vec<Crossing>> = self
            .block_keys()
            .par_iter()
            .map(|key| {
                let block = &self.blocks[key];
                let mut out = Vec::new();
                for (i, a) in block.voxels.iter().enumerate() {
                    if !a.is_observed() {
                        continue;
                    }
                    let i = i as i64;
                    let g = [
                        key[0] as i64 * e + i % e,
                        key[1] as i64 * e + (i / e) % e,
                        key[2] as i64 * e + i / (e * e),
                    ];
                    for axis in 0..3 {
                        let Some(b) = self.voxel(step(g, axis)) else {
                            continue;
                        };
                        if b.is_observed() && is_inside(a) != is_inside(b) {
                            out.push(self.crossing(g, a, axis, b));
                        }
                    }
                }
                out
            })
            .collect();
        self.cloud_from(per_block.into_iter().flatten())
    }

    /// Observed voxels with |tsdf| below `band`, as a cloud of voxel centers.
    pub fn extract_voxel_grid(&self, band: f64) -> LabeledPointCloud {
        let colored = self.has_color();
        let mut cloud = if colored {
            LabeledPointCloud::with_colors()
        } else {
            LabeledPointCloud::new()
        };
        for (g, v) in self.voxels() {
            if v.is_observed() && v.tsdf.abs() < band {
                let color = v.color.map(|c| c.round().clamp(0.0, 255.0) as u8);
                cloud.push(
                    self.voxel_center(g),
                    colored.then_some(color),
                    None,
                    v.labels.argmax(),
                );
            }
        }
        cloud
    }

    /// Marching cubes over every cube whose eight corners are observed.
    /// Vertices on shared edges are merged, including across blocks.
    pub fn extract_mesh(&self) -> LabeledMesh {
        let table = case_table();
        let e = self.block_edge as i64;
        let per_block: Vec<Vec<[EdgeKey; 3]>> = self
            .block_keys()
            .par_iter()
            .map(|key| {
                let block = &self.blocks[key];
                let mut tris = Vec::new();
                for (i, v) in block.voxels.iter().enumerate() {
                    if !v.is_observed() {
                        continue;
                    }
                    let i = i as i64;
                    let g = [
                        key[0] as i64 * e + i % e,
                        key[1] as i64 * e + (i / e) % e,
                        key[2] as i64 * e + i / (e * e),
                    ];
                    let mut case = 0usize;
                    let mut complete = true;
                    for c in 0..8 {
                        let o = corner_offset(c);
                        match self.voxel([g[0] + o[0], g[1] + o[1], g[2] + o[2]]) {
                            Some(corner) if corner.is_observed() => {
                                if is_inside(corner) {
                                    case |= 1 << c;
                                }
                            }
                            _ => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if !complete {
                        continue;
                    }
                    for tri in &table[case] {
                        tris.push(tri.map(|edge| {
                            let (lower, _, axis) = EDGES[edge as usize];
                            let o = corner_offset(lower);
                            ([g[0] + o[0], g[1] + o[1], g[2] + o[2]], axis)
                        }));
                    }
                }
                tris
            })
            .collect();

        let mut index: HashMap<EdgeKey, u32> = HashMap::new();
        let mut crossings = Vec::new();
        let mut triangles = Vec::new();
        for tri in per_block.into_iter().flatten() {
            let ids = tri.map(|key| {
                *index.entry(key).or_insert_with(|| {
                    let (g, axis) = key;
                    let a = self.voxel(g).expect("corner observed");
                    let b = self.voxel(step(g, axis)).expect("corner observed");
                    crossings.push(self.crossing(g, a, axis, b));
                    (crossings.len() - 1) as u32
                })
            });
            triangles.push(ids);
        }
        let cloud = self.cloud_from(crossings);
        LabeledMesh {
            vertices: cloud.positions,
            triangles,
            colors: cloud.colors,
            labels: cloud.labels,
        }
    }
}
