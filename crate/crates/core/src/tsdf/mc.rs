//! Marching-cubes case table, built once from cube topology.
//!
//! Corner `c` sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`. On every face the
//! isoline separates inside corners that touch only diagonally, so two cubes
//! sharing a face always agree on its crossing segments and the surface
//! closes across cube (and block) boundaries.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::Vector3;

/// The 12 cube edges as (lower corner, upper corner, axis).
pub(crate) const EDGES: [(usize, usize, usize); 12] = {
    let mut edges = [(0, 0, 0); 12];
    let mut n = 0;
    let mut axis = 0;
    while axis < 3 {
        let mut c = 0;
        while c < 8 {
            if c >> axis & 1 == 0 {
                edges[n] = (c, c | 1 << axis, axis);
                n += 1;
            }
            c += 1;
        }
        axis += 1;
    }
    edges
};

pub(crate) fn corner_offset(c: usize) -> [i64; 3] {
    [(c & 1) as i64, (c >> 1 & 1) as i64, (c >> 2 & 1) as i64]
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    EDGES
        .iter()
        .position(|&(p, q, _)| p == lo && q == hi)
        .expect("adjacent corners")
}

/// Corner cycles of the six faces, counter-clockwise seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let at = |du: usize, dv: usize| side << axis | du << u | dv << v;
            let cycle = [at(0, 0), at(1, 0), at(1, 1), at(0, 1)];
            out.push(if side == 1 {
                cycle
            } else {
                [cycle[0], cycle[3], cycle[2], cycle[1]]
            });
        }
    }
    out
}

fn polygons(case: usize, faces: &[[usize; 4]]) -> Vec<Vec<usize>> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for f in faces {
        for j in 0..4 {
            // entering the inside run at edge j; it ends where the cycle leaves it
            if inside(f[j]) || !inside(f[(j + 1) % 4]) {
                continue;
            }
            let mut i = (j + 1) % 4;
            while inside(f[(i + 1) % 4]) {
                i = (i + 1) % 4;
            }
            let entry = edge_between(f[j], f[(j + 1) % 4]);
            let exit = edge_between(f[i], f[(i + 1) % 4]);
            next.insert(entry, exit);
        }
    }
    let mut loops = Vec::new();
    while let Some((&start, _)) = next.iter().next() {
        let mut poly = vec![start];
        let mut e = next.remove(&start).expect("present");
        while e != start {
            poly.push(e);
            e = next.remove(&e).expect("crossing edges form closed loops");
        }
        loops.push(poly);
    }
    loops
}

fn build() -> Vec<Vec<[u8; 3]>> {
    let faces = faces();
    let mut table: Vec<Vec<[u8; 3]>> = (0..256)
        .map(|case| {
            let mut tris = Vec::new();
            for poly in polygons(case, &faces) {
                for i in 1..poly.len() - 1 {
                    tris.push([poly[0] as u8, poly[i] as u8, poly[i + 1] as u8]);
                }
            }
            tris
        })
        .collect();
    // orient so normals point from inside (negative) to outside: check the
    // single-corner case against the direction away from corner 0
    let mid = |e: u8| {
        let (a, b, _) = EDGES[e as usize];
        let (pa, pb) = (corner_offset(a), corner_offset(b));
        Vector3::new(
            (pa[0] + pb[0]) as f64,
            (pa[1] + pb[1]) as f64,
            (pa[2] + pb[2]) as f64,
        ) / 2.0
    };
    let t = table[1][0];
    let n = (mid(t[1]) - mid(t[0])).cross(&(mid(t[2]) - mid(t[0])));
    if n.dot(&Vector3::new(1.0, 1.0, 1.0)) < 0.0 {
        for tris in &mut table {
            for tri in tris.iter_mut() {
                tri.swap(1, 2);
            }
        }
    }
    table
}

/// Triangles (as edge indices) for each inside-corner bitmask.
pub(crate) fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(build)
}
