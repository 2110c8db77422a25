//! Baseline label-mask propagation across an image sequence.
//!
//! Each label region is moved by the integer translation that best explains
//! the new frame, then trimmed and grown by color similarity. Mid-sequence
//! seed masks replace the propagated result, modelling manual correction.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ColorImage, LabelImage};

const MAX_L1: i64 = 765;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Translations up to this many pixels along each axis are searched.
    pub search_radius: usize,
    /// Normalized L1 color distance (0..=1) under which two colors match.
    pub similarity_threshold: f64,
    /// Regions smaller than this after refinement are dropped as lost.
    pub min_area: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            search_radius: 8,
            similarity_threshold: 0.15,
            min_area: 4,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::invalid("similarity threshold must lie in [0, 1]"));
        }
        if self.min_area < 1 {
            return Err(Error::invalid("minimum area must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    pub mask: LabelImage,
    /// Labels present in the previous mask but dropped from this one.
    pub lost: Vec<u16>,
}

fn l1(a: [u8; 3], b: [u8; 3]) -> i64 {
    (0..3).map(|i| (a[i] as i64 - b[i] as i64).abs()).sum()
}

/// One label's proposed pixels with their color-agreement scores.
struct Claim {
    label: u16,
    pixels: Vec<(usize, i64)>,
}

fn best_shift(
    region: &[(usize, usize)],
    current: &ColorImage,
    previous: &ColorImage,
    radius: i64,
) -> (i64, i64) {
    let (w, h) = (current.width() as i64, current.height() as i64);
    let mut best: Option<(i64, i64, i64, i64)> = None; // (score, |d|², dx, dy)
    for dx in -radius..=radius {
        for dy in -radius..=radius {
            let mut score = 0;
            for &(x, y) in region {
                let (qx, qy) = (x as i64 + dx, y as i64 + dy);
                if qx < 0 || qy < 0 || qx >= w || qy >= h {
                    continue;
                }
                score += MAX_L1 - l1(*previous.get(x, y), *current.get(qx as usize, qy as usize));
            }
            let cand = (score, dx * dx + dy * dy, dx, dy);
            let better = match best {
                None => true,
                // higher score, then smaller displacement, then lexicographic (dx, dy)
                Some(b) => {
                    cand.0 > b.0 || (cand.0 == b.0 && (cand.1, cand.2, cand.3) < (b.1, b.2, b.3))
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best.map_or((0, 0), |b| (b.2, b.3))
}

fn propagate_label(
    label: u16,
    region: &[(usize, usize)],
    current: &ColorImage,
    previous: &ColorImage,
    cfg: &TrackerConfig,
) -> Claim {
    let (w, h) = (current.width(), current.height());
    let threshold = (cfg.similarity_threshold * MAX_L1 as f64).round() as i64;
    let mut mean = [0u64; 3];
    for &(x, y) in region {
        let c = previous.get(x, y);
        for i in 0..3 {
            mean[i] += c[i] as u64;
        }
    }
    let n = region.len() as u64;
    let mean = mean.map(|s| ((s + n / 2) / n) as u8);

    let (dx, dy) = best_shift(region, current, previous, cfg.search_radius as i64);
    let mut inside = vec![false; w * h];
    let mut pixels = Vec::with_capacity(region.len());
    for &(x, y) in region {
        let (qx, qy) = (x as i64 + dx, y as i64 + dy);
        if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
            continue;
        }
        let (qx, qy) = (qx as usize, qy as usize);
        let c = *current.get(qx, qy);
        let to_source = l1(c, *previous.get(x, y));
        let to_mean = l1(c, mean);
        if to_source > threshold && to_mean > threshold {
            continue;
        }
        inside[qy * w + qx] = true;
        pixels.push((qy * w + qx, MAX_L1 - to_source.min(to_mean)));
    }
    // grow by one ring: pixels that now look like the region but did not before
    let mut grown = Vec::new();
    for &(idx, _) in &pixels {
        let (x, y) = (idx % w, idx / w);
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx >= w || ny >= h || inside[ny * w + nx] {
                continue;
            }
            let to_mean = l1(*current.get(nx, ny), mean);
            if to_mean <= threshold && l1(*previous.get(nx, ny), mean) > threshold {
                inside[ny * w + nx] = true;
                grown.push((ny * w + nx, MAX_L1 - to_mean));
            }
        }
    }
    pixels.extend(grown);
    Claim { label, pixels }
}

/// Propagates every label of `previous_mask` into the current frame.
pub fn propagate_mask(
    current: &ColorImage,
    previous: &ColorImage,
    previous_mask: &LabelImage,
    cfg: &TrackerConfig,
) -> Result<Propagation> {
    cfg.validate()?;
    if !current.same_dims(previous) || !current.same_dims(previous_mask) {
        return Err(Error::invalid(
            "tracker images and mask must share dimensions",
        ));
    }
    let mut regions: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
    let w = previous_mask.width();
    for (i, &l) in previous_mask.data().iter().enumerate() {
        if l != 0 {
            regions.entry(l).or_default().push((i % w, i / w));
        }
    }
    if regions.is_empty() {
        return Err(Error::NoSeed("previous mask has no labeled pixels".into()));
    }
    let claims: Vec<Claim> = regions
        .par_iter()
        .map(|(&label, region)| propagate_label(label, region, current, previous, cfg))
        .collect();

    // per-pixel arbitration: higher agreement wins, then lower label id
    let mut owner: Vec<Option<(i64, u16)>> = vec![None; previous_mask.len()];
    for claim in &claims {
        for &(idx, score) in &claim.pixels {
            let take = match owner[idx] {
                None => true,
                Some((s, l)) => score > s || (score == s && claim.label < l),
            };
            if take {
                owner[idx] = Some((score, claim.label));
            }
        }
    }
    let mut area: BTreeMap<u16, usize> = BTreeMap::new();
    for (_, l) in owner.iter().flatten() {
        *area.entry(*l).or_default() += 1;
    }
    let lost: Vec<u16> = regions
        .keys()
        .copied()
        .filter(|l| area.get(l).copied().unwrap_or(0) < cfg.min_area)
        .collect();
    let data = owner
        .iter()
        .map(|o| match o {
            Some((_, l)) if !lost.contains(l) => *l,
            _ => 0,
        })
        .collect();
    Ok(Propagation {
        mask: LabelImage::from_vec(w, previous_mask.height(), data)?,
        lost,
    })
}

/// Tracks masks through `images`. Frame 0 must be seeded; any other seeded
/// frame replaces the propagated mask. Once every label is lost the output
/// stays empty until the next seed.
pub fn track_sequence(
    images: &[ColorImage],
    seeds: &BTreeMap<usize, LabelImage>,
    cfg: &TrackerConfig,
) -> Result<Vec<LabelImage>> {
    cfg.validate()?;
    let first = seeds
        .get(&0)
        .ok_or_else(|| Error::NoSeed("frame 0 has no seed mask".into()))?;
    if let Some(i) = seeds.keys().find(|&&i| i >= images.len()) {
        return Err(Error::invalid(format!(
            "seed for frame {i} but only {} images",
            images.len()
        )));
    }
    if let Some((i, _)) = seeds.iter().find(|(&i, s)| !s.same_dims(&images[i])) {
        return Err(Error::invalid(format!(
            "seed mask {i} does not match its image size"
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    out.push(first.clone());
    for t in 1..images.len() {
        let mask = match seeds.get(&t) {
            Some(seed) => seed.clone(),
            None => {
                let prev = &out[t - 1];
                if prev.data().iter().all(|&l| l == 0) {
                    LabelImage::new(prev.width(), prev.height(), 0)
                } else {
                    let p = propagate_mask(&images[t], &images[t - 1], prev, cfg)?;
                    if !p.lost.is_empty() {
                        log::info!("frame {t}: lost labels {:?}", p.lost);
                    }
                    p.mask
                }
            }
        };
        out.push(mask);
    }
    Ok(out)
}
