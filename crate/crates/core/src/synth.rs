//! Seeded synthetic scenes in meters, labeled with the default scheme.
//!
//! Every scene spans about 200 m along x so that, after normalization, the
//! default spherical radii correspond to roughly one meter.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{Point, PointCloud, SemanticScheme};
use crate::error::{Error, Result};

const LENGTH: f64 = 200.0;
const ROAD_WIDTH: f64 = 10.0;
const CROWNS: usize = 5;
const CROWN_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    /// A flat 200 m × 10 m road strip.
    Plane,
    /// A 200 m straight edge.
    Line,
    /// A row of isotropic Gaussian tree crowns.
    Blob,
    /// Road, building edges, tree crowns and low-vegetation patches.
    Mixed,
    /// A mixed scene and a copy with the crowns of the left half removed.
    DeforestationPair,
}

impl FromStr for Scene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Scene::Plane),
            "line" => Ok(Scene::Line),
            "blob" => Ok(Scene::Blob),
            "mixed" => Ok(Scene::Mixed),
            "deforestation-pair" | "deforestation_pair" => Ok(Scene::DeforestationPair),
            other => Err(Error::Config(format!("unknown scene `{other}`"))),
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scene::Plane => "plane",
            Scene::Line => "line",
            Scene::Blob => "blob",
            Scene::Mixed => "mixed",
            Scene::DeforestationPair => "deforestation-pair",
        })
    }
}

struct Builder {
    rng: ChaCha8Rng,
    points: Vec<Point>,
    labels: Vec<u16>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            points: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn jitter(&mut self, noise: f64) -> f64 {
        if noise > 0.0 {
            self.rng.random_range(-noise..=noise)
        } else {
            0.0
        }
    }

    /// Stratified samples over an axis-aligned rectangle at height `z`: one point
    /// per cell of a near-square grid, jittered inside its cell.
    #[allow(clippy::too_many_arguments)]
    fn rectangle(&mut self, n: usize, x0: f64, y0: f64, w: f64, h: f64, z: f64, noise: f64, label: u16) {
        if n == 0 {
            return;
        }
        let rows = ((n as f64 * h / w).sqrt().round() as usize).max(1);
        let cols = n.div_ceil(rows);
        let (dx, dy) = (w / cols as f64, h / rows as f64);
        for i in 0..n {
            let (c, r) = (i / rows, i % rows);
            let x = x0 + (c as f64 + 0.5 + self.rng.random_range(-0.15..0.15)) * dx;
            let y = y0 + (r as f64 + 0.5 + self.rng.random_range(-0.15..0.15)) * dy;
            let z = z + self.jitter(noise);
            self.push([x, y, z], label);
        }
    }

    /// Evenly spaced points along a segment with perpendicular jitter.
    fn segment(&mut self, n: usize, a: Point, b: Point, noise: f64, label: u16) {
        for i in 0..n {
            let t = (i as f64 + self.rng.random_range(0.0..1.0)) / n as f64;
            let p = [
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]),
            ];
            let q = [p[0], p[1] + self.jitter(noise), p[2] + self.jitter(noise)];
            self.push(q, label);
        }
    }

    fn gaussian(&mut self, n: usize, center: Point, sigma: [f64; 3], label: u16) {
        let unit = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..n {
            let p = [0, 1, 2].map(|a| center[a] + sigma[a] * unit.sample(&mut self.rng));
            self.push(p, label);
        }
    }

    fn push(&mut self, p: Point, label: u16) {
        self.points.push(p);
        self.labels.push(label);
    }

    fn finish(self, name: &str) -> Result<PointCloud> {
        PointCloud::new(name, self.points, Some(self.labels), SemanticScheme::default())
    }
}

/// Splits `n` into `parts` near-equal counts.
fn split(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .collect()
}

/// Crowns evenly spaced so that their 3σ envelopes span the full length.
fn crowns(b: &mut Builder, n: usize, y: f64, z: f64) {
    let first = -LENGTH / 2.0 + 3.0 * CROWN_SIGMA;
    let spacing = (LENGTH - 6.0 * CROWN_SIGMA) / (CROWNS - 1) as f64;
    for (i, count) in split(n, CROWNS).into_iter().enumerate() {
        let x = first + spacing * i as f64;
        b.gaussian(count, [x, y, z], [CROWN_SIGMA; 3], SemanticScheme::TREE);
    }
}

fn mixed(b: &mut Builder, n: usize, noise: f64) {
    let [road, building, tree, low] = [0.4, 0.2, 0.3, 0.1].map(|f| (n as f64 * f) as usize);
    let low = low + (n - road - building - tree - low);
    b.rectangle(
        road,
        -LENGTH / 2.0,
        -ROAD_WIDTH / 2.0,
        LENGTH,
        ROAD_WIDTH,
        0.0,
        noise,
        SemanticScheme::ROAD,
    );
    // Roof edges: four 40 m lines at 8 m height.
    for (i, count) in split(building, 4).into_iter().enumerate() {
        let x = -90.0 + 47.5 * i as f64;
        b.segment(
            count,
            [x, 20.0, 8.0],
            [x + 40.0, 20.0, 8.0],
            noise,
            SemanticScheme::BUILDING,
        );
    }
    crowns(b, tree, -20.0, 10.0);
    // Low vegetation: elongated, flattened shrubs beside the road.
    let shrubs = 8;
    for (i, count) in split(low, shrubs).into_iter().enumerate() {
        let x = -LENGTH / 2.0 + LENGTH / shrubs as f64 * (i as f64 + 0.5);
        b.gaussian(
            count,
            [x, -10.0, 0.5],
            [1.5, 1.0, 0.5],
            SemanticScheme::LOW_VEGETATION,
        );
    }
}

/// One synthetic cloud of exactly `n` points. `noise` bounds the uniform jitter
/// (meters) applied off the ideal geometry.
pub fn synth_scene(scene: Scene, n: usize, noise: f64, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Domain("a scene needs at least one point".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Domain(format!("noise must be non-negative, got {noise}")));
    }
    let mut b = Builder::new(seed);
    match scene {
        Scene::Plane => b.rectangle(
            n,
            -LENGTH / 2.0,
            -ROAD_WIDTH / 2.0,
            LENGTH,
            ROAD_WIDTH,
            0.0,
            noise,
            SemanticScheme::ROAD,
        ),
        Scene::Line => b.segment(
            n,
            [-LENGTH / 2.0, 0.0, 0.0],
            [LENGTH / 2.0, 0.0, 0.0],
            noise,
            SemanticScheme::BUILDING,
        ),
        Scene::Blob => crowns(&mut b, n, 0.0, 0.0),
        Scene::Mixed => mixed(&mut b, n, noise),
        Scene::DeforestationPair => {
            return Err(Error::Domain(
                "deforestation-pair produces two clouds; use deforestation_pair".into(),
            ))
        }
    }
    b.finish(&scene.to_string())
}

/// A mixed scene (`t0`) and the same scene with every tree point in the left
/// half (x < 0) removed (`t1`).
pub fn deforestation_pair(n: usize, noise: f64, seed: u64) -> Result<(PointCloud, PointCloud)> {
    let t0 = synth_scene(Scene::Mixed, n, noise, seed)?.with_name("deforestation_t0");
    let labels = t0.labels().unwrap();
    let (points, kept): (Vec<Point>, Vec<u16>) = t0
        .points()
        .iter()
        .zip(labels)
        .filter(|(p, &l)| !(l == SemanticScheme::TREE && p[0] < 0.0))
        .map(|(p, &l)| (*p, l))
        .unzip();
    let t1 = PointCloud::new("deforestation_t1", points, Some(kept), t0.scheme().clone())?;
    Ok((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_counts_and_labels() {
        for scene in [Scene::Plane, Scene::Line, Scene::Blob, Scene::Mixed] {
            let c = synth_scene(scene, 10_000, 0.02, 1).unwrap();
            assert_eq!(c.len(), 10_000, "{scene}");
            assert_eq!(c.labels().unwrap().len(), 10_000);
        }
    }

    #[test]
    fn plane_noise_is_bounded() {
        let c = synth_scene(Scene::Plane, 10_000, 0.05, 3).unwrap();
        assert!(c.points().iter().all(|p| p[2].abs() <= 0.05));
        let (lo, hi) = c.bounding_box().unwrap();
        assert!(hi[0] - lo[0] > 199.0 && hi[1] - lo[1] > 9.5);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = synth_scene(Scene::Mixed, 2_000, 0.02, 9).unwrap();
        let b = synth_scene(Scene::Mixed, 2_000, 0.02, 9).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = synth_scene(Scene::Mixed, 2_000, 0.02, 10).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn deforestation_removes_left_crowns_only() {
        let (t0, t1) = deforestation_pair(5_000, 0.02, 4).unwrap();
        let removed: Vec<_> = t0
            .points()
            .iter()
            .zip(t0.labels().unwrap())
            .filter(|(p, &l)| l == SemanticScheme::TREE && p[0] < 0.0)
            .collect();
        assert!(!removed.is_empty());
        assert_eq!(t0.len() - t1.len(), removed.len());
        let survivors: Vec<_> = t0
            .points()
            .iter()
            .zip(t0.labels().unwrap())
            .filter(|(p, &l)| !(l == SemanticScheme::TREE && p[0] < 0.0))
            .map(|(p, &l)| (*p, l))
            .collect();
        let t1_pairs: Vec<_> = t1
            .points()
            .iter()
            .copied()
            .zip(t1.labels().unwrap().iter().copied())
            .collect();
        assert_eq!(survivors, t1_pairs);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_scene(Scene::Plane, 0, 0.0, 1).is_err());
        assert!(synth_scene(Scene::Plane, 10, -1.0, 1).is_err());
        assert!(synth_scene(Scene::DeforestationPair, 10, 0.0, 1).is_err());
    }
}
