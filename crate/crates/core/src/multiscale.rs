//! Scale integration of saliency maps and the geometric entropy `E_geom`.
//!
//! Two strategies are offered. *Multiscale* averages a point's saliency maps
//! over every scale of a range; *Optimal-scale* keeps the saliency of the scale
//! with the lowest `E_geom`. Each point's neighbourhood is gathered once at the
//! largest scale and the smaller scales are read off as prefixes of that sorted
//! list.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{sweep_saliency, Cut, DescriptorKind, SaliencyMap};
use crate::error::{Error, Result};
use crate::spatial::{NeighborhoodSpec, SpatialIndex};

/// Discrete range of neighbourhood scales, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleRange {
    Knn { min: usize, max: usize, step: usize },
    Spherical { min: f64, max: f64, step: f64 },
}

impl ScaleRange {
    /// k = 10, 20, ..., 100.
    pub const DEFAULT_KNN: ScaleRange = ScaleRange::Knn {
        min: 10,
        max: 100,
        step: 10,
    };

    /// r = 0.009, 0.010, 0.011 in normalized units.
    pub const DEFAULT_SPHERICAL: ScaleRange = ScaleRange::Spherical {
        min: 0.009,
        max: 0.011,
        step: 0.001,
    };

    pub fn validate(self) -> Result<Self> {
        let ok = match self {
            ScaleRange::Knn { min, max, step } => min >= 3 && min <= max && step > 0,
            ScaleRange::Spherical { min, max, step } => {
                min > 0.0 && max.is_finite() && min <= max && step > 0.0 && step.is_finite()
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::Domain(format!("invalid scale range {self}")))
        }
    }

    pub fn scales(&self) -> Vec<NeighborhoodSpec> {
        match *self {
            ScaleRange::Knn { min, max, step } => (min..=max)
                .step_by(step.max(1))
                .map(NeighborhoodSpec::Knn)
                .collect(),
            ScaleRange::Spherical { min, max, step } => {
                let n = ((max - min) / step + 1e-9).floor() as usize + 1;
                (0..n)
                    .map(|i| {
                        let r = min + i as f64 * step;
                        NeighborhoodSpec::Spherical((r * 1e12).round() / 1e12)
                    })
                    .collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.scales().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ScaleRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleRange::Knn { min, max, step } => write!(f, "knn {min}..={max} step {step}"),
            ScaleRange::Spherical { min, max, step } => {
                write!(f, "spherical {min}..={max} step {step}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Multiscale,
    Optimal,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Multiscale => "multiscale",
            Mode::Optimal => "optimal",
        }
    }

    /// Range used when none is given: spherical radii for Multiscale, k values
    /// for Optimal-scale.
    pub fn default_range(self) -> ScaleRange {
        match self {
            Mode::Multiscale => ScaleRange::DEFAULT_SPHERICAL,
            Mode::Optimal => ScaleRange::DEFAULT_KNN,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiscale" => Ok(Mode::Multiscale),
            "optimal" | "optimal-scale" | "optimal_scale" => Ok(Mode::Optimal),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChosenScale {
    Aggregated,
    Scale(NeighborhoodSpec),
}

impl fmt::Display for ChosenScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChosenScale::Aggregated => f.write_str("aggregated"),
            ChosenScale::Scale(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointGeometry {
    pub saliency: SaliencyMap,
    /// `E_geom` in nats.
    pub entropy: f64,
    pub chosen_scale: ChosenScale,
    /// Set when no scale gave a usable neighbourhood.
    pub degenerate: bool,
}

impl PointGeometry {
    fn degenerate(chosen_scale: ChosenScale) -> Self {
        PointGeometry {
            saliency: SaliencyMap::DEGENERATE,
            entropy: 0.0,
            chosen_scale,
            degenerate: true,
        }
    }
}

/// Shannon entropy of a saliency map in nats, with `0 ln 0 = 0`.
pub fn entropy_geom(s: &SaliencyMap) -> f64 {
    s.as_array()
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -c * c.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Per-point saliency at every scale of `range`, in range order; `None` marks a
/// degenerate neighbourhood.
pub fn per_scale_saliency(
    index: &SpatialIndex,
    kind: DescriptorKind,
    range: &ScaleRange,
    delta: f64,
) -> Result<Vec<Vec<Option<SaliencyMap>>>> {
    let range = range.validate()?;
    if kind == DescriptorKind::VoteGet {
        return Err(Error::NotSupported("the vote_get descriptor"));
    }
    let scales = range.scales();
    if let ScaleRange::Knn { .. } = range {
        let kmax = scales.iter().map(|s| match s {
            NeighborhoodSpec::Knn(k) => *k,
            NeighborhoodSpec::Spherical(_) => 0,
        });
        let kmax = kmax.max().unwrap_or(0);
        if kmax > index.len() {
            return Err(Error::InsufficientPoints {
                k: kmax,
                available: index.len(),
            });
        }
    }
    (0..index.len())
        .into_par_iter()
        .map(|i| {
            let q = index.point(i);
            let (neighbors, cuts) = match range {
                ScaleRange::Knn { .. } => {
                    let kmax = match scales.last() {
                        Some(NeighborhoodSpec::Knn(k)) => *k,
                        _ => unreachable!(),
                    };
                    let nbrs = index.knn(q, kmax)?;
                    let cuts: Vec<Cut> = scales
                        .iter()
                        .map(|s| {
                            let NeighborhoodSpec::Knn(k) = *s else {
                                unreachable!()
                            };
                            Cut {
                                count: k,
                                sigma: nbrs[k - 1].dist2.sqrt(),
                            }
                        })
                        .collect();
                    (nbrs, cuts)
                }
                ScaleRange::Spherical { .. } => {
                    let rmax = match scales.last() {
                        Some(NeighborhoodSpec::Spherical(r)) => *r,
                        _ => unreachable!(),
                    };
                    let nbrs = index.radius_query(q, rmax);
                    let cuts: Vec<Cut> = scales
                        .iter()
                        .map(|s| {
                            let NeighborhoodSpec::Spherical(r) = *s else {
                                unreachable!()
                            };
                            let r2 = r * r;
                            Cut {
                                count: nbrs.partition_point(|n| n.dist2 <= r2),
                                sigma: r,
                            }
                        })
                        .collect();
                    (nbrs, cuts)
                }
            };
            sweep_saliency(index, i, &neighbors, &cuts, kind, delta)
        })
        .collect()
}

/// Mean of the non-degenerate per-scale maps.
pub fn aggregate_point(per_scale: &[Option<SaliencyMap>]) -> PointGeometry {
    let valid: Vec<&SaliencyMap> = per_scale.iter().flatten().collect();
    if valid.is_empty() {
        return PointGeometry::degenerate(ChosenScale::Aggregated);
    }
    let n = valid.len() as f64;
    let mut mean = SaliencyMap {
        cl: 0.0,
        cs: 0.0,
        cp: 0.0,
    };
    for s in valid {
        mean.cl += s.cl;
        mean.cs += s.cs;
        mean.cp += s.cp;
    }
    mean.cl /= n;
    mean.cs /= n;
    mean.cp /= n;
    PointGeometry {
        saliency: mean,
        entropy: entropy_geom(&mean),
        chosen_scale: ChosenScale::Aggregated,
        degenerate: false,
    }
}

/// Lowest-entropy non-degenerate scale; ties go to the earlier (smaller) scale.
pub fn optimal_point(per_scale: &[Option<SaliencyMap>], scales: &[NeighborhoodSpec]) -> PointGeometry {
    let mut best: Option<(usize, SaliencyMap, f64)> = None;
    for (i, s) in per_scale.iter().enumerate() {
        if let Some(s) = s {
            let e = entropy_geom(s);
            if best.is_none() || best.is_some_and(|(_, _, be)| e < be) {
                best = Some((i, *s, e));
            }
        }
    }
    match best {
        Some((i, saliency, entropy)) => PointGeometry {
            saliency,
            entropy,
            chosen_scale: ChosenScale::Scale(scales[i]),
            degenerate: false,
        },
        None => PointGeometry::degenerate(ChosenScale::Scale(scales[0])),
    }
}

pub fn aggregate_multiscale(
    index: &SpatialIndex,
    kind: DescriptorKind,
    range: &ScaleRange,
    delta: f64,
) -> Result<Vec<PointGeometry>> {
    let per_point = per_scale_saliency(index, kind, range, delta)?;
    Ok(per_point.par_iter().map(|s| aggregate_point(s)).collect())
}

pub fn optimal_scale(
    index: &SpatialIndex,
    kind: DescriptorKind,
    range: &ScaleRange,
    delta: f64,
) -> Result<Vec<PointGeometry>> {
    let scales = range.scales();
    let per_point = per_scale_saliency(index, kind, range, delta)?;
    Ok(per_point.par_iter().map(|s| optimal_point(s, &scales)).collect())
}

pub fn integrate(
    index: &SpatialIndex,
    kind: DescriptorKind,
    range: &ScaleRange,
    mode: Mode,
    delta: f64,
) -> Result<Vec<PointGeometry>> {
    match mode {
        Mode::Multiscale => aggregate_multiscale(index, kind, range, delta),
        Mode::Optimal => optimal_scale(index, kind, range, delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{point_saliency, DEFAULT_DIFFUSION_DELTA};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(cl: f64, cs: f64, cp: f64) -> SaliencyMap {
        SaliencyMap { cl, cs, cp }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_geom(&map(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(entropy_geom(&map(0.0, 0.0, 1.0)), 0.0);
        let third = 1.0 / 3.0;
        assert!((entropy_geom(&map(third, third, third)) - 3f64.ln()).abs() < 1e-12);
        assert!((entropy_geom(&map(0.5, 0.5, 0.0)) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn default_ranges() {
        let k: Vec<_> = ScaleRange::DEFAULT_KNN.scales();
        assert_eq!(k.len(), 10);
        assert_eq!(k[0], NeighborhoodSpec::Knn(10));
        assert_eq!(k[9], NeighborhoodSpec::Knn(100));
        let r = ScaleRange::DEFAULT_SPHERICAL.scales();
        assert_eq!(
            r,
            vec![
                NeighborhoodSpec::Spherical(0.009),
                NeighborhoodSpec::Spherical(0.01),
                NeighborhoodSpec::Spherical(0.011)
            ]
        );
    }

    #[test]
    fn invalid_ranges() {
        assert!(ScaleRange::Knn {
            min: 2,
            max: 10,
            step: 1
        }
        .validate()
        .is_err());
        assert!(ScaleRange::Knn {
            min: 20,
            max: 10,
            step: 1
        }
        .validate()
        .is_err());
        assert!(ScaleRange::Spherical {
            min: 0.01,
            max: 0.02,
            step: 0.0
        }
        .validate()
        .is_err());
        assert!(ScaleRange::Spherical {
            min: -0.01,
            max: 0.02,
            step: 0.01
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mean_of_two_vertices() {
        let g = aggregate_point(&[Some(map(1.0, 0.0, 0.0)), Some(map(0.0, 1.0, 0.0))]);
        assert_eq!(g.saliency, map(0.5, 0.5, 0.0));
        assert!((g.entropy - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g.chosen_scale, ChosenScale::Aggregated);
    }

    #[test]
    fn degenerate_scales_are_skipped() {
        let g = aggregate_point(&[None, Some(map(0.2, 0.5, 0.3))]);
        assert_eq!(g.saliency, map(0.2, 0.5, 0.3));
        assert!(!g.degenerate);
        let g = aggregate_point(&[None, None]);
        assert!(g.degenerate);
        assert_eq!(g.saliency, SaliencyMap::DEGENERATE);
        let scales = [NeighborhoodSpec::Knn(5), NeighborhoodSpec::Knn(6)];
        let g = optimal_point(&[None, Some(map(0.2, 0.5, 0.3))], &scales);
        assert_eq!(g.chosen_scale, ChosenScale::Scale(scales[1]));
    }

    #[test]
    fn optimal_picks_zero_entropy_and_breaks_ties_low() {
        let scales = [3, 4, 5].map(NeighborhoodSpec::Knn);
        let g = optimal_point(
            &[
                Some(map(0.3, 0.4, 0.3)),
                Some(map(1.0, 0.0, 0.0)),
                Some(map(0.0, 1.0, 0.0)),
            ],
            &scales,
        );
        assert_eq!(g.chosen_scale, ChosenScale::Scale(scales[1]));
        assert_eq!(g.entropy, 0.0);
        let same = Some(map(0.2, 0.3, 0.5));
        let g = optimal_point(&[same, same, same], &scales);
        assert_eq!(g.chosen_scale, ChosenScale::Scale(scales[0]));
    }

    fn noisy_plane(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.01..0.01),
                ]
            })
            .collect()
    }

    #[test]
    fn single_scale_range_matches_direct_computation() {
        let idx = SpatialIndex::new(noisy_plane(800, 1)).unwrap();
        for kind in [
            DescriptorKind::Cov,
            DescriptorKind::VoteRaw,
            DescriptorKind::VoteDiffused,
        ] {
            let ranges = [
                ScaleRange::Knn {
                    min: 12,
                    max: 12,
                    step: 1,
                },
                ScaleRange::Spherical {
                    min: 0.15,
                    max: 0.15,
                    step: 0.05,
                },
            ];
            for range in ranges {
                let spec = range.scales()[0];
                let agg = aggregate_multiscale(&idx, kind, &range, DEFAULT_DIFFUSION_DELTA).unwrap();
                let opt = optimal_scale(&idx, kind, &range, DEFAULT_DIFFUSION_DELTA).unwrap();
                for i in (0..800).step_by(53) {
                    let direct = point_saliency(&idx, i, kind, spec, DEFAULT_DIFFUSION_DELTA).unwrap();
                    match direct {
                        Some(s) => {
                            for (a, b) in agg[i].saliency.as_array().iter().zip(s.as_array()) {
                                assert!((a - b).abs() < 1e-9);
                            }
                            assert_eq!(opt[i].chosen_scale, ChosenScale::Scale(spec));
                            assert_eq!(agg[i].saliency, opt[i].saliency);
                        }
                        None => assert!(agg[i].degenerate && opt[i].degenerate),
                    }
                }
            }
        }
    }

    #[test]
    fn plane_is_surface_type() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        for i in 0..64 {
            for j in 0..64 {
                pts.push([
                    (i as f64 + rng.random_range(-0.3..0.3)) / 32.0 - 1.0,
                    (j as f64 + rng.random_range(-0.3..0.3)) / 32.0 - 1.0,
                    rng.random_range(-0.002..0.002),
                ]);
            }
        }
        let idx = SpatialIndex::new(pts).unwrap();
        let range = ScaleRange::Knn {
            min: 20,
            max: 60,
            step: 20,
        };
        let geo = aggregate_multiscale(&idx, DescriptorKind::Cov, &range, 0.1).unwrap();
        let mean_cs = geo.iter().map(|g| g.saliency.cs).sum::<f64>() / geo.len() as f64;
        assert!(mean_cs >= 0.8, "{mean_cs}");
    }

    #[test]
    fn knn_range_larger_than_cloud_fails() {
        let idx = SpatialIndex::new(noisy_plane(50, 3)).unwrap();
        assert!(matches!(
            aggregate_multiscale(&idx, DescriptorKind::Cov, &ScaleRange::DEFAULT_KNN, 0.1),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn isolated_points_are_degenerate() {
        let idx = SpatialIndex::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let geo =
            aggregate_multiscale(&idx, DescriptorKind::Cov, &ScaleRange::DEFAULT_SPHERICAL, 0.1).unwrap();
        assert!(geo
            .iter()
            .all(|g| g.degenerate && g.saliency == SaliencyMap::DEGENERATE));
    }

    proptest! {
        #[test]
        fn entropy_in_bounds(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let s = map(lo, hi - lo, 1.0 - hi);
            let e = entropy_geom(&s);
            prop_assert!((0.0..=3f64.ln() + 1e-9).contains(&e));
        }

        #[test]
        fn optimal_never_exceeds_any_scale(
            raw in prop::collection::vec(prop::option::of(prop::array::uniform3(0.0f64..1.0)), 1..10)
        ) {
            let per: Vec<Option<SaliencyMap>> = raw
                .iter()
                .map(|o| o.and_then(|v| {
                    let s: f64 = v.iter().sum();
                    (s > 0.0).then(|| map(v[0] / s, v[1] / s, v[2] / s))
                }))
                .collect();
            let scales: Vec<_> = (0..per.len()).map(|i| NeighborhoodSpec::Knn(3 + i)).collect();
            let opt = optimal_point(&per, &scales);
            for s in per.iter().flatten() {
                prop_assert!(opt.entropy <= entropy_geom(s));
            }
            let agg = aggregate_point(&per);
            prop_assert!((agg.saliency.sum() - 1.0).abs() <= 1e-9);
        }
    }
}
