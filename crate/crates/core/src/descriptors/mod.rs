//! Local geometric descriptor tensors and their saliency maps.
//!
//! Two tensors are built from a point's neighbourhood:
//!
//! * the covariance tensor, `(1/|N|) Σ (p − μ)(p − μ)ᵀ`, which lives in tangent space;
//! * the ball-vote tensor, `Σ w (I − v vᵀ)` with `v` the unit direction to each
//!   neighbour and `w = exp(−d²/σ²)`, which lives in normal space. Each vote is a
//!   plate tensor with a zero minor eigenvalue.
//!
//! The vote tensor can be anisotropically diffused, which maps its eigenvalues
//! through `exp(−λ / (δ · trace))` and keeps its eigenvectors. Because the map is
//! decreasing, the normal direction of a surface ends up with the smallest value,
//! and the diffused tensor reads like a covariance tensor.
//!
//! Saliency maps `(C_l, C_s, C_p)` are derived from descending eigenvalues
//! `λ0 ≥ λ1 ≥ λ2` as `((λ0 − λ1), 2(λ1 − λ2), 3λ2) / (λ0 + λ1 + λ2)`.

mod eigen;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use eigen::{eigen_sym3, jacobi_eigen, Eigen3, EigenTriple, Sym3, NEGATIVE_TOLERANCE};

use crate::cloud::Point;
use crate::error::{Error, Result};
use crate::spatial::{Neighbor, NeighborhoodSpec, SpatialIndex};

/// Default diffusion strength δ. A planar ball-vote tensor, whose saliency is
/// (0.25, 0, 0.75), diffuses to about (0, 0.93, 0.07), and a linear one, (0, 1, 0),
/// to about (0.99, 0, 0.01).
pub const DEFAULT_DIFFUSION_DELTA: f64 = 0.082;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    /// Covariance tensor.
    Cov,
    /// Ball tensor voting without diffusion.
    VoteRaw,
    /// Ball tensor voting followed by anisotropic diffusion.
    VoteDiffused,
    /// Tensor voting refined with a gradient energy tensor. Not available.
    VoteGet,
}

impl DescriptorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DescriptorKind::Cov => "cov",
            DescriptorKind::VoteRaw => "vote_raw",
            DescriptorKind::VoteDiffused => "vote_diffused",
            DescriptorKind::VoteGet => "vote_get",
        }
    }

    /// Fewest neighbourhood points (including the query point) that give a
    /// non-degenerate tensor.
    pub fn min_points(self) -> usize {
        match self {
            DescriptorKind::Cov => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cov" => Ok(DescriptorKind::Cov),
            "vote_raw" | "vote-raw" => Ok(DescriptorKind::VoteRaw),
            "vote_diffused" | "vote-diffused" => Ok(DescriptorKind::VoteDiffused),
            "vote_get" | "vote-get" => Ok(DescriptorKind::VoteGet),
            other => Err(Error::Config(format!("unknown descriptor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorTensor {
    pub m: Sym3,
    pub kind: DescriptorKind,
    pub point: usize,
    pub scale: NeighborhoodSpec,
}

/// Likelihoods of line-, surface- and point-type character; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub cl: f64,
    pub cs: f64,
    pub cp: f64,
}

impl SaliencyMap {
    /// Assigned to points whose neighbourhood is too small or whose tensor vanishes.
    pub const DEGENERATE: SaliencyMap = SaliencyMap {
        cl: 0.0,
        cs: 0.0,
        cp: 1.0,
    };

    pub fn as_array(&self) -> [f64; 3] {
        [self.cl, self.cs, self.cp]
    }

    pub fn sum(&self) -> f64 {
        self.cl + self.cs + self.cp
    }

    /// Index of the dominant channel: 0 line, 1 surface, 2 point. Ties go to the
    /// lower channel.
    pub fn dominant(&self) -> usize {
        let a = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if a[i] > a[best] {
                best = i;
            }
        }
        best
    }
}

/// `None` when every eigenvalue is zero.
pub fn saliency(e: &EigenTriple) -> Option<SaliencyMap> {
    let [l0, l1, l2] = e.0;
    let sum = l0 + l1 + l2;
    if !(sum > 0.0) || !sum.is_finite() {
        return None;
    }
    Some(SaliencyMap {
        cl: (l0 - l1) / sum,
        cs: 2.0 * (l1 - l2) / sum,
        cp: 3.0 * l2 / sum,
    })
}

/// Covariance of a point set about its own centroid.
pub fn covariance_of<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Sym3> {
    let pts: Vec<&Point> = points.into_iter().collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let mut mu = [0.0; 3];
    for p in &pts {
        for a in 0..3 {
            mu[a] += p[a] / n;
        }
    }
    let mut m = Sym3::ZERO;
    for p in &pts {
        let d = [p[0] - mu[0], p[1] - mu[1], p[2] - mu[2]];
        m.add_scaled(&Sym3::outer(&d), 1.0 / n);
    }
    Some(m)
}

/// Sum of decayed plate votes cast on `center` by `neighbors`. Coincident points
/// cast no vote.
pub fn ball_vote_of<'a>(center: &Point, neighbors: impl IntoIterator<Item = &'a Point>, sigma: f64) -> Sym3 {
    let mut m = Sym3::ZERO;
    let inv_s2 = 1.0 / (sigma * sigma);
    for q in neighbors {
        let d = [q[0] - center[0], q[1] - center[1], q[2] - center[2]];
        let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if d2 == 0.0 {
            continue;
        }
        let w = (-d2 * inv_s2).exp();
        // w (I − d dᵀ / |d|²)
        let mut vote = Sym3::IDENTITY;
        vote.add_scaled(&Sym3::outer(&d), -1.0 / d2);
        m.add_scaled(&vote, w);
    }
    m
}

fn gather(index: &SpatialIndex, point: usize, spec: NeighborhoodSpec) -> Result<Vec<Neighbor>> {
    if point >= index.len() {
        return Err(Error::Domain(format!(
            "point {point} out of range for a cloud of {}",
            index.len()
        )));
    }
    index.neighborhood(point, spec)
}

/// Covariance tensor of `point`'s neighbourhood; `None` when it has fewer than
/// three points.
pub fn covariance_tensor(
    index: &SpatialIndex,
    point: usize,
    spec: NeighborhoodSpec,
) -> Result<Option<DescriptorTensor>> {
    let nbrs = gather(index, point, spec)?;
    if nbrs.len() < DescriptorKind::Cov.min_points() {
        return Ok(None);
    }
    let m = covariance_of(nbrs.iter().map(|n| index.point(n.index))).unwrap();
    Ok(Some(DescriptorTensor {
        m,
        kind: DescriptorKind::Cov,
        point,
        scale: spec,
    }))
}

/// Ball-vote tensor of `point`; `None` when the neighbourhood holds only the point.
/// The decay σ is the radius for spherical neighbourhoods and the distance to the
/// farthest neighbour for knn ones.
pub fn ball_vote_tensor(
    index: &SpatialIndex,
    point: usize,
    spec: NeighborhoodSpec,
) -> Result<Option<DescriptorTensor>> {
    let nbrs = gather(index, point, spec)?;
    if nbrs.len() < DescriptorKind::VoteRaw.min_points() {
        return Ok(None);
    }
    let sigma = match spec {
        NeighborhoodSpec::Spherical(r) => r,
        NeighborhoodSpec::Knn(_) => nbrs.last().unwrap().dist2.sqrt(),
    };
    if !(sigma > 0.0) {
        return Ok(None);
    }
    let m = ball_vote_of(
        index.point(point),
        nbrs.iter().map(|n| index.point(n.index)),
        sigma,
    );
    Ok(Some(DescriptorTensor {
        m,
        kind: DescriptorKind::VoteRaw,
        point,
        scale: spec,
    }))
}

fn diffused_values(values: &[f64; 3], delta: f64) -> Option<[f64; 3]> {
    let trace = values[0] + values[1] + values[2];
    if !(trace > 0.0) {
        return None;
    }
    let kappa = delta * trace;
    Some(values.map(|l| (-l / kappa).exp()))
}

/// Anisotropic diffusion of a raw vote tensor.
pub fn anisotropic_diffuse(t: &DescriptorTensor, delta: f64) -> Result<DescriptorTensor> {
    if t.kind != DescriptorKind::VoteRaw {
        return Err(Error::KindMismatch {
            expected: DescriptorKind::VoteRaw.as_str(),
            found: t.kind.as_str(),
        });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!(
            "diffusion delta must be positive, got {delta}"
        )));
    }
    let e = eigen_sym3(&t.m)?;
    let m = match diffused_values(&e.values.0, delta) {
        Some(values) => {
            let mut m = Sym3::ZERO;
            for (v, l) in e.vectors.iter().zip(values) {
                m.add_scaled(&Sym3::outer(v), l);
            }
            m
        }
        None => Sym3::ZERO,
    };
    Ok(DescriptorTensor {
        m,
        kind: DescriptorKind::VoteDiffused,
        ..*t
    })
}

/// Saliency of `point` at a single scale; `None` marks a degenerate neighbourhood.
pub fn point_saliency(
    index: &SpatialIndex,
    point: usize,
    kind: DescriptorKind,
    spec: NeighborhoodSpec,
    delta: f64,
) -> Result<Option<SaliencyMap>> {
    let tensor = match kind {
        DescriptorKind::Cov => covariance_tensor(index, point, spec)?,
        DescriptorKind::VoteRaw => ball_vote_tensor(index, point, spec)?,
        DescriptorKind::VoteDiffused => ball_vote_tensor(index, point, spec)?
            .map(|t| anisotropic_diffuse(&t, delta))
            .transpose()?,
        DescriptorKind::VoteGet => return Err(Error::NotSupported("the vote_get descriptor")),
    };
    match tensor {
        Some(t) => Ok(saliency(&eigen_sym3(&t.m)?.values)),
        None => Ok(None),
    }
}

/// One scale of a sweep: use the first `count` neighbours, with vote decay `sigma`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cut {
    pub count: usize,
    pub sigma: f64,
}

/// Saliency at several nested neighbourhoods of one point. `neighbors` must be
/// sorted nearest first and include the point itself; each cut uses a prefix.
pub(crate) fn sweep_saliency(
    index: &SpatialIndex,
    center: usize,
    neighbors: &[Neighbor],
    cuts: &[Cut],
    kind: DescriptorKind,
    delta: f64,
) -> Result<Vec<Option<SaliencyMap>>> {
    let c = *index.point(center);
    let mut out = Vec::with_capacity(cuts.len());
    match kind {
        DescriptorKind::Cov => {
            // Prefix sums of offsets from the query point.
            let mut s = [0.0; 3];
            let mut ss = Sym3::ZERO;
            let mut used = 0;
            for cut in cuts {
                while used < cut.count {
                    let p = index.point(neighbors[used].index);
                    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                    for a in 0..3 {
                        s[a] += d[a];
                    }
                    ss.add_scaled(&Sym3::outer(&d), 1.0);
                    used += 1;
                }
                if cut.count < kind.min_points() {
                    out.push(None);
                    continue;
                }
                let n = cut.count as f64;
                let mu = s.map(|v| v / n);
                let mut m = ss.scaled(1.0 / n);
                m.add_scaled(&Sym3::outer(&mu), -1.0);
                out.push(saliency(&eigen_sym3(&m)?.values));
            }
        }
        DescriptorKind::VoteRaw | DescriptorKind::VoteDiffused => {
            for cut in cuts {
                if cut.count < kind.min_points() || !(cut.sigma > 0.0) {
                    out.push(None);
                    continue;
                }
                let m = ball_vote_of(
                    &c,
                    neighbors[..cut.count].iter().map(|n| index.point(n.index)),
                    cut.sigma,
                );
                let e = eigen_sym3(&m)?;
                let values = if kind == DescriptorKind::VoteDiffused {
                    match diffused_values(&e.values.0, delta) {
                        Some(v) => EigenTriple::new(v)?,
                        None => {
                            out.push(None);
                            continue;
                        }
                    }
                } else {
                    e.values
                };
                out.push(saliency(&values));
            }
        }
        DescriptorKind::VoteGet => return Err(Error::NotSupported("the vote_get descriptor")),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sal(l: [f64; 3]) -> SaliencyMap {
        saliency(&EigenTriple::new(l).unwrap()).unwrap()
    }

    fn close(a: SaliencyMap, b: [f64; 3], tol: f64) -> bool {
        a.as_array().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn saliency_vertices_are_exact() {
        assert_eq!(sal([1.0, 0.0, 0.0]).as_array(), [1.0, 0.0, 0.0]);
        assert_eq!(sal([1.0, 1.0, 0.0]).as_array(), [0.0, 1.0, 0.0]);
        assert_eq!(sal([1.0, 1.0, 1.0]).as_array(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn saliency_hand_value() {
        // S = 1, C_l = 0.3, C_s = 2 * 0.2, C_p = 3 * 0.1.
        assert!(close(sal([0.6, 0.3, 0.1]), [0.3, 0.4, 0.3], 1e-12));
    }

    #[test]
    fn saliency_of_zero_is_degenerate() {
        assert!(saliency(&EigenTriple([0.0; 3])).is_none());
    }

    #[test]
    fn saliency_scale_invariant() {
        let e = [0.7, 0.2, 0.05];
        let a = sal(e);
        let b = sal(e.map(|v| v * 4.0));
        assert_eq!(a, b);
    }

    #[test]
    fn collinear_and_coplanar_covariance() {
        let line = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]];
        let e = eigen_sym3(&covariance_of(&line).unwrap()).unwrap().values.0;
        assert!(e[0] > 0.0 && e[1].abs() < 1e-12 && e[2].abs() < 1e-12);
        let plane = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        let e = eigen_sym3(&covariance_of(&plane).unwrap()).unwrap().values.0;
        assert!(e[1] > 0.0 && e[2].abs() < 1e-12);
    }

    #[test]
    fn uniform_ball_is_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = Vec::new();
        while pts.len() < 1000 {
            let p: [f64; 3] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                pts.push(p);
            }
        }
        let e = eigen_sym3(&covariance_of(&pts).unwrap()).unwrap().values.0;
        // Each eigenvalue of a uniform unit ball is 1/5.
        for v in e {
            assert!((v - 0.2).abs() / 0.2 < 0.1, "{e:?}");
        }
    }

    #[test]
    fn single_neighbor_vote_is_plate() {
        let w = (-1.0f64).exp();
        let m = ball_vote_of(&[0.0; 3], &[[1.0, 0.0, 0.0]], 1.0);
        assert!((m.xx).abs() < 1e-15);
        assert!((m.yy - w).abs() < 1e-15 && (m.zz - w).abs() < 1e-15);
        let e = eigen_sym3(&m).unwrap().values.0;
        assert!((e[0] - w).abs() < 1e-15 && (e[1] - w).abs() < 1e-15 && e[2].abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_vote_is_pure_surface() {
        let m = ball_vote_of(&[0.0; 3], &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], 1.0);
        let s = saliency(&eigen_sym3(&m).unwrap().values).unwrap();
        assert!(close(s, [0.0, 1.0, 0.0], 1e-12), "{s:?}");
    }

    #[test]
    fn diffusion_requires_raw_votes() {
        let t = DescriptorTensor {
            m: Sym3::IDENTITY,
            kind: DescriptorKind::Cov,
            point: 0,
            scale: NeighborhoodSpec::Knn(5),
        };
        assert!(matches!(
            anisotropic_diffuse(&t, 0.1),
            Err(Error::KindMismatch { .. })
        ));
    }

    fn raw(m: Sym3) -> DescriptorTensor {
        DescriptorTensor {
            m,
            kind: DescriptorKind::VoteRaw,
            point: 0,
            scale: NeighborhoodSpec::Spherical(1.0),
        }
    }

    #[test]
    fn diffusion_keeps_isotropy() {
        let d = anisotropic_diffuse(&raw(Sym3::IDENTITY.scaled(2.0)), DEFAULT_DIFFUSION_DELTA).unwrap();
        let s = saliency(&eigen_sym3(&d.m).unwrap().values).unwrap();
        assert!(close(s, [0.0, 0.0, 1.0], 1e-12));
        assert_eq!(d.kind, DescriptorKind::VoteDiffused);
    }

    #[test]
    fn diffusion_keeps_eigenvectors() {
        let m = Sym3 {
            xx: 2.0,
            xy: 0.3,
            xz: 0.1,
            yy: 1.0,
            yz: -0.2,
            zz: 0.5,
        };
        let before = eigen_sym3(&m).unwrap();
        let after = eigen_sym3(&anisotropic_diffuse(&raw(m), 0.2).unwrap().m).unwrap();
        // Order reverses: the largest input eigenvalue becomes the smallest.
        for i in 0..3 {
            let dot: f64 = (0..3)
                .map(|k| before.vectors[i][k] * after.vectors[2 - i][k])
                .sum();
            assert!((dot.abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn diffusion_on_partitioning_line() {
        // Plate-vote sums with μ2 = 0 sit on the segment C_p = 3 C_l. Take
        // M = diag(0.75, 0.25, 0) (W = 1): T = I − M = diag(0.25, 0.75, 1).
        let t = raw(Sym3::diag(0.25, 0.75, 1.0));
        let before = saliency(&eigen_sym3(&t.m).unwrap().values).unwrap();
        assert!((before.cp - 3.0 * before.cl).abs() < 1e-12);
        let after = anisotropic_diffuse(&t, DEFAULT_DIFFUSION_DELTA).unwrap();
        let after = saliency(&eigen_sym3(&after.m).unwrap().values).unwrap();
        // Hand evaluation: λ/trace = (0.5, 0.375, 0.125), exp(−x/δ) descending.
        let v = [0.125f64, 0.375, 0.5].map(|x| (-x / DEFAULT_DIFFUSION_DELTA).exp());
        let s = v[0] + v[1] + v[2];
        let want = [(v[0] - v[1]) / s, 2.0 * (v[1] - v[2]) / s, 3.0 * v[2] / s];
        assert!(close(after, want, 1e-12), "{after:?} vs {want:?}");
        assert!(after.cl > before.cl);
    }

    #[test]
    fn diffused_segment_endpoints() {
        // Linear neighbourhood: T = diag(0, 1, 1); planar: T = diag(0.5, 0.5, 1).
        let line = anisotropic_diffuse(&raw(Sym3::diag(0.0, 1.0, 1.0)), DEFAULT_DIFFUSION_DELTA).unwrap();
        let line = saliency(&eigen_sym3(&line.m).unwrap().values).unwrap();
        assert!(line.cl > 0.99, "{line:?}");
        let plane = anisotropic_diffuse(&raw(Sym3::diag(0.5, 0.5, 1.0)), DEFAULT_DIFFUSION_DELTA).unwrap();
        let plane = saliency(&eigen_sym3(&plane.m).unwrap().values).unwrap();
        assert!(close(plane, [0.0, 0.93, 0.07], 0.005), "{plane:?}");
    }

    #[test]
    fn vote_get_not_supported() {
        let idx = SpatialIndex::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(
            point_saliency(&idx, 0, DescriptorKind::VoteGet, NeighborhoodSpec::Knn(3), 0.1),
            Err(Error::NotSupported(_))
        ));
    }

    #[test]
    fn small_neighbourhoods_are_degenerate() {
        let idx = SpatialIndex::new(vec![[0.0; 3], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]]).unwrap();
        let spec = NeighborhoodSpec::Spherical(1.0);
        assert!(covariance_tensor(&idx, 0, spec).unwrap().is_none());
        assert!(ball_vote_tensor(&idx, 0, spec).unwrap().is_none());
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                ]
            })
            .collect()
    }

    #[test]
    fn sweep_matches_single_scale_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = SpatialIndex::new(random_cloud(&mut rng, 600)).unwrap();
        for kind in [
            DescriptorKind::Cov,
            DescriptorKind::VoteRaw,
            DescriptorKind::VoteDiffused,
        ] {
            for p in [0, 17, 301] {
                let nbrs = idx.knn(idx.point(p), 40).unwrap();
                let cuts: Vec<Cut> = [10, 25, 40]
                    .iter()
                    .map(|&k| Cut {
                        count: k,
                        sigma: nbrs[k - 1].dist2.sqrt(),
                    })
                    .collect();
                let swept = sweep_saliency(&idx, p, &nbrs, &cuts, kind, 0.1).unwrap();
                for (cut, got) in cuts.iter().zip(swept) {
                    let want = point_saliency(&idx, p, kind, NeighborhoodSpec::Knn(cut.count), 0.1)
                        .unwrap()
                        .unwrap();
                    let got = got.unwrap();
                    assert!(close(got, want.as_array(), 1e-9), "{kind}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn rotation_invariance_of_saliency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_cloud(&mut rng, 400);
        let (a, b, c) = (0.4f64, -1.1f64, 2.3f64);
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
        let apply = |m: &[[f64; 3]; 3], p: &Point| -> Point {
            [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2])
        };
        let rotated: Vec<Point> = pts
            .iter()
            .map(|p| apply(&rx, &apply(&ry, &apply(&rz, p))))
            .collect();
        let i1 = SpatialIndex::new(pts).unwrap();
        let i2 = SpatialIndex::new(rotated).unwrap();
        for kind in [
            DescriptorKind::Cov,
            DescriptorKind::VoteRaw,
            DescriptorKind::VoteDiffused,
        ] {
            for p in (0..400).step_by(37) {
                let spec = NeighborhoodSpec::Knn(20);
                let s1 = point_saliency(&i1, p, kind, spec, 0.1).unwrap().unwrap();
                let s2 = point_saliency(&i2, p, kind, spec, 0.1).unwrap().unwrap();
                assert!(close(s1, s2.as_array(), 1e-6));
            }
        }
    }

    proptest! {
        #[test]
        fn partition_to_unity(l in prop::array::uniform3(0.0f64..1e3)) {
            prop_assume!(l.iter().sum::<f64>() > 1e-12);
            let s = sal(l);
            prop_assert!((s.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(s.as_array().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        }

        /// Plate-vote sums satisfy C_p ≥ 3·C_l: nothing lands beyond the segment
        /// from (0,1,0) to (0.25,0,0.75).
        #[test]
        fn raw_votes_stay_behind_partitioning_line(
            seed in any::<u64>(),
            n in 1usize..40,
            sigma in 0.05f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nbrs: Vec<Point> = (0..n)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let m = ball_vote_of(&[0.0; 3], &nbrs, sigma);
            if let Some(s) = saliency(&eigen_sym3(&m).unwrap().values) {
                prop_assert!(s.cp >= 3.0 * s.cl - 1e-9, "{:?}", s);
                prop_assert!(s.cl <= 0.25 + 1e-9);
            }
        }
    }
}
