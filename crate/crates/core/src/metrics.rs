//! Registration-free distances between two processed clouds.
//!
//! * `d_emd_info`: 1D earth mover's distance between the `E_geom` histograms.
//! * `s_ssim`: mean windowed SSIM of the two grayscale signatures over the
//!   triangle mask.
//! * `d_bd_img`: Bhattacharyya distance between joint RGB histograms of the two
//!   augmented signatures, masked.
//! * `d_emd_img`: mean of per-channel 1D EMDs of the augmented signatures.
//! * `l1_class`, `kl_sym_class`: L1 and Jeffreys divergence between class
//!   compositions.

use serde::{Deserialize, Serialize};

use crate::cloud::ClassDistribution;
use crate::error::{Error, Result};
use crate::multiscale::PointGeometry;
use crate::signature::{Signature, SignatureKind};

pub const DEFAULT_ENTROPY_BINS: usize = 64;
pub const DEFAULT_COLOR_BINS: usize = 32;
/// Levels per channel of the joint RGB histogram.
pub const BHATTACHARYYA_LEVELS: usize = 8;
pub const KL_EPSILON: f64 = 1e-9;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Normalized histogram with explicit bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    masses: Vec<f64>,
}

impl Histogram {
    /// Normalizes `weights` to unit mass.
    pub fn new(edges: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || edges.len() != weights.len() + 1 {
            return Err(Error::Binning(format!(
                "{} edges for {} bins",
                edges.len(),
                weights.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Binning(
                "edges must be finite and strictly ascending".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Binning("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Binning("histogram has no mass".into()));
        }
        Ok(Histogram {
            edges,
            masses: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
        if bins == 0 || !(lo < hi) {
            return Err(Error::Binning(format!(
                "cannot split [{lo}, {hi}] into {bins} bins"
            )));
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * w).collect();
        edges.push(hi);
        Ok(edges)
    }

    /// Bins `values` over `[lo, hi]` with `bins` equal bins; values outside are
    /// clamped into the end bins.
    pub fn of_values(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let edges = Self::uniform_edges(lo, hi, bins)?;
        let mut counts = vec![0.0; bins];
        let scale = bins as f64 / (hi - lo);
        for v in values {
            let b = ((v - lo) * scale).floor();
            let b = if b.is_nan() {
                0
            } else {
                b.clamp(0.0, (bins - 1) as f64) as usize
            };
            counts[b] += 1.0;
        }
        Histogram::new(edges, counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Histogram of `E_geom` over `[0, ln 3]`.
pub fn entropy_histogram(points: &[PointGeometry], bins: usize) -> Result<Histogram> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Histogram::of_values(points.iter().map(|g| g.entropy), 0.0, 3f64.ln(), bins)
}

/// Earth mover's distance between histograms on the same bins, with ground
/// distance between bin centers.
pub fn emd_1d(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.edges != h2.edges {
        return Err(Error::Binning("histograms have different bin edges".into()));
    }
    let centers = h1.centers();
    let mut cdf = 0.0;
    let mut total = 0.0;
    for i in 0..h1.bins() - 1 {
        cdf += h1.masses[i] - h2.masses[i];
        total += cdf.abs() * (centers[i + 1] - centers[i]);
    }
    Ok(total)
}

pub fn d_emd_info(p: &[PointGeometry], q: &[PointGeometry], bins: usize) -> Result<f64> {
    emd_1d(&entropy_histogram(p, bins)?, &entropy_histogram(q, bins)?)
}

fn check_pair(a: &Signature, b: &Signature, kind: SignatureKind) -> Result<()> {
    if a.kind() != kind || b.kind() != kind {
        return Err(Error::Shape(format!(
            "expected two {kind:?} signatures, got {:?} and {:?}",
            a.kind(),
            b.kind()
        )));
    }
    if a.resolution() != b.resolution() {
        return Err(Error::Shape(format!(
            "resolutions differ: {} vs {}",
            a.resolution(),
            b.resolution()
        )));
    }
    if a.mask() != b.mask() {
        return Err(Error::Shape("triangle masks differ".into()));
    }
    Ok(())
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut g = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    g
}

/// Gaussian-weighted local mean; the window is clipped at the borders and its
/// weights renormalized.
fn blur(img: &[f64], n: usize, taps: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for k in -r..=r {
                    let (xx, yy) = if horizontal {
                        (x as isize + k, y as isize)
                    } else {
                        (x as isize, y as isize + k)
                    };
                    if xx < 0 || yy < 0 || xx >= n as isize || yy >= n as isize {
                        continue;
                    }
                    let w = taps[(k + r) as usize];
                    acc += w * src[yy as usize * n + xx as usize];
                    wsum += w;
                }
                out[y * n + x] = acc / wsum;
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Mean SSIM over `mask` of two square grayscale images.
pub fn ssim_gray(a: &[u8], b: &[u8], n: usize, mask: &[bool]) -> Result<f64> {
    if a.len() != n * n || b.len() != n * n || mask.len() != n * n {
        return Err(Error::Shape("image and mask sizes disagree".into()));
    }
    let taps = gaussian_taps();
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = blur(&fa, n, &taps);
    let mu_b = blur(&fb, n, &taps);
    let aa = blur(&prod(&fa, &fa), n, &taps);
    let bb = blur(&prod(&fb, &fb), n, &taps);
    let ab = blur(&prod(&fa, &fb), n, &taps);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n * n {
        if !mask[i] {
            continue;
        }
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Shape("mask is empty".into()));
    }
    Ok(total / count as f64)
}

/// SSIM between two geometric signatures.
pub fn ssim(a: &Signature, b: &Signature) -> Result<f64> {
    check_pair(a, b, SignatureKind::Geometric)?;
    ssim_gray(a.pixels(), b.pixels(), a.resolution() as usize, a.mask())
}

fn joint_color_counts(sig: &Signature) -> (Vec<u64>, u64) {
    let levels = BHATTACHARYYA_LEVELS;
    let shift = 8 - levels.trailing_zeros();
    let mut counts = vec![0u64; levels * levels * levels];
    let mut total = 0;
    for (px, &inside) in sig.pixels().chunks(3).zip(sig.mask()) {
        if inside {
            let [r, g, b] = [px[0], px[1], px[2]].map(|v| (v >> shift) as usize);
            counts[(r * levels + g) * levels + b] += 1;
            total += 1;
        }
    }
    (counts, total)
}

/// Bhattacharyya distance `sqrt(1 − BC)` between masked joint RGB histograms.
pub fn d_bd_img(a: &Signature, b: &Signature) -> Result<f64> {
    check_pair(a, b, SignatureKind::Augmented)?;
    let (ca, na) = joint_color_counts(a);
    let (cb, nb) = joint_color_counts(b);
    if na == 0 || nb == 0 {
        return Err(Error::Shape("mask is empty".into()));
    }
    let overlap: f64 = ca.iter().zip(&cb).map(|(&x, &y)| ((x * y) as f64).sqrt()).sum();
    let bc = overlap / ((na as f64) * (nb as f64)).sqrt();
    Ok((1.0 - bc).max(0.0).sqrt())
}

fn channel_histogram(sig: &Signature, channel: usize, bins: usize) -> Result<Histogram> {
    let values = sig
        .pixels()
        .chunks(3)
        .zip(sig.mask())
        .filter(|(_, &inside)| inside)
        .map(|(px, _)| px[channel] as f64 / 255.0);
    Histogram::of_values(values, 0.0, 1.0, bins)
}

/// Mean over R, G, B of the 1D EMD between masked channel histograms.
pub fn d_emd_img(a: &Signature, b: &Signature, bins: usize) -> Result<f64> {
    check_pair(a, b, SignatureKind::Augmented)?;
    let mut total = 0.0;
    for c in 0..3 {
        total += emd_1d(&channel_histogram(a, c, bins)?, &channel_histogram(b, c, bins)?)?;
    }
    Ok(total / 3.0)
}

/// `q`'s fractions reordered to `p`'s class order.
fn aligned(p: &ClassDistribution, q: &ClassDistribution) -> Result<Vec<f64>> {
    if p.names.len() != q.names.len() {
        return Err(Error::Vocabulary(format!(
            "{} classes vs {}",
            p.names.len(),
            q.names.len()
        )));
    }
    p.names
        .iter()
        .map(|name| {
            q.names
                .iter()
                .position(|n| n == name)
                .map(|i| q.fractions[i])
                .ok_or_else(|| Error::Vocabulary(format!("class `{name}` missing from the second cloud")))
        })
        .collect()
}

/// `Σ |p_i − q_i|`, in `[0, 2]`.
pub fn class_l1(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    let qa = aligned(p, q)?;
    Ok(p.fractions.iter().zip(&qa).map(|(a, b)| (a - b).abs()).sum())
}

/// Jeffreys divergence `Σ (p_i − q_i) ln(p_i / q_i)`, with every fraction
/// smoothed to `(f + ε) / (1 + n·ε)`.
pub fn class_kl_sym(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    let qa = aligned(p, q)?;
    let n = p.fractions.len() as f64;
    let smooth = |f: f64| (f + KL_EPSILON) / (1.0 + n * KL_EPSILON);
    Ok(p.fractions
        .iter()
        .zip(&qa)
        .map(|(&a, &b)| {
            let (a, b) = (smooth(a), smooth(b));
            (a - b) * (a / b).ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// The six comparison values. A value is `None` when its inputs are missing,
/// e.g. image and class metrics for unlabeled clouds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub d_emd_info: Option<f64>,
    pub s_ssim: Option<f64>,
    pub d_bd_img: Option<f64>,
    pub d_emd_img: Option<f64>,
    pub l1_class: Option<f64>,
    pub kl_sym_class: Option<f64>,
}

impl MetricValues {
    pub fn named(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("d_emd_info", self.d_emd_info),
            ("s_ssim", self.s_ssim),
            ("d_bd_img", self.d_bd_img),
            ("d_emd_img", self.d_emd_img),
            ("l1_class", self.l1_class),
            ("kl_sym_class", self.kl_sym_class),
        ]
    }
}

/// Everything the metrics need from one processed cloud.
#[derive(Debug, Clone, Copy)]
pub struct MetricInput<'a> {
    pub geometry: Option<&'a [PointGeometry]>,
    pub geometric: Option<&'a Signature>,
    pub augmented: Option<&'a Signature>,
    pub classes: Option<&'a ClassDistribution>,
}

pub fn compute_metrics(
    p: &MetricInput<'_>,
    q: &MetricInput<'_>,
    entropy_bins: usize,
    color_bins: usize,
) -> Result<MetricValues> {
    let mut m = MetricValues::default();
    if let (Some(a), Some(b)) = (p.geometry, q.geometry) {
        m.d_emd_info = Some(d_emd_info(a, b, entropy_bins)?);
    }
    if let (Some(a), Some(b)) = (p.geometric, q.geometric) {
        m.s_ssim = Some(ssim(a, b)?);
    }
    if let (Some(a), Some(b)) = (p.augmented, q.augmented) {
        m.d_bd_img = Some(d_bd_img(a, b)?);
        m.d_emd_img = Some(d_emd_img(a, b, color_bins)?);
    }
    if let (Some(a), Some(b)) = (p.classes, q.classes) {
        m.l1_class = Some(class_l1(a, b)?);
        m.kl_sym_class = Some(class_kl_sym(a, b)?);
    }
    Ok(m)
}
