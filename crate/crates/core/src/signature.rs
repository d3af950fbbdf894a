//! Barycentric projection of saliency maps and rasterized signatures.
//!
//! Each point is placed at `C_l·V_l + C_s·V_s + C_p·V_p` inside a fixed
//! equilateral reference triangle and splatted into the one pixel containing
//! it. The geometric signature `S_Gm` is a grayscale occupancy-density image;
//! the augmented signature `S_AgSm` paints each point in its semantic class
//! color. Pixel `(x, y)` covers `[x, x+1) × [y, y+1)` with `y` pointing down.
//!
//! For a canvas of `R` pixels the triangle has margin `m = R/32` and side
//! `s = R − 2m`; `V_l` is the top vertex at `(R/2, (R − h)/2)` with
//! `h = s·√3/2`, `V_s` is bottom right and `V_p` bottom left. At `R = 512`:
//! `V_l = (256, 48.154)`, `V_s = (496, 463.846)`, `V_p = (16, 463.846)`.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::SemanticScheme;
use crate::descriptors::{DescriptorKind, SaliencyMap};
use crate::error::{Error, Result};
use crate::multiscale::{Mode, PointGeometry};

pub const DEFAULT_RESOLUTION: u32 = 512;
pub const MIN_RESOLUTION: u32 = 32;
pub const MAX_RESOLUTION: u32 = 8192;

/// Fixed reference simplex in pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTriangle {
    pub v_l: [f64; 2],
    pub v_s: [f64; 2],
    pub v_p: [f64; 2],
    pub resolution: u32,
}

impl ReferenceTriangle {
    pub fn new(resolution: u32) -> Result<Self> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
            return Err(Error::Domain(format!(
                "resolution must lie in {MIN_RESOLUTION}..={MAX_RESOLUTION}, got {resolution}"
            )));
        }
        let r = resolution as f64;
        let m = r / 32.0;
        let side = r - 2.0 * m;
        let h = side * 3f64.sqrt() / 2.0;
        let top = (r - h) / 2.0;
        Ok(ReferenceTriangle {
            v_l: [r / 2.0, top],
            v_s: [r - m, top + h],
            v_p: [m, top + h],
            resolution,
        })
    }

    pub fn vertices(&self) -> [[f64; 2]; 3] {
        [self.v_l, self.v_s, self.v_p]
    }

    pub fn centroid(&self) -> [f64; 2] {
        [
            (self.v_l[0] + self.v_s[0] + self.v_p[0]) / 3.0,
            (self.v_l[1] + self.v_s[1] + self.v_p[1]) / 3.0,
        ]
    }

    pub fn height(&self) -> f64 {
        self.v_s[1] - self.v_l[1]
    }

    /// Euclidean distance from `p` to the closed triangle.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let [a, b, c] = self.vertices();
        let cross = |u: [f64; 2], v: [f64; 2], w: [f64; 2]| {
            (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])
        };
        let d1 = cross(a, b, p);
        let d2 = cross(b, c, p);
        let d3 = cross(c, a, p);
        let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
        let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
        if !(has_neg && has_pos) {
            return 0.0;
        }
        segment_distance(p, a, b)
            .min(segment_distance(p, b, c))
            .min(segment_distance(p, c, a))
    }

    /// Pixels whose center lies within half a pixel diagonal of the triangle,
    /// row-major. Every pixel that can receive a projected point is included.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.resolution as usize;
        let reach = std::f64::consts::SQRT_2 / 2.0 + 1e-9;
        let mut mask = vec![false; n * n];
        for y in 0..n {
            for x in 0..n {
                mask[y * n + x] = self.distance([x as f64 + 0.5, y as f64 + 0.5]) <= reach;
            }
        }
        mask
    }

    /// Pixel containing `p`, clamped to the canvas.
    pub fn pixel_of(&self, p: [f64; 2]) -> (usize, usize) {
        let max = self.resolution as f64 - 1.0;
        (
            p[0].floor().clamp(0.0, max) as usize,
            p[1].floor().clamp(0.0, max) as usize,
        )
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Convex combination of the triangle vertices weighted by the saliency map.
pub fn barycentric_project(s: &SaliencyMap, tri: &ReferenceTriangle) -> [f64; 2] {
    let [a, b, c] = tri.vertices();
    [
        s.cl * a[0] + s.cs * b[0] + s.cp * c[0],
        s.cl * a[1] + s.cs * b[1] + s.cp * c[1],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureKind {
    /// Grayscale occupancy density (`S_Gm`).
    Geometric,
    /// Class-colored (`S_AgSm`).
    Augmented,
}

impl SignatureKind {
    pub fn channels(self) -> usize {
        match self {
            SignatureKind::Geometric => 1,
            SignatureKind::Augmented => 3,
        }
    }
}

/// Sidecar metadata stored next to the PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureMeta {
    pub descriptor: DescriptorKind,
    pub mode: Mode,
    pub cloud: String,
    pub triangle_vertices: [[f64; 2]; 3],
    pub resolution: u32,
    pub seed: Option<u64>,
    /// Hash of the run configuration that produced the signature.
    #[serde(default)]
    pub config_hash: Option<String>,
    pub kind: SignatureKind,
    pub mask_pixels: usize,
}

/// What a signature was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSource {
    pub descriptor: DescriptorKind,
    pub mode: Mode,
    pub cloud: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub meta: SignatureMeta,
    /// Row-major, `channels` bytes per pixel.
    pixels: Vec<u8>,
    mask: Vec<bool>,
}

impl Signature {
    fn blank(tri: &ReferenceTriangle, kind: SignatureKind, source: &SignatureSource) -> Self {
        let mask = tri.mask();
        let n = tri.resolution as usize;
        Signature {
            meta: SignatureMeta {
                descriptor: source.descriptor,
                mode: source.mode,
                cloud: source.cloud.clone(),
                triangle_vertices: tri.vertices(),
                resolution: tri.resolution,
                seed: source.seed,
                config_hash: source.config_hash.clone(),
                kind,
                mask_pixels: mask.iter().filter(|&&m| m).count(),
            },
            pixels: vec![0; n * n * kind.channels()],
            mask,
        }
    }

    /// Wraps raw row-major pixels; everything outside the triangle mask must be 0.
    pub fn from_pixels(
        tri: &ReferenceTriangle,
        kind: SignatureKind,
        source: &SignatureSource,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let mut sig = Signature::blank(tri, kind, source);
        if pixels.len() != sig.pixels.len() {
            return Err(Error::Shape(format!(
                "{} pixel bytes for a {}x{} {:?} signature",
                pixels.len(),
                tri.resolution,
                tri.resolution,
                kind
            )));
        }
        for (px, &inside) in pixels.chunks(kind.channels()).zip(&sig.mask) {
            if !inside && px.iter().any(|&v| v != 0) {
                return Err(Error::Format("foreground pixel outside the triangle mask".into()));
            }
        }
        sig.pixels = pixels;
        Ok(sig)
    }

    pub fn resolution(&self) -> u32 {
        self.meta.resolution
    }

    pub fn kind(&self) -> SignatureKind {
        self.meta.kind
    }

    pub fn channels(&self) -> usize {
        self.meta.kind.channels()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Pixel value(s) at `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels();
        let i = (y * self.resolution() as usize + x) * c;
        &self.pixels[i..i + c]
    }

    /// Number of pixels with any non-zero channel.
    pub fn lit_pixels(&self) -> usize {
        self.pixels
            .chunks(self.channels())
            .filter(|px| px.iter().any(|&v| v != 0))
            .count()
    }
}

fn pixel_indices(points: &[PointGeometry], tri: &ReferenceTriangle) -> Vec<usize> {
    let n = tri.resolution as usize;
    points
        .par_iter()
        .map(|g| {
            let (x, y) = tri.pixel_of(barycentric_project(&g.saliency, tri));
            y * n + x
        })
        .collect()
}

/// Per-pixel point counts, row-major.
pub fn occupancy(points: &[PointGeometry], tri: &ReferenceTriangle) -> Vec<u32> {
    let n = tri.resolution as usize;
    let mut counts = vec![0u32; n * n];
    for i in pixel_indices(points, tri) {
        counts[i] += 1;
    }
    counts
}

/// `S_Gm`: each pixel is `ceil(255 · count / max_count)`, background 0.
pub fn render_geometric(
    points: &[PointGeometry],
    tri: &ReferenceTriangle,
    source: &SignatureSource,
) -> Result<Signature> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let counts = occupancy(points, tri);
    let max = *counts.iter().max().unwrap() as u64;
    let mut sig = Signature::blank(tri, SignatureKind::Geometric, source);
    for (px, &c) in sig.pixels.iter_mut().zip(&counts) {
        *px = (255 * c as u64).div_ceil(max) as u8;
    }
    Ok(sig)
}

/// `S_AgSm`: points painted in class color, ordered by (class id, point index),
/// later points covering earlier ones.
pub fn render_augmented(
    points: &[PointGeometry],
    labels: Option<&[u16]>,
    scheme: &SemanticScheme,
    tri: &ReferenceTriangle,
    source: &SignatureSource,
) -> Result<Signature> {
    let labels = labels.ok_or_else(|| Error::MissingLabels(source.cloud.clone()))?;
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if labels.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= scheme.len()) {
        return Err(Error::Vocabulary(format!("label index {bad} outside the scheme")));
    }
    let pix = pixel_indices(points, tri);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| (scheme.classes()[labels[i] as usize].id, i));
    let mut sig = Signature::blank(tri, SignatureKind::Augmented, source);
    for i in order {
        let p = pix[i] * 3;
        sig.pixels[p..p + 3].copy_from_slice(&scheme.color(labels[i]));
    }
    Ok(sig)
}

/// Sidecar path stored next to a signature PNG.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// PNG bytes and JSON sidecar text.
pub fn encode_signature(sig: &Signature) -> Result<(Vec<u8>, String)> {
    let mut png_bytes = Vec::new();
    {
        let n = sig.resolution();
        let mut enc = png::Encoder::new(&mut png_bytes, n, n);
        enc.set_color(match sig.kind() {
            SignatureKind::Geometric => png::ColorType::Grayscale,
            SignatureKind::Augmented => png::ColorType::Rgb,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(&sig.pixels)
            .map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    }
    let mut json = serde_json::to_string_pretty(&sig.meta)
        .map_err(|e| Error::Invariant(format!("serializing signature meta: {e}")))?;
    json.push('\n');
    Ok((png_bytes, json))
}

/// Rebuilds a signature from PNG bytes and sidecar text, checking that both
/// agree with each other and with the fixed reference triangle.
pub fn decode_signature(png_bytes: &[u8], sidecar: &str) -> Result<Signature> {
    let meta: SignatureMeta =
        serde_json::from_str(sidecar).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
    let tri = ReferenceTriangle::new(meta.resolution).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
    if meta.triangle_vertices != tri.vertices() {
        return Err(Error::Format(
            "sidecar triangle does not match the reference triangle".into(),
        ));
    }
    let limits = png::Limits { bytes: 1 << 28 };
    let decoder = png::Decoder::new_with_limits(Cursor::new(png_bytes), limits);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let info = reader.info();
    let expected_color = match meta.kind {
        SignatureKind::Geometric => png::ColorType::Grayscale,
        SignatureKind::Augmented => png::ColorType::Rgb,
    };
    if info.width != meta.resolution || info.height != meta.resolution {
        return Err(Error::Format(format!(
            "png is {}x{}, sidecar says {}",
            info.width, info.height, meta.resolution
        )));
    }
    if info.color_type != expected_color || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "png color {:?}/{:?} does not match a {:?} signature",
            info.color_type, info.bit_depth, meta.kind
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    let source = SignatureSource {
        descriptor: meta.descriptor,
        mode: meta.mode,
        cloud: meta.cloud.clone(),
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
    };
    let sig = Signature::from_pixels(&tri, meta.kind, &source, buf).map_err(|e| match e {
        Error::Shape(m) => Error::Format(m),
        other => other,
    })?;
    if meta.mask_pixels != sig.meta.mask_pixels {
        return Err(Error::Format(format!(
            "sidecar mask has {} pixels, reference triangle has {}",
            meta.mask_pixels, sig.meta.mask_pixels
        )));
    }
    Ok(sig)
}

/// Writes `<path>` (PNG) and its JSON sidecar atomically.
pub fn save_signature(sig: &Signature, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (png_bytes, json) = encode_signature(sig)?;
    crate::io::write_atomic(path, &png_bytes)?;
    crate::io::write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn load_signature(path: impl AsRef<Path>) -> Result<Signature> {
    let path = path.as_ref();
    let png_bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    decode_signature(&png_bytes, &json)
}
