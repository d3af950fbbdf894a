//! Point clouds, their semantic vocabulary, and the text formats they are read from.
//!
//! Two delimited formats are accepted:
//!
//! * `xyz-csv`: one point per line, `x,y,z`.
//! * `xyz-labeled-csv`: `x,y,z,label`, where `label` is an integer class id that
//!   must appear in the active [`SemanticScheme`].
//!
//! Blank lines and lines starting with `#` are skipped in both. Labels are stored
//! internally as indices into the scheme's class list, so the rest of the crate
//! never sees raw file ids.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: u32,
    pub name: String,
    pub color: [u8; 3],
}

/// Ordered class vocabulary with one display color per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticScheme {
    classes: Vec<ClassDef>,
}

impl Default for SemanticScheme {
    fn default() -> Self {
        let classes = [
            (0, "tree", [0x22, 0x8b, 0x22]),
            (1, "building", [0xd6, 0x27, 0x28]),
            (2, "low-vegetation", [0xbc, 0xbd, 0x22]),
            (3, "road", [0x1f, 0x77, 0xb4]),
        ]
        .into_iter()
        .map(|(id, name, color)| ClassDef {
            id,
            name: name.to_string(),
            color,
        })
        .collect();
        SemanticScheme { classes }
    }
}

impl SemanticScheme {
    pub const TREE: u16 = 0;
    pub const BUILDING: u16 = 1;
    pub const LOW_VEGETATION: u16 = 2;
    pub const ROAD: u16 = 3;

    pub fn new(classes: Vec<ClassDef>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Scheme("no classes defined".into()));
        }
        if classes.len() > u16::MAX as usize {
            return Err(Error::Scheme("too many classes".into()));
        }
        for (i, a) in classes.iter().enumerate() {
            for b in &classes[..i] {
                if a.id == b.id {
                    return Err(Error::Scheme(format!("duplicate class id {}", a.id)));
                }
                if a.name == b.name {
                    return Err(Error::Scheme(format!("duplicate class name `{}`", a.name)));
                }
                if a.color == b.color {
                    return Err(Error::Scheme(format!(
                        "classes `{}` and `{}` share a color",
                        b.name, a.name
                    )));
                }
            }
        }
        Ok(SemanticScheme { classes })
    }

    /// Parses the scheme text format, one class per line:
    ///
    /// ```text
    /// # id = "name", color = "#RRGGBB"
    /// 0 = "tree", color = "#228B22"
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut classes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            classes.push(parse_scheme_line(line).map_err(|message| Error::Parse {
                line: lineno + 1,
                message,
            })?);
        }
        SemanticScheme::new(classes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# id = \"name\", color = \"#RRGGBB\"\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{} = \"{}\", color = \"#{:02X}{:02X}{:02X}\"\n",
                c.id, c.name, c.color[0], c.color[1], c.color[2]
            ));
        }
        out
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of_id(&self, id: u32) -> Option<u16> {
        self.classes.iter().position(|c| c.id == id).map(|i| i as u16)
    }

    pub fn color(&self, index: u16) -> [u8; 3] {
        self.classes[index as usize].color
    }
}

fn parse_scheme_line(line: &str) -> std::result::Result<ClassDef, String> {
    let (id, rest) = line
        .split_once('=')
        .ok_or_else(|| "expected `<id> = \"<name>\", color = \"#RRGGBB\"`".to_string())?;
    let id: u32 = id
        .trim()
        .parse()
        .map_err(|_| format!("class id `{}` is not a non-negative integer", id.trim()))?;
    let (name, rest) = take_quoted(rest.trim_start())?;
    if name.is_empty() {
        return Err("class name is empty".into());
    }
    let rest = rest
        .trim_start()
        .strip_prefix(',')
        .ok_or("expected `,` after class name")?;
    let rest = rest
        .trim_start()
        .strip_prefix("color")
        .ok_or("expected `color`")?;
    let rest = rest.trim_start().strip_prefix('=').ok_or("expected `=`")?;
    let (color, rest) = take_quoted(rest.trim_start())?;
    if !rest.trim().is_empty() {
        return Err(format!("unexpected trailing text `{}`", rest.trim()));
    }
    Ok(ClassDef {
        id,
        name: name.to_string(),
        color: parse_hex_color(color)?,
    })
}

fn take_quoted(s: &str) -> std::result::Result<(&str, &str), String> {
    let body = s.strip_prefix('"').ok_or("expected a quoted string")?;
    let end = body.find('"').ok_or("unterminated string")?;
    Ok((&body[..end], &body[end + 1..]))
}

fn parse_hex_color(s: &str) -> std::result::Result<[u8; 3], String> {
    let hex = s
        .strip_prefix('#')
        .filter(|h| h.len() == 6 && h.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or_else(|| format!("color `{s}` is not of the form #RRGGBB"))?;
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).unwrap();
    Ok([channel(0), channel(2), channel(4)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloudFormat {
    #[serde(rename = "xyz-csv")]
    Xyz,
    #[serde(rename = "xyz-labeled-csv")]
    XyzLabeled,
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-csv" => Ok(CloudFormat::Xyz),
            "xyz-labeled" | "xyz-labeled-csv" => Ok(CloudFormat::XyzLabeled),
            other => Err(Error::Config(format!("unknown cloud format `{other}`"))),
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudFormat::Xyz => "xyz-csv",
            CloudFormat::XyzLabeled => "xyz-labeled-csv",
        })
    }
}

impl CloudFormat {
    /// Guesses the format from the arity of the first data row.
    pub fn detect(text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return match line.split(',').count() {
                3 => Ok(CloudFormat::Xyz),
                4 => Ok(CloudFormat::XyzLabeled),
                n => Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected 3 or 4 fields, found {n}"),
                }),
            };
        }
        Err(Error::EmptyCloud)
    }
}

/// An immutable set of 3D points with optional per-point semantic labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    name: String,
    points: Vec<Point>,
    labels: Option<Vec<u16>>,
    scheme: SemanticScheme,
}

impl PointCloud {
    /// `labels` are indices into `scheme.classes()`.
    pub fn new(
        name: impl Into<String>,
        points: Vec<Point>,
        labels: Option<Vec<u16>>,
        scheme: SemanticScheme,
    ) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(Error::Domain(format!(
                    "{} labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l as usize >= scheme.len()) {
                return Err(Error::Domain(format!(
                    "label index {bad} outside a scheme of {} classes",
                    scheme.len()
                )));
            }
        }
        if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Domain(format!("non-finite coordinate in {p:?}")));
        }
        Ok(PointCloud {
            name: name.into(),
            points,
            labels,
            scheme,
        })
    }

    pub fn unlabeled(name: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        Self::new(name, points, None, SemanticScheme::default())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn scheme(&self) -> &SemanticScheme {
        &self.scheme
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Returns a copy with every point mapped through `f`; labels are kept.
    pub fn map_points(&self, f: impl Fn(&Point) -> Point) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.points.iter().map(f).collect(),
            self.labels.clone(),
            self.scheme.clone(),
        )
    }

    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(mut lo, mut hi), p| {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            (lo, hi)
        }))
    }

    /// Points per unit area of the horizontal bounding rectangle (points/m² for
    /// clouds in meters). `None` when that rectangle has zero area.
    pub fn density(&self) -> Option<f64> {
        let (lo, hi) = self.bounding_box()?;
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        (area > 0.0).then(|| self.points.len() as f64 / area)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 40);
        for (i, p) in self.points.iter().enumerate() {
            match &self.labels {
                Some(labels) => {
                    let id = self.scheme.classes()[labels[i] as usize].id;
                    out.push_str(&format!("{:.6},{:.6},{:.6},{}\n", p[0], p[1], p[2], id));
                }
                None => out.push_str(&format!("{:.6},{:.6},{:.6}\n", p[0], p[1], p[2])),
            }
        }
        out
    }
}

/// Parses point rows. The point count equals the number of data rows.
pub fn parse_cloud(
    text: &str,
    format: CloudFormat,
    scheme: &SemanticScheme,
    name: &str,
) -> Result<PointCloud> {
    let arity = match format {
        CloudFormat::Xyz => 3,
        CloudFormat::XyzLabeled => 4,
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line_no = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != arity {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {arity} fields, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (a, field) in fields[..3].iter().enumerate() {
            p[a] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("`{field}` is not a finite number"),
                })?;
        }
        points.push(p);
        if arity == 4 {
            let id: i64 = fields[3].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("label `{}` is not an integer", fields[3]),
            })?;
            let index = u32::try_from(id)
                .ok()
                .and_then(|id| scheme.index_of_id(id))
                .ok_or(Error::UnknownClass { line: line_no, id })?;
            labels.push(index);
        }
    }
    let labels = (format == CloudFormat::XyzLabeled).then_some(labels);
    PointCloud::new(name, points, labels, scheme.clone())
}

/// Reads a cloud from disk; `format` of `None` detects it from the first data row.
pub fn load_cloud(
    path: impl AsRef<Path>,
    format: Option<CloudFormat>,
    scheme: &SemanticScheme,
) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format = match format {
        Some(f) => f,
        None => CloudFormat::detect(&text)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_cloud(&text, format, scheme, &name)
}

/// The uniform scale and translation applied by [`normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    /// Input units (meters) per normalized unit.
    pub meters_per_unit: f64,
    pub bbox_min: Point,
    pub bbox_max: Point,
    pub seed: Option<u64>,
}

impl ScaleRecord {
    pub fn to_meters(&self, normalized: f64) -> f64 {
        normalized * self.meters_per_unit
    }

    pub fn to_normalized(&self, meters: f64) -> f64 {
        meters / self.meters_per_unit
    }
}

/// Maps the bounding box into [-1, 1]³ with one isotropic scale, centering the box
/// midpoint at the origin. The longest axis spans exactly [-1, 1].
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, ScaleRecord)> {
    let (lo, hi) = cloud.bounding_box().ok_or(Error::EmptyCloud)?;
    let half = (0..3).map(|a| (hi[a] - lo[a]) / 2.0).fold(0.0, f64::max);
    if half <= 0.0 || !half.is_finite() {
        return Err(Error::DegenerateExtent);
    }
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let normalized = cloud.map_points(|p| {
        [
            ((p[0] - center[0]) / half).clamp(-1.0, 1.0),
            ((p[1] - center[1]) / half).clamp(-1.0, 1.0),
            ((p[2] - center[2]) / half).clamp(-1.0, 1.0),
        ]
    })?;
    Ok((
        normalized,
        ScaleRecord {
            meters_per_unit: half,
            bbox_min: lo,
            bbox_max: hi,
            seed: None,
        },
    ))
}

/// Seeded Bernoulli thinning: each point survives independently with probability
/// `fraction`. With a fixed seed, smaller fractions select subsets of larger ones.
pub fn downsample_uniform(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "sampling fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..cloud.len()).map(|_| rng.random::<f64>() < fraction).collect();
    let points = cloud
        .points
        .iter()
        .zip(&keep)
        .filter_map(|(p, &k)| k.then_some(*p))
        .collect();
    let labels = cloud.labels.as_ref().map(|labels| {
        labels
            .iter()
            .zip(&keep)
            .filter_map(|(l, &k)| k.then_some(*l))
            .collect()
    });
    PointCloud::new(cloud.name.clone(), points, labels, cloud.scheme.clone())
}

/// Per-class point counts, e.g. read from a `name = count` text file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub names: Vec<String>,
    pub counts: Vec<u64>,
}

impl ClassCounts {
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut counts = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let (name, count) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `<class name> = <count>`".into()))?;
            let name = name.trim().trim_matches('"').to_string();
            if name.is_empty() {
                return Err(parse_err("class name is empty".into()));
            }
            if names.contains(&name) {
                return Err(parse_err(format!("class `{name}` listed twice")));
            }
            let count: u64 = count
                .trim()
                .replace('_', "")
                .parse()
                .map_err(|_| parse_err(format!("`{}` is not a count", count.trim())))?;
            if counts.iter().try_fold(count, |acc: u64, &c| acc.checked_add(c)).is_none() {
                return Err(parse_err("total count overflows 64 bits".into()));
            }
            names.push(name);
            counts.push(count);
        }
        if names.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(ClassCounts { names, counts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Saturates at `u64::MAX`; parsed tables never reach it.
    pub fn total(&self) -> u64 {
        self.counts.iter().fold(0u64, |acc, &c| acc.saturating_add(c))
    }

    pub fn distribution(&self) -> Result<ClassDistribution> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyCloud);
        }
        Ok(ClassDistribution {
            names: self.names.clone(),
            fractions: self.counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }
}

/// Normalized class composition of a labeled cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub names: Vec<String>,
    pub fractions: Vec<f64>,
}

pub fn class_counts(cloud: &PointCloud) -> Result<ClassCounts> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::MissingLabels(cloud.name.clone()))?;
    let mut counts = vec![0u64; cloud.scheme.len()];
    for &l in labels {
        counts[l as usize] += 1;
    }
    Ok(ClassCounts {
        names: cloud.scheme.names(),
        counts,
    })
}

pub fn class_distribution(cloud: &PointCloud) -> Result<ClassDistribution> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    class_counts(cloud)?.distribution()
}
