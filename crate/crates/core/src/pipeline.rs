//! End-to-end runs: descriptors, scale integration, signatures, outputs, and
//! comparison of two runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{class_distribution, normalize, ClassCounts, ClassDistribution, PointCloud, ScaleRecord};
use crate::descriptors::{DescriptorKind, DEFAULT_DIFFUSION_DELTA};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricInput, MetricValues, DEFAULT_COLOR_BINS, DEFAULT_ENTROPY_BINS};
use crate::multiscale::{integrate, Mode, PointGeometry, ScaleRange};
use crate::signature::{
    render_augmented, render_geometric, ReferenceTriangle, Signature, SignatureSource, DEFAULT_RESOLUTION,
};
use crate::spatial::{NeighborhoodSpec, SpatialIndex};

/// Every knob of a run. Missing TOML keys take their defaults; a missing range
/// means the mode's default range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub descriptor: DescriptorKind,
    pub mode: Mode,
    pub range: Option<ScaleRange>,
    pub resolution: u32,
    pub seed: u64,
    pub normalize: bool,
    pub diffusion_delta: f64,
    pub entropy_bins: usize,
    pub color_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            descriptor: DescriptorKind::Cov,
            mode: Mode::Multiscale,
            range: None,
            resolution: DEFAULT_RESOLUTION,
            seed: 0,
            normalize: true,
            diffusion_delta: DEFAULT_DIFFUSION_DELTA,
            entropy_bins: DEFAULT_ENTROPY_BINS,
            color_bins: DEFAULT_COLOR_BINS,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn effective_range(&self) -> ScaleRange {
        self.range.unwrap_or_else(|| self.mode.default_range())
    }

    /// The same configuration with the range made explicit.
    pub fn resolved(&self) -> RunConfig {
        RunConfig {
            range: Some(self.effective_range()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.descriptor == DescriptorKind::VoteGet {
            return Err(Error::NotSupported("the vote_get descriptor"));
        }
        self.effective_range().validate()?;
        ReferenceTriangle::new(self.resolution)?;
        if !(self.diffusion_delta > 0.0 && self.diffusion_delta.is_finite()) {
            return Err(Error::Config(format!(
                "diffusion_delta must be positive, got {}",
                self.diffusion_delta
            )));
        }
        if self.entropy_bins == 0 || self.color_bins == 0 {
            return Err(Error::Config("histogram bin counts must be positive".into()));
        }
        Ok(())
    }

    /// Valid but questionable settings.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.mode == Mode::Optimal
            && matches!(
                self.descriptor,
                DescriptorKind::VoteRaw | DescriptorKind::VoteDiffused
            )
        {
            w.push(format!(
                "optimal-scale selection with the {} descriptor is known to produce anomalous signatures",
                self.descriptor
            ));
        }
        w
    }

    /// First 16 hex digits of the SHA-256 of the resolved configuration as JSON.
    pub fn hash(&self) -> String {
        hash_json(&self.resolved())
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("configuration serializes to JSON");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Everything produced by one run over one cloud.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub cloud_name: String,
    pub points: usize,
    pub labeled: bool,
    pub config: RunConfig,
    pub config_hash: String,
    pub scale_record: ScaleRecord,
    pub geometry: Vec<PointGeometry>,
    pub geometric: Signature,
    pub augmented: Option<Signature>,
    pub classes: Option<ClassDistribution>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn degenerate_points(&self) -> usize {
        self.geometry.iter().filter(|g| g.degenerate).count()
    }

    pub fn metric_input(&self) -> MetricInput<'_> {
        MetricInput {
            geometry: Some(&self.geometry),
            geometric: Some(&self.geometric),
            augmented: self.augmented.as_ref(),
            classes: self.classes.as_ref(),
        }
    }
}

/// Per-point geometry under `config`, with the scale record of the
/// normalization (identity when normalization is off).
pub fn compute_geometry(cloud: &PointCloud, config: &RunConfig) -> Result<(Vec<PointGeometry>, ScaleRecord)> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (work, mut record) = if config.normalize {
        let (n, r) = normalize(cloud)?;
        (n.points().to_vec(), r)
    } else {
        let (lo, hi) = cloud.bounding_box().ok_or(Error::EmptyCloud)?;
        (
            cloud.points().to_vec(),
            ScaleRecord {
                meters_per_unit: 1.0,
                bbox_min: lo,
                bbox_max: hi,
                seed: None,
            },
        )
    };
    record.seed = Some(config.seed);
    let index = SpatialIndex::new(work)?;
    let geometry = integrate(
        &index,
        config.descriptor,
        &config.effective_range(),
        config.mode,
        config.diffusion_delta,
    )?;
    Ok((geometry, record))
}

pub fn run(cloud: &PointCloud, config: &RunConfig) -> Result<RunOutput> {
    let (geometry, scale_record) = compute_geometry(cloud, config)?;
    let tri = ReferenceTriangle::new(config.resolution)?;
    let source = SignatureSource {
        descriptor: config.descriptor,
        mode: config.mode,
        cloud: cloud.name().to_string(),
        seed: Some(config.seed),
        config_hash: Some(config.hash()),
    };
    let geometric = render_geometric(&geometry, &tri, &source)?;
    let augmented = match cloud.labels() {
        Some(labels) => Some(render_augmented(
            &geometry,
            Some(labels),
            cloud.scheme(),
            &tri,
            &source,
        )?),
        None => None,
    };
    let classes = match cloud.labels() {
        Some(_) => Some(class_distribution(cloud)?),
        None => None,
    };
    Ok(RunOutput {
        cloud_name: cloud.name().to_string(),
        points: cloud.len(),
        labeled: cloud.labels().is_some(),
        config: config.resolved(),
        config_hash: config.hash(),
        scale_record,
        geometry,
        geometric,
        augmented,
        classes,
        warnings: config.warnings(),
    })
}

/// `index,C_l,C_s,C_p,E_geom,scale_used` rows with shortest round-trip floats.
pub fn geometry_csv(geometry: &[PointGeometry]) -> String {
    let mut out = String::with_capacity(geometry.len() * 80 + 40);
    out.push_str("index,C_l,C_s,C_p,E_geom,scale_used\n");
    for (i, g) in geometry.iter().enumerate() {
        let scale = if g.degenerate {
            "degenerate".to_string()
        } else {
            g.chosen_scale.to_string()
        };
        out.push_str(&format!(
            "{i},{},{},{},{},{scale}\n",
            g.saliency.cl, g.saliency.cs, g.saliency.cp, g.entropy
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRadius {
    pub normalized: f64,
    pub meters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub name: String,
    pub points: usize,
    pub labeled: bool,
}

/// Run manifest written next to the per-point CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub input: InputInfo,
    pub scale_record: ScaleRecord,
    /// Spherical radii in both unit systems; empty for knn ranges.
    pub metric_radii: Vec<MetricRadius>,
    pub class_distribution: Option<ClassDistribution>,
    pub degenerate_points: usize,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn of(out: &RunOutput) -> Self {
        let metric_radii = out
            .config
            .effective_range()
            .scales()
            .into_iter()
            .filter_map(|s| match s {
                NeighborhoodSpec::Spherical(r) => Some(MetricRadius {
                    normalized: r,
                    meters: out.scale_record.to_meters(r),
                }),
                NeighborhoodSpec::Knn(_) => None,
            })
            .collect();
        Manifest {
            config: out.config.clone(),
            config_hash: out.config_hash.clone(),
            input: InputInfo {
                name: out.cloud_name.clone(),
                points: out.points,
                labeled: out.labeled,
            },
            scale_record: out.scale_record.clone(),
            metric_radii,
            class_distribution: out.classes.clone(),
            degenerate_points: out.degenerate_points(),
            warnings: out.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes to JSON");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cloud: String,
    pub points: Option<usize>,
    pub labeled: bool,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(flatten)]
    pub metrics: MetricValues,
    pub p: Provenance,
    pub q: Provenance,
    /// Hash of the settings both runs share.
    pub config_hash: Option<String>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes to JSON");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("P: {}\nQ: {}\n", self.p.cloud, self.q.cloud);
        out.push_str(&format!("{:<14} {:>14}\n", "metric", "value"));
        for (name, v) in self.metrics.named() {
            let v = v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{name:<14} {v:>14}\n"));
        }
        out
    }
}

#[derive(Serialize)]
struct SharedSettings {
    descriptor: DescriptorKind,
    mode: Mode,
    range: ScaleRange,
    resolution: u32,
    diffusion_delta: f64,
    entropy_bins: usize,
    color_bins: usize,
}

fn shared_settings(c: &RunConfig) -> SharedSettings {
    SharedSettings {
        descriptor: c.descriptor,
        mode: c.mode,
        range: c.effective_range(),
        resolution: c.resolution,
        diffusion_delta: c.diffusion_delta,
        entropy_bins: c.entropy_bins,
        color_bins: c.color_bins,
    }
}

/// Fails unless two configurations can be compared.
pub fn check_compatible(a: &RunConfig, b: &RunConfig) -> Result<()> {
    let mut diffs = Vec::new();
    if a.descriptor != b.descriptor {
        diffs.push(format!("descriptor {} vs {}", a.descriptor, b.descriptor));
    }
    if a.mode != b.mode {
        diffs.push(format!("mode {} vs {}", a.mode, b.mode));
    }
    if a.effective_range() != b.effective_range() {
        diffs.push(format!(
            "range {} vs {}",
            a.effective_range(),
            b.effective_range()
        ));
    }
    if a.resolution != b.resolution {
        diffs.push(format!("resolution {} vs {}", a.resolution, b.resolution));
    }
    if a.diffusion_delta != b.diffusion_delta && a.descriptor == DescriptorKind::VoteDiffused {
        diffs.push(format!(
            "diffusion delta {} vs {}",
            a.diffusion_delta, b.diffusion_delta
        ));
    }
    if a.entropy_bins != b.entropy_bins || a.color_bins != b.color_bins {
        diffs.push("histogram bins differ".into());
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::IncompatibleConfig(diffs.join("; ")))
    }
}

fn provenance(out: &RunOutput) -> Provenance {
    Provenance {
        cloud: out.cloud_name.clone(),
        points: Some(out.points),
        labeled: out.labeled,
        config_hash: Some(out.config_hash.clone()),
    }
}

/// All six metrics between two runs.
pub fn compare(p: &RunOutput, q: &RunOutput) -> Result<ComparisonReport> {
    check_compatible(&p.config, &q.config)?;
    let metrics = compute_metrics(
        &p.metric_input(),
        &q.metric_input(),
        p.config.entropy_bins,
        p.config.color_bins,
    )?;
    Ok(ComparisonReport {
        metrics,
        p: provenance(p),
        q: provenance(q),
        config_hash: Some(hash_json(&shared_settings(&p.config))),
    })
}

/// Class metrics from two count tables.
pub fn compare_counts(
    p_name: &str,
    p: &ClassCounts,
    q_name: &str,
    q: &ClassCounts,
) -> Result<ComparisonReport> {
    let (pd, qd) = (p.distribution()?, q.distribution()?);
    let none = MetricInput {
        geometry: None,
        geometric: None,
        augmented: None,
        classes: None,
    };
    let metrics = compute_metrics(
        &MetricInput {
            classes: Some(&pd),
            ..none
        },
        &MetricInput {
            classes: Some(&qd),
            ..none
        },
        DEFAULT_ENTROPY_BINS,
        DEFAULT_COLOR_BINS,
    )?;
    let prov = |name: &str, c: &ClassCounts| Provenance {
        cloud: name.to_string(),
        points: usize::try_from(c.total()).ok(),
        labeled: true,
        config_hash: None,
    };
    Ok(ComparisonReport {
        metrics,
        p: prov(p_name, p),
        q: prov(q_name, q),
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{deforestation_pair, synth_scene, Scene};

    fn small_config() -> RunConfig {
        RunConfig {
            range: Some(ScaleRange::Knn {
                min: 10,
                max: 30,
                step: 10,
            }),
            resolution: 128,
            ..RunConfig::default()
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = RunConfig::from_toml("descriptor = \"vote_diffused\"\nmode = \"optimal\"\n").unwrap();
        assert_eq!(c.descriptor, DescriptorKind::VoteDiffused);
        assert_eq!(c.resolution, 512);
        assert_eq!(c.effective_range(), ScaleRange::DEFAULT_KNN);
        let full = RunConfig {
            range: Some(ScaleRange::Spherical {
                min: 0.01,
                max: 0.02,
                step: 0.005,
            }),
            ..c
        };
        assert_eq!(RunConfig::from_toml(&full.to_toml()).unwrap(), full);
        assert!(matches!(
            RunConfig::from_toml("colour = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hash_depends_on_settings() {
        let a = RunConfig::default();
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
        // An explicit default range hashes like the implicit one.
        let explicit = RunConfig {
            range: Some(ScaleRange::DEFAULT_SPHERICAL),
            ..a.clone()
        };
        assert_eq!(a.hash(), explicit.hash());
        assert_ne!(
            a.hash(),
            RunConfig {
                resolution: 256,
                ..a.clone()
            }
            .hash()
        );
    }

    #[test]
    fn vote_optimal_warns() {
        let c = RunConfig {
            descriptor: DescriptorKind::VoteRaw,
            mode: Mode::Optimal,
            ..RunConfig::default()
        };
        assert_eq!(c.warnings().len(), 1);
        assert!(RunConfig::default().warnings().is_empty());
        let get = RunConfig {
            descriptor: DescriptorKind::VoteGet,
            ..RunConfig::default()
        };
        assert!(matches!(get.validate(), Err(Error::NotSupported(_))));
    }

    #[test]
    fn self_comparison_is_identity() {
        let cloud = synth_scene(Scene::Mixed, 3_000, 0.02, 5).unwrap();
        let out = run(&cloud, &small_config()).unwrap();
        let r = compare(&out, &out).unwrap();
        assert_eq!(r.metrics.d_emd_info, Some(0.0));
        assert_eq!(r.metrics.s_ssim, Some(1.0));
        assert_eq!(r.metrics.d_bd_img, Some(0.0));
        assert_eq!(r.metrics.d_emd_img, Some(0.0));
        assert_eq!(r.metrics.l1_class, Some(0.0));
        assert_eq!(r.metrics.kl_sym_class, Some(0.0));
    }

    #[test]
    fn deforestation_is_detected_symmetrically() {
        let (t0, t1) = deforestation_pair(4_000, 0.02, 6).unwrap();
        let a = run(&t0, &small_config()).unwrap();
        let b = run(&t1, &small_config()).unwrap();
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        assert!(ab.metrics.l1_class.unwrap() > 0.0);
        assert!(ab.metrics.d_bd_img.unwrap() > 0.0);
        for ((_, x), (_, y)) in ab.metrics.named().iter().zip(ba.metrics.named()) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let cloud = synth_scene(Scene::Plane, 500, 0.02, 1).unwrap();
        let a = run(&cloud, &small_config()).unwrap();
        let b = run(
            &cloud,
            &RunConfig {
                resolution: 64,
                ..small_config()
            },
        )
        .unwrap();
        assert!(matches!(compare(&a, &b), Err(Error::IncompatibleConfig(_))));
    }

    #[test]
    fn unlabeled_runs_skip_label_metrics() {
        let cloud = synth_scene(Scene::Plane, 500, 0.02, 1).unwrap();
        let bare = PointCloud::unlabeled("bare", cloud.points().to_vec()).unwrap();
        let out = run(&bare, &small_config()).unwrap();
        assert!(out.augmented.is_none() && out.classes.is_none());
        let r = compare(&out, &out).unwrap();
        assert_eq!(r.metrics.s_ssim, Some(1.0));
        assert!(r.metrics.d_bd_img.is_none() && r.metrics.l1_class.is_none());
        let json = r.to_json();
        assert!(json.contains("\"d_bd_img\": null"));
    }

    #[test]
    fn csv_and_manifest_shape() {
        let cloud = synth_scene(Scene::Line, 800, 0.02, 2).unwrap();
        let out = run(
            &cloud,
            &RunConfig {
                resolution: 64,
                ..RunConfig::default()
            },
        )
        .unwrap();
        let csv = geometry_csv(&out.geometry);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("index,C_l,C_s,C_p,E_geom,scale_used"));
        assert_eq!(csv.lines().count(), 801);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        assert!(first[5] == "aggregated" || first[5] == "degenerate");
        let m = Manifest::of(&out);
        assert_eq!(m.metric_radii.len(), 3);
        assert!((m.metric_radii[1].meters - 0.01 * m.scale_record.meters_per_unit).abs() < 1e-12);
        assert_eq!(m.scale_record.seed, Some(0));
        let back: Manifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn counts_comparison() {
        let a2 =
            ClassCounts::parse("tree = 107485\nbuilding = 69097\nlow-vegetation = 38866\nroad = 51227\n")
                .unwrap();
        let a3 =
            ClassCounts::parse("tree = 135449\nbuilding = 69563\nlow-vegetation = 35512\nroad = 83372\n")
                .unwrap();
        let r = compare_counts("area2", &a2, "area3", &a3).unwrap();
        assert!((r.metrics.l1_class.unwrap() - 0.1609).abs() <= 5e-4);
        assert!((r.metrics.kl_sym_class.unwrap() - 0.0382).abs() <= 5e-4);
        assert!(r.metrics.s_ssim.is_none());
        assert!(r.to_table().contains("l1_class"));
    }
}
