use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use geosig::cloud::{downsample_uniform, load_cloud, ClassCounts, CloudFormat, PointCloud, SemanticScheme};
use geosig::descriptors::DescriptorKind;
use geosig::error::{Error, ErrorClass};
use geosig::io::write_atomic;
use geosig::multiscale::{Mode, ScaleRange};
use geosig::pipeline::{compare, compare_counts, geometry_csv, run, Manifest, RunConfig};
use geosig::signature::{save_signature, Signature};
use geosig::synth::{deforestation_pair, synth_scene, Scene};

#[derive(Parser)]
#[command(
    name = "geosig",
    version,
    about = "Barycentric geometric signatures of LiDAR point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-point saliency, entropy and scale as CSV, plus a run manifest.
    Compute {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Geometric signature PNG, and the augmented one when labels are present.
    Signature {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Registration-free metrics between two clouds, or two class-count files.
    Compare {
        p: PathBuf,
        q: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Treat P and Q as `name = count` class-count files.
        #[arg(long)]
        counts: bool,
        /// Configuration file for Q; defaults to the configuration of P.
        #[arg(long)]
        config_q: Option<PathBuf>,
        /// Write the JSON report here as well.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Seeded uniform thinning.
    Downsample {
        input: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        format: Option<CloudFormat>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Synthetic labeled test scenes.
    Synth {
        #[arg(long)]
        scene: Scene,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; deforestation-pair writes `<stem>_t0.csv` and `<stem>_t1.csv`.
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    descriptor: Option<DescriptorKind>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Neighborhood type of the default range: knn or spherical.
    #[arg(long)]
    neighborhood: Option<String>,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    kstep: Option<usize>,
    #[arg(long)]
    rmin: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    rstep: Option<f64>,
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    diffusion_delta: Option<f64>,
    /// Skip normalization to the unit box; scales are then in input units.
    #[arg(long)]
    no_normalize: bool,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Class scheme file (`id = "name", color = "#RRGGBB"` per line).
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    format: Option<CloudFormat>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = self.descriptor {
            c.descriptor = d;
        }
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(r) = self.resolution {
            c.resolution = r;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(d) = self.diffusion_delta {
            c.diffusion_delta = d;
        }
        if self.no_normalize {
            c.normalize = false;
        }
        let knn = self.kmin.is_some() || self.kmax.is_some() || self.kstep.is_some();
        let sph = self.rmin.is_some() || self.rmax.is_some() || self.rstep.is_some();
        let kind = match (knn, sph, self.neighborhood.as_deref()) {
            (true, true, _) => {
                return Err(
                    Error::Config("knn and spherical scale flags are mutually exclusive".into()).into(),
                )
            }
            (true, _, Some("spherical")) | (_, true, Some("knn")) => {
                return Err(Error::Config("scale flags contradict --neighborhood".into()).into())
            }
            (true, _, _) => Some("knn"),
            (_, true, _) => Some("spherical"),
            (_, _, Some(k @ ("knn" | "spherical"))) => Some(k),
            (_, _, Some(other)) => {
                return Err(Error::Config(format!("unknown neighborhood `{other}`")).into())
            }
            _ => None,
        };
        match kind {
            Some("knn") => {
                let base = match c.range {
                    Some(r @ ScaleRange::Knn { .. }) => r,
                    _ => ScaleRange::DEFAULT_KNN,
                };
                let ScaleRange::Knn { min, max, step } = base else {
                    unreachable!()
                };
                c.range = Some(ScaleRange::Knn {
                    min: self.kmin.unwrap_or(min),
                    max: self.kmax.unwrap_or(max),
                    step: self.kstep.unwrap_or(step),
                });
            }
            Some(_) => {
                let base = match c.range {
                    Some(r @ ScaleRange::Spherical { .. }) => r,
                    _ => ScaleRange::DEFAULT_SPHERICAL,
                };
                let ScaleRange::Spherical { min, max, step } = base else {
                    unreachable!()
                };
                c.range = Some(ScaleRange::Spherical {
                    min: self.rmin.unwrap_or(min),
                    max: self.rmax.unwrap_or(max),
                    step: self.rstep.unwrap_or(step),
                });
            }
            None => {}
        }
        c.validate()?;
        for w in c.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(c)
    }

    fn scheme(&self) -> anyhow::Result<SemanticScheme> {
        scheme(self.classes.as_deref())
    }
}

fn scheme(path: Option<&Path>) -> anyhow::Result<SemanticScheme> {
    Ok(match path {
        Some(p) => SemanticScheme::load(p)?,
        None => SemanticScheme::default(),
    })
}

fn read_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    RunConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into())
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    write_atomic(path, bytes)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load(input: &Path, args: &RunArgs) -> anyhow::Result<PointCloud> {
    Ok(load_cloud(input, args.format, &args.scheme()?)?)
}

fn save_png(sig: &Signature, path: &Path) -> anyhow::Result<()> {
    save_signature(sig, path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Compute {
            input,
            run: args,
            out,
        } => {
            let config = args.config()?;
            let cloud = load(&input, &args)?;
            let result = run(&cloud, &config)?;
            ensure_dir(&out)?;
            let stem = stem(&input);
            write(
                &out.join(format!("{stem}.geometry.csv")),
                geometry_csv(&result.geometry).as_bytes(),
            )?;
            write(
                &out.join(format!("{stem}.manifest.json")),
                Manifest::of(&result).to_json().as_bytes(),
            )?;
        }
        Command::Signature {
            input,
            run: args,
            out,
        } => {
            let config = args.config()?;
            let cloud = load(&input, &args)?;
            let result = run(&cloud, &config)?;
            ensure_dir(&out)?;
            let stem = stem(&input);
            save_png(&result.geometric, &out.join(format!("{stem}.geometric.png")))?;
            match &result.augmented {
                Some(sig) => save_png(sig, &out.join(format!("{stem}.augmented.png")))?,
                None => eprintln!(
                    "warning: {} has no labels; augmented signature skipped",
                    input.display()
                ),
            }
            write(
                &out.join(format!("{stem}.manifest.json")),
                Manifest::of(&result).to_json().as_bytes(),
            )?;
        }
        Command::Compare {
            p,
            q,
            run: args,
            counts,
            config_q,
            out,
            json,
        } => {
            let report = if counts {
                let (a, b) = (ClassCounts::load(&p)?, ClassCounts::load(&q)?);
                compare_counts(&stem(&p), &a, &stem(&q), &b)?
            } else {
                let config_p = args.config()?;
                let config_q = match &config_q {
                    Some(path) => {
                        let c = read_config(path)?;
                        c.validate()?;
                        c
                    }
                    None => config_p.clone(),
                };
                let (cp, cq) = (load(&p, &args)?, load(&q, &args)?);
                let rp = run(&cp, &config_p)?;
                let rq = run(&cq, &config_q)?;
                compare(&rp, &rq)?
            };
            if let Some(path) = &out {
                write(path, report.to_json().as_bytes())?;
            }
            if json {
                print!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Downsample {
            input,
            fraction,
            seed,
            classes,
            format,
            out,
        } => {
            let cloud = load_cloud(&input, format, &scheme(classes.as_deref())?)?;
            let thinned = downsample_uniform(&cloud, fraction, seed)?;
            eprintln!("kept {} of {} points", thinned.len(), cloud.len());
            write(&out, thinned.to_csv().as_bytes())?;
        }
        Command::Synth {
            scene,
            n,
            noise,
            seed,
            out,
        } => {
            if scene == Scene::DeforestationPair {
                let (t0, t1) = deforestation_pair(n, noise, seed)?;
                let dir = out.parent().unwrap_or(Path::new(""));
                let stem = stem(&out);
                write(&dir.join(format!("{stem}_t0.csv")), t0.to_csv().as_bytes())?;
                write(&dir.join(format!("{stem}_t1.csv")), t1.to_csv().as_bytes())?;
            } else {
                write(&out, synth_scene(scene, n, noise, seed)?.to_csv().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn threads(cli: &Cli) -> Option<usize> {
    match &cli.command {
        Command::Compute { run, .. } | Command::Signature { run, .. } | Command::Compare { run, .. } => {
            run.threads
        }
        _ => None,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Io) => 2,
        Some(ErrorClass::Internal) => 3,
        _ => 1,
    }
}

/// The error chain joined with `: `, dropping causes a message already quotes.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Some(n) = threads(&cli) {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
