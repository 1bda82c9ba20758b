//! Subcommands of the `monet` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use monet::geodesic::{geodesic_distance, geodesic_distance_exact, weights_from_distance, GeodesicConfig};
use monet::graphcut::{graphcut_refine, GraphCutConfig};
use monet::io::{
    decode_scribbles, encode_nrrd, encode_scribbles, read_label_map, read_nrrd, read_prob_map, read_volume,
    write_f32, write_label_map, write_prob_map, write_volume, NrrdHeader, SampleType, Samples,
};
use monet::metrics::write_reports;
use monet::model::{pretrain_offline, MonetConfig, MonetParams};
use monet::session::{PipelineConfig, RefineOverrides, Session, SessionOptions};
use monet::sim::{
    corrupt_segmentation, make_phantom, synthesize_scribbles, CorruptionSpec, PhantomSpec, ScribblerConfig,
};
use monet::volume::{Connectivity, Dims, ScribbleSet, Volume};
use rand::SeedableRng;

use crate::scribble_json::ScribbleFile;
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "monet", version, about = "Scribble-driven refinement of 3D segmentations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Re-encode an image or a scribble file.
    Convert(ConvertArgs),
    /// Geodesic distance and weight maps from scribbles.
    Geodesic(GeodesicArgs),
    /// Smooth a probability map into a label map with a graph cut.
    Graphcut(GraphcutArgs),
    /// Generate a synthetic phantom and a corrupted initial segmentation.
    Phantom(PhantomArgs),
    /// Place corrective scribbles where a prediction disagrees with the truth.
    ScribbleSim(ScribbleSimArgs),
    /// Run refinement rounds and report per-round metrics.
    Refine(Box<RefineArgs>),
    /// Pre-train network parameters on labeled volumes.
    Pretrain(PretrainArgs),
    /// Serve annotation sessions over HTTP.
    Serve(ServeArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => convert(a),
        Command::Geodesic(a) => geodesic(a),
        Command::Graphcut(a) => graphcut(a),
        Command::Phantom(a) => phantom(a),
        Command::ScribbleSim(a) => scribble_sim(a),
        Command::Refine(a) => refine(*a),
        Command::Pretrain(a) => pretrain(a),
        Command::Serve(a) => serve(a),
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a scribble file: JSON when the name ends in `.json`, binary
/// otherwise.
pub fn read_scribbles_any(path: &Path) -> Result<ScribbleSet> {
    let bytes = fs::read(path).map_err(|e| monet::Error::Io { path: path.into(), source: e })?;
    if is_json(path) {
        let f: ScribbleFile =
            serde_json::from_slice(&bytes).with_context(|| format!("{}: bad scribble JSON", path.display()))?;
        Ok(f.to_set()?)
    } else {
        Ok(decode_scribbles(&bytes)?)
    }
}

pub fn write_scribbles_any(s: &ScribbleSet, path: &Path) -> Result<()> {
    let bytes = if is_json(path) {
        serde_json::to_vec(&ScribbleFile::from_set(s))?
    } else {
        encode_scribbles(s)
    };
    write_file(path, &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| monet::Error::Io { path: path.into(), source: e })?;
    Ok(())
}

fn check_dims(what: &str, a: Dims, b: Dims) -> Result<()> {
    Ok(a.check_same(&b, what)?)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SampleKind {
    Float,
    Short,
    Uchar,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Target sample type for images; conversions must be lossless.
    #[arg(long, value_enum)]
    pub to: Option<SampleKind>,
}

fn convert(a: ConvertArgs) -> Result<()> {
    let scribble_ext = |p: &Path| is_json(p) || p.extension().is_some_and(|e| e.eq_ignore_ascii_case("scrb"));
    if scribble_ext(&a.input) {
        if a.to.is_some() {
            bail!(monet::Error::Validation("--to applies to images only".into()));
        }
        let s = read_scribbles_any(&a.input)?;
        return write_scribbles_any(&s, &a.output);
    }
    let img = read_nrrd(&a.input)?;
    let samples = match a.to {
        None => img.samples,
        Some(kind) => cast_samples(&img.samples, kind)?,
    };
    let header = NrrdHeader {
        sample_type: match samples {
            Samples::Float32(_) => SampleType::Float32,
            Samples::Int16(_) => SampleType::Int16,
            Samples::Uint8(_) => SampleType::Uint8,
        },
        ..img.header
    };
    write_file(&a.output, &encode_nrrd(&header, &samples))
}

/// Converts samples, refusing any value the target cannot hold exactly.
fn cast_samples(s: &Samples, kind: SampleKind) -> Result<Samples> {
    let values = s.to_f32();
    let exact = |lo: f32, hi: f32| -> Result<()> {
        match values.iter().position(|&v| v.fract() != 0.0 || v < lo || v > hi) {
            Some(i) => bail!(monet::Error::Validation(format!(
                "sample {} at index {i} does not fit the target type",
                values[i]
            ))),
            None => Ok(()),
        }
    };
    Ok(match kind {
        SampleKind::Float => Samples::Float32(values),
        SampleKind::Short => {
            exact(i16::MIN as f32, i16::MAX as f32)?;
            Samples::Int16(values.iter().map(|&v| v as i16).collect())
        }
        SampleKind::Uchar => {
            exact(0.0, 255.0)?;
            Samples::Uint8(values.iter().map(|&v| v as u8).collect())
        }
    })
}

#[derive(Debug, Args)]
pub struct GeodesicArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Binary (`.scrb`) or JSON scribble file.
    #[arg(long)]
    pub scribbles: PathBuf,
    /// Output distance map (float, `inf` where unreachable).
    #[arg(long)]
    pub distance: Option<PathBuf>,
    /// Output weight map `exp(-D / tau)`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    #[arg(long, default_value_t = 4)]
    pub passes: usize,
    /// 6 or 26.
    #[arg(long, default_value_t = 26)]
    pub connectivity: u32,
    #[arg(long, default_value_t = 0.0)]
    pub spatial_weight: f64,
    /// Use the exact priority-queue solver instead of raster scans.
    #[arg(long)]
    pub exact: bool,
    /// Use intensities as stored instead of rescaling them to [0, 1].
    #[arg(long)]
    pub no_normalize: bool,
}

fn prepared(v: Volume, no_normalize: bool) -> Volume {
    if no_normalize {
        v
    } else {
        v.normalized()
    }
}

fn geodesic(a: GeodesicArgs) -> Result<()> {
    if a.distance.is_none() && a.weights.is_none() {
        bail!(monet::Error::Validation("nothing to write: pass --distance and/or --weights".into()));
    }
    let v = prepared(read_volume(&a.volume)?, a.no_normalize);
    let s = read_scribbles_any(&a.scribbles)?;
    check_dims("scribbles", v.dims(), s.dims())?;
    let cfg = GeodesicConfig {
        tau: a.tau,
        connectivity: Connectivity::from_count(a.connectivity)?,
        passes: a.passes,
        spatial_weight: a.spatial_weight,
    };
    let seeds = s.indices();
    let d = if a.exact {
        geodesic_distance_exact(&v, &seeds, &cfg)?
    } else {
        geodesic_distance(&v, &seeds, &cfg)?
    };
    if let Some(p) = &a.distance {
        write_f32(v.dims(), v.spacing(), &d.to_f32(), p)?;
    }
    if let Some(p) = &a.weights {
        let w = weights_from_distance(&d, cfg.tau)?;
        write_f32(v.dims(), v.spacing(), &w.to_f32(), p)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GraphcutArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Foreground probability map.
    #[arg(long)]
    pub prob: PathBuf,
    /// Hard constraints; none when omitted.
    #[arg(long)]
    pub scribbles: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    #[arg(long)]
    pub no_normalize: bool,
}

fn graphcut(a: GraphcutArgs) -> Result<()> {
    let v = prepared(read_volume(&a.volume)?, a.no_normalize);
    let p = read_prob_map(&a.prob)?;
    check_dims("probability map", v.dims(), p.dims())?;
    let s = match &a.scribbles {
        Some(path) => read_scribbles_any(path)?,
        None => ScribbleSet::new(v.dims()),
    };
    check_dims("scribbles", v.dims(), s.dims())?;
    let cfg = GraphCutConfig {
        lambda: a.lambda,
        sigma: a.sigma,
        ..GraphCutConfig::default()
    };
    let mut labels = graphcut_refine(&p, &v, &s, &cfg)?;
    labels.set_spacing(v.spacing());
    write_label_map(&labels, &a.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out_volume: PathBuf,
    #[arg(long)]
    pub out_gt: PathBuf,
    /// Corrupted initial segmentation.
    #[arg(long)]
    pub out_init_seg: Option<PathBuf>,
    /// Initial foreground probability matching `--out-init-seg`.
    #[arg(long)]
    pub out_init_prob: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub blobs: usize,
    #[arg(long, default_value_t = 6.0)]
    pub radius_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub radius_max: f64,
    #[arg(long, default_value_t = 0.6)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let spec = PhantomSpec {
        dims: Dims::cube(a.size)?,
        blobs: a.blobs,
        radius: (a.radius_min, a.radius_max),
        contrast: a.contrast,
        noise_std: a.noise,
        seed: a.seed,
    };
    let p = make_phantom(&spec)?;
    write_volume(&p.volume, &a.out_volume)?;
    write_label_map(&p.ground_truth, &a.out_gt)?;
    if a.out_init_seg.is_some() || a.out_init_prob.is_some() {
        let c = corrupt_segmentation(&p.ground_truth, &CorruptionSpec::calibrated(a.seed))?;
        if let Some(path) = &a.out_init_seg {
            write_label_map(&c.seg, path)?;
        }
        if let Some(path) = &a.out_init_prob {
            write_prob_map(&c.prob, path)?;
        }
        eprintln!("initial dice {:.4}", c.dice);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScribbleSimArgs {
    /// Current prediction.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Scribbles placed so far; the output contains these plus the new ones.
    #[arg(long)]
    pub existing: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON scribbler settings; flags below override individual fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_per_round: Option<usize>,
    #[arg(long)]
    pub min_component: Option<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| monet::Error::Io { path: path.into(), source: e })?;
    serde_json::from_slice(&bytes).with_context(|| format!("{}: bad JSON", path.display()))
}

fn scribble_sim(a: ScribbleSimArgs) -> Result<()> {
    let mut cfg: ScribblerConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ScribblerConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_per_round {
        cfg.max_per_round = m;
    }
    if let Some(m) = a.min_component {
        cfg.min_component = m;
    }
    let pred = read_label_map(&a.pred)?;
    let gt = read_label_map(&a.gt)?;
    let mut all = match &a.existing {
        Some(p) => read_scribbles_any(p)?,
        None => ScribbleSet::new(pred.dims()),
    };
    check_dims("existing scribbles", pred.dims(), all.dims())?;
    let new = synthesize_scribbles(&pred, &gt, &cfg, &all)?;
    all.merge(&new)?;
    write_scribbles_any(&all, &a.out)
}

/// Network settings shared by `refine`, `pretrain` and `serve`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Hyperparameter file (`key = value` lines).
    #[arg(long = "config")]
    pub config: Option<PathBuf>,
    /// Single-scale ablation: one kernel of the patch size.
    #[arg(long)]
    pub no_multiscale: bool,
    /// Training epochs per round (or in total, for pre-training).
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ModelArgs {
    fn monet_config(&self) -> Result<MonetConfig> {
        let mut cfg = match &self.config {
            Some(p) => MonetConfig::load(p)?,
            None if self.no_multiscale => MonetConfig::no_multiscale(),
            None => MonetConfig::default(),
        };
        if self.config.is_some() && self.no_multiscale {
            cfg.filters_per_scale *= cfg.scales.len();
            cfg.scales = vec![cfg.patch_size];
        }
        Ok(cfg)
    }
}

/// Pipeline settings shared by `refine` and `serve`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    #[arg(long, default_value_t = 2.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.8)]
    pub zeta: f64,
    #[arg(long, default_value_t = 0.98)]
    pub eta: f64,
    /// Checkpoint to start from instead of random initialization.
    #[arg(long)]
    pub model_in: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PipelineArgs {
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut monet = self.model.monet_config()?;
        if let Some(e) = self.model.epochs {
            monet.online_epochs = e;
        }
        let base = PipelineConfig {
            monet,
            ..PipelineConfig::default()
        };
        let cfg = base.with(&RefineOverrides {
            tau: Some(self.tau),
            epochs: None,
            lambda: Some(self.lambda),
            sigma: Some(self.sigma),
            zeta: Some(self.zeta),
            eta: Some(self.eta),
        });
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn checkpoint(&self) -> Result<Option<MonetParams<f32>>> {
        self.model_in.as_ref().map(|p| Ok(MonetParams::load(p)?)).transpose()
    }
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub init_seg: PathBuf,
    #[arg(long)]
    pub init_prob: PathBuf,
    /// Ground truth; enables metrics and the synthetic scribbler.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Scribbles present before the first round.
    #[arg(long)]
    pub scribbles: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    /// JSON scribbler settings.
    #[arg(long)]
    pub scribbler_config: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Where to save the parameters after the last round.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Report rows (JSON lines); standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Final label map.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Final foreground probability map.
    #[arg(long)]
    pub out_prob: Option<PathBuf>,
    /// Record stage wall times in the report (makes it run-dependent).
    #[arg(long)]
    pub timings: bool,
}

fn refine(a: RefineArgs) -> Result<()> {
    let cfg = a.pipeline.pipeline_config()?;
    let volume = read_volume(&a.volume)?;
    let init_seg = read_label_map(&a.init_seg)?;
    let init_prob = read_prob_map(&a.init_prob)?;
    let gt = a.gt.as_ref().map(read_label_map).transpose()?;
    let scribbler = match &a.scribbler_config {
        Some(p) => read_json(p)?,
        None => ScribblerConfig {
            seed: a.pipeline.seed,
            ..ScribblerConfig::default()
        },
    };
    let opts = SessionOptions {
        config: cfg,
        seed: a.pipeline.seed,
        params: a.pipeline.checkpoint()?,
        ground_truth: gt,
        record_timings: a.timings,
    };
    let mut session = Session::new("cli", volume, init_seg, init_prob, opts)?;
    if let Some(p) = &a.scribbles {
        session.add_scribbles(&read_scribbles_any(p)?)?;
    }
    if session.ground_truth().is_some() {
        session.run_synthetic(&scribbler, a.rounds)?;
    } else {
        for _ in 0..a.rounds {
            session.refine_round(&RefineOverrides::default())?;
        }
    }

    match &a.report {
        Some(p) => {
            let mut buf = Vec::new();
            write_reports(&mut buf, session.reports())?;
            write_file(p, &buf)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_reports(&mut lock, session.reports())?;
            lock.flush()?;
        }
    }
    if let Some(p) = &a.out {
        write_label_map(session.current_labels(), p)?;
    }
    if let Some(p) = &a.out_prob {
        let prob = session.result().map_or(session.init_prob(), |r| &r.prob);
        write_prob_map(prob, p)?;
    }
    if let Some(p) = &a.model_out {
        session.params().save(p)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Training volume; repeat once per volume.
    #[arg(long, required = true)]
    pub volume: Vec<PathBuf>,
    /// Ground truth for each `--volume`, in the same order.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub model_out: PathBuf,
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    if a.volume.len() != a.gt.len() {
        bail!(monet::Error::Validation(format!(
            "{} volumes but {} ground truths",
            a.volume.len(),
            a.gt.len()
        )));
    }
    let mut cfg = a.model.monet_config()?;
    if let Some(e) = a.model.epochs {
        cfg.pretrain_epochs = e;
    }
    let pairs = a
        .volume
        .iter()
        .zip(&a.gt)
        .map(|(v, g)| Ok((read_volume(v)?.normalized(), read_label_map(g)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut params = MonetParams::<f32>::init(&cfg, &mut rng)?;
    let report = pretrain_offline(&mut params, &pairs, &cfg, &mut rng)?;
    for i in &report.skipped {
        eprintln!("skipped {}: ground truth has a single class", a.volume[*i].display());
    }
    if let Some(last) = report.loss_curve.last() {
        eprintln!("final loss {last:.5}");
    }
    params.save(&a.model_out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, env = "MONET_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Seconds of inactivity after which a session is dropped.
    #[arg(long, env = "MONET_SESSION_TTL", default_value_t = 1800)]
    pub ttl: u64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

fn serve(a: ServeArgs) -> Result<()> {
    let defaults = service::Defaults {
        config: a.pipeline.pipeline_config()?,
        params: a.pipeline.checkpoint()?,
        seed: a.pipeline.seed,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(&a.bind, std::time::Duration::from_secs(a.ttl), defaults))
}
