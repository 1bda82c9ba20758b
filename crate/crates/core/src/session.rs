//! One annotation session: the volume, its initial segmentation, the
//! cumulative scribbles, the online model, and the latest result.
//!
//! A refinement round runs geodesic weighting, pruning, sample building,
//! online training, whole-volume inference and graph-cut smoothing in that
//! order. Every random draw in a round comes from a generator derived from
//! the session seed and the round number, so replaying a session with the
//! same inputs reproduces it exactly.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{geodesic_distance, weights_from_distance, GeodesicConfig, WeightMap};
use crate::graphcut::{graphcut_refine, GraphCutConfig};
use crate::metrics::{EvalReport, StageTimes};
use crate::model::{
    build_training_set, monet_infer_volume, prune_labels, train_online, MonetConfig, MonetParams, DEFAULT_ETA,
    DEFAULT_ZETA,
};
use crate::sim::{synthesize_scribbles, ScribblerConfig};
use crate::volume::{LabelMap, ProbMap, ScribbleSet, Volume};

/// Every tunable of a refinement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub monet: MonetConfig,
    pub geodesic: GeodesicConfig,
    pub graphcut: GraphCutConfig,
    /// Minimum predicted-class confidence for an initial label to be kept.
    pub zeta: f64,
    /// Keep an initial label only if a uniform draw reaches this value.
    pub eta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            monet: MonetConfig::default(),
            geodesic: GeodesicConfig::default(),
            graphcut: GraphCutConfig::default(),
            zeta: DEFAULT_ZETA,
            eta: DEFAULT_ETA,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.monet.validate()?;
        self.geodesic.validate()?;
        self.graphcut.validate()?;
        for (name, v) in [("zeta", self.zeta), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// A copy with the given overrides applied.
    pub fn with(&self, o: &RefineOverrides) -> PipelineConfig {
        let mut c = self.clone();
        if let Some(t) = o.tau {
            c.geodesic.tau = t;
        }
        if let Some(e) = o.epochs {
            c.monet.online_epochs = e;
        }
        if let Some(l) = o.lambda {
            c.graphcut.lambda = l;
        }
        if let Some(s) = o.sigma {
            c.graphcut.sigma = s;
        }
        if let Some(z) = o.zeta {
            c.zeta = z;
        }
        if let Some(e) = o.eta {
            c.eta = e;
        }
        c
    }
}

/// Per-round adjustments to the session configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineOverrides {
    pub tau: Option<f64>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
}

/// The state left behind by the latest round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub prob: ProbMap,
    pub labels: LabelMap,
    pub weights: WeightMap,
}

/// What a round did, for the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// The row appended to the session's reports.
    pub report: EvalReport,
    /// Always measured, whether or not the report records them.
    pub times: StageTimes,
    /// Voxels whose label differs from the previous result (or the initial
    /// segmentation after the first round).
    pub changed_voxels: usize,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    original: Volume,
    volume: Volume,
    init_labels: LabelMap,
    init_prob: ProbMap,
    ground_truth: Option<LabelMap>,
    scribbles: ScribbleSet,
    params: MonetParams<f32>,
    config: PipelineConfig,
    seed: u64,
    record_timings: bool,
    result: Option<RoundResult>,
    round: usize,
    reports: Vec<EvalReport>,
}

/// Builder-style options for [`Session::new`].
#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub config: PipelineConfig,
    pub seed: u64,
    /// Pre-trained parameters; freshly initialized from `seed` otherwise.
    pub params: Option<MonetParams<f32>>,
    pub ground_truth: Option<LabelMap>,
    /// Store wall-clock stage times in report rows. Off by default so that
    /// report files replay byte for byte.
    pub record_timings: bool,
}

impl Session {
    /// Starts a session. The volume is rescaled to `[0, 1]` for all
    /// computation; the original intensities are kept for display. Writes
    /// the round 0 report for the initial segmentation.
    pub fn new(
        id: impl Into<String>,
        volume: Volume,
        init_labels: LabelMap,
        init_prob: ProbMap,
        opts: SessionOptions,
    ) -> Result<Session> {
        let mut config = opts.config;
        if let Some(p) = &opts.params {
            // The checkpoint decides the architecture; training settings stay.
            let a = p.architecture();
            config.monet = MonetConfig {
                patch_size: a.patch_size,
                scales: a.scales,
                filters_per_scale: a.filters_per_scale,
                fc_sizes: a.fc_sizes,
                dropout: a.dropout,
                ..config.monet
            };
        }
        config.validate()?;
        let dims = volume.dims();
        dims.check_same(&init_labels.dims(), "initial segmentation")?;
        dims.check_same(&init_prob.dims(), "initial probability")?;
        if let Some(gt) = &opts.ground_truth {
            dims.check_same(&gt.dims(), "ground truth")?;
        }
        let mut init_labels = init_labels;
        init_labels.set_spacing(volume.spacing());
        let mut init_prob = init_prob;
        init_prob.set_spacing(volume.spacing());
        let params = match opts.params {
            Some(p) => p,
            None => MonetParams::init(&config.monet, &mut round_rng(opts.seed, 0))?,
        };
        let mut s = Session {
            id: id.into(),
            volume: volume.normalized(),
            original: volume,
            init_labels,
            init_prob,
            ground_truth: opts.ground_truth,
            scribbles: ScribbleSet::new(dims),
            params,
            config,
            seed: opts.seed,
            record_timings: opts.record_timings,
            result: None,
            round: 0,
            reports: Vec::new(),
        };
        let first = EvalReport::new(0, &s.init_labels, s.ground_truth.as_ref(), 0, None)?;
        s.reports.push(first);
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Intensities as ingested.
    pub fn original(&self) -> &Volume {
        &self.original
    }

    /// Intensities rescaled to `[0, 1]`, the input to every stage.
    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn init_labels(&self) -> &LabelMap {
        &self.init_labels
    }

    pub fn init_prob(&self) -> &ProbMap {
        &self.init_prob
    }

    pub fn ground_truth(&self) -> Option<&LabelMap> {
        self.ground_truth.as_ref()
    }

    pub fn scribbles(&self) -> &ScribbleSet {
        &self.scribbles
    }

    pub fn params(&self) -> &MonetParams<f32> {
        &self.params
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn result(&self) -> Option<&RoundResult> {
        self.result.as_ref()
    }

    /// The latest labels: the last result, or the initial segmentation.
    pub fn current_labels(&self) -> &LabelMap {
        self.result.as_ref().map_or(&self.init_labels, |r| &r.labels)
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn reports(&self) -> &[EvalReport] {
        &self.reports
    }

    /// Merges scribbles into the cumulative set; later labels win.
    pub fn add_scribbles(&mut self, s: &ScribbleSet) -> Result<()> {
        self.scribbles.merge(s)
    }

    /// Replaces the cumulative scribbles, for edits that erase.
    pub fn set_scribbles(&mut self, s: ScribbleSet) -> Result<()> {
        self.volume.dims().check_same(&s.dims(), "scribbles")?;
        self.scribbles = s;
        Ok(())
    }

    /// Runs one refinement round with the current scribbles.
    pub fn refine_round(&mut self, overrides: &RefineOverrides) -> Result<RoundOutcome> {
        let cfg = self.config.with(overrides);
        cfg.validate()?;
        let round = self.round + 1;
        let mut rng = round_rng(self.seed, round);
        let mut times = StageTimes::default();

        let t = Instant::now();
        let seeds = self.scribbles.indices();
        let weights = if seeds.is_empty() {
            WeightMap::zeros(self.volume.dims())
        } else {
            let d = geodesic_distance(&self.volume, &seeds, &cfg.geodesic).map_err(Error::in_stage("weights"))?;
            weights_from_distance(&d, cfg.geodesic.tau).map_err(Error::in_stage("weights"))?
        };
        let kept = prune_labels(&self.init_labels, &self.init_prob, cfg.zeta, cfg.eta, &mut rng)
            .map_err(Error::in_stage("prune"))?;
        let set = build_training_set(&self.volume, &kept, &self.scribbles, &weights)
            .map_err(Error::in_stage("samples"))?;
        times.weights = t.elapsed().as_secs_f64();

        // Train a copy so a failed round leaves the session untouched.
        let t = Instant::now();
        let mut params = self.params.clone();
        let loss_curve = train_online(&mut params, &self.volume, &set.samples, &cfg.monet, &mut rng)
            .map_err(Error::in_stage("train"))?;
        times.train = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let inf = monet_infer_volume(&params, &self.volume).map_err(Error::in_stage("infer"))?;
        times.infer = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut labels = graphcut_refine(&inf.prob, &self.volume, &self.scribbles, &cfg.graphcut)
            .map_err(Error::in_stage("graphcut"))?;
        labels.set_spacing(self.volume.spacing());
        times.graphcut = t.elapsed().as_secs_f64();

        let changed_voxels = labels.count_changed(self.current_labels());
        let report = EvalReport::new(
            round,
            &labels,
            self.ground_truth.as_ref(),
            self.scribbles.len(),
            self.record_timings.then_some(times),
        )?;
        self.params = params;
        self.result = Some(RoundResult {
            prob: inf.prob,
            labels,
            weights,
        });
        self.round = round;
        self.reports.push(report.clone());
        Ok(RoundOutcome {
            report,
            times,
            changed_voxels,
            loss_curve,
        })
    }

    /// Plays `rounds` rounds against the ground truth: before each round the
    /// synthetic scribbler corrects the current labels. Returns every report
    /// row, round 0 included.
    pub fn run_synthetic(&mut self, scribbler: &ScribblerConfig, rounds: usize) -> Result<Vec<EvalReport>> {
        let gt = self
            .ground_truth
            .clone()
            .ok_or_else(|| Error::Validation("synthetic rounds need ground truth".into()))?;
        for _ in 0..rounds {
            let new = synthesize_scribbles(self.current_labels(), &gt, scribbler, &self.scribbles)?;
            self.add_scribbles(&new)?;
            self.refine_round(&RefineOverrides::default())?;
        }
        Ok(self.reports.clone())
    }
}

/// Generator for round `round` of a session seeded with `seed`; round 0
/// initializes the parameters.
fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}
