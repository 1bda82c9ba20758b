//! Training samples and label-balance weights.

use num_rational::Ratio;
use num_traits::ToPrimitive;

use super::prune::PrunedLabels;
use crate::error::{Error, Result};
use crate::geodesic::WeightMap;
use crate::volume::{Label, ScribbleSet, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleSource {
    Scribble,
    Segmentation,
}

/// One labeled voxel and its loss coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    /// Linear index of the patch center.
    pub index: usize,
    pub label: Label,
    pub source: SampleSource,
    /// `W_i` for scribbles (always 1) and `1 - W_i` for segmentation voxels.
    pub weight: f64,
    pub class_weight: f64,
}

impl TrainingSample {
    /// The factor multiplying `-log p(label)` in the loss.
    pub fn coefficient(&self) -> f64 {
        self.weight * self.class_weight
    }
}

/// Per-class weights: the total sample count over the class count, kept as
/// exact ratios. A class with no samples has no weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceWeights {
    pub total: u64,
    pub alpha_f: Option<Ratio<u64>>,
    pub alpha_b: Option<Ratio<u64>>,
    pub beta_f: Option<Ratio<u64>>,
    pub beta_b: Option<Ratio<u64>>,
}

impl BalanceWeights {
    /// Weights for segmentation counts `(c_fg, c_bg)` and scribble counts
    /// `(s_fg, s_bg)`.
    pub fn from_counts(c_fg: u64, c_bg: u64, s_fg: u64, s_bg: u64) -> Self {
        let total = c_fg + c_bg + s_fg + s_bg;
        let w = |n: u64| (n > 0).then(|| Ratio::new(total, n));
        BalanceWeights {
            total,
            alpha_f: w(c_fg),
            alpha_b: w(c_bg),
            beta_f: w(s_fg),
            beta_b: w(s_bg),
        }
    }

    pub fn for_sample(&self, source: SampleSource, label: Label) -> Option<Ratio<u64>> {
        match (source, label) {
            (SampleSource::Segmentation, Label::Foreground) => self.alpha_f,
            (SampleSource::Segmentation, Label::Background) => self.alpha_b,
            (SampleSource::Scribble, Label::Foreground) => self.beta_f,
            (SampleSource::Scribble, Label::Background) => self.beta_b,
        }
    }
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    r.to_f64().expect("finite ratio")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    pub balance: BalanceWeights,
}

impl TrainingSet {
    pub fn centers(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.index).collect()
    }
}

/// One sample per scribble voxel, then one per kept segmentation voxel that
/// is not scribbled, each group in ascending index order.
///
/// Class counts come from the emitted samples, so `|T|` is the sample count
/// and a voxel both kept and scribbled counts once, as a scribble.
pub fn build_training_set(v: &Volume, kept: &PrunedLabels, s: &ScribbleSet, w: &WeightMap) -> Result<TrainingSet> {
    let dims = v.dims();
    dims.check_same(&kept.dims(), "pruned labels")?;
    dims.check_same(&s.dims(), "scribbles")?;
    dims.check_same(&w.dims(), "weight map")?;

    let mut samples = Vec::with_capacity(s.len() + kept.len());
    for (index, label) in s.iter() {
        samples.push(TrainingSample {
            index,
            label,
            source: SampleSource::Scribble,
            weight: 1.0,
            class_weight: 0.0,
        });
    }
    for &(index, label) in kept.kept() {
        if s.contains(index) {
            continue;
        }
        samples.push(TrainingSample {
            index,
            label,
            source: SampleSource::Segmentation,
            weight: 1.0 - w.get(index),
            class_weight: 0.0,
        });
    }
    if samples.is_empty() {
        return Err(Error::NothingToLearn);
    }

    let count = |src, lab| samples.iter().filter(|t| t.source == src && t.label == lab).count() as u64;
    let balance = BalanceWeights::from_counts(
        count(SampleSource::Segmentation, Label::Foreground),
        count(SampleSource::Segmentation, Label::Background),
        count(SampleSource::Scribble, Label::Foreground),
        count(SampleSource::Scribble, Label::Background),
    );
    for t in &mut samples {
        let r = balance.for_sample(t.source, t.label).expect("class has a sample");
        t.class_weight = ratio_to_f64(r);
    }
    Ok(TrainingSet { samples, balance })
}
