//! Online training on a session's samples and offline pre-training on
//! labeled volumes.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::MonetConfig;
use super::loss::adaptive_loss;
use super::network::{MonetParams, PatchBank};
use super::samples::{ratio_to_f64, BalanceWeights, SampleSource, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::{Mode, Real, Sgd};
use crate::volume::{Label, LabelMap, Volume};

/// One shuffled pass of minibatch SGD; returns the sample-weighted mean loss.
#[allow(clippy::too_many_arguments)]
fn fit_epoch<T: Real>(
    params: &mut MonetParams<T>,
    bank: &PatchBank<T>,
    samples: &[TrainingSample],
    batch: usize,
    lr: f64,
    sgd: &mut Sgd,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for rows in order.chunks(batch) {
        let picked: Vec<TrainingSample> = rows.iter().map(|&r| samples[r]).collect();
        let (logits, cache) = params.forward(bank.gather(rows), Mode::Train, rng)?;
        let (loss, grad) = adaptive_loss(&picked, &logits)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        total += loss * rows.len() as f64;
        let grads = params.backward(&cache, &grad)?;
        params.update_running_stats(&cache);
        sgd.step(&mut params.parameters_mut(), &grads, lr);
    }
    let mean = total / samples.len() as f64;
    if !mean.is_finite() || !params.parameters().iter().all(|t| t.all_finite()) {
        return Err(Error::Divergence { epoch, loss: mean });
    }
    params.trained = true;
    Ok(mean)
}

/// Trains on samples centered in `v` for `cfg.online_epochs` epochs with a
/// cosine-annealed learning rate. Batch norm runs in train mode and dropout
/// is active. Returns the per-epoch mean loss.
pub fn train_online<T: Real>(
    params: &mut MonetParams<T>,
    v: &Volume,
    samples: &[TrainingSample],
    cfg: &MonetConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::NothingToLearn);
    }
    let centers: Vec<usize> = samples.iter().map(|s| s.index).collect();
    let bank = PatchBank::from_volume(v, &centers, &params.scale_sizes())?;
    let schedule = cfg.online_schedule();
    let batch = cfg.effective_batch_size(samples.len());
    let mut sgd = Sgd::new(cfg.momentum);
    (0..cfg.online_epochs)
        .map(|epoch| fit_epoch(params, &bank, samples, batch, schedule.lr(epoch), &mut sgd, epoch, rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Indices of input volumes skipped for lacking one of the classes.
    pub skipped: Vec<usize>,
    pub loss_curve: Vec<f64>,
}

/// Pre-trains on ground-truth labeled volumes with a step-decayed learning
/// rate. Every epoch draws `cfg.pretrain_samples_per_class` foreground and
/// as many background voxels per volume, uniformly with replacement, and
/// fits them with class-balanced cross-entropy.
pub fn pretrain_offline<T: Real>(
    params: &mut MonetParams<T>,
    volumes: &[(Volume, LabelMap)],
    cfg: &MonetConfig,
    rng: &mut impl Rng,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::Validation("pre-training needs at least one volume".into()));
    }
    let mut skipped = Vec::new();
    let mut pools = Vec::new();
    for (i, (v, gt)) in volumes.iter().enumerate() {
        v.dims().check_same(&gt.dims(), "ground truth")?;
        let (fg, bg): (Vec<usize>, Vec<usize>) = (0..gt.dims().len()).partition(|&j| gt.is_fg(j));
        if fg.is_empty() || bg.is_empty() {
            skipped.push(i);
        } else {
            pools.push((v, fg, bg));
        }
    }
    if pools.is_empty() {
        return Err(Error::NothingToLearn);
    }
    let per_class = cfg.pretrain_samples_per_class.max(1);
    let n_class = (per_class * pools.len()) as u64;
    let balance = BalanceWeights::from_counts(n_class, n_class, 0, 0);
    let weight = |label| ratio_to_f64(balance.for_sample(SampleSource::Segmentation, label).expect("both classes"));

    let schedule = cfg.pretrain_schedule();
    let batch = cfg.effective_batch_size(2 * per_class * pools.len());
    let mut sgd = Sgd::new(cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut banks = Vec::new();
        let mut samples = Vec::new();
        for (v, fg, bg) in &pools {
            let mut centers = Vec::with_capacity(2 * per_class);
            for (pool, label) in [(fg, Label::Foreground), (bg, Label::Background)] {
                for _ in 0..per_class {
                    let index = pool[rng.random_range(0..pool.len())];
                    centers.push(index);
                    samples.push(TrainingSample {
                        index,
                        label,
                        source: SampleSource::Segmentation,
                        weight: 1.0,
                        class_weight: weight(label),
                    });
                }
            }
            banks.push(PatchBank::from_volume(v, &centers, &params.scale_sizes())?);
        }
        let bank = PatchBank::concat(&banks);
        curve.push(fit_epoch(params, &bank, &samples, batch, schedule.lr(epoch), &mut sgd, epoch, rng)?);
    }
    Ok(PretrainReport {
        skipped,
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> MonetConfig {
        MonetConfig {
            patch_size: 3,
            scales: vec![1, 3],
            filters_per_scale: 4,
            fc_sizes: vec![8, 2],
            online_epochs: 30,
            pretrain_epochs: 3,
            pretrain_samples_per_class: 16,
            ..MonetConfig::default()
        }
    }

    /// Left half dark, right half bright, labeled by brightness.
    fn two_blobs() -> (Volume, LabelMap) {
        let dims = Dims::new(8, 4, 4).unwrap();
        let data = (0..dims.len()).map(|i| if i % 8 < 4 { 0.1 } else { 0.9 }).collect();
        let v = Volume::new(dims, Spacing::unit(), data).unwrap();
        let gt = LabelMap::from_fn(dims, |i| i % 8 >= 4);
        (v, gt)
    }

    fn samples(gt: &LabelMap, weight: f64) -> Vec<TrainingSample> {
        (0..gt.dims().len())
            .map(|index| TrainingSample {
                index,
                label: gt.label(index),
                source: SampleSource::Segmentation,
                weight,
                class_weight: 1.0,
            })
            .collect()
    }

    #[test]
    fn separable_set_is_learned() {
        let (v, gt) = two_blobs();
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = MonetParams::<f32>::init(&cfg, &mut rng).unwrap();
        let curve = train_online(&mut p, &v, &samples(&gt, 1.0), &cfg, &mut rng).unwrap();
        assert_eq!(curve.len(), 30);
        assert!(curve.last().unwrap() < curve.first().unwrap(), "{curve:?}");
        assert!(p.trained);
    }

    #[test]
    fn same_seed_same_curve() {
        let (v, gt) = two_blobs();
        let cfg = small_cfg();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut p = MonetParams::<f32>::init(&cfg, &mut rng).unwrap();
            let c = train_online(&mut p, &v, &samples(&gt, 1.0), &cfg, &mut rng).unwrap();
            (c, p)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let (v, gt) = two_blobs();
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = MonetParams::<f32>::init(&cfg, &mut rng).unwrap();
        let before: Vec<_> = p.parameters().into_iter().cloned().collect();
        train_online(&mut p, &v, &samples(&gt, 0.0), &cfg, &mut rng).unwrap();
        let after: Vec<_> = p.parameters().into_iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn pretrain_zero_epochs_is_identity() {
        let (v, gt) = two_blobs();
        let cfg = MonetConfig {
            pretrain_epochs: 0,
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MonetParams::<f32>::init(&cfg, &mut rng).unwrap();
        let before = p.clone();
        let r = pretrain_offline(&mut p, &[(v, gt)], &cfg, &mut rng).unwrap();
        assert!(r.loss_curve.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn pretrain_skips_single_class_volumes() {
        let (v, gt) = two_blobs();
        let blank = LabelMap::background(v.dims());
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MonetParams::<f32>::init(&cfg, &mut rng).unwrap();
        let r = pretrain_offline(&mut p, &[(v.clone(), blank.clone()), (v.clone(), gt)], &cfg, &mut rng).unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert_eq!(r.loss_curve.len(), 3);
        assert!(pretrain_offline(&mut p, &[(v, blank)], &cfg, &mut rng).is_err());
    }
}
