//! The online likelihood network and everything needed to train and run it.

pub mod config;
pub mod infer;
pub mod loss;
pub mod network;
pub mod prune;
pub mod samples;
pub mod train;

pub use config::MonetConfig;
pub use infer::{monet_infer_logits, monet_infer_volume, Inference};
pub use loss::adaptive_loss;
pub use network::{monet_forward_patch, ForwardCache, Gradients, HiddenLayer, MonetParams, PatchBank, ScaleBranch};
pub use prune::{prune_labels, PrunedLabels, DEFAULT_ETA, DEFAULT_ZETA};
pub use samples::{build_training_set, BalanceWeights, SampleSource, TrainingSample, TrainingSet};
pub use train::{pretrain_offline, train_online, PretrainReport};
