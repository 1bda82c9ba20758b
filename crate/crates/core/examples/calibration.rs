//! Regenerates `tests/fixtures/calibration.jsonl`: for each phantom seed, the
//! Dice of the corrupted initial segmentation and the final Dice after five
//! synthetic scribble rounds, with and without multi-scale convolutions.
//!
//! ```text
//! cargo run -p monet --example calibration > crates/core/tests/fixtures/calibration.jsonl
//! ```

use monet::model::MonetConfig;
use monet::session::{PipelineConfig, Session, SessionOptions};
use monet::sim::{corrupt_segmentation, make_phantom, CorruptionSpec, PhantomSpec, ScribblerConfig};

const PHANTOMS: u64 = 20;
const ROUNDS: usize = 5;

fn run(seed: u64, monet: MonetConfig) -> (f64, f64) {
    let p = make_phantom(&PhantomSpec {
        seed,
        ..PhantomSpec::default()
    })
    .unwrap();
    let c = corrupt_segmentation(&p.ground_truth, &CorruptionSpec::calibrated(seed)).unwrap();
    let opts = SessionOptions {
        config: PipelineConfig {
            monet,
            ..PipelineConfig::default()
        },
        seed,
        ground_truth: Some(p.ground_truth),
        ..SessionOptions::default()
    };
    let mut s = Session::new(format!("phantom-{seed}"), p.volume, c.seg, c.prob, opts).unwrap();
    let scribbler = ScribblerConfig {
        seed,
        ..ScribblerConfig::default()
    };
    let reports = s.run_synthetic(&scribbler, ROUNDS).unwrap();
    (c.dice, reports.last().unwrap().dice.unwrap())
}

fn main() {
    for seed in 0..PHANTOMS {
        let (init, multi) = run(seed, MonetConfig::default());
        let (_, single) = run(seed, MonetConfig::no_multiscale());
        println!(
            "{}",
            serde_json::json!({
                "seed": seed,
                "init_dice": init,
                "final_dice": multi,
                "final_dice_single_scale": single,
            })
        );
    }
}
