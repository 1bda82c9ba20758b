//! Invariants of the pipeline stages, checked on random inputs.

use monet::geodesic::{geodesic_distance, geodesic_distance_exact, weights_from_distance, GeodesicConfig, WeightMap};
use monet::graphcut::{energy_of, graphcut_refine, GraphCutConfig};
use monet::io::{decode_scribbles, encode_scribbles};
use monet::metrics::{assd, dice};
use monet::model::{build_training_set, prune_labels, PrunedLabels, SampleSource};
use monet::sim::{corrupt_segmentation, make_phantom, synthesize_scribbles, CorruptionSpec, PhantomSpec, ScribblerConfig};
use monet::volume::{Connectivity, Dims, Label, LabelMap, ProbMap, ScribbleSet, Spacing, Volume};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dims() -> impl Strategy<Value = Dims> {
    (1usize..7, 1usize..6, 1usize..5).prop_map(|(x, y, z)| Dims::new(x, y, z).unwrap())
}

fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> Volume {
    Volume::new(dims, Spacing::unit(), (0..dims.len()).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, dims: Dims, rate: f64) -> LabelMap {
    LabelMap::from_fn(dims, |_| rng.random_bool(rate))
}

fn random_scribbles(rng: &mut ChaCha8Rng, dims: Dims, n: usize) -> ScribbleSet {
    let mut s = ScribbleSet::new(dims);
    for _ in 0..n {
        let label = if rng.random_bool(0.5) { Label::Foreground } else { Label::Background };
        s.add(rng.random_range(0..dims.len()), label).unwrap();
    }
    s
}

/// Sum of the contrast factors over 6-neighbor pairs with different labels.
fn boundary_weight(labels: &LabelMap, v: &Volume, sigma: f64) -> f64 {
    let unit = GraphCutConfig {
        lambda: 1.0,
        sigma,
        ..GraphCutConfig::default()
    };
    let d = v.dims();
    let mut total = 0.0;
    for i in 0..d.len() {
        let c = d.coord_unchecked(i);
        for step in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
            if let Some(j) = d.offset(c, step) {
                if labels.label(i) != labels.label(j) {
                    total += unit.pairwise(v.data()[i], v.data()[j]);
                }
            }
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweeps_bound_the_exact_distance_from_above(dims in small_dims(), seed: u64, six: bool, nu in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_volume(&mut rng, dims);
        let seeds: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..dims.len())).collect();
        let cfg = GeodesicConfig {
            connectivity: if six { Connectivity::Six } else { Connectivity::TwentySix },
            spatial_weight: nu,
            passes: 1,
            ..GeodesicConfig::default()
        };
        let exact = geodesic_distance_exact(&v, &seeds, &cfg).unwrap();
        let mut previous = geodesic_distance(&v, &seeds, &cfg).unwrap();
        for passes in 2..5 {
            let d = geodesic_distance(&v, &seeds, &GeodesicConfig { passes, ..cfg }).unwrap();
            for i in 0..dims.len() {
                prop_assert!(d.dist()[i] >= exact.dist()[i] - 1e-9);
                // More passes can only tighten the estimate.
                prop_assert!(d.dist()[i] <= previous.dist()[i] + 1e-12);
            }
            previous = d;
        }
        for &s in &seeds {
            prop_assert_eq!(previous.dist()[s], 0.0);
        }
    }

    #[test]
    fn weights_decrease_with_distance(dims in small_dims(), seed: u64, tau in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_volume(&mut rng, dims);
        let s = rng.random_range(0..dims.len());
        let d = geodesic_distance(&v, &[s], &GeodesicConfig::default()).unwrap();
        let w = weights_from_distance(&d, tau).unwrap();
        prop_assert_eq!(w.get(s), 1.0);
        for i in 0..dims.len() {
            prop_assert!(w.get(i) > 0.0 || d.dist()[i] / tau > 700.0);
            prop_assert!(w.get(i) <= 1.0);
            for j in 0..dims.len() {
                if d.dist()[i] < d.dist()[j] {
                    prop_assert!(w.get(i) >= w.get(j));
                }
            }
        }
    }

    #[test]
    fn training_samples_follow_their_sources(dims in small_dims(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_volume(&mut rng, dims);
        let c = random_labels(&mut rng, dims, 0.4);
        let kept: Vec<(usize, Label)> = (0..dims.len()).filter(|_| rng.random_bool(0.5)).map(|i| (i, c.label(i))).collect();
        let kept = PrunedLabels::from_kept(dims, kept).unwrap();
        let n = rng.random_range(0..=dims.len());
        let s = random_scribbles(&mut rng, dims, n);
        let w = WeightMap::from_weights(dims, (0..dims.len()).map(|_| rng.random()).collect()).unwrap();
        let Ok(set) = build_training_set(&v, &kept, &s, &w) else {
            prop_assert!(kept.is_empty() && s.is_empty());
            return Ok(());
        };
        prop_assert_eq!(set.samples.len() as u64, set.balance.total);
        for t in &set.samples {
            match t.source {
                SampleSource::Scribble => {
                    prop_assert_eq!(s.label_at(t.index), Some(t.label));
                    prop_assert_eq!(t.weight, 1.0);
                }
                SampleSource::Segmentation => {
                    prop_assert!(!s.contains(t.index));
                    prop_assert_eq!(t.label, c.label(t.index));
                    prop_assert_eq!(t.weight, 1.0 - w.get(t.index));
                }
            }
            let r = set.balance.for_sample(t.source, t.label).unwrap();
            let count = set.samples.iter().filter(|u| u.source == t.source && u.label == t.label).count() as u64;
            prop_assert_eq!(r * Ratio::from_integer(count), Ratio::from_integer(set.balance.total));
        }
        // Every scribble and every unscribbled kept voxel is used exactly once.
        let kept_free = kept.kept().iter().filter(|(i, _)| !s.contains(*i)).count();
        prop_assert_eq!(set.samples.len(), s.len() + kept_free);
    }

    #[test]
    fn graph_cut_is_no_worse_than_any_labeling_it_could_return(dims in small_dims(), seed: u64, lambda in 0.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_volume(&mut rng, dims);
        let prob = ProbMap::new(dims, (0..dims.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
        let n = rng.random_range(0..3);
        let s = random_scribbles(&mut rng, dims, n);
        let cfg = GraphCutConfig { lambda, ..GraphCutConfig::default() };
        let cut = graphcut_refine(&prob, &v, &s, &cfg).unwrap();
        for (i, label) in s.iter() {
            prop_assert_eq!(cut.label(i), label);
        }
        let e = energy_of(&cut, &prob, &v, &cfg).unwrap();
        let pin = |mut m: LabelMap| {
            for (i, label) in s.iter() {
                m.set(i, label);
            }
            m
        };
        let mut rivals = vec![pin(prob.argmax()), pin(LabelMap::background(dims)), pin(LabelMap::from_fn(dims, |_| true))];
        for _ in 0..8 {
            rivals.push(pin(random_labels(&mut rng, dims, 0.5)));
        }
        for r in &rivals {
            prop_assert!(e <= energy_of(r, &prob, &v, &cfg).unwrap() + 1e-9);
        }
    }

    #[test]
    fn scribble_files_round_trip(dims in small_dims(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..=dims.len());
        let s = random_scribbles(&mut rng, dims, n);
        prop_assert_eq!(decode_scribbles(&encode_scribbles(&s)).unwrap(), s);
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(dims in small_dims(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_labels(&mut rng, dims, 0.5);
        let b = random_labels(&mut rng, dims, 0.5);
        let d = dice(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let sp = Spacing::new(1.0, 0.5, 2.0).unwrap();
        if let (Ok(x), Ok(y)) = (assd(&a, &b, sp), assd(&b, &a, sp)) {
            prop_assert!(x >= 0.0);
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert_eq!(assd(&a, &a, sp).unwrap(), 0.0);
        }
    }
}

#[test]
fn smoothing_shortens_the_boundary_as_lambda_grows() {
    // For exact minimizers of U + lambda * B, B cannot increase with lambda.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dims = Dims::new(12, 10, 6).unwrap();
    let cfg = GraphCutConfig::default();
    for _ in 0..10 {
        let v = random_volume(&mut rng, dims);
        let prob = ProbMap::new(dims, (0..dims.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
        let none = ScribbleSet::new(dims);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.1, 0.3, 0.6, 1.0, 2.0, 4.0] {
            let cut = graphcut_refine(&prob, &v, &none, &GraphCutConfig { lambda, ..cfg }).unwrap();
            let b = boundary_weight(&cut, &v, cfg.sigma);
            assert!(b <= last + 1e-9, "boundary grew from {last} to {b} at lambda {lambda}");
            last = b;
        }
    }
}

#[test]
fn pruning_keeps_confident_voxels_at_the_expected_rate() {
    let dims = Dims::cube(50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = random_labels(&mut rng, dims, 0.3);
    let p: Vec<f32> = (0..dims.len()).map(|_| rng.random::<f32>()).collect();
    let prob = ProbMap::new(dims, p.clone()).unwrap();
    let (zeta, eta) = (0.8, 0.9);
    let kept = prune_labels(&c, &prob, zeta, eta, &mut rng).unwrap();

    let confident = p.iter().filter(|&&x| (x as f64).max(1.0 - x as f64) >= zeta).count() as f64;
    for &(i, label) in kept.kept() {
        let x = p[i] as f64;
        assert!(x.max(1.0 - x) >= zeta);
        assert_eq!(label, c.label(i));
    }
    let mean = confident * (1.0 - eta);
    let sd = (confident * eta * (1.0 - eta)).sqrt();
    let z = (kept.len() as f64 - mean) / sd;
    assert!(z.abs() < 4.0, "kept {} of {confident} confident voxels, z = {z:.2}", kept.len());
}

#[test]
fn the_scribbler_only_marks_mistakes() {
    let cfg = ScribblerConfig::default();
    for seed in 0..20 {
        let p = make_phantom(&PhantomSpec { seed, ..PhantomSpec::default() }).unwrap();
        let gt = &p.ground_truth;
        let pred = corrupt_segmentation(gt, &CorruptionSpec::calibrated(seed)).unwrap().seg;
        let mut existing = ScribbleSet::new(gt.dims());
        for round in 0..3 {
            let new = synthesize_scribbles(&pred, gt, &ScribblerConfig { seed, ..cfg.clone() }, &existing).unwrap();
            assert!(round > 0 || !new.is_empty(), "seed {seed}: no scribbles on a damaged mask");
            assert!(new.len() <= cfg.max_per_round * cfg.length.1);
            for (i, label) in new.iter() {
                assert_eq!(label, gt.label(i), "seed {seed}: scribble disagrees with the truth");
                assert_ne!(pred.label(i), label, "seed {seed}: scribble on a correct voxel");
                assert!(!existing.contains(i), "seed {seed}: voxel {i} scribbled twice");
            }
            existing.merge(&new).unwrap();
        }
    }
}

#[test]
fn a_correct_confident_start_survives_a_round_without_scribbles() {
    use monet::session::{RefineOverrides, Session, SessionOptions};

    let p = make_phantom(&PhantomSpec { seed: 5, ..PhantomSpec::default() }).unwrap();
    let init = p.ground_truth.clone();
    let prob = ProbMap::new(init.dims(), init.labels().iter().map(|&l| if l == 1 { 0.99 } else { 0.01 }).collect()).unwrap();
    let opts = SessionOptions { seed: 5, ..SessionOptions::default() };
    let mut s = Session::new("steady", p.volume, init.clone(), prob, opts).unwrap();
    s.refine_round(&RefineOverrides::default()).unwrap();
    let d = dice(s.current_labels(), &init).unwrap();
    assert!(d >= 0.95, "dice against the initial mask fell to {d}");
}
