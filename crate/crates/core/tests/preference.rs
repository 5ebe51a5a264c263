mod common;

use d3po_core::d3po::{generate_pairs, PairRecord, PreferenceLabel};
use d3po_core::diffusion::{gaussian, render, Placement, ShapeClass, ShapeDatasetSpec};
use d3po_core::ndcore::Tensor;
use d3po_core::preference::{
    bt_probability, decode_pair, encode_pair, label_from_objective, LabelSource, Objective,
    ObjectiveKind, PrefStore, PreferenceRecord,
};
use d3po_core::seeds;
use d3po_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn pairs(n: u64) -> Vec<PairRecord> {
    let den = common::tiny_denoiser(4, vec![6], 1);
    let specs: Vec<(u64, usize)> = (0..n).map(|i| (i, (i % 5) as usize)).collect();
    generate_pairs(&den, &specs, 3, 0, &common::schedule(4), 5.0).unwrap()
}

#[test]
fn scoring_is_deterministic() {
    let spec = ShapeDatasetSpec::default();
    let img = gaussian(9, &[256]).map(|v| v.clamp(-1.0, 1.0));
    for kind in [
        ObjectiveKind::Compressibility,
        ObjectiveKind::Incompressibility,
        ObjectiveKind::ShapeFidelity,
    ] {
        let obj = Objective::new(kind, &spec);
        let first = obj.score(&img, 2).unwrap();
        for _ in 0..100 {
            assert_eq!(obj.score(&img, 2).unwrap().to_bits(), first.to_bits());
        }
    }
}

#[test]
fn non_finite_image_rejected() {
    let obj = Objective::new(ObjectiveKind::Compressibility, &ShapeDatasetSpec::default());
    let mut img = Tensor::zeros(&[256]);
    img.data_mut()[3] = f64::NAN;
    assert!(obj.score(&img, 0).is_err());
}

#[test]
fn shape_fidelity_prefers_matching_class() {
    let spec = ShapeDatasetSpec::default();
    let obj = Objective::new(ObjectiveKind::ShapeFidelity, &spec);
    let ring = render(ShapeClass::Ring, 16, &Placement::CENTERED);
    let as_ring = obj.score(&ring, ShapeClass::Ring.index()).unwrap();
    let as_bar = obj.score(&ring, ShapeClass::HBar.index()).unwrap();
    assert!(as_ring > as_bar);
}

fn with_finals(mut pair: PairRecord, a: f64, b: f64) -> PairRecord {
    let mut ta = (*pair.a).clone();
    let mut tb = (*pair.b).clone();
    *ta.states.last_mut().unwrap() = Tensor::filled(&[16], a);
    *tb.states.last_mut().unwrap() = Tensor::filled(&[16], b);
    pair.a = ta.into();
    pair.b = tb.into();
    pair
}

#[test]
fn oracle_labels_follow_scores() {
    let obj = Objective::new(ObjectiveKind::Compressibility, &ShapeDatasetSpec::default());
    let base = pairs(1).remove(0);
    let p = with_finals(base.clone(), 0.5, 0.5);
    assert_eq!(label_from_objective(&obj, &p).unwrap(), PreferenceLabel::Tie);
    assert_eq!(label_from_objective(&obj, &p).unwrap().h(), [0, 0]);
    let real = &base;
    let (sa, sb) = (
        obj.score(real.a.final_image(), real.class).unwrap(),
        obj.score(real.b.final_image(), real.class).unwrap(),
    );
    let want = if sa > sb {
        PreferenceLabel::A
    } else if sb > sa {
        PreferenceLabel::B
    } else {
        PreferenceLabel::Tie
    };
    assert_eq!(label_from_objective(&obj, real).unwrap(), want);
    assert_eq!(label_from_objective(&obj, &real.swapped()).unwrap(), want.swapped());
}

#[test]
fn labels_agree_with_bradley_terry_direction() {
    let mut rng = seeds::rng(2, "scores", 0);
    for _ in 0..1000 {
        let (a, b): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        if a == b {
            continue;
        }
        let oracle = if a > b { PreferenceLabel::A } else { PreferenceLabel::B };
        let bt = if bt_probability(a, b) > 0.5 { PreferenceLabel::A } else { PreferenceLabel::B };
        assert_eq!(oracle, bt);
    }
}

#[test]
fn bradley_terry_examples() {
    assert_eq!(bt_probability(0.3, 0.3), 0.5);
    assert!((bt_probability(1.0, 0.0) - 0.7310585786300049).abs() < 1e-12);
    let p = bt_probability(50.0, 0.0);
    assert_eq!(p, 1.0);
    assert!(bt_probability(-800.0, 0.0) >= 0.0);
}

proptest! {
    #[test]
    fn bradley_terry_is_complementary(a in -40.0f64..40.0, b in -40.0f64..40.0) {
        let s = bt_probability(a, b) + bt_probability(b, a);
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bradley_terry_increases_with_margin(d in -30.0f64..30.0, step in 1e-3f64..2.0) {
        prop_assert!(bt_probability(d + step, 0.0) > bt_probability(d, 0.0));
    }
}

#[test]
fn spooled_pair_round_trips_at_single_precision() {
    let pair = pairs(1).remove(0);
    let back = decode_pair(&encode_pair(&pair).unwrap()).unwrap();
    assert_eq!(back.id, pair.id);
    assert_eq!(back.a.step_seeds, pair.a.step_seeds);
    for (x, y) in pair.a.states.iter().zip(&back.a.states) {
        let want: Vec<f64> = x.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(y.data(), &want[..]);
    }
    assert_eq!(encode_pair(&back).unwrap(), encode_pair(&pair).unwrap());
}

#[test]
fn store_appends_and_rejects_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = PrefStore::open(dir.path()).unwrap();
    let ps = pairs(2);
    let rec = PreferenceRecord::oracle(&ps[0], PreferenceLabel::A, -80.0, -90.0);
    assert!(matches!(store.append(rec.clone()), Err(Error::DanglingPair(0))));
    store.spool_pair(&ps[0]).unwrap();
    store.append(rec.clone()).unwrap();
    assert_eq!(store.iter(None).collect::<Vec<_>>(), vec![&rec]);
    let dup = PreferenceRecord::human(&ps[0], PreferenceLabel::B);
    assert!(matches!(store.append(dup), Err(Error::DuplicateLabel(0))));
    let mut bad = PreferenceRecord::human(&ps[1], PreferenceLabel::A);
    bad.source = LabelSource::Oracle;
    store.spool_pair(&ps[1]).unwrap();
    assert!(store.append(bad).is_err());
    assert_eq!(store.len(), 1);
    let loaded = store.load_pair(0).unwrap();
    assert_eq!(loaded.label, Some(PreferenceLabel::A));
    assert_eq!(store.load_pair(1).unwrap().label, None);
    assert_eq!(store.spooled_ids().unwrap(), vec![0, 1]);
}

#[test]
fn ten_thousand_records_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let template = pairs(1).remove(0);
    let mut store = PrefStore::open(dir.path()).unwrap();
    let mut rng = seeds::rng(4, "records", 0);
    for id in 0..10_000u64 {
        let pair = PairRecord {
            id,
            epoch: id / 1000,
            class: (id % 5) as usize,
            ..template.clone()
        };
        store.spool_pair(&pair).unwrap();
        let choice = [PreferenceLabel::A, PreferenceLabel::B, PreferenceLabel::Tie]
            [rng.random_range(0..3)];
        let rec = if id % 2 == 0 {
            PreferenceRecord::oracle(&pair, choice, rng.random(), rng.random())
        } else {
            PreferenceRecord::human(&pair, choice)
        };
        store.append(rec).unwrap();
    }
    let before = store.records().to_vec();
    drop(store);
    let reopened = PrefStore::open(dir.path()).unwrap();
    assert_eq!(reopened.records(), &before[..]);
    assert_eq!(reopened.iter(Some(3)).count(), 1000);
    assert!(reopened.iter(Some(3)).all(|r| r.epoch == 3));
}

#[test]
fn interrupted_final_line_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let ps = pairs(2);
    {
        let mut store = PrefStore::open(dir.path()).unwrap();
        for p in &ps {
            store.spool_pair(p).unwrap();
        }
        store.append(PreferenceRecord::human(&ps[0], PreferenceLabel::B)).unwrap();
    }
    let log = dir.path().join("records.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"pair_id\":1,\"ep");
    std::fs::write(&log, text).unwrap();
    let mut store = PrefStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 1);
    store.append(PreferenceRecord::human(&ps[1], PreferenceLabel::A)).unwrap();
    drop(store);
    assert_eq!(PrefStore::open(dir.path()).unwrap().len(), 2);
}
