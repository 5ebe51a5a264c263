mod common;

use std::time::Duration;

use d3po_core::checkpoint::Checkpoint;
use d3po_core::d3po::PreferenceLabel;
use d3po_service::{checkpoint_path, Service, ServiceConfig, ServiceError, TrainingStatus, ID_STRIDE};

fn label_all(svc: &Service, choice: impl Fn(usize) -> PreferenceLabel) -> usize {
    let mut n = 0;
    while let Some(view) = svc.next_unlabeled().unwrap() {
        svc.submit_label(view.pair_id, choice(n)).unwrap();
        n += 1;
    }
    n
}

#[test]
fn enqueue_counts() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(common::small(dir.path(), 0, 0)).unwrap();
    assert_eq!(svc.enqueue_epoch_pairs(0).unwrap(), 0);
    assert_eq!(svc.session().queued, 0);
    assert_eq!(svc.enqueue_epoch_pairs(10).unwrap(), 10);
    let s = svc.session();
    assert_eq!((s.queued, s.claimed, s.labeled), (10, 0, 0));
    assert_eq!(svc.queue_ids(), (0..10).collect::<Vec<_>>());
}

#[test]
fn fresh_stores_generate_identical_pairs() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = Service::open(common::small(d1.path(), 5, 1)).unwrap();
    let b = Service::open(common::small(d2.path(), 5, 1)).unwrap();
    assert_eq!(a.queue_ids(), b.queue_ids());
    for id in a.queue_ids() {
        let (pa, pb) = (a.pair(id).unwrap(), b.pair(id).unwrap());
        assert_eq!(pa.a.initial(), pb.a.initial());
        assert_eq!(pa.init_seed, pb.init_seed);
        assert_eq!(pa, pb);
    }
}

#[test]
fn claims_are_exclusive_until_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(common::small(dir.path(), 2, 1)).unwrap();
    let first = svc.next_unlabeled().unwrap().unwrap();
    let second = svc.next_unlabeled().unwrap().unwrap();
    assert_ne!(first.pair_id, second.pair_id);
    assert!(svc.next_unlabeled().unwrap().is_none());
    assert_eq!(svc.session().claimed, 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        claim_timeout: Duration::from_millis(50),
        ..common::small(dir.path(), 1, 1)
    };
    let svc = Service::open(cfg).unwrap();
    let id = svc.next_unlabeled().unwrap().unwrap().pair_id;
    assert!(svc.next_unlabeled().unwrap().is_none());
    std::thread::sleep(Duration::from_millis(60));
    assert_eq!(svc.next_unlabeled().unwrap().unwrap().pair_id, id);
}

#[test]
fn served_view_carries_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(common::small(dir.path(), 1, 1)).unwrap();
    let view = svc.next_unlabeled().unwrap().unwrap();
    assert_eq!(view.epoch, 0);
    assert!(view.image_a.starts_with("iVBORw0KGgo"));
    assert!(view.image_b.starts_with("iVBORw0KGgo"));
}

#[test]
fn label_submission_rules() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(common::small(dir.path(), 3, 1)).unwrap();
    assert!(matches!(
        svc.submit_label(999, PreferenceLabel::A),
        Err(ServiceError::NotFound(999))
    ));
    assert_eq!(svc.submit_label(1, PreferenceLabel::A).unwrap(), 2);
    let log = dir.path().join("home/store/records.jsonl");
    let before = std::fs::read(&log).unwrap();
    assert!(matches!(
        svc.submit_label(1, PreferenceLabel::B),
        Err(ServiceError::Conflict(1))
    ));
    assert_eq!(std::fs::read(&log).unwrap(), before);
    assert_eq!(svc.submit_label(0, PreferenceLabel::Tie).unwrap(), 1);
    let s = svc.session();
    assert_eq!((s.queued, s.labeled, s.ties), (1, 2, 1));
    // Labeled pairs are never served again.
    assert_eq!(svc.next_unlabeled().unwrap().unwrap().pair_id, 2);
    assert!(svc.next_unlabeled().unwrap().is_none());
}

#[test]
fn advance_needs_enough_labels() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(common::small(dir.path(), 3, 2)).unwrap();
    svc.submit_label(0, PreferenceLabel::A).unwrap();
    match svc.advance_epoch() {
        Err(ServiceError::InsufficientLabels { labeled, required }) => {
            assert_eq!((labeled, required), (1, 2));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(svc.session().status, TrainingStatus::Idle);
    assert_eq!(svc.session().epoch, 0);
}

#[test]
fn all_tie_epoch_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small(dir.path(), 4, 4);
    let home = cfg.home.clone();
    let svc = Service::open(cfg).unwrap();
    assert_eq!(label_all(&svc, |_| PreferenceLabel::Tie), 4);
    let stats = svc.advance_epoch().unwrap();
    assert_eq!((stats.updates, stats.ties_skipped, stats.contributions), (0, 4, 0));
    let before = Checkpoint::load(&checkpoint_path(&home, 0)).unwrap();
    let after = Checkpoint::load(&checkpoint_path(&home, 1)).unwrap();
    assert!(before.denoiser.params.bitwise_eq(&after.denoiser.params));
    assert_eq!(svc.session().epoch, 1);
}

#[test]
fn normal_epoch_moves_on() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small(dir.path(), 4, 2);
    let home = cfg.home.clone();
    let svc = Service::open(cfg).unwrap();
    let start = svc.policy();
    label_all(&svc, |i| if i % 2 == 0 { PreferenceLabel::A } else { PreferenceLabel::B });
    let stats = svc.advance_epoch().unwrap();
    assert_eq!(stats.epoch, 0);
    assert_eq!(stats.pairs_consumed, 4);
    assert_eq!(stats.contributions, 16);
    assert!(checkpoint_path(&home, 1).exists());
    assert!(!start.params.bitwise_eq(&svc.policy().params));
    let s = svc.session();
    assert_eq!((s.epoch, s.queued, s.labeled), (1, 4, 0));
    assert_eq!(svc.queue_ids(), (ID_STRIDE..ID_STRIDE + 4).collect::<Vec<_>>());
    let m = svc.metrics();
    assert_eq!(m.history.len(), 1);
    assert_eq!(m.history[0].labels.a + m.history[0].labels.b, 4);
}

#[test]
fn monitor_scores_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        monitor: Some(d3po_core::preference::ObjectiveKind::Compressibility),
        ..common::small(dir.path(), 3, 1)
    };
    let svc = Service::open(cfg).unwrap();
    let score = svc.metrics().current_score.unwrap();
    assert!(score < 0.0);
    label_all(&svc, |_| PreferenceLabel::A);
    svc.advance_epoch().unwrap();
    let m = svc.metrics();
    assert_eq!(m.history[0].mean_score, Some(score));
    assert_eq!(m.objective.as_deref(), Some("compressibility"));
}

#[test]
fn store_replay_restores_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small(dir.path(), 5, 2);
    let svc = Service::open(cfg.clone()).unwrap();
    label_all(&svc, |i| [PreferenceLabel::A, PreferenceLabel::B, PreferenceLabel::Tie][i % 3]);
    svc.advance_epoch().unwrap();
    svc.submit_label(ID_STRIDE + 3, PreferenceLabel::B).unwrap();
    svc.submit_label(ID_STRIDE, PreferenceLabel::Tie).unwrap();
    let (session, metrics, ids, policy) = (svc.session(), svc.metrics(), svc.queue_ids(), svc.policy());
    drop(svc);

    let again = Service::open(cfg).unwrap();
    assert_eq!(again.session(), session);
    assert_eq!(again.metrics(), metrics);
    assert_eq!(again.queue_ids(), ids);
    assert!(again.policy().params.bitwise_eq(&policy.params));
    assert!(matches!(
        again.submit_label(ID_STRIDE + 3, PreferenceLabel::A),
        Err(ServiceError::Conflict(_))
    ));
}
