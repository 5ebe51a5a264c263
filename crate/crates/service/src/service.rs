//! Session core: queue, store, policy and the epoch loop. The HTTP layer
//! is a thin wrapper around [`Service`].

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use d3po_core::checkpoint::{write_atomic, Checkpoint};
use d3po_core::d3po::{
    advance_reference, finetune_epoch, generate_pairs, EpochStats, PairRecord, PreferenceLabel,
    TrainConfig,
};
use d3po_core::diffusion::{Denoiser, NoiseSchedule, ScheduleSpec, ShapeDatasetSpec};
use d3po_core::ndcore::{AdamState, Role};
use d3po_core::preference::{Objective, ObjectiveKind, PrefStore, PreferenceRecord};
use serde::Serialize;

use crate::error::{Result, ServiceError};
use crate::queue::{ClaimState, PairQueue, PairQueueEntry};
use crate::render::render_base64;
use crate::session::{EpochMetrics, LabelCounts, MetricsSnapshot, SessionState, TrainingStatus};

/// Pair ids of epoch `e` occupy `e * ID_STRIDE ..`.
pub const ID_STRIDE: u64 = 1_000_000;

const STORE_DIR: &str = "store";
const CKPT_DIR: &str = "checkpoints";
const METRICS_LOG: &str = "metrics.jsonl";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Working directory holding the store, checkpoints and metrics.
    pub home: PathBuf,
    /// Starting policy; also the fixed reference when
    /// `train.fixed_reference` is set.
    pub init_ckpt: PathBuf,
    pub train: TrainConfig,
    pub data: ShapeDatasetSpec,
    pub pairs_per_epoch: usize,
    pub min_labeled: usize,
    pub claim_timeout: Duration,
    pub monitor: Option<ObjectiveKind>,
}

impl ServiceConfig {
    pub fn new(home: impl Into<PathBuf>, init_ckpt: impl Into<PathBuf>) -> Self {
        Self {
            home: home.into(),
            init_ckpt: init_ckpt.into(),
            train: TrainConfig::default(),
            data: ShapeDatasetSpec::default(),
            pairs_per_epoch: 64,
            min_labeled: 16,
            claim_timeout: Duration::from_secs(300),
            monitor: None,
        }
    }
}

/// Body of `GET /api/pairs/next`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairView {
    pub pair_id: u64,
    pub class: usize,
    pub epoch: u64,
    pub image_a: String,
    pub image_b: String,
}

struct Inner {
    epoch: u64,
    theta: Denoiser,
    reference: Denoiser,
    opt: AdamState,
    store: PrefStore,
    queue: PairQueue,
    pairs: HashMap<u64, PairRecord>,
    scores: Vec<f64>,
    history: Vec<EpochMetrics>,
}

pub struct Service {
    cfg: ServiceConfig,
    schedule: ScheduleSpec,
    sched: NoiseSchedule,
    monitor: Option<Objective>,
    training: AtomicBool,
    inner: Mutex<Inner>,
}

/// Clears the training flag when dropped.
struct TrainingGuard<'a>(&'a AtomicBool);

impl Drop for TrainingGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

pub fn checkpoint_path(home: &Path, epoch: u64) -> PathBuf {
    home.join(CKPT_DIR).join(format!("epoch-{epoch:04}.ckpt"))
}

fn latest_checkpoint(home: &Path) -> Result<Option<(u64, PathBuf)>> {
    let mut best = None;
    for entry in fs::read_dir(home.join(CKPT_DIR))? {
        let path = entry?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch-"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best)
}

fn trainable(den: Denoiser) -> Denoiser {
    Denoiser {
        params: den.params.with_role(Role::Trainable),
        config: den.config,
    }
}

fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: EpochMetrics = serde_json::from_str(&line).map_err(d3po_core::Error::from)?;
        out.push(m);
    }
    Ok(out)
}

impl Service {
    /// Opens a session in `cfg.home`, replaying whatever a previous run
    /// left there. A fresh epoch gets `pairs_per_epoch` pairs queued.
    pub fn open(cfg: ServiceConfig) -> Result<Self> {
        cfg.train.validate()?;
        fs::create_dir_all(cfg.home.join(CKPT_DIR))?;
        let init = Checkpoint::load(&cfg.init_ckpt)?;
        let schedule = init.meta.schedule;
        let sched = NoiseSchedule::new(&schedule)?;
        let (epoch, theta) = match latest_checkpoint(&cfg.home)? {
            Some((e, path)) => (e, trainable(Checkpoint::load(&path)?.denoiser)),
            None => {
                let theta = trainable(init.denoiser.clone());
                Checkpoint::new(theta.clone(), schedule, 0).save(&checkpoint_path(&cfg.home, 0))?;
                (0, theta)
            }
        };
        if theta.config != init.denoiser.config {
            return Err(ServiceError::BadRequest(
                "session checkpoints do not match the initial architecture".into(),
            ));
        }
        let reference = if cfg.train.fixed_reference {
            init.denoiser.frozen()
        } else {
            advance_reference(&theta)
        };
        let store = PrefStore::open(cfg.home.join(STORE_DIR))?;
        let history = read_metrics(&cfg.home.join(METRICS_LOG))?;
        let monitor = cfg.monitor.map(|k| Objective::new(k, &cfg.data));
        let svc = Self {
            schedule,
            sched,
            monitor,
            training: AtomicBool::new(false),
            inner: Mutex::new(Inner {
                epoch,
                opt: AdamState::new(&theta.params),
                theta,
                reference,
                store,
                queue: PairQueue::new(cfg.claim_timeout),
                pairs: HashMap::new(),
                scores: Vec::new(),
                history,
            }),
            cfg,
        };
        {
            let mut inner = svc.lock();
            svc.restore_queue(&mut inner)?;
            if inner.queue.is_empty() {
                svc.enqueue_locked(&mut inner, svc.cfg.pairs_per_epoch)?;
            }
        }
        Ok(svc)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn busy(&self) -> bool {
        self.training.load(Ordering::SeqCst)
    }

    fn restore_queue(&self, inner: &mut Inner) -> Result<()> {
        let lo = inner.epoch * ID_STRIDE;
        let hi = lo + ID_STRIDE;
        for id in inner.store.spooled_ids()? {
            if id < lo || id >= hi {
                continue;
            }
            let pair = inner.store.load_pair(id)?;
            self.admit(inner, pair)?;
        }
        Ok(())
    }

    fn admit(&self, inner: &mut Inner, pair: PairRecord) -> Result<()> {
        if let Some(obj) = &self.monitor {
            inner.scores.push(obj.score(pair.a.final_image(), pair.class)?);
            inner.scores.push(obj.score(pair.b.final_image(), pair.class)?);
        }
        inner.queue.push(PairQueueEntry::new(pair.id));
        if pair.label.is_some() {
            inner.queue.mark_labeled(pair.id);
        }
        inner.pairs.insert(pair.id, PairRecord { label: None, ..pair });
        Ok(())
    }

    fn enqueue_locked(&self, inner: &mut Inner, k: usize) -> Result<usize> {
        if k == 0 {
            return Ok(0);
        }
        let offset = inner.queue.len();
        if (offset + k) as u64 > ID_STRIDE {
            return Err(ServiceError::BadRequest(format!(
                "at most {ID_STRIDE} pairs per epoch"
            )));
        }
        let classes = &self.cfg.train.classes;
        let specs: Vec<(u64, usize)> = (offset..offset + k)
            .map(|i| (inner.epoch * ID_STRIDE + i as u64, classes[i % classes.len()]))
            .collect();
        let pairs = generate_pairs(
            &inner.theta,
            &specs,
            self.cfg.train.seed,
            inner.epoch,
            &self.sched,
            self.cfg.train.guidance,
        )?;
        for pair in pairs {
            inner.store.spool_pair(&pair)?;
            self.admit(inner, pair)?;
        }
        Ok(k)
    }

    /// Generates and queues `k` more pairs for the open epoch with the
    /// current policy.
    pub fn enqueue_epoch_pairs(&self, k: usize) -> Result<usize> {
        let mut inner = self.lock();
        if self.busy() {
            return Err(ServiceError::Busy);
        }
        self.enqueue_locked(&mut inner, k)
    }

    /// Claims the oldest unclaimed pair; `None` when nothing is left.
    pub fn next_unlabeled(&self) -> Result<Option<PairView>> {
        let mut inner = self.lock();
        if self.busy() {
            return Err(ServiceError::Busy);
        }
        let Some(id) = inner.queue.claim_next(Instant::now()) else {
            return Ok(None);
        };
        let pair = &inner.pairs[&id];
        let side = inner.theta.config.side;
        Ok(Some(PairView {
            pair_id: id,
            class: pair.class,
            epoch: pair.epoch,
            image_a: render_base64(pair.a.final_image(), side)?,
            image_b: render_base64(pair.b.final_image(), side)?,
        }))
    }

    /// Records a human label; returns how many queued pairs remain
    /// unlabeled.
    pub fn submit_label(&self, pair_id: u64, choice: PreferenceLabel) -> Result<usize> {
        let mut inner = self.lock();
        if self.busy() {
            return Err(ServiceError::Busy);
        }
        let entry = inner.queue.get(pair_id).ok_or(ServiceError::NotFound(pair_id))?;
        if entry.claim == ClaimState::Labeled || inner.store.get(pair_id).is_some() {
            return Err(ServiceError::Conflict(pair_id));
        }
        let record = PreferenceRecord::human(&inner.pairs[&pair_id], choice);
        inner.store.append(record)?;
        inner.queue.mark_labeled(pair_id);
        Ok(inner.queue.remaining())
    }

    fn labels_of_epoch(inner: &Inner) -> LabelCounts {
        let mut c = LabelCounts::default();
        for e in inner.queue.entries() {
            if let Some(r) = inner.store.get(e.pair_id) {
                c.add(r.choice);
            }
        }
        c
    }

    pub fn session(&self) -> SessionState {
        let inner = self.lock();
        let counts = inner.queue.counts(Instant::now());
        let labels = Self::labels_of_epoch(&inner);
        SessionState {
            epoch: inner.epoch,
            queued: counts.queued,
            claimed: counts.claimed,
            labeled: counts.labeled,
            ties: labels.tie,
            status: if self.busy() {
                TrainingStatus::Training
            } else {
                TrainingStatus::Idle
            },
            min_labeled: self.cfg.min_labeled,
        }
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let inner = self.lock();
        MetricsSnapshot {
            objective: self.cfg.monitor.map(|k| k.to_string()),
            history: inner.history.clone(),
            current: Self::labels_of_epoch(&inner),
            current_score: mean(&inner.scores),
        }
    }

    /// Trains one epoch on the labeled pairs of the open epoch, rotates the
    /// reference, checkpoints the policy and queues the next epoch.
    pub fn advance_epoch(&self) -> Result<EpochStats> {
        let (pairs, mut theta, reference, mut opt, epoch, guard) = {
            let inner = self.lock();
            let labeled: Vec<PairRecord> = inner
                .queue
                .entries()
                .iter()
                .filter_map(|e| {
                    let r = inner.store.get(e.pair_id)?;
                    Some(inner.pairs[&e.pair_id].clone().with_label(r.choice))
                })
                .collect();
            if self
                .training
                .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                .is_err()
            {
                return Err(ServiceError::Busy);
            }
            let guard = TrainingGuard(&self.training);
            if labeled.len() < self.cfg.min_labeled {
                return Err(ServiceError::InsufficientLabels {
                    labeled: labeled.len(),
                    required: self.cfg.min_labeled,
                });
            }
            (
                labeled,
                inner.theta.clone(),
                inner.reference.clone(),
                inner.opt.clone(),
                inner.epoch,
                guard,
            )
        };
        let mut stats = finetune_epoch(&mut theta, &reference, &pairs, &self.cfg.train, &mut opt, &self.sched)?;
        stats.epoch = epoch;

        let mut inner = self.lock();
        let next = epoch + 1;
        // Continue from the stored weights so a restart resumes exactly.
        let bytes = Checkpoint::new(theta, self.schedule, next).to_bytes()?;
        write_atomic(&checkpoint_path(&self.cfg.home, next), &bytes)?;
        let theta = trainable(Checkpoint::from_bytes(&bytes)?.denoiser);
        let record = EpochMetrics {
            epoch,
            mean_score: mean(&inner.scores),
            labels: Self::labels_of_epoch(&inner),
            stats: stats.clone(),
        };
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.cfg.home.join(METRICS_LOG))?;
        writeln!(log, "{}", serde_json::to_string(&record).map_err(d3po_core::Error::from)?)?;
        log.sync_data()?;
        inner.history.push(record);
        if !self.cfg.train.fixed_reference {
            inner.reference = advance_reference(&theta);
        }
        inner.theta = theta;
        inner.opt = opt;
        inner.epoch = next;
        inner.queue.clear();
        inner.pairs.clear();
        inner.scores.clear();
        self.enqueue_locked(&mut inner, self.cfg.pairs_per_epoch)?;
        drop(guard);
        Ok(stats)
    }

    /// A copy of the current policy.
    pub fn policy(&self) -> Denoiser {
        self.lock().theta.clone()
    }

    /// The queued pair with `id`, without its label.
    pub fn pair(&self, id: u64) -> Option<PairRecord> {
        self.lock().pairs.get(&id).cloned()
    }

    pub fn queue_ids(&self) -> Vec<u64> {
        self.lock().queue.entries().iter().map(|e| e.pair_id).collect()
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
