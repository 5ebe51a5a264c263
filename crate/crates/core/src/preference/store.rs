//! Append-only preference log plus a spool of the labeled trajectories.
//!
//! `records.jsonl` holds one [`PreferenceRecord`] per line. `spool/` holds
//! one container file per pair (`<id>.pair`) with both trajectories.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode, encode, write_atomic};
use crate::d3po::{PairRecord, PreferenceLabel};
use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: u64,
    pub epoch: u64,
    pub class: usize,
    pub source: LabelSource,
    pub choice: PreferenceLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_b: Option<f64>,
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
}

impl PreferenceRecord {
    pub fn human(pair: &PairRecord, choice: PreferenceLabel) -> Self {
        Self {
            pair_id: pair.id,
            epoch: pair.epoch,
            class: pair.class,
            source: LabelSource::Human,
            choice,
            score_a: None,
            score_b: None,
            ts: now_millis(),
        }
    }

    pub fn oracle(pair: &PairRecord, choice: PreferenceLabel, score_a: f64, score_b: f64) -> Self {
        Self {
            source: LabelSource::Oracle,
            score_a: Some(score_a),
            score_b: Some(score_b),
            ..Self::human(pair, choice)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == LabelSource::Oracle && (self.score_a.is_none() || self.score_b.is_none()) {
            return Err(Error::invalid(format!(
                "oracle record for pair {} lacks scores",
                self.pair_id
            )));
        }
        Ok(())
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Serialize, Deserialize)]
struct SpoolMeta {
    id: u64,
    class: usize,
    init_seed: u64,
    epoch: u64,
    steps: usize,
    a: TrajMeta,
    b: TrajMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajMeta {
    step_seeds: Vec<u64>,
    guidance: f64,
}

/// Container bytes for a pair; states are stored as f32.
pub fn encode_pair(pair: &PairRecord) -> Result<Vec<u8>> {
    let steps = pair.a.steps();
    if !pair.a.is_complete() || !pair.b.is_complete() || pair.b.steps() != steps {
        return Err(Error::invalid(format!("pair {} has incomplete trajectories", pair.id)));
    }
    let meta = SpoolMeta {
        id: pair.id,
        class: pair.class,
        init_seed: pair.init_seed,
        epoch: pair.epoch,
        steps,
        a: TrajMeta {
            step_seeds: pair.a.step_seeds.clone(),
            guidance: pair.a.guidance,
        },
        b: TrajMeta {
            step_seeds: pair.b.step_seeds.clone(),
            guidance: pair.b.guidance,
        },
    };
    let names: Vec<String> = ["a", "b"]
        .iter()
        .flat_map(|side| (0..=steps).map(move |k| format!("{side}.{k}")))
        .collect();
    let tensors = pair.a.states.iter().chain(&pair.b.states);
    encode(&meta, names.iter().map(String::as_str).zip(tensors))
}

pub fn decode_pair(bytes: &[u8]) -> Result<PairRecord> {
    let (meta, tensors): (SpoolMeta, Vec<(String, Tensor)>) = decode(bytes)?;
    if tensors.len() != 2 * (meta.steps + 1) {
        return Err(Error::Format(format!("pair {} has {} states", meta.id, tensors.len())));
    }
    let mut states = tensors.into_iter().map(|(_, t)| t);
    let mut traj = |m: TrajMeta| Trajectory {
        class: meta.class,
        states: states.by_ref().take(meta.steps + 1).collect(),
        init_seed: meta.init_seed,
        step_seeds: m.step_seeds,
        guidance: m.guidance,
    };
    let a = traj(meta.a);
    let b = traj(meta.b);
    Ok(PairRecord {
        id: meta.id,
        class: meta.class,
        init_seed: meta.init_seed,
        a: Arc::new(a),
        b: Arc::new(b),
        label: None,
        epoch: meta.epoch,
    })
}

/// Single-writer store; see the module docs for the layout.
#[derive(Debug)]
pub struct PrefStore {
    root: PathBuf,
    records: Vec<PreferenceRecord>,
    by_pair: HashMap<u64, usize>,
    log: File,
}

const LOG: &str = "records.jsonl";
const SPOOL: &str = "spool";

impl PrefStore {
    /// Opens or creates a store rooted at `root` and replays its log. A
    /// final line without a newline (an interrupted append) is dropped.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(SPOOL))?;
        let log_path = root.join(LOG);
        let mut records = Vec::new();
        let mut by_pair = HashMap::new();
        let mut valid_len = 0u64;
        if log_path.exists() {
            let mut reader = BufReader::new(File::open(&log_path)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                let rec: PreferenceRecord = serde_json::from_str(line.trim_end())?;
                if by_pair.insert(rec.pair_id, records.len()).is_some() {
                    return Err(Error::DuplicateLabel(rec.pair_id));
                }
                records.push(rec);
                valid_len += n as u64;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if log.metadata()?.len() != valid_len {
            log.set_len(valid_len)?;
        }
        Ok(Self {
            root,
            records,
            by_pair,
            log,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn spool_path(&self, id: u64) -> PathBuf {
        self.root.join(SPOOL).join(format!("{id}.pair"))
    }

    /// Writes both trajectories of `pair`; rewriting the same pair is allowed.
    pub fn spool_pair(&self, pair: &PairRecord) -> Result<()> {
        write_atomic(&self.spool_path(pair.id), &encode_pair(pair)?)
    }

    pub fn has_pair(&self, id: u64) -> bool {
        self.spool_path(id).exists()
    }

    /// The spooled pair, with its label attached if one was recorded.
    pub fn load_pair(&self, id: u64) -> Result<PairRecord> {
        let path = self.spool_path(id);
        if !path.exists() {
            return Err(Error::DanglingPair(id));
        }
        let mut pair = decode_pair(&fs::read(path)?)?;
        pair.label = self.get(id).map(|r| r.choice);
        Ok(pair)
    }

    /// Spooled pair ids in ascending order.
    pub fn spooled_ids(&self) -> Result<Vec<u64>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join(SPOOL))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".pair").and_then(|s| s.parse().ok()) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    /// Durably appends a label for an already spooled pair.
    pub fn append(&mut self, record: PreferenceRecord) -> Result<()> {
        record.validate()?;
        if self.by_pair.contains_key(&record.pair_id) {
            return Err(Error::DuplicateLabel(record.pair_id));
        }
        if !self.has_pair(record.pair_id) {
            return Err(Error::DanglingPair(record.pair_id));
        }
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.by_pair.insert(record.pair_id, self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, pair_id: u64) -> Option<&PreferenceRecord> {
        self.by_pair.get(&pair_id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in insertion order, optionally restricted to one epoch.
    pub fn iter(&self, epoch: Option<u64>) -> impl Iterator<Item = &PreferenceRecord> {
        self.records
            .iter()
            .filter(move |r| epoch.is_none_or(|e| r.epoch == e))
    }
}
