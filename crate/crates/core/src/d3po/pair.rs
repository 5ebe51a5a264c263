use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_trajectories, Denoiser, NoiseSchedule, SampleRequest, Trajectory};
use crate::error::{Error, Result};
use crate::seeds;

/// Which trajectory of a pair was preferred. The two-component vector form
/// is available through [`PreferenceLabel::h`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PreferenceLabel {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl PreferenceLabel {
    pub fn h(self) -> [i8; 2] {
        match self {
            PreferenceLabel::A => [1, -1],
            PreferenceLabel::B => [-1, 1],
            PreferenceLabel::Tie => [0, 0],
        }
    }

    pub fn from_h(h: [i8; 2]) -> Result<Self> {
        match h {
            [1, -1] => Ok(PreferenceLabel::A),
            [-1, 1] => Ok(PreferenceLabel::B),
            [0, 0] => Ok(PreferenceLabel::Tie),
            other => Err(Error::invalid(format!("label vector {other:?}"))),
        }
    }

    /// The label for the same pair with A and B exchanged.
    pub fn swapped(self) -> Self {
        match self {
            PreferenceLabel::A => PreferenceLabel::B,
            PreferenceLabel::B => PreferenceLabel::A,
            PreferenceLabel::Tie => PreferenceLabel::Tie,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PreferenceLabel::A => "A",
            PreferenceLabel::B => "B",
            PreferenceLabel::Tie => "tie",
        }
    }
}

impl fmt::Display for PreferenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreferenceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(PreferenceLabel::A),
            "B" | "b" => Ok(PreferenceLabel::B),
            "tie" | "t" => Ok(PreferenceLabel::Tie),
            other => Err(Error::invalid(format!("label '{other}'"))),
        }
    }
}

/// Two trajectories that start from the same `x_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: u64,
    pub class: usize,
    pub init_seed: u64,
    pub a: Arc<Trajectory>,
    pub b: Arc<Trajectory>,
    pub label: Option<PreferenceLabel>,
    pub epoch: u64,
}

impl PairRecord {
    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            label: self.label.map(PreferenceLabel::swapped),
            ..self.clone()
        }
    }

    pub fn with_label(mut self, label: PreferenceLabel) -> Self {
        self.label = Some(label);
        self
    }
}

/// Seeds for pair `id` under `master`: one initial-noise seed and two
/// independent per-step noise seeds.
pub fn pair_requests(class: usize, master: u64, id: u64) -> [SampleRequest; 2] {
    let init_seed = seeds::derive(master, "pair-init", id);
    [0, 1].map(|k| SampleRequest {
        class,
        init_seed,
        noise_seed: seeds::derive(master, "pair-noise", 2 * id + k),
    })
}

/// Samples one pair; parameters are only read.
pub fn generate_pair(
    den: &Denoiser,
    class: usize,
    master: u64,
    id: u64,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<PairRecord> {
    Ok(generate_pairs(den, &[(id, class)], master, 0, sched, w)?.remove(0))
}

/// Samples many pairs in one batch. The result for a given `(master, id)`
/// does not depend on the rest of the batch.
pub fn generate_pairs(
    den: &Denoiser,
    specs: &[(u64, usize)],
    master: u64,
    epoch: u64,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Vec<PairRecord>> {
    let reqs: Vec<SampleRequest> = specs
        .iter()
        .flat_map(|&(id, class)| pair_requests(class, master, id))
        .collect();
    let mut trajs = sample_trajectories(den, &reqs, sched, w)?.into_iter();
    Ok(specs
        .iter()
        .map(|&(id, class)| {
            let a = trajs.next().expect("two per pair");
            let b = trajs.next().expect("two per pair");
            PairRecord {
                id,
                class,
                init_seed: a.init_seed,
                a: Arc::new(a),
                b: Arc::new(b),
                label: None,
                epoch,
            }
        })
        .collect())
}
