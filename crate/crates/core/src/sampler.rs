//! Finite-statistics measurement simulation and dataset assembly.
//!
//! Each record pairs the clean SIC probabilities of a Haar-random state with
//! click counts drawn under a SPAM-corrupted measurement. `shots = 0` means
//! infinite statistics: frequencies are the exact corrupted probabilities.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexVecRepr;
use crate::optics::SpamModel;
use crate::quantum::{born_probabilities, haar_random_pure, Povm, ProbDistribution, PureState};
use crate::rng::child_rng;

pub const DEFAULT_SHOTS: u64 = 10_000;
pub const DEFAULT_STATES: usize = 10_500;

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyRecord {
    pub id: u64,
    pub true_state: Option<PureState>,
    pub ideal_probs: ProbDistribution,
    pub noisy_freqs: Vec<f64>,
    pub counts: Vec<u64>,
    /// Zero in exact mode.
    pub shots: u64,
}

impl TomographyRecord {
    pub fn from_counts(
        id: u64,
        true_state: Option<PureState>,
        ideal_probs: ProbDistribution,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if counts.len() != ideal_probs.len() {
            return Err(Error::DimensionMismatch {
                expected: ideal_probs.len(),
                got: counts.len(),
            });
        }
        let shots: u64 = counts.iter().sum();
        if shots == 0 {
            return Err(Error::InsufficientData(format!("record {id} has no counts")));
        }
        let noisy_freqs = counts.iter().map(|&c| c as f64 / shots as f64).collect();
        Ok(Self { id, true_state, ideal_probs, noisy_freqs, counts, shots })
    }

    pub fn exact(
        id: u64,
        true_state: Option<PureState>,
        ideal_probs: ProbDistribution,
        freqs: ProbDistribution,
    ) -> Result<Self> {
        if freqs.len() != ideal_probs.len() {
            return Err(Error::DimensionMismatch {
                expected: ideal_probs.len(),
                got: freqs.len(),
            });
        }
        let n = freqs.len();
        Ok(Self {
            id,
            true_state,
            ideal_probs,
            noisy_freqs: freqs.into_vec(),
            counts: vec![0; n],
            shots: 0,
        })
    }

    pub fn is_exact(&self) -> bool {
        self.shots == 0
    }

    pub fn outcomes(&self) -> usize {
        self.ideal_probs.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dim: usize,
    pub n_states: usize,
    /// Shots per state; 0 selects exact mode.
    pub shots: u64,
    pub spam: SpamModel,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(dim: usize, n_states: usize, shots: u64, spam: SpamModel, seed: u64) -> Self {
        Self { dim, n_states, shots, spam, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim));
        }
        if self.n_states == 0 {
            return Err(Error::InvalidConfig("n_states must be at least 1".into()));
        }
        self.spam.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<TomographyRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn outcomes(&self) -> Option<usize> {
        self.records.first().map(|r| r.outcomes())
    }

    /// Consecutive slices of the given sizes, in record order.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Dataset>> {
        let total: usize = sizes.iter().sum();
        if total != self.len() {
            return Err(Error::InvalidConfig(format!(
                "split sizes sum to {total}, dataset has {} records",
                self.len()
            )));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            out.push(Dataset { records: self.records[start..start + s].to_vec() });
            start += s;
        }
        Ok(out)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, &RecordLine::from(r))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line)?;
            records.push(parsed.into_record()?);
        }
        Ok(Self { records })
    }
}

/// On-disk form. Frequencies are derived from counts; exact-mode records carry
/// their exact frequencies instead since there are no counts.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    state: Option<ComplexVecRepr>,
    ideal_probs: Vec<f64>,
    counts: Vec<u64>,
    shots: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    exact_freqs: Option<Vec<f64>>,
}

impl From<&TomographyRecord> for RecordLine {
    fn from(r: &TomographyRecord) -> Self {
        Self {
            id: r.id,
            state: r.true_state.as_ref().map(|s| s.to_repr()),
            ideal_probs: r.ideal_probs.values().to_vec(),
            counts: r.counts.clone(),
            shots: r.shots,
            exact_freqs: r.is_exact().then(|| r.noisy_freqs.clone()),
        }
    }
}

impl RecordLine {
    fn into_record(self) -> Result<TomographyRecord> {
        let state = self.state.as_ref().map(PureState::from_repr).transpose()?;
        let ideal = ProbDistribution::new(self.ideal_probs)?;
        if self.shots == 0 {
            let freqs = self.exact_freqs.ok_or_else(|| {
                Error::InvalidConfig(format!("record {}: exact mode without exact_freqs", self.id))
            })?;
            return TomographyRecord::exact(self.id, state, ideal, ProbDistribution::new(freqs)?);
        }
        let total: u64 = self.counts.iter().sum();
        if total != self.shots {
            return Err(Error::InvalidConfig(format!(
                "record {}: counts sum to {total}, shots = {}",
                self.id, self.shots
            )));
        }
        TomographyRecord::from_counts(self.id, state, ideal, self.counts)
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_counts<R: Rng + ?Sized>(probs: &ProbDistribution, shots: u64, rng: &mut R) -> Vec<u64> {
    let p = probs.values();
    let mut counts = vec![0u64; p.len()];
    let mut remaining = shots;
    let mut mass = 1.0;
    for (k, &pk) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == p.len() {
            counts[k] = remaining;
            break;
        }
        let q = if mass > 0.0 { (pk / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(remaining, q).expect("probability clamped to [0, 1]").sample(rng);
        counts[k] = c;
        remaining -= c;
        mass -= pk;
    }
    counts
}

/// One record: Haar state, clean SIC probabilities, corrupted counts.
pub fn generate_record(
    config: &DatasetConfig,
    ideal: &Povm,
    effective: &crate::quantum::Measurement,
    id: u64,
) -> Result<TomographyRecord> {
    let mut state_rng = child_rng(config.seed, "state", id);
    let psi = haar_random_pure(config.dim, &mut state_rng)?;
    let rho = psi.density();
    let ideal_probs = born_probabilities(&rho, ideal)?;
    let corrupted = effective.outcome_distribution(&rho)?;
    if config.shots == 0 {
        return TomographyRecord::exact(id, Some(psi), ideal_probs, corrupted);
    }
    let mut count_rng = child_rng(config.seed, "counts", id);
    let counts = sample_counts(&corrupted, config.shots, &mut count_rng);
    TomographyRecord::from_counts(id, Some(psi), ideal_probs, counts)
}

pub fn generate_dataset(config: &DatasetConfig, ideal: &Povm) -> Result<Dataset> {
    config.validate()?;
    if ideal.dim() != config.dim {
        return Err(Error::DimensionMismatch { expected: config.dim, got: ideal.dim() });
    }
    let effective = config.spam.effective_measurement(ideal)?;
    let records = (0..config.n_states as u64)
        .into_par_iter()
        .map(|id| generate_record(config, ideal, &effective, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { records })
}
