//! End-to-end pipelines, evaluation metrics and learning curves.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, predict_batch, NetworkParams, Samples, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::mle::{dominant_eigenvector, mle_density, EstimateRecord, MleConfig};
use crate::optics::{default_modes, gouy_unitary, SpamModel};
use crate::povm::{rank_one_directions, search_sic, SicSearchConfig};
use crate::process::{dominant_kraus, extract_gouy_phases, reconstruct_process, GouyPhases, ProcessDataset};
use crate::quantum::{fidelity, purity, Povm, ProbDistribution, PureState};
use crate::rng::{child_rng, child_seed};
use crate::sampler::{generate_dataset, Dataset, DatasetConfig};

pub const HISTOGRAM_BINS: usize = 100;

/// SPAM scenarios shared by tests, examples and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// No corruption.
    #[serde(rename = "clean")]
    Clean,
    /// Gouy phases in detection; raw data reconstructed with the ideal POVM.
    #[serde(rename = "gouy")]
    Gouy,
    /// Gouy phases and uncorrected fiber filtering; raw data reconstructed
    /// with a POVM whose Gouy phases were calibrated by process tomography.
    #[serde(rename = "gouy+smf")]
    GouySmf,
    /// Gouy phases and fiber filtering; raw data reconstructed with the
    /// ideal POVM, no correction at all.
    #[serde(rename = "agnostic")]
    Agnostic,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Clean, Scenario::Gouy, Scenario::GouySmf, Scenario::Agnostic];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Clean => "clean",
            Scenario::Gouy => "gouy",
            Scenario::GouySmf => "gouy+smf",
            Scenario::Agnostic => "agnostic",
        }
    }

    pub fn spam(&self) -> SpamModel {
        match self {
            Scenario::Clean => SpamModel::None,
            Scenario::Gouy => SpamModel::reference_gouy(),
            Scenario::GouySmf | Scenario::Agnostic => SpamModel::reference_both(),
        }
    }

    /// POVM used for the raw reconstruction, plus calibration details.
    pub fn reconstruction_povm(&self, ideal: &Povm) -> Result<(Povm, Option<GouyPhases>)> {
        match self {
            Scenario::GouySmf => {
                let phases = calibrate_gouy(ideal, &self.spam())?;
                let u = gouy_unitary(phases.phi1, phases.phi2, &default_modes());
                Ok((ideal.conjugated(&u)?, Some(phases)))
            }
            _ => Ok((ideal.clone(), None)),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario `{s}`")))
    }
}

/// Process tomography of the detection stage: SIC-direction probes measured
/// with the corrupted apparatus (exact statistics) against the ideal POVM.
///
/// Detection `M → E₁ M E₁†` shows up as the state channel with Kraus
/// operator `E₁†`, so the phases read off the dominant Kraus operator are
/// negated to give `E₁`'s phases.
pub fn calibrate_gouy(ideal: &Povm, spam: &SpamModel) -> Result<GouyPhases> {
    let effective = spam.effective_measurement(ideal)?;
    let probes: Vec<PureState> = rank_one_directions(ideal)
        .into_iter()
        .map(PureState::new)
        .collect::<Result<_>>()?;
    let observed = probes
        .iter()
        .map(|p| effective.outcome_distribution(&p.density()).map(ProbDistribution::into_vec))
        .collect::<Result<Vec<_>>>()?;
    let chi = reconstruct_process(&ProcessDataset { probes, povm: ideal.clone(), observed })?;
    let g = extract_gouy_phases(&dominant_kraus(&chi).e1)?;
    Ok(GouyPhases {
        phi1: -g.phi1,
        phi2: -g.phi2,
        per_mode: g.per_mode.iter().map(|p| -p).collect(),
        ..g
    })
}

/// `Σ √(p q)`.
pub fn bhattacharyya(target: &ProbDistribution, predicted: &ProbDistribution) -> Result<f64> {
    bhattacharyya_raw(target.values(), predicted.values())
}

pub fn bhattacharyya_raw(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), got: predicted.len() });
    }
    Ok(target.iter().zip(predicted).map(|(p, q)| (p * q).sqrt()).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub id: u64,
    pub fidelity_raw: f64,
    pub purity_raw: f64,
    pub fidelity_pure_raw: f64,
    pub fidelity_nn: Option<f64>,
    pub purity_nn: Option<f64>,
    pub fidelity_pure_nn: Option<f64>,
}

pub const METRIC_COLUMNS: [&str; 6] =
    ["fidelity_raw", "fidelity_nn", "purity_raw", "purity_nn", "fidelity_pure_raw", "fidelity_pure_nn"];

impl RecordMetrics {
    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "fidelity_raw" => Some(self.fidelity_raw),
            "purity_raw" => Some(self.purity_raw),
            "fidelity_pure_raw" => Some(self.fidelity_pure_raw),
            "fidelity_nn" => self.fidelity_nn,
            "purity_nn" => self.purity_nn,
            "fidelity_pure_nn" => self.fidelity_pure_nn,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: Vec<RecordMetrics>,
    /// Mean and standard deviation per metric column present.
    pub summary: BTreeMap<String, Stat>,
    /// Counts in 100 bins of width 0.01 over [0, 1] per metric column.
    pub histograms: BTreeMap<String, Vec<u64>>,
}

fn histogram(values: &[f64]) -> Vec<u64> {
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for &v in values {
        let k = ((v * HISTOGRAM_BINS as f64).floor() as isize).clamp(0, HISTOGRAM_BINS as isize - 1);
        bins[k as usize] += 1;
    }
    bins
}

impl EvaluationReport {
    pub fn from_records(records: Vec<RecordMetrics>) -> Self {
        let mut summary = BTreeMap::new();
        let mut histograms = BTreeMap::new();
        for col in METRIC_COLUMNS {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.column(col)).collect();
            if vals.len() == records.len() {
                if let Some(s) = Stat::of(&vals) {
                    summary.insert(col.to_string(), s);
                    histograms.insert(col.to_string(), histogram(&vals));
                }
            }
        }
        Self { records, summary, histograms }
    }

    pub fn mean(&self, column: &str) -> Option<f64> {
        self.summary.get(column).map(|s| s.mean)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// CSV with `bin_lo,bin_hi` followed by one count column per metric.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let cols: Vec<&String> = self.histograms.keys().collect();
        let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        header.extend(cols.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for k in 0..HISTOGRAM_BINS {
            let mut row = vec![
                format!("{:.2}", k as f64 / HISTOGRAM_BINS as f64),
                format!("{:.2}", (k + 1) as f64 / HISTOGRAM_BINS as f64),
            ];
            row.extend(cols.iter().map(|c| self.histograms[*c][k].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn estimate_metrics(est: &EstimateRecord, truth: &PureState) -> Result<(f64, f64, f64)> {
    let f = fidelity(truth, &est.rho)?;
    let (v, _) = dominant_eigenvector(&est.rho);
    let fp = truth.overlap(&v).norm_sqr().min(1.0);
    Ok((f, purity(&est.rho), fp))
}

/// Metrics of raw (and optionally denoised) estimates against the true states.
pub fn evaluate(raw: &[EstimateRecord], nn: Option<&[EstimateRecord]>, truths: &Dataset) -> Result<EvaluationReport> {
    let by_id: BTreeMap<u64, &PureState> = truths
        .records
        .iter()
        .filter_map(|r| r.true_state.as_ref().map(|s| (r.id, s)))
        .collect();
    if let Some(nn) = nn {
        if nn.len() != raw.len() {
            return Err(Error::IdMismatch(format!("{} raw vs {} denoised estimates", raw.len(), nn.len())));
        }
    }
    let mut records = Vec::with_capacity(raw.len());
    for (k, est) in raw.iter().enumerate() {
        let truth = by_id
            .get(&est.id)
            .ok_or_else(|| Error::IdMismatch(format!("no true state for record {}", est.id)))?;
        let (f, p, fp) = estimate_metrics(est, truth)?;
        let mut m = RecordMetrics {
            id: est.id,
            fidelity_raw: f,
            purity_raw: p,
            fidelity_pure_raw: fp,
            fidelity_nn: None,
            purity_nn: None,
            fidelity_pure_nn: None,
        };
        if let Some(nn) = nn {
            let e = &nn[k];
            if e.id != est.id {
                return Err(Error::IdMismatch(format!("record {} vs {}", est.id, e.id)));
            }
            let (f, p, fp) = estimate_metrics(e, truth)?;
            m.fidelity_nn = Some(f);
            m.purity_nn = Some(p);
            m.fidelity_pure_nn = Some(fp);
        }
        records.push(m);
    }
    Ok(EvaluationReport::from_records(records))
}

/// MLE over each frequency vector, paired with record ids.
pub fn reconstruct_records(
    ids: &[u64],
    freqs: &[Vec<f64>],
    povm: &Povm,
    mle: &MleConfig,
    truths: Option<&[PureState]>,
) -> Result<Vec<EstimateRecord>> {
    (0..ids.len())
        .into_par_iter()
        .map(|k| {
            let res = if mle.enforce_pure {
                crate::mle::mle_pure(&freqs[k], povm, mle)?.result
            } else {
                mle_density(&freqs[k], povm, mle)?
            };
            EstimateRecord::new(ids[k], &res, truths.map(|t| &t[k]))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    pub n_states: usize,
    pub shots: u64,
    pub train: TrainConfig,
    pub mle: MleConfig,
    pub master_seed: u64,
    /// Reconstruct only the first `n` test records.
    pub eval_limit: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Full-scale settings: 10 500 states, 10⁴ shots, 7000/1500/2000 split.
    pub fn paper_scale(scenario: Scenario, master_seed: u64) -> Self {
        Self {
            scenario,
            n_states: 10_500,
            shots: 10_000,
            train: TrainConfig { seed: child_seed(master_seed, "train", 0), ..TrainConfig::default() },
            mle: MleConfig::default(),
            master_seed,
            eval_limit: None,
            out_dir: None,
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig::new(6, self.n_states, self.shots, self.scenario.spam(), child_seed(self.master_seed, "dataset", 0))
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.train.split;
        if a + b + c != self.n_states {
            return Err(Error::InvalidConfig(format!(
                "split {a}+{b}+{c} does not match {} states",
                self.n_states
            )));
        }
        if b == 0 || c == 0 {
            return Err(Error::InvalidConfig("validation and test sets must be non-empty".into()));
        }
        self.train.validate()?;
        self.mle.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scenario: Scenario,
    pub master_seed: u64,
    pub n_states: usize,
    pub shots: u64,
    pub split: (usize, usize, usize),
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub max_epochs_reached: bool,
    pub best_val_loss: Option<f64>,
    pub bhattacharyya_raw: f64,
    pub bhattacharyya_nn: f64,
    pub calibration: Option<GouyPhases>,
    pub evaluation: EvaluationReport,
}

impl PipelineReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub history: TrainHistory,
    pub params: NetworkParams,
}

/// Files written by a pipeline run inside `out_dir`.
pub const PIPELINE_FILES: [&str; 4] = ["report.json", "hist.csv", "history.csv", "weights.json"];

fn mean_bhattacharyya(targets: &[&ProbDistribution], predicted: &[Vec<f64>]) -> Result<f64> {
    let mut acc = 0.0;
    for (t, p) in targets.iter().zip(predicted) {
        acc += bhattacharyya_raw(t.values(), p)?;
    }
    Ok(acc / targets.len() as f64)
}

/// dataset → SIC → denoiser training → raw and denoised MLE → metrics.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    let result = run_pipeline_inner(config);
    if result.is_err() {
        if let Some(dir) = &config.out_dir {
            for f in PIPELINE_FILES {
                let _ = std::fs::remove_file(dir.join(f));
            }
        }
    }
    result
}

fn run_pipeline_inner(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let sic = search_sic(&SicSearchConfig::new(6, child_seed(config.master_seed, "sic", 0)))
        .map_err(|e| e.in_stage("build-povm"))?;
    let ideal = sic.povm;

    let data = generate_dataset(&config.dataset_config(), &ideal).map_err(|e| e.in_stage("gen-dataset"))?;
    let (a, b, c) = config.train.split;
    let parts = data.split(&[a, b, c])?;
    let (train_set, val_set, test_set) = (&parts[0], &parts[1], &parts[2]);

    let (params, history) = denoiser::train(
        &Samples::from_dataset(train_set)?,
        Some(&Samples::from_dataset(val_set)?),
        &config.train,
    )
    .map_err(|e| e.in_stage("train"))?;

    let n_eval = config.eval_limit.map_or(test_set.len(), |l| l.min(test_set.len()));
    let test = &test_set.records[..n_eval];
    let ids: Vec<u64> = test.iter().map(|r| r.id).collect();
    let truths: Vec<PureState> = test
        .iter()
        .map(|r| r.true_state.clone().ok_or_else(|| Error::InsufficientData("test record without state".into())))
        .collect::<Result<_>>()?;
    let raw_freqs: Vec<Vec<f64>> = test.iter().map(|r| r.noisy_freqs.clone()).collect();
    let nn_freqs: Vec<Vec<f64>> = predict_batch(&params, &raw_freqs)?
        .into_iter()
        .map(ProbDistribution::into_vec)
        .collect();

    let targets: Vec<&ProbDistribution> = test.iter().map(|r| &r.ideal_probs).collect();
    let bhattacharyya_raw = mean_bhattacharyya(&targets, &raw_freqs)?;
    let bhattacharyya_nn = mean_bhattacharyya(&targets, &nn_freqs)?;

    let (raw_povm, calibration) = config
        .scenario
        .reconstruction_povm(&ideal)
        .map_err(|e| e.in_stage("calibrate"))?;
    let raw = reconstruct_records(&ids, &raw_freqs, &raw_povm, &config.mle, Some(&truths))
        .map_err(|e| e.in_stage("reconstruct-raw"))?;
    let nn = reconstruct_records(&ids, &nn_freqs, &ideal, &config.mle, Some(&truths))
        .map_err(|e| e.in_stage("reconstruct-nn"))?;
    let evaluation = evaluate(&raw, Some(&nn), &Dataset { records: test.to_vec() })
        .map_err(|e| e.in_stage("evaluate"))?;

    let report = PipelineReport {
        scenario: config.scenario,
        master_seed: config.master_seed,
        n_states: config.n_states,
        shots: config.shots,
        split: config.train.split,
        best_epoch: history.best_epoch,
        stopped_epoch: history.stopped_epoch,
        max_epochs_reached: history.max_epochs_reached,
        best_val_loss: history.best_val_loss(),
        bhattacharyya_raw,
        bhattacharyya_nn,
        calibration,
        evaluation,
    };

    if let Some(dir) = &config.out_dir {
        let write = || -> Result<()> {
            std::fs::create_dir_all(dir)?;
            report.write_json(&dir.join("report.json"))?;
            report.evaluation.write_histogram_csv(&dir.join("hist.csv"))?;
            history.write_csv(&dir.join("history.csv"))?;
            denoiser::save_weights(&dir.join("weights.json"), &params, Some(&config.train))
        };
        write().map_err(|e| e.in_stage("write-outputs"))?;
    }
    Ok(PipelineOutput { report, history, params })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fraction: f64,
    pub n_train: usize,
    pub mean_kl: f64,
    pub mean_bhattacharyya: f64,
    pub std_bhattacharyya: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveConfig {
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub epochs: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl LearningCurveConfig {
    /// Fractions 0.1..=1.0 in steps of 0.1, 5 repeats, 200 epochs.
    pub fn standard(seed: u64) -> Self {
        Self {
            fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            repeats: 5,
            epochs: 200,
            train: TrainConfig::default(),
            seed,
        }
    }
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_fractions(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidConfig(format!("fractions `{spec}` must be start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || start > stop {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    let out: Vec<f64> = (0..=n).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect();
    if out.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidConfig("fractions must lie in (0, 1]".into()));
    }
    Ok(out)
}

/// Trains on `η·K` records sampled from `pool` for a fixed epoch budget and
/// scores predictions on `test`, averaged over repeats.
pub fn learning_curve(pool: &Dataset, test: &Dataset, config: &LearningCurveConfig) -> Result<Vec<CurveRow>> {
    if config.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    if config.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidConfig("fractions must lie in (0, 1]".into()));
    }
    let pool_samples = Samples::from_dataset(pool)?;
    let test_samples = Samples::from_dataset(test)?;
    let test_inputs: Vec<Vec<f64>> = test.records.iter().map(|r| r.noisy_freqs.clone()).collect();
    let targets: Vec<&ProbDistribution> = test.records.iter().map(|r| &r.ideal_probs).collect();

    let cells: Vec<(usize, usize)> = (0..config.fractions.len())
        .flat_map(|f| (0..config.repeats).map(move |r| (f, r)))
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(fi, rep)| {
            let frac = config.fractions[fi];
            let n_train = (frac * pool.len() as f64).round() as usize;
            if n_train < config.train.batch_size {
                return Err(Error::InsufficientData(format!(
                    "fraction {frac} gives {n_train} records, less than one batch"
                )));
            }
            let cell = (fi * config.repeats + rep) as u64;
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut child_rng(config.seed, "lc-sample", cell));
            idx.truncate(n_train);
            idx.sort_unstable();
            let train_cfg = TrainConfig {
                max_epochs: config.epochs,
                seed: child_seed(config.seed, "lc-train", cell),
                ..config.train.clone()
            };
            let (params, _) = denoiser::train(&pool_samples.select(&idx), None, &train_cfg)?;
            let kl = denoiser::evaluate_loss(&params, &test_samples)?;
            let pred: Vec<Vec<f64>> =
                predict_batch(&params, &test_inputs)?.into_iter().map(ProbDistribution::into_vec).collect();
            Ok((n_train, kl, mean_bhattacharyya(&targets, &pred)?))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(config
        .fractions
        .iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let cell = &scores[fi * config.repeats..(fi + 1) * config.repeats];
            let kls: Vec<f64> = cell.iter().map(|c| c.1).collect();
            let bs: Vec<f64> = cell.iter().map(|c| c.2).collect();
            let b = Stat::of(&bs).expect("repeats >= 1");
            CurveRow {
                fraction,
                n_train: cell[0].0,
                mean_kl: Stat::of(&kls).expect("repeats >= 1").mean,
                mean_bhattacharyya: b.mean,
                std_bhattacharyya: b.std,
            }
        })
        .collect())
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::DensityMatrix;
    use crate::rng::seeded;
    use crate::quantum::haar_random_pure;

    fn estimate(id: u64, rho: DensityMatrix) -> EstimateRecord {
        EstimateRecord { id, purity: purity(&rho), rho, fidelity: None, iterations: 0, converged: true }
    }

    fn truth_set(n: usize) -> Dataset {
        use crate::sampler::TomographyRecord;
        let mut rng = seeded(1);
        Dataset {
            records: (0..n as u64)
                .map(|id| {
                    let psi = haar_random_pure(6, &mut rng).unwrap();
                    TomographyRecord::exact(id, Some(psi), ProbDistribution::uniform(36), ProbDistribution::uniform(36))
                        .unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn bhattacharyya_cases() {
        let p = ProbDistribution::new(vec![0.2, 0.8]).unwrap();
        assert!((bhattacharyya(&p, &p).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(bhattacharyya_raw(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((bhattacharyya_raw(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(bhattacharyya_raw(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn exact_projectors_score_one() {
        let truths = truth_set(4);
        let est: Vec<EstimateRecord> = truths
            .records
            .iter()
            .map(|r| estimate(r.id, r.true_state.as_ref().unwrap().density()))
            .collect();
        let rep = evaluate(&est, None, &truths).unwrap();
        for r in &rep.records {
            assert!((r.fidelity_raw - 1.0).abs() < 1e-12);
            assert!((r.purity_raw - 1.0).abs() < 1e-12);
            assert!(r.fidelity_nn.is_none());
        }
        assert!(!rep.summary.contains_key("fidelity_nn"));
    }

    #[test]
    fn maximally_mixed_scores_one_sixth() {
        let truths = truth_set(3);
        let est: Vec<EstimateRecord> =
            (0..3).map(|id| estimate(id, DensityMatrix::maximally_mixed(6).unwrap())).collect();
        let rep = evaluate(&est, Some(&est), &truths).unwrap();
        for r in &rep.records {
            assert!((r.fidelity_raw - 1.0 / 6.0).abs() < 1e-12);
            assert!((r.purity_nn.unwrap() - 1.0 / 6.0).abs() < 1e-12);
        }
        assert_eq!(rep.histograms["fidelity_raw"][16], 3);
    }

    #[test]
    fn aggregates_match_columns() {
        let truths = truth_set(5);
        let mut rng = seeded(2);
        let est: Vec<EstimateRecord> = (0..5)
            .map(|id| estimate(id, haar_random_pure(6, &mut rng).unwrap().density()))
            .collect();
        let rep = evaluate(&est, None, &truths).unwrap();
        let mean = rep.records.iter().map(|r| r.fidelity_raw).sum::<f64>() / 5.0;
        assert!((rep.mean("fidelity_raw").unwrap() - mean).abs() < 1e-12);
        assert_eq!(rep.histograms["purity_raw"].iter().sum::<u64>(), 5);
    }

    #[test]
    fn id_mismatch_detected() {
        let truths = truth_set(2);
        let est = vec![estimate(7, DensityMatrix::maximally_mixed(6).unwrap())];
        assert!(matches!(evaluate(&est, None, &truths), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.005, 0.01, 0.999, 1.0]);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[99], 2);
    }

    #[test]
    fn fraction_parsing() {
        let f = parse_fractions("0.1:1.0:0.1").unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!(f[2], 0.3);
        assert_eq!(*f.last().unwrap(), 1.0);
        assert!(parse_fractions("0:1:0.5").is_err());
        assert!(parse_fractions("0.5").is_err());
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("bogus".parse::<Scenario>().is_err());
    }

    #[test]
    fn stat_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert!(Stat::of(&[]).is_none());
    }
}
