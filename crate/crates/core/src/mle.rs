//! Maximum-likelihood state estimation from outcome frequencies.
//!
//! The iteration is RρR with an exponent search: each step tries
//! `ρ_t ∝ R^t ρ R^t` for `t = 1, 2, 4, ...` and keeps the most likely
//! candidate. `t = 1` is the textbook step, so the likelihood never
//! decreases; larger `t` accelerates convergence towards rank-deficient
//! optima, where the plain iteration slows to a crawl.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::quantum::{fidelity, purity, DensityMatrix, Povm, PureState};

pub const PROB_FLOOR: f64 = 1e-12;
const FREQ_SUM_TOL: f64 = 1e-6;
const MAX_EXPONENT_DOUBLINGS: u32 = 27;
const DEGENERACY_GAP: f64 = 1e-10;
const LL_ROUNDING: f64 = 1e-14;
const LI_RANK_TOL: f64 = 1e-10;
const EXACT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub max_iterations: usize,
    /// Frobenius norm of the iterate change below which the run stops.
    pub convergence_tol: f64,
    pub enforce_pure: bool,
    /// Keep the log-likelihood of every accepted iterate.
    #[serde(default)]
    pub record_history: bool,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            convergence_tol: 1e-10,
            enforce_pure: false,
            record_history: false,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub rho_hat: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Empty unless `record_history` was set.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PureEstimate {
    pub state: PureState,
    /// `rho_hat` is the projector onto `state`; iterations refer to the mixed run.
    pub result: ReconstructionResult,
    pub degenerate: bool,
}

fn normalized_freqs(freqs: &[f64], povm: &Povm) -> Result<Vec<f64>> {
    if freqs.len() != povm.len() {
        return Err(Error::DimensionMismatch { expected: povm.len(), got: freqs.len() });
    }
    if freqs.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidDistribution("frequencies must be finite and non-negative".into()));
    }
    let s: f64 = freqs.iter().sum();
    if (s - 1.0).abs() > FREQ_SUM_TOL {
        return Err(Error::InvalidDistribution(format!("frequencies sum to {s}")));
    }
    Ok(freqs.iter().map(|f| f / s).collect())
}

fn predicted(rho: &ComplexMatrix, povm: &Povm) -> Vec<f64> {
    povm.elements().iter().map(|m| m.trace_product(rho).re).collect()
}

fn log_likelihood_of(freqs: &[f64], probs: &[f64]) -> f64 {
    freqs
        .iter()
        .zip(probs)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, p)| f * p.max(PROB_FLOOR).ln())
        .sum()
}

/// `Σ f log Tr(M ρ)` with the probability floor applied.
pub fn log_likelihood(freqs: &[f64], rho: &DensityMatrix, povm: &Povm) -> Result<f64> {
    let f = normalized_freqs(freqs, povm)?;
    Ok(log_likelihood_of(&f, &predicted(rho.matrix(), povm)))
}

fn r_operator(freqs: &[f64], probs: &[f64], povm: &Povm) -> ComplexMatrix {
    let d = povm.dim();
    let mut r = ComplexMatrix::zeros(d, d);
    for ((m, &f), &p) in povm.elements().iter().zip(freqs).zip(probs) {
        if f > 0.0 {
            r.add_scaled_assign(C64::new(f / p.max(PROB_FLOOR), 0.0), m);
        }
    }
    r.hermitian_part()
}

/// `R^t ρ R^t / Tr`, with the spectrum rescaled by its maximum so large `t`
/// stays finite.
fn powered_step(eig: &crate::linalg::HermitianEigen, log_max: f64, t: f64, rho: &ComplexMatrix) -> Option<ComplexMatrix> {
    let rt = eig.reconstruct_with(|l| if l > 0.0 { (t * (l.ln() - log_max)).exp() } else { 0.0 });
    let next = rho.conjugate_by(&rt).hermitian_part();
    let tr = next.trace().re;
    (tr.is_finite() && tr > 0.0).then(|| next.scale_real(1.0 / tr))
}

/// Least-squares linear inversion, accepted only when it is a state that
/// reproduces the frequencies exactly. Such a state attains the global
/// likelihood maximum (zero KL divergence), so no iteration is needed.
fn exactly_consistent_state(f: &[f64], povm: &Povm) -> Option<ComplexMatrix> {
    let d = povm.dim();
    let n = d * d;
    let mut frame = ComplexMatrix::zeros(n, n);
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    for (m, &fk) in povm.elements().iter().zip(f) {
        let v = m.as_slice();
        for i in 0..n {
            rhs[i] += v[i] * fk;
            for j in 0..n {
                frame[(i, j)] += v[i] * v[j].conj();
            }
        }
    }
    let eig = frame.hermitian_eigen();
    let top = eig.values.last().copied()?;
    let pinv = eig.reconstruct_with(|l| if l > LI_RANK_TOL * top { 1.0 / l } else { 0.0 });
    let rho = ComplexMatrix::from_row_major(d, d, pinv.mul_vec(&rhs)).ok()?.hermitian_part();
    let spectrum = rho.hermitian_eigen();
    if spectrum.values.first().is_none_or(|&l| l < -EXACT_TOL) {
        return None;
    }
    let clipped = spectrum.reconstruct_with(|l| l.max(0.0));
    let rho = clipped.scale_real(1.0 / clipped.trace().re);
    let residual = predicted(&rho, povm).iter().zip(f).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    (residual <= EXACT_TOL).then_some(rho)
}

pub fn mle_density(freqs: &[f64], povm: &Povm, config: &MleConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    let f = normalized_freqs(freqs, povm)?;
    if let Some(rho) = exactly_consistent_state(&f, povm) {
        let ll = log_likelihood_of(&f, &predicted(&rho, povm));
        return Ok(ReconstructionResult {
            rho_hat: DensityMatrix::new(rho)?,
            log_likelihood: ll,
            iterations_used: 0,
            converged: true,
            history: if config.record_history { vec![ll] } else { Vec::new() },
        });
    }
    iterate(&f, povm, config)
}

/// The bare RρR loop from `I/d`, without the exact-consistency shortcut.
pub fn rrr_iterate(freqs: &[f64], povm: &Povm, config: &MleConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    iterate(&normalized_freqs(freqs, povm)?, povm, config)
}

fn iterate(f: &[f64], povm: &Povm, config: &MleConfig) -> Result<ReconstructionResult> {
    let d = povm.dim();
    let mut rho = ComplexMatrix::identity(d).scale_real(1.0 / d as f64);
    let mut probs = predicted(&rho, povm);
    let mut ll = log_likelihood_of(f, &probs);
    let mut history = Vec::new();
    if config.record_history {
        history.push(ll);
    }
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let r = r_operator(f, &probs, povm);
        let eig = r.hermitian_eigen();
        let top = eig.values.last().copied().unwrap_or(0.0);
        if !(top > 0.0 && top.is_finite()) {
            return Err(Error::Numerical("R operator has no positive spectrum".into()));
        }
        let log_max = top.ln();

        let mut candidates: Vec<(ComplexMatrix, Vec<f64>, f64)> = Vec::new();
        let mut t = 1.0;
        for _ in 0..=MAX_EXPONENT_DOUBLINGS {
            let Some(cand) = powered_step(&eig, log_max, t, &rho) else { break };
            let cand_probs = predicted(&cand, povm);
            let cand_ll = log_likelihood_of(f, &cand_probs);
            if candidates.last().is_some_and(|(_, _, b)| cand_ll <= *b) {
                break;
            }
            candidates.push((cand, cand_probs, cand_ll));
            t *= 2.0;
        }
        if candidates.is_empty() {
            return Err(Error::Numerical("RρR step produced a zero-trace iterate".into()));
        }
        // Near the optimum likelihood differences drown in rounding; the
        // plain step is monotone in exact arithmetic, so fall back to it.
        let noise = LL_ROUNDING * ll.abs().max(1.0);
        let pick = if candidates.last().map_or(false, |c| c.2 - ll > noise) { candidates.len() - 1 } else { 0 };
        let (next, next_probs, next_ll) = candidates.swap_remove(pick);
        debug_assert!(next.hermiticity_error() < 1e-10);
        debug_assert!((next.trace().re - 1.0).abs() < 1e-10);

        let change = next.sub(&rho).frobenius_norm();
        rho = next;
        probs = next_probs;
        ll = next_ll;
        if config.record_history {
            history.push(ll);
        }
        if change < config.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(ReconstructionResult {
        rho_hat: DensityMatrix::new(rho)?,
        log_likelihood: ll,
        iterations_used: iterations,
        converged,
        history,
    })
}

/// Dominant eigenvector of the mixed estimate.
pub fn mle_pure(freqs: &[f64], povm: &Povm, config: &MleConfig) -> Result<PureEstimate> {
    let mixed = mle_density(freqs, povm, config)?;
    let (state, degenerate) = dominant_eigenvector(&mixed.rho_hat);
    let rho_hat = state.density();
    let log_likelihood = log_likelihood(freqs, &rho_hat, povm)?;
    Ok(PureEstimate {
        state,
        result: ReconstructionResult { rho_hat, log_likelihood, ..mixed },
        degenerate,
    })
}

/// Top eigenvector with its first significant entry made real positive.
/// Equal top eigenvalues (gap below 1e-10) are flagged.
pub fn dominant_eigenvector(rho: &DensityMatrix) -> (PureState, bool) {
    let eig = rho.matrix().hermitian_eigen();
    let n = eig.values.len();
    let degenerate = n > 1 && eig.values[n - 1] - eig.values[n - 2] < DEGENERACY_GAP;
    let mut v = eig.vectors.column(n - 1);
    if let Some(lead) = v.iter().find(|z| z.norm() > 1e-8).copied() {
        let phase = lead.conj() / lead.norm();
        v.iter_mut().for_each(|z| *z *= phase);
    }
    let state = PureState::new(v).expect("eigenvector is normalizable");
    (state, degenerate)
}

/// Reconstructs each frequency vector; order preserved.
pub fn reconstruct_batch(freqs: &[Vec<f64>], povm: &Povm, config: &MleConfig) -> Result<Vec<ReconstructionResult>> {
    freqs
        .par_iter()
        .map(|f| {
            if config.enforce_pure {
                mle_pure(f, povm, config).map(|p| p.result)
            } else {
                mle_density(f, povm, config)
            }
        })
        .collect()
}

/// One line of an estimates file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub id: u64,
    pub rho: DensityMatrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity: Option<f64>,
    pub purity: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EstimateRecord {
    pub fn new(id: u64, result: &ReconstructionResult, truth: Option<&PureState>) -> Result<Self> {
        Ok(Self {
            id,
            fidelity: truth.map(|t| fidelity(t, &result.rho_hat)).transpose()?,
            purity: purity(&result.rho_hat),
            rho: result.rho_hat.clone(),
            iterations: result.iterations_used,
            converged: result.converged,
        })
    }
}

pub fn save_estimates(path: &Path, estimates: &[EstimateRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in estimates {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{search_sic, SicFrame, SicSearchConfig};
    use crate::quantum::{born_probabilities, haar_random_pure};
    use crate::rng::seeded;
    use crate::sampler::sample_counts;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn sic6() -> &'static SicFrame {
        static SIC: OnceLock<SicFrame> = OnceLock::new();
        SIC.get_or_init(|| search_sic(&SicSearchConfig::new(6, 1)).unwrap())
    }

    fn povm() -> &'static Povm {
        &sic6().povm
    }

    fn exact_freqs(psi: &PureState) -> Vec<f64> {
        born_probabilities(&psi.density(), povm()).unwrap().into_vec()
    }

    #[test]
    fn maximally_mixed_is_a_fixed_point() {
        let rho = DensityMatrix::maximally_mixed(6).unwrap();
        let f = born_probabilities(&rho, povm()).unwrap().into_vec();
        let res = mle_density(&f, povm(), &MleConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations_used <= 1);
        assert!(res.rho_hat.matrix().max_abs_diff(rho.matrix()) < 1e-12);
        let looped = rrr_iterate(&f, povm(), &MleConfig::default()).unwrap();
        assert_eq!(looped.iterations_used, 1);
    }

    #[test]
    fn exact_pure_states_are_recovered() {
        let mut rng = seeded(21);
        for _ in 0..100 {
            let psi = haar_random_pure(6, &mut rng).unwrap();
            let res = mle_density(&exact_freqs(&psi), povm(), &MleConfig::default()).unwrap();
            assert!(fidelity(&psi, &res.rho_hat).unwrap() > 1.0 - 1e-6);
        }
    }

    #[test]
    fn iteration_alone_recovers_exact_pure_states() {
        let mut rng = seeded(22);
        let cfg = MleConfig { record_history: true, ..MleConfig::default() };
        for _ in 0..10 {
            let psi = haar_random_pure(6, &mut rng).unwrap();
            let res = rrr_iterate(&exact_freqs(&psi), povm(), &cfg).unwrap();
            assert!(res.iterations_used <= 5000);
            assert!(fidelity(&psi, &res.rho_hat).unwrap() > 1.0 - 1e-6);
            for w in res.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn pure_estimate_on_exact_data() {
        let psi = haar_random_pure(6, &mut seeded(3)).unwrap();
        let f = exact_freqs(&psi);
        let mixed = mle_density(&f, povm(), &MleConfig::default()).unwrap();
        let pure = mle_pure(&f, povm(), &MleConfig::default()).unwrap();
        let fp = fidelity(&psi, &pure.result.rho_hat).unwrap();
        assert!(fp > 1.0 - 1e-6);
        assert!(fp >= fidelity(&psi, &mixed.rho_hat).unwrap() - 1e-12);
        assert!(!pure.degenerate);
    }

    #[test]
    fn maximally_mixed_pure_estimate_is_degenerate() {
        let f = vec![1.0 / 36.0; 36];
        let pure = mle_pure(&f, povm(), &MleConfig::default()).unwrap();
        assert!(pure.degenerate);
        assert!((purity(&pure.result.rho_hat) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shot_noise_baseline() {
        let mut rng = seeded(8);
        let mut total = 0.0;
        let n = 30;
        for _ in 0..n {
            let psi = haar_random_pure(6, &mut rng).unwrap();
            let p = born_probabilities(&psi.density(), povm()).unwrap();
            let counts = sample_counts(&p, 10_000, &mut rng);
            let f: Vec<f64> = counts.iter().map(|&c| c as f64 / 1e4).collect();
            let res = mle_density(&f, povm(), &MleConfig::default()).unwrap();
            total += fidelity(&psi, &res.rho_hat).unwrap();
        }
        assert!(total / n as f64 >= 0.98, "mean fidelity {}", total / n as f64);
    }

    #[test]
    fn idempotent_on_own_output() {
        let mut rng = seeded(9);
        let psi = haar_random_pure(6, &mut rng).unwrap();
        let p = born_probabilities(&psi.density(), povm()).unwrap();
        let f: Vec<f64> = sample_counts(&p, 2000, &mut rng).iter().map(|&c| c as f64 / 2000.0).collect();
        let first = mle_density(&f, povm(), &MleConfig::default()).unwrap();
        let again_f = born_probabilities(&first.rho_hat, povm()).unwrap().into_vec();
        let second = mle_density(&again_f, povm(), &MleConfig::default()).unwrap();
        assert!(second.rho_hat.matrix().max_abs_diff(first.rho_hat.matrix()) < 1e-8);
    }

    #[test]
    fn zero_probability_outcome_is_floored() {
        // Frequencies concentrated on one outcome are unreachable by any state.
        let mut f = vec![0.0; 36];
        f[0] = 1.0;
        let res = mle_density(&f, povm(), &MleConfig { max_iterations: 200, ..MleConfig::default() }).unwrap();
        assert!(res.log_likelihood.is_finite());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(mle_density(&[0.5; 3], povm(), &MleConfig::default()).is_err());
        assert!(mle_density(&vec![0.5; 36], povm(), &MleConfig::default()).is_err());
        let cfg = MleConfig { convergence_tol: 0.0, ..MleConfig::default() };
        assert!(mle_density(&vec![1.0 / 36.0; 36], povm(), &cfg).is_err());
    }

    #[test]
    fn non_convergence_reports_best_iterate() {
        let psi = haar_random_pure(6, &mut seeded(10)).unwrap();
        let cfg = MleConfig { max_iterations: 1, ..MleConfig::default() };
        let res = rrr_iterate(&exact_freqs(&psi), povm(), &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations_used, 1);
    }

    #[test]
    fn estimates_round_trip() {
        let psi = haar_random_pure(6, &mut seeded(12)).unwrap();
        let res = mle_density(&exact_freqs(&psi), povm(), &MleConfig::default()).unwrap();
        let recs = vec![
            EstimateRecord::new(0, &res, Some(&psi)).unwrap(),
            EstimateRecord::new(1, &res, None).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.jsonl");
        save_estimates(&path, &recs).unwrap();
        let back = load_estimates(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].fidelity, None);
        assert!(back[0].rho.matrix().max_abs_diff(recs[0].rho.matrix()) < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn permutation_invariant(seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let psi = haar_random_pure(6, &mut rng).unwrap();
            let p = born_probabilities(&psi.density(), povm()).unwrap();
            let f: Vec<f64> = sample_counts(&p, 1000, &mut rng).iter().map(|&c| c as f64 / 1000.0).collect();
            let perm: Vec<usize> = (0..36).rev().collect();
            let pf: Vec<f64> = perm.iter().map(|&k| f[k]).collect();
            let a = mle_density(&f, povm(), &MleConfig::default()).unwrap();
            let b = mle_density(&pf, &povm().permuted(&perm), &MleConfig::default()).unwrap();
            prop_assert!(a.rho_hat.matrix().max_abs_diff(b.rho_hat.matrix()) < 1e-8);
        }

        #[test]
        fn iterates_stay_physical(seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let psi = haar_random_pure(6, &mut rng).unwrap();
            let p = born_probabilities(&psi.density(), povm()).unwrap();
            let f: Vec<f64> = sample_counts(&p, 300, &mut rng).iter().map(|&c| c as f64 / 300.0).collect();
            let cfg = MleConfig { record_history: true, ..MleConfig::default() };
            let res = mle_density(&f, povm(), &cfg).unwrap();
            prop_assert!(res.rho_hat.eigenvalues().iter().all(|&l| l >= -1e-10));
            for w in res.history.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }
}
