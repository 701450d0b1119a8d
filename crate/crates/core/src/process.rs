//! Quantum process tomography by linear inversion with CP/TP projection.
//!
//! The channel is written as `ℰ(X) = Σ χ_mn B_m X B_n†` over scaled matrix
//! units `B_(ab) = √d |a⟩⟨b|`, which gives `Tr χ = 1` for trace-preserving
//! maps. Inversion runs in two linear stages: each probe's output operator
//! is fitted through the POVM, then the superoperator is fitted across
//! probes. The composite design has rank `rank(probes) · rank(POVM)`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, ComplexMatrix, C64};
use crate::quantum::{apply_channel, born_probabilities, KrausChannel, Povm, PureState};
use crate::rng::{child_seed, SeededRng};
use crate::sampler::sample_counts;

const RANK_TOL: f64 = 1e-8;
/// Frobenius distance between the raw and projected χ that flags a poor fit.
pub const MODEL_MISMATCH_THRESHOLD: f64 = 0.1;
const DEGENERACY_GAP: f64 = 1e-10;
const PHASE_MODULUS_MIN: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ProcessDataset {
    pub probes: Vec<PureState>,
    pub povm: Povm,
    /// `observed[i][j]`: probability of outcome `j` for probe `i`.
    pub observed: Vec<Vec<f64>>,
}

impl ProcessDataset {
    fn validate(&self) -> Result<()> {
        if self.probes.len() != self.observed.len() {
            return Err(Error::DimensionMismatch {
                expected: self.probes.len(),
                got: self.observed.len(),
            });
        }
        for p in &self.probes {
            if p.dim() != self.povm.dim() {
                return Err(Error::DimensionMismatch { expected: self.povm.dim(), got: p.dim() });
            }
        }
        for row in &self.observed {
            if row.len() != self.povm.len() {
                return Err(Error::DimensionMismatch { expected: self.povm.len(), got: row.len() });
            }
        }
        Ok(())
    }
}

/// Probe data for `channel`; `shots = 0` gives exact probabilities.
pub fn simulate_process_data(
    channel: &KrausChannel,
    probes: &[PureState],
    povm: &Povm,
    shots: u64,
    seed: u64,
) -> Result<ProcessDataset> {
    let observed = probes
        .iter()
        .enumerate()
        .map(|(i, probe)| {
            let out = apply_channel(channel, &probe.density())?;
            let p = born_probabilities(&out, povm)?;
            if shots == 0 {
                return Ok(p.into_vec());
            }
            let mut rng = SeededRng::seed_from_u64(child_seed(seed, "process-probe", i as u64));
            Ok(sample_counts(&p, shots, &mut rng).iter().map(|&c| c as f64 / shots as f64).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProcessDataset { probes: probes.to_vec(), povm: povm.clone(), observed })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiMatrix {
    pub dim: usize,
    pub chi: ComplexMatrix,
    /// Distance between the least-squares χ and its CP/TP projection.
    pub projection_residual: f64,
    pub model_mismatch: bool,
}

/// `√d |a⟩⟨b|` for `m = a·d + b`.
pub fn basis_element(dim: usize, m: usize) -> ComplexMatrix {
    let mut b = ComplexMatrix::zeros(dim, dim);
    b[(m / dim, m % dim)] = C64::new((dim as f64).sqrt(), 0.0);
    b
}

impl ChiMatrix {
    /// Wraps a χ matrix without projection.
    pub fn from_matrix(dim: usize, chi: ComplexMatrix) -> Result<Self> {
        if chi.rows() != dim * dim || chi.cols() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: chi.rows() });
        }
        Ok(Self { dim, chi, projection_residual: 0.0, model_mismatch: false })
    }

    /// χ of a channel given in Kraus form.
    pub fn from_channel(channel: &KrausChannel) -> Self {
        let d = channel.dim();
        let mut chi = ComplexMatrix::zeros(d * d, d * d);
        for e in channel.operators() {
            let v: Vec<C64> = e.as_slice().to_vec();
            chi.add_scaled_assign(C64::new(1.0 / d as f64, 0.0), &ComplexMatrix::outer(&v, &v));
        }
        Self { dim: d, chi, projection_residual: 0.0, model_mismatch: false }
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v = self.chi.hermitian_eigen().values;
        v.reverse();
        v
    }

    /// Kraus operators `√λ Σ u_m B_m` for the positive eigenpairs, largest first.
    pub fn kraus_operators(&self) -> Vec<ComplexMatrix> {
        let d = self.dim;
        let eig = self.chi.hermitian_eigen();
        let mut ops = Vec::new();
        for k in (0..eig.values.len()).rev() {
            let lambda = eig.values[k];
            if lambda <= 1e-14 {
                continue;
            }
            let u = eig.vectors.column(k);
            let s = (lambda * d as f64).sqrt();
            ops.push(ComplexMatrix::from_fn(d, d, |a, b| u[a * d + b] * s));
        }
        ops
    }

    /// `‖Σ χ_mn B_n† B_m − I‖` (Frobenius).
    pub fn tp_residual(&self) -> f64 {
        let d = self.dim;
        let mut acc = ComplexMatrix::zeros(d, d);
        for e in self.kraus_operators() {
            acc = acc.add(&e.adjoint().matmul(&e));
        }
        acc.sub(&ComplexMatrix::identity(d)).frobenius_norm()
    }

    pub fn to_channel(&self) -> Result<KrausChannel> {
        KrausChannel::new(self.kraus_operators())
    }

    /// `ℰ(X)` evaluated directly from χ.
    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let d = self.dim;
        let scale = d as f64;
        let mut out = ComplexMatrix::zeros(d, d);
        // B_(ab) X B_(ce)† = d X_be |a⟩⟨c|
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let coeff = self.chi[(a * d + b, c * d + e)];
                        if coeff != C64::new(0.0, 0.0) {
                            out[(a, c)] += coeff * x[(b, e)] * scale;
                        }
                    }
                }
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for ChiMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.chi[idx]
    }
}

/// Hermitian generators: diagonal units, then symmetric and antisymmetric pairs.
fn hermitian_generators(d: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(d * d);
    for k in 0..d {
        let mut g = ComplexMatrix::zeros(d, d);
        g[(k, k)] = C64::new(1.0, 0.0);
        out.push(g);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            let mut s = ComplexMatrix::zeros(d, d);
            s[(k, l)] = C64::new(1.0, 0.0);
            s[(l, k)] = C64::new(1.0, 0.0);
            out.push(s);
            let mut a = ComplexMatrix::zeros(d, d);
            a[(k, l)] = C64::new(0.0, 1.0);
            a[(l, k)] = C64::new(0.0, -1.0);
            out.push(a);
        }
    }
    out
}

fn complex_rank(m: &DMatrix<C64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Rank of the composite linear map from χ to the observed probabilities.
pub fn design_rank(probes: &[PureState], povm: &Povm) -> usize {
    let d = povm.dim();
    let gens = hermitian_generators(d);
    let a = DMatrix::from_fn(povm.len(), gens.len(), |j, p| povm.elements()[j].trace_product(&gens[p]).re);
    let rho = DMatrix::from_fn(d * d, probes.len(), |k, i| {
        let psi = probes[i].amplitudes();
        psi[k / d] * psi[k % d].conj()
    });
    numerical_rank(&a, RANK_TOL) * complex_rank(&rho)
}

/// Clip negative eigenvalues of the Hermitian part.
pub fn cp_projection(chi: &ComplexMatrix) -> ComplexMatrix {
    chi.hermitian_map(|l| l.max(0.0))
}

/// `E_k ← E_k T^{-1/2}` with `T = Σ E_k† E_k`.
fn tp_renormalize(dim: usize, chi: &ComplexMatrix) -> Result<ComplexMatrix> {
    let raw = ChiMatrix { dim, chi: chi.clone(), projection_residual: 0.0, model_mismatch: false };
    let kraus = raw.kraus_operators();
    if kraus.is_empty() {
        return Err(Error::Numerical("χ has no positive spectrum after projection".into()));
    }
    let mut t = ComplexMatrix::zeros(dim, dim);
    for e in &kraus {
        t = t.add(&e.adjoint().matmul(e));
    }
    let eig = t.hermitian_eigen();
    if eig.values[0] <= 1e-12 {
        return Err(Error::Numerical("Kraus sum is singular; cannot restore trace preservation".into()));
    }
    let t_inv_sqrt = eig.reconstruct_with(|l| 1.0 / l.sqrt());
    let mut out = ComplexMatrix::zeros(dim * dim, dim * dim);
    for e in kraus {
        let v: Vec<C64> = e.matmul(&t_inv_sqrt).into_vec();
        out.add_scaled_assign(C64::new(1.0 / dim as f64, 0.0), &ComplexMatrix::outer(&v, &v));
    }
    Ok(out.hermitian_part())
}

pub fn reconstruct_process(data: &ProcessDataset) -> Result<ChiMatrix> {
    data.validate()?;
    let d = data.povm.dim();
    let needed = d.pow(4);
    let rank = design_rank(&data.probes, &data.povm);
    if rank < needed {
        return Err(Error::ProbesNotComplete { rank, needed });
    }

    // Stage 1: output operator of each probe, σ_i = Σ x_p G_p.
    let gens = hermitian_generators(d);
    let a = DMatrix::from_fn(data.povm.len(), gens.len(), |j, p| {
        data.povm.elements()[j].trace_product(&gens[p]).re
    });
    let a_pinv = a
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("POVM pseudo-inverse: {e}")))?;

    let n = data.probes.len();
    let mut outputs = DMatrix::<C64>::zeros(d * d, n);
    let mut inputs = DMatrix::<C64>::zeros(d * d, n);
    for (i, (probe, obs)) in data.probes.iter().zip(&data.observed).enumerate() {
        let x = &a_pinv * nalgebra::DVector::from_column_slice(obs);
        let mut sigma = ComplexMatrix::zeros(d, d);
        for (p, g) in gens.iter().enumerate() {
            sigma.add_scaled_assign(C64::new(x[p], 0.0), g);
        }
        let rho = probe.projector();
        for k in 0..d * d {
            outputs[(k, i)] = sigma.as_slice()[k];
            inputs[(k, i)] = rho.as_slice()[k];
        }
    }

    // Stage 2: superoperator S with vec(σ_i) = S vec(ρ_i).
    let inputs_pinv = inputs
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("probe pseudo-inverse: {e}")))?;
    let s = outputs * inputs_pinv;

    // Reshuffle: χ_(ab),(ce) = S_(ac),(be) / d.
    let chi_ls = ComplexMatrix::from_fn(d * d, d * d, |r, c| {
        let (a, b) = (r / d, r % d);
        let (cc, e) = (c / d, c % d);
        s[(a * d + cc, b * d + e)] / d as f64
    });

    let projected = tp_renormalize(d, &cp_projection(&chi_ls))?;
    let projection_residual = projected.sub(&chi_ls).frobenius_norm();
    Ok(ChiMatrix {
        dim: d,
        chi: projected,
        projection_residual,
        model_mismatch: projection_residual > MODEL_MISMATCH_THRESHOLD,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DominantKraus {
    pub e1: ComplexMatrix,
    pub eigenvalue: f64,
    pub degenerate: bool,
}

/// Top-eigenvalue Kraus operator with entry (0,0) made real and non-negative.
pub fn dominant_kraus(chi: &ChiMatrix) -> DominantKraus {
    let d = chi.dim;
    let eig = chi.chi.hermitian_eigen();
    let n = eig.values.len();
    let lambda = eig.values[n - 1].max(0.0);
    let degenerate = n > 1 && eig.values[n - 1] - eig.values[n - 2] < DEGENERACY_GAP;
    let u = eig.vectors.column(n - 1);
    let s = (lambda * d as f64).sqrt();
    let mut e1 = ComplexMatrix::from_fn(d, d, |a, b| u[a * d + b] * s);
    let anchor = if e1[(0, 0)].norm() > 1e-12 {
        e1[(0, 0)]
    } else {
        e1.as_slice().iter().copied().find(|z| z.norm() > 1e-12).unwrap_or(C64::new(1.0, 0.0))
    };
    let phase = anchor.conj() / anchor.norm();
    e1 = e1.scale(phase);
    DominantKraus { e1, eigenvalue: lambda, degenerate }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GouyPhases {
    pub phi1: f64,
    pub phi2: f64,
    pub per_mode: Vec<f64>,
    /// Largest deviation from the order mean, per order.
    pub spread1: f64,
    pub spread2: f64,
}

/// Wrap to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

pub fn circular_mean(phases: &[f64]) -> f64 {
    let (s, c) = phases.iter().fold((0.0, 0.0), |(s, c), p| (s + p.sin(), c + p.cos()));
    s.atan2(c)
}

/// Order-wise phases relative to HG00, canonical six-mode ordering.
pub fn extract_gouy_phases(e1: &ComplexMatrix) -> Result<GouyPhases> {
    if e1.rows() != 6 || e1.cols() != 6 {
        return Err(Error::DimensionMismatch { expected: 6, got: e1.rows() });
    }
    for k in 0..6 {
        let m = e1[(k, k)].norm();
        if m < PHASE_MODULUS_MIN {
            return Err(Error::PhaseUndefined { index: k, modulus: m });
        }
    }
    let ref_arg = e1[(0, 0)].arg();
    let per_mode: Vec<f64> = (0..6).map(|k| wrap_phase(e1[(k, k)].arg() - ref_arg)).collect();
    let phi1 = circular_mean(&per_mode[1..3]);
    let phi2 = circular_mean(&per_mode[3..6]);
    let spread = |xs: &[f64], mean: f64| xs.iter().map(|x| wrap_phase(x - mean).abs()).fold(0.0, f64::max);
    Ok(GouyPhases {
        phi1,
        phi2,
        spread1: spread(&per_mode[1..3], phi1),
        spread2: spread(&per_mode[3..6], phi2),
        per_mode,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChiFile {
    pub dim: usize,
    pub chi: ComplexMatrix,
    pub eigenvalues: Vec<f64>,
    pub e1: ComplexMatrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gouy: Option<GouyPhases>,
}

impl ChiFile {
    pub fn new(chi: &ChiMatrix) -> Self {
        let e1 = dominant_kraus(chi).e1;
        let gouy = extract_gouy_phases(&e1).ok();
        Self { dim: chi.dim, chi: chi.chi.clone(), eigenvalues: chi.eigenvalues(), e1, gouy }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
