//! Quantum-state primitives: pure states, density matrices, measurements,
//! Kraus channels, Born-rule probabilities and the state metrics used for
//! evaluation.
//!
//! Basis ordering is fixed crate-wide to the Hermite-Gaussian order
//! `[HG00, HG01, HG10, HG02, HG11, HG20]` for `d = 6`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, norm, ComplexMatrix, ComplexVecRepr, C64, ZERO};

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues below this are rejected; those in `[EIGEN_TOL, 0)` are clipped.
pub const EIGEN_TOL: f64 = -1e-10;
pub const POVM_TOL: f64 = 1e-10;
pub const KRAUS_TOL: f64 = 1e-8;
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A unit vector in `C^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    /// Normalizes `amplitudes`; fails on a zero vector or `d < 2`.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidDimension(amplitudes.len()));
        }
        let n = norm(&amplitudes);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidState("zero or non-finite state vector".into()));
        }
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|z| z / n).collect(),
        })
    }

    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::DimensionMismatch { expected: dim, got: k });
        }
        let mut v = vec![ZERO; dim];
        v[k] = C64::new(1.0, 0.0);
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn overlap(&self, other: &PureState) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    pub fn projector(&self) -> ComplexMatrix {
        ComplexMatrix::outer(&self.amplitudes, &self.amplitudes)
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix {
            matrix: self.projector(),
        }
    }

    pub fn to_repr(&self) -> ComplexVecRepr {
        ComplexVecRepr::from_slice(&self.amplitudes)
    }

    pub fn from_repr(repr: &ComplexVecRepr) -> Result<Self> {
        Self::new(repr.to_vec()?)
    }
}

/// Haar-random pure state: i.i.d. standard complex Gaussian amplitudes, normalized.
pub fn haar_random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<PureState> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let amps = (0..dim)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im)
        })
        .collect();
    PureState::new(amps)
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates physicality. Eigenvalues in `[-1e-10, 0)` are clipped to zero
    /// and the matrix renormalized.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidState("density matrix must be square".into()));
        }
        if matrix.rows() < 2 {
            return Err(Error::InvalidDimension(matrix.rows()));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = matrix.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let eig = matrix.hermitian_eigen();
        let min = eig.values[0];
        if min < EIGEN_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        if min < 0.0 {
            let clipped = eig.reconstruct_with(|x| x.max(0.0));
            let t = clipped.trace().re;
            return Ok(Self {
                matrix: clipped.scale_real(1.0 / t),
            });
        }
        Ok(Self {
            matrix: matrix.hermitian_part(),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self {
            matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        })
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        let diag: Vec<C64> = populations.iter().map(|&p| C64::new(p, 0.0)).collect();
        Self::new(ComplexMatrix::diagonal(&diag))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix.hermitian_eigen().values
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(d)?;
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Non-negative real vector summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbDistribution {
    values: Vec<f64>,
}

impl ProbDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {bad} is negative or non-finite")));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {s}")));
        }
        Ok(Self { values })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidDistribution(format!("weights sum to {s}")));
        }
        Self::new(weights.into_iter().map(|w| w / s).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Positive operators summing to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    dim: usize,
    elements: Vec<ComplexMatrix>,
    labels: Vec<String>,
}

impl Povm {
    pub fn new(elements: Vec<ComplexMatrix>, labels: Option<Vec<String>>) -> Result<Self> {
        let dim = Self::check_elements(&elements)?;
        let residual = completeness_residual(&elements, dim);
        if residual > POVM_TOL {
            return Err(Error::InconsistentPovm(format!(
                "elements sum to identity only within {residual:e}"
            )));
        }
        let labels = match labels {
            Some(l) if l.len() != elements.len() => {
                return Err(Error::InconsistentPovm("label count differs from element count".into()))
            }
            Some(l) => l,
            None => (0..elements.len()).map(|k| k.to_string()).collect(),
        };
        Ok(Self { dim, elements, labels })
    }

    fn check_elements(elements: &[ComplexMatrix]) -> Result<usize> {
        let dim = elements
            .first()
            .map(|m| m.rows())
            .ok_or_else(|| Error::InconsistentPovm("no elements".into()))?;
        for (k, m) in elements.iter().enumerate() {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.rows() });
            }
            if m.hermiticity_error() > POVM_TOL {
                return Err(Error::InconsistentPovm(format!("element {k} is not Hermitian")));
            }
            let min = m.hermitian_eigen().values[0];
            if min < -POVM_TOL {
                return Err(Error::InconsistentPovm(format!(
                    "element {k} has negative eigenvalue {min:e}"
                )));
            }
        }
        Ok(dim)
    }

    /// Rank-one elements `w_k |v_k><v_k|`, e.g. `w = 1/d` for a SIC.
    pub fn from_rank_one(vectors: &[Vec<C64>], weight: f64) -> Result<Self> {
        let elements = vectors
            .iter()
            .map(|v| ComplexMatrix::outer(v, v).scale_real(weight))
            .collect();
        Self::new(elements, None)
    }

    /// Projectors onto the computational basis.
    pub fn computational(dim: usize) -> Result<Self> {
        let elements = (0..dim)
            .map(|k| PureState::basis(dim, k).map(|s| s.projector()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(elements, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn completeness_residual(&self) -> f64 {
        completeness_residual(&self.elements, self.dim)
    }

    /// Elements conjugated by `u`: `u M u†`.
    pub fn conjugated(&self, u: &ComplexMatrix) -> Result<Povm> {
        let elements = self.elements.iter().map(|m| m.conjugate_by(u)).collect();
        Povm::new(elements, Some(self.labels.clone()))
    }

    /// Same elements in a different order.
    pub fn permuted(&self, perm: &[usize]) -> Povm {
        Povm {
            dim: self.dim,
            elements: perm.iter().map(|&k| self.elements[k].clone()).collect(),
            labels: perm.iter().map(|&k| self.labels[k].clone()).collect(),
        }
    }
}

fn completeness_residual(elements: &[ComplexMatrix], dim: usize) -> f64 {
    let mut sum = ComplexMatrix::zeros(dim, dim);
    for m in elements {
        sum = sum.add(m);
    }
    sum.max_abs_diff(&ComplexMatrix::identity(dim))
}

/// Born-rule probabilities `Re Tr(M_k rho)`.
pub fn born_probabilities(rho: &DensityMatrix, povm: &Povm) -> Result<ProbDistribution> {
    if rho.dim() != povm.dim() {
        return Err(Error::DimensionMismatch {
            expected: povm.dim(),
            got: rho.dim(),
        });
    }
    let mut values = Vec::with_capacity(povm.len());
    for m in povm.elements() {
        let p = m.trace_product(rho.matrix()).re;
        if p < -NORM_TOL {
            return Err(Error::InconsistentPovm(format!("negative probability {p:e}")));
        }
        values.push(p.max(0.0));
    }
    let s: f64 = values.iter().sum();
    if (s - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InconsistentPovm(format!("probabilities sum to {s}")));
    }
    values.iter_mut().for_each(|v| *v /= s);
    ProbDistribution::new(values)
}

/// Detection operators that need not sum to the identity (lossy detection).
///
/// Observed frequencies are conditioned on a click, so the outcome
/// distribution is `Tr(D_k rho) / sum_j Tr(D_j rho)`. A complete POVM is the
/// special case where the normalizer is one.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    dim: usize,
    elements: Vec<ComplexMatrix>,
    labels: Vec<String>,
}

impl Measurement {
    pub fn new(elements: Vec<ComplexMatrix>, labels: Vec<String>) -> Result<Self> {
        let dim = Povm::check_elements(&elements)?;
        if labels.len() != elements.len() {
            return Err(Error::InconsistentPovm("label count differs from element count".into()));
        }
        Ok(Self { dim, elements, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `A† D_k A` for every element, i.e. `A` acts on the state before detection.
    pub fn preceded_by(&self, a: &ComplexMatrix) -> Result<Measurement> {
        let a_dag = a.adjoint();
        let elements = self
            .elements
            .iter()
            .map(|m| m.conjugate_by(&a_dag).hermitian_part())
            .collect();
        Measurement::new(elements, self.labels.clone())
    }

    /// `u D_k u†` for every element.
    pub fn conjugated(&self, u: &ComplexMatrix) -> Result<Measurement> {
        let elements = self
            .elements
            .iter()
            .map(|m| m.conjugate_by(u).hermitian_part())
            .collect();
        Measurement::new(elements, self.labels.clone())
    }

    /// Raw click probabilities `Re Tr(D_k rho)` (not normalized).
    pub fn click_probabilities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: rho.dim(),
            });
        }
        Ok(self
            .elements
            .iter()
            .map(|m| m.trace_product(rho.matrix()).re.max(0.0))
            .collect())
    }

    /// Outcome distribution conditioned on detection.
    pub fn outcome_distribution(&self, rho: &DensityMatrix) -> Result<ProbDistribution> {
        ProbDistribution::from_weights(self.click_probabilities(rho)?)
    }

    pub fn completeness_residual(&self) -> f64 {
        completeness_residual(&self.elements, self.dim)
    }

    /// Converts back to a POVM when the elements are complete.
    pub fn to_povm(&self) -> Result<Povm> {
        Povm::new(self.elements.clone(), Some(self.labels.clone()))
    }
}

impl From<&Povm> for Measurement {
    fn from(p: &Povm) -> Self {
        Measurement {
            dim: p.dim,
            elements: p.elements.clone(),
            labels: p.labels.clone(),
        }
    }
}

/// Operator-sum representation of a trace-preserving channel.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    dim: usize,
    operators: Vec<ComplexMatrix>,
}

impl KrausChannel {
    pub fn new(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let dim = operators
            .first()
            .map(|m| m.rows())
            .ok_or_else(|| Error::InvalidChannel("no Kraus operators".into()))?;
        if operators.len() > dim * dim {
            return Err(Error::InvalidChannel(format!(
                "{} Kraus operators exceed d^2 = {}",
                operators.len(),
                dim * dim
            )));
        }
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for e in &operators {
            if e.rows() != dim || e.cols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.rows() });
            }
            sum = sum.add(&e.adjoint().matmul(e));
        }
        let residual = sum.max_abs_diff(&ComplexMatrix::identity(dim));
        if residual > KRAUS_TOL {
            return Err(Error::InvalidChannel(format!(
                "not trace preserving (residual {residual:e})"
            )));
        }
        Ok(Self { dim, operators })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            operators: vec![ComplexMatrix::identity(dim)],
        }
    }

    pub fn unitary(u: ComplexMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }
}

/// `rho' = sum_k E_k rho E_k†`.
pub fn apply_channel(channel: &KrausChannel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if channel.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: channel.dim(),
            got: rho.dim(),
        });
    }
    let d = rho.dim();
    let mut out = ComplexMatrix::zeros(d, d);
    for e in channel.operators() {
        out = out.add(&rho.matrix().conjugate_by(e));
    }
    let out = out.hermitian_part();
    let tr = out.trace().re;
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::InvalidChannel(format!("output trace {tr}")));
    }
    Ok(DensityMatrix { matrix: out })
}

/// `<psi| rho |psi>`.
pub fn fidelity(target: &PureState, estimate: &DensityMatrix) -> Result<f64> {
    if target.dim() != estimate.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: estimate.dim(),
        });
    }
    let rv = estimate.matrix().mul_vec(target.amplitudes());
    Ok(inner(target.amplitudes(), &rv).re.clamp(0.0, 1.0))
}

/// `Tr(rho^2)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix().trace_product(rho.matrix()).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_density(dim: usize, rank: usize, seed: u64) -> DensityMatrix {
        let mut rng = seeded(seed);
        let mut m = ComplexMatrix::zeros(dim, dim);
        for _ in 0..rank {
            let s = haar_random_pure(dim, &mut rng).unwrap();
            let w: f64 = rng.random::<f64>() + 0.1;
            m.add_scaled_assign(C64::new(w, 0.0), &s.projector());
        }
        let t = m.trace().re;
        DensityMatrix::new(m.scale_real(1.0 / t)).unwrap()
    }

    #[test]
    fn haar_state_is_normalized_and_seeded() {
        let a = haar_random_pure(6, &mut seeded(7)).unwrap();
        let b = haar_random_pure(6, &mut seeded(7)).unwrap();
        assert!((norm(a.amplitudes()) - 1.0).abs() < 1e-12);
        assert_eq!(a, b);
        assert!(matches!(haar_random_pure(1, &mut seeded(0)), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn haar_mean_overlap_is_one_over_d() {
        // E|<psi|phi>|^2 = 1/d, Var = (d-1)/(d^2 (d+1)) for independent Haar states.
        let d = 6.0;
        let n = 100_000;
        let mut rng = seeded(11);
        let mut acc = 0.0;
        for _ in 0..n {
            let a = haar_random_pure(6, &mut rng).unwrap();
            let b = haar_random_pure(6, &mut rng).unwrap();
            acc += a.overlap(&b).norm_sqr();
        }
        let mean = acc / n as f64;
        let sigma = ((d - 1.0) / (d * d * (d + 1.0)) / n as f64).sqrt();
        assert!((mean - 1.0 / d).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn fidelity_cases() {
        let mut rng = seeded(3);
        let psi = haar_random_pure(6, &mut rng).unwrap();
        assert!((fidelity(&psi, &psi.density()).unwrap() - 1.0).abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(6).unwrap();
        assert!((fidelity(&psi, &mixed).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        let e1 = PureState::basis(6, 0).unwrap();
        let e2 = PureState::basis(6, 1).unwrap();
        assert_eq!(fidelity(&e1, &e2.density()).unwrap(), 0.0);
        let small = PureState::basis(2, 0).unwrap();
        assert!(fidelity(&small, &mixed).is_err());
    }

    #[test]
    fn purity_cases() {
        let mut rng = seeded(4);
        let psi = haar_random_pure(6, &mut rng).unwrap();
        assert!((purity(&psi.density()) - 1.0).abs() < 1e-12);
        assert!((purity(&DensityMatrix::maximally_mixed(6).unwrap()) - 1.0 / 6.0).abs() < 1e-12);
        let half = DensityMatrix::diagonal(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((purity(&half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = ComplexMatrix::identity(3);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = DensityMatrix::diagonal(&[1.1, -0.1]);
        assert!(negative.is_err());
        // tiny negative eigenvalue is clipped
        let tiny = DensityMatrix::diagonal(&[1.0 + 5e-11, -5e-11]).unwrap();
        assert!(tiny.eigenvalues()[0] >= 0.0);
        assert!((tiny.matrix().trace().re - 1.0).abs() < 1e-15);
        let mut nonherm = ComplexMatrix::identity(2).scale_real(0.5);
        nonherm[(0, 1)] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(nonherm).is_err());
    }

    #[test]
    fn born_on_computational_basis() {
        let rho = DensityMatrix::diagonal(&[0.25, 0.75]).unwrap();
        let p = born_probabilities(&rho, &Povm::computational(2).unwrap()).unwrap();
        assert_eq!(p.values(), &[0.25, 0.75]);
        let wrong = Povm::computational(3).unwrap();
        assert!(born_probabilities(&rho, &wrong).is_err());
    }

    #[test]
    fn povm_rejects_incomplete_set() {
        let mut elems = Povm::computational(3).unwrap().elements().to_vec();
        elems.pop();
        assert!(matches!(Povm::new(elems, None), Err(Error::InconsistentPovm(_))));
    }

    #[test]
    fn identity_channel_leaves_state() {
        let rho = random_density(6, 3, 5);
        let out = apply_channel(&KrausChannel::identity(6), &rho).unwrap();
        assert!(out.matrix().max_abs_diff(rho.matrix()) < 1e-14);
    }

    #[test]
    fn channel_rejects_non_trace_preserving() {
        let e = ComplexMatrix::identity(2).scale_real(0.9);
        assert!(matches!(KrausChannel::new(vec![e]), Err(Error::InvalidChannel(_))));
    }

    #[test]
    fn lossy_measurement_normalizes_clicks() {
        let povm = Povm::computational(2).unwrap();
        let filter = ComplexMatrix::diagonal(&[C64::new(1.0, 0.0), C64::new(0.5, 0.0)]);
        let m = Measurement::from(&povm).preceded_by(&filter).unwrap();
        let rho = DensityMatrix::maximally_mixed(2).unwrap();
        let p = m.outcome_distribution(&rho).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-12);
        assert!((p.values()[1] - 0.2).abs() < 1e-12);
        assert!(m.to_povm().is_err());
    }

    proptest! {
        #[test]
        fn fidelity_is_linear_in_rho(seed in 0u64..10_000, a in 0.0f64..1.0) {
            let r1 = random_density(6, 2, seed);
            let r2 = random_density(6, 4, seed + 1);
            let psi = haar_random_pure(6, &mut seeded(seed + 2)).unwrap();
            let mix = DensityMatrix::new(
                r1.matrix().scale_real(a).add(&r2.matrix().scale_real(1.0 - a))
            ).unwrap();
            let lhs = fidelity(&psi, &mix).unwrap();
            let rhs = a * fidelity(&psi, &r1).unwrap() + (1.0 - a) * fidelity(&psi, &r2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn unitary_channel_preserves_purity(seed in 0u64..10_000) {
            let rho = random_density(6, 2, seed);
            let phases: Vec<C64> = (0..6).map(|k| C64::from_polar(1.0, seed as f64 * 0.1 * k as f64)).collect();
            let ch = KrausChannel::unitary(ComplexMatrix::diagonal(&phases)).unwrap();
            let out = apply_channel(&ch, &rho).unwrap();
            prop_assert!((purity(&out) - purity(&rho)).abs() < 1e-10);
            prop_assert!(out.matrix().hermiticity_error() < 1e-12);
        }

        #[test]
        fn random_states_are_physical(seed in 0u64..10_000, rank in 1usize..6) {
            let rho = random_density(6, rank, seed);
            prop_assert!(rho.matrix().hermiticity_error() <= HERMITIAN_TOL);
            prop_assert!((rho.matrix().trace().re - 1.0).abs() <= TRACE_TOL);
            prop_assert!(rho.eigenvalues()[0] >= EIGEN_TOL);
        }
    }
}
