//! Informationally complete measurements.
//!
//! The SIC POVM is found numerically: `d^2` unit vectors are pushed towards
//! equal pairwise overlaps `1/(d+1)` by L-BFGS descent on the frame
//! potential `sum_{i != j} (|<phi_i|phi_j>|^2 - 1/(d+1))^2`, with several
//! random starts.

use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, numerical_rank, ComplexMatrix, ComplexVecRepr, C64};
use crate::quantum::Povm;
use crate::rng::child_rng;

/// Relative singular-value threshold for the IC rank test.
pub const IC_RANK_TOL: f64 = 1e-8;

const CHUNK_ITERATIONS: u64 = 300;
// Below this the More-Thuente search can cycle without making progress.
const GRAD_TOL: f64 = 1e-11;
const POLISH_DEVIATION: f64 = 1e-13;
const STALL_REL_DECREASE: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SicSearchConfig {
    pub dim: usize,
    pub max_iterations: u64,
    /// Allowed max deviation of any pairwise overlap from `1/(d+1)`.
    pub tolerance: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl SicSearchConfig {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            max_iterations: 50_000,
            tolerance: 1e-7,
            seed,
            restarts: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("SIC tolerance must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("at least one restart is required".into()));
        }
        Ok(())
    }
}

/// A converged SIC together with search diagnostics.
#[derive(Clone, Debug)]
pub struct SicFrame {
    pub vectors: Vec<Vec<C64>>,
    pub povm: Povm,
    pub max_deviation: f64,
    pub initial_potential: f64,
    pub final_potential: f64,
    pub restart: usize,
}

impl SicFrame {
    /// `|<phi_i|phi_j>|^2` for all pairs.
    pub fn overlaps(&self) -> Vec<Vec<f64>> {
        pairwise_overlaps(&self.vectors)
    }
}

pub fn pairwise_overlaps(vectors: &[Vec<C64>]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|a| vectors.iter().map(|b| inner(a, b).norm_sqr()).collect())
        .collect()
}

fn max_overlap_deviation(vectors: &[Vec<C64>]) -> f64 {
    let n = vectors.len();
    let target = 1.0 / (vectors[0].len() as f64 + 1.0);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((inner(&vectors[i], &vectors[j]).norm_sqr() - target).abs());
        }
    }
    worst
}

/// Frame potential over unnormalized parameters `[re..., im...]`, `n x d` row-major.
struct FramePotential {
    n: usize,
    d: usize,
}

impl FramePotential {
    fn unpack(&self, x: &[f64]) -> (Vec<Vec<C64>>, Vec<f64>) {
        let nd = self.n * self.d;
        let mut vecs = Vec::with_capacity(self.n);
        let mut norms = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let v: Vec<C64> = (0..self.d)
                .map(|k| C64::new(x[i * self.d + k], x[nd + i * self.d + k]))
                .collect();
            let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            norms.push(nrm);
            vecs.push(v.into_iter().map(|z| z / nrm).collect());
        }
        (vecs, norms)
    }

    fn value_and_gradient(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (v, norms) = self.unpack(x);
        let (n, d) = (self.n, self.d);
        let target = 1.0 / (d as f64 + 1.0);
        let mut gram = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in i..n {
                let g = inner(&v[i], &v[j]);
                gram[i * n + j] = g;
                gram[j * n + i] = g.conj();
            }
        }
        let mut value = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dev = gram[i * n + j].norm_sqr() - target;
                    value += dev * dev;
                }
            }
        }
        if !want_grad {
            return (value, Vec::new());
        }
        // Wirtinger derivative w.r.t. conj(v_i): sum_j 4 dev_ij conj(G_ij) v_j,
        // then projected through v = u / |u|.
        let nd = n * d;
        let mut grad = vec![0.0; 2 * nd];
        for i in 0..n {
            let mut g = vec![C64::new(0.0, 0.0); d];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let gij = gram[i * n + j];
                let w = (gij.norm_sqr() - target) * 4.0 * gij.conj();
                for k in 0..d {
                    g[k] += w * v[j][k];
                }
            }
            let radial: f64 = v[i].iter().zip(&g).map(|(a, b)| (a.conj() * b).re).sum();
            for k in 0..d {
                let gu = (g[k] - v[i][k] * radial) / norms[i];
                grad[i * d + k] = 2.0 * gu.re;
                grad[nd + i * d + k] = 2.0 * gu.im;
            }
        }
        (value, grad)
    }
}

impl CostFunction for FramePotential {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value_and_gradient(x, false).0)
    }
}

impl Gradient for FramePotential {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.value_and_gradient(x, true).1)
    }
}

struct RestartOutcome {
    restart: usize,
    vectors: Vec<Vec<C64>>,
    deviation: f64,
    initial_potential: f64,
    final_potential: f64,
}

fn run_restart(config: &SicSearchConfig, restart: usize) -> RestartOutcome {
    let (n, d) = (config.dim * config.dim, config.dim);
    let problem = FramePotential { n, d };
    let mut rng = child_rng(config.seed, "sic-restart", restart as u64);
    let x0: Vec<f64> = (0..2 * n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let initial_potential = problem.value_and_gradient(&x0, false).0;

    // Chunked runs: stop once overlaps are polished to near machine precision
    // or the potential stops falling (a local minimum).
    let target = config.tolerance.min(POLISH_DEVIATION);
    let mut x = x0;
    let mut last = initial_potential;
    let mut done = 0;
    while done < config.max_iterations {
        let chunk = CHUNK_ITERATIONS.min(config.max_iterations - done);
        done += chunk;
        let solved = LBFGS::new(MoreThuenteLineSearch::new(), 10)
            .with_tolerance_grad(GRAD_TOL)
            .and_then(|s| s.with_tolerance_cost(0.0))
            .and_then(|solver| {
                Executor::new(FramePotential { n, d }, solver)
                    .configure(|s| s.param(x.clone()).max_iters(chunk))
                    .run()
            });
        // a line-search breakdown at machine precision leaves the last iterate
        let Ok(res) = solved else { break };
        if let Some(best) = res.state().get_best_param() {
            x = best.clone();
        }
        let f = problem.value_and_gradient(&x, false).0;
        let (vectors, _) = problem.unpack(&x);
        if max_overlap_deviation(&vectors) <= target || f >= last * (1.0 - STALL_REL_DECREASE) {
            break;
        }
        last = f;
    }
    let final_potential = problem.value_and_gradient(&x, false).0;
    let (vectors, _) = problem.unpack(&x);
    let deviation = max_overlap_deviation(&vectors);
    RestartOutcome {
        restart,
        vectors,
        deviation,
        initial_potential,
        final_potential,
    }
}

/// Multi-start SIC search. Deterministic for a given config; the winner is the
/// restart with the smallest overlap deviation, ties going to the lower index.
pub fn search_sic(config: &SicSearchConfig) -> Result<SicFrame> {
    config.validate()?;
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(config, r))
        .collect();
    let best = outcomes
        .into_iter()
        .min_by(|a, b| {
            a.deviation
                .total_cmp(&b.deviation)
                .then(a.restart.cmp(&b.restart))
        })
        .expect("at least one restart");
    if !(best.deviation <= config.tolerance) {
        return Err(Error::SicNotConverged {
            best_deviation: best.deviation,
        });
    }
    let povm = sic_povm_from_vectors(&best.vectors)?;
    Ok(SicFrame {
        vectors: best.vectors,
        povm,
        max_deviation: best.deviation,
        initial_potential: best.initial_potential,
        final_potential: best.final_potential,
        restart: best.restart,
    })
}

pub fn build_sic(config: &SicSearchConfig) -> Result<Povm> {
    search_sic(config).map(|f| f.povm)
}

/// `M_k = |phi_k><phi_k| / d`, labels `sic00..`.
pub fn sic_povm_from_vectors(vectors: &[Vec<C64>]) -> Result<Povm> {
    let d = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::InconsistentPovm("no vectors".into()))?;
    let elements = vectors
        .iter()
        .map(|v| {
            let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let u: Vec<C64> = v.iter().map(|z| z / nrm).collect();
            ComplexMatrix::outer(&u, &u).scale_real(1.0 / d as f64)
        })
        .collect();
    let labels = (0..vectors.len()).map(|k| format!("sic{k:02}")).collect();
    Povm::new(elements, Some(labels))
}

/// Unit vectors `phi_k` of a rank-one POVM `M_k = w_k |phi_k><phi_k|`
/// (dominant eigenvector of each element, phase fixed so the first
/// non-negligible entry is real positive).
pub fn rank_one_directions(povm: &Povm) -> Vec<Vec<C64>> {
    povm.elements()
        .iter()
        .map(|m| {
            let eig = m.hermitian_eigen();
            let mut v = eig.vectors.column(eig.values.len() - 1);
            if let Some(z) = v.iter().find(|z| z.norm() > 1e-8).copied() {
                let phase = z.conj() / z.norm();
                v.iter_mut().for_each(|a| *a *= phase);
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub rank: usize,
    pub is_ic: bool,
    pub completeness_residual: f64,
}

/// Dimension of the real span of the POVM elements in operator space.
pub fn verify_ic(povm: &Povm) -> IcReport {
    let d = povm.dim();
    let rows = povm.len();
    let mut a = DMatrix::<f64>::zeros(rows, 2 * d * d);
    for (k, m) in povm.elements().iter().enumerate() {
        for (idx, z) in m.as_slice().iter().enumerate() {
            a[(k, idx)] = z.re;
            a[(k, d * d + idx)] = z.im;
        }
    }
    let rank = numerical_rank(&a, IC_RANK_TOL);
    IcReport {
        rank,
        is_ic: rank == d * d,
        completeness_residual: povm.completeness_residual(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PovmKind {
    Sic,
    Custom,
}

/// On-disk POVM: `{"dim", "elements": [ComplexMatrix...], "kind"}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PovmFile {
    pub dim: usize,
    pub elements: Vec<ComplexMatrix>,
    pub kind: PovmKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl PovmFile {
    pub fn from_povm(povm: &Povm, kind: PovmKind) -> Self {
        Self {
            dim: povm.dim(),
            elements: povm.elements().to_vec(),
            kind,
            labels: Some(povm.labels().to_vec()),
        }
    }

    pub fn into_povm(self) -> Result<Povm> {
        let povm = Povm::new(self.elements, self.labels)?;
        if povm.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: povm.dim(),
            });
        }
        Ok(povm)
    }
}

pub fn save_povm(path: &Path, povm: &Povm, kind: PovmKind) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &PovmFile::from_povm(povm, kind))?;
    Ok(())
}

pub fn load_povm(path: &Path) -> Result<Povm> {
    let file = std::fs::File::open(path)?;
    let parsed: PovmFile = serde_json::from_reader(std::io::BufReader::new(file))?;
    parsed.into_povm()
}

/// Externally supplied SIC directions, `{"dim", "vectors": [{"re","im"}...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SicVectorFile {
    pub dim: usize,
    pub vectors: Vec<ComplexVecRepr>,
}

pub fn load_sic_vectors(path: &Path) -> Result<Povm> {
    let file = std::fs::File::open(path)?;
    let parsed: SicVectorFile = serde_json::from_reader(std::io::BufReader::new(file))?;
    let vectors = parsed
        .vectors
        .iter()
        .map(|r| r.to_vec())
        .collect::<Result<Vec<_>>>()?;
    if vectors.len() != parsed.dim * parsed.dim || vectors.iter().any(|v| v.len() != parsed.dim) {
        return Err(Error::InconsistentPovm(format!(
            "expected {} vectors of length {}",
            parsed.dim * parsed.dim,
            parsed.dim
        )));
    }
    sic_povm_from_vectors(&vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{born_probabilities, haar_random_pure, DensityMatrix};
    use crate::rng::seeded;
    use std::sync::OnceLock;

    fn sic6() -> &'static SicFrame {
        static SIC: OnceLock<SicFrame> = OnceLock::new();
        SIC.get_or_init(|| search_sic(&SicSearchConfig::new(6, 1)).unwrap())
    }

    #[test]
    fn qubit_sic_is_tetrahedral() {
        let frame = search_sic(&SicSearchConfig::new(2, 3)).unwrap();
        let ov = frame.overlaps();
        assert_eq!(ov.len(), 4);
        for i in 0..4 {
            assert!((ov[i][i] - 1.0).abs() < 1e-12);
            for j in 0..4 {
                if i != j {
                    assert!((ov[i][j] - 1.0 / 3.0).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn sic6_overlaps_and_completeness() {
        let frame = sic6();
        assert_eq!(frame.vectors.len(), 36);
        assert!(frame.max_deviation < 1e-7);
        assert!(frame.povm.completeness_residual() < 1e-10);
        assert!(frame.final_potential <= frame.initial_potential);
        for row in frame.overlaps().iter().enumerate() {
            assert!((row.1[row.0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sic_search_is_deterministic() {
        let cfg = SicSearchConfig { restarts: 2, ..SicSearchConfig::new(3, 9) };
        let a = search_sic(&cfg).unwrap();
        let b = search_sic(&cfg).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.restart, b.restart);
    }

    #[test]
    fn impossible_tolerance_reports_best() {
        let cfg = SicSearchConfig {
            max_iterations: 3,
            tolerance: 1e-300,
            restarts: 1,
            ..SicSearchConfig::new(3, 0)
        };
        match search_sic(&cfg) {
            Err(Error::SicNotConverged { best_deviation }) => assert!(best_deviation > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(search_sic(&SicSearchConfig::new(1, 0)).is_err());
        let cfg = SicSearchConfig { restarts: 0, ..SicSearchConfig::new(2, 0) };
        assert!(search_sic(&cfg).is_err());
    }

    #[test]
    fn frame_potential_gradient_matches_finite_differences() {
        let problem = FramePotential { n: 4, d: 2 };
        let mut rng = seeded(5);
        let x: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, g) = problem.value_and_gradient(&x, true);
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (problem.value_and_gradient(&xp, false).0 - problem.value_and_gradient(&xm, false).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn born_on_sic_maximally_mixed_is_uniform() {
        let rho = DensityMatrix::maximally_mixed(6).unwrap();
        let p = born_probabilities(&rho, &sic6().povm).unwrap();
        for v in p.values() {
            assert!((v - 1.0 / 36.0).abs() < 1e-12);
        }
    }

    #[test]
    fn born_on_sic_direction() {
        let frame = sic6();
        let k = 5;
        let rho = crate::quantum::PureState::new(frame.vectors[k].clone()).unwrap().density();
        let p = born_probabilities(&rho, &frame.povm).unwrap();
        for (j, v) in p.values().iter().enumerate() {
            let expected = if j == k { 1.0 / 6.0 } else { 1.0 / 42.0 };
            assert!((v - expected).abs() < 1e-8, "j={j} {v}");
        }
    }

    #[test]
    fn born_sums_to_one_and_is_permutation_equivariant() {
        let mut rng = seeded(8);
        let povm = &sic6().povm;
        let perm: Vec<usize> = (0..36).rev().collect();
        let permuted = povm.permuted(&perm);
        for _ in 0..20 {
            let rho = haar_random_pure(6, &mut rng).unwrap().density();
            let p = born_probabilities(&rho, povm).unwrap();
            assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let q = born_probabilities(&rho, &permuted).unwrap();
            for (i, &k) in perm.iter().enumerate() {
                assert!((q.values()[i] - p.values()[k]).abs() < 1e-15);
            }
        }
    }

    /// Rank from the eigenvalues of the real Gram matrix `Re Tr(M_i M_j)`,
    /// independent of the SVD route used by `verify_ic`.
    fn gram_rank(povm: &Povm) -> usize {
        let n = povm.len();
        let g = DMatrix::from_fn(n, n, |i, j| {
            povm.elements()[i].trace_product(&povm.elements()[j]).re
        });
        let eig = g.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * max).count()
    }

    #[test]
    fn verify_ic_on_sic_and_reduced_sets() {
        let povm = &sic6().povm;
        let report = verify_ic(povm);
        assert_eq!(gram_rank(povm), 36);
        assert_eq!(report.rank, 36);
        assert!(report.is_ic);

        let comp = Povm::computational(6).unwrap();
        let r = verify_ic(&comp);
        assert_eq!((r.rank, r.is_ic), (6, false));

        // 35 elements no longer sum to identity, so rank the raw element list.
        let mut elems = povm.elements().to_vec();
        elems.pop();
        let mut a = DMatrix::<f64>::zeros(35, 72);
        for (k, m) in elems.iter().enumerate() {
            for (idx, z) in m.as_slice().iter().enumerate() {
                a[(k, idx)] = z.re;
                a[(k, 36 + idx)] = z.im;
            }
        }
        assert_eq!(numerical_rank(&a, IC_RANK_TOL), 35);
        let g = DMatrix::from_fn(35, 35, |i, j| elems[i].trace_product(&elems[j]).re);
        let eig = g.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        assert_eq!(eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * max).count(), 35);
    }

    #[test]
    fn povm_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("povm.json");
        save_povm(&path, &sic6().povm, PovmKind::Sic).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"kind\":\"sic\""));
        let back = load_povm(&path).unwrap();
        assert_eq!(back.len(), 36);
        assert!(back.elements()[3].max_abs_diff(&sic6().povm.elements()[3]) < 1e-15);
    }

    #[test]
    fn sic_vector_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.json");
        let file = SicVectorFile {
            dim: 6,
            vectors: sic6().vectors.iter().map(|v| ComplexVecRepr::from_slice(v)).collect(),
        };
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let povm = load_sic_vectors(&path).unwrap();
        assert!(verify_ic(&povm).is_ic);
    }

    #[test]
    fn rank_one_directions_recover_vectors() {
        let frame = sic6();
        let dirs = rank_one_directions(&frame.povm);
        for (a, b) in dirs.iter().zip(&frame.vectors) {
            assert!((inner(a, b).norm_sqr() - 1.0).abs() < 1e-10);
        }
    }
}
