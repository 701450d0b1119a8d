//! Physical SPAM model for Hermite-Gaussian spatial qudits.
//!
//! Covers the mode functions, detection overlaps with single-mode-fiber
//! filtering (optionally width-compensated), the Gouy phase channel,
//! crosstalk matrices between probe states and detection projectors, and the
//! similarity score used to compare crosstalk matrices.
//!
//! Waists are dimensionless; only the ratio `w_f / w` matters.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::quantum::{KrausChannel, Measurement, Povm, PureState};

/// Gauss-Hermite nodes used by default; the check level doubles this.
pub const DEFAULT_QUADRATURE_NODES: usize = 40;
pub const QUADRATURE_REL_TOL: f64 = 1e-10;

/// Gouy phases (radians) for mode orders 1 and 2 obtained by process tomography
/// of the reference setup.
pub const REFERENCE_GOUY_PHASES: (f64, f64) = (0.92, 1.97);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HgModeIndex {
    /// Hermite order along x.
    pub n: u32,
    /// Hermite order along y.
    pub m: u32,
}

impl HgModeIndex {
    pub const fn new(n: u32, m: u32) -> Self {
        Self { n, m }
    }

    pub fn order(&self) -> u32 {
        self.n + self.m
    }

    pub fn label(&self) -> String {
        format!("HG{}{}", self.n, self.m)
    }
}

/// Modes with `n + m <= max_order`, grouped by order, then by ascending `n`.
/// For `max_order = 2`: `[HG00, HG01, HG10, HG02, HG11, HG20]`.
pub fn canonical_modes(max_order: u32) -> Vec<HgModeIndex> {
    (0..=max_order)
        .flat_map(|order| (0..=order).map(move |n| HgModeIndex::new(n, order - n)))
        .collect()
}

/// The six-dimensional default basis.
pub fn default_modes() -> Vec<HgModeIndex> {
    canonical_modes(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    /// Waist of the prepared modes.
    pub w: f64,
    /// Waist of the detection fiber mode.
    pub w_f: f64,
    /// Whether detection holograms use the compensated width.
    pub corrected: bool,
    /// Gouy phases for order-1 and order-2 modes.
    pub gouy_phases: (f64, f64),
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            w: 1.0,
            w_f: 2.0,
            corrected: false,
            gouy_phases: REFERENCE_GOUY_PHASES,
        }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w_f > 0.0) {
            return Err(Error::InvalidConfig("waists must be positive".into()));
        }
        if self.corrected && self.w_f <= self.w {
            return Err(Error::NoRealSolution { w: self.w, w_f: self.w_f });
        }
        Ok(())
    }

    /// Exponential width of the detection hologram mode.
    pub fn detection_width(&self) -> Result<f64> {
        if self.corrected {
            corrected_width(self.w, self.w_f)
        } else {
            Ok(self.w)
        }
    }
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite(n: u32, x: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = 2.0 * x;
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * f64::from(k) * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Normalization of the 1-D mode `H_n(sqrt(2) z / w) exp(-z^2 / w^2)`.
fn hg_norm(n: u32, w: f64) -> f64 {
    (2.0 / PI).powf(0.25) / (w * 2f64.powi(n as i32) * factorial(n)).sqrt()
}

/// Unit-norm 1-D Hermite-Gaussian mode.
pub fn hg_1d(n: u32, z: f64, w: f64) -> f64 {
    hg_norm(n, w) * hermite(n, 2f64.sqrt() * z / w) * (-z * z / (w * w)).exp()
}

/// `HG_nm(x, y)` with waist `w`.
pub fn hg_amplitude(idx: HgModeIndex, x: f64, y: f64, w: f64) -> f64 {
    hg_1d(idx.n, x, w) * hg_1d(idx.m, y, w)
}

/// 1-D detection mode: the prepared-mode Hermite prefactor with exponential
/// width `w_exp` (equal to `w` when uncorrected).
pub fn detection_mode_1d(n: u32, z: f64, w: f64, w_exp: f64) -> f64 {
    hg_norm(n, w) * hermite(n, 2f64.sqrt() * z / w) * (-z * z / (w_exp * w_exp)).exp()
}

/// Width `w~` with `1/w~^2 + 1/w_f^2 = 1/w^2`.
pub fn corrected_width(w: f64, w_f: f64) -> Result<f64> {
    if !(w > 0.0) || !(w_f > w) {
        return Err(Error::NoRealSolution { w, w_f });
    }
    Ok(1.0 / (1.0 / (w * w) - 1.0 / (w_f * w_f)).sqrt())
}

/// Gauss-Hermite rule for `int f(x) exp(-x^2) dx` (Golub-Welsch).
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                ((i.max(j)) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], PI.sqrt() * eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn rule(n: usize) -> &'static GaussHermite {
    static R40: OnceLock<GaussHermite> = OnceLock::new();
    static R80: OnceLock<GaussHermite> = OnceLock::new();
    match n {
        40 => R40.get_or_init(|| GaussHermite::new(40)),
        80 => R80.get_or_init(|| GaussHermite::new(80)),
        _ => panic!("only 40- and 80-node rules are cached"),
    }
}

/// `int det_a(z) HG_b(z) exp(-z^2 / w_f^2) dz` with `n` nodes.
///
/// The integrand is polynomial times a Gaussian `exp(-alpha z^2)`, so the
/// substitution `z = u / sqrt(alpha)` puts it in Gauss-Hermite form.
fn overlap_1d(a: u32, b: u32, w: f64, w_det: f64, w_f: Option<f64>, gh: &GaussHermite) -> f64 {
    let alpha = 1.0 / (w_det * w_det) + 1.0 / (w * w) + w_f.map_or(0.0, |wf| 1.0 / (wf * wf));
    let s = alpha.sqrt();
    let c = hg_norm(a, w) * hg_norm(b, w);
    let r2 = 2f64.sqrt();
    c / s * gh.integrate(|u| {
        let z = u / s;
        hermite(a, r2 * z / w) * hermite(b, r2 * z / w)
    })
}

fn smf_overlap_with(
    det: HgModeIndex,
    inp: HgModeIndex,
    model: &DetectionModel,
    nodes: usize,
) -> Result<f64> {
    model.validate()?;
    let w_det = model.detection_width()?;
    let gh = rule(nodes);
    let ox = overlap_1d(det.n, inp.n, model.w, w_det, Some(model.w_f), gh);
    let oy = overlap_1d(det.m, inp.m, model.w, w_det, Some(model.w_f), gh);
    Ok(ox * oy)
}

/// Detection amplitude of input mode `inp` through the hologram for `det`
/// followed by the fiber's Gaussian filter. Evaluated at 40 and 80 nodes; a
/// change larger than `1e-10` (relative to `max(|value|, 1)`) is an error.
pub fn smf_overlap(det: HgModeIndex, inp: HgModeIndex, model: &DetectionModel) -> Result<C64> {
    let coarse = smf_overlap_with(det, inp, model, DEFAULT_QUADRATURE_NODES)?;
    let fine = smf_overlap_with(det, inp, model, 2 * DEFAULT_QUADRATURE_NODES)?;
    let change = (fine - coarse).abs() / fine.abs().max(1.0);
    if change > QUADRATURE_REL_TOL {
        return Err(Error::IntegrationFailure(change));
    }
    Ok(C64::new(coarse, 0.0))
}

/// Same overlap at an explicit node count (for convergence studies).
pub fn smf_overlap_nodes(
    det: HgModeIndex,
    inp: HgModeIndex,
    model: &DetectionModel,
    nodes: usize,
) -> Result<f64> {
    model.validate()?;
    let w_det = model.detection_width()?;
    let gh = GaussHermite::new(nodes);
    let ox = overlap_1d(det.n, inp.n, model.w, w_det, Some(model.w_f), &gh);
    let oy = overlap_1d(det.m, inp.m, model.w, w_det, Some(model.w_f), &gh);
    Ok(ox * oy)
}

/// `O[det][inp]` over the given basis.
pub fn overlap_matrix(modes: &[HgModeIndex], model: &DetectionModel) -> Result<ComplexMatrix> {
    let n = modes.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for (r, &det) in modes.iter().enumerate() {
        for (c, &inp) in modes.iter().enumerate() {
            out[(r, c)] = smf_overlap(det, inp, model)?;
        }
    }
    Ok(out)
}

/// Columns scaled to unit Euclidean norm.
pub fn column_normalized(m: &ComplexMatrix) -> ComplexMatrix {
    let norms: Vec<f64> = (0..m.cols())
        .map(|c| m.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    ComplexMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)] / norms[c])
}

/// `diag(exp(i phi_order(k)))` over the basis; order 0 carries no phase.
pub fn gouy_unitary(phi1: f64, phi2: f64, modes: &[HgModeIndex]) -> ComplexMatrix {
    let phases: Vec<C64> = modes
        .iter()
        .map(|m| match m.order() {
            0 => C64::new(1.0, 0.0),
            1 => C64::from_polar(1.0, phi1),
            2 => C64::from_polar(1.0, phi2),
            k => C64::from_polar(1.0, phi2 * f64::from(k) / 2.0),
        })
        .collect();
    ComplexMatrix::diagonal(&phases)
}

/// Single-Kraus Gouy channel on the canonical six-mode basis.
pub fn gouy_channel(phi1: f64, phi2: f64) -> KrausChannel {
    KrausChannel::unitary(gouy_unitary(phi1, phi2, &default_modes()))
        .expect("diagonal phase matrix is unitary")
}

/// Composite SPAM corruption of the detection stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpamModel {
    None,
    Gouy { phi1: f64, phi2: f64 },
    Smf { w: f64, w_f: f64 },
    Both { phi1: f64, phi2: f64, w: f64, w_f: f64 },
}

impl SpamModel {
    pub fn reference_gouy() -> Self {
        let (phi1, phi2) = REFERENCE_GOUY_PHASES;
        SpamModel::Gouy { phi1, phi2 }
    }

    pub fn reference_both() -> Self {
        let (phi1, phi2) = REFERENCE_GOUY_PHASES;
        let det = DetectionModel::default();
        SpamModel::Both { phi1, phi2, w: det.w, w_f: det.w_f }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, SpamModel::None)
    }

    fn gouy(&self) -> Option<(f64, f64)> {
        match *self {
            SpamModel::Gouy { phi1, phi2 } | SpamModel::Both { phi1, phi2, .. } => Some((phi1, phi2)),
            _ => None,
        }
    }

    fn smf(&self) -> Option<DetectionModel> {
        match *self {
            SpamModel::Smf { w, w_f } | SpamModel::Both { w, w_f, .. } => Some(DetectionModel {
                w,
                w_f,
                corrected: false,
                gouy_phases: (0.0, 0.0),
            }),
            _ => None,
        }
    }

    /// Effective detection operators for an ideal POVM on the six-mode basis.
    ///
    /// SMF filtering acts on the state before the hologram projection
    /// (`O† M O`, lossy); Gouy phases conjugate the result (`E M E†`).
    pub fn effective_measurement(&self, ideal: &Povm) -> Result<Measurement> {
        let modes = default_modes();
        if ideal.dim() != modes.len() {
            if self.is_none() {
                return Ok(Measurement::from(ideal));
            }
            return Err(Error::DimensionMismatch {
                expected: modes.len(),
                got: ideal.dim(),
            });
        }
        let mut meas = Measurement::from(ideal);
        if let Some(model) = self.smf() {
            meas = meas.preceded_by(&overlap_matrix(&modes, &model)?)?;
        }
        if let Some((phi1, phi2)) = self.gouy() {
            meas = meas.conjugated(&gouy_unitary(phi1, phi2, &modes))?;
        }
        Ok(meas)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(model) = self.smf() {
            model.validate()?;
        }
        let finite = match *self {
            SpamModel::None => true,
            SpamModel::Gouy { phi1, phi2 } => phi1.is_finite() && phi2.is_finite(),
            SpamModel::Smf { w, w_f } => w.is_finite() && w_f.is_finite(),
            SpamModel::Both { phi1, phi2, w, w_f } => {
                phi1.is_finite() && phi2.is_finite() && w.is_finite() && w_f.is_finite()
            }
        };
        if !finite {
            return Err(Error::InvalidConfig("SPAM parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Crosstalk probabilities, `probs[j][i]` for outcome `j` and probe `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    pub probs: Vec<Vec<f64>>,
    pub outcome_labels: Vec<String>,
    pub probe_labels: Vec<String>,
}

impl CrosstalkMatrix {
    pub fn outcomes(&self) -> usize {
        self.probs.len()
    }

    pub fn probes(&self) -> usize {
        self.probs.first().map_or(0, |r| r.len())
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().flatten().sum()
    }

    /// Sum of entries off the `j == i` diagonal.
    pub fn off_diagonal_mass(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .flat_map(|(j, row)| row.iter().enumerate().filter(move |(i, _)| *i != j).map(|(_, v)| v))
            .sum()
    }

    /// CSV: header `outcome,<probe labels>`, one row per outcome.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["outcome".to_string()];
        header.extend(self.probe_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.outcome_labels.iter().zip(&self.probs) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome distribution of every probe under `measurement`.
pub fn crosstalk_matrix(probes: &[PureState], measurement: &Measurement) -> Result<CrosstalkMatrix> {
    let mut probs = vec![vec![0.0; probes.len()]; measurement.len()];
    for (i, probe) in probes.iter().enumerate() {
        if probe.dim() != measurement.dim() {
            return Err(Error::DimensionMismatch {
                expected: measurement.dim(),
                got: probe.dim(),
            });
        }
        let dist = measurement.outcome_distribution(&probe.density())?;
        for (j, &p) in dist.values().iter().enumerate() {
            probs[j][i] = p;
        }
    }
    Ok(CrosstalkMatrix {
        probs,
        outcome_labels: measurement.labels().to_vec(),
        probe_labels: (0..probes.len()).map(|i| format!("probe{i:02}")).collect(),
    })
}

/// `(sum sqrt(P * Q))^2 / (sum P * sum Q)`.
pub fn similarity(measured: &CrosstalkMatrix, ideal: &CrosstalkMatrix) -> Result<f64> {
    if measured.outcomes() != ideal.outcomes() || measured.probes() != ideal.probes() {
        return Err(Error::DimensionMismatch {
            expected: ideal.outcomes() * ideal.probes(),
            got: measured.outcomes() * measured.probes(),
        });
    }
    similarity_raw(&measured.probs, &ideal.probs)
}

pub fn similarity_raw(measured: &[Vec<f64>], ideal: &[Vec<f64>]) -> Result<f64> {
    let mut cross = 0.0;
    for (a, b) in measured.iter().zip(ideal) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: b.len(), got: a.len() });
        }
        cross += a.iter().zip(b).map(|(p, q)| (p * q).sqrt()).sum::<f64>();
    }
    let sp: f64 = measured.iter().flatten().sum();
    let sq: f64 = ideal.iter().flatten().sum();
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::InvalidDistribution("similarity of an all-zero matrix".into()));
    }
    Ok(cross * cross / (sp * sq))
}
