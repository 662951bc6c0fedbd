//! Two-qubit polarization states of the emitted pair.
//!
//! Basis order is |HH>, |HV>, |VH>, |VV> with the X photon as the first
//! qubit and the XX photon as the second. H and V are the eigenstates of
//! σ_z, D = (H + V)/√2 and R = (H + iV)/√2.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C = Complex64;

const HERMITIAN_TOL: f64 = 1e-9;
const ML_MAX_ITERATIONS: usize = 10_000;
const ML_STOP_GAIN: f64 = 1e-10;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn pauli(index: usize) -> Matrix2<C> {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match index {
        0 => Matrix2::new(o, z, z, o),
        1 => Matrix2::new(z, o, o, z),
        2 => Matrix2::new(z, -i, i, z),
        3 => Matrix2::new(o, z, z, -o),
        _ => unreachable!("Pauli index {index}"),
    }
}

fn kron(a: &Matrix2<C>, b: &Matrix2<C>) -> Matrix4<C> {
    let mut out = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

fn trace_product(a: &Matrix4<C>, b: &Matrix4<C>) -> C {
    let mut acc = c(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Matrix4<C>);

impl DensityMatrix {
    pub fn new(m: Matrix4<C>) -> Result<Self> {
        let herm_err = (m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm_err > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (deviation {herm_err:.2e})"
            )));
        }
        let trace = m.trace();
        if (trace.re - 1.0).abs() > HERMITIAN_TOL || trace.im.abs() > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {trace}")));
        }
        let min_eig = m
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self(m))
    }

    pub fn from_pure(psi: &Vector4<C>) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "state norm {norm} is not 1"
            )));
        }
        Self::new(psi * psi.adjoint())
    }

    pub fn phi_plus() -> Self {
        Self(phi_plus_state() * phi_plus_state().adjoint())
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity() * c(0.25, 0.0))
    }

    /// `p |Φ+><Φ+| + (1 - p) I/4`.
    pub fn werner(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "Werner weight {p} outside [0, 1]"
            )));
        }
        Ok(Self(
            Self::phi_plus().0 * c(p, 0.0) + Self::maximally_mixed().0 * c(1.0 - p, 0.0),
        ))
    }

    pub fn from_parts(real: &[[f64; 4]; 4], imag: &[[f64; 4]; 4]) -> Result<Self> {
        Self::new(Matrix4::from_fn(|i, j| c(real[i][j], imag[i][j])))
    }

    pub fn matrix(&self) -> &Matrix4<C> {
        &self.0
    }

    pub fn real_part(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)].re))
    }

    pub fn imag_part(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)].im))
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let e = self.0.symmetric_eigen().eigenvalues;
        let mut v = [e[0], e[1], e[2], e[3]];
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn expectation(&self, op: &Matrix4<C>) -> f64 {
        trace_product(&self.0, op).re
    }

    /// Multiplies the |HH><VV| coherence by `e^{i phase}`.
    pub fn with_coherence_phase(&self, phase: f64) -> Self {
        let mut m = self.0;
        let rot = C::from_polar(1.0, phase);
        m[(0, 3)] *= rot;
        m[(3, 0)] = m[(0, 3)].conj();
        Self(m)
    }
}

pub fn phi_plus_state() -> Vector4<C> {
    let a = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Vector4::new(a, c(0.0, 0.0), c(0.0, 0.0), a)
}

/// Analyzer axis on the Bloch sphere; outcome +1 projects on the `+axis` state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub axis: [f64; 3],
}

impl MeasurementSetting {
    pub fn new(axis: [f64; 3]) -> Result<Self> {
        let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "analyzer axis {axis:?} has norm {norm}"
            )));
        }
        Ok(Self { axis })
    }

    pub fn sigma_z() -> Self {
        Self {
            axis: [0.0, 0.0, 1.0],
        }
    }

    pub fn sigma_y() -> Self {
        Self {
            axis: [0.0, 1.0, 0.0],
        }
    }

    pub fn sigma_x() -> Self {
        Self {
            axis: [1.0, 0.0, 0.0],
        }
    }

    /// (σ_z + sign·σ_y)/√2
    pub fn z_plus_y(sign: f64) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            axis: [0.0, sign * h, h],
        }
    }

    pub fn observable(&self) -> Matrix2<C> {
        let [x, y, z] = self.axis;
        pauli(1) * c(x, 0.0) + pauli(2) * c(y, 0.0) + pauli(3) * c(z, 0.0)
    }

    pub fn projector(&self, outcome: i8) -> Matrix2<C> {
        let s = if outcome >= 0 { 0.5 } else { -0.5 };
        pauli(0) * c(0.5, 0.0) + self.observable() * c(s, 0.0)
    }
}

/// X and XX analyzer choices used for the Bell test: X₀ = σ_z, X₁ = σ_y,
/// XX₀ = (σ_z − σ_y)/√2, XX₁ = (σ_z + σ_y)/√2.
pub fn chsh_settings() -> ([MeasurementSetting; 2], [MeasurementSetting; 2]) {
    (
        [MeasurementSetting::sigma_z(), MeasurementSetting::sigma_y()],
        [
            MeasurementSetting::z_plus_y(-1.0),
            MeasurementSetting::z_plus_y(1.0),
        ],
    )
}

pub fn correlator(rho: &DensityMatrix, x: &MeasurementSetting, xx: &MeasurementSetting) -> f64 {
    rho.expectation(&kron(&x.observable(), &xx.observable()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlator {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub s_value: f64,
    pub sigma_s: f64,
    /// E₀₀, E₀₁, E₁₀, E₁₁ with the first index on the X analyzer.
    pub correlators: [Correlator; 4],
}

fn combine_chsh(correlators: [Correlator; 4]) -> ChshResult {
    let [e00, e01, e10, e11] = correlators;
    ChshResult {
        s_value: e00.value + e01.value + e10.value - e11.value,
        sigma_s: correlators
            .iter()
            .map(|e| e.sigma * e.sigma)
            .sum::<f64>()
            .sqrt(),
        correlators,
    }
}

pub fn chsh_expectation(rho: &DensityMatrix) -> ChshResult {
    let (x, xx) = chsh_settings();
    let correlators = std::array::from_fn(|k| Correlator {
        value: correlator(rho, &x[k / 2], &xx[k % 2]),
        sigma: 0.0,
    });
    combine_chsh(correlators)
}

/// Coincidence counts per CHSH setting `(i, j)` at index `2i + j`, outcomes
/// ordered (++, +−, −+, −−) with the X outcome first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChshCounts(pub [[u64; 4]; 4]);

pub fn chsh_from_counts(counts: &ChshCounts) -> Result<ChshResult> {
    let mut correlators = [Correlator {
        value: 0.0,
        sigma: 0.0,
    }; 4];
    for (k, outcome) in counts.0.iter().enumerate() {
        let total: u64 = outcome.iter().sum();
        if total == 0 {
            return Err(Error::EmptySetting(k));
        }
        let n = total as f64;
        let same = (outcome[0] + outcome[3]) as f64;
        let diff = (outcome[1] + outcome[2]) as f64;
        let e = (same - diff) / n;
        correlators[k] = Correlator {
            value: e,
            sigma: ((1.0 - e * e) / n).max(0.0).sqrt(),
        };
    }
    Ok(combine_chsh(correlators))
}

pub fn fidelity(rho: &DensityMatrix, target: &Vector4<C>) -> Result<f64> {
    let norm = target.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "target norm {norm} is not 1"
        )));
    }
    Ok((target.adjoint() * rho.matrix() * target)[(0, 0)].re)
}

/// Fidelity to `(|HH> + e^{iφ}|VV>)/√2` maximized over φ.
pub fn fidelity_phase_optimized(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    0.5 * (m[(0, 0)].re + m[(3, 3)].re) + m[(0, 3)].norm()
}

/// Uhlmann fidelity `(tr sqrt(sqrt(a) b sqrt(a)))^2` between two states.
pub fn state_fidelity(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let s = sqrt_psd(a.matrix());
    let inner = s * b.matrix() * s;
    let t: f64 = inner
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    t * t
}

fn sqrt_psd(m: &Matrix4<C>) -> Matrix4<C> {
    let e = m.symmetric_eigen();
    let mut out = Matrix4::zeros();
    for i in 0..4 {
        let v = e.eigenvectors.column(i);
        out += v * v.adjoint() * C::new(e.eigenvalues[i].max(0.0).sqrt(), 0.0);
    }
    out
}

/// Born-rule sampler for one analyzer pair, with optional coherence phase.
#[derive(Debug, Clone)]
pub struct PolarizationSampler {
    base: [f64; 4],
    coherence: C,
    projector_30: [C; 4],
}

impl PolarizationSampler {
    pub fn new(rho: &DensityMatrix, x: &MeasurementSetting, xx: &MeasurementSetting) -> Self {
        let mut base = [0.0; 4];
        let mut projector_30 = [c(0.0, 0.0); 4];
        let coherence = rho.matrix()[(0, 3)];
        for (k, (a, b)) in [(1, 1), (1, -1), (-1, 1), (-1, -1)].into_iter().enumerate() {
            let proj = kron(&x.projector(a), &xx.projector(b));
            base[k] = rho.expectation(&proj);
            projector_30[k] = proj[(3, 0)];
        }
        Self {
            base,
            coherence,
            projector_30,
        }
    }

    /// Outcome probabilities (++, +−, −+, −−) after multiplying the HH–VV
    /// coherence by `e^{i phase}`.
    pub fn probabilities(&self, phase: f64) -> [f64; 4] {
        if phase == 0.0 {
            return self.base;
        }
        let rot = C::from_polar(1.0, phase);
        std::array::from_fn(|k| {
            let old = 2.0 * (self.coherence * self.projector_30[k]).re;
            let new = 2.0 * (self.coherence * rot * self.projector_30[k]).re;
            (self.base[k] - old + new).max(0.0)
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, phase: f64, rng: &mut R) -> (i8, i8) {
        let p = self.probabilities(phase);
        let total: f64 = p.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, pk) in p.iter().enumerate() {
            if u < *pk || k == 3 {
                return OUTCOMES[k];
            }
            u -= pk;
        }
        OUTCOMES[3]
    }
}

const OUTCOMES: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

pub fn sample_polarization_pair<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    x: &MeasurementSetting,
    xx: &MeasurementSetting,
    rng: &mut R,
) -> (i8, i8) {
    PolarizationSampler::new(rho, x, xx).sample(0.0, rng)
}

/// Single-photon projector used by the 16-setting tomography.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TomoProjector {
    H,
    V,
    D,
    R,
}

impl TomoProjector {
    pub const ALL: [TomoProjector; 4] = [Self::H, Self::V, Self::D, Self::R];

    pub fn state(self) -> nalgebra::Vector2<C> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Self::H => nalgebra::Vector2::new(c(1.0, 0.0), c(0.0, 0.0)),
            Self::V => nalgebra::Vector2::new(c(0.0, 0.0), c(1.0, 0.0)),
            Self::D => nalgebra::Vector2::new(c(h, 0.0), c(h, 0.0)),
            Self::R => nalgebra::Vector2::new(c(h, 0.0), c(0.0, h)),
        }
    }

    /// Bloch vector of the projected state.
    pub fn bloch(self) -> [f64; 3] {
        match self {
            Self::H => [0.0, 0.0, 1.0],
            Self::V => [0.0, 0.0, -1.0],
            Self::D => [1.0, 0.0, 0.0],
            Self::R => [0.0, 1.0, 0.0],
        }
    }

    pub fn label(self) -> char {
        match self {
            Self::H => 'H',
            Self::V => 'V',
            Self::D => 'D',
            Self::R => 'R',
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s.trim() {
            "H" | "h" => Some(Self::H),
            "V" | "v" => Some(Self::V),
            "D" | "d" => Some(Self::D),
            "R" | "r" => Some(Self::R),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub x: TomoProjector,
    pub xx: TomoProjector,
    pub count: f64,
    /// Relative integration time of this setting.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TomographyCounts {
    pub records: Vec<TomographyRecord>,
}

impl TomographyCounts {
    /// Expected counts `total · <ψ|ρ|ψ>` for every projector pair.
    pub fn expected(rho: &DensityMatrix, total: f64) -> Self {
        let records = TomoProjector::ALL
            .iter()
            .flat_map(|x| TomoProjector::ALL.iter().map(move |xx| (*x, *xx)))
            .map(|(x, xx)| TomographyRecord {
                x,
                xx,
                count: total * projector_probability(rho, x, xx),
                weight: 1.0,
            })
            .collect();
        Self { records }
    }
}

fn pair_projector(x: TomoProjector, xx: TomoProjector) -> Matrix4<C> {
    let (a, b) = (x.state(), xx.state());
    let psi = Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]);
    psi * psi.adjoint()
}

pub fn projector_probability(rho: &DensityMatrix, x: TomoProjector, xx: TomoProjector) -> f64 {
    rho.expectation(&pair_projector(x, xx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    /// Linear-inversion estimate after projection onto physical states.
    pub projected_linear: DensityMatrix,
    pub log_likelihood: f64,
    pub linear_log_likelihood: f64,
    pub iterations: usize,
}

struct Likelihood {
    projectors: Vec<Matrix4<C>>,
    counts: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl Likelihood {
    fn probabilities(&self, rho: &Matrix4<C>) -> Vec<f64> {
        self.projectors
            .iter()
            .map(|p| trace_product(rho, p).re)
            .collect()
    }

    /// Poisson likelihood with the overall rate profiled out.
    fn value(&self, rho: &Matrix4<C>) -> f64 {
        let p = self.probabilities(rho);
        let expected: f64 = p.iter().zip(&self.weights).map(|(p, w)| p * w).sum();
        let mut ll = -self.total * expected.ln();
        for ((p, n), w) in p.iter().zip(&self.counts).zip(&self.weights) {
            if *n > 0.0 {
                if *p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += n * (p * w).ln();
            }
        }
        ll
    }

    fn gradient(&self, rho: &Matrix4<C>) -> Matrix4<C> {
        let p = self.probabilities(rho);
        let expected: f64 = p.iter().zip(&self.weights).map(|(p, w)| p * w).sum();
        let mut g = Matrix4::zeros();
        for (k, proj) in self.projectors.iter().enumerate() {
            let mut coeff = -self.total * self.weights[k] / expected;
            if self.counts[k] > 0.0 {
                coeff += self.counts[k] / p[k];
            }
            g += proj * c(coeff / self.total, 0.0);
        }
        g
    }
}

/// Closest trace-one positive semidefinite matrix in Frobenius norm.
fn project_physical(m: &Matrix4<C>) -> Matrix4<C> {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let trace: f64 = values.iter().sum();
    for v in values.iter_mut() {
        *v /= trace;
    }
    // distribute negative mass over the remaining eigenvalues
    let mut carry = 0.0;
    let mut i = values.len();
    while i > 0 {
        let idx = i - 1;
        let remaining = idx as f64;
        if values[idx] + carry / (remaining + 1.0) >= 0.0 {
            let share = carry / (remaining + 1.0);
            for v in values.iter_mut().take(idx + 1) {
                *v += share;
            }
            break;
        }
        carry += values[idx];
        values[idx] = 0.0;
        i -= 1;
    }
    let mut out = Matrix4::zeros();
    for (rank, &col) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(col);
        out += v * v.adjoint() * c(values[rank], 0.0);
    }
    (out + out.adjoint()) * c(0.5, 0.0)
}

fn normalize(m: Matrix4<C>) -> Matrix4<C> {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let tr = herm.trace().re;
    herm / c(tr, 0.0)
}

/// `None` when the fitted trace is not positive, as for very sparse counts.
fn linear_inversion(counts: &TomographyCounts) -> Result<Option<Matrix4<C>>> {
    let rows = counts.records.len();
    let mut design = DMatrix::<f64>::zeros(rows, 16);
    let mut rates = DVector::<f64>::zeros(rows);
    for (r, rec) in counts.records.iter().enumerate() {
        let (bx, bxx) = (rec.x.bloch(), rec.xx.bloch());
        let sx = [1.0, bx[0], bx[1], bx[2]];
        let sxx = [1.0, bxx[0], bxx[1], bxx[2]];
        for a in 0..4 {
            for b in 0..4 {
                design[(r, 4 * a + b)] = 0.25 * sx[a] * sxx[b];
            }
        }
        rates[r] = rec.count / rec.weight;
    }
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if rows < 16 || min_sv <= 1e-10 * max_sv {
        return Err(Error::SingularDesign);
    }
    let params = svd
        .solve(&rates, 1e-12)
        .map_err(|_| Error::SingularDesign)?;
    let mut m = Matrix4::zeros();
    for a in 0..4 {
        for b in 0..4 {
            m += kron(&pauli(a), &pauli(b)) * c(0.25 * params[4 * a + b], 0.0);
        }
    }
    if params[0] <= 0.0 {
        return Ok(None);
    }
    Ok(Some(m / c(params[0], 0.0)))
}

/// Linear inversion, projection onto physical states and likelihood ascent
/// over `ρ → AρA†/tr` updates with `A = I + εG`.
pub fn tomography_reconstruct(counts: &TomographyCounts) -> Result<TomographyResult> {
    for rec in &counts.records {
        if !(rec.count >= 0.0) || !(rec.weight > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid tomography record {rec:?}"
            )));
        }
    }
    let total: f64 = counts.records.iter().map(|r| r.count).sum();
    if total <= 0.0 {
        return Err(Error::EmptyCounts);
    }
    let projected = match linear_inversion(counts)? {
        Some(linear) => project_physical(&linear),
        None => DensityMatrix::maximally_mixed().0,
    };

    let lik = Likelihood {
        projectors: counts
            .records
            .iter()
            .map(|r| pair_projector(r.x, r.xx))
            .collect(),
        counts: counts.records.iter().map(|r| r.count).collect(),
        weights: counts.records.iter().map(|r| r.weight).collect(),
        total,
    };
    let linear_ll = lik.value(&projected);

    let mut rho = normalize(projected * c(1.0 - 1e-6, 0.0) + Matrix4::identity() * c(0.25e-6, 0.0));
    let mut ll = lik.value(&rho);
    if linear_ll > ll {
        rho = projected;
        ll = linear_ll;
    }
    let mut step = 0.5;
    let mut iterations = 0;
    let identity = Matrix4::<C>::identity();
    while iterations < ML_MAX_ITERATIONS {
        iterations += 1;
        let g = lik.gradient(&rho);
        let mut accepted = None;
        while step > 1e-14 {
            let a = identity + g * c(step, 0.0);
            let candidate = normalize(a * rho * a.adjoint());
            let cand_ll = lik.value(&candidate);
            if cand_ll > ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_ll)) = accepted else {
            break;
        };
        let gain = cand_ll - ll;
        rho = candidate;
        ll = cand_ll;
        step = (step * 1.5).min(1e3);
        if gain < ML_STOP_GAIN {
            break;
        }
    }
    // rounding in repeated updates can leave eigenvalues slightly below zero
    let rho = project_physical(&rho);
    let ll = lik.value(&rho);

    Ok(TomographyResult {
        rho: DensityMatrix(rho),
        projected_linear: DensityMatrix(projected),
        log_likelihood: ll,
        linear_log_likelihood: linear_ll,
        iterations,
    })
}
