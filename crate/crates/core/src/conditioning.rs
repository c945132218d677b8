//! On/off detector conditioning of Gaussian states.
//!
//! A unit-efficiency click multiplies the Wigner function by
//! `1 - 2π W₀(x, p)`. Expanding the product over `N` triggers gives `2^N`
//! Gaussian terms indexed by a bit pattern `d`; term `d` projects the selected
//! triggers on vacuum, contributing weight
//! `(-2)^{|d|} / √det(I + J_d V_tt)` and signal covariance
//! `U_d = V_ss - V_tsᵀ J_d (J_d V_tt J_d + I)⁻¹ J_d V_ts`.
//! Detector inefficiency is assumed to be already folded into the covariance
//! as loss.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::gaussian::{submatrix, CovarianceMatrix};
use crate::protocol::{analytic_covariance, layout_for, reflected_covariance, ProtocolParams, Variant};
use crate::wick::FockTrace;

/// Determinants below this are reported as degenerate rather than inverted.
pub const DET_FLOOR: f64 = 1e-300;

/// One bit pattern `d` over the clicking triggers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorPattern {
    bits: Vec<bool>,
}

impl DetectorPattern {
    pub fn from_index(index: usize, n: usize) -> Self {
        Self {
            bits: (0..n).map(|i| index >> i & 1 == 1).collect(),
        }
    }

    /// All `2^n` patterns in ascending index order.
    pub fn all(n: usize) -> impl Iterator<Item = Self> {
        (0..1usize << n).map(move |i| Self::from_index(i, n))
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Trigger modes this pattern projects on vacuum.
    pub fn selected(&self, triggers: &[usize]) -> Vec<usize> {
        triggers
            .iter()
            .zip(&self.bits)
            .filter(|(_, &b)| b)
            .map(|(&m, _)| m)
            .collect()
    }
}

/// `det(I + V_sub)` for the selected modes, via Cholesky of `2I + (V - I)_sub`.
fn det_i_plus(v: &CovarianceMatrix, modes: &[usize]) -> Result<f64> {
    if modes.is_empty() {
        return Ok(1.0);
    }
    let mut m = submatrix(v.excess(), modes, modes);
    for q in 0..m.nrows() {
        m[(q, q)] += 2.0;
    }
    let det = m
        .cholesky()
        .ok_or_else(|| Error::NumericDegeneracy("I + V_tt is not positive definite".into()))?
        .determinant();
    if !(det >= DET_FLOOR) || !det.is_finite() {
        return Err(Error::NumericDegeneracy(format!("det(I + J_d V_tt) = {det:e}")));
    }
    Ok(det)
}

fn check_modes(v: &CovarianceMatrix, modes: &[usize]) -> Result<()> {
    for (k, &m) in modes.iter().enumerate() {
        if m >= v.n_modes() || modes[..k].contains(&m) {
            return Err(invalid(format!("bad trigger mode list {modes:?}")));
        }
    }
    Ok(())
}

/// True if the reduced state of `mode` is exactly the vacuum.
fn is_vacuum(v: &CovarianceMatrix, mode: usize) -> bool {
    let n = v.excess();
    (2 * mode..2 * mode + 2).all(|i| (2 * mode..2 * mode + 2).all(|j| n[(i, j)] == 0.0))
}

/// Probability that every mode in `triggers` clicks.
pub fn success_probability(v: &CovarianceMatrix, triggers: &[usize]) -> Result<f64> {
    check_modes(v, triggers)?;
    if triggers.iter().any(|&m| is_vacuum(v, m)) {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for d in DetectorPattern::all(triggers.len()) {
        let sel = d.selected(triggers);
        total += (-2f64).powi(sel.len() as i32) / det_i_plus(v, &sel)?.sqrt();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub pattern: DetectorPattern,
    pub weight: f64,
    pub covariance: CovarianceMatrix,
}

/// Heralded signal state as a signed sum of normalized Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMixture {
    pub components: Vec<MixtureComponent>,
    pub total: f64,
}

/// Splits the heralded state of `signals` into its `2^N` Gaussian terms.
pub fn conditional_mixture(v: &CovarianceMatrix, triggers: &[usize], signals: &[usize]) -> Result<ConditionalMixture> {
    check_modes(v, triggers)?;
    check_modes(v, signals)?;
    if signals.iter().any(|s| triggers.contains(s)) {
        return Err(invalid("signal and trigger modes overlap"));
    }
    let ex_ss = submatrix(v.excess(), signals, signals);
    let sig_labels: Vec<String> = signals.iter().map(|&s| v.labels()[s].clone()).collect();
    let mut components = Vec::with_capacity(1 << triggers.len());
    let mut total = 0.0;
    for d in DetectorPattern::all(triggers.len()) {
        let sel = d.selected(triggers);
        let weight = (-2f64).powi(sel.len() as i32) / det_i_plus(v, &sel)?.sqrt();
        let u_excess = if sel.is_empty() {
            ex_ss.clone()
        } else {
            vacuum_schur(v.excess(), &sel, signals)?
        };
        let covariance = CovarianceMatrix::from_excess(u_excess, sig_labels.clone())?;
        total += weight;
        components.push(MixtureComponent {
            pattern: d,
            weight,
            covariance,
        });
    }
    Ok(ConditionalMixture { components, total })
}

/// Excess covariance of `keep` after projecting `projected` on vacuum:
/// `N_kk - N_kpᵀ (2I + N_pp)⁻¹ N_kp` (off-diagonal blocks of `V` and `V - I`
/// coincide).
fn vacuum_schur(excess: &DMatrix<f64>, projected: &[usize], keep: &[usize]) -> Result<DMatrix<f64>> {
    let mut pp = submatrix(excess, projected, projected);
    for q in 0..pp.nrows() {
        pp[(q, q)] += 2.0;
    }
    let pk = submatrix(excess, projected, keep);
    let chol = pp
        .cholesky()
        .ok_or_else(|| Error::NumericDegeneracy("I + V_pp is not positive definite".into()))?;
    let mut out = submatrix(excess, keep, keep) - pk.transpose() * chol.solve(&pk);
    crate::gaussian::symmetrize(&mut out);
    Ok(out)
}

/// Projects `off` modes on vacuum. Returns the projection probability and the
/// normalized state of the remaining modes (original order).
pub fn project_vacuum(v: &CovarianceMatrix, off: &[usize]) -> Result<(f64, CovarianceMatrix)> {
    check_modes(v, off)?;
    let keep: Vec<usize> = (0..v.n_modes()).filter(|m| !off.contains(m)).collect();
    if keep.is_empty() {
        return Err(invalid("cannot project every mode"));
    }
    let labels = keep.iter().map(|&k| v.labels()[k].clone()).collect();
    if off.is_empty() {
        return Ok((1.0, v.partial_trace(&keep)?));
    }
    let prob = 2f64.powi(off.len() as i32) / det_i_plus(v, off)?.sqrt();
    let state = CovarianceMatrix::from_excess(vacuum_schur(v.excess(), off, &keep)?, labels)?;
    Ok((prob, state))
}

/// Both-arms acceptance probability from `V⁺`: `on` triggers click and `off`
/// triggers stay dark, or the mirror outcome; twice the single-branch value.
pub fn success_probability_plus(v_plus: &CovarianceMatrix, on: &[usize], off: &[usize]) -> Result<f64> {
    check_modes(v_plus, on)?;
    check_modes(v_plus, off)?;
    if on.len() != off.len() || on.len().is_multiple_of(2) {
        return Err(invalid(
            "both-arms acceptance needs N transmitted and N reflected triggers, N odd",
        ));
    }
    if on.iter().any(|&m| is_vacuum(v_plus, m)) {
        return Ok(0.0);
    }
    let prefactor = 2.0 * 2f64.powi(off.len() as i32);
    let mut total = 0.0;
    for d in DetectorPattern::all(on.len()) {
        let mut sel = d.selected(on);
        let k = sel.len();
        sel.extend_from_slice(off);
        total += (-2f64).powi(k as i32) / det_i_plus(v_plus, &sel)?.sqrt();
    }
    Ok(prefactor * total)
}

/// `V - (V⁺_R)ᵀ (V⁺_RR + I)⁻¹ V⁺_R`: the state of transmitted triggers and
/// signals once every reflected trigger is projected on vacuum.
pub fn conditioned_covariance_plus(v_plus: &CovarianceMatrix, off: &[usize]) -> Result<CovarianceMatrix> {
    project_vacuum(v_plus, off).map(|(_, v)| v)
}

/// How a trigger detector responds to `n` photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClickModel {
    /// Click with certainty for any `n > 0` (losses live in the covariance).
    #[default]
    OnOff,
    /// Weight proportional to `n`, i.e. conditioning with `c†c`; the exact
    /// limit of a weak on/off detector.
    Annihilation,
}

/// Unnormalized heralded expectation values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldedTraces {
    /// Heralding probability (for [`ClickModel::Annihilation`], the
    /// normalization `⟨∏ c†c⟩`).
    pub probability: f64,
    /// `Tr[ρ Π ⊗ O]` for each requested signal operator `O`.
    pub values: Vec<Complex64>,
}

impl HeraldedTraces {
    /// Value of operator `k` in the normalized heralded state.
    pub fn normalized(&self, k: usize) -> Result<Complex64> {
        if !(self.probability > 0.0) {
            return Err(Error::ZeroProbability);
        }
        Ok(self.values[k] / self.probability)
    }
}

/// Above this ratio of `Σ|terms|` to the alternating sum, the determinant
/// expansion gives way to the integral representation of the click operator.
const CANCELLATION_LIMIT: f64 = 1e4;

/// Gauss-Legendre nodes and weights on `[0, 1]` (Golub-Welsch).
pub(crate) fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut out: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (0.5 * (eig.eigenvalues[k] + 1.0), v0 * v0)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Gauss-Legendre order for the damping integrals. The integrand is a power
/// series in `1 - t` whose coefficients fall off like `n̄^k` with the trigger
/// occupation, and an `m`-point rule is exact through degree `2m - 1`.
fn nodes_for(v: &CovarianceMatrix, on: &[usize]) -> usize {
    let ex = v.excess();
    let nbar = on
        .iter()
        .map(|&m| 0.25 * (ex[(2 * m, 2 * m)] + ex[(2 * m + 1, 2 * m + 1)]))
        .fold(0.0, f64::max);
    if nbar <= 0.0 {
        return 3;
    }
    let m = (-10.0 / (2.0 * nbar.min(0.9).log10())).ceil();
    (m as usize).clamp(3, 16)
}

/// Heralded traces of `ops` on `signals` when every `on` trigger clicks and
/// every `off` trigger stays dark.
///
/// Each click is `1 - :e^{-c†c}:`. Its inclusion-exclusion expansion is exact
/// but cancels catastrophically when the triggers are nearly empty, so in that
/// regime the click is written as `c†c ∫₀¹ :e^{-t c†c}: dt` and the integral is
/// done by Gauss-Legendre quadrature, every term being positive.
pub fn heralded_traces(
    v: &CovarianceMatrix,
    on: &[usize],
    off: &[usize],
    signals: &[usize],
    ops: &[Vec<(usize, usize)>],
    model: ClickModel,
) -> Result<HeraldedTraces> {
    let triggers: Vec<usize> = on.iter().chain(off).copied().collect();
    check_modes(v, &triggers)?;
    check_modes(v, signals)?;
    if signals.iter().any(|s| triggers.contains(s)) {
        return Err(invalid("signal and trigger modes overlap"));
    }
    if ops.iter().any(|o| o.len() != signals.len()) {
        return Err(invalid("each operator needs one Fock pair per signal mode"));
    }
    if model == ClickModel::Annihilation {
        let mut damping = vec![0.0; on.len()];
        damping.extend(std::iter::repeat_n(1.0, off.len()));
        return damped_traces(v, on, off, signals, ops, &damping, 1);
    }

    // a trigger in exact vacuum never clicks
    let ex = v.excess();
    if on
        .iter()
        .any(|&m| (0..ex.ncols()).all(|k| ex[(2 * m, k)] == 0.0 && ex[(2 * m + 1, k)] == 0.0))
    {
        return Ok(HeraldedTraces {
            probability: 0.0,
            values: vec![Complex64::new(0.0, 0.0); ops.len()],
        });
    }

    let mut probability = 0.0;
    let mut magnitude = 0.0;
    let mut values = vec![Complex64::new(0.0, 0.0); ops.len()];
    for d in DetectorPattern::all(on.len()) {
        let mut projected = d.selected(on);
        let sign = if projected.len() % 2 == 0 { 1.0 } else { -1.0 };
        projected.extend_from_slice(off);
        let w = 2f64.powi(projected.len() as i32) / det_i_plus(v, &projected)?.sqrt();
        probability += sign * w;
        magnitude += w;
        if !ops.is_empty() {
            let ones = vec![1.0; projected.len()];
            let mut tr = FockTrace::with_damping(v, signals, &projected, &ones)?;
            let zeros = vec![0u8; projected.len()];
            for (acc, op) in values.iter_mut().zip(ops) {
                *acc += sign * tr.trace(op, &zeros)?;
            }
        }
    }
    if magnitude <= CANCELLATION_LIMIT * probability.abs() {
        return Ok(HeraldedTraces { probability, values });
    }

    let nodes = gauss_legendre(nodes_for(v, on));
    let mut out = HeraldedTraces {
        probability: 0.0,
        values: vec![Complex64::new(0.0, 0.0); ops.len()],
    };
    let total = nodes.len().pow(on.len() as u32);
    for flat in 0..total {
        let mut damping = Vec::with_capacity(triggers.len());
        let mut weight = 1.0;
        let mut rest = flat;
        for _ in on {
            let (t, w) = nodes[rest % nodes.len()];
            rest /= nodes.len();
            damping.push(t);
            weight *= w;
        }
        damping.extend(std::iter::repeat_n(1.0, off.len()));
        let term = damped_traces(v, on, off, signals, ops, &damping, 1)?;
        out.probability += weight * term.probability;
        for (acc, x) in out.values.iter_mut().zip(term.values) {
            *acc += weight * x;
        }
    }
    Ok(out)
}

/// One damped evaluation: `c†^q c^q :e^{-t c†c}:` on `on`, vacuum on `off`.
pub(crate) fn damped_traces(
    v: &CovarianceMatrix,
    on: &[usize],
    off: &[usize],
    signals: &[usize],
    ops: &[Vec<(usize, usize)>],
    damping: &[f64],
    q: u8,
) -> Result<HeraldedTraces> {
    let counted: Vec<usize> = on.iter().chain(off).copied().collect();
    let mut counts = vec![q; on.len()];
    counts.extend(std::iter::repeat_n(0, off.len()));
    let probability = if counted.is_empty() {
        1.0
    } else {
        FockTrace::with_damping(v, &[], &counted, damping)?
            .trace(&[], &counts)?
            .re
    };
    let mut values = Vec::with_capacity(ops.len());
    if !ops.is_empty() {
        let mut tr = FockTrace::with_damping(v, signals, &counted, damping)?;
        for op in ops {
            values.push(tr.trace(op, &counts)?);
        }
    }
    Ok(HeraldedTraces { probability, values })
}

/// Covariance, trigger layout and signal modes of the configured protocol.
pub(crate) fn protocol_state(p: &ProtocolParams) -> Result<(CovarianceMatrix, crate::protocol::ModeLayout)> {
    p.validate()?;
    let v = match p.variant {
        Variant::TransmittedOnly => analytic_covariance(p)?,
        Variant::BothArms => reflected_covariance(p)?,
    };
    let layout = layout_for(p, &v)?;
    Ok((v, layout))
}

/// Heralded traces of `ops` on the signal pair `(a+, b-)` for the configured
/// protocol. With both arms open this is the transmitted-click branch alone.
pub fn protocol_traces(p: &ProtocolParams, ops: &[Vec<(usize, usize)>], model: ClickModel) -> Result<HeraldedTraces> {
    let (v, layout) = protocol_state(p)?;
    heralded_traces(&v, &layout.on, &layout.off, &layout.signals, ops, model)
}

/// Heralding probability of the configured protocol; with both arms open the
/// mirror outcome doubles the single-branch value.
pub fn protocol_probability(p: &ProtocolParams) -> Result<f64> {
    let prob = protocol_traces(p, &[], ClickModel::OnOff)?.probability;
    Ok(match p.variant {
        Variant::TransmittedOnly => prob,
        Variant::BothArms => 2.0 * prob,
    })
}

/// Heralding probability from the determinant sums alone, without the
/// switch to the integral form. Accurate in absolute terms only; this is the
/// route the closed forms of the probability table are checked against.
pub fn determinant_probability(p: &ProtocolParams) -> Result<f64> {
    let (v, layout) = protocol_state(p)?;
    match p.variant {
        Variant::TransmittedOnly => success_probability(&v, &layout.on),
        Variant::BothArms => success_probability_plus(&v, &layout.on, &layout.off),
    }
}

/// Leading small-squeezing behaviour `2 N! λ^N / (2N)^N` (odd `N`), or
/// `2 N! λ^N / N^N` for even `N`.
pub fn small_r_probability(p: &ProtocolParams) -> f64 {
    let n = p.n as i32;
    let fact: f64 = (1..=p.n).map(|k| k as f64).product();
    let denom = if p.n % 2 == 1 { 2.0 * n as f64 } else { n as f64 };
    2.0 * fact * (p.lambda() / denom).powi(n)
}

/// Closed-form heralding probabilities for `N = 1..4` as functions of `λ`.
pub fn closed_form_probability(n: usize, lambda: f64) -> Option<f64> {
    let l = lambda;
    match n {
        1 => Some(l / (l + 1.0)),
        2 => Some(l * l / ((l + 1.0) * (l + 1.0))),
        3 => Some(l.powi(3) * (l + 4.0) / ((l + 2.0).powi(2) * (l + 3.0) * (l + 6.0))),
        4 => Some(
            l.powi(4) * (l * l + 6.0 * l + 6.0) / ((l + 1.0).powi(2) * (l + 2.0).powi(2) * (l * l + 8.0 * l + 8.0)),
        ),
        _ => None,
    }
}

/// Closed-form both-arms probabilities for `N = 1, 3`.
pub fn closed_form_probability_plus(n: usize, lambda: f64) -> Option<f64> {
    let l = lambda;
    match n {
        1 => Some(2.0 * l / ((l + 1.0) * (l + 1.0))),
        3 => Some(
            2.0 * l.powi(3) * (3.0 * l + 4.0)
                / ((l + 1.0).powi(2) * (l + 2.0).powi(2) * (2.0 * l + 3.0) * (5.0 * l + 6.0)),
        ),
        _ => None,
    }
}
