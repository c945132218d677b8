//! Brute-force truncated Fock-space simulation of the protocol.
//!
//! This path shares nothing numerical with the Gaussian pipeline beyond the
//! list of optical elements: the initial state is written out photon by photon,
//! each gate acts through creation-operator substitution, detectors act as
//! diagonal POVMs, and the NOON fidelity is read off the signal density matrix.

use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::gaussian::CovarianceMatrix;
use crate::noon::{optimal_phase, NoonSpec, Outcome};
use crate::protocol::{Gate, Network, ProtocolParams, Variant};
use crate::wick::FockTrace;

type DetHasher = BuildHasherDefault<std::collections::hash_map::DefaultHasher>;

const BITS: usize = 6;
const MASK: u64 = (1 << BITS) - 1;
/// Occupations are packed six bits per mode into a `u64`.
pub const MAX_MODES: usize = 10;
pub const MAX_OCCUPATION: usize = MASK as usize;
/// Ceiling on the total photon number of the initial state.
pub const MAX_CUTOFF: usize = 40;

fn occupation(key: u64, mode: usize) -> usize {
    ((key >> (BITS * mode)) & MASK) as usize
}

fn with_occupation(key: u64, mode: usize, n: usize) -> u64 {
    (key & !(MASK << (BITS * mode))) | ((n as u64) << (BITS * mode))
}

fn pack(occ: &[usize]) -> u64 {
    occ.iter()
        .enumerate()
        .fold(0, |k, (m, &n)| k | (n as u64) << (BITS * m))
}

/// Sparse pure state on a few modes, truncated in total photon number.
#[derive(Debug, Clone)]
pub struct FockArray {
    n_modes: usize,
    cutoff: usize,
    amps: HashMap<u64, Complex64, DetHasher>,
}

impl FockArray {
    pub fn vacuum(n_modes: usize, cutoff: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > MAX_MODES || cutoff > MAX_OCCUPATION {
            return Err(invalid(format!(
                "Fock arrays hold 1..={MAX_MODES} modes with cutoff ≤ {MAX_OCCUPATION}"
            )));
        }
        let mut amps = HashMap::default();
        amps.insert(0, Complex64::new(1.0, 0.0));
        Ok(Self { n_modes, cutoff, amps })
    }

    /// Builds a state from `(occupations, amplitude)` pairs; entries above the
    /// cutoff are dropped.
    pub fn from_amplitudes(
        n_modes: usize,
        cutoff: usize,
        entries: impl IntoIterator<Item = (Vec<usize>, Complex64)>,
    ) -> Result<Self> {
        let mut out = Self::vacuum(n_modes, cutoff)?;
        out.amps.clear();
        for (occ, a) in entries {
            if occ.len() != n_modes {
                return Err(invalid("occupation tuple has the wrong length"));
            }
            if occ.iter().sum::<usize>() <= cutoff && a != Complex64::new(0.0, 0.0) {
                *out.amps.entry(pack(&occ)).or_default() += a;
            }
        }
        Ok(out)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn amplitude(&self, occ: &[usize]) -> Complex64 {
        if occ.len() != self.n_modes || occ.iter().any(|&n| n > MAX_OCCUPATION) {
            return Complex64::new(0.0, 0.0);
        }
        self.amps.get(&pack(occ)).copied().unwrap_or_default()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, Complex64)> + '_ {
        self.amps
            .iter()
            .map(|(&k, &a)| ((0..self.n_modes).map(|m| occupation(k, m)).collect(), a))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    /// `1 - ⟨ψ|ψ⟩`: weight lost to truncation for pure-state constructions.
    pub fn truncation_deficit(&self) -> f64 {
        1.0 - self.norm_sqr()
    }

    /// Appends vacuum modes after the existing ones.
    pub fn with_vacuum_modes(&self, extra: usize) -> Result<Self> {
        if self.n_modes + extra > MAX_MODES {
            return Err(invalid(format!("at most {MAX_MODES} modes")));
        }
        Ok(Self {
            n_modes: self.n_modes + extra,
            cutoff: self.cutoff,
            amps: self.amps.clone(),
        })
    }

    /// Reorders modes: new mode `k` is old mode `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.n_modes).collect::<Vec<_>>() {
            return Err(invalid("mode order must be a permutation"));
        }
        let amps = self
            .amps
            .iter()
            .map(|(&k, &a)| {
                let occ: Vec<usize> = order.iter().map(|&m| occupation(k, m)).collect();
                (pack(&occ), a)
            })
            .collect();
        Ok(Self {
            n_modes: self.n_modes,
            cutoff: self.cutoff,
            amps,
        })
    }
}

/// Two oscillator outputs `(a+, a-, b+, b-)` with amplitude `(1-r²) r^{n+m}` on
/// `|n,n,m,m⟩`, kept while the total photon number `2(n+m)` fits in `cutoff`.
pub fn build_initial_state(r: f64, cutoff: usize) -> Result<FockArray> {
    if !(0.0..1.0).contains(&r) {
        return Err(invalid(format!("squeezing r = {r} outside [0, 1)")));
    }
    let pairs = cutoff / 2;
    let entries = (0..=pairs).flat_map(|n| {
        (0..=pairs - n).map(move |m| {
            let amp = (1.0 - r * r) * r.powi((n + m) as i32);
            (vec![n, n, m, m], Complex64::new(amp, 0.0))
        })
    });
    FockArray::from_amplitudes(4, cutoff, entries)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn sqrt_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).sqrt()).product()
}

/// Heisenberg-picture 2×2 matrix `(c_i, c_j) -> u (c_i, c_j)` of a gate, or a
/// single-mode phase.
enum GateAction {
    TwoMode((usize, usize), [[Complex64; 2]; 2]),
    Phase(usize, f64),
}

fn gate_action(gate: &Gate) -> Result<GateAction> {
    Ok(match *gate {
        Gate::BeamSplitter { reflectivity, modes } => {
            if !(0.0..=1.0).contains(&reflectivity) {
                return Err(invalid("reflectivity outside [0, 1]"));
            }
            let t = Complex64::from((1.0 - reflectivity).sqrt());
            let r = Complex64::from(reflectivity.sqrt());
            GateAction::TwoMode(modes, [[t, -r], [r, t]])
        }
        Gate::Phase { theta, mode } => GateAction::Phase(mode, theta),
        Gate::Pbs45 { modes } => {
            let h = Complex64::from(std::f64::consts::FRAC_1_SQRT_2);
            GateAction::TwoMode(modes, [[h, h], [h, -h]])
        }
    })
}

/// Output amplitudes on `|k, n_i + n_j - k⟩` for input `|n_i, n_j⟩`.
///
/// With `c_i → u₀₀ c_i + u₀₁ c_j` (and similarly for `c_j`), creation
/// operators transform with the columns of `u`: `c_i† → u₀₀ c_i† + u₁₀ c_j†`,
/// `c_j† → u₀₁ c_i† + u₁₁ c_j†`.
fn two_mode_row(u: &[[Complex64; 2]; 2], ni: usize, nj: usize) -> Vec<Complex64> {
    let total = ni + nj;
    let mut out = vec![Complex64::new(0.0, 0.0); total + 1];
    for a in 0..=ni {
        let ca = u[0][0].powu(a as u32) * u[1][0].powu((ni - a) as u32) * binomial(ni, a);
        for b in 0..=nj {
            let cb = u[0][1].powu(b as u32) * u[1][1].powu((nj - b) as u32) * binomial(nj, b);
            out[a + b] += ca * cb;
        }
    }
    let norm = 1.0 / (sqrt_factorial(ni) * sqrt_factorial(nj));
    for (k, o) in out.iter_mut().enumerate() {
        *o *= norm * sqrt_factorial(k) * sqrt_factorial(total - k);
    }
    out
}

/// Applies one passive element exactly; photon number is conserved, so the
/// truncated space is invariant.
pub fn apply_two_mode_unitary(s: &FockArray, gate: &Gate) -> Result<FockArray> {
    let action = gate_action(gate)?;
    let check = |m: usize| {
        if m >= s.n_modes {
            Err(invalid(format!("gate mode {m} out of range")))
        } else {
            Ok(())
        }
    };
    let mut out: HashMap<u64, Complex64, DetHasher> = HashMap::default();
    match action {
        GateAction::Phase(mode, theta) => {
            check(mode)?;
            for (&k, &a) in &s.amps {
                let n = occupation(k, mode) as f64;
                out.insert(k, a * Complex64::from_polar(1.0, n * theta));
            }
        }
        GateAction::TwoMode((i, j), u) => {
            check(i)?;
            check(j)?;
            if i == j {
                return Err(invalid("two-mode gate needs distinct modes"));
            }
            let mut rows: HashMap<(usize, usize), Vec<Complex64>> = HashMap::new();
            out.reserve(s.amps.len());
            for (&k, &a) in &s.amps {
                let (ni, nj) = (occupation(k, i), occupation(k, j));
                let row = rows.entry((ni, nj)).or_insert_with(|| two_mode_row(&u, ni, nj));
                for (q, &c) in row.iter().enumerate() {
                    if c.norm_sqr() == 0.0 {
                        continue;
                    }
                    let key = with_occupation(with_occupation(k, i, q), j, ni + nj - q);
                    *out.entry(key).or_default() += a * c;
                }
            }
        }
    }
    Ok(FockArray {
        n_modes: s.n_modes,
        cutoff: s.cutoff,
        amps: out,
    })
}

/// On/off detector with single-photon efficiency `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnOffPovm {
    pub eta: f64,
}

impl OnOffPovm {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid(format!("efficiency {eta} outside [0, 1]")));
        }
        Ok(Self { eta })
    }

    pub fn on(&self, n: usize) -> f64 {
        1.0 - self.off(n)
    }

    pub fn off(&self, n: usize) -> f64 {
        (1.0 - self.eta).powi(n as i32)
    }
}

/// Trigger detector model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorModel {
    OnOff(OnOffPovm),
    /// Weight `n` for a click (photodetector/annihilation model); a required
    /// dark detector projects on vacuum.
    Annihilation,
}

impl DetectorModel {
    fn weight(&self, n: usize, click: bool) -> f64 {
        match (self, click) {
            (DetectorModel::OnOff(p), true) => p.on(n),
            (DetectorModel::OnOff(p), false) => p.off(n),
            (DetectorModel::Annihilation, true) => n as f64,
            (DetectorModel::Annihilation, false) => (n == 0) as u8 as f64,
        }
    }
}

/// What a trigger mode must show.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    On,
    Off,
    /// Undetected: traced out.
    Traced,
}

/// Density matrix of two signal modes, indexed `n·d + m` with `d = cutoff + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDensity {
    pub dim: usize,
    pub rho: DMatrix<Complex64>,
}

impl SignalDensity {
    pub fn zeros(cutoff: usize) -> Self {
        let dim = cutoff + 1;
        Self {
            dim,
            rho: DMatrix::zeros(dim * dim, dim * dim),
        }
    }

    fn index(&self, n: usize, m: usize) -> usize {
        n * self.dim + m
    }

    /// `⟨n₁ m₁|ρ|n₂ m₂⟩`, zero outside the truncated space.
    pub fn element(&self, bra: (usize, usize), ket: (usize, usize)) -> Complex64 {
        if bra.0.max(bra.1).max(ket.0).max(ket.1) >= self.dim {
            return Complex64::new(0.0, 0.0);
        }
        self.rho[(self.index(bra.0, bra.1), self.index(ket.0, ket.1))]
    }

    pub fn trace(&self) -> f64 {
        self.rho.diagonal().iter().map(|z| z.re).sum()
    }

    /// Pure loss of transmission `η` on both signal modes.
    pub fn with_loss(&self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid("signal transmission outside [0, 1]"));
        }
        let d = self.dim;
        // Kraus E_k|n⟩ = √C(n,k) η^{(n-k)/2} (1-η)^{k/2} |n-k⟩ applied to one mode
        let kraus = |n: usize, k: usize| {
            binomial(n, k).sqrt() * eta.powf((n - k) as f64 / 2.0) * (1.0 - eta).powf(k as f64 / 2.0)
        };
        let mut out = Self::zeros(d - 1);
        for n1 in 0..d {
            for m1 in 0..d {
                for n2 in 0..d {
                    for m2 in 0..d {
                        let src = self.rho[(n1 * d + m1, n2 * d + m2)];
                        if src == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for k in 0..=n1.min(n2) {
                            let ka = kraus(n1, k) * kraus(n2, k);
                            for l in 0..=m1.min(m2) {
                                let w = ka * kraus(m1, l) * kraus(m2, l);
                                out.rho[((n1 - k) * d + m1 - l, (n2 - k) * d + m2 - l)] += src * w;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `⟨NOON|ρ|NOON⟩`.
    pub fn noon_fidelity(&self, spec: &NoonSpec) -> f64 {
        let n = spec.n;
        let coherence = self.element((n, 0), (0, n)) * Complex64::from_polar(1.0, spec.phi);
        0.5 * (self.element((n, 0), (n, 0)).re + self.element((0, n), (0, n)).re) + coherence.re
    }
}

/// Applies the trigger POVMs, traces out every non-signal mode, and returns the
/// heralding probability with the normalized signal density matrix.
pub fn condition_on_off(
    state: &FockArray,
    signals: [usize; 2],
    triggers: &[(usize, Requirement)],
    model: DetectorModel,
) -> Result<(f64, SignalDensity)> {
    let (prob, rho) = condition_unnormalized(state, signals, triggers, model)?;
    if !(prob >= 1e-300) {
        return Err(Error::ZeroProbability);
    }
    let mut rho = rho;
    rho.rho /= Complex64::from(prob);
    Ok((prob, rho))
}

fn condition_unnormalized(
    state: &FockArray,
    signals: [usize; 2],
    triggers: &[(usize, Requirement)],
    model: DetectorModel,
) -> Result<(f64, SignalDensity)> {
    let n = state.n_modes;
    let mut roles = vec![None; n];
    for &(m, req) in triggers {
        if m >= n || roles[m].is_some() || signals.contains(&m) {
            return Err(invalid(
                "trigger modes must be distinct, in range, and disjoint from signals",
            ));
        }
        roles[m] = Some(req);
    }
    if signals[0] == signals[1] || signals.iter().any(|&s| s >= n) {
        return Err(invalid("bad signal modes"));
    }
    // group amplitudes by the configuration of all non-signal modes
    let signal_mask = (MASK << (BITS * signals[0])) | (MASK << (BITS * signals[1]));
    let mut groups: HashMap<u64, Vec<(usize, usize, Complex64)>, DetHasher> = HashMap::default();
    for (&k, &a) in &state.amps {
        groups
            .entry(k & !signal_mask)
            .or_default()
            .push((occupation(k, signals[0]), occupation(k, signals[1]), a));
    }
    let mut out = SignalDensity::zeros(state.cutoff);
    let mut keys: Vec<u64> = groups.keys().copied().collect();
    keys.sort_unstable();
    for env in keys {
        let mut w = 1.0;
        for (m, role) in roles.iter().enumerate() {
            match role {
                Some(Requirement::On) => w *= model.weight(occupation(env, m), true),
                Some(Requirement::Off) => w *= model.weight(occupation(env, m), false),
                _ => {}
            }
        }
        if w == 0.0 {
            continue;
        }
        let group = &groups[&env];
        for &(n1, m1, a1) in group {
            let i = out.index(n1, m1);
            for &(n2, m2, a2) in group {
                let j = out.index(n2, m2);
                out.rho[(i, j)] += a1 * a2.conj() * w;
            }
        }
    }
    let prob = out.trace();
    Ok((prob, out))
}

/// Smallest pair cutoff `t` with the neglected initial-state weight, enhanced by
/// the `C(t, N)` growth of multi-photon click multiplicities, below `tol`
/// relative to the leading `r^{2N}` contribution. Returns the total-photon
/// cutoff `2t`.
pub fn adaptive_cutoff(r: f64, n: usize, tol: f64) -> usize {
    let r2 = r * r;
    if r2 == 0.0 {
        return 2 * n;
    }
    let term = |t: usize| (t + 1) as f64 * binomial(t, n) * r2.powi(t as i32 - n as i32);
    for t_max in n..=MAX_CUTOFF / 2 {
        let tail: f64 = (t_max + 1..t_max + 400).map(term).sum();
        if tail <= tol {
            return 2 * t_max;
        }
    }
    MAX_CUTOFF
}

/// Relative tolerance used by [`oracle_protocol_run`] when no cutoff is given.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub probability: f64,
    pub fidelity: f64,
    pub cutoff: usize,
    pub deficit: f64,
}

/// Runs the whole protocol in Fock space: initial state, network with vacuum
/// ancillas, detector POVMs, signal loss, NOON fidelity at `p.phi` (default
/// optimal).
pub fn oracle_protocol_run(p: &ProtocolParams, cutoff: Option<usize>, model: DetectorModel) -> Result<OracleResult> {
    p.validate()?;
    let cutoff = cutoff.unwrap_or_else(|| adaptive_cutoff(p.r, p.n, ORACLE_TOLERANCE));
    if cutoff > MAX_CUTOFF {
        return Err(invalid(format!("cutoff above {MAX_CUTOFF}")));
    }
    let net = Network::new(p)?;
    if net.n_modes > MAX_MODES {
        return Err(Error::UnsupportedN(p.n));
    }
    let initial = build_initial_state(p.r, cutoff)?;
    let deficit = initial.truncation_deficit();
    // (a+, a-, b+, b-) -> network order (a+, b-, a-, b+, ancillas…)
    let mut state = initial.permuted(&[0, 3, 1, 2])?.with_vacuum_modes(net.n_modes - 4)?;
    for gate in &net.gates {
        state = apply_two_mode_unitary(&state, gate)?;
    }

    let model = match model {
        DetectorModel::OnOff(_) => DetectorModel::OnOff(OnOffPovm::new(p.eta)?),
        m => m,
    };
    let role = |on: &[usize], off: &[usize]| -> Vec<(usize, Requirement)> {
        net.transmitted
            .iter()
            .chain(&net.reflected)
            .map(|&m| {
                let r = if on.contains(&m) {
                    Requirement::On
                } else if off.contains(&m) {
                    Requirement::Off
                } else {
                    Requirement::Traced
                };
                (m, r)
            })
            .collect()
    };
    let spec = NoonSpec::new(
        p.n,
        p.phi
            .unwrap_or_else(|| optimal_phase(p.n, p.theta, Outcome::Transmitted)),
    )?;
    let (on, off) = match p.variant {
        Variant::BothArms if p.n % 2 == 1 => (net.transmitted.clone(), net.reflected.clone()),
        _ => (net.observed(p), Vec::new()),
    };
    let (prob_t, rho) = condition_unnormalized(&state, [0, 1], &role(&on, &off), model)?;
    let probability = if off.is_empty() {
        prob_t
    } else {
        // the mirror outcome, evaluated on its own
        prob_t + condition_unnormalized(&state, [0, 1], &role(&off, &on), model)?.0
    };
    if !(prob_t >= 1e-300) {
        return Err(Error::ZeroProbability);
    }
    let mut rho = rho.with_loss(p.eta_s)?;
    rho.rho /= Complex64::from(prob_t);
    Ok(OracleResult {
        probability,
        fidelity: rho.noon_fidelity(&spec),
        cutoff,
        deficit,
    })
}

/// Fock-basis density matrix of a zero-mean Gaussian state over all occupation
/// tuples with total photon number at most `cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensity {
    pub basis: Vec<Vec<usize>>,
    pub rho: DMatrix<Complex64>,
}

impl FockDensity {
    pub fn index_of(&self, occ: &[usize]) -> Option<usize> {
        self.basis.iter().position(|b| b == occ)
    }

    /// `1 - Tr ρ` on the truncated space.
    pub fn deficit(&self) -> f64 {
        1.0 - self.rho.diagonal().iter().map(|z| z.re).sum::<f64>()
    }
}

fn occupation_tuples(n_modes: usize, cutoff: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n_modes {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                let used: usize = prefix.iter().sum();
                (0..=cutoff - used).map(move |k| {
                    let mut v = prefix.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    out.sort_by_key(|v| (v.iter().sum::<usize>(), v.clone()));
    out
}

/// `⟨n|ρ|m⟩ = Tr(ρ |m⟩⟨n|)`, each element an exact Gaussian moment sum.
///
/// Elements come from the normally ordered form `|m⟩⟨n| = :c†^m c^n e^{-c†c}: / √(m! n!)`,
/// which has a single term per mode and keeps its relative accuracy for weakly
/// occupied modes.
pub fn gaussian_to_fock(v: &CovarianceMatrix, cutoff: usize) -> Result<FockDensity> {
    v.check_physical()?;
    if cutoff > 15 {
        return Err(invalid("cutoff above 15"));
    }
    let modes: Vec<usize> = (0..v.n_modes()).collect();
    let mut tr = FockTrace::with_damping(v, &[], &modes, &vec![1.0; modes.len()])?;
    let basis = occupation_tuples(v.n_modes(), cutoff);
    let dim = basis.len();
    let mut rho = DMatrix::zeros(dim, dim);
    let norm: Vec<f64> = basis
        .iter()
        .map(|occ| occ.iter().map(|&k| sqrt_factorial(k)).product::<f64>())
        .collect();
    for i in 0..dim {
        for j in i..dim {
            let op: Vec<(u8, u8)> = basis[j]
                .iter()
                .zip(&basis[i])
                .map(|(&m, &n)| (m as u8, n as u8))
                .collect();
            let el = tr.trace_ordered(&[], &op)? / (norm[i] * norm[j]);
            if !el.re.is_finite() || !el.im.is_finite() {
                return Err(Error::NumericDegeneracy("non-finite Fock element".into()));
            }
            rho[(i, j)] = el;
            rho[(j, i)] = el.conj();
        }
    }
    Ok(FockDensity { basis, rho })
}
