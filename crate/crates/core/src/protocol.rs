//! Covariance matrix of the pulsed two-oscillator setup.
//!
//! Two identical type-II sources emit `(a₊, a₋)` and `(b₊, b₋)` as two-mode
//! squeezed vacua. The `a₋`/`b₊` beam is split into equal-intensity spatial
//! beams, `b₊` picks up a per-beam phase `π + 2πn/N`, and a 45° polarizing
//! beam splitter in each beam produces the trigger modes
//! `c_k ∝ a₋ ∓ e^{2πik/N + iθ} b₊` (transmitted `-`, reflected `+`).
//! The signal modes are `a₊` and `b₋`.
//!
//! The same covariance is produced two ways: [`analytic_covariance`] from the
//! closed-form moments and [`circuit_covariance`] by running the optical
//! network on the source states.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    apply_loss, apply_symplectic, beam_splitter, moments_to_covariance, pbs45, phase_shifter, tmsv_moments,
    CovarianceMatrix, ModeMoments, Symplectic,
};

pub const SIGNAL_A: &str = "a+";
pub const SIGNAL_B: &str = "b-";

/// Which trigger outcomes are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Clicks in all transmitted trigger modes; reflected ports unobserved.
    #[default]
    TransmittedOnly,
    /// Clicks in all transmitted and none of the reflected modes, or the
    /// mirror outcome. Odd `N` only.
    BothArms,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transmitted_only" | "transmitted" => Ok(Variant::TransmittedOnly),
            "both_arms" | "both" => Ok(Variant::BothArms),
            other => Err(invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// One configuration of the pulsed protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Target photon number.
    pub n: usize,
    /// Squeezing parameter, `0 ≤ r < 1`.
    pub r: f64,
    /// Trigger detector efficiency.
    pub eta: f64,
    /// Phase of `b₊` relative to `a₋`.
    pub theta: f64,
    /// NOON relative phase; `None` selects the optimal value.
    pub phi: Option<f64>,
    /// Signal transmission (loss is `1 - eta_s`).
    pub eta_s: f64,
    pub variant: Variant,
}

impl ProtocolParams {
    pub fn new(n: usize, r: f64, eta: f64) -> Self {
        Self {
            n,
            r,
            eta,
            theta: 0.0,
            phi: None,
            eta_s: 1.0,
            variant: Variant::TransmittedOnly,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = Some(phi);
        self
    }

    pub fn with_signal_transmission(mut self, eta_s: f64) -> Self {
        self.eta_s = eta_s;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("N must be positive"));
        }
        if !(0.0..1.0).contains(&self.r) {
            return Err(invalid(format!("squeezing r = {} outside [0, 1)", self.r)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("detector efficiency {} outside [0, 1]", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.eta_s) {
            return Err(invalid(format!("signal transmission {} outside [0, 1]", self.eta_s)));
        }
        if !self.theta.is_finite() || self.phi.is_some_and(|p| !p.is_finite()) {
            return Err(invalid("phases must be finite"));
        }
        if self.variant == Variant::BothArms && self.n.is_multiple_of(2) {
            return Err(invalid(format!("both_arms variant requires odd N, got {}", self.n)));
        }
        Ok(())
    }

    /// `λ = η r² / (1 - r²)`.
    pub fn lambda(&self) -> f64 {
        self.eta * self.r * self.r / (1.0 - self.r * self.r)
    }

    /// Number of spatial beams the trigger field is split into.
    pub fn beam_count(&self) -> usize {
        if self.n % 2 == 1 {
            self.n
        } else {
            self.n / 2
        }
    }
}

/// Solves `λ = η r²/(1 - r²)` for `r`.
pub fn r_from_lambda(lambda: f64, eta: f64) -> f64 {
    let x = lambda / eta;
    (x / (1.0 + x)).sqrt()
}

pub(crate) fn trigger_label(reflected: bool, k: usize) -> String {
    if reflected {
        format!("R{k}")
    } else {
        format!("T{k}")
    }
}

/// One trigger mode `g · (a₋ + sign · e^{iφ_k} b₊)`.
#[derive(Debug, Clone, Copy)]
struct TriggerMode {
    sign: f64,
    phase: f64,
}

fn trigger_modes(p: &ProtocolParams, include_reflected: bool) -> (Vec<TriggerMode>, Vec<String>) {
    let n = p.n as f64;
    let phase = |k: usize| 2.0 * PI * k as f64 / n + p.theta;
    let mut modes = Vec::new();
    let mut names = Vec::new();
    if p.n.is_multiple_of(2) {
        // even N: both ports of N/2 beams; port order T_1.., R_1.. equals k = 1..N
        let half = p.n / 2;
        for k in 1..=p.n {
            modes.push(TriggerMode {
                sign: -1.0,
                phase: phase(k),
            });
            names.push(if k <= half {
                trigger_label(false, k)
            } else {
                trigger_label(true, k - half)
            });
        }
    } else {
        for k in 1..=p.n {
            modes.push(TriggerMode {
                sign: -1.0,
                phase: phase(k),
            });
            names.push(trigger_label(false, k));
        }
        if include_reflected {
            for k in 1..=p.n {
                modes.push(TriggerMode {
                    sign: 1.0,
                    phase: phase(k),
                });
                names.push(trigger_label(true, k));
            }
        }
    }
    (modes, names)
}

/// Covariance over the transmitted triggers (all `N` ports for even `N`)
/// followed by `a₊`, `b₋`, built from the closed-form moments.
pub fn analytic_covariance(p: &ProtocolParams) -> Result<CovarianceMatrix> {
    p.validate()?;
    moment_covariance(p, false, false)
}

/// Covariance `V⁺` over transmitted triggers, reflected triggers, `a₊`, `b₋`.
pub fn reflected_covariance(p: &ProtocolParams) -> Result<CovarianceMatrix> {
    p.validate()?;
    if p.n.is_multiple_of(2) {
        return Err(invalid(format!(
            "reflected-mode covariance requires odd N, got {}",
            p.n
        )));
    }
    moment_covariance(p, true, false)
}

/// Moment construction; `flip_signal_phase` negates the `⟨c_k b₋⟩` moments and
/// exists only so the verification harness can prove it detects a sign slip.
pub(crate) fn moment_covariance(
    p: &ProtocolParams,
    include_reflected: bool,
    flip_signal_phase: bool,
) -> Result<CovarianceMatrix> {
    let (triggers, mut names) = trigger_modes(p, include_reflected);
    let nt = triggers.len();
    let dim = nt + 2;
    let (occ, pair) = tmsv_moments(p.r);
    let g = if p.n.is_multiple_of(2) {
        (p.eta / p.n as f64).sqrt()
    } else {
        (p.eta / (2 * p.n) as f64).sqrt()
    };
    let sig_amp = p.eta_s.sqrt();
    let flip = if flip_signal_phase { -1.0 } else { 1.0 };

    let mut a = DMatrix::<Complex64>::zeros(dim, dim);
    let mut b = DMatrix::<Complex64>::zeros(dim, dim);
    for (j, tj) in triggers.iter().enumerate() {
        for (k, tk) in triggers.iter().enumerate() {
            let rel = Complex64::from_polar(tj.sign * tk.sign, tk.phase - tj.phase);
            a[(j, k)] = (Complex64::from(1.0) + rel) * (g * g * occ);
        }
        let with_a = Complex64::from(g * pair * sig_amp);
        let with_b = Complex64::from_polar(flip * tj.sign * g * pair * sig_amp, tj.phase);
        b[(j, nt)] = with_a;
        b[(nt, j)] = with_a;
        b[(j, nt + 1)] = with_b;
        b[(nt + 1, j)] = with_b;
    }
    a[(nt, nt)] = Complex64::from(p.eta_s * occ);
    a[(nt + 1, nt + 1)] = Complex64::from(p.eta_s * occ);
    names.push(SIGNAL_A.into());
    names.push(SIGNAL_B.into());
    moments_to_covariance(&ModeMoments::new(a, b)?, names)
}

/// Passive element of the trigger network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    BeamSplitter { reflectivity: f64, modes: (usize, usize) },
    Phase { theta: f64, mode: usize },
    Pbs45 { modes: (usize, usize) },
}

impl Gate {
    pub fn symplectic(&self, n_modes: usize) -> Result<Symplectic> {
        match *self {
            Gate::BeamSplitter { reflectivity, modes } => beam_splitter(n_modes, reflectivity, modes),
            Gate::Phase { theta, mode } => phase_shifter(n_modes, theta, mode),
            Gate::Pbs45 { modes } => pbs45(n_modes, modes),
        }
    }
}

/// The linear-optics network acting on the two oscillator outputs.
///
/// Modes: `0 = a+`, `1 = b-`, then `(a-, b+)` for each beam. After the final
/// pbs45 of a beam its `a-` slot holds the transmitted trigger and its `b+`
/// slot the reflected one.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub n_modes: usize,
    pub gates: Vec<Gate>,
    pub transmitted: Vec<usize>,
    pub reflected: Vec<usize>,
}

impl Network {
    pub fn new(p: &ProtocolParams) -> Result<Self> {
        p.validate()?;
        let beams = p.beam_count();
        let am = |beam: usize| 2 + 2 * beam;
        let bp = |beam: usize| 3 + 2 * beam;
        let mut gates = vec![Gate::Phase {
            theta: p.theta,
            mode: bp(0),
        }];
        for j in 1..beams {
            let reflectivity = 1.0 / (beams - j + 1) as f64;
            for pol in [am, bp] {
                gates.push(Gate::BeamSplitter {
                    reflectivity,
                    modes: (pol(0), pol(j)),
                });
            }
        }
        for beam in 0..beams {
            let n_index = (beam + 1) as f64;
            gates.push(Gate::Phase {
                theta: PI + 2.0 * PI * n_index / p.n as f64,
                mode: bp(beam),
            });
            gates.push(Gate::Pbs45 {
                modes: (am(beam), bp(beam)),
            });
        }
        Ok(Self {
            n_modes: 2 + 2 * beams,
            gates,
            transmitted: (0..beams).map(am).collect(),
            reflected: (0..beams).map(bp).collect(),
        })
    }

    /// Trigger ports that are detected: transmitted ports, plus reflected ones
    /// for even `N` or with both arms open.
    pub fn observed(&self, p: &ProtocolParams) -> Vec<usize> {
        let mut out = self.transmitted.clone();
        if p.n.is_multiple_of(2) || p.variant == Variant::BothArms {
            out.extend(&self.reflected);
        }
        out
    }
}

/// Runs the optical network: split, phase, 45° PBS, detector loss, signal loss.
///
/// For odd `N` with [`Variant::BothArms`] the reflected triggers are included
/// after the transmitted ones (layout of [`reflected_covariance`]).
pub fn circuit_covariance(p: &ProtocolParams) -> Result<CovarianceMatrix> {
    let net = Network::new(p)?;
    let n_modes = net.n_modes;
    let (a_minus, b_plus) = (net.transmitted[0], net.reflected[0]);

    let (occ, pair) = tmsv_moments(p.r);
    let mut a = DMatrix::<Complex64>::zeros(n_modes, n_modes);
    let mut b = DMatrix::<Complex64>::zeros(n_modes, n_modes);
    for m in [0, 1, a_minus, b_plus] {
        a[(m, m)] = occ.into();
    }
    for (x, y) in [(0, a_minus), (b_plus, 1)] {
        b[(x, y)] = pair.into();
        b[(y, x)] = pair.into();
    }
    let mut names = vec![SIGNAL_A.to_string(), SIGNAL_B.to_string()];
    for beam in 0..net.transmitted.len() {
        names.push(format!("beam{}_a-", beam + 1));
        names.push(format!("beam{}_b+", beam + 1));
    }
    let mut v = moments_to_covariance(&ModeMoments::new(a, b)?, names)?;
    for gate in &net.gates {
        v = apply_symplectic(&v, &gate.symplectic(n_modes)?)?;
    }

    let keep = net.observed(p);
    let mut out_names: Vec<String> = (0..net.transmitted.len())
        .map(|k| trigger_label(false, k + 1))
        .collect();
    if keep.len() > net.transmitted.len() {
        out_names.extend((0..net.reflected.len()).map(|k| trigger_label(true, k + 1)));
    }
    for &m in &keep {
        v = apply_loss(&v, m, p.eta)?;
    }
    v = apply_loss(&v, 0, p.eta_s)?;
    v = apply_loss(&v, 1, p.eta_s)?;
    let mut keep = keep;
    keep.extend([0, 1]);
    out_names.extend([SIGNAL_A.to_string(), SIGNAL_B.to_string()]);
    v.partial_trace(&keep)?.relabel(out_names)
}

/// Index ranges of a protocol covariance: triggers that must click, triggers
/// that must stay dark, and the two signal modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeLayout {
    pub on: Vec<usize>,
    pub off: Vec<usize>,
    pub signals: [usize; 2],
}

/// Trigger/signal roles for a covariance produced with the given parameters.
pub fn layout_for(p: &ProtocolParams, v: &CovarianceMatrix) -> Result<ModeLayout> {
    let sa = v
        .mode_index(SIGNAL_A)
        .ok_or_else(|| invalid("missing signal mode a+"))?;
    let sb = v
        .mode_index(SIGNAL_B)
        .ok_or_else(|| invalid("missing signal mode b-"))?;
    let n_triggers = v.n_modes() - 2;
    let (on, off) = if p.n.is_multiple_of(2) || n_triggers == p.n {
        ((0..n_triggers).collect(), Vec::new())
    } else if n_triggers == 2 * p.n {
        ((0..p.n).collect(), (p.n..2 * p.n).collect())
    } else {
        return Err(invalid(format!("{n_triggers} trigger modes do not match N = {}", p.n)));
    };
    Ok(ModeLayout {
        on,
        off,
        signals: [sa, sb],
    })
}
