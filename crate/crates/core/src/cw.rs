//! Continuous-wave operation of the two oscillators.
//!
//! Time is measured in units of `1/γ`. Three trigger photons are registered
//! at times `t_c1, t_c2, t_c3` in short top-hat windows; the signal modes are
//! superpositions of two-sided exponentials centred on those times. Every
//! mode overlap of the stationary output correlations is done in closed form
//! (the trigger windows by Gauss-Legendre quadrature on smooth pieces), the
//! five-mode Gaussian is assembled from its moments, and the trigger events
//! are treated with the annihilation-operator detector model.

use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::conditioning::{gauss_legendre, heralded_traces, ClickModel, HeraldedTraces};
use crate::error::{invalid, Error, Result};
use crate::fock::{gaussian_to_fock, SignalDensity};
use crate::gaussian::{labels, moments_to_excess, CovarianceMatrix};
use crate::noon::{normalized_fidelity, optimal_phase, NoonSpec, Outcome};

/// Largest trigger half-width: the windows stand in for instantaneous
/// detection and must be short against `1/γ`.
pub const MAX_WINDOW: f64 = 1e-3;

/// Smallest nonzero gain accepted. Below it the kernel convolutions lose
/// digits to the near-coincidence of the signal and correlation decay rates.
pub const MIN_GAIN: f64 = 1e-6;

/// Decay rate of the signal kernels, `γ/2`.
const SIGNAL_RATE: f64 = 0.5;

/// Photon number heralded by the three triggers.
const CW_N: usize = 3;

/// Mode labels of the covariance returned by [`cw_covariance`].
pub const CW_LABELS: [&str; 5] = ["c1", "c2", "c3", "a+", "b-"];

#[derive(Debug, Clone, PartialEq)]
pub struct CwParams {
    /// Nonlinear gain `ε/γ`, below threshold at `1/2`.
    pub eps_over_gamma: f64,
    /// Trigger detection times `γ t_ck`.
    pub detection_times: [f64; 3],
    /// Trigger window half-width `γ Δt`.
    pub window: f64,
    /// Relative phase between the two oscillators.
    pub theta: f64,
    /// NOON phase; `None` selects the optimum `3θ + π`.
    pub phi: Option<f64>,
}

impl CwParams {
    pub fn new(eps_over_gamma: f64, detection_times: [f64; 3]) -> Self {
        Self {
            eps_over_gamma,
            detection_times,
            window: MAX_WINDOW,
            theta: 0.0,
            phi: None,
        }
    }

    /// Equally spaced detections spanning `γ(t_c3 − t_c1) = separation`.
    pub fn symmetric(eps_over_gamma: f64, separation: f64) -> Self {
        Self::new(eps_over_gamma, [0.0, 0.5 * separation, separation])
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.eps_over_gamma;
        if !eps.is_finite() || eps < 0.0 {
            return Err(invalid(format!(
                "gain eps/gamma = {eps} must be finite and non-negative"
            )));
        }
        if eps >= 0.5 {
            return Err(Error::AboveThreshold(eps));
        }
        if eps > 0.0 && eps < MIN_GAIN {
            return Err(invalid(format!(
                "gain eps/gamma = {eps:e} below supported minimum {MIN_GAIN:e}"
            )));
        }
        if !(self.window > 0.0 && self.window <= MAX_WINDOW) {
            return Err(invalid(format!(
                "trigger half-width {} outside (0, {MAX_WINDOW}]",
                self.window
            )));
        }
        if self.detection_times.iter().any(|t| !t.is_finite()) || !self.theta.is_finite() {
            return Err(invalid("detection times and theta must be finite"));
        }
        if self.phi.is_some_and(|p| !p.is_finite()) {
            return Err(invalid("phase must be finite"));
        }
        let t = &self.detection_times;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let gap = (t[i] - t[j]).abs();
            if gap != 0.0 && gap < 2.0 * self.window * (1.0 - 1e-12) {
                return Err(invalid(format!(
                    "trigger windows {} and {} partially overlap",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Decay rates `(μ, ν) = (γ/2 − ε, γ/2 + ε)`.
    fn rates(&self) -> (f64, f64) {
        (0.5 - self.eps_over_gamma, 0.5 + self.eps_over_gamma)
    }

    /// Trigger `k` detects `a₋ − e^{iφ_k} b₊` with `φ_k = 2πk/3 + θ`.
    fn trigger_phase(&self, k: usize) -> f64 {
        2.0 * PI * (k + 1) as f64 / 3.0 + self.theta
    }

    pub fn trigger_modes(&self) -> [TemporalMode; 3] {
        self.detection_times.map(|t| TemporalMode::Window {
            center: t,
            half_width: self.window,
        })
    }

    pub fn noon_spec(&self) -> Result<NoonSpec> {
        NoonSpec::new(
            CW_N,
            self.phi
                .unwrap_or_else(|| optimal_phase(CW_N, self.theta, Outcome::Transmitted)),
        )
    }
}

/// Stationary output correlations `(n(τ), m(τ))` of one oscillator:
/// `n(τ) = ⟨a†(t)a(t+τ)⟩` and `m(τ) = ⟨a₊(t)a₋(t+τ)⟩`.
pub fn opo_correlations(p: &CwParams, tau: f64) -> Result<(f64, f64)> {
    p.validate()?;
    let (mu, nu) = p.rates();
    let s = tau.abs();
    let (x, y) = ((-mu * s).exp() / mu, (-nu * s).exp() / nu);
    let pre = 0.25 * p.eps_over_gamma;
    Ok((pre * (x - y), pre * (x + y)))
}

/// A real temporal mode function.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalMode {
    /// `1/√(2Δt)` on `[center − Δt, center + Δt]`.
    Window { center: f64, half_width: f64 },
    /// `Σ_k c_k √(γ/2) e^{−γ|t − t_k|/2}`, coefficients normalized.
    Exponential { times: [f64; 3], coefficients: [f64; 3] },
}

impl TemporalMode {
    pub fn window(center: f64, half_width: f64) -> Result<Self> {
        if !center.is_finite() || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid("window needs a finite centre and positive half-width"));
        }
        Ok(Self::Window { center, half_width })
    }

    /// Exponential-kernel mode, rescaled to unit norm through the kernel Gram
    /// matrix `G_ij = (1 + γ|t_i − t_j|/2) e^{−γ|t_i − t_j|/2}`.
    pub fn signal(times: [f64; 3], coefficients: [f64; 3]) -> Result<Self> {
        if times.iter().chain(&coefficients).any(|x| !x.is_finite()) {
            return Err(invalid("signal mode needs finite times and coefficients"));
        }
        Ok(Self::Exponential {
            times,
            coefficients: normalized_coefficients(&times, &coefficients)?,
        })
    }

    /// Equal weights on the three kernels.
    pub fn uniform_signal(times: [f64; 3]) -> Result<Self> {
        Self::signal(times, [1.0; 3])
    }

    pub fn norm_sqr(&self) -> f64 {
        match self {
            Self::Window { .. } => 1.0,
            Self::Exponential { times, coefficients } => gram_norm_sqr(times, coefficients),
        }
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        match *self {
            Self::Window { center, half_width } => {
                if (t - center).abs() <= half_width {
                    (2.0 * half_width).sqrt().recip()
                } else {
                    0.0
                }
            }
            Self::Exponential { times, coefficients } => times
                .iter()
                .zip(&coefficients)
                .map(|(tk, c)| c * SIGNAL_RATE.sqrt() * (-SIGNAL_RATE * (t - tk).abs()).exp())
                .sum(),
        }
    }
}

fn normalized_coefficients(times: &[f64; 3], c: &[f64; 3]) -> Result<[f64; 3]> {
    let norm = gram_norm_sqr(times, c);
    let scale = c.iter().map(|x| x * x).sum::<f64>();
    if !(norm > 1e-14 * scale) {
        return Err(invalid("signal mode coefficients combine to zero"));
    }
    let s = norm.sqrt();
    Ok(c.map(|x| x / s))
}

fn gram_norm_sqr(times: &[f64; 3], c: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = SIGNAL_RATE * (times[i] - times[j]).abs();
            s += c[i] * c[j] * (1.0 + d) * (-d).exp();
        }
    }
    s
}

/// `e^{−x} − 1 + x` for `x ≥ 0`, accurate near zero.
fn expm1_plus(x: f64) -> f64 {
    if x < 1e-3 {
        x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
    } else {
        (-x).exp_m1() + x
    }
}

/// `(e^{−δs} − 1)/δ`, continuous at `δ = 0`.
fn expm1_ratio(delta: f64, s: f64) -> f64 {
    if delta == 0.0 {
        -s
    } else {
        (-delta * s).exp_m1() / delta
    }
}

/// `∫ e^{−β|u|} e^{−κ|s−u|} du = (2β e^{−κ|s|} − 2κ e^{−β|s|}) / (β² − κ²)`,
/// written so that it stays accurate as `β → κ`.
fn conv2(beta: f64, kappa: f64, s: f64) -> f64 {
    let s = s.abs();
    2.0 * (-kappa * s).exp() * (1.0 - kappa * expm1_ratio(beta - kappa, s)) / (beta + kappa)
}

/// `∬ e^{−β|t−t_i|} e^{−β|t'−t_j|} e^{−κ|t−t'|} dt dt'` at `D = t_i − t_j`.
fn conv3(beta: f64, kappa: f64, d: f64) -> f64 {
    let d = d.abs();
    let self_conv = (1.0 + beta * d) * (-beta * d).exp() / beta;
    (2.0 * beta * conv2(beta, kappa, d) - 2.0 * kappa * self_conv) / ((beta - kappa) * (beta + kappa))
}

/// `∫_{lo}^{hi} g(t) dt` by Gauss-Legendre, split where `g` has a kink.
fn integrate_piecewise(lo: f64, hi: f64, kink: f64, g: impl Fn(f64) -> f64, nodes: &[(f64, f64)]) -> f64 {
    let piece = |a: f64, b: f64| nodes.iter().map(|&(x, w)| w * g(a + (b - a) * x)).sum::<f64>() * (b - a);
    if kink > lo && kink < hi {
        piece(lo, kink) + piece(kink, hi)
    } else {
        piece(lo, hi)
    }
}

/// `∬ f(t) g(t') e^{−κ|t−t'|} dt dt'`.
fn kernel_overlap(f: &TemporalMode, g: &TemporalMode, kappa: f64, nodes: &[(f64, f64)]) -> f64 {
    use TemporalMode::*;
    match (f, g) {
        (
            Window {
                center: c1,
                half_width: h1,
            },
            Window {
                center: c2,
                half_width: h2,
            },
        ) => {
            let (a1, a2, b1, b2) = (c1 - h1, c1 + h1, c2 - h2, c2 + h2);
            let gap = (b1 - a2).max(a1 - b2);
            let box_integral = if gap >= 0.0 {
                // disjoint windows: the kernel factorizes
                (-kappa * gap).exp() * (-kappa * 2.0 * h1).exp_m1() * (-kappa * 2.0 * h2).exp_m1() / (kappa * kappa)
            } else {
                // Φ'' = e^{−κ|s|} with Φ(0) = Φ'(0) = 0
                let phi = |s: f64| expm1_plus(kappa * s.abs()) / (kappa * kappa);
                phi(a2 - b1) + phi(a1 - b2) - phi(a2 - b2) - phi(a1 - b1)
            };
            box_integral / (2.0 * (h1 * h2).sqrt())
        }
        (Window { center, half_width }, Exponential { times, coefficients })
        | (Exponential { times, coefficients }, Window { center, half_width }) => {
            let (lo, hi) = (center - half_width, center + half_width);
            let amp = SIGNAL_RATE.sqrt() / (2.0 * half_width).sqrt();
            times
                .iter()
                .zip(coefficients)
                .map(|(&tk, &ck)| {
                    ck * amp * integrate_piecewise(lo, hi, tk, |t| conv2(SIGNAL_RATE, kappa, t - tk), nodes)
                })
                .sum()
        }
        (
            Exponential {
                times: t1,
                coefficients: k1,
            },
            Exponential {
                times: t2,
                coefficients: k2,
            },
        ) => {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += k1[i] * k2[j] * conv3(SIGNAL_RATE, kappa, t1[i] - t2[j]);
                }
            }
            SIGNAL_RATE * s
        }
    }
}

/// Number-type and pair-type mode overlaps `(∬ f n g, ∬ f m g)`.
fn correlation_overlaps(p: &CwParams, f: &TemporalMode, g: &TemporalMode, nodes: &[(f64, f64)]) -> (f64, f64) {
    let (mu, nu) = p.rates();
    let x = kernel_overlap(f, g, mu, nodes) / mu;
    let y = kernel_overlap(f, g, nu, nodes) / nu;
    let pre = 0.25 * p.eps_over_gamma;
    (pre * (x - y), pre * (x + y))
}

/// Five-mode covariance over the three trigger modes and the signal modes
/// `(a₊, b₋)`, labelled by [`CW_LABELS`].
pub fn cw_covariance(p: &CwParams, signals: (&TemporalMode, &TemporalMode)) -> Result<CovarianceMatrix> {
    p.validate()?;
    for s in [signals.0, signals.1] {
        if (s.norm_sqr() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("signal mode norm {} is not 1", s.norm_sqr())));
        }
    }
    if p.eps_over_gamma == 0.0 {
        return Ok(CovarianceMatrix::vacuum(labels(&CW_LABELS)));
    }
    let nodes = gauss_legendre(12);
    let triggers = p.trigger_modes();
    let zero = Complex64::new(0.0, 0.0);
    let mut a = DMatrix::from_element(5, 5, zero);
    let mut b = DMatrix::from_element(5, 5, zero);
    let g = 1.0 / 6f64.sqrt();
    for k in 0..3 {
        for l in 0..3 {
            let (n_kl, _) = correlation_overlaps(p, &triggers[k], &triggers[l], &nodes);
            let interference =
                Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, p.trigger_phase(l) - p.trigger_phase(k));
            a[(k, l)] = interference * (g * g * n_kl);
        }
        let (_, m_a) = correlation_overlaps(p, &triggers[k], signals.0, &nodes);
        let (_, m_b) = correlation_overlaps(p, &triggers[k], signals.1, &nodes);
        b[(k, 3)] = Complex64::new(g * m_a, 0.0);
        b[(k, 4)] = -Complex64::from_polar(g * m_b, p.trigger_phase(k));
        b[(3, k)] = b[(k, 3)];
        b[(4, k)] = b[(k, 4)];
    }
    a[(3, 3)] = Complex64::new(correlation_overlaps(p, signals.0, signals.0, &nodes).0, 0.0);
    a[(4, 4)] = Complex64::new(correlation_overlaps(p, signals.1, signals.1, &nodes).0, 0.0);
    let v = CovarianceMatrix::from_excess(moments_to_excess(&a, &b), labels(&CW_LABELS))?;
    v.check_physical()?;
    Ok(v)
}

/// Heralded traces of `ops` on `(a₊, b₋)` after annihilation events in all
/// three trigger modes.
pub fn cw_traces(p: &CwParams, signal: &TemporalMode, ops: &[Vec<(usize, usize)>]) -> Result<HeraldedTraces> {
    let v = cw_covariance(p, (signal, signal))?;
    heralded_traces(&v, &[0, 1, 2], &[], &[3, 4], ops, ClickModel::Annihilation)
}

/// NOON fidelity with equal kernel weights in the signal mode.
pub fn cw_fidelity(p: &CwParams) -> Result<f64> {
    cw_fidelity_with(p, &TemporalMode::uniform_signal(p.detection_times)?)
}

pub fn cw_fidelity_with(p: &CwParams, signal: &TemporalMode) -> Result<f64> {
    let spec = p.noon_spec()?;
    normalized_fidelity(&cw_traces(p, signal, &spec.operators())?, &spec)
}

/// The same fidelity through an explicit truncated Fock density matrix:
/// `ĉ₁ĉ₂ĉ₃ ρ ĉ₃†ĉ₂†ĉ₁†`, triggers traced, then `⟨NOON|ρ_s|NOON⟩`. The
/// truncation error grows with the total photon number beyond the six that
/// the heralded NOON component needs, so `cutoff` of 7 or 8 is typical.
pub fn cw_fidelity_fock(p: &CwParams, signal: &TemporalMode, cutoff: usize) -> Result<f64> {
    let spec = p.noon_spec()?;
    let v = cw_covariance(p, (signal, signal))?;
    let rho = gaussian_to_fock(&v, cutoff)?;
    let n = spec.n;
    let d = n + 1;
    let mut sig = SignalDensity::zeros(n);
    let mut probability = 0.0;
    for (i, occ) in rho.basis.iter().enumerate() {
        if occ[..3].contains(&0) {
            continue;
        }
        let weight = occ[..3].iter().map(|&k| k as f64).product::<f64>();
        probability += weight * rho.rho[(i, i)].re;
        let (na, nb) = (occ[3], occ[4]);
        if na > n || nb > n {
            continue;
        }
        let mut other = occ.clone();
        for ma in 0..=n {
            for mb in 0..=n {
                other[3] = ma;
                other[4] = mb;
                if let Some(j) = rho.index_of(&other) {
                    sig.rho[(na * d + nb, ma * d + mb)] += rho.rho[(i, j)] * weight;
                }
            }
        }
    }
    if !(probability > 0.0) {
        return Err(Error::ZeroProbability);
    }
    Ok(sig.noon_fidelity(&spec) / probability)
}

struct ModeSearch<'a> {
    params: &'a CwParams,
    spec: NoonSpec,
}

/// Unit coefficient vector from two angles on the sphere.
fn sphere_point(x: &[f64]) -> [f64; 3] {
    let (a, b) = (x[0], x[1]);
    [a.cos() * b.cos(), a.cos() * b.sin(), a.sin()]
}

impl CostFunction for ModeSearch<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let f = TemporalMode::signal(self.params.detection_times, sphere_point(x))
            .and_then(|mode| cw_traces(self.params, &mode, &self.spec.operators()))
            .and_then(|t| normalized_fidelity(&t, &self.spec));
        // an unusable direction scores below every physical fidelity
        Ok(f.map_or(1.0, |f| -f))
    }
}

/// Signal-mode coefficients `(c₁, c₂, c₃)` maximizing the heralded fidelity,
/// normalized so that the mode has unit norm and `Σ c_k > 0`.
///
/// The search runs over the coefficient sphere by Nelder-Mead, starting from
/// the uniform weights; the starting vertex is kept if nothing beats it. The
/// fidelity is very flat in the coefficients (a shift of 1e-3 moves it by
/// ~1e-8), so the simplex runs to its iteration cap instead of stopping on
/// the spread of its fidelity values.
pub fn optimize_mode_coefficients(p: &CwParams) -> Result<[f64; 3]> {
    p.validate()?;
    let t = p.detection_times;
    if t[0] == t[1] && t[1] == t[2] {
        // all kernels coincide; every admissible vector gives the same mode
        return normalized_coefficients(&t, &[1.0; 3]);
    }
    let problem = ModeSearch {
        params: p,
        spec: p.noon_spec()?,
    };
    let start = vec![(1.0 / 3f64.sqrt()).asin(), PI / 4.0];
    let simplex = vec![
        start.clone(),
        vec![start[0] + 0.3, start[1]],
        vec![start[0], start[1] + 0.3],
    ];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(0.0)
        .map_err(|e| Error::NumericDegeneracy(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(600))
        .run()
        .map_err(|e| Error::NumericDegeneracy(e.to_string()))?;
    let best = res.state().best_param.clone().unwrap_or(start);
    let mut c = normalized_coefficients(&t, &sphere_point(&best))?;
    if c.iter().sum::<f64>() < 0.0 {
        c = c.map(|x| -x);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson rule on `[a, b]` with `n` (even) panels.
    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n)
            .map(|k| if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h))
            .sum();
        (f(a) + f(b) + inner) * h / 3.0
    }

    /// `∫ g` over the real line, split at the given kinks and cut off at ±60,
    /// with Simpson steps of 1/64 and 1/128 combined by one Richardson step.
    fn line_integral(kinks: &[f64], g: impl Fn(f64) -> f64) -> f64 {
        let mut pts = vec![-60.0];
        let mut k = kinks.to_vec();
        k.sort_by(f64::total_cmp);
        pts.extend(k);
        pts.push(60.0);
        pts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let n = 2 * (32.0 * (w[1] - w[0])).ceil() as usize;
                let (coarse, fine) = (simpson(w[0], w[1], n, &g), simpson(w[0], w[1], 2 * n, &g));
                fine + (fine - coarse) / 15.0
            })
            .sum()
    }

    #[test]
    fn correlations() {
        for eps in [1e-3, 0.01, 0.1, 0.3, 0.49] {
            let p = CwParams::new(eps, [0.0; 3]);
            let (n0, m0) = opo_correlations(&p, 0.0).unwrap();
            assert!(0.0 < n0 && n0 < m0, "eps {eps}");
            let (n, m) = opo_correlations(&p, 100.0 / (0.5 - eps)).unwrap();
            assert!(n.abs() < 1e-30 && m < 1e-30);
            // n(0) = ε²/(2μν) and m(0) = ε/(4μν) with γ = 1
            let (mu, nu) = (0.5 - eps, 0.5 + eps);
            assert!((n0 - eps * eps / (2.0 * mu * nu)).abs() < 1e-13 * n0);
            assert!((m0 - eps / (4.0 * mu * nu)).abs() < 1e-13 * m0);
        }
        let (n, m) = opo_correlations(&CwParams::new(0.0, [0.0; 3]), 0.3).unwrap();
        assert_eq!((n, m), (0.0, 0.0));
        assert_eq!(
            opo_correlations(&CwParams::new(0.5, [0.0; 3]), 0.0),
            Err(Error::AboveThreshold(0.5))
        );
    }

    #[test]
    fn parameter_validation() {
        let mut p = CwParams::new(0.01, [0.0, 1.5e-3, 1.0]);
        assert!(p.validate().is_err());
        p.detection_times = [0.0, 2e-3, 2e-3];
        assert!(p.validate().is_ok());
        p.window = 2e-3;
        assert!(p.validate().is_err());
        assert!(CwParams::new(1e-8, [0.0; 3]).validate().is_err());
        assert!(CwParams::new(-0.1, [0.0; 3]).validate().is_err());
    }

    #[test]
    fn two_exponential_convolutions() {
        for (beta, kappa) in [(0.5, 0.49), (0.5, 0.6), (0.5, 0.01), (0.5, 0.5)] {
            for s in [0.0, 0.3, -1.7, 6.0] {
                let num = line_integral(&[0.0, s], |u| (-beta * u.abs()).exp() * (-kappa * (s - u).abs()).exp());
                assert!(
                    (conv2(beta, kappa, s) - num).abs() < 1e-10 * num,
                    "β={beta} κ={kappa} s={s}: {} vs {num}",
                    conv2(beta, kappa, s)
                );
            }
        }
        for (beta, kappa) in [(0.5, 0.499), (0.5, 0.55), (0.5, 0.2)] {
            for d in [0.0, 0.8, -2.5] {
                let num = line_integral(&[0.0, d], |t| (-beta * (t - d).abs()).exp() * conv2(beta, kappa, t));
                assert!(
                    (conv3(beta, kappa, d) - num).abs() < 1e-9 * num,
                    "β={beta} κ={kappa} d={d}"
                );
            }
        }
    }

    #[test]
    fn window_overlaps() {
        let nodes = gauss_legendre(12);
        let h = 1e-3;
        let w = 2.0 * h;
        for kappa in [0.3, 0.5, 0.7] {
            // coincident windows: (1/w)∬_{[0,w]²} e^{−κ|t−t'|} = w − κw²/3 + κ²w³/12 − ...
            let f = TemporalMode::window(1.0, h).unwrap();
            let series = w - kappa * w * w / 3.0 + kappa * kappa * w.powi(3) / 12.0 - kappa.powi(3) * w.powi(4) / 60.0;
            assert!((kernel_overlap(&f, &f, kappa, &nodes) - series).abs() < 1e-15);
            // disjoint windows factorize
            let g = TemporalMode::window(1.7, h).unwrap();
            let direct = (-kappa * (0.7 - w)).exp() * ((1.0 - (-kappa * w).exp()) / kappa).powi(2) / w;
            let got = kernel_overlap(&f, &g, kappa, &nodes);
            assert!((got - direct).abs() < 1e-12 * direct, "{got} vs {direct}");
            assert!((kernel_overlap(&g, &f, kappa, &nodes) - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn window_signal_overlap() {
        let nodes = gauss_legendre(12);
        let sig = TemporalMode::signal([0.0, 0.4, 1.5], [0.7, -0.2, 0.5]).unwrap();
        for center in [0.0, 0.4, 0.9, 3.0] {
            let win = TemporalMode::window(center, 1e-3).unwrap();
            let kappa = 0.47;
            let inner = |t: f64| {
                let kinks = [0.0, 0.4, 1.5, t];
                line_integral(&kinks, |u| sig.evaluate(u) * (-kappa * (t - u).abs()).exp())
            };
            let num = simpson(center - 1e-3, center + 1e-3, 8, inner) / (2e-3f64).sqrt();
            let got = kernel_overlap(&win, &sig, kappa, &nodes);
            assert!((got - num).abs() < 1e-9 * num.abs(), "centre {center}: {got} vs {num}");
        }
    }

    #[test]
    fn signal_modes() {
        let times = [0.0, 0.5, 2.0];
        let m = TemporalMode::signal(times, [1.0, -0.3, 2.0]).unwrap();
        let numeric = line_integral(&times, |t| m.evaluate(t).powi(2));
        assert!((numeric - 1.0).abs() < 1e-9);
        assert!((m.norm_sqr() - 1.0).abs() < 1e-12);
        // coincident detections collapse to one normalized exponential
        let c = TemporalMode::uniform_signal([0.7; 3]).unwrap();
        for t in [-1.0, 0.7, 3.0] {
            let single = 0.5f64.sqrt() * (-0.5 * (t - 0.7f64).abs()).exp();
            assert!((c.evaluate(t) - single).abs() < 1e-15);
        }
        assert!(TemporalMode::signal([0.3; 3], [1.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn covariance_is_physical() {
        for eps in [0.001, 0.01, 0.1] {
            for sep in [0.0, 1.0] {
                let p = CwParams::symmetric(eps, sep);
                let s = TemporalMode::uniform_signal(p.detection_times).unwrap();
                let v = cw_covariance(&p, (&s, &s)).unwrap();
                assert!(v.uncertainty_min_eigenvalue() > -1e-10);
                assert_eq!(v.labels(), CW_LABELS.map(String::from).as_slice());
            }
        }
        let p = CwParams::new(0.0, [0.0; 3]);
        let s = TemporalMode::uniform_signal([0.0; 3]).unwrap();
        let v = cw_covariance(&p, (&s, &s)).unwrap();
        assert!((v.matrix() - DMatrix::identity(10, 10)).abs().max() == 0.0);
    }

    #[test]
    fn signal_moments_match_spectral_integrals() {
        // Parseval with f̂(ω) = √β·2β/(β² + ω²) and the kernel spectrum 2κ/(κ² + ω²):
        // ∬ f f e^{−κ|t−t'|} = 2(2β + κ)/(β + κ)² for a single normalized exponential
        let spectral = |kappa: f64| 2.0 * (1.0 + kappa) / (0.5 + kappa).powi(2);
        for eps in [1e-3, 0.05, 0.3] {
            let p = CwParams::new(eps, [0.0; 3]);
            let s = TemporalMode::uniform_signal([0.0; 3]).unwrap();
            let v = cw_covariance(&p, (&s, &s)).unwrap();
            let (mu, nu) = (0.5 - eps, 0.5 + eps);
            let occupation = 0.25 * eps * (spectral(mu) / mu - spectral(nu) / nu);
            // V[x,x] − 1 = 2⟨a†a⟩ when ⟨aa⟩ = 0; n(τ) is a difference of two
            // kernels that agree to O(ε), which costs a few digits at small gain
            let ex = v.excess();
            assert!((ex[(6, 6)] - 2.0 * occupation).abs() < 1e-9 * occupation, "eps {eps}");
            assert!((ex[(8, 8)] - 2.0 * occupation).abs() < 1e-9 * occupation);
        }
    }

    #[test]
    fn fidelity_trends() {
        let gains = [1e-3, 3e-3, 1e-2, 3e-2, 0.1];
        let fs: Vec<f64> = gains
            .iter()
            .map(|&e| cw_fidelity(&CwParams::new(e, [0.0; 3])).unwrap())
            .collect();
        assert!(fs[0] > 0.95, "{fs:?}");
        assert!(fs.windows(2).all(|w| w[1] < w[0]), "{fs:?}");
        let fs: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&d| cw_fidelity(&CwParams::symmetric(0.01, d)).unwrap())
            .collect();
        assert!(fs.windows(2).all(|w| w[1] < w[0]), "{fs:?}");
    }

    #[test]
    fn window_convergence() {
        for (eps, sep) in [(0.01, 0.0), (0.01, 1.0), (0.1, 0.5)] {
            let mut p = CwParams::symmetric(eps, sep);
            let wide = cw_fidelity(&p).unwrap();
            p.window = 5e-4;
            let narrow = cw_fidelity(&p).unwrap();
            assert!((wide - narrow).abs() < 1e-4, "{wide} vs {narrow}");
        }
    }

    #[test]
    fn optimal_phase_is_optimal() {
        let mut p = CwParams::symmetric(0.02, 0.5);
        p.theta = 0.4;
        let best = cw_fidelity(&p).unwrap();
        for k in 0..12 {
            p.phi = Some(k as f64 * PI / 6.0);
            assert!(cw_fidelity(&p).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn fock_route_agrees() {
        for (eps, sep) in [(0.01, 0.0), (0.02, 0.8)] {
            let p = CwParams::symmetric(eps, sep);
            let s = TemporalMode::uniform_signal(p.detection_times).unwrap();
            let exact = cw_fidelity_with(&p, &s).unwrap();
            // the truncated density matrix converges onto the exact engine
            let coarse = cw_fidelity_fock(&p, &s, 7).unwrap();
            let fine = cw_fidelity_fock(&p, &s, 8).unwrap();
            assert!((exact - fine).abs() < 1e-5, "{exact} vs {fine}");
            assert!(
                (exact - fine).abs() < 0.05 * (exact - coarse).abs(),
                "{exact}: {coarse} -> {fine}"
            );
        }
    }

    #[test]
    fn optimized_modes() {
        let p = CwParams::symmetric(0.01, 1.0);
        let c = optimize_mode_coefficients(&p).unwrap();
        assert!((c[0] - c[2]).abs() < 1e-6, "{c:?}");
        for (eps, times) in [
            (0.01, [0.0, 0.5, 1.0]),
            (0.05, [0.0, 0.3, 1.5]),
            (0.01, [0.0, 0.0, 2.0]),
        ] {
            let p = CwParams::new(eps, times);
            let c = optimize_mode_coefficients(&p).unwrap();
            let opt = cw_fidelity_with(&p, &TemporalMode::signal(times, c).unwrap()).unwrap();
            assert!(opt >= cw_fidelity(&p).unwrap());
        }
        let c = optimize_mode_coefficients(&CwParams::new(0.01, [0.2; 3])).unwrap();
        assert!(c.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }
}
