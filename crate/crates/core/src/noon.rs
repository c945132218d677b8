//! NOON-state fidelity of heralded signal states.
//!
//! `|NOON⟩ = (|N,0⟩ + e^{iφ}|0,N⟩)/√2`, so the fidelity of a two-mode state `ρ`
//! needs only `⟨N0|ρ|N0⟩`, `⟨0N|ρ|0N⟩` and the coherence `⟨N0|ρ|0N⟩`. All three
//! are Fock-basis traces against Gaussian terms, evaluated exactly by the
//! moment engine in [`crate::wick`].

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::conditioning::{protocol_traces, ClickModel, ConditionalMixture, HeraldedTraces};
use crate::error::{invalid, Error, Result};
use crate::gaussian::CovarianceMatrix;
use crate::protocol::{ProtocolParams, Variant};
use crate::wick::FockTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoonSpec {
    pub n: usize,
    pub phi: f64,
}

impl NoonSpec {
    pub fn new(n: usize, phi: f64) -> Result<Self> {
        if n == 0 || n > 15 {
            return Err(Error::UnsupportedN(n));
        }
        if !phi.is_finite() {
            return Err(invalid("phase must be finite"));
        }
        Ok(Self { n, phi })
    }

    /// Signal operators whose traces give `⟨N0|ρ|N0⟩`, `⟨0N|ρ|0N⟩` and
    /// `⟨N0|ρ|0N⟩` (`Tr ρ|n⟩⟨m| = ⟨m|ρ|n⟩`).
    pub fn operators(&self) -> Vec<Vec<(usize, usize)>> {
        let n = self.n;
        vec![vec![(n, n), (0, 0)], vec![(0, 0), (n, n)], vec![(0, n), (n, 0)]]
    }

    /// `⟨NOON|ρ|NOON⟩` from the three traces in [`NoonSpec::operators`] order.
    pub fn combine(&self, traces: &[Complex64]) -> f64 {
        let coherence = Complex64::from_polar(1.0, self.phi) * traces[2];
        0.5 * (traces[0].re + traces[1].re) + coherence.re
    }
}

/// `∫ W_NOON W_U d⁴y` for a zero-mean two-mode Gaussian `U`; equal to
/// `⟨NOON|ρ_U|NOON⟩ / 4π²`.
pub fn noon_wigner_overlap(u: &CovarianceMatrix, spec: &NoonSpec) -> Result<f64> {
    if u.n_modes() != 2 {
        return Err(invalid("NOON overlap needs a two-mode state"));
    }
    let mut tr = FockTrace::new(u, &[0, 1], &[])?;
    let traces = spec
        .operators()
        .iter()
        .map(|op| tr.trace(op, &[]))
        .collect::<Result<Vec<_>>>()?;
    Ok(spec.combine(&traces) / (4.0 * PI * PI))
}

/// `(4π²/P) Σ_d w_d ∫ W_NOON W_{U_d}`.
///
/// This is the literal mixture sum. It inherits the cancellation of the
/// alternating weights, so protocol-level code goes through
/// [`protocol_fidelity`] instead.
pub fn noon_fidelity(mix: &ConditionalMixture, spec: &NoonSpec) -> Result<f64> {
    if !(mix.total > 0.0) {
        return Err(Error::ZeroProbability);
    }
    let mut acc = 0.0;
    for c in &mix.components {
        acc += c.weight * noon_wigner_overlap(&c.covariance, spec)?;
    }
    Ok(4.0 * PI * PI * acc / mix.total)
}

/// Which trigger arm fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Transmitted,
    Reflected,
}

/// `Nθ + π` for clicks in the transmitted arm, shifted by `Nπ` for the
/// reflected arm; reduced to `[0, 2π)`.
pub fn optimal_phase(n: usize, theta: f64, outcome: Outcome) -> f64 {
    let shift = match outcome {
        Outcome::Transmitted => 0.0,
        Outcome::Reflected => n as f64 * PI,
    };
    let phi = (n as f64 * theta + PI + shift).rem_euclid(TAU);
    // rem_euclid can return TAU itself after rounding
    if phi >= TAU {
        0.0
    } else {
        phi
    }
}

/// Fidelity for `N = 3` with unit-efficiency triggers.
pub fn closed_form_f3(r: f64) -> f64 {
    let s = r * r;
    (1.0 - s).powi(2) * (2.0 - s).powi(2) * (3.0 - 2.0 * s) * (6.0 - 5.0 * s) / (18.0 * (4.0 - 3.0 * s))
}

/// Fidelity in the weak-detector limit, `(1 - r²)^{N+2}`.
pub fn eta_zero_fidelity(n: usize, r: f64) -> f64 {
    (1.0 - r * r).powi(n as i32 + 2)
}

/// Both-arms fidelity from the full covariance `V⁺` (layout
/// `T1..TN, R1..RN, a+, b-`): reflected triggers projected on vacuum,
/// transmitted triggers clicking, normalized by that branch's probability.
pub fn fidelity_plus(v_plus: &CovarianceMatrix, spec: &NoonSpec) -> Result<f64> {
    let n = spec.n;
    if n.is_multiple_of(2) {
        return Err(invalid("both-arms acceptance needs odd N"));
    }
    if v_plus.n_modes() != 2 * n + 2 {
        return Err(invalid(format!(
            "expected {} modes, got {}",
            2 * n + 2,
            v_plus.n_modes()
        )));
    }
    let on: Vec<usize> = (0..n).collect();
    let off: Vec<usize> = (n..2 * n).collect();
    let traces = crate::conditioning::heralded_traces(
        v_plus,
        &on,
        &off,
        &[2 * n, 2 * n + 1],
        &spec.operators(),
        ClickModel::OnOff,
    )?;
    normalized_fidelity(&traces, spec)
}

pub(crate) fn normalized_fidelity(traces: &HeraldedTraces, spec: &NoonSpec) -> Result<f64> {
    if !(traces.probability > 0.0) {
        return Err(Error::ZeroProbability);
    }
    Ok(spec.combine(&traces.values) / traces.probability)
}

/// NOON spec of the configured protocol: `φ` as given, else optimal for the
/// transmitted outcome.
pub fn protocol_spec(p: &ProtocolParams) -> Result<NoonSpec> {
    NoonSpec::new(
        p.n,
        p.phi
            .unwrap_or_else(|| optimal_phase(p.n, p.theta, Outcome::Transmitted)),
    )
}

/// Heralded NOON fidelity of the configured protocol (`F_N`, or `F_N⁺` with
/// both arms open).
pub fn protocol_fidelity(p: &ProtocolParams) -> Result<f64> {
    protocol_fidelity_with(p, ClickModel::OnOff)
}

pub fn protocol_fidelity_with(p: &ProtocolParams, model: ClickModel) -> Result<f64> {
    let spec = protocol_spec(p)?;
    if p.variant == Variant::BothArms && p.n.is_multiple_of(2) {
        return Err(invalid("both-arms acceptance needs odd N"));
    }
    let traces = protocol_traces(p, &spec.operators(), model)?;
    normalized_fidelity(&traces, &spec)
}

/// Heralding probability and fidelity together, sharing one evaluation.
pub fn protocol_point(p: &ProtocolParams) -> Result<(f64, Result<f64>)> {
    let spec = protocol_spec(p)?;
    let traces = protocol_traces(p, &spec.operators(), ClickModel::OnOff)?;
    let prob = match p.variant {
        Variant::TransmittedOnly => traces.probability,
        Variant::BothArms => 2.0 * traces.probability,
    };
    Ok((prob, normalized_fidelity(&traces, &spec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::conditional_mixture;
    use crate::gaussian::labels;
    use crate::protocol::analytic_covariance;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn thermal_pair(nbar: f64) -> CovarianceMatrix {
        CovarianceMatrix::new(DMatrix::identity(4, 4) * (1.0 + 2.0 * nbar), labels(&["a", "b"])).unwrap()
    }

    #[test]
    fn vacuum_is_orthogonal() {
        let vac = CovarianceMatrix::vacuum(labels(&["a", "b"]));
        for n in 1..=4 {
            assert!(
                noon_wigner_overlap(&vac, &NoonSpec::new(n, 0.3).unwrap())
                    .unwrap()
                    .abs()
                    < 1e-16
            );
        }
    }

    #[test]
    fn thermal_pair_n1() {
        // p0 p1 with p_k = n̄^k/(1+n̄)^{k+1}: (2/3)(2/9) = 4/27, coherence zero
        let spec = NoonSpec::new(1, 0.0).unwrap();
        let f = 4.0 * PI * PI * noon_wigner_overlap(&thermal_pair(0.5), &spec).unwrap();
        assert!((f - 4.0 / 27.0).abs() < 1e-14);
    }

    #[test]
    fn closed_forms() {
        assert!((closed_form_f3(0.0) - 1.0).abs() < 1e-15);
        assert!(closed_form_f3(0.999_999) < 1e-10);
        assert!((eta_zero_fidelity(3, 0.14) - 0.9058).abs() < 5e-5);
        assert_eq!(eta_zero_fidelity(5, 0.0), 1.0);
    }

    #[test]
    fn phases() {
        assert!((optimal_phase(3, 0.0, Outcome::Transmitted) - PI).abs() < 1e-15);
        assert!(optimal_phase(3, 0.0, Outcome::Reflected).abs() < 1e-15);
        assert!(optimal_phase(3, PI / 3.0, Outcome::Transmitted).abs() < 1e-12);
        let phi = optimal_phase(4, 2.0, Outcome::Reflected);
        assert!((0.0..TAU).contains(&phi));
    }

    #[test]
    fn mixture_route_matches_pipeline() {
        let p = ProtocolParams::new(3, 0.5, 1.0);
        let v = analytic_covariance(&p).unwrap();
        let mix = conditional_mixture(&v, &[0, 1, 2], &[3, 4]).unwrap();
        let spec = protocol_spec(&p).unwrap();
        let f_mix = noon_fidelity(&mix, &spec).unwrap();
        assert!((f_mix - closed_form_f3(0.5)).abs() < 1e-9);
        assert!((protocol_fidelity(&p).unwrap() - f_mix).abs() < 1e-10);
    }

    #[test]
    fn unit_efficiency_closed_form() {
        for k in 1..=20 {
            let r = 0.02 + (0.9 - 0.02) * (k - 1) as f64 / 19.0;
            let f = protocol_fidelity(&ProtocolParams::new(3, r, 1.0)).unwrap();
            assert!(
                (f - closed_form_f3(r)).abs() < 1e-9,
                "r={r}: {f} vs {}",
                closed_form_f3(r)
            );
        }
    }

    #[test]
    fn weak_detector_limit() {
        for n in 1..=3 {
            for &r in &[0.05, 0.2, 0.5] {
                let f = protocol_fidelity(&ProtocolParams::new(n, r, 1e-6)).unwrap();
                assert!((f - eta_zero_fidelity(n, r)).abs() < 1e-4, "N={n} r={r}: {f}");
                let exact = protocol_fidelity_with(&ProtocolParams::new(n, r, 0.3), ClickModel::Annihilation).unwrap();
                assert!((exact - eta_zero_fidelity(n, r)).abs() < 1e-10, "N={n} r={r}: {exact}");
            }
        }
    }

    #[test]
    fn zero_probability_is_an_error() {
        assert_eq!(
            protocol_fidelity(&ProtocolParams::new(3, 0.0, 1.0)),
            Err(Error::ZeroProbability)
        );
        assert_eq!(
            protocol_fidelity(&ProtocolParams::new(3, 0.3, 0.0)),
            Err(Error::ZeroProbability)
        );
        let plus = ProtocolParams::new(3, 0.0, 0.5).with_variant(Variant::BothArms);
        assert_eq!(protocol_fidelity(&plus), Err(Error::ZeroProbability));
    }

    #[test]
    fn both_arms_beats_transmitted_at_small_r() {
        let p = ProtocolParams::new(3, 0.1, 0.5);
        let f = protocol_fidelity(&p).unwrap();
        let fp = protocol_fidelity(&p.with_variant(Variant::BothArms)).unwrap();
        assert!(fp >= f, "{fp} < {f}");
        let weak = ProtocolParams::new(3, 0.3, 1e-6);
        let d = protocol_fidelity(&weak).unwrap() - protocol_fidelity(&weak.with_variant(Variant::BothArms)).unwrap();
        assert!(d.abs() < 1e-4);
    }

    #[test]
    fn reflected_branch_has_shifted_phase() {
        // mirror outcome (reflected click, transmitted dark) at its own optimal phase
        let p = ProtocolParams::new(3, 0.3, 0.7).with_variant(Variant::BothArms);
        let (v, _) = crate::conditioning::protocol_state(&p).unwrap();
        let spec_t = NoonSpec::new(3, optimal_phase(3, 0.0, Outcome::Transmitted)).unwrap();
        let spec_r = NoonSpec::new(3, optimal_phase(3, 0.0, Outcome::Reflected)).unwrap();
        let run = |on: Vec<usize>, off: Vec<usize>, spec: &NoonSpec| {
            let t = crate::conditioning::heralded_traces(&v, &on, &off, &[6, 7], &spec.operators(), ClickModel::OnOff)
                .unwrap();
            (t.probability, spec.combine(&t.values) / t.probability)
        };
        let (pt, ft) = run(vec![0, 1, 2], vec![3, 4, 5], &spec_t);
        let (pr, fr) = run(vec![3, 4, 5], vec![0, 1, 2], &spec_r);
        assert!((pt - pr).abs() < 1e-14 && (ft - fr).abs() < 1e-10);
        assert!((fidelity_plus(&v, &spec_t).unwrap() - ft).abs() < 1e-12);
    }

    #[test]
    fn photodetector_bound_on_grid() {
        for n in 1..=3 {
            for &r in &[0.1, 0.3, 0.6] {
                for &eta in &[0.1, 0.5, 1.0] {
                    let f = protocol_fidelity(&ProtocolParams::new(n, r, eta)).unwrap();
                    assert!(f >= eta_zero_fidelity(n, r) - 1e-9 && f <= 1.0 + 1e-9);
                }
            }
        }
    }

    const LATTICE: f64 = 0.01;
    const LATTICE_HALF_WIDTH: usize = 1600;

    /// `ψ_0..ψ_3` on the lattice `k·0.01`, `|k| ≤ 1600`, by the three-term
    /// recurrence.
    fn hermite_table() -> Vec<[f64; 4]> {
        (0..=2 * LATTICE_HALF_WIDTH)
            .map(|k| {
                let x = (k as f64 - LATTICE_HALF_WIDTH as f64) * LATTICE;
                let mut psi = [0.0; 4];
                psi[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
                psi[1] = 2f64.sqrt() * x * psi[0];
                for j in 1..3 {
                    let jf = j as f64;
                    psi[j + 1] = (2.0 / (jf + 1.0)).sqrt() * x * psi[j] - (jf / (jf + 1.0)).sqrt() * psi[j - 1];
                }
                psi
            })
            .collect()
    }

    const GRID_POINTS: usize = 81;
    // grid spacing 0.15 = 15 lattice steps, grid origin -6 = -600 steps
    const GRID_STEP: usize = 15;

    /// `W_{|n⟩⟨m|}(x, p) = (1/π) ∫ ψ_n(x + y) ψ_m(x - y) e^{-2ipy} dy` on the
    /// 81×81 grid over `[-6, 6]²`, trapezoid rule in `y` (spectrally accurate
    /// for these decaying integrands).
    fn wigner_table(psi: &[[f64; 4]], n: usize, m: usize) -> Vec<Complex64> {
        let origin = LATTICE_HALF_WIDTH as i64 - 600;
        let y_steps = 2 * 500i64;
        let mut out = Vec::with_capacity(GRID_POINTS * GRID_POINTS);
        for i in 0..GRID_POINTS {
            let xk = origin + (GRID_STEP * i) as i64;
            let prod: Vec<(f64, f64)> = (-y_steps..=y_steps)
                .step_by(2)
                .map(|yk| {
                    let y = yk as f64 * LATTICE;
                    (y, psi[(xk + yk) as usize][n] * psi[(xk - yk) as usize][m])
                })
                .collect();
            for j in 0..GRID_POINTS {
                let p = -6.0 + 0.15 * j as f64;
                let acc: Complex64 = prod.iter().map(|&(y, a)| Complex64::from_polar(a, -2.0 * p * y)).sum();
                out.push(acc * 2.0 * LATTICE / PI);
            }
        }
        out
    }

    /// Dense tensor-grid evaluation of `∫ W_NOON W_U` over `[-6, 6]⁴`.
    fn quadrature_overlap(u: &CovarianceMatrix, spec: &NoonSpec) -> f64 {
        let psi = hermite_table();
        let n = spec.n;
        let (wnn, w00, wn0, w0n) = (
            wigner_table(&psi, n, n),
            wigner_table(&psi, 0, 0),
            wigner_table(&psi, n, 0),
            wigner_table(&psi, 0, n),
        );
        // W_U is Gaussian with covariance V/2
        let half = u.matrix() * 0.5;
        let inv = half.clone().try_inverse().unwrap();
        let norm = 1.0 / (4.0 * PI * PI * half.determinant().sqrt());
        let pts = GRID_POINTS;
        let coord = |i: usize| [-6.0 + 0.15 * (i / pts) as f64, -6.0 + 0.15 * (i % pts) as f64];
        let quad = |a: [f64; 2], b: [f64; 2], r: usize, c: usize| {
            a[0] * (inv[(r, c)] * b[0] + inv[(r, c + 1)] * b[1])
                + a[1] * (inv[(r + 1, c)] * b[0] + inv[(r + 1, c + 1)] * b[1])
        };
        let phase = Complex64::from_polar(1.0, spec.phi);
        // diagonal kernels are real
        let (dnn, d00): (Vec<f64>, Vec<f64>) = (wnn.iter().map(|w| w.re).collect(), w00.iter().map(|w| w.re).collect());
        let qb: Vec<f64> = (0..pts * pts).map(|j| quad(coord(j), coord(j), 2, 2)).collect();
        let mut total = 0.0;
        for i in 0..pts * pts {
            let a = coord(i);
            let qa = quad(a, a, 0, 0);
            // |NOON⟩⟨NOON| = ½(|N0⟩⟨N0| + |0N⟩⟨0N| + e^{-iφ}|N0⟩⟨0N| + e^{iφ}|0N⟩⟨N0|)
            let c1 = phase.conj() * wn0[i];
            let c2 = phase * w0n[i];
            for j in 0..pts * pts {
                let b = coord(j);
                let q = qa + 2.0 * quad(a, b, 0, 2) + qb[j];
                let w = dnn[i] * d00[j] + d00[i] * dnn[j] + c1.re * w0n[j].re - c1.im * w0n[j].im + c2.re * wn0[j].re
                    - c2.im * wn0[j].im;
                total += 0.5 * w * (-0.5 * q).exp();
            }
        }
        total * norm * 0.15f64.powi(4)
    }

    #[test]
    fn overlap_matches_quadrature_thermal() {
        let spec = NoonSpec::new(1, 0.0).unwrap();
        let u = thermal_pair(0.5);
        let exact = noon_wigner_overlap(&u, &spec).unwrap();
        let quad = quadrature_overlap(&u, &spec);
        assert!((quad / exact - 1.0).abs() < 1e-6, "{quad} vs {exact}");
    }

    #[test]
    fn overlap_matches_quadrature_heralded() {
        // heralded terms of the protocol are correlated, non-diagonal states
        for (n, r, eta) in [(1, 0.4, 0.8), (2, 0.3, 0.5), (3, 0.35, 1.0)] {
            let p = ProtocolParams::new(n, r, eta);
            let v = analytic_covariance(&p).unwrap();
            let triggers: Vec<usize> = (0..n).collect();
            let mix = conditional_mixture(&v, &triggers, &[n, n + 1]).unwrap();
            let spec = NoonSpec::new(n, 0.7).unwrap();
            // the all-projected term carries the strongest correlations
            {
                let c = mix.components.last().unwrap();
                let exact = noon_wigner_overlap(&c.covariance, &spec).unwrap();
                let quad = quadrature_overlap(&c.covariance, &spec);
                assert!(
                    (quad - exact).abs() <= 1e-5 * exact.abs().max(1e-4),
                    "N={n}: {quad} vs {exact}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn optimal_phase_maximizes(r in 0.05f64..0.7, eta in 0.05f64..1.0, theta in 0.0f64..TAU) {
            let p = ProtocolParams::new(3, r, eta).with_theta(theta);
            // φ enters only through the final combination
            let traces = protocol_traces(&p, &NoonSpec::new(3, 0.0).unwrap().operators(), ClickModel::OnOff).unwrap();
            let fid = |phi: f64| NoonSpec::new(3, phi).unwrap().combine(&traces.values) / traces.probability;
            let best = fid(optimal_phase(3, theta, Outcome::Transmitted));
            for k in 0..64 {
                prop_assert!(fid(TAU * k as f64 / 64.0) <= best + 1e-12);
            }
        }

        #[test]
        fn phase_periodic(r in 0.05f64..0.7, phi in 0.0f64..TAU) {
            let v = analytic_covariance(&ProtocolParams::new(2, r, 0.6)).unwrap();
            let u = v.partial_trace(&[2, 3]).unwrap();
            let a = noon_wigner_overlap(&u, &NoonSpec::new(2, phi).unwrap()).unwrap();
            let b = noon_wigner_overlap(&u, &NoonSpec::new(2, phi + TAU).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
        }
    }
}
