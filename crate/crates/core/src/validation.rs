//! Self-verification suites: closed forms, limits, the Fock-space oracle and
//! the continuous-wave trends, each reported as one [`Check`].
//!
//! A [`Fault`] can be injected to confirm that the suites notice a broken
//! convention.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use crate::conditioning::{
    closed_form_probability, closed_form_probability_plus, determinant_probability, heralded_traces, protocol_state,
    small_r_probability, ClickModel,
};
use crate::cw::{cw_fidelity, CwParams};
use crate::error::Result;
use crate::fock::{oracle_protocol_run, DetectorModel, OnOffPovm};
use crate::gaussian::{apply_symplectic, phase_shifter};
use crate::noon::{closed_form_f3, eta_zero_fidelity, normalized_fidelity, protocol_spec};
use crate::protocol::{r_from_lambda, ProtocolParams, Variant};

/// Deliberate convention errors for exercising the suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the `b₋` signal mode before heralding.
    FlipSignalSign,
}

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub time_limit: Option<Duration>,
}

impl Check {
    /// Passed and within the time limit, if any.
    pub fn ok(&self) -> bool {
        self.passed && self.time_limit.is_none_or(|t| self.elapsed <= t)
    }

    /// One-line report.
    pub fn line(&self) -> String {
        let limit = self
            .time_limit
            .map_or(String::new(), |t| format!(", limit {} s", t.as_secs()));
        format!(
            "[{}] {:>2}. {}: {} ({:.2} s{limit})",
            if self.ok() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Titles of the suites, indexed by id.
pub const SUITES: [(u8, &str); 9] = [
    (1, "closed-form probabilities"),
    (2, "F3 closed form at eta = 1"),
    (3, "weak-detector limit"),
    (4, "design point"),
    (5, "small-r law"),
    (6, "Fock-space oracle"),
    (7, "single-source comparisons"),
    (8, "both-arms ordering"),
    (9, "continuous-wave trends"),
];

/// The `r` grid shared by the closed-form suites: 20 points on `[0.02, 0.9]`.
pub fn r_grid() -> Vec<f64> {
    (0..20).map(|i| 0.02 + 0.88 * i as f64 / 19.0).collect()
}

/// Runs suite `id` (1 to 9).
pub fn run_suite(id: u8, fault: Fault) -> Check {
    let start = Instant::now();
    let (title, limit, outcome) = match id {
        1 => (SUITES[0].1, Some(10), table_one()),
        2 => (SUITES[1].1, Some(10), f3_closed_form(fault)),
        3 => (SUITES[2].1, None, weak_detector(fault)),
        4 => (SUITES[3].1, None, design_point(fault)),
        5 => (SUITES[4].1, None, small_r_law()),
        6 => (SUITES[5].1, Some(120), fock_oracle(fault)),
        7 => (SUITES[6].1, None, single_source(fault)),
        8 => (SUITES[7].1, None, both_arms(fault)),
        9 => (SUITES[8].1, Some(300), cw_trends()),
        _ => (
            "unknown suite",
            None,
            Err(crate::error::invalid(format!("no suite {id}"))),
        ),
    };
    let (passed, detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        id,
        title,
        passed,
        detail,
        elapsed: start.elapsed(),
        time_limit: limit.map(Duration::from_secs),
    }
}

/// Every suite in order.
pub fn verify(fault: Fault) -> Vec<Check> {
    (1..=SUITES.len() as u8).map(|id| run_suite(id, fault)).collect()
}

type Outcome = Result<(bool, String)>;

/// Heralding probability and fidelity of the pulsed pipeline, optionally
/// with a fault injected into the heralded state.
pub fn pipeline_point(p: &ProtocolParams, model: ClickModel, fault: Fault) -> Result<(f64, Result<f64>)> {
    let (mut v, layout) = protocol_state(p)?;
    if fault == Fault::FlipSignalSign {
        v = apply_symplectic(&v, &phase_shifter(v.n_modes(), PI, layout.signals[1])?)?;
    }
    let spec = protocol_spec(p)?;
    let traces = heralded_traces(&v, &layout.on, &layout.off, &layout.signals, &spec.operators(), model)?;
    let prob = match p.variant {
        Variant::TransmittedOnly => traces.probability,
        Variant::BothArms => 2.0 * traces.probability,
    };
    Ok((prob, normalized_fidelity(&traces, &spec)))
}

fn fidelity(p: &ProtocolParams, fault: Fault) -> Result<f64> {
    pipeline_point(p, ClickModel::OnOff, fault)?.1
}

fn table_one() -> Outcome {
    let mut worst: f64 = 0.0;
    for eta in [0.1, 0.25, 0.5, 1.0] {
        for r in r_grid() {
            for n in 1..=4 {
                let p = ProtocolParams::new(n, r, eta);
                let got = determinant_probability(&p)?;
                worst = worst.max((got - closed_form_probability(n, p.lambda()).unwrap_or(f64::NAN)).abs());
            }
            for n in [1, 3] {
                let p = ProtocolParams::new(n, r, eta).with_variant(Variant::BothArms);
                let got = determinant_probability(&p)?;
                worst = worst.max((got - closed_form_probability_plus(n, p.lambda()).unwrap_or(f64::NAN)).abs());
            }
        }
    }
    Ok((
        worst <= 1e-10,
        format!("max |P - closed form| = {worst:.2e} (tol 1e-10)"),
    ))
}

fn f3_closed_form(fault: Fault) -> Outcome {
    let mut worst: f64 = 0.0;
    for r in r_grid() {
        let f = fidelity(&ProtocolParams::new(3, r, 1.0), fault)?;
        worst = worst.max((f - closed_form_f3(r)).abs());
    }
    Ok((
        worst <= 1e-9,
        format!("max |F3 - closed form| = {worst:.2e} (tol 1e-9)"),
    ))
}

fn weak_detector(fault: Fault) -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        for k in 1..=10 {
            let r = 0.05 * k as f64;
            let f = fidelity(&ProtocolParams::new(n, r, 1e-6), fault)?;
            worst = worst.max((f - eta_zero_fidelity(n, r)).abs());
        }
    }
    Ok((
        worst <= 1e-4,
        format!("max |F - (1-r^2)^(N+2)| = {worst:.2e} at eta = 1e-6 (tol 1e-4)"),
    ))
}

fn design_point(fault: Fault) -> Outcome {
    let p = ProtocolParams::new(3, 0.14, 0.25);
    let (prob, f) = pipeline_point(&p, ClickModel::OnOff, fault)?;
    let f = f?;
    let minutes = 1.0 / (prob * 1e6) / 60.0;
    // r = 0.14 meets the F ≥ 0.9 requirement at both efficiencies; the rate
    // gain compares the two at that squeezing
    let (prob_ideal, f_ideal) = pipeline_point(&ProtocolParams::new(3, 0.14, 1.0), ClickModel::OnOff, fault)?;
    let f_ideal = f_ideal?;
    let ratio = prob_ideal / prob;
    // for reference: the squeezing at η = 1 that matches F exactly (F falls with r)
    let (mut lo, mut hi) = (0.01, 0.6);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if fidelity(&ProtocolParams::new(3, mid, 1.0), fault)? > f {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r_equal = 0.5 * (lo + hi);
    let matched = pipeline_point(&ProtocolParams::new(3, r_equal, 1.0), ClickModel::OnOff, fault)?.0 / prob;
    let passed = f >= 0.9 && f_ideal >= 0.9 && (5e-9..=5e-8).contains(&prob) && (40.0..=80.0).contains(&ratio);
    Ok((
        passed,
        format!(
            "F3 = {f:.4}, P3 = {prob:.3e} (one state per {minutes:.1} min at 1e6 pulses/s); \
             eta = 1 at r = 0.14 (F3 = {f_ideal:.4}) gives {ratio:.1}x the rate (range 40-80); \
             exact F match at r = {r_equal:.4} would give {matched:.0}x"
        ),
    ))
}

fn small_r_law() -> Outcome {
    let mut devs = Vec::new();
    for (lambda, tol) in [(0.01, 0.02), (0.001, 0.002)] {
        let mut worst: f64 = 0.0;
        for eta in [0.25, 1.0] {
            let p = ProtocolParams::new(3, r_from_lambda(lambda, eta), eta);
            let (v, layout) = protocol_state(&p)?;
            let prob =
                heralded_traces(&v, &layout.on, &layout.off, &layout.signals, &[], ClickModel::OnOff)?.probability;
            worst = worst.max((prob / small_r_probability(&p) - 1.0).abs());
        }
        devs.push((lambda, worst, tol));
    }
    let passed = devs.iter().all(|&(_, d, tol)| d <= tol);
    let detail = devs
        .iter()
        .map(|(l, d, tol)| format!("lambda = {l}: {:.3}% (tol {}%)", 100.0 * d, 100.0 * tol))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((passed, format!("|P3 / (lambda^3/18) - 1|: {detail}")))
}

fn fock_oracle(fault: Fault) -> Outcome {
    let (mut dp, mut df): (f64, f64) = (0.0, 0.0);
    for n in [1, 3] {
        for variant in [Variant::TransmittedOnly, Variant::BothArms] {
            for r in [0.1, 0.2, 0.3] {
                for eta in [0.25, 1.0] {
                    let p = ProtocolParams::new(n, r, eta).with_variant(variant);
                    let (prob, f) = pipeline_point(&p, ClickModel::OnOff, fault)?;
                    let oracle = oracle_protocol_run(&p, None, DetectorModel::OnOff(OnOffPovm::new(eta)?))?;
                    dp = dp.max((prob - oracle.probability).abs());
                    df = df.max((f? - oracle.fidelity).abs());
                }
            }
        }
    }
    Ok((
        dp <= 1e-6 && df <= 1e-6,
        format!("max |dP| = {dp:.2e}, max |dF| = {df:.2e} over 24 configurations (tol 1e-6)"),
    ))
}

fn single_source(fault: Fault) -> Outcome {
    // (a) N = 1 against one heralded single photon at equal fidelity
    let eta = 1e-6;
    let mut worst_ratio: f64 = 0.0;
    for r in [0.05, 0.02, 0.01] {
        let p = ProtocolParams::new(1, r, eta).with_variant(Variant::BothArms);
        let (prob_plus, f1) = pipeline_point(&p, ClickModel::OnOff, fault)?;
        // F_{1,s} = (1 - r_s²)² fixes r_s
        let rs2 = 1.0 - f1?.sqrt();
        let lambda_s = eta * rs2 / (1.0 - rs2);
        let ratio = prob_plus / (lambda_s / (lambda_s + 1.0));
        worst_ratio = worst_ratio.max((ratio * 0.75 - 1.0).abs());
    }
    // (b) N = 2 equals two single-source photons on a 50:50 splitter
    let (mut dp, mut df): (f64, f64) = (0.0, 0.0);
    for r in [0.05, 0.1, 0.2, 0.3, 0.5] {
        let p = ProtocolParams::new(2, r, 0.5);
        let ps = p.lambda() / (p.lambda() + 1.0);
        dp = dp.max((pipeline_point(&p, ClickModel::OnOff, fault)?.0 - ps * ps).abs());
        let f2 = pipeline_point(&p, ClickModel::Annihilation, fault)?.1?;
        df = df.max((f2 - (1.0 - r * r).powi(4)).abs());
    }
    Ok((
        worst_ratio <= 0.01 && dp <= 1e-10 && df <= 1e-10,
        format!(
            "P1+/P1s vs 4/3: {:.3}% (tol 1%); |P2 - P1s^2| = {dp:.2e}, |F2 - (1-r^2)^4| = {df:.2e} (tol 1e-10)",
            100.0 * worst_ratio
        ),
    ))
}

fn both_arms(fault: Fault) -> Outcome {
    let mut order_ok = true;
    for eta in [0.25, 1.0] {
        for k in 1..=6 {
            let r = 0.05 * k as f64;
            let p = ProtocolParams::new(3, r, eta);
            let (prob, f) = pipeline_point(&p, ClickModel::OnOff, fault)?;
            let (prob_plus, f_plus) = pipeline_point(&p.with_variant(Variant::BothArms), ClickModel::OnOff, fault)?;
            order_ok &= f_plus? >= f? && prob_plus >= prob;
        }
    }
    let mut weak: f64 = 0.0;
    for k in 1..=6 {
        let p = ProtocolParams::new(3, 0.05 * k as f64, 1e-6);
        let f = fidelity(&p, fault)?;
        let f_plus = fidelity(&p.with_variant(Variant::BothArms), fault)?;
        weak = weak.max((f - f_plus).abs());
    }
    let mut tail = Vec::new();
    // past the maximum near λ ≈ 2.1 (r ≈ 0.82 at η = 1)
    for r in [0.85, 0.9, 0.95, 0.99] {
        tail.push(
            pipeline_point(
                &ProtocolParams::new(3, r, 1.0).with_variant(Variant::BothArms),
                ClickModel::OnOff,
                fault,
            )?
            .0,
        );
    }
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    Ok((
        order_ok && weak <= 1e-4 && decreasing,
        format!(
            "F3+ >= F3 and P3+ >= P3 for r <= 0.3: {order_ok}; |F3 - F3+| at eta = 1e-6: {weak:.2e} (tol 1e-4); \
             P3+ decreasing toward r = 1: {decreasing}"
        ),
    ))
}

fn cw_trends() -> Outcome {
    let gains = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let by_gain = gains
        .iter()
        .map(|&e| cw_fidelity(&CwParams::new(e, [0.0; 3])))
        .collect::<Result<Vec<_>>>()?;
    let by_sep = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&d| cw_fidelity(&CwParams::symmetric(0.01, d)))
        .collect::<Result<Vec<_>>>()?;
    let mut window_shift: f64 = 0.0;
    for (eps, sep) in [(1e-3, 0.0), (0.01, 0.0), (0.01, 1.0), (0.1, 0.5)] {
        let mut p = CwParams::symmetric(eps, sep);
        let wide = cw_fidelity(&p)?;
        p.window /= 2.0;
        window_shift = window_shift.max((wide - cw_fidelity(&p)?).abs());
    }
    let falls_with_gain = by_gain.windows(2).all(|w| w[1] < w[0]);
    let falls_with_sep = by_sep.windows(2).all(|w| w[1] < w[0]);
    Ok((
        falls_with_gain && falls_with_sep && by_gain[0] > 0.95 && window_shift <= 1e-4,
        format!(
            "F(eps) = {:?} decreasing: {falls_with_gain}; F(sep) = {:?} decreasing: {falls_with_sep}; \
             window halving shift {window_shift:.1e} (tol 1e-4)",
            by_gain.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
            by_sep.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_is_detected() {
        assert!(run_suite(2, Fault::None).passed);
        let broken = run_suite(2, Fault::FlipSignalSign);
        assert!(!broken.passed, "{}", broken.line());
        assert!(run_suite(3, Fault::FlipSignalSign).line().starts_with("[FAIL]"));
    }

    #[test]
    fn unknown_suite() {
        assert!(!run_suite(42, Fault::None).ok());
    }
}
