//! Subcommands and their CSV output.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use noon_core::conditioning::{
    closed_form_probability, closed_form_probability_plus, determinant_probability, protocol_probability,
};
use noon_core::cw::{optimize_mode_coefficients, CwParams, TemporalMode, MAX_WINDOW};
use noon_core::noon::{protocol_point, protocol_spec};
use noon_core::protocol::{r_from_lambda, ProtocolParams, Variant};
use noon_core::validation::{run_suite, Fault, SUITES};
use noon_core::Error;

use crate::format::{sig12, Grid};

#[derive(Debug, Parser)]
#[command(
    name = "noon",
    version,
    about = "Heralded NOON-state generation: sweeps, Table I and self-checks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep a pulsed-protocol quantity over r or eta.
    ///
    /// Reproduces Fig. 2 (fidelity versus squeezing r, `--quantity F` or
    /// `F_plus`) and Fig. 3 (heralding probability versus r, `--quantity P`
    /// or `P_plus`). Exactly one of --r and --eta must be a grid
    /// `start:stop:count`.
    Sweep {
        #[arg(long, value_enum)]
        quantity: Quantity,
        #[command(flatten)]
        pulsed: PulsedArgs,
        #[command(flatten)]
        phase: PhaseArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate one quantity at a single parameter point.
    ///
    /// Pulsed quantities need --r; F_cw needs --eps-over-gamma. The row
    /// repeats every parameter, including the phase actually used.
    Point {
        #[arg(long, value_enum)]
        quantity: Quantity,
        #[command(flatten)]
        pulsed: PulsedArgs,
        #[command(flatten)]
        cw: CwArgs,
        #[command(flatten)]
        phase: PhaseArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Heralding probabilities of Table I from the determinant sums.
    ///
    /// Reproduces Table I: P1..P4 and the both-arms P1_plus, P3_plus at unit
    /// detector efficiency, next to the closed forms and the absolute
    /// differences.
    Table1 {
        /// Values of lambda = eta r^2 / (1 - r^2), single or start:stop:count.
        #[arg(long, default_value = "0:4:9", allow_hyphen_values = true)]
        lambda: Grid,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sweep the continuous-wave fidelity over eps/gamma or trigger separation.
    ///
    /// Reproduces Fig. 4 (F versus eps/gamma, `--eps-over-gamma` as a grid)
    /// and Fig. 5 (F versus the separation gamma (t_c3 - t_c1) of equally
    /// spaced trigger detections, `--t-sep` as a grid). The curves share the
    /// trends of the figures; their absolute values depend on the signal
    /// mode functions.
    CwSweep {
        #[arg(long, value_enum, default_value = "F_cw")]
        quantity: Quantity,
        #[command(flatten)]
        cw: CwArgs,
        #[command(flatten)]
        phase: PhaseArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the closed-form, oracle and trend suites; exit 1 if any fails.
    Verify {
        /// Run only these suites (comma-separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Flip the sign of one signal mode before heralding.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Quantity {
    #[value(name = "P")]
    P,
    #[value(name = "P_plus")]
    PPlus,
    #[value(name = "F")]
    F,
    #[value(name = "F_plus")]
    FPlus,
    #[value(name = "F_cw")]
    FCw,
}

impl Quantity {
    fn name(self) -> &'static str {
        match self {
            Quantity::P => "P",
            Quantity::PPlus => "P_plus",
            Quantity::F => "F",
            Quantity::FPlus => "F_plus",
            Quantity::FCw => "F_cw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    TransmittedOnly,
    BothArms,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Pulsed protocol")]
struct PulsedArgs {
    /// Target photon number.
    #[arg(long = "N", default_value_t = 3)]
    n: usize,
    /// Squeezing parameter, value or start:stop:count.
    #[arg(long, allow_hyphen_values = true)]
    r: Option<Grid>,
    /// Trigger detector efficiency, value or start:stop:count.
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    eta: Grid,
    /// Fractional loss on both signal modes.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    signal_loss: f64,
    /// Accepted trigger outcomes; P_plus and F_plus imply both_arms.
    #[arg(long, value_enum, default_value = "transmitted_only")]
    variant: VariantArg,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Continuous-wave protocol")]
struct CwArgs {
    /// Gain eps/gamma, value or start:stop:count (below 1/2).
    #[arg(long, allow_hyphen_values = true)]
    eps_over_gamma: Option<Grid>,
    /// Trigger detection times gamma t_ck, as t1,t2,t3 [default: 0,0,0].
    #[arg(long, value_parser = parse_times, conflicts_with = "t_sep", allow_hyphen_values = true)]
    t_times: Option<[f64; 3]>,
    /// Equal spacing: detections at 0, s/2, s; value or start:stop:count.
    #[arg(long, allow_hyphen_values = true)]
    t_sep: Option<Grid>,
    /// Trigger window half-width gamma dt.
    #[arg(long, default_value_t = MAX_WINDOW)]
    window: f64,
    /// Optimize the signal mode coefficients at every point.
    #[arg(long)]
    optimize_modes: bool,
}

#[derive(Debug, Args)]
struct PhaseArgs {
    /// Relative phase of the two sources.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta: f64,
    /// NOON relative phase [default: optimal for the accepted outcome].
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output file [default: standard output].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_times(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three times, got {}", v.len()))
}

pub enum CliError {
    Usage(String),
    Verification,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Sweep {
            quantity,
            pulsed,
            phase,
            out,
        } => emit(&out, &sweep(quantity, &pulsed, &phase)?),
        Command::Point {
            quantity,
            pulsed,
            cw,
            phase,
            out,
        } => emit(&out, &point(quantity, &pulsed, &cw, &phase)?),
        Command::Table1 { lambda, out } => emit(&out, &table1(&lambda)?),
        Command::CwSweep {
            quantity,
            cw,
            phase,
            out,
        } => emit(&out, &cw_sweep(quantity, &cw, &phase)?),
        Command::Verify { only, inject_fault } => verify(&only, inject_fault),
    }
}

fn emit(out: &OutArgs, csv: &str) -> CliResult<()> {
    match &out.out {
        Some(path) => std::fs::write(path, csv).or_else(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// A computed value and its status column.
struct Cell {
    value: Option<f64>,
    zero_probability: bool,
}

impl Cell {
    fn csv(&self) -> String {
        let value = self.value.map_or(String::new(), sig12);
        let status = if self.zero_probability {
            "zero-probability"
        } else {
            "ok"
        };
        format!("{value},{status}")
    }
}

fn fidelity_cell(f: noon_core::Result<f64>) -> CliResult<Cell> {
    match f {
        Ok(f) => Ok(Cell {
            value: Some(f),
            zero_probability: false,
        }),
        Err(Error::ZeroProbability) => Ok(Cell {
            value: None,
            zero_probability: true,
        }),
        Err(e) => Err(e.into()),
    }
}

fn pulsed_params(q: Quantity, a: &PulsedArgs, phase: &PhaseArgs, r: f64, eta: f64) -> CliResult<ProtocolParams> {
    let variant = match (q, a.variant) {
        (Quantity::PPlus | Quantity::FPlus, _) | (_, VariantArg::BothArms) => Variant::BothArms,
        _ => Variant::TransmittedOnly,
    };
    if !(0.0..=1.0).contains(&a.signal_loss) {
        return usage(format!("signal loss {} outside [0, 1]", a.signal_loss));
    }
    let mut p = ProtocolParams::new(a.n, r, eta)
        .with_theta(phase.theta)
        .with_signal_transmission(1.0 - a.signal_loss)
        .with_variant(variant);
    if let Some(phi) = phase.phi {
        p = p.with_phi(phi);
    }
    p.validate()?;
    Ok(p)
}

fn pulsed_cell(q: Quantity, p: &ProtocolParams) -> CliResult<Cell> {
    match q {
        Quantity::P | Quantity::PPlus => {
            let prob = protocol_probability(p)?;
            Ok(Cell {
                value: Some(prob),
                zero_probability: prob == 0.0,
            })
        }
        Quantity::F | Quantity::FPlus => fidelity_cell(protocol_point(p)?.1),
        Quantity::FCw => unreachable!("continuous-wave quantity in the pulsed path"),
    }
}

/// Evaluates `f` over `points` in parallel, keeping grid order.
fn evaluate<P: Sync, F>(points: &[P], f: F) -> CliResult<Vec<Cell>>
where
    F: Fn(&P) -> CliResult<Cell> + Sync + Send,
{
    points.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

fn sweep(q: Quantity, a: &PulsedArgs, phase: &PhaseArgs) -> CliResult<String> {
    if q == Quantity::FCw {
        return usage("F_cw is swept with cw-sweep");
    }
    let Some(r) = &a.r else {
        return usage("sweep needs --r");
    };
    let (axis, values) = match (r.is_axis(), a.eta.is_axis()) {
        (true, false) => ("r", r.values()),
        (false, true) => ("eta", a.eta.values()),
        (true, true) => return usage("only one of --r and --eta may be a grid"),
        (false, false) => return usage("sweep needs a grid start:stop:count on --r or --eta"),
    };
    let params = values
        .iter()
        .map(|&x| match axis {
            "r" => pulsed_params(q, a, phase, x, a.eta.scalar()),
            _ => pulsed_params(q, a, phase, r.scalar(), x),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cells = evaluate(&params, |p| pulsed_cell(q, p))?;
    let mut csv = format!("{axis},{},status\n", q.name());
    for (x, cell) in values.iter().zip(&cells) {
        writeln!(csv, "{},{}", sig12(*x), cell.csv()).expect("writing to a String");
    }
    Ok(csv)
}

fn point(q: Quantity, a: &PulsedArgs, cw: &CwArgs, phase: &PhaseArgs) -> CliResult<String> {
    if q == Quantity::FCw {
        return cw_point(cw, phase);
    }
    let Some(r) = &a.r else {
        return usage("point needs --r");
    };
    if r.is_axis() || a.eta.is_axis() {
        return usage("point takes single values; use sweep for grids");
    }
    let p = pulsed_params(q, a, phase, r.scalar(), a.eta.scalar())?;
    let cell = pulsed_cell(q, &p)?;
    let phi = protocol_spec(&p)?.phi;
    let variant = match p.variant {
        Variant::TransmittedOnly => "transmitted_only",
        Variant::BothArms => "both_arms",
    };
    Ok(format!(
        "quantity,N,r,eta,theta,phi,signal_loss,variant,value,status\n{},{},{},{},{},{},{},{variant},{}\n",
        q.name(),
        p.n,
        sig12(p.r),
        sig12(p.eta),
        sig12(p.theta),
        sig12(phi),
        sig12(a.signal_loss),
        cell.csv()
    ))
}

fn cw_params(a: &CwArgs, phase: &PhaseArgs, eps: f64, times: [f64; 3]) -> CliResult<CwParams> {
    let mut p = CwParams::new(eps, times);
    p.window = a.window;
    p.theta = phase.theta;
    p.phi = phase.phi;
    p.validate()?;
    Ok(p)
}

/// Fidelity and the signal coefficients used.
fn cw_eval(a: &CwArgs, p: &CwParams) -> CliResult<(Cell, [f64; 3])> {
    let coefficients = if a.optimize_modes && p.eps_over_gamma > 0.0 {
        optimize_mode_coefficients(p)?
    } else {
        [1.0; 3]
    };
    let signal = TemporalMode::signal(p.detection_times, coefficients)?;
    let cell = fidelity_cell(noon_core::cw::cw_fidelity_with(p, &signal))?;
    Ok((cell, coefficients))
}

fn fixed_times(a: &CwArgs) -> CliResult<[f64; 3]> {
    match (&a.t_sep, a.t_times) {
        (Some(s), _) if s.is_axis() => usage("--t-sep grid is only valid as the sweep axis"),
        (Some(s), _) => Ok([0.0, 0.5 * s.scalar(), s.scalar()]),
        (None, Some(t)) => Ok(t),
        (None, None) => Ok([0.0; 3]),
    }
}

fn cw_point(a: &CwArgs, phase: &PhaseArgs) -> CliResult<String> {
    let Some(eps) = &a.eps_over_gamma else {
        return usage("F_cw needs --eps-over-gamma");
    };
    if eps.is_axis() {
        return usage("point takes single values; use cw-sweep for grids");
    }
    let p = cw_params(a, phase, eps.scalar(), fixed_times(a)?)?;
    let (cell, c) = cw_eval(a, &p)?;
    let phi = p.noon_spec()?.phi;
    let t = p.detection_times;
    let row = [eps.scalar(), t[0], t[1], t[2], p.window, p.theta, phi, c[0], c[1], c[2]]
        .map(sig12)
        .join(",");
    Ok(format!(
        "quantity,eps_over_gamma,t1,t2,t3,window,theta,phi,c1,c2,c3,value,status\nF_cw,{row},{}\n",
        cell.csv()
    ))
}

fn cw_sweep(q: Quantity, a: &CwArgs, phase: &PhaseArgs) -> CliResult<String> {
    if q != Quantity::FCw {
        return usage(format!("cw-sweep computes F_cw, not {}", q.name()));
    }
    let Some(eps) = &a.eps_over_gamma else {
        return usage("cw-sweep needs --eps-over-gamma");
    };
    let sep_axis = a.t_sep.as_ref().filter(|s| s.is_axis());
    let (axis, values, params) = match (eps.is_axis(), sep_axis) {
        (true, None) => {
            let times = fixed_times(a)?;
            let values = eps.values();
            let params = values
                .iter()
                .map(|&e| cw_params(a, phase, e, times))
                .collect::<CliResult<Vec<_>>>()?;
            ("eps_over_gamma", values, params)
        }
        (false, Some(sep)) => {
            let values = sep.values();
            let params = values
                .iter()
                .map(|&s| cw_params(a, phase, eps.scalar(), [0.0, 0.5 * s, s]))
                .collect::<CliResult<Vec<_>>>()?;
            ("t_sep", values, params)
        }
        (true, Some(_)) => return usage("only one of --eps-over-gamma and --t-sep may be a grid"),
        (false, None) => return usage("cw-sweep needs a grid on --eps-over-gamma or --t-sep"),
    };
    let cells = evaluate(&params, |p| cw_eval(a, p).map(|(cell, _)| cell))?;
    let mut csv = format!("{axis},F_cw,status\n");
    for (x, cell) in values.iter().zip(&cells) {
        writeln!(csv, "{},{}", sig12(*x), cell.csv()).expect("writing to a String");
    }
    Ok(csv)
}

/// Table columns: `(label, N, both arms)`.
const TABLE: [(&str, usize, bool); 6] = [
    ("P1", 1, false),
    ("P2", 2, false),
    ("P3", 3, false),
    ("P4", 4, false),
    ("P1_plus", 1, true),
    ("P3_plus", 3, true),
];

fn table1(lambda: &Grid) -> CliResult<String> {
    let values = lambda.values();
    if let Some(l) = values.iter().find(|l| **l < 0.0) {
        return usage(format!("lambda = {l} must be non-negative"));
    }
    let rows = values
        .par_iter()
        .map(|&l| {
            let r = r_from_lambda(l, 1.0);
            TABLE
                .iter()
                .map(|&(_, n, plus)| {
                    let variant = if plus {
                        Variant::BothArms
                    } else {
                        Variant::TransmittedOnly
                    };
                    let p = ProtocolParams::new(n, r, 1.0).with_variant(variant);
                    let closed = if plus {
                        closed_form_probability_plus(n, l)
                    } else {
                        closed_form_probability(n, l)
                    }
                    .expect("closed forms cover every table column");
                    Ok((determinant_probability(&p)?, closed))
                })
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;

    let labels = TABLE.map(|(label, _, _)| label);
    let mut csv = String::from("lambda");
    for suffix in ["", "_closed", "_diff"] {
        for label in labels {
            write!(csv, ",{label}{suffix}").expect("writing to a String");
        }
    }
    csv.push('\n');
    for (l, row) in values.iter().zip(&rows) {
        csv.push_str(&sig12(*l));
        let columns = [
            row.iter().map(|(m, _)| *m).collect::<Vec<_>>(),
            row.iter().map(|(_, c)| *c).collect(),
            row.iter().map(|(m, c)| (m - c).abs()).collect(),
        ];
        for x in columns.iter().flatten() {
            write!(csv, ",{}", sig12(*x)).expect("writing to a String");
        }
        csv.push('\n');
    }
    Ok(csv)
}

fn verify(only: &[u8], inject_fault: bool) -> CliResult<()> {
    let ids: Vec<u8> = if only.is_empty() {
        SUITES.iter().map(|(id, _)| *id).collect()
    } else {
        only.to_vec()
    };
    if let Some(id) = ids.iter().find(|id| !SUITES.iter().any(|(s, _)| s == *id)) {
        return usage(format!("no suite {id}; suites are 1 to {}", SUITES.len()));
    }
    let fault = if inject_fault {
        Fault::FlipSignalSign
    } else {
        Fault::None
    };
    let mut passed = 0;
    for &id in &ids {
        let check = run_suite(id, fault);
        println!("{}", check.line());
        passed += usize::from(check.ok());
    }
    println!("{passed}/{} suites passed", ids.len());
    if passed == ids.len() {
        Ok(())
    } else {
        Err(CliError::Verification)
    }
}
