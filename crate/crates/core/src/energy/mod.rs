//! Classical Ginzburg–Landau energy, the θ-averaged weighted energy
//! `E_ω(t) = ∫₀¹ ω(θ) E(θt) dθ`, the Caputo derivative of the energy
//! series, and the dissipation report that collects all of them.

mod weight;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use weight::{WeightFunction, WeightKind, DEFAULT_THETA_NODES};

use crate::fractime::{caputo_derivative_series, FracError, ModelParams, Operator, Trajectory};
use crate::interp::MonotoneCubic;
use crate::kernelcert::check_weight_admissible;
use crate::spectral::{inner_product, Field, SpectralError, SpectralWorkspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("time {t} outside the trajectory range [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },
    #[error("trajectory needs at least {needed} nodes, has {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `E = ∫_Ω (ε²/2 |∇φ|² + F(φ)) dx` with a spectral gradient.
pub fn classical_energy(phi: &Field, params: &ModelParams, ws: &mut SpectralWorkspace) -> f64 {
    let grad = ws.gradient(phi);
    let gradient_part: f64 = grad
        .iter()
        .map(|g| inner_product(g, g).expect("gradient lives on the field grid"))
        .sum();
    let potential: f64 = phi.values().iter().map(|&v| params.potential.value(v)).sum();
    0.5 * params.epsilon * params.epsilon * gradient_part + phi.grid().cell_volume() * potential
}

/// Reusable evaluator for `E_ω` on one trajectory and one weight.
#[derive(Debug, Clone)]
pub struct WeightedEnergy<'w> {
    interp: MonotoneCubic,
    omega: &'w WeightFunction,
    rule: crate::quadrature::JacobiRule,
    t_max: f64,
    e0: f64,
}

impl<'w> WeightedEnergy<'w> {
    pub fn new(traj: &Trajectory, omega: &'w WeightFunction, theta_nodes: usize) -> Result<Self, EnergyError> {
        let times = traj.times();
        if times.len() < 2 {
            return Err(EnergyError::TooShort {
                needed: 2,
                got: times.len(),
            });
        }
        Ok(Self {
            interp: MonotoneCubic::new(times, traj.energies()),
            omega,
            rule: omega.rule(theta_nodes),
            t_max: times[times.len() - 1],
            e0: traj.energies()[0],
        })
    }

    pub fn eval(&self, t: f64) -> Result<f64, EnergyError> {
        if !(t >= 0.0 && t <= self.t_max * (1.0 + 1e-12)) {
            return Err(EnergyError::OutOfRange { t, t_max: self.t_max });
        }
        if t == 0.0 {
            return Ok(self.e0 * self.omega.total_mass(self.rule.nodes().len()));
        }
        Ok(self.omega.integrate(&self.rule, |theta| self.interp.eval(theta * t)))
    }
}

/// `E_ω(t)` by Gauss–Jacobi quadrature in θ (default node count), with
/// `E(θt)` taken from the monotone cubic interpolant of the stored series.
pub fn weighted_energy(traj: &Trajectory, omega: &WeightFunction, t: f64) -> Result<f64, EnergyError> {
    WeightedEnergy::new(traj, omega, DEFAULT_THETA_NODES)?.eval(t)
}

/// Centered differences of `E_ω` over `report_times`; one value per
/// interior report time.
pub fn weighted_energy_derivative_series(
    traj: &Trajectory,
    omega: &WeightFunction,
    report_times: &[f64],
) -> Result<Vec<f64>, EnergyError> {
    if report_times.len() < 3 {
        return Err(EnergyError::TooShort {
            needed: 3,
            got: report_times.len(),
        });
    }
    let we = WeightedEnergy::new(traj, omega, DEFAULT_THETA_NODES)?;
    let values = report_times
        .iter()
        .map(|&t| we.eval(t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(centered_differences(report_times, &values))
}

fn centered_differences(times: &[f64], values: &[f64]) -> Vec<f64> {
    (1..times.len() - 1)
        .map(|k| (values[k + 1] - values[k - 1]) / (times[k + 1] - times[k - 1]))
        .collect()
}

/// L1 Caputo derivative of the stored energy series at `t_1, …, t_N`.
pub fn caputo_energy_series(traj: &Trajectory, alpha: f64) -> Result<Vec<f64>, EnergyError> {
    if !traj.is_complete() {
        return Err(EnergyError::TooShort {
            needed: traj.time_grid().n_steps() + 1,
            got: traj.len(),
        });
    }
    Ok(caputo_derivative_series(traj.energies(), alpha, traj.time_grid())?)
}

/// The field `ψ` at node `k >= 1`: the backward difference `φ'` for
/// Allen–Cahn, `∇(-Δ)^{-1} φ'` (one component per dimension) for
/// Cahn–Hilliard. Diagnostic only.
pub fn psi(
    traj: &Trajectory,
    k: usize,
    params: &ModelParams,
    ws: &mut SpectralWorkspace,
) -> Result<Vec<Field>, EnergyError> {
    if k == 0 || k >= traj.len() {
        return Err(EnergyError::InvalidParameter(format!(
            "psi needs 1 <= k < {}, got {k}",
            traj.len()
        )));
    }
    let tau = traj.time_grid().step_size(k);
    let rate = traj.fields()[k]
        .difference(&traj.fields()[k - 1])?
        .map(|v| v / tau)?;
    match params.operator {
        Operator::AllenCahn => Ok(vec![rate]),
        Operator::CahnHilliard => {
            let potential = ws.inv_neg_laplacian_zero_mean(&rate)?;
            Ok(ws.gradient(&potential))
        }
    }
}

/// Pass/fail of one monitored inequality `value <= tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlagOutcome {
    pub passed: bool,
    /// Largest monitored value (e.g. `max_k E(t_k) - E(0)`); `None` when
    /// nothing was monitored.
    pub worst_value: Option<f64>,
    pub tolerance: f64,
}

impl FlagOutcome {
    fn from_values(values: impl IntoIterator<Item = f64>, tolerance: f64) -> Self {
        let worst_value = values.into_iter().fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
        Self {
            passed: worst_value.is_none_or(|w| w <= tolerance),
            worst_value,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSeries {
    pub name: String,
    pub kind: WeightKind,
    pub admissible: bool,
    /// Why the weight was judged inadmissible, if it was.
    pub admissibility_note: Option<String>,
    pub admissibility_margin: Option<f64>,
    /// `E_ω` at each report time.
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Centered-difference `dE_ω/dt` at each report time (`None` at the ends).
    #[serde(skip)]
    pub derivative: Vec<Option<f64>>,
    /// `dE_ω/dt <= tol_dissip`; asserted only for admissible weights.
    pub dissipation: FlagOutcome,
    /// `E_ω(t) <= E(0) + 1e-8`.
    pub bounded_by_initial: FlagOutcome,
}

impl WeightSeries {
    pub fn asserted(&self) -> bool {
        self.admissible
    }
}

/// Sign pattern of the classical `E(t_k) - E(t_{k-1})`; recorded, never
/// asserted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawEnergySign {
    pub increasing_steps: usize,
    pub max_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub alpha: f64,
    pub tol_dissip: f64,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub node_indices: Vec<usize>,
    #[serde(skip)]
    pub energy: Vec<f64>,
    pub weights: Vec<WeightSeries>,
    /// `∂_t^α E` at each report time (`None` at `t = 0`).
    #[serde(skip)]
    pub caputo_energy: Vec<Option<f64>>,
    /// `E(t_k) <= E(0) + 1e-8` over all nodes.
    pub energy_bound: FlagOutcome,
    /// `∂_t^α E <= tol_dissip` over all nodes `k >= 1`.
    pub caputo_dissipation: FlagOutcome,
    pub raw_energy_sign: RawEnergySign,
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// Slack added to `E(0)` in the energy-bound checks.
pub const ENERGY_BOUND_SLACK: f64 = 1e-8;

/// `1e-6 (|E(0)| + 1)`.
pub fn dissipation_tolerance(initial_energy: f64) -> f64 {
    1e-6 * (initial_energy.abs() + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Every `stride`-th node is a report node (the last node always is).
    pub stride: usize,
    pub theta_nodes: usize,
    /// Exclude the first interior report node from the `dE_ω/dt` flag.
    pub skip_first_interior: bool,
    pub admissibility_samples: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            theta_nodes: DEFAULT_THETA_NODES,
            skip_first_interior: false,
            admissibility_samples: 1000,
        }
    }
}

/// Assembles every series and flag for a completed trajectory.
pub fn dissipation_report(
    traj: &Trajectory,
    omegas: &[WeightFunction],
    params: &ModelParams,
    options: &ReportOptions,
) -> Result<EnergyReport, EnergyError> {
    if options.stride == 0 {
        return Err(EnergyError::InvalidParameter("report stride must be >= 1".into()));
    }
    if !traj.is_complete() || traj.len() < 3 {
        return Err(EnergyError::TooShort {
            needed: (traj.time_grid().n_steps() + 1).max(3),
            got: traj.len(),
        });
    }
    let alpha = params.alpha;
    let energies = traj.energies();
    let e0 = energies[0];
    let tol = dissipation_tolerance(e0);
    let n_nodes = traj.len();

    let mut node_indices: Vec<usize> = (0..n_nodes).step_by(options.stride).collect();
    if *node_indices.last().expect("nonempty") != n_nodes - 1 {
        node_indices.push(n_nodes - 1);
    }
    let times: Vec<f64> = node_indices.iter().map(|&k| traj.times()[k]).collect();
    let energy: Vec<f64> = node_indices.iter().map(|&k| energies[k]).collect();

    let caputo_full = caputo_energy_series(traj, alpha)?;
    let caputo_energy = node_indices
        .iter()
        .map(|&k| (k > 0).then(|| caputo_full[k - 1]))
        .collect();

    let mut weights = Vec::with_capacity(omegas.len());
    for omega in omegas {
        let (admissible, note, margin) =
            match check_weight_admissible(omega, alpha, options.admissibility_samples) {
                Ok(a) if a.admissible => (true, None, Some(a.margin)),
                Ok(a) => (
                    false,
                    Some("omega(θ)θ^(1-α)(1-θ)^α is increasing somewhere".to_string()),
                    Some(a.margin),
                ),
                Err(e) => (false, Some(e.to_string()), None),
            };
        let we = WeightedEnergy::new(traj, omega, options.theta_nodes)?;
        let values = times
            .iter()
            .map(|&t| we.eval(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut derivative = vec![None; times.len()];
        if times.len() >= 3 {
            for (k, d) in centered_differences(&times, &values).into_iter().enumerate() {
                derivative[k + 1] = Some(d);
            }
        }
        let skip = usize::from(options.skip_first_interior);
        let monitored = derivative.iter().flatten().skip(skip).copied();
        let dissipation = if admissible {
            FlagOutcome::from_values(monitored, tol)
        } else {
            // inadmissible weights are recorded, never asserted
            let mut f = FlagOutcome::from_values(monitored, tol);
            f.passed = true;
            f
        };
        let bounded_by_initial =
            FlagOutcome::from_values(values.iter().map(|v| v - e0), ENERGY_BOUND_SLACK);
        weights.push(WeightSeries {
            name: omega.name().to_string(),
            kind: omega.kind(),
            admissible,
            admissibility_note: note,
            admissibility_margin: margin,
            values,
            derivative,
            dissipation,
            bounded_by_initial,
        });
    }

    let energy_bound = FlagOutcome::from_values(energies.iter().map(|e| e - e0), ENERGY_BOUND_SLACK);
    let caputo_dissipation = FlagOutcome::from_values(caputo_full.iter().copied(), tol);
    let increments: Vec<f64> = energies.windows(2).map(|w| w[1] - w[0]).collect();
    let raw_energy_sign = RawEnergySign {
        increasing_steps: increments.iter().filter(|&&d| d > 0.0).count(),
        max_increment: increments.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };

    Ok(EnergyReport {
        alpha,
        tol_dissip: tol,
        times,
        node_indices,
        energy,
        weights,
        caputo_energy,
        energy_bound,
        caputo_dissipation,
        raw_energy_sign,
        initial_energy: e0,
        final_energy: energies[n_nodes - 1],
    })
}

/// Per-row bits of the CSV `flags` column.
pub mod row_flags {
    /// `E(t) > E(0) + 1e-8`.
    pub const ENERGY_ABOVE_INITIAL: u32 = 1;
    /// Some asserted `dE_ω/dt > tol_dissip`.
    pub const WEIGHTED_INCREASE: u32 = 2;
    /// `∂_t^α E > tol_dissip`.
    pub const CAPUTO_POSITIVE: u32 = 4;
}

fn fmt_num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.17e}");
}

impl EnergyReport {
    /// Every asserted flag passed.
    pub fn all_asserted_pass(&self) -> bool {
        self.energy_bound.passed
            && self.caputo_dissipation.passed
            && self
                .weights
                .iter()
                .all(|w| w.dissipation.passed && w.bounded_by_initial.passed)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string(), "E".to_string()];
        cols.extend(self.weights.iter().map(|w| format!("E_omega_{}", w.name)));
        cols.extend(self.weights.iter().map(|w| format!("dEomega_dt_{}", w.name)));
        cols.push("caputo_E".into());
        cols.push("flags".into());
        cols.join(",")
    }

    fn row_flags(&self, row: usize) -> u32 {
        let mut bits = 0;
        if self.energy[row] - self.initial_energy > ENERGY_BOUND_SLACK {
            bits |= row_flags::ENERGY_ABOVE_INITIAL;
        }
        if self
            .weights
            .iter()
            .filter(|w| w.asserted())
            .any(|w| w.derivative[row].is_some_and(|d| d > self.tol_dissip))
        {
            bits |= row_flags::WEIGHTED_INCREASE;
        }
        if self.caputo_energy[row].is_some_and(|c| c > self.tol_dissip) {
            bits |= row_flags::CAPUTO_POSITIVE;
        }
        bits
    }

    /// Fixed column order: `t, E, E_omega_<w>…, dEomega_dt_<w>…, caputo_E,
    /// flags`. Missing values are empty cells; numbers use 18 significant
    /// digits so the text round-trips to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in 0..self.times.len() {
            fmt_num(&mut out, self.times[row]);
            out.push(',');
            fmt_num(&mut out, self.energy[row]);
            for w in &self.weights {
                out.push(',');
                fmt_num(&mut out, w.values[row]);
            }
            for w in &self.weights {
                out.push(',');
                if let Some(d) = w.derivative[row] {
                    fmt_num(&mut out, d);
                }
            }
            out.push(',');
            if let Some(c) = self.caputo_energy[row] {
                fmt_num(&mut out, c);
            }
            let _ = writeln!(out, ",{}", self.row_flags(row));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
