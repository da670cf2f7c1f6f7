//! Weight functions for the time-averaged energy.
//!
//! Every weight is stored in the factored form
//! `ω(θ) = θ^p (1-θ)^q h(θ)` with a bounded smooth part `h`, so that the
//! endpoint singularities can be absorbed exactly into a Gauss–Jacobi rule.

use serde::Serialize;

use crate::quadrature::{beta, JacobiRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `1 / (B(α, 1-α) θ^{1-α} (1-θ)^α)`
    Beta,
    /// `α θ^{α-1}`, the unit-mass member of the `θ^{α-1}` family.
    Power,
    /// User table for the smooth part `h`, with declared endpoint exponents.
    Tabulated,
}

#[derive(Debug, Clone, PartialEq)]
enum SmoothPart {
    Constant(f64),
    /// Piecewise-linear table on strictly increasing nodes covering `[0, 1]`.
    Table { theta: Vec<f64>, values: Vec<f64> },
}

impl SmoothPart {
    fn eval(&self, theta: f64) -> f64 {
        match self {
            SmoothPart::Constant(c) => *c,
            SmoothPart::Table { theta: nodes, values } => {
                let n = nodes.len();
                if theta <= nodes[0] {
                    return values[0];
                }
                if theta >= nodes[n - 1] {
                    return values[n - 1];
                }
                let k = nodes.partition_point(|&v| v <= theta) - 1;
                let s = (theta - nodes[k]) / (nodes[k + 1] - nodes[k]);
                values[k] + s * (values[k + 1] - values[k])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    name: String,
    kind: WeightKind,
    alpha: Option<f64>,
    p: f64,
    q: f64,
    smooth: SmoothPart,
}

/// Nodes used for θ-quadrature unless a caller asks otherwise.
pub const DEFAULT_THETA_NODES: usize = 32;

impl WeightFunction {
    /// # Panics
    /// If `alpha` is not in `(0, 1)`.
    pub fn beta(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
        Self {
            name: "beta".into(),
            kind: WeightKind::Beta,
            alpha: Some(alpha),
            p: alpha - 1.0,
            q: -alpha,
            smooth: SmoothPart::Constant(1.0 / beta(alpha, 1.0 - alpha)),
        }
    }

    /// # Panics
    /// If `alpha` is not in `(0, 1)`.
    pub fn power(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
        Self {
            name: "power".into(),
            kind: WeightKind::Power,
            alpha: Some(alpha),
            p: alpha - 1.0,
            q: 0.0,
            smooth: SmoothPart::Constant(alpha),
        }
    }

    /// `ω(θ) = θ^p (1-θ)^q h(θ)` with `h` linearly interpolated from the
    /// table. Returns `None` for malformed input (exponents `<= -1`, fewer
    /// than two nodes, unsorted nodes, table not covering `[0, 1]`, or
    /// non-finite values).
    pub fn tabulated(
        name: impl Into<String>,
        exponents: (f64, f64),
        theta: Vec<f64>,
        values: Vec<f64>,
    ) -> Option<Self> {
        let (p, q) = exponents;
        let ok = p > -1.0
            && q > -1.0
            && theta.len() >= 2
            && theta.len() == values.len()
            && theta.windows(2).all(|w| w[1] > w[0])
            && theta[0] <= 0.0
            && theta[theta.len() - 1] >= 1.0
            && values.iter().all(|v| v.is_finite());
        ok.then(|| Self {
            name: name.into(),
            kind: WeightKind::Tabulated,
            alpha: None,
            p,
            q,
            smooth: SmoothPart::Table { theta, values },
        })
    }

    /// Table of the smooth part of `self` on `samples + 1` uniform nodes,
    /// keeping the endpoint exponents.
    pub fn discretized(&self, samples: usize) -> Self {
        let theta: Vec<f64> = (0..=samples).map(|i| i as f64 / samples as f64).collect();
        let values = theta.iter().map(|&t| self.smooth.eval(t)).collect();
        Self {
            name: format!("{}_tabulated", self.name),
            kind: WeightKind::Tabulated,
            alpha: self.alpha,
            p: self.p,
            q: self.q,
            smooth: SmoothPart::Table { theta, values },
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// Endpoint exponents `(p, q)` of `θ^p (1-θ)^q`.
    pub fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }

    /// Bounded factor `h(θ)`.
    pub fn smooth_part(&self, theta: f64) -> f64 {
        self.smooth.eval(theta)
    }

    /// `ω(θ)` for `θ` in the open interval `(0, 1)`.
    pub fn eval(&self, theta: f64) -> f64 {
        theta.powf(self.p) * (1.0 - theta).powf(self.q) * self.smooth.eval(theta)
    }

    /// Gauss–Jacobi rule whose weight function is the singular factor of ω.
    pub fn rule(&self, nodes: usize) -> JacobiRule {
        JacobiRule::new(nodes, self.p, self.q)
    }

    /// `∫₀¹ f(θ) ω(θ) dθ` with a rule matched to ω's endpoint behaviour.
    pub fn integrate(&self, rule: &JacobiRule, f: impl Fn(f64) -> f64) -> f64 {
        debug_assert_eq!(rule.exponents(), (self.p, self.q));
        rule.integrate(|t| self.smooth.eval(t) * f(t))
    }

    /// `∫₀¹ ω(θ) dθ`.
    pub fn total_mass(&self, nodes: usize) -> f64 {
        self.integrate(&self.rule(nodes), |_| 1.0)
    }
}
