//! Gauss–Jacobi rules on `[0, 1]` for weights `θ^p (1-θ)^q`, built with the
//! Golub–Welsch construction (symmetric tridiagonal eigenproblem solved by
//! implicit QL).

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

/// `B(x, y)`; uses the reflection formula when `x + y = 1`.
pub fn beta(x: f64, y: f64) -> f64 {
    if (x + y - 1.0).abs() < 1e-15 {
        PI / (PI * x).sin()
    } else {
        (ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp()
    }
}

/// Quadrature rule `∫₀¹ θ^p (1-θ)^q f(θ) dθ ≈ Σ w_i f(θ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiRule {
    p: f64,
    q: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl JacobiRule {
    /// # Panics
    /// If `n == 0` or either exponent is `<= -1`.
    pub fn new(n: usize, p: f64, q: f64) -> Self {
        assert!(n > 0, "rule needs at least one node");
        assert!(p > -1.0 && q > -1.0, "Jacobi exponents must exceed -1");
        // On [-1, 1] the weight is (1-x)^a (1+x)^b with θ = (1+x)/2.
        let (a, b) = (q, p);
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        diag[0] = (b - a) / (a + b + 2.0);
        for k in 1..n {
            let kf = k as f64;
            let s = 2.0 * kf + a + b;
            diag[k] = (b * b - a * a) / (s * (s + 2.0));
            let beta_k = if k == 1 {
                // (k+a+b)/(2k+a+b-1) = 1 at k = 1; written out to survive a+b = -1
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b))
            } else {
                4.0 * kf * (kf + a) * (kf + b) * (kf + a + b) / (s * s * (s + 1.0) * (s - 1.0))
            };
            off[k - 1] = beta_k.sqrt();
        }
        let mut first = vec![0.0; n];
        first[0] = 1.0;
        tridiagonal_ql(&mut diag, &mut off, &mut first);

        let mass = beta(p + 1.0, q + 1.0);
        let mut pairs: Vec<(f64, f64)> = diag
            .iter()
            .zip(&first)
            .map(|(&x, &z)| (0.5 * (1.0 + x), mass * z * z))
            .collect();
        pairs.sort_by(|l, r| l.0.total_cmp(&r.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self {
            p,
            q,
            nodes,
            weights,
        }
    }

    /// Gauss–Legendre on `[0, 1]`.
    pub fn legendre(n: usize) -> Self {
        Self::new(n, 0.0, 0.0)
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Plain (unweighted) integral over `[lo, hi]`; meaningful for the
    /// Legendre rule only.
    pub fn integrate_on(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let width = hi - lo;
        width * self.integrate(|u| f(lo + width * u))
    }
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
/// On return `diag` holds the eigenvalues and `first` the first components
/// of the corresponding normalized eigenvectors.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64], first: &mut [f64]) {
    let n = diag.len();
    if n == 1 {
        return;
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            assert!(iterations <= 100, "QL iteration failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let z = first[i + 1];
                first[i + 1] = s * first[i] + c * z;
                first[i] = c * first[i] - s * z;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
}
