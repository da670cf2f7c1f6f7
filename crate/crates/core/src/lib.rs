//! Time-fractional Allen–Cahn and Cahn–Hilliard solvers on periodic grids,
//! weighted-energy dissipation monitors, and positive-definite certification
//! of kernels by a monotone Cholesky factorization.

pub mod energy;
pub mod fractime;
pub mod interp;
pub mod kernelcert;
pub mod quadrature;
pub mod simcli;
pub mod spectral;
