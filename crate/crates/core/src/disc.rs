//! The contract shared by the finite-difference and dG spatial discretizations.
//!
//! States are flat coefficient vectors; each discretization fixes its own
//! layout. Noise enters through a precomputed table of per-mode contributions,
//! so a sampled increment becomes a discretization-specific "field" vector by a
//! single weighted sum over modes.

use crate::error::{Error, Result};
use crate::model::{Domain, NoiseSpec};

/// Six-component state `(E, H)` stored in a discretization's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub coeffs: Vec<f64>,
    pub step_index: u64,
}

impl FieldState {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs, step_index: 0 }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }
}

/// Per-mode contributions of the noise basis, `table[m * field_len .. (m + 1) * field_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBasis {
    modes: usize,
    field_len: usize,
    table: Vec<f64>,
}

impl NoiseBasis {
    pub fn new(modes: usize, field_len: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != modes * field_len {
            return Err(Error::Shape {
                expected: modes * field_len,
                actual: table.len(),
            });
        }
        Ok(Self {
            modes,
            field_len,
            table,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn field_len(&self) -> usize {
        self.field_len
    }

    /// `Σ_m c_m table_m`.
    pub fn eval(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.modes {
            return Err(Error::Shape {
                expected: self.modes,
                actual: coeffs.len(),
            });
        }
        let mut out = vec![0.0; self.field_len];
        for (c, row) in coeffs.iter().zip(self.table.chunks_exact(self.field_len.max(1))) {
            if *c != 0.0 {
                for (o, r) in out.iter_mut().zip(row) {
                    *o += c * r;
                }
            }
        }
        Ok(out)
    }
}

/// A spatial discretization of the damped Maxwell operator and the two noise terms.
pub trait Discretization: Send + Sync {
    /// Number of coefficients in a state.
    fn dim(&self) -> usize;
    fn domain(&self) -> &Domain;
    fn sigma0(&self) -> f64;
    fn is_sigma_constant(&self) -> bool;
    /// `out = M u`.
    fn maxwell(&self, u: &[f64], out: &mut [f64]);
    /// `out = M* u`, adjoint with respect to [`Discretization::inner`].
    fn maxwell_adjoint(&self, u: &[f64], out: &mut [f64]);
    fn inner(&self, a: &[f64], b: &[f64]) -> f64;
    fn norm2(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }
    /// Per-coefficient damping factors `e^{−σ dt}`.
    fn damping(&self, dt: f64) -> Vec<f64>;
    fn noise_basis(&self, ns: &NoiseSpec) -> Result<NoiseBasis>;
    /// `out = Π[J u w]` for a noise field `w` produced by [`NoiseBasis::eval`].
    fn multiplicative(&self, u: &[f64], w: &[f64], out: &mut [f64]);
    /// `out = Π[λ̃2 w]`.
    fn additive(&self, lambda2_tilde: &[f64; 6], w: &[f64], out: &mut [f64]);
    /// Discrete representative of a continuous field.
    fn project(&self, f: &dyn Fn([f64; 3]) -> [f64; 6]) -> Vec<f64>;
    /// Point value of a state.
    fn evaluate(&self, u: &[f64], p: [f64; 3]) -> Result<[f64; 6]>;
    /// Squared norm of the discrete divergences of `E` and `H`.
    fn div_norm2(&self, u: &[f64]) -> f64;
    /// Squared norm of `M u`, the curl channel.
    fn curl_norm2(&self, u: &[f64]) -> f64 {
        let mut mu = vec![0.0; self.dim()];
        self.maxwell(u, &mut mu);
        self.norm2(&mu)
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape { expected, actual })
    }
}

/// `J (E, H) = (−H, E)`.
#[inline]
pub fn apply_j(u: [f64; 6]) -> [f64; 6] {
    [-u[3], -u[4], -u[5], u[0], u[1], u[2]]
}

/// Smooth divergence-free profile `E = (a sin 2πy' sin 2πz', 0, 0)`, `H = 0`, in normalized coordinates.
pub fn sine_profile(domain: &Domain, amplitude: f64) -> impl Fn([f64; 3]) -> [f64; 6] + '_ {
    move |p| {
        let l = domain.lengths();
        let y = (p[1] - domain.lo[1]) / l[1];
        let z = (p[2] - domain.lo[2]) / l[2];
        let tau = 2.0 * std::f64::consts::PI;
        [amplitude * (tau * y).sin() * (tau * z).sin(), 0.0, 0.0, 0.0, 0.0, 0.0]
    }
}
