//! Problem description: the cuboid domain, damping, noise intensities and
//! the Karhunen–Loève spectra of the two Wiener processes.
//!
//! The continuous model is
//!
//! ```text
//! du = (M u − σ u) dt + λ1 J u ∘ dW1 + λ̃2 dW2,   u = (E, H),
//! ```
//!
//! with `J = [[0, −I], [I, 0]]` and `λ̃2 = (λ2, λ2)`. Both processes are
//! expanded in the product sine basis of the box,
//! `q_m(x) = Π_d sqrt(2/L_d) sin(2π m_d (x_d − lo_d)/L_d)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Axis-aligned box `(x_L, x_R) × (y_L, y_R) × (z_L, z_R)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Domain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Domain {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn unit() -> Self {
        Self::new([0.0; 3], [1.0; 3])
    }

    pub fn lengths(&self) -> [f64; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|d| !(self.lo[d] < self.hi[d]) || !self.lo[d].is_finite() || !self.hi[d].is_finite())
    }

    /// Closed-box membership with a relative slack of 1e-12.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let l = self.lengths();
        (0..3).all(|d| {
            let slack = 1e-12 * l[d].abs().max(1.0);
            p[d] >= self.lo[d] - slack && p[d] <= self.hi[d] + slack
        })
    }

    pub(crate) fn check(&self, p: [f64; 3]) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Domain(p))
        }
    }
}

/// Damping coefficient σ(x) ≥ σ0 > 0.
#[derive(Clone)]
pub enum Sigma {
    Constant(f64),
    /// A spatially varying profile together with its declared lower bound.
    Function {
        lower_bound: f64,
        f: Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>,
    },
}

impl Sigma {
    pub fn function(lower_bound: f64, f: impl Fn([f64; 3]) -> f64 + Send + Sync + 'static) -> Self {
        Sigma::Function {
            lower_bound,
            f: Arc::new(f),
        }
    }

    pub fn sigma0(&self) -> f64 {
        match self {
            Sigma::Constant(s) => *s,
            Sigma::Function { lower_bound, .. } => *lower_bound,
        }
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self {
            Sigma::Constant(s) => *s,
            Sigma::Function { f, .. } => f(p),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Sigma::Constant(_))
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Constant(s) => f.debug_tuple("Constant").field(s).finish(),
            Sigma::Function { lower_bound, .. } => f
                .debug_struct("Function")
                .field("lower_bound", lower_bound)
                .finish_non_exhaustive(),
        }
    }
}

/// Finite Karhunen–Loève spectrum: one eigenvalue `η_m ≥ 0` per sine mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    modes: Vec<[u32; 3]>,
    eigenvalues: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(modes: Vec<[u32; 3]>, eigenvalues: Vec<f64>) -> Result<Self> {
        if modes.len() != eigenvalues.len() {
            return Err(Error::param(
                "eigenvalues",
                format!("{} eigenvalues for {} modes", eigenvalues.len(), modes.len()),
            ));
        }
        if modes.iter().any(|m| m.contains(&0)) {
            return Err(Error::param("modes", "mode indices must be positive"));
        }
        if eigenvalues.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::param("eigenvalues", "eigenvalues must be finite and nonnegative"));
        }
        Ok(Self { modes, eigenvalues })
    }

    /// No modes: the process vanishes identically.
    pub fn empty() -> Self {
        Self {
            modes: Vec::new(),
            eigenvalues: Vec::new(),
        }
    }

    pub fn single(mode: [u32; 3], eta: f64) -> Result<Self> {
        Self::new(vec![mode], vec![eta])
    }

    /// All modes `1..=per_axis` on each axis with `η_m = |m|^{-2r}`.
    pub fn power_law(per_axis: u32, r: f64) -> Result<Self> {
        if per_axis == 0 {
            return Err(Error::param("modes_per_axis", "must be at least 1"));
        }
        let mut modes = Vec::with_capacity((per_axis as usize).pow(3));
        for m3 in 1..=per_axis {
            for m2 in 1..=per_axis {
                for m1 in 1..=per_axis {
                    modes.push([m1, m2, m3]);
                }
            }
        }
        let eigenvalues = modes
            .iter()
            .map(|m| {
                let s = m.iter().map(|&k| (k as f64).powi(2)).sum::<f64>();
                s.powf(-r)
            })
            .collect();
        Self::new(modes, eigenvalues)
    }

    /// Rescales the spectrum so that `tr Q = trace`.
    pub fn scaled_to_trace(mut self, trace: f64) -> Result<Self> {
        let t = self.trace();
        if t <= 0.0 {
            return Err(Error::param("trace", "cannot rescale a zero spectrum"));
        }
        for e in &mut self.eigenvalues {
            *e *= trace / t;
        }
        Ok(self)
    }

    pub fn modes(&self) -> &[[u32; 3]] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn trace(&self) -> f64 {
        trace_q(self)
    }
}

/// `tr Q = Σ_m η_m`.
pub fn trace_q(ns: &NoiseSpec) -> f64 {
    ns.eigenvalues.iter().sum()
}

/// One normalized sine factor `sqrt(2/L) sin(2π m (x − lo)/L)`.
#[inline]
pub fn sine_factor(m: u32, x: f64, lo: f64, len: f64) -> f64 {
    (2.0 / len).sqrt() * (2.0 * PI * m as f64 * (x - lo) / len).sin()
}

/// Product sine basis function `q_m(p)`.
#[inline]
pub fn basis_value(domain: &Domain, mode: [u32; 3], p: [f64; 3]) -> f64 {
    let l = domain.lengths();
    (0..3)
        .map(|d| sine_factor(mode[d], p[d], domain.lo[d], l[d]))
        .product()
}

/// Closed-form `⟨q_m, q_n⟩_{L²(D)}`, integrating each sine product exactly.
pub fn basis_inner(m: [u32; 3], n: [u32; 3]) -> f64 {
    // ∫_0^L (2/L) sin(2πax/L) sin(2πbx/L) dx = δ_ab for positive integers
    if m == n {
        1.0
    } else {
        0.0
    }
}

/// Physical and stochastic parameters of the damped stochastic Maxwell system.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub sigma: Sigma,
    pub lambda1: f64,
    pub lambda2: [f64; 3],
    pub q1: NoiseSpec,
    pub q2: NoiseSpec,
    pub trunc_b: f64,
}

impl ProblemSpec {
    /// `λ̃2 = (λ2, λ2)`.
    pub fn lambda2_tilde(&self) -> [f64; 6] {
        let l = self.lambda2;
        [l[0], l[1], l[2], l[0], l[1], l[2]]
    }

    /// `C1 = |λ̃2|² tr(Q2) / (2σ0)`: the stationary bound on `E‖u‖²` for additive noise.
    pub fn moment_constant(&self) -> f64 {
        let l2: f64 = self.lambda2_tilde().iter().map(|x| x * x).sum();
        l2 * self.q2.trace() / (2.0 * self.sigma.sigma0())
    }
}

impl Default for ProblemSpec {
    fn default() -> Self {
        let q = NoiseSpec::power_law(5, 3.0).expect("valid default spectrum");
        Self {
            domain: Domain::unit(),
            sigma: Sigma::Constant(1.0),
            lambda1: 1.0,
            lambda2: [1.0, 1.0, 1.0],
            q1: q.clone(),
            q2: q,
            trunc_b: 4.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::param("problem", self.violations.join("; ")))
        }
    }
}

/// Checks the standing assumptions; σ is sampled on `sigma_nodes` when given.
pub fn validate_with_nodes(spec: &ProblemSpec, sigma_nodes: &[[f64; 3]]) -> ValidationReport {
    let mut v = Vec::new();
    if spec.domain.is_degenerate() {
        v.push("degenerate box".to_string());
    }
    let s0 = spec.sigma.sigma0();
    if !(s0 > 0.0 && s0.is_finite()) {
        v.push(format!("sigma0 = {s0} must be positive"));
    }
    if let Some(p) = sigma_nodes.iter().find(|p| !(spec.sigma.eval(**p) >= s0)) {
        v.push(format!(
            "sigma({:?}) = {} below declared lower bound {s0}",
            p,
            spec.sigma.eval(*p)
        ));
    }
    if !(spec.trunc_b >= 4.0) {
        v.push("trunc_b < 4".to_string());
    }
    if !spec.lambda1.is_finite() || spec.lambda2.iter().any(|x| !x.is_finite()) {
        v.push("noise intensities must be finite".to_string());
    }
    ValidationReport { violations: v }
}

/// Checks the standing assumptions, sampling σ on a coarse 9³ lattice.
pub fn validate(spec: &ProblemSpec) -> ValidationReport {
    let mut nodes = Vec::new();
    if !spec.domain.is_degenerate() {
        let l = spec.domain.lengths();
        for k in 0..=8 {
            for j in 0..=8 {
                for i in 0..=8 {
                    nodes.push([
                        spec.domain.lo[0] + l[0] * i as f64 / 8.0,
                        spec.domain.lo[1] + l[1] * j as f64 / 8.0,
                        spec.domain.lo[2] + l[2] * k as f64 / 8.0,
                    ]);
                }
            }
        }
    }
    validate_with_nodes(spec, &nodes)
}

/// Itô correction density `F_{Q1}(x) = Σ_m η_m q_m(x)²` at each point.
pub fn f_q1(spec: &ProblemSpec, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&p| {
            spec.domain.check(p)?;
            Ok(spec
                .q1
                .modes()
                .iter()
                .zip(spec.q1.eigenvalues())
                .map(|(&m, &eta)| eta * basis_value(&spec.domain, m, p).powi(2))
                .sum())
        })
        .collect()
}
