//! The conformal modified midpoint step
//!
//! `u' − e u = (dt/2) M (u' + e u) + (λ1/2) Π[J (u' + e u) ΔW̄1] + Π[λ̃2 ΔW2]`
//!
//! with `e = e^{−σ dt}` applied pointwise, `Π` the identity (FD) or the L2
//! projection (dG), `ΔW̄1` the truncated multiplicative increment and `ΔW2`
//! the untruncated additive one.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::TrajectoryStats;
use crate::disc::{Discretization, NoiseBasis};
use crate::error::{Error, Result};
use crate::linalg::{self, gmres, power_norm, FnOperator, GmresOptions};
use crate::model::{NoiseSpec, ProblemSpec};
use crate::noise::{compute_a, noise_stream, sample_increment, Process, WienerIncrement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Fixed point on the random term with the resolvent `(I − dt/2 M)⁻¹` applied by GMRES.
    #[default]
    FixedPoint,
    /// GMRES on the full per-step operator.
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            solver: SolverKind::FixedPoint,
            tol: 1e-10,
            max_iter: 200,
            restart: 30,
        }
    }
}

impl StepperConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    /// Checks `dt > 0`, `tol > 0`, `max_iter ≥ 1` and the guard `dt ≤ 1/σ0`.
    pub fn validate(&self, sigma0: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        if self.restart == 0 {
            return Err(Error::param("restart", "must be at least 1"));
        }
        if self.dt * sigma0 > 1.0 {
            return Err(Error::param(
                "dt",
                format!("dt = {} exceeds 1/σ0 = {}", self.dt, 1.0 / sigma0),
            ));
        }
        Ok(())
    }
}

/// Evaluated noise fields for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Upper bound on `sup |ΔW̄1|` over the domain.
    pub w1_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖L u' − rhs‖ / ‖rhs‖` of the defining equation.
    pub residual: f64,
    pub solver: SolverKind,
}

/// States advanced with shared noise plus their propagated difference.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
}

/// Linear solves aim this far below the accepted step residual.
const INNER_FACTOR: f64 = 0.1;

/// One configured time discretization over a spatial discretization.
pub struct Scheme<'a, D: Discretization + ?Sized> {
    disc: &'a D,
    cfg: StepperConfig,
    lambda1: f64,
    lambda2_tilde: [f64; 6],
    q1: NoiseSpec,
    q2: NoiseSpec,
    basis1: NoiseBasis,
    basis2: NoiseBasis,
    damping: Vec<f64>,
    trunc_b: f64,
    clip: Option<f64>,
    mode_sup: f64,
}

impl<'a, D: Discretization + ?Sized> Scheme<'a, D> {
    pub fn new(disc: &'a D, spec: &ProblemSpec, cfg: StepperConfig) -> Result<Self> {
        cfg.validate(disc.sigma0())?;
        if (spec.sigma.sigma0() - disc.sigma0()).abs() > 1e-14 * disc.sigma0() {
            return Err(Error::param("sigma", "discretization was built with a different damping"));
        }
        let multiplicative = spec.lambda1 != 0.0 && !spec.q1.is_empty();
        let clip = if multiplicative {
            Some(compute_a(cfg.dt, spec.trunc_b)?)
        } else {
            None
        };
        let l = disc.domain().lengths();
        Ok(Self {
            disc,
            cfg,
            lambda1: spec.lambda1,
            lambda2_tilde: spec.lambda2_tilde(),
            q1: spec.q1.clone(),
            q2: spec.q2.clone(),
            basis1: disc.noise_basis(&spec.q1)?,
            basis2: disc.noise_basis(&spec.q2)?,
            damping: disc.damping(cfg.dt),
            trunc_b: spec.trunc_b,
            clip,
            mode_sup: l.iter().map(|li| (2.0 / li).sqrt()).product(),
        })
    }

    pub fn disc(&self) -> &'a D {
        self.disc
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn q1(&self) -> &NoiseSpec {
        &self.q1
    }

    pub fn q2(&self) -> &NoiseSpec {
        &self.q2
    }

    pub fn trunc_b(&self) -> f64 {
        self.trunc_b
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    /// Clip level `A_dt`, present when the multiplicative term is active.
    pub fn clip_level(&self) -> Option<f64> {
        self.clip
    }

    /// Draws `(ΔW̄1, ΔW2)`; only the first is truncated.
    pub fn sample<R: Rng + ?Sized>(&self, rng1: &mut R, rng2: &mut R) -> Result<(WienerIncrement, WienerIncrement)> {
        let w1 = sample_increment(&self.q1, self.cfg.dt, rng1, self.clip.is_some(), self.trunc_b)?;
        let w2 = sample_increment(&self.q2, self.cfg.dt, rng2, false, self.trunc_b)?;
        Ok((w1, w2))
    }

    /// Evaluates both increments into discretization noise fields.
    pub fn noise(&self, inc1: &WienerIncrement, inc2: &WienerIncrement) -> Result<StepNoise> {
        Ok(StepNoise {
            w1: self.basis1.eval(&inc1.coeffs)?,
            w2: self.basis2.eval(&inc2.coeffs)?,
            w1_sup: self.mode_sup * inc1.coeffs.iter().map(|c| c.abs()).sum::<f64>(),
        })
    }

    pub fn zero_noise(&self) -> StepNoise {
        StepNoise {
            w1: vec![0.0; self.basis1.field_len()],
            w2: vec![0.0; self.basis2.field_len()],
            w1_sup: 0.0,
        }
    }

    fn multiplicative_active(&self, noise: &StepNoise) -> bool {
        self.lambda1 != 0.0 && noise.w1_sup > 0.0
    }

    /// `L x = x − (dt/2) M x − (λ1/2) Π[J x w1]`.
    fn apply_lhs(&self, x: &[f64], noise: &StepNoise, out: &mut [f64]) {
        let n = x.len();
        let a = 0.5 * self.cfg.dt;
        self.disc.maxwell(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - a * *o;
        }
        if self.multiplicative_active(noise) {
            let mut jw = vec![0.0; n];
            self.disc.multiplicative(x, &noise.w1, &mut jw);
            linalg::axpy(-0.5 * self.lambda1, &jw, out);
        }
    }

    /// `e u + (dt/2) M (e u) + (λ1/2) Π[J (e u) w1]`, plus `Π[λ̃2 w2]` when `forced`.
    fn rhs(&self, u: &[f64], noise: &StepNoise, forced: bool) -> Vec<f64> {
        let n = u.len();
        let a = 0.5 * self.cfg.dt;
        let eu: Vec<f64> = u.iter().zip(&self.damping).map(|(x, e)| x * e).collect();
        let mut out = vec![0.0; n];
        self.disc.maxwell(&eu, &mut out);
        for (o, x) in out.iter_mut().zip(&eu) {
            *o = x + a * *o;
        }
        let mut tmp = vec![0.0; n];
        if self.multiplicative_active(noise) {
            self.disc.multiplicative(&eu, &noise.w1, &mut tmp);
            linalg::axpy(0.5 * self.lambda1, &tmp, &mut out);
        }
        if forced && self.lambda2_tilde.iter().any(|l| *l != 0.0) {
            self.disc.additive(&self.lambda2_tilde, &noise.w2, &mut tmp);
            linalg::axpy(1.0, &tmp, &mut out);
        }
        out
    }

    /// Relative residual of the defining equation for a proposed `u_next`.
    pub fn defining_residual(&self, u: &[f64], u_next: &[f64], noise: &StepNoise) -> f64 {
        self.residual_of(u, u_next, noise, true)
    }

    fn residual_of(&self, u: &[f64], u_next: &[f64], noise: &StepNoise, forced: bool) -> f64 {
        let rhs = self.rhs(u, noise, forced);
        let mut lx = vec![0.0; u.len()];
        self.apply_lhs(u_next, noise, &mut lx);
        let r = lx.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let b = linalg::norm(&rhs);
        if b == 0.0 {
            r
        } else {
            r / b
        }
    }

    fn gmres_opts(&self, tol: f64) -> GmresOptions {
        GmresOptions {
            tol,
            max_iter: self.cfg.max_iter,
            restart: self.cfg.restart,
        }
    }

    /// Chosen solver for this step: fixed point falls back to Krylov when the
    /// random term is too large for a reliable contraction.
    fn solver_for(&self, noise: &StepNoise) -> SolverKind {
        match (self.cfg.solver, self.clip) {
            (SolverKind::Krylov, _) => SolverKind::Krylov,
            (SolverKind::FixedPoint, Some(a)) if self.multiplicative_active(noise) => {
                let level = self.lambda1.abs() * a * self.cfg.dt.sqrt();
                let contraction = 0.5 * self.lambda1.abs() * noise.w1_sup;
                if level >= 0.5 || contraction >= 0.5 {
                    SolverKind::Krylov
                } else {
                    SolverKind::FixedPoint
                }
            }
            _ => SolverKind::FixedPoint,
        }
    }

    fn solve(&self, u: &[f64], noise: &StepNoise, forced: bool) -> Result<StepOutcome> {
        if u.len() != self.disc.dim() {
            return Err(Error::Shape {
                expected: self.disc.dim(),
                actual: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state before step".into()));
        }
        let n = u.len();
        let rhs = self.rhs(u, noise, forced);
        let bnorm = linalg::norm(&rhs);
        let solver = self.solver_for(noise);
        if bnorm == 0.0 {
            return Ok(StepOutcome {
                u: vec![0.0; n],
                iterations: 0,
                residual: 0.0,
                solver,
            });
        }
        let guess: Vec<f64> = u.iter().zip(&self.damping).map(|(x, e)| x * e).collect();
        let tol = self.cfg.tol;
        let (x, iterations) = match solver {
            SolverKind::Krylov => {
                let op = FnOperator::new(n, |x: &[f64], y: &mut [f64]| self.apply_lhs(x, noise, y));
                let info = gmres(&op, &rhs, Some(&guess), &self.gmres_opts(INNER_FACTOR * tol), None)?;
                (info.x, info.iterations)
            }
            SolverKind::FixedPoint => {
                let a = 0.5 * self.cfg.dt;
                let resolvent = FnOperator::new(n, |x: &[f64], y: &mut [f64]| {
                    self.disc.maxwell(x, y);
                    for (yi, xi) in y.iter_mut().zip(x) {
                        *yi = xi - a * *yi;
                    }
                });
                let active = self.multiplicative_active(noise);
                let mut x = guess;
                let mut total = 0;
                let mut jw = vec![0.0; n];
                let mut lx = vec![0.0; n];
                let mut outer = 0;
                loop {
                    let mut y = rhs.clone();
                    if active {
                        self.disc.multiplicative(&x, &noise.w1, &mut jw);
                        linalg::axpy(0.5 * self.lambda1, &jw, &mut y);
                    }
                    let info = gmres(&resolvent, &y, Some(&x), &self.gmres_opts(INNER_FACTOR * tol), None)?;
                    x = info.x;
                    total += info.iterations;
                    outer += 1;
                    self.apply_lhs(&x, noise, &mut lx);
                    let res = lx.iter().zip(&rhs).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() / bnorm;
                    if !res.is_finite() {
                        return Err(Error::NonFinite("fixed-point iterate".into()));
                    }
                    if res <= tol {
                        break;
                    }
                    if outer >= self.cfg.max_iter {
                        return Err(Error::Solver {
                            iterations: total,
                            residual: res,
                        });
                    }
                }
                (x, total)
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state after step".into()));
        }
        let residual = self.residual_of(u, &x, noise, forced);
        if residual > tol {
            return Err(Error::Solver { iterations, residual });
        }
        Ok(StepOutcome {
            u: x,
            iterations,
            residual,
            solver,
        })
    }

    /// One step of the full scheme.
    pub fn step(&self, u: &[f64], noise: &StepNoise) -> Result<StepOutcome> {
        self.solve(u, noise, true)
    }

    /// One step without the additive forcing: the map a difference of two
    /// solutions sharing noise obeys.
    pub fn step_homogeneous(&self, d: &[f64], noise: &StepNoise) -> Result<StepOutcome> {
        self.solve(d, noise, false)
    }

    /// Advances two states with identical noise. `a` takes a full step and the
    /// difference `a − b` is propagated by the homogeneous step, so
    /// `b' = a' − d'` solves the scheme from `b` up to the solver tolerance.
    pub fn step_pair(&self, a: &[f64], b: &[f64], noise: &StepNoise) -> Result<PairOutcome> {
        crate::disc::check_len(a.len(), b.len())?;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.step_pair_diff(a, &d, noise)
    }

    /// As [`Scheme::step_pair`] with the difference given directly.
    pub fn step_pair_diff(&self, a: &[f64], d: &[f64], noise: &StepNoise) -> Result<PairOutcome> {
        let a_next = self.step(a, noise)?.u;
        let d_next = self.step_homogeneous(d, noise)?.u;
        let b_next = a_next.iter().zip(&d_next).map(|(x, y)| x - y).collect();
        Ok(PairOutcome {
            a: a_next,
            b: b_next,
            d: d_next,
        })
    }
}

/// A named scalar functional of a state.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    f: Arc<dyn Fn(&dyn Discretization, &[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).finish()
    }
}

impl Observable {
    pub fn new(name: impl Into<String>, f: impl Fn(&dyn Discretization, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `‖u‖`.
    pub fn norm() -> Self {
        Self::new("norm", |d, u| d.norm2(u).sqrt())
    }

    /// Component `comp` (0..6, `E` then `H`) at point `p`; NaN outside the domain.
    pub fn probe(p: [f64; 3], comp: usize) -> Self {
        Self::new(format!("probe{comp}"), move |d, u| {
            d.evaluate(u, p).map_or(f64::NAN, |v| v[comp])
        })
    }

    pub fn eval(&self, disc: &dyn Discretization, u: &[f64]) -> f64 {
        (self.f)(disc, u)
    }
}

/// Runs `n_steps` steps from `init` with the noise streams of `seed`, calling
/// `visit(step, state)` on the initial state and after every step.
pub fn simulate<D, F>(scheme: &Scheme<'_, D>, init: &[f64], n_steps: u64, seed: u64, mut visit: F) -> Result<Vec<f64>>
where
    D: Discretization + ?Sized,
    F: FnMut(u64, &[f64]),
{
    let mut rng1 = noise_stream(seed, Process::Multiplicative);
    let mut rng2 = noise_stream(seed, Process::Additive);
    let mut u = init.to_vec();
    visit(0, &u);
    for n in 1..=n_steps {
        let out = scheme
            .sample(&mut rng1, &mut rng2)
            .and_then(|(i1, i2)| scheme.noise(&i1, &i2))
            .and_then(|noise| scheme.step(&u, &noise))
            .map_err(|e| e.at_step(n))?;
        u = out.u;
        visit(n, &u);
    }
    Ok(u)
}

/// Per-step diagnostics of one trajectory.
pub fn run_trajectory<D>(
    scheme: &Scheme<'_, D>,
    init: &[f64],
    n_steps: u64,
    seed: u64,
    observables: &[Observable],
) -> Result<TrajectoryStats>
where
    D: Discretization + Sized,
{
    let disc = scheme.disc();
    let dt = scheme.dt();
    let names: Vec<&str> = observables.iter().map(|o| o.name.as_str()).collect();
    let mut stats = TrajectoryStats::with_observables(&names);
    simulate(scheme, init, n_steps, seed, |n, u| {
        let n2 = disc.norm2(u);
        stats.times.push(n as f64 * dt);
        stats.norm2.push(n2);
        stats.energy.push(n2);
        stats.curl2.push(disc.curl_norm2(u));
        stats.div2.push(disc.div_norm2(u));
        for (slot, o) in stats.observables.iter_mut().zip(observables) {
            slot.1.push(o.eval(disc, u));
        }
    })?;
    stats.check()?;
    Ok(stats)
}

const PROBE_SOLVE_TOL: f64 = 1e-14;
const PROBE_MAX_ITER: usize = 5000;

fn resolvent_solve<D: Discretization + ?Sized>(disc: &D, dt: f64, x: &[f64], adjoint: bool) -> Result<Vec<f64>> {
    let a = 0.5 * dt;
    let op = FnOperator::new(x.len(), |v: &[f64], y: &mut [f64]| {
        if adjoint {
            disc.maxwell_adjoint(v, y);
        } else {
            disc.maxwell(v, y);
        }
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi = vi - a * *yi;
        }
    });
    let opts = GmresOptions {
        tol: PROBE_SOLVE_TOL,
        max_iter: 1000,
        restart: 50,
    };
    Ok(gmres(&op, x, None, &opts, None)?.x)
}

fn probe_start(n: usize) -> Vec<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0b5e_55ed);
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// Power-iteration estimate of `‖Ŝ^n‖` for the deterministic step
/// `Ŝ = (I − dt/2 M)⁻¹ (I + dt/2 M) e^{−σ dt}` in the discretization's norm.
pub fn step_map_norm<D: Discretization + ?Sized>(disc: &D, dt: f64, n: usize, tol: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    let a = 0.5 * dt;
    let e = disc.damping(dt);
    let dim = disc.dim();
    let forward = |x: &[f64]| -> Result<Vec<f64>> {
        let mut v = x.to_vec();
        let mut mv = vec![0.0; dim];
        for _ in 0..n {
            let ev: Vec<f64> = v.iter().zip(&e).map(|(p, q)| p * q).collect();
            disc.maxwell(&ev, &mut mv);
            let r: Vec<f64> = ev.iter().zip(&mv).map(|(p, q)| p + a * q).collect();
            v = resolvent_solve(disc, dt, &r, false)?;
        }
        Ok(v)
    };
    let backward = |x: &[f64]| -> Result<Vec<f64>> {
        let mut v = x.to_vec();
        let mut mv = vec![0.0; dim];
        for _ in 0..n {
            let t = resolvent_solve(disc, dt, &v, true)?;
            disc.maxwell_adjoint(&t, &mut mv);
            v = t.iter().zip(&mv).zip(&e).map(|((p, q), s)| s * (p + a * q)).collect();
        }
        Ok(v)
    };
    power_norm(&probe_start(dim), forward, backward, |x, y| disc.inner(x, y), PROBE_MAX_ITER, tol)
}

/// Power-iteration estimate of `‖(I − dt/2 M)⁻¹‖`.
pub fn resolvent_norm<D: Discretization + ?Sized>(disc: &D, dt: f64, tol: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    power_norm(
        &probe_start(disc.dim()),
        |x| resolvent_solve(disc, dt, x, false),
        |x| resolvent_solve(disc, dt, x, true),
        |x, y| disc.inner(x, y),
        PROBE_MAX_ITER,
        tol,
    )
}
