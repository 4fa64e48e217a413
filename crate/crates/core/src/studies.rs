//! Monte Carlo studies: structural checks along trajectories, contraction,
//! moment bounds, temporal and spatial mean-square orders and ergodicity.

use serde::{Deserialize, Serialize};

use crate::analysis::{fit_order, mixing_rate, wasserstein2_1d, EmpiricalMeasure, Moments, MsErrorAccumulator, OrderFit};
use crate::dg::{DgMesh, DgSpace, QuadratureKind, TetRule};
use crate::disc::Discretization;
use crate::ensemble::{map_trajectories, trajectory_seed, Execution};
use crate::error::{Error, Result};
use crate::fd::StaggeredGrid;
use crate::model::ProblemSpec;
use crate::noise::{coarsen, noise_stream, Process, WienerIncrement};
use crate::stepper::{simulate, Observable, Scheme, StepperConfig};
use crate::structure::{discrete_energy, energy_law_residual, field_norm2, msymp_residual, SymplecticPair};

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarlo {
    pub trajectories: usize,
    pub seed_base: u64,
    pub execution: Execution,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            trajectories: 10,
            seed_base: 0,
            execution: Execution::Parallel,
        }
    }
}

fn uniform_state(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// One energy-law residual record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLawRow {
    pub trajectory: usize,
    pub step: u64,
    pub residual: f64,
    pub energy: f64,
    pub w2_norm2: f64,
}

impl EnergyLawRow {
    /// `|residual| / (Φ + ‖ΔW2‖²)`.
    pub fn ratio(&self) -> f64 {
        self.residual.abs() / (self.energy + self.w2_norm2)
    }
}

/// Energy-law residual of every step of every trajectory.
pub fn energy_law_study(
    spec: &ProblemSpec,
    grid: &StaggeredGrid,
    cfg: StepperConfig,
    init: &[f64],
    steps: u64,
    mc: &MonteCarlo,
) -> Result<Vec<EnergyLawRow>> {
    let scheme = Scheme::new(grid, spec, cfg)?;
    let l2t = spec.lambda2_tilde();
    let rows = map_trajectories(mc.trajectories, mc.execution, |k| {
        let seed = trajectory_seed(mc.seed_base, k);
        let mut r1 = noise_stream(seed, Process::Multiplicative);
        let mut r2 = noise_stream(seed, Process::Additive);
        let mut u = init.to_vec();
        let mut rows = Vec::with_capacity(steps as usize);
        for n in 1..=steps {
            let mut step = || -> Result<EnergyLawRow> {
                let (i1, i2) = scheme.sample(&mut r1, &mut r2)?;
                let noise = scheme.noise(&i1, &i2)?;
                let next = scheme.step(&u, &noise)?.u;
                let row = EnergyLawRow {
                    trajectory: k,
                    step: n,
                    residual: energy_law_residual(&u, &next, grid, &noise.w2, &l2t, cfg.dt)?,
                    energy: discrete_energy(&next, grid),
                    w2_norm2: field_norm2(&noise.w2, grid),
                };
                u = next;
                Ok(row)
            };
            rows.push(step().map_err(|e| e.at_step(n))?);
        }
        Ok(rows)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsympRow {
    pub trajectory: usize,
    pub step: u64,
    /// `max_c |residual_c|`.
    pub max_residual: f64,
    /// `‖a‖ ‖b‖` at the start of the step.
    pub scale: f64,
    /// `ΔV Σ (ω' − e² ω)`.
    pub budget: f64,
}

impl MsympRow {
    pub fn ratio(&self) -> f64 {
        self.max_residual / self.scale
    }
}

/// Multi-symplectic residuals of random tangent pairs propagated with each trajectory's noise.
pub fn msymp_study(
    spec: &ProblemSpec,
    grid: &StaggeredGrid,
    cfg: StepperConfig,
    steps: u64,
    mc: &MonteCarlo,
) -> Result<Vec<MsympRow>> {
    let scheme = Scheme::new(grid, spec, cfg)?;
    let rows = map_trajectories(mc.trajectories, mc.execution, |k| {
        let seed = trajectory_seed(mc.seed_base, k);
        let mut r1 = noise_stream(seed, Process::Multiplicative);
        let mut r2 = noise_stream(seed, Process::Additive);
        let mut pair = SymplecticPair {
            a: uniform_state(grid.dim(), seed.wrapping_mul(2).wrapping_add(1)),
            b: uniform_state(grid.dim(), seed.wrapping_mul(2).wrapping_add(2)),
        };
        let mut rows = Vec::with_capacity(steps as usize);
        for n in 1..=steps {
            let mut step = || -> Result<(MsympRow, SymplecticPair)> {
                let (i1, i2) = scheme.sample(&mut r1, &mut r2)?;
                let noise = scheme.noise(&i1, &i2)?;
                let next = SymplecticPair {
                    a: scheme.step_homogeneous(&pair.a, &noise)?.u,
                    b: scheme.step_homogeneous(&pair.b, &noise)?.u,
                };
                let res = msymp_residual(&pair, &next, grid, cfg.dt)?;
                let row = MsympRow {
                    trajectory: k,
                    step: n,
                    max_residual: res.iter().fold(0.0f64, |m, r| m.max(r.abs())),
                    scale: grid.norm2(&pair.a).sqrt() * grid.norm2(&pair.b).sqrt(),
                    budget: crate::structure::omega_budget(&pair, &next, grid, cfg.dt)?,
                };
                Ok((row, next))
            };
            let (row, next) = step().map_err(|e| e.at_step(n))?;
            rows.push(row);
            pair = next;
        }
        Ok(rows)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionResult {
    pub times: Vec<f64>,
    /// `‖d^n‖`.
    pub diff_norms: Vec<f64>,
    /// `‖d^{n+1}‖ / ‖d^n‖`.
    pub ratios: Vec<f64>,
    /// Fitted exponential rate of `‖d‖`.
    pub rate: f64,
}

/// Shared-noise pair from `a0`, `b0` over `steps` steps.
pub fn contraction_study<D: Discretization>(
    scheme: &Scheme<'_, D>,
    a0: &[f64],
    b0: &[f64],
    steps: u64,
    seed: u64,
) -> Result<ContractionResult> {
    let disc = scheme.disc();
    let mut r1 = noise_stream(seed, Process::Multiplicative);
    let mut r2 = noise_stream(seed, Process::Additive);
    let mut a = a0.to_vec();
    let mut d: Vec<f64> = a0.iter().zip(b0).map(|(x, y)| x - y).collect();
    let mut times = vec![0.0];
    let mut diff_norms = vec![disc.norm2(&d).sqrt()];
    let mut ratios = Vec::with_capacity(steps as usize);
    for n in 1..=steps {
        let p = scheme
            .sample(&mut r1, &mut r2)
            .and_then(|(i1, i2)| scheme.noise(&i1, &i2))
            .and_then(|noise| scheme.step_pair_diff(&a, &d, &noise))
            .map_err(|e| e.at_step(n))?;
        a = p.a;
        d = p.d;
        let nd = disc.norm2(&d).sqrt();
        ratios.push(nd / diff_norms[diff_norms.len() - 1]);
        diff_norms.push(nd);
        times.push(n as f64 * scheme.dt());
    }
    let rate = mixing_rate(&times, &diff_norms)?;
    Ok(ContractionResult {
        times,
        diff_norms,
        ratios,
        rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    /// Ensemble mean of the per-trajectory time averages of `‖u‖²`.
    pub mean: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    /// `C1 = |λ̃2|² tr(Q2) / (2σ0)`.
    pub c1: f64,
}

/// Time average of `‖u^n‖²` over `t_n ∈ [t_start, t_end]`, per trajectory, then across trajectories.
pub fn moment_study<D: Discretization + Sized>(
    spec: &ProblemSpec,
    scheme: &Scheme<'_, D>,
    init: &[f64],
    t_start: f64,
    t_end: f64,
    mc: &MonteCarlo,
) -> Result<MomentResult> {
    if !(t_end > t_start && t_start >= 0.0) {
        return Err(Error::param("window", "need 0 ≤ t_start < t_end"));
    }
    let dt = scheme.dt();
    let first = (t_start / dt).round() as u64;
    let last = (t_end / dt).round() as u64;
    let disc = scheme.disc();
    let per_traj = map_trajectories(mc.trajectories, mc.execution, |k| {
        let mut m = Moments::default();
        simulate(scheme, init, last, trajectory_seed(mc.seed_base, k), |n, u| {
            if n >= first {
                m.push(disc.norm2(u));
            }
        })?;
        Ok(m.mean)
    })?;
    let m = Moments::from_slice(&per_traj);
    Ok(MomentResult {
        mean: m.mean,
        std_error: m.std_error(),
        c1: spec.moment_constant(),
    })
}

/// Temporal ladder settings: `dt_k = T 2^{−k}` for `k` in `levels`, reference `T 2^{−reference}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalLadder {
    pub t_final: f64,
    pub levels: Vec<u32>,
    pub reference: u32,
    pub tol: f64,
}

impl Default for TemporalLadder {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            levels: vec![4, 5, 6, 7, 8],
            reference: 12,
            tol: 1e-10,
        }
    }
}

impl TemporalLadder {
    fn check(&self) -> Result<()> {
        if self.levels.len() < 3 {
            return Err(Error::param("levels", "need at least three ladder rungs"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("levels", "must be strictly increasing"));
        }
        if self.levels.last().is_some_and(|&k| k >= self.reference) {
            return Err(Error::param("reference", "must be finer than every rung"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::param("t_final", "must be positive"));
        }
        Ok(())
    }

    pub fn dt(&self, k: u32) -> f64 {
        self.t_final / 2f64.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStudy {
    /// Step sizes (`dt` or `h`), coarse to fine.
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub fit: OrderFit,
}

/// Mean-square temporal errors against a shared-path reference.
///
/// Every trajectory draws fine increments at the reference step and advances
/// all rungs in lockstep over blocks of the coarsest step; coarse increments
/// are rebuilt from the fine raw normals and clipped again at their own level.
/// Errors are compared at every multiple of the coarsest step.
pub fn temporal_ladder<D: Discretization>(
    spec: &ProblemSpec,
    disc: &D,
    ladder: &TemporalLadder,
    init: &[f64],
    mc: &MonteCarlo,
) -> Result<OrderStudy> {
    ladder.check()?;
    let kmin = ladder.levels[0];
    let cfg = |k: u32| StepperConfig {
        tol: ladder.tol,
        ..StepperConfig::with_dt(ladder.dt(k))
    };
    let reference = Scheme::new(disc, spec, cfg(ladder.reference))?;
    let rungs = ladder
        .levels
        .iter()
        .map(|&k| Scheme::new(disc, spec, cfg(k)))
        .collect::<Result<Vec<_>>>()?;
    let blocks = 1usize << kmin;
    let fine_per_block = 1usize << (ladder.reference - kmin);
    let truncated = reference.clip_level().is_some();
    let per_traj = map_trajectories(mc.trajectories, mc.execution, |k| {
        let seed = trajectory_seed(mc.seed_base, k);
        let mut r1 = noise_stream(seed, Process::Multiplicative);
        let mut r2 = noise_stream(seed, Process::Additive);
        let mut u_ref = init.to_vec();
        let mut u: Vec<Vec<f64>> = vec![init.to_vec(); rungs.len()];
        let mut sq = vec![Vec::with_capacity(blocks); rungs.len()];
        let mut w1: Vec<WienerIncrement> = Vec::with_capacity(fine_per_block);
        let mut w2: Vec<WienerIncrement> = Vec::with_capacity(fine_per_block);
        for block in 0..blocks {
            w1.clear();
            w2.clear();
            for j in 0..fine_per_block {
                let step = (block * fine_per_block + j + 1) as u64;
                let (i1, i2) = reference.sample(&mut r1, &mut r2)?;
                let noise = reference.noise(&i1, &i2)?;
                u_ref = reference.step(&u_ref, &noise).map_err(|e| e.at_step(step))?.u;
                w1.push(i1);
                w2.push(i2);
            }
            for (r, (scheme, &lvl)) in rungs.iter().zip(&ladder.levels).enumerate() {
                let group = 1usize << (ladder.reference - lvl);
                for (c1, c2) in w1.chunks(group).zip(w2.chunks(group)) {
                    let i1 = coarsen(c1, scheme.q1(), scheme.trunc_b(), truncated)?;
                    let i2 = coarsen(c2, scheme.q2(), scheme.trunc_b(), false)?;
                    let noise = scheme.noise(&i1, &i2)?;
                    u[r] = scheme.step(&u[r], &noise)?.u;
                }
                let diff: Vec<f64> = u[r].iter().zip(&u_ref).map(|(a, b)| a - b).collect();
                sq[r].push(disc.norm2(&diff));
            }
        }
        Ok(sq)
    })?;
    let mut errors = Vec::with_capacity(rungs.len());
    for r in 0..rungs.len() {
        let mut acc = MsErrorAccumulator::new(blocks);
        for t in &per_traj {
            acc.add_trajectory(&t[r])?;
        }
        errors.push(acc.finish()?);
    }
    let steps: Vec<f64> = ladder.levels.iter().map(|&k| ladder.dt(k)).collect();
    let fit = fit_order(&steps, &errors)?;
    Ok(OrderStudy { steps, errors, fit })
}

/// dG mesh ladder refined along `x` only; `h = Δx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialLadder {
    pub nx: Vec<usize>,
    pub nx_reference: usize,
    pub ny: usize,
    pub nz: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Number of equally spaced comparison times in `(0, t_final]`.
    pub comparisons: usize,
    pub quadrature: QuadratureKind,
    pub tol: f64,
}

impl Default for SpatialLadder {
    fn default() -> Self {
        Self {
            nx: vec![2, 4, 8],
            nx_reference: 16,
            ny: 2,
            nz: 2,
            dt: 1.0 / 256.0,
            t_final: 1.0,
            comparisons: 4,
            quadrature: QuadratureKind::Keast,
            tol: 1e-10,
        }
    }
}

/// A dG field sampled at the reference mesh's Keast points.
struct SharedPoints {
    /// `(cell on this mesh, point, weight)` per reference quadrature point.
    slots: Vec<Vec<(usize, [f64; 3], f64)>>,
}

impl SharedPoints {
    fn new(reference: &DgMesh, meshes: &[&DgMesh]) -> Result<Self> {
        let rule = TetRule::new(QuadratureKind::Keast);
        let mut pts = Vec::new();
        for (c, cell) in reference.cells.iter().enumerate() {
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                pts.push((c, reference.point(c, *lam), w * cell.volume));
            }
        }
        let mut slots = Vec::with_capacity(meshes.len());
        for m in meshes {
            slots.push(
                pts.iter()
                    .map(|&(c, p, w)| Ok((if std::ptr::eq(*m, reference) { c } else { m.locate(p)? }, p, w)))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { slots })
    }

    fn sq_error(&self, spaces: &[&DgSpace], u: &[f64], which: usize, reference: usize, u_ref: &[f64]) -> f64 {
        self.slots[which]
            .iter()
            .zip(&self.slots[reference])
            .map(|(&(c, p, w), &(cr, _, _))| {
                let a = spaces[which].evaluate_in(u, c, p);
                let b = spaces[reference].evaluate_in(u_ref, cr, p);
                w * a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum()
    }
}

/// Mean-square dG errors against the finest mesh, all meshes driven by the same increments.
pub fn dg_spatial_ladder(
    spec: &ProblemSpec,
    ladder: &SpatialLadder,
    profile: &(dyn Fn([f64; 3]) -> [f64; 6] + Sync),
    mc: &MonteCarlo,
) -> Result<OrderStudy> {
    if ladder.nx.len() < 3 {
        return Err(Error::param("nx", "need at least three meshes"));
    }
    if ladder.nx.iter().any(|&n| n >= ladder.nx_reference) {
        return Err(Error::param("nx_reference", "must be finer than every rung"));
    }
    if ladder.comparisons == 0 {
        return Err(Error::param("comparisons", "must be at least 1"));
    }
    let steps_total = (ladder.t_final / ladder.dt).round() as u64;
    if steps_total == 0 || steps_total % ladder.comparisons as u64 != 0 {
        return Err(Error::param("comparisons", "must divide the number of steps"));
    }
    let every = steps_total / ladder.comparisons as u64;
    let mut all: Vec<usize> = ladder.nx.clone();
    all.push(ladder.nx_reference);
    let spaces = all
        .iter()
        .map(|&nx| {
            DgSpace::new(
                DgMesh::build(spec.domain.clone(), nx, ladder.ny, ladder.nz)?,
                &spec.sigma,
                ladder.quadrature,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DgSpace> = spaces.iter().collect();
    let meshes: Vec<&DgMesh> = spaces.iter().map(|s| s.mesh()).collect();
    let ri = spaces.len() - 1;
    let shared = SharedPoints::new(meshes[ri], &meshes)?;
    let cfg = StepperConfig {
        tol: ladder.tol,
        ..StepperConfig::with_dt(ladder.dt)
    };
    let schemes = spaces
        .iter()
        .map(|s| Scheme::new(s, spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    let inits: Vec<Vec<f64>> = spaces.iter().map(|s| s.project(profile)).collect();
    let per_traj = map_trajectories(mc.trajectories, mc.execution, |k| {
        let seed = trajectory_seed(mc.seed_base, k);
        let mut r1 = noise_stream(seed, Process::Multiplicative);
        let mut r2 = noise_stream(seed, Process::Additive);
        let mut u = inits.clone();
        let mut sq = vec![Vec::with_capacity(ladder.comparisons); ri];
        for n in 1..=steps_total {
            let (i1, i2) = schemes[ri].sample(&mut r1, &mut r2)?;
            for (s, ui) in schemes.iter().zip(u.iter_mut()) {
                let noise = s.noise(&i1, &i2)?;
                *ui = s.step(ui, &noise).map_err(|e| e.at_step(n))?.u;
            }
            if n % every == 0 {
                for (r, slot) in sq.iter_mut().enumerate() {
                    slot.push(shared.sq_error(&refs, &u[r], r, ri, &u[ri]));
                }
            }
        }
        Ok(sq)
    })?;
    let mut errors = Vec::with_capacity(ri);
    for r in 0..ri {
        let mut acc = MsErrorAccumulator::new(ladder.comparisons);
        for t in &per_traj {
            acc.add_trajectory(&t[r])?;
        }
        errors.push(acc.finish()?);
    }
    let steps: Vec<f64> = ladder.nx.iter().map(|&n| spec.domain.lengths()[0] / n as f64).collect();
    let fit = fit_order(&steps, &errors)?;
    Ok(OrderStudy { steps, errors, fit })
}

/// Ergodicity study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicitySettings {
    pub times: Vec<f64>,
    pub amplitude: f64,
    pub probe: [f64; 3],
    pub probe_component: usize,
}

impl Default for ErgodicitySettings {
    fn default() -> Self {
        Self {
            times: vec![1.0, 3.0, 6.0],
            amplitude: 10.0,
            probe: [0.3, 0.3, 0.3],
            probe_component: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableDecay {
    pub name: String,
    /// `W2` between the two ensembles at each time.
    pub w2: Vec<f64>,
    /// `W2` between two independent zero-start ensembles at the last time.
    pub noise_floor: f64,
}

impl ObservableDecay {
    pub fn monotone(&self) -> bool {
        self.w2.windows(2).all(|w| w[1] < w[0])
    }

    pub fn final_ratio(&self) -> f64 {
        self.w2.last().copied().unwrap_or(f64::NAN) / self.noise_floor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityResult {
    pub times: Vec<f64>,
    pub observables: Vec<ObservableDecay>,
}

/// Compares the laws of scalar observables from a zero start and a large
/// sine start. Ensembles use disjoint seed blocks: `seed_base + k` (zero),
/// `seed_base + N + k` (sine) and `seed_base + 2N + k` (a second zero start
/// that measures the resampling noise floor).
pub fn ergodicity_study<D: Discretization + Sized>(
    scheme: &Scheme<'_, D>,
    settings: &ErgodicitySettings,
    mc: &MonteCarlo,
) -> Result<ErgodicityResult> {
    let disc = scheme.disc();
    let dt = scheme.dt();
    if settings.times.is_empty() || settings.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("times", "need increasing comparison times"));
    }
    if settings.probe_component >= 6 {
        return Err(Error::param("probe_component", "must be in 0..6"));
    }
    disc.evaluate(&vec![0.0; disc.dim()], settings.probe)?;
    let marks: Vec<u64> = settings.times.iter().map(|t| (t / dt).round() as u64).collect();
    let last = *marks.last().expect("nonempty");
    let obs = [
        Observable::norm(),
        Observable::probe(settings.probe, settings.probe_component),
    ];
    let zero = vec![0.0; disc.dim()];
    let sine = disc.project(&crate::disc::sine_profile(disc.domain(), settings.amplitude));
    let n = mc.trajectories;
    let run = |init: &[f64], offset: usize| -> Result<Vec<Vec<[f64; 2]>>> {
        map_trajectories(n, mc.execution, |k| {
            let mut rec = Vec::with_capacity(marks.len());
            simulate(scheme, init, last, trajectory_seed(mc.seed_base, offset + k), |step, u| {
                if marks.contains(&step) {
                    rec.push([obs[0].eval(disc, u), obs[1].eval(disc, u)]);
                }
            })?;
            Ok(rec)
        })
    };
    let a = run(&zero, 0)?;
    let b = run(&sine, n)?;
    let c = run(&zero, 2 * n)?;
    let measure = |runs: &[Vec<[f64; 2]>], t: usize, o: usize| EmpiricalMeasure::new(runs.iter().map(|r| r[t][o]).collect());
    let mut observables = Vec::new();
    for (o, ob) in obs.iter().enumerate() {
        let w2 = (0..marks.len())
            .map(|t| wasserstein2_1d(&measure(&a, t, o)?, &measure(&b, t, o)?))
            .collect::<Result<Vec<_>>>()?;
        let t = marks.len() - 1;
        let noise_floor = wasserstein2_1d(&measure(&a, t, o)?, &measure(&c, t, o)?)?;
        observables.push(ObservableDecay {
            name: ob.name.clone(),
            w2,
            noise_floor,
        });
    }
    Ok(ErgodicityResult {
        times: settings.times.clone(),
        observables,
    })
}

/// Largest `|⟨M u, v⟩ + ⟨u, M v⟩| / (‖u‖ ‖v‖)` over random pairs.
pub fn skew_defect<D: Discretization + ?Sized>(disc: &D, pairs: usize, seed: u64) -> f64 {
    let n = disc.dim();
    let (mut mu, mut mv) = (vec![0.0; n], vec![0.0; n]);
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let u = uniform_state(n, seed.wrapping_add(2 * k as u64));
        let v = uniform_state(n, seed.wrapping_add(2 * k as u64 + 1));
        disc.maxwell(&u, &mut mu);
        disc.maxwell(&v, &mut mv);
        let s = disc.inner(&mu, &v) + disc.inner(&u, &mv);
        worst = worst.max(s.abs() / (disc.norm2(&u) * disc.norm2(&v)).sqrt());
    }
    worst
}

/// Largest `⟨M u, u⟩ / ‖u‖²` over random states (nonpositive for a dissipative operator).
pub fn dissipation_max<D: Discretization + ?Sized>(disc: &D, states: usize, seed: u64) -> f64 {
    let n = disc.dim();
    let mut mu = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    for k in 0..states {
        let u = uniform_state(n, seed.wrapping_add(k as u64));
        disc.maxwell(&u, &mut mu);
        worst = worst.max(disc.inner(&mu, &u) / disc.norm2(&u));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disc::sine_profile;
    use crate::model::{Domain, NoiseSpec, Sigma};

    fn grid(n: usize) -> StaggeredGrid {
        StaggeredGrid::new(Domain::unit(), [n; 3], &Sigma::Constant(1.0)).unwrap()
    }

    fn seq(n: usize) -> MonteCarlo {
        MonteCarlo {
            trajectories: n,
            seed_base: 100,
            execution: Execution::Sequential,
        }
    }

    #[test]
    fn energy_and_msymp_studies_stay_at_solver_level() {
        let g = grid(4);
        let spec = ProblemSpec::default();
        let init = g.project(&sine_profile(g.domain(), 1.0));
        let rows = energy_law_study(&spec, &g, StepperConfig::with_dt(0.05), &init, 10, &seq(2)).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows.iter().all(|r| r.ratio() <= 100.0 * 1e-10));
        let rows = msymp_study(&spec, &g, StepperConfig::with_dt(0.05), 10, &seq(2)).unwrap();
        assert!(rows.iter().all(|r| r.ratio() <= 100.0 * 1e-10));
    }

    #[test]
    fn contraction_rate_is_sigma() {
        for sigma0 in [1.0, 2.0] {
            let g = StaggeredGrid::new(Domain::unit(), [4; 3], &Sigma::Constant(sigma0)).unwrap();
            let spec = ProblemSpec {
                sigma: Sigma::Constant(sigma0),
                ..ProblemSpec::default()
            };
            let s = Scheme::new(&g, &spec, StepperConfig::with_dt(0.02)).unwrap();
            let r = contraction_study(&s, &uniform_state(g.dim(), 1), &vec![0.0; g.dim()], 100, 3).unwrap();
            assert!((r.rate + sigma0).abs() < 0.01 * sigma0, "{}", r.rate);
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let g = grid(4);
        let spec = ProblemSpec::default();
        let init = g.project(&sine_profile(g.domain(), 1.0));
        let par = MonteCarlo {
            execution: Execution::Parallel,
            ..seq(3)
        };
        let a = energy_law_study(&spec, &g, StepperConfig::with_dt(0.05), &init, 5, &seq(3)).unwrap();
        let b = energy_law_study(&spec, &g, StepperConfig::with_dt(0.05), &init, 5, &par).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_temporal_order_is_two() {
        let g = grid(4);
        let spec = ProblemSpec {
            lambda1: 0.0,
            lambda2: [0.0; 3],
            q1: NoiseSpec::empty(),
            q2: NoiseSpec::empty(),
            ..ProblemSpec::default()
        };
        let init = g.project(&sine_profile(g.domain(), 1.0));
        let ladder = TemporalLadder {
            levels: vec![3, 4, 5, 6],
            reference: 10,
            ..TemporalLadder::default()
        };
        let r = temporal_ladder(&spec, &g, &ladder, &init, &seq(1)).unwrap();
        assert!((r.fit.slope - 2.0).abs() < 0.1, "{:?}", r);
    }

    #[test]
    fn small_temporal_ladder_runs() {
        let g = grid(2);
        let spec = ProblemSpec::default();
        let init = g.project(&sine_profile(g.domain(), 1.0));
        let ladder = TemporalLadder {
            levels: vec![2, 3, 4],
            reference: 6,
            ..TemporalLadder::default()
        };
        let r = temporal_ladder(&spec, &g, &ladder, &init, &seq(4)).unwrap();
        assert_eq!(r.errors.len(), 3);
        assert!(r.errors.iter().all(|e| *e > 0.0));
    }

    #[test]
    fn small_spatial_ladder_runs() {
        let spec = ProblemSpec {
            q1: NoiseSpec::power_law(2, 3.0).unwrap(),
            q2: NoiseSpec::power_law(2, 3.0).unwrap(),
            ..ProblemSpec::default()
        };
        let ladder = SpatialLadder {
            nx: vec![1, 2, 3],
            nx_reference: 4,
            dt: 0.05,
            t_final: 0.2,
            comparisons: 2,
            ..SpatialLadder::default()
        };
        let profile = |p: [f64; 3]| {
            let pi = std::f64::consts::PI;
            [0.0, 0.0, (pi * p[0]).sin() * (pi * p[1]).sin(), 0.0, 0.0, 0.0]
        };
        let r = dg_spatial_ladder(&spec, &ladder, &profile, &seq(2)).unwrap();
        assert_eq!(r.errors.len(), 3);
        assert!(r.errors[0] > r.errors[2], "{r:?}");
    }

    #[test]
    fn operator_checks() {
        assert!(skew_defect(&grid(4), 20, 1) < 1e-13);
        let sp = DgSpace::new(
            DgMesh::build(Domain::unit(), 1, 1, 1).unwrap(),
            &Sigma::Constant(1.0),
            QuadratureKind::Keast,
        )
        .unwrap();
        assert!(dissipation_max(&sp, 20, 2) <= 1e-12);
    }
}
