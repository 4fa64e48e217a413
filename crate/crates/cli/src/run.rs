//! Study drivers. Each returns its CSV tables and a JSON report; nothing here touches the filesystem.

use std::ops::Range;

use ergomax_core::dg::{DgMesh, DgSpace};
use ergomax_core::disc::{sine_profile, Discretization};
use ergomax_core::ensemble::{map_trajectories, trajectory_seed};
use ergomax_core::fd::StaggeredGrid;
use ergomax_core::model::ProblemSpec;
use ergomax_core::stepper::{resolvent_norm, run_trajectory, step_map_norm, Observable, Scheme, StepperConfig};
use ergomax_core::studies::{
    dg_spatial_ladder, dissipation_max, energy_law_study, ergodicity_study, msymp_study, skew_defect,
    temporal_ladder, MonteCarlo,
};
use serde_json::{json, Value};

use crate::config::{ConfigError, DiscKind, ExperimentConfig, InitialTable, ObservableTable, Study};

/// A CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

pub struct StudyOutput {
    pub stats: Table,
    pub orders: Option<Table>,
    pub report: Value,
    /// `None` for studies without a pass/fail threshold.
    pub pass: Option<bool>,
    /// Seed ranges consumed, each `seed_base + k` for `k` in a block.
    pub seeds: Vec<Range<u64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numeric(#[from] ergomax_core::Error),
}

/// Shortest round-trip float text; identical across runs.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

enum Disc {
    Fd(StaggeredGrid),
    Dg(DgSpace),
}

macro_rules! with_disc {
    ($disc:expr, $d:ident => $body:expr) => {
        match $disc {
            Disc::Fd($d) => $body,
            Disc::Dg($d) => $body,
        }
    };
}

fn build_disc(cfg: &ExperimentConfig, spec: &ProblemSpec) -> Result<Disc, RunError> {
    let t = cfg.discretization()?;
    if t.cells.iter().any(|&n| n == 0) {
        return Err(ConfigError::Invalid("discretization.cells must be positive".into()).into());
    }
    Ok(match t.kind {
        DiscKind::Fd => Disc::Fd(StaggeredGrid::new(spec.domain, t.cells, &spec.sigma)?),
        DiscKind::Dg => {
            let [nx, ny, nz] = t.cells;
            Disc::Dg(DgSpace::new(DgMesh::build(spec.domain, nx, ny, nz)?, &spec.sigma, t.quadrature)?)
        }
    })
}

fn fd_only(cfg: &ExperimentConfig, spec: &ProblemSpec, study: Study) -> Result<StaggeredGrid, RunError> {
    match build_disc(cfg, spec)? {
        Disc::Fd(g) => Ok(g),
        Disc::Dg(_) => Err(ConfigError::Invalid(format!("{} requires discretization.kind = \"fd\"", study.name())).into()),
    }
}

fn initial_state<D: Discretization + ?Sized>(disc: &D, init: InitialTable) -> Vec<f64> {
    match init {
        InitialTable::Zero => vec![0.0; disc.dim()],
        InitialTable::Sine { amplitude } => disc.project(&sine_profile(disc.domain(), amplitude)),
    }
}

fn block(mc: &MonteCarlo, blocks: usize) -> Vec<Range<u64>> {
    let n = mc.trajectories * blocks;
    vec![trajectory_seed(mc.seed_base, 0)..trajectory_seed(mc.seed_base, n)]
}

pub fn run(cfg: &ExperimentConfig, study: Study, seed: Option<u64>) -> Result<StudyOutput, RunError> {
    cfg.check_study(study)?;
    let spec = cfg.problem.build().map_err(ConfigError::from)?;
    let mc = cfg.monte_carlo(seed);
    match study {
        Study::Simulate => {
            let disc = build_disc(cfg, &spec)?;
            with_disc!(&disc, d => simulate(cfg, &spec, d, &mc))
        }
        Study::EnergyLaw => energy_law(cfg, &spec, &mc),
        Study::MsympCheck => msymp(cfg, &spec, &mc),
        Study::ConvergenceDt => {
            let disc = build_disc(cfg, &spec)?;
            with_disc!(&disc, d => convergence_dt(cfg, &spec, d, &mc))
        }
        Study::ConvergenceH => convergence_h(cfg, &spec, &mc),
        Study::Ergodicity => {
            let disc = build_disc(cfg, &spec)?;
            with_disc!(&disc, d => ergodicity(cfg, &spec, d, &mc))
        }
        Study::OperatorCheck => {
            let disc = build_disc(cfg, &spec)?;
            let skew_applies = matches!(disc, Disc::Fd(_));
            with_disc!(&disc, d => operator_check(cfg, d, skew_applies, &mc))
        }
    }
}

fn simulate<D: Discretization>(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    disc: &D,
    mc: &MonteCarlo,
) -> Result<StudyOutput, RunError> {
    let t = cfg.simulate.as_ref().expect("checked");
    let scheme = Scheme::new(disc, spec, cfg.stepper()?)?;
    let observables: Vec<Observable> = t
        .observables
        .iter()
        .map(|o| match *o {
            ObservableTable::Norm => Observable::norm(),
            ObservableTable::Probe { point, component } => Observable::probe(point, component),
        })
        .collect();
    let names: Vec<String> = observables.iter().map(|o| o.name.clone()).collect();
    let init = initial_state(disc, cfg.initial);
    let runs = map_trajectories(mc.trajectories, mc.execution, |k| {
        run_trajectory(&scheme, &init, t.steps, trajectory_seed(mc.seed_base, k), &observables)
    })?;
    let mut stats = Table::new(&["trajectory", "step", "time", "norm2", "energy", "curl2", "div2"]);
    stats.header.extend(names.iter().cloned());
    let mut final_norm = Vec::with_capacity(runs.len());
    for (k, r) in runs.iter().enumerate() {
        for i in 0..r.len() {
            let mut row = vec![
                k.to_string(),
                i.to_string(),
                num(r.times[i]),
                num(r.norm2[i]),
                num(r.energy[i]),
                num(r.curl2[i]),
                num(r.div2[i]),
            ];
            row.extend(r.observables.iter().map(|(_, v)| num(v[i])));
            stats.rows.push(row);
        }
        final_norm.push(*r.norm2.last().expect("initial state recorded"));
    }
    let mean = final_norm.iter().sum::<f64>() / final_norm.len() as f64;
    let report = json!({
        "trajectories": mc.trajectories,
        "steps": t.steps,
        "dt": scheme.dt(),
        "mean_final_norm2": mean,
        "moment_constant": spec.moment_constant(),
        "observables": names,
    });
    Ok(StudyOutput {
        stats,
        orders: None,
        report,
        pass: None,
        seeds: block(mc, 1),
    })
}

fn energy_law(cfg: &ExperimentConfig, spec: &ProblemSpec, mc: &MonteCarlo) -> Result<StudyOutput, RunError> {
    let t = cfg.energy_law.as_ref().expect("checked");
    let step = cfg.stepper()?;
    let grid = fd_only(cfg, spec, Study::EnergyLaw)?;
    let init = initial_state(&grid, cfg.initial);
    let rows = energy_law_study(spec, &grid, step, &init, t.steps, mc)?;
    let threshold = t.threshold.unwrap_or(100.0 * step.tol);
    let mut stats = Table::new(&["trajectory", "step", "residual", "energy", "w2_norm2", "ratio"]);
    let mut worst = 0.0f64;
    for r in &rows {
        worst = worst.max(r.ratio());
        stats.rows.push(vec![
            r.trajectory.to_string(),
            r.step.to_string(),
            num(r.residual),
            num(r.energy),
            num(r.w2_norm2),
            num(r.ratio()),
        ]);
    }
    let pass = worst <= threshold;
    let report = json!({
        "steps": t.steps,
        "trajectories": mc.trajectories,
        "records": rows.len(),
        "max_ratio": worst,
        "threshold": threshold,
    });
    Ok(StudyOutput {
        stats,
        orders: None,
        report,
        pass: Some(pass),
        seeds: block(mc, 1),
    })
}

fn msymp(cfg: &ExperimentConfig, spec: &ProblemSpec, mc: &MonteCarlo) -> Result<StudyOutput, RunError> {
    let t = cfg.msymp_check.as_ref().expect("checked");
    let step = cfg.stepper()?;
    let grid = fd_only(cfg, spec, Study::MsympCheck)?;
    let rows = msymp_study(spec, &grid, step, t.steps, mc)?;
    let threshold = t.threshold.unwrap_or(100.0 * step.tol);
    let mut stats = Table::new(&["trajectory", "step", "max_residual", "scale", "budget", "ratio"]);
    let mut worst = 0.0f64;
    for r in &rows {
        worst = worst.max(r.ratio());
        stats.rows.push(vec![
            r.trajectory.to_string(),
            r.step.to_string(),
            num(r.max_residual),
            num(r.scale),
            num(r.budget),
            num(r.ratio()),
        ]);
    }
    let pass = worst <= threshold;
    let report = json!({
        "steps": t.steps,
        "trajectories": mc.trajectories,
        "records": rows.len(),
        "max_ratio": worst,
        "threshold": threshold,
    });
    Ok(StudyOutput {
        stats,
        orders: None,
        report,
        pass: Some(pass),
        seeds: block(mc, 1),
    })
}

fn orders_table(quantity: &str, fit: &ergomax_core::analysis::OrderFit, points: usize) -> Table {
    let mut t = Table::new(&["quantity", "slope", "intercept", "r2", "points"]);
    t.rows.push(vec![
        quantity.to_string(),
        num(fit.slope),
        num(fit.intercept),
        num(fit.r2),
        points.to_string(),
    ]);
    t
}

fn convergence_dt<D: Discretization>(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    disc: &D,
    mc: &MonteCarlo,
) -> Result<StudyOutput, RunError> {
    let t = cfg.convergence_dt.as_ref().expect("checked");
    let tol = cfg.stepper.as_ref().and_then(|s| s.tol).unwrap_or(StepperConfig::default().tol);
    let ladder = t.build(tol);
    let init = initial_state(disc, cfg.initial);
    let r = temporal_ladder(spec, disc, &ladder, &init, mc)?;
    let mut stats = Table::new(&["level", "dt", "ms_error"]);
    for ((level, dt), e) in ladder.levels.iter().zip(&r.steps).zip(&r.errors) {
        stats.rows.push(vec![level.to_string(), num(*dt), num(*e)]);
    }
    let report = json!({
        "levels": ladder.levels,
        "reference": ladder.reference,
        "t_final": ladder.t_final,
        "trajectories": mc.trajectories,
        "dt": r.steps,
        "errors": r.errors,
        "slope": r.fit.slope,
        "r2": r.fit.r2,
    });
    Ok(StudyOutput {
        stats,
        orders: Some(orders_table("dt", &r.fit, r.errors.len())),
        report,
        pass: None,
        seeds: block(mc, 1),
    })
}

fn convergence_h(cfg: &ExperimentConfig, spec: &ProblemSpec, mc: &MonteCarlo) -> Result<StudyOutput, RunError> {
    let t = cfg.convergence_h.as_ref().expect("checked");
    let tol = cfg.stepper.as_ref().and_then(|s| s.tol).unwrap_or(StepperConfig::default().tol);
    let ladder = t.build(tol);
    let amplitude = t.amplitude.unwrap_or(1.0);
    let domain = spec.domain;
    let profile = move |p: [f64; 3]| {
        let l = domain.lengths();
        let x = (p[0] - domain.lo[0]) / l[0];
        let y = (p[1] - domain.lo[1]) / l[1];
        let pi = std::f64::consts::PI;
        [0.0, 0.0, amplitude * (pi * x).sin() * (pi * y).sin(), 0.0, 0.0, 0.0]
    };
    let r = dg_spatial_ladder(spec, &ladder, &profile, mc)?;
    let mut stats = Table::new(&["nx", "h", "ms_error"]);
    for ((nx, h), e) in ladder.nx.iter().zip(&r.steps).zip(&r.errors) {
        stats.rows.push(vec![nx.to_string(), num(*h), num(*e)]);
    }
    let report = json!({
        "nx": ladder.nx,
        "nx_reference": ladder.nx_reference,
        "dt": ladder.dt,
        "t_final": ladder.t_final,
        "trajectories": mc.trajectories,
        "h": r.steps,
        "errors": r.errors,
        "slope": r.fit.slope,
        "r2": r.fit.r2,
    });
    Ok(StudyOutput {
        stats,
        orders: Some(orders_table("h", &r.fit, r.errors.len())),
        report,
        pass: None,
        seeds: block(mc, 1),
    })
}

fn ergodicity<D: Discretization>(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    disc: &D,
    mc: &MonteCarlo,
) -> Result<StudyOutput, RunError> {
    let settings = cfg.ergodicity.clone().unwrap_or_default();
    let scheme = Scheme::new(disc, spec, cfg.stepper()?)?;
    let r = ergodicity_study(&scheme, &settings, mc)?;
    let mut stats = Table::new(&["observable", "time", "w2", "noise_floor"]);
    let mut pass = true;
    let mut per = Vec::new();
    for o in &r.observables {
        for (time, w) in r.times.iter().zip(&o.w2) {
            stats.rows.push(vec![o.name.clone(), num(*time), num(*w), num(o.noise_floor)]);
        }
        let ok = o.monotone() && o.final_ratio() < 3.0;
        pass &= ok;
        per.push(json!({
            "name": o.name,
            "w2": o.w2,
            "noise_floor": o.noise_floor,
            "monotone": o.monotone(),
            "final_ratio": o.final_ratio(),
            "pass": ok,
        }));
    }
    let report = json!({
        "times": r.times,
        "trajectories_per_ensemble": mc.trajectories,
        "observables": per,
        "criterion": "W2 strictly decreasing and final W2 below 3 times the noise floor",
    });
    Ok(StudyOutput {
        stats,
        orders: None,
        report,
        pass: Some(pass),
        seeds: block(mc, 3),
    })
}

fn operator_check<D: Discretization>(
    cfg: &ExperimentConfig,
    disc: &D,
    skew_applies: bool,
    mc: &MonteCarlo,
) -> Result<StudyOutput, RunError> {
    let t = cfg.operator_check.clone().unwrap_or(crate::config::OperatorCheckTable {
        samples: 1000,
        steps: 5,
    });
    let step = cfg.stepper()?;
    let dt = step.dt;
    let sigma0 = disc.sigma0();
    let mut stats = Table::new(&["quantity", "value", "bound", "checked", "pass"]);
    let mut pass = true;
    let mut push = |name: &str, value: f64, bound: f64, checked: bool| {
        let ok = value <= bound;
        if checked {
            pass &= ok;
        }
        stats
            .rows
            .push(vec![name.to_string(), num(value), num(bound), checked.to_string(), ok.to_string()]);
    };
    let skew = skew_defect(disc, t.samples, mc.seed_base);
    push("skew_defect", skew, 1e-12, skew_applies);
    let diss = dissipation_max(disc, t.samples, mc.seed_base.wrapping_add(1));
    push("dissipation_max", diss, 1e-12, true);
    let probe_tol = 1e-13;
    let t1 = resolvent_norm(disc, dt, probe_tol)?;
    push("resolvent_norm", t1, 1.0 + 1e-6, true);
    for n in [1, t.steps] {
        let s = step_map_norm(disc, dt, n, probe_tol)?;
        let bound = (-sigma0 * n as f64 * dt).exp() * (1.0 + 1e-6);
        push(&format!("step_map_norm_{n}"), s, bound, true);
    }
    let report = json!({
        "dt": dt,
        "sigma0": sigma0,
        "samples": t.samples,
        "skew_checked": skew_applies,
        "skew_defect": skew,
        "dissipation_max": diss,
        "resolvent_norm": t1,
    });
    Ok(StudyOutput {
        stats,
        orders: None,
        report,
        pass: Some(pass),
        seeds: vec![mc.seed_base..mc.seed_base.wrapping_add(2)],
    })
}
