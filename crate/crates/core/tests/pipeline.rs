use ergomax_core::dg::{DgMesh, DgSpace, QuadratureKind};
use ergomax_core::disc::{sine_profile, Discretization};
use ergomax_core::ensemble::Execution;
use ergomax_core::fd::StaggeredGrid;
use ergomax_core::model::{Domain, NoiseSpec, ProblemSpec, Sigma};
use ergomax_core::noise::{noise_stream, read_increments, write_increments, Process};
use ergomax_core::stepper::{simulate, Scheme, StepperConfig};
use ergomax_core::studies::{energy_law_study, MonteCarlo};

fn deterministic() -> ProblemSpec {
    ProblemSpec {
        lambda1: 0.0,
        lambda2: [0.0; 3],
        q1: NoiseSpec::empty(),
        q2: NoiseSpec::empty(),
        ..ProblemSpec::default()
    }
}

#[test]
fn noiseless_fd_norm_decays_exactly() {
    let g = StaggeredGrid::new(Domain::unit(), [5, 4, 3], &Sigma::Constant(1.0)).unwrap();
    let s = Scheme::new(&g, &deterministic(), StepperConfig::with_dt(0.05)).unwrap();
    let u0 = g.project(&sine_profile(g.domain(), 2.0));
    let n0 = g.norm2(&u0).sqrt();
    let mut norms = Vec::new();
    simulate(&s, &u0, 20, 1, |_, u| norms.push(g.norm2(u).sqrt())).unwrap();
    for (n, v) in norms.iter().enumerate() {
        let exact = n0 * (-0.05 * n as f64).exp();
        assert!((v - exact).abs() <= 1e-9 * n0, "step {n}: {v} vs {exact}");
    }
}

#[test]
fn noiseless_dg_norm_never_exceeds_damped_bound() {
    let sp = DgSpace::new(
        DgMesh::build(Domain::unit(), 1, 1, 1).unwrap(),
        &Sigma::Constant(1.0),
        QuadratureKind::Keast,
    )
    .unwrap();
    let s = Scheme::new(&sp, &deterministic(), StepperConfig::with_dt(0.05)).unwrap();
    let u0 = sp.project(&sine_profile(sp.domain(), 1.0));
    let mut prev = sp.norm2(&u0).sqrt();
    simulate(&s, &u0, 20, 1, |n, u| {
        if n > 0 {
            let cur = sp.norm2(u).sqrt();
            assert!(cur <= (-0.05f64).exp() * prev * (1.0 + 1e-9));
            prev = cur;
        }
    })
    .unwrap();
}

#[test]
fn recorded_increments_replay_the_same_path() {
    let g = StaggeredGrid::new(Domain::unit(), [3; 3], &Sigma::Constant(1.0)).unwrap();
    let spec = ProblemSpec::default();
    let s = Scheme::new(&g, &spec, StepperConfig::with_dt(0.02)).unwrap();
    let u0 = g.project(&sine_profile(g.domain(), 1.0));
    let mut r1 = noise_stream(5, Process::Multiplicative);
    let mut r2 = noise_stream(5, Process::Additive);
    let mut incs = Vec::new();
    for _ in 0..5 {
        let (a, b) = s.sample(&mut r1, &mut r2).unwrap();
        incs.push(a);
        incs.push(b);
    }
    let mut buf = Vec::new();
    write_increments(&mut buf, &incs).unwrap();
    let back = read_increments(buf.as_slice()).unwrap();
    let mut u = u0.clone();
    for pair in back.chunks(2) {
        u = s.step(&u, &s.noise(&pair[0], &pair[1]).unwrap()).unwrap().u;
    }
    let direct = simulate(&s, &u0, 5, 5, |_, _| {}).unwrap();
    assert_eq!(u, direct);
}

#[test]
fn studies_do_not_depend_on_execution_mode() {
    let g = StaggeredGrid::new(Domain::unit(), [3; 3], &Sigma::Constant(1.0)).unwrap();
    let spec = ProblemSpec::default();
    let init = g.project(&sine_profile(g.domain(), 1.0));
    let mc = |execution| MonteCarlo {
        trajectories: 4,
        seed_base: 77,
        execution,
    };
    let a = energy_law_study(&spec, &g, StepperConfig::with_dt(0.02), &init, 10, &mc(Execution::Sequential)).unwrap();
    let b = energy_law_study(&spec, &g, StepperConfig::with_dt(0.02), &init, 10, &mc(Execution::Parallel)).unwrap();
    assert_eq!(a, b);
}
