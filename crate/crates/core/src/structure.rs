//! Discrete energy, energy evolution law and conformal multi-symplectic law on
//! the periodic finite-difference grid.
//!
//! For tangent states `a`, `b` the 2-form is `ω(a, b) = a · F b` per node with
//! `F = [[0, I], [−I, 0]]`. With `x = A a = (a' + e a)/2` and `y = A b`, the flux
//! across the face between nodes `c` and `c + e_s` is
//! `κ_s = ½ (x_c · K_s y_{c+s} + x_{c+s} · K_s y_c)` with `K_s = diag(D_s, D_s)`
//! and `D_s v = e_s × v`. The scheme then satisfies, node by node,
//! `(ω' − e² ω)/dt + Σ_s (κ_{s,c+½} − κ_{s,c−½})/Δ_s = 0`.

use crate::disc::check_len;
use crate::error::Result;
use crate::fd::StaggeredGrid;

/// Two tangent states on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// `Φ = ΔV Σ (|E|² + |H|²)`.
pub fn discrete_energy(u: &[f64], grid: &StaggeredGrid) -> f64 {
    grid.cell_volume() * u.iter().map(|v| v * v).sum::<f64>()
}

/// `ΔV Σ w²` for a scalar field on the cell centres.
pub fn field_norm2(w: &[f64], grid: &StaggeredGrid) -> f64 {
    grid.cell_volume() * w.iter().map(|v| v * v).sum::<f64>()
}

/// `Φ(u') − ΔV Σ e²|u|² − 2 ΔV Σ (λ̃2 · A u) ΔW2` with `A u = (u' + e u)/2`.
pub fn energy_law_residual(
    u: &[f64],
    u_next: &[f64],
    grid: &StaggeredGrid,
    w2: &[f64],
    lambda2_tilde: &[f64; 6],
    dt: f64,
) -> Result<f64> {
    let n = grid.len();
    check_len(6 * n, u.len())?;
    check_len(6 * n, u_next.len())?;
    check_len(n, w2.len())?;
    let dv = grid.cell_volume();
    let mut decayed = 0.0;
    let mut forcing = 0.0;
    for (c, &s) in grid.sigma_nodes().iter().enumerate() {
        let e = (-s * dt).exp();
        let mut ups = 0.0;
        for k in 0..6 {
            let i = k * n + c;
            decayed += e * e * u[i] * u[i];
            ups += lambda2_tilde[k] * 0.5 * (u_next[i] + e * u[i]);
        }
        forcing += ups * w2[c];
    }
    Ok(discrete_energy(u_next, grid) - dv * decayed - 2.0 * dv * forcing)
}

/// `F = [[0, I3], [−I3, 0]]`.
pub fn f_matrix() -> [[f64; 6]; 6] {
    let mut f = [[0.0; 6]; 6];
    for i in 0..3 {
        f[i][i + 3] = 1.0;
        f[i + 3][i] = -1.0;
    }
    f
}

/// `K_s = diag(D_s, D_s)` with `D_s v = e_s × v`.
pub fn k_matrix(s: usize) -> [[f64; 6]; 6] {
    let mut k = [[0.0; 6]; 6];
    let (p, q) = ((s + 1) % 3, (s + 2) % 3);
    for off in [0, 3] {
        // (e_s × v)_p = −v_q, (e_s × v)_q = v_p for cyclic (s, p, q)
        k[off + p][off + q] = -1.0;
        k[off + q][off + p] = 1.0;
    }
    k
}

fn matvec(m: &[[f64; 6]; 6], v: &[f64; 6]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks `F² = −I`, `Fᵀ = −F` and `K_sᵀ = −K_s`; returns the largest deviation.
pub fn structure_matrix_defect() -> f64 {
    let f = f_matrix();
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let ff: f64 = (0..6).map(|k| f[i][k] * f[k][j]).sum();
            let id = if i == j { -1.0 } else { 0.0 };
            worst = worst.max((ff - id).abs()).max((f[i][j] + f[j][i]).abs());
            for s in 0..3 {
                let k = k_matrix(s);
                worst = worst.max((k[i][j] + k[j][i]).abs());
            }
        }
    }
    worst
}

fn node(u: &[f64], n: usize, c: usize) -> [f64; 6] {
    [0, 1, 2, 3, 4, 5].map(|k| u[k * n + c])
}

/// Nodewise `ω(a, b) = a · F b`.
pub fn omega_form(pair: &SymplecticPair, grid: &StaggeredGrid) -> Result<Vec<f64>> {
    let n = grid.len();
    check_len(6 * n, pair.a.len())?;
    check_len(6 * n, pair.b.len())?;
    let f = f_matrix();
    Ok((0..n)
        .map(|c| dot6(&node(&pair.a, n, c), &matvec(&f, &node(&pair.b, n, c))))
        .collect())
}

/// `κ_s` on the face between `c` and its `+s` neighbour, for the midpoint states `x`, `y`.
pub fn kappa(x: &[f64], y: &[f64], grid: &StaggeredGrid, s: usize, c: usize) -> f64 {
    let n = grid.len();
    let k = k_matrix(s);
    let cp = grid.neighbor(c, s, 1);
    let (xc, xp) = (node(x, n, c), node(x, n, cp));
    let (yc, yp) = (node(y, n, c), node(y, n, cp));
    0.5 * (dot6(&xc, &matvec(&k, &yp)) + dot6(&xp, &matvec(&k, &yc)))
}

fn midpoint(prev: &[f64], next: &[f64], grid: &StaggeredGrid, dt: f64) -> Vec<f64> {
    let n = grid.len();
    let e: Vec<f64> = grid.sigma_nodes().iter().map(|s| (-s * dt).exp()).collect();
    next.iter()
        .zip(prev)
        .enumerate()
        .map(|(i, (p, q))| 0.5 * (p + e[i % n] * q))
        .collect()
}

/// Nodewise residual `(ω' − e² ω)/dt + Σ_s (κ_{s,c+½} − κ_{s,c−½})/Δ_s`.
pub fn msymp_residual(
    pair_n: &SymplecticPair,
    pair_np1: &SymplecticPair,
    grid: &StaggeredGrid,
    dt: f64,
) -> Result<Vec<f64>> {
    let n = grid.len();
    let w0 = omega_form(pair_n, grid)?;
    let w1 = omega_form(pair_np1, grid)?;
    let x = midpoint(&pair_n.a, &pair_np1.a, grid, dt);
    let y = midpoint(&pair_n.b, &pair_np1.b, grid, dt);
    let h = grid.spacings();
    let mut out = Vec::with_capacity(n);
    for c in 0..n {
        let e = (-grid.sigma_nodes()[c] * dt).exp();
        let mut r = (w1[c] - e * e * w0[c]) / dt;
        for s in 0..3 {
            let cm = grid.neighbor(c, s, -1);
            r += (kappa(&x, &y, grid, s, c) - kappa(&x, &y, grid, s, cm)) / h[s];
        }
        out.push(r);
    }
    Ok(out)
}

/// Global budget `ΔV Σ ω' − ΔV Σ e² ω`, which vanishes because the fluxes telescope.
pub fn omega_budget(pair_n: &SymplecticPair, pair_np1: &SymplecticPair, grid: &StaggeredGrid, dt: f64) -> Result<f64> {
    let w0 = omega_form(pair_n, grid)?;
    let w1 = omega_form(pair_np1, grid)?;
    let s: f64 = w1
        .iter()
        .zip(&w0)
        .zip(grid.sigma_nodes())
        .map(|((a, b), sg)| a - (-2.0 * sg * dt).exp() * b)
        .sum();
    Ok(grid.cell_volume() * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disc::Discretization;
    use crate::model::{Domain, ProblemSpec, Sigma};
    use crate::noise::{noise_stream, Process};
    use crate::stepper::{Scheme, StepperConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, sigma: &Sigma) -> StaggeredGrid {
        StaggeredGrid::new(Domain::unit(), [n; 3], sigma).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn energy_examples() {
        let g = grid(2, &Sigma::Constant(1.0));
        assert_eq!(discrete_energy(&vec![0.0; g.dim()], &g), 0.0);
        assert!((discrete_energy(&vec![1.0; g.dim()], &g) - 6.0).abs() < 1e-14);
        let g = grid(3, &Sigma::Constant(1.0));
        let u = random(g.dim(), 1);
        let n = g.len();
        let mut naive = 0.0;
        for c in 0..n {
            for k in 0..6 {
                naive += u[k * n + c] * u[k * n + c] / 27.0;
            }
        }
        assert!((discrete_energy(&u, &g) - naive).abs() < 1e-14);
    }

    #[test]
    fn matrices_have_the_stated_structure() {
        assert_eq!(structure_matrix_defect(), 0.0);
        // D_s v = e_s × v
        let v = [0.3, -1.2, 2.5];
        for s in 0..3 {
            let k = k_matrix(s);
            let mut es = [0.0; 3];
            es[s] = 1.0;
            let cross = [
                es[1] * v[2] - es[2] * v[1],
                es[2] * v[0] - es[0] * v[2],
                es[0] * v[1] - es[1] * v[0],
            ];
            let kv = matvec(&k, &[v[0], v[1], v[2], 0.0, 0.0, 0.0]);
            for d in 0..3 {
                assert_eq!(kv[d], cross[d]);
            }
        }
    }

    #[test]
    fn omega_examples() {
        let g = grid(2, &Sigma::Constant(1.0));
        let n = g.len();
        let a = random(g.dim(), 2);
        let same = SymplecticPair { a: a.clone(), b: a.clone() };
        assert!(omega_form(&same, &g).unwrap().iter().all(|w| w.abs() < 1e-15));
        let mut e1 = vec![0.0; g.dim()];
        let mut h1 = vec![0.0; g.dim()];
        for c in 0..n {
            e1[c] = 1.0;
            h1[3 * n + c] = 1.0;
        }
        let w = omega_form(&SymplecticPair { a: e1, b: h1 }, &g).unwrap();
        assert!(w.iter().all(|v| *v == 1.0));
        let b = random(g.dim(), 3);
        let w = omega_form(&SymplecticPair { a: a.clone(), b: b.clone() }, &g).unwrap();
        let f = f_matrix();
        for c in 0..n {
            let mut s = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    s += a[i * n + c] * f[i][j] * b[j * n + c];
                }
            }
            assert!((w[c] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn kappa_is_antisymmetric() {
        let g = grid(3, &Sigma::Constant(1.0));
        let x = random(g.dim(), 4);
        let y = random(g.dim(), 5);
        for s in 0..3 {
            for c in 0..g.len() {
                assert!((kappa(&x, &y, &g, s, c) + kappa(&y, &x, &g, s, c)).abs() < 1e-15);
            }
        }
    }

    fn tangent_check(spec: &ProblemSpec, sigma: Sigma, steps: usize) -> (f64, f64, f64) {
        let g = grid(4, &sigma);
        let spec = ProblemSpec { sigma, ..spec.clone() };
        let s = Scheme::new(&g, &spec, StepperConfig::with_dt(0.05)).unwrap();
        let mut a = random(g.dim(), 6);
        let mut b = random(g.dim(), 7);
        let mut u = random(g.dim(), 8);
        let mut r1 = noise_stream(9, Process::Multiplicative);
        let mut r2 = noise_stream(9, Process::Additive);
        let (mut worst, mut budget, mut energy) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..steps {
            let (i1, i2) = s.sample(&mut r1, &mut r2).unwrap();
            let noise = s.noise(&i1, &i2).unwrap();
            let a1 = s.step_homogeneous(&a, &noise).unwrap().u;
            let b1 = s.step_homogeneous(&b, &noise).unwrap().u;
            let p0 = SymplecticPair { a, b };
            let p1 = SymplecticPair { a: a1, b: b1 };
            let scale = g.norm2(&p0.a).sqrt() * g.norm2(&p0.b).sqrt();
            let r = msymp_residual(&p0, &p1, &g, 0.05).unwrap();
            worst = worst.max(r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
            budget = budget.max(omega_budget(&p0, &p1, &g, 0.05).unwrap().abs() / scale);
            let u1 = s.step(&u, &noise).unwrap().u;
            let res = energy_law_residual(&u, &u1, &g, &noise.w2, &spec.lambda2_tilde(), 0.05).unwrap();
            energy = energy.max(res.abs() / (discrete_energy(&u1, &g) + field_norm2(&noise.w2, &g)));
            u = u1;
            a = p1.a;
            b = p1.b;
        }
        (worst, budget, energy)
    }

    #[test]
    fn laws_hold_along_noisy_steps() {
        let (w, b, e) = tangent_check(&ProblemSpec::default(), Sigma::Constant(1.0), 10);
        assert!(w < 100.0 * 1e-10, "{w}");
        assert!(b < 100.0 * 1e-10, "{b}");
        assert!(e < 100.0 * 1e-10, "{e}");
    }

    #[test]
    fn laws_hold_with_variable_sigma() {
        let sigma = Sigma::function(1.0, |p| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * p[0]).sin().powi(2));
        let (w, _, e) = tangent_check(&ProblemSpec::default(), sigma, 5);
        assert!(w < 100.0 * 1e-10, "{w}");
        assert!(e < 100.0 * 1e-10, "{e}");
    }

    #[test]
    fn quiet_energy_residual_vanishes() {
        for lambda1 in [0.0, 1.0] {
            let spec = ProblemSpec {
                lambda1,
                lambda2: [0.0; 3],
                ..ProblemSpec::default()
            };
            let (_, _, e) = tangent_check(&spec, Sigma::Constant(1.0), 5);
            assert!(e < 10.0 * 1e-10, "{e}");
        }
    }

    #[test]
    fn zero_tangents_have_zero_residual() {
        let g = grid(3, &Sigma::Constant(1.0));
        let z = SymplecticPair {
            a: vec![0.0; g.dim()],
            b: vec![0.0; g.dim()],
        };
        assert!(msymp_residual(&z, &z, &g, 0.1).unwrap().iter().all(|r| *r == 0.0));
    }
}
