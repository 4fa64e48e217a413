//! Finite differences on a periodic cell-centred grid.
//!
//! All six components are collocated at the cell centres `(x_ī, y_j̄, z_k̄)`.
//! The curl uses the centred difference `δ⁰ Z_c = (Z_{c+1} − Z_{c−1}) / 2Δ`,
//! which is the forward difference of the two-point averages and is
//! antisymmetric on a periodic grid, so the assembled Maxwell operator
//! `M = [[0, C], [−C, 0]]` is skew. Damping uses σ sampled at the integer
//! node `(x_i, y_j, z_k)` of each cell.
//!
//! Layout: `idx = comp * N + i + I (j + J k)` with `comp` in `E1 E2 E3 H1 H2 H3`.

use crate::disc::{apply_j, check_len, Discretization, FieldState, NoiseBasis};
use crate::error::{Error, Result};
use crate::model::{basis_value, Domain, NoiseSpec, Sigma};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

#[derive(Debug, Clone)]
pub struct StaggeredGrid {
    domain: Domain,
    counts: [usize; 3],
    spacings: [f64; 3],
    sigma_nodes: Vec<f64>,
    sigma0: f64,
    sigma_constant: bool,
}

impl StaggeredGrid {
    pub fn new(domain: Domain, counts: [usize; 3], sigma: &Sigma) -> Result<Self> {
        if domain.is_degenerate() {
            return Err(Error::param("domain", "degenerate box"));
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::param("counts", format!("need at least 2 cells per axis, got {counts:?}")));
        }
        let l = domain.lengths();
        let spacings = [l[0] / counts[0] as f64, l[1] / counts[1] as f64, l[2] / counts[2] as f64];
        let n = counts.iter().product();
        let mut sigma_nodes = Vec::with_capacity(n);
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let p = [
                        domain.lo[0] + i as f64 * spacings[0],
                        domain.lo[1] + j as f64 * spacings[1],
                        domain.lo[2] + k as f64 * spacings[2],
                    ];
                    sigma_nodes.push(sigma.eval(p));
                }
            }
        }
        let sigma0 = sigma.sigma0();
        if !(sigma0 > 0.0) {
            return Err(Error::param("sigma", "sigma0 must be positive"));
        }
        if let Some(s) = sigma_nodes.iter().find(|s| !(**s >= sigma0)) {
            return Err(Error::param("sigma", format!("nodal value {s} below sigma0 = {sigma0}")));
        }
        Ok(Self {
            domain,
            counts,
            spacings,
            sigma_nodes,
            sigma0,
            sigma_constant: sigma.is_constant(),
        })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn spacings(&self) -> [f64; 3] {
        self.spacings
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacings.iter().product()
    }

    /// σ at the integer node of each cell.
    pub fn sigma_nodes(&self) -> &[f64] {
        &self.sigma_nodes
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    #[inline]
    pub fn coords(&self, c: usize) -> [usize; 3] {
        let i = c % self.counts[0];
        let j = (c / self.counts[0]) % self.counts[1];
        let k = c / (self.counts[0] * self.counts[1]);
        [i, j, k]
    }

    pub fn center(&self, c: usize) -> [f64; 3] {
        let ijk = self.coords(c);
        [0, 1, 2].map(|d| self.domain.lo[d] + (ijk[d] as f64 + 0.5) * self.spacings[d])
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|c| self.center(c)).collect()
    }

    /// Periodic neighbour of cell `c` shifted by `step` along `axis`.
    #[inline]
    pub fn neighbor(&self, c: usize, axis: usize, step: isize) -> usize {
        let mut ijk = self.coords(c);
        let n = self.counts[axis] as isize;
        ijk[axis] = (ijk[axis] as isize + step).rem_euclid(n) as usize;
        self.index(ijk[0], ijk[1], ijk[2])
    }

    fn check_scalar(&self, f: &[f64]) -> Result<()> {
        check_len(self.len(), f.len())
    }
}

/// `(Z_{c+1} − Z_c) / Δ` with periodic wraparound.
pub fn delta_forward(field: &[f64], axis: Axis, grid: &StaggeredGrid) -> Result<Vec<f64>> {
    grid.check_scalar(field)?;
    let a = axis.index();
    let h = grid.spacings[a];
    Ok((0..grid.len())
        .map(|c| (field[grid.neighbor(c, a, 1)] - field[c]) / h)
        .collect())
}

/// `(Z_{c+1} − Z_{c−1}) / 2Δ` with periodic wraparound.
pub fn delta_centered(field: &[f64], axis: Axis, grid: &StaggeredGrid) -> Result<Vec<f64>> {
    grid.check_scalar(field)?;
    let a = axis.index();
    let h = grid.spacings[a];
    Ok((0..grid.len())
        .map(|c| (field[grid.neighbor(c, a, 1)] - field[grid.neighbor(c, a, -1)]) / (2.0 * h))
        .collect())
}

/// Discrete curl of a three-component field stored back to back.
fn curl_into(grid: &StaggeredGrid, f: &[f64], out: &mut [f64], scale: f64) {
    let n = grid.len();
    let [ix, iy, iz] = grid.spacings.map(|h| 0.5 / h);
    let (f1, f2, f3) = (&f[..n], &f[n..2 * n], &f[2 * n..3 * n]);
    let [nx, ny, nz] = grid.counts;
    for k in 0..nz {
        let (kp, km) = ((k + 1) % nz, (k + nz - 1) % nz);
        for j in 0..ny {
            let (jp, jm) = ((j + 1) % ny, (j + ny - 1) % ny);
            for i in 0..nx {
                let (ip, im) = ((i + 1) % nx, (i + nx - 1) % nx);
                let c = grid.index(i, j, k);
                let xp = grid.index(ip, j, k);
                let xm = grid.index(im, j, k);
                let yp = grid.index(i, jp, k);
                let ym = grid.index(i, jm, k);
                let zp = grid.index(i, j, kp);
                let zm = grid.index(i, j, km);
                let dy3 = (f3[yp] - f3[ym]) * iy;
                let dz2 = (f2[zp] - f2[zm]) * iz;
                let dz1 = (f1[zp] - f1[zm]) * iz;
                let dx3 = (f3[xp] - f3[xm]) * ix;
                let dx2 = (f2[xp] - f2[xm]) * ix;
                let dy1 = (f1[yp] - f1[ym]) * iy;
                out[c] = scale * (dy3 - dz2);
                out[n + c] = scale * (dz1 - dx3);
                out[2 * n + c] = scale * (dx2 - dy1);
            }
        }
    }
}

/// `(curl H, −curl E)`.
pub fn apply_m(state: &FieldState, grid: &StaggeredGrid) -> Result<FieldState> {
    check_len(6 * grid.len(), state.coeffs.len())?;
    let mut out = vec![0.0; state.coeffs.len()];
    grid.maxwell(&state.coeffs, &mut out);
    Ok(FieldState {
        coeffs: out,
        step_index: state.step_index,
    })
}

/// `δ⁰_x f1 + δ⁰_y f2 + δ⁰_z f3`, the divergence matching the curl stencil.
pub fn discrete_div(f: [&[f64]; 3], grid: &StaggeredGrid) -> Result<Vec<f64>> {
    let mut div = vec![0.0; grid.len()];
    for (a, comp) in f.iter().enumerate() {
        let d = delta_centered(comp, Axis::ALL[a], grid)?;
        for (o, v) in div.iter_mut().zip(d) {
            *o += v;
        }
    }
    Ok(div)
}

impl Discretization for StaggeredGrid {
    fn dim(&self) -> usize {
        6 * self.len()
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn sigma0(&self) -> f64 {
        self.sigma0
    }

    fn is_sigma_constant(&self) -> bool {
        self.sigma_constant
    }

    fn maxwell(&self, u: &[f64], out: &mut [f64]) {
        let n3 = 3 * self.len();
        let (e, h) = u.split_at(n3);
        let (oe, oh) = out.split_at_mut(n3);
        curl_into(self, h, oe, 1.0);
        curl_into(self, e, oh, -1.0);
    }

    fn maxwell_adjoint(&self, u: &[f64], out: &mut [f64]) {
        self.maxwell(u, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    fn damping(&self, dt: f64) -> Vec<f64> {
        let e: Vec<f64> = self.sigma_nodes.iter().map(|s| (-s * dt).exp()).collect();
        (0..6).flat_map(|_| e.iter().copied()).collect()
    }

    fn noise_basis(&self, ns: &NoiseSpec) -> Result<NoiseBasis> {
        let centers = self.centers();
        let mut table = Vec::with_capacity(ns.len() * centers.len());
        for &m in ns.modes() {
            table.extend(centers.iter().map(|&p| basis_value(&self.domain, m, p)));
        }
        NoiseBasis::new(ns.len(), centers.len(), table)
    }

    fn multiplicative(&self, u: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.len();
        for c in 0..n {
            let v = apply_j([0, 1, 2, 3, 4, 5].map(|k| u[k * n + c]));
            for k in 0..6 {
                out[k * n + c] = v[k] * w[c];
            }
        }
    }

    fn additive(&self, lambda2_tilde: &[f64; 6], w: &[f64], out: &mut [f64]) {
        let n = self.len();
        for k in 0..6 {
            for c in 0..n {
                out[k * n + c] = lambda2_tilde[k] * w[c];
            }
        }
    }

    fn project(&self, f: &dyn Fn([f64; 3]) -> [f64; 6]) -> Vec<f64> {
        let n = self.len();
        let mut u = vec![0.0; 6 * n];
        for c in 0..n {
            let v = f(self.center(c));
            for k in 0..6 {
                u[k * n + c] = v[k];
            }
        }
        u
    }

    /// Value of the cell containing `p` (piecewise constant reconstruction).
    fn evaluate(&self, u: &[f64], p: [f64; 3]) -> Result<[f64; 6]> {
        self.domain.check(p)?;
        let mut ijk = [0usize; 3];
        for d in 0..3 {
            let s = ((p[d] - self.domain.lo[d]) / self.spacings[d]).floor();
            ijk[d] = (s.max(0.0) as usize).min(self.counts[d] - 1);
        }
        let c = self.index(ijk[0], ijk[1], ijk[2]);
        let n = self.len();
        Ok([0, 1, 2, 3, 4, 5].map(|k| u[k * n + c]))
    }

    fn div_norm2(&self, u: &[f64]) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for off in [0, 3 * n] {
            let f = [&u[off..off + n], &u[off + n..off + 2 * n], &u[off + 2 * n..off + 3 * n]];
            let d = discrete_div(f, self).expect("state matches grid");
            s += d.iter().map(|v| v * v).sum::<f64>();
        }
        s * self.cell_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> StaggeredGrid {
        StaggeredGrid::new(Domain::unit(), [n, n, n], &Sigma::Constant(1.0)).unwrap()
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn dense_m(g: &StaggeredGrid) -> DMatrix<f64> {
        let d = g.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            g.maxwell(&e, &mut col);
            for i in 0..d {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    #[test]
    fn single_cell_axis_rejected() {
        assert!(StaggeredGrid::new(Domain::unit(), [1, 4, 4], &Sigma::Constant(1.0)).is_err());
    }

    #[test]
    fn constant_field_differences_vanish() {
        let g = grid(4);
        let f = vec![3.5; g.len()];
        for ax in Axis::ALL {
            assert!(delta_forward(&f, ax, &g).unwrap().iter().all(|v| v.abs() < 1e-14));
        }
        let u = FieldState::new(vec![1.25; g.dim()]);
        assert!(apply_m(&u, &g).unwrap().coeffs.iter().all(|v| v.abs() < 1e-13));
        assert!(discrete_div([&f, &f, &f], &g).unwrap().iter().all(|v| v.abs() < 1e-13));
        assert!(delta_forward(&f[1..], Axis::X, &g).is_err());
    }

    #[test]
    fn forward_difference_of_sine_matches_per_node_oracle() {
        let g = StaggeredGrid::new(Domain::new([0.0; 3], [2.0, 1.0, 1.0]), [8, 3, 2], &Sigma::Constant(1.0)).unwrap();
        let f: Vec<f64> = g.centers().iter().map(|p| (2.0 * PI * p[0] / 2.0).sin()).collect();
        let d = delta_forward(&f, Axis::X, &g).unwrap();
        let h = 0.25;
        for c in 0..g.len() {
            let x = g.center(c)[0];
            let expect = ((2.0 * PI * (x + h) / 2.0).sin() - (2.0 * PI * x / 2.0).sin()) / h;
            assert!((d[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_sine_ramp_matches_oracle() {
        let g = grid(6);
        let f1: Vec<f64> = g.centers().iter().map(|p| (2.0 * PI * p[0]).sin()).collect();
        let zero = vec![0.0; g.len()];
        let div = discrete_div([&f1, &zero, &zero], &g).unwrap();
        let h = 1.0 / 6.0;
        for c in 0..g.len() {
            let x = g.center(c)[0];
            let expect = ((2.0 * PI * (x + h)).sin() - (2.0 * PI * (x - h)).sin()) / (2.0 * h);
            assert!((div[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn maxwell_is_skew_against_dense_transpose() {
        let g = grid(4);
        let m = dense_m(&g);
        let skew = (&m + m.transpose()).abs().max();
        assert!(skew < 1e-12, "{skew}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let u = random(g.dim(), &mut rng);
            let v = random(g.dim(), &mut rng);
            let mut mu = vec![0.0; g.dim()];
            let mut mv = vec![0.0; g.dim()];
            g.maxwell(&u, &mut mu);
            g.maxwell(&v, &mut mv);
            let s = g.inner(&mu, &v) + g.inner(&u, &mv);
            assert!(s.abs() <= 1e-12 * g.norm2(&u).sqrt() * g.norm2(&v).sqrt());
        }
    }

    #[test]
    fn plane_wave_is_eigenvector_of_curl_squared() {
        // M² (E, 0) = −(C² E, 0) and C² on a Fourier mode is |k̃|² P_k⊥ with k̃_s = sin(k_s Δ)/Δ
        let g = grid(4);
        let n = g.len();
        let m = dense_m(&g);
        let m2 = &m * &m;
        let kvec = [1.0, 2.0, 1.0].map(|k: f64| 2.0 * PI * k);
        let kt: [f64; 3] = [0, 1, 2].map(|d| (kvec[d] * 0.25).sin() / 0.25);
        let k2: f64 = kt.iter().map(|v| v * v).sum();
        let amp = [1.0, -0.5, 0.3];
        for phase in [0.0, PI / 2.0] {
            let mut u = vec![0.0; 6 * n];
            for c in 0..n {
                let p = g.center(c);
                let s = (kvec[0] * p[0] + kvec[1] * p[1] + kvec[2] * p[2] + phase).cos();
                for d in 0..3 {
                    u[d * n + c] = amp[d] * s;
                }
            }
            let ud = nalgebra::DVector::from_vec(u.clone());
            let out = &m2 * &ud;
            let ka: f64 = (0..3).map(|d| kt[d] * amp[d]).sum();
            for c in 0..n {
                let p = g.center(c);
                let s = (kvec[0] * p[0] + kvec[1] * p[1] + kvec[2] * p[2] + phase).cos();
                for d in 0..3 {
                    let transverse = amp[d] - kt[d] * ka / k2;
                    let expect = -k2 * transverse * s;
                    assert!((out[d * n + c] - expect).abs() < 1e-10, "{} {}", out[d * n + c], expect);
                }
                for d in 3..6 {
                    assert!(out[d * n + c].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn curl_output_is_divergence_free() {
        let g = StaggeredGrid::new(Domain::unit(), [4, 5, 6], &Sigma::Constant(1.0)).unwrap();
        let n = g.len();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random(g.dim(), &mut rng);
        let mu = apply_m(&FieldState::new(u), &g).unwrap().coeffs;
        for off in [0, 3 * n] {
            let div = discrete_div([&mu[off..off + n], &mu[off + n..off + 2 * n], &mu[off + 2 * n..off + 3 * n]], &g)
                .unwrap();
            assert!(div.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn linear_and_translation_equivariant() {
        let g = StaggeredGrid::new(Domain::unit(), [4, 3, 5], &Sigma::Constant(1.0)).unwrap();
        let n = g.len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random(g.dim(), &mut rng);
        let v = random(g.dim(), &mut rng);
        let (a, b) = (0.7, -2.3);
        let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let mut mu = vec![0.0; g.dim()];
        let mut mv = vec![0.0; g.dim()];
        let mut mw = vec![0.0; g.dim()];
        g.maxwell(&u, &mut mu);
        g.maxwell(&v, &mut mv);
        g.maxwell(&w, &mut mw);
        for i in 0..g.dim() {
            assert!((mw[i] - a * mu[i] - b * mv[i]).abs() < 1e-12);
        }
        for axis in 0..3 {
            let shift = |x: &[f64]| {
                let mut s = vec![0.0; x.len()];
                for k in 0..6 {
                    for c in 0..n {
                        s[k * n + g.neighbor(c, axis, 1)] = x[k * n + c];
                    }
                }
                s
            };
            let mut ms = vec![0.0; g.dim()];
            g.maxwell(&shift(&u), &mut ms);
            let sm = shift(&mu);
            for i in 0..g.dim() {
                assert!((ms[i] - sm[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_sampled_at_integer_nodes() {
        let s = Sigma::function(1.0, |p| 1.0 + p[0]);
        let g = StaggeredGrid::new(Domain::unit(), [4, 2, 2], &s).unwrap();
        assert_eq!(g.sigma_nodes()[1], 1.25);
        let e = g.damping(0.1);
        assert!((e[g.len() * 5 + 2] - (-0.15f64).exp()).abs() < 1e-15);
        let bad = Sigma::function(1.0, |p| 0.5 + p[0]);
        assert!(StaggeredGrid::new(Domain::unit(), [4, 2, 2], &bad).is_err());
    }
}
