//! Piecewise-linear dG space, the L² projection and the discrete Maxwell operator.
//!
//! Layout: `idx = cell * 24 + comp * 4 + a`, with `a` the local vertex of the
//! barycentric basis function `λ_a` and `comp` in `E1 E2 E3 H1 H2 H3`.
//!
//! The operator is assembled as the bilinear form `B[v, u] = ⟨M_h u, v⟩` with
//! central fluxes and jump penalties on interior faces and weak PEC terms on
//! exterior faces; the stepping operator is `M_h = Mass⁻¹ B`.

use crate::dg::mesh::{cross, dot3, DgMesh};
use crate::dg::quadrature::{QuadratureKind, TetRule};
use crate::disc::{apply_j, check_len, Discretization, FieldState, NoiseBasis};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, LinearOperator, TransposeOperator};
use crate::model::{basis_value, Domain, NoiseSpec, Sigma};

pub const DOFS_PER_CELL: usize = 24;
/// Noise-field entries per cell: the ten products `∫ w λ_a λ_b` (a ≤ b) and the four `∫ w λ_a`.
pub const NOISE_PER_CELL: usize = 14;

const PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

#[inline]
fn pair_index(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    PAIRS.iter().position(|&p| p == (a, b)).expect("valid pair")
}

#[inline]
pub fn dof(cell: usize, comp: usize, a: usize) -> usize {
    cell * DOFS_PER_CELL + comp * 4 + a
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// `N_ik = ε_ijk n_j`, so that `(n × v)_i = N_ik v_k`.
fn cross_matrix(n: [f64; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] = (0..3).map(|j| levi_civita(i, j, k) * n[j]).sum();
        }
    }
    m
}

/// `P = I − n nᵀ`, so that `(n × a)·(n × b) = aᵀ P b`.
fn tangential_projector(n: [f64; 3]) -> [[f64; 3]; 3] {
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            p[i][k] = if i == k { 1.0 } else { 0.0 } - n[i] * n[k];
        }
    }
    p
}

/// Applies the per-cell inverse mass `(20/|K|)(I − 11ᵀ/5)` to a 4-vector.
#[inline]
fn mass_inverse(vol: f64, r: [f64; 4]) -> [f64; 4] {
    let s = (r[0] + r[1] + r[2] + r[3]) / 5.0;
    r.map(|v| 20.0 / vol * (v - s))
}

#[derive(Debug, Clone)]
pub struct DgSpace {
    mesh: DgMesh,
    b: CsrMatrix,
    bt: CsrMatrix,
    penalty: CsrMatrix,
    sigma0: f64,
    rule: TetRule,
}

impl DgSpace {
    /// Requires constant σ.
    pub fn new(mesh: DgMesh, sigma: &Sigma, quadrature: QuadratureKind) -> Result<Self> {
        let sigma0 = match sigma {
            Sigma::Constant(s) if *s > 0.0 => *s,
            Sigma::Constant(s) => return Err(Error::param("sigma", format!("sigma0 = {s} must be positive"))),
            Sigma::Function { .. } => {
                return Err(Error::param("sigma", "the dG discretization requires constant sigma"))
            }
        };
        let (b, penalty) = assemble(&mesh)?;
        let bt = b.transpose();
        Ok(Self {
            mesh,
            b,
            bt,
            penalty,
            sigma0,
            rule: TetRule::new(quadrature),
        })
    }

    pub fn mesh(&self) -> &DgMesh {
        &self.mesh
    }

    /// The assembled bilinear form `B[test, trial]`.
    pub fn bilinear_form(&self) -> &CsrMatrix {
        &self.b
    }

    /// Symmetric penalty form `P`, with `B + Bᵀ = −2P`.
    pub fn penalty_form(&self) -> &CsrMatrix {
        &self.penalty
    }

    /// `out = Mass⁻¹ r`.
    pub fn apply_mass_inverse(&self, r: &[f64], out: &mut [f64]) {
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            for comp in 0..6 {
                let o = dof(c, comp, 0);
                let v = mass_inverse(cell.volume, [r[o], r[o + 1], r[o + 2], r[o + 3]]);
                out[o..o + 4].copy_from_slice(&v);
            }
        }
    }

    /// `out = Mass u`.
    pub fn apply_mass(&self, u: &[f64], out: &mut [f64]) {
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            for comp in 0..6 {
                let o = dof(c, comp, 0);
                let s: f64 = u[o..o + 4].iter().sum();
                for a in 0..4 {
                    out[o + a] = cell.volume / 20.0 * (u[o + a] + s);
                }
            }
        }
    }

    fn quad_points(&self, c: usize) -> impl Iterator<Item = ([f64; 4], [f64; 3], f64)> + '_ {
        let vol = self.mesh.cells[c].volume;
        self.rule
            .points
            .iter()
            .zip(&self.rule.weights)
            .map(move |(lam, w)| (*lam, self.mesh.point(c, *lam), w * vol))
    }

    /// `π_h f` by per-cell mass solves.
    pub fn l2_project(&self, f: &dyn Fn([f64; 3]) -> [f64; 6]) -> FieldState {
        let mut u = vec![0.0; self.dim()];
        for c in 0..self.mesh.n_cells() {
            let mut rhs = [[0.0; 4]; 6];
            for (lam, p, w) in self.quad_points(c) {
                let v = f(p);
                for comp in 0..6 {
                    for a in 0..4 {
                        rhs[comp][a] += w * v[comp] * lam[a];
                    }
                }
            }
            for (comp, r) in rhs.iter().enumerate() {
                let v = mass_inverse(self.mesh.cells[c].volume, *r);
                u[dof(c, comp, 0)..dof(c, comp, 0) + 4].copy_from_slice(&v);
            }
        }
        FieldState::new(u)
    }

    /// `π_h[J u w]` for a scalar field `w`, integrated with the space's quadrature rule.
    pub fn multiply_project(&self, state: &FieldState, w: &dyn Fn([f64; 3]) -> f64) -> Result<FieldState> {
        check_len(self.dim(), state.coeffs.len())?;
        let u = &state.coeffs;
        let mut out = vec![0.0; self.dim()];
        for c in 0..self.mesh.n_cells() {
            let mut rhs = [[0.0; 4]; 6];
            for (lam, p, wt) in self.quad_points(c) {
                let mut val = [0.0; 6];
                for (comp, v) in val.iter_mut().enumerate() {
                    *v = (0..4).map(|a| u[dof(c, comp, a)] * lam[a]).sum();
                }
                let ju = apply_j(val);
                let ww = w(p);
                for comp in 0..6 {
                    for a in 0..4 {
                        rhs[comp][a] += wt * ww * ju[comp] * lam[a];
                    }
                }
            }
            for (comp, r) in rhs.iter().enumerate() {
                let v = mass_inverse(self.mesh.cells[c].volume, *r);
                out[dof(c, comp, 0)..dof(c, comp, 0) + 4].copy_from_slice(&v);
            }
        }
        Ok(FieldState {
            coeffs: out,
            step_index: state.step_index,
        })
    }

    /// Point evaluation of a dG state inside a known cell.
    pub fn evaluate_in(&self, u: &[f64], c: usize, p: [f64; 3]) -> [f64; 6] {
        let lam = self.mesh.barycentric(c, p);
        [0, 1, 2, 3, 4, 5].map(|comp| (0..4).map(|a| u[dof(c, comp, a)] * lam[a]).sum())
    }
}

/// Assembles the bilinear form `B` and the penalty form `P`.
fn assemble(mesh: &DgMesh) -> Result<(CsrMatrix, CsrMatrix)> {
    let n = mesh.n_cells() * DOFS_PER_CELL;
    let mut t = Vec::new();
    let mut pen = Vec::new();
    // volume: ⟨curl H, ψ⟩ − ⟨curl E, φ⟩
    for (c, cell) in mesh.cells.iter().enumerate() {
        let q = cell.volume / 4.0;
        for a in 0..4 {
            let g = cell.grads[a];
            for b in 0..4 {
                for i in 0..3 {
                    for k in 0..3 {
                        let v: f64 = (0..3).map(|j| levi_civita(i, j, k) * g[j]).sum::<f64>() * q;
                        if v != 0.0 {
                            t.push((dof(c, i, b), dof(c, 3 + k, a), v));
                            t.push((dof(c, 3 + i, b), dof(c, k, a), -v));
                        }
                    }
                }
            }
        }
    }
    let local = |cell: usize, v: usize| -> usize {
        mesh.cells[cell]
            .vertices
            .iter()
            .position(|&x| x == v)
            .expect("face vertex belongs to cell")
    };
    for f in &mesh.interior_faces {
        let nm = cross_matrix(f.normal);
        let pm = tangential_projector(f.normal);
        let sides = [(f.cell, -1.0), (f.neighbor, 1.0)];
        for &(ct, st) in &sides {
            for &(cs, ss) in &sides {
                for &vb in &f.vertices {
                    for &va in &f.vertices {
                        let m = f.area * if va == vb { 2.0 } else { 1.0 } / 12.0;
                        let (b, a) = (local(ct, vb), local(cs, va));
                        for i in 0..3 {
                            for k in 0..3 {
                                let cr = 0.5 * ss * nm[i][k] * m;
                                if cr != 0.0 {
                                    t.push((dof(ct, i, b), dof(cs, 3 + k, a), cr));
                                    t.push((dof(ct, 3 + i, b), dof(cs, k, a), -cr));
                                }
                                let p = 0.5 * ss * st * pm[i][k] * m;
                                if p != 0.0 {
                                    t.push((dof(ct, i, b), dof(cs, k, a), -p));
                                    t.push((dof(ct, 3 + i, b), dof(cs, 3 + k, a), -p));
                                    pen.push((dof(ct, i, b), dof(cs, k, a), p));
                                    pen.push((dof(ct, 3 + i, b), dof(cs, 3 + k, a), p));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for f in &mesh.exterior_faces {
        let nm = cross_matrix(f.normal);
        let pm = tangential_projector(f.normal);
        let c = f.cell;
        for &vb in &f.vertices {
            for &va in &f.vertices {
                let m = f.area * if va == vb { 2.0 } else { 1.0 } / 12.0;
                let (b, a) = (local(c, vb), local(c, va));
                for i in 0..3 {
                    for k in 0..3 {
                        if nm[i][k] != 0.0 {
                            t.push((dof(c, 3 + i, b), dof(c, k, a), nm[i][k] * m));
                        }
                        if pm[i][k] != 0.0 {
                            t.push((dof(c, i, b), dof(c, k, a), -pm[i][k] * m));
                            pen.push((dof(c, i, b), dof(c, k, a), pm[i][k] * m));
                        }
                    }
                }
            }
        }
    }
    Ok((CsrMatrix::from_triplets(n, n, &t)?, CsrMatrix::from_triplets(n, n, &pen)?))
}

impl Discretization for DgSpace {
    fn dim(&self) -> usize {
        self.mesh.n_cells() * DOFS_PER_CELL
    }

    fn domain(&self) -> &Domain {
        &self.mesh.domain
    }

    fn sigma0(&self) -> f64 {
        self.sigma0
    }

    fn is_sigma_constant(&self) -> bool {
        true
    }

    fn maxwell(&self, u: &[f64], out: &mut [f64]) {
        let mut r = vec![0.0; self.dim()];
        self.b.apply(u, &mut r);
        self.apply_mass_inverse(&r, out);
    }

    fn maxwell_adjoint(&self, u: &[f64], out: &mut [f64]) {
        let mut r = vec![0.0; self.dim()];
        self.bt.apply(u, &mut r);
        self.apply_mass_inverse(&r, out);
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            let mut cs = 0.0;
            for comp in 0..6 {
                let o = dof(c, comp, 0);
                let (x, y) = (&a[o..o + 4], &b[o..o + 4]);
                let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let sx: f64 = x.iter().sum();
                let sy: f64 = y.iter().sum();
                cs += d + sx * sy;
            }
            s += cell.volume / 20.0 * cs;
        }
        s
    }

    fn damping(&self, dt: f64) -> Vec<f64> {
        vec![(-self.sigma0 * dt).exp(); self.dim()]
    }

    fn noise_basis(&self, ns: &NoiseSpec) -> Result<NoiseBasis> {
        let nc = self.mesh.n_cells();
        let field_len = nc * NOISE_PER_CELL;
        let mut table = vec![0.0; ns.len() * field_len];
        for c in 0..nc {
            for (lam, p, w) in self.quad_points(c) {
                for (m, &mode) in ns.modes().iter().enumerate() {
                    let q = w * basis_value(&self.mesh.domain, mode, p);
                    let row = &mut table[m * field_len + c * NOISE_PER_CELL..][..NOISE_PER_CELL];
                    for (k, &(a, b)) in PAIRS.iter().enumerate() {
                        row[k] += q * lam[a] * lam[b];
                    }
                    for a in 0..4 {
                        row[10 + a] += q * lam[a];
                    }
                }
            }
        }
        NoiseBasis::new(ns.len(), field_len, table)
    }

    fn multiplicative(&self, u: &[f64], w: &[f64], out: &mut [f64]) {
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            let g = &w[c * NOISE_PER_CELL..(c + 1) * NOISE_PER_CELL];
            for comp in 0..6 {
                // (J u)_E = −u_H, (J u)_H = u_E
                let (src, sign) = if comp < 3 { (comp + 3, -1.0) } else { (comp - 3, 1.0) };
                let o = dof(c, src, 0);
                let v = &u[o..o + 4];
                let mut r = [0.0; 4];
                for (b, rb) in r.iter_mut().enumerate() {
                    *rb = sign * (0..4).map(|a| v[a] * g[pair_index(a, b)]).sum::<f64>();
                }
                let x = mass_inverse(cell.volume, r);
                out[dof(c, comp, 0)..dof(c, comp, 0) + 4].copy_from_slice(&x);
            }
        }
    }

    fn additive(&self, lambda2_tilde: &[f64; 6], w: &[f64], out: &mut [f64]) {
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            let g = &w[c * NOISE_PER_CELL + 10..(c + 1) * NOISE_PER_CELL];
            for comp in 0..6 {
                let r = [0, 1, 2, 3].map(|a| lambda2_tilde[comp] * g[a]);
                let x = mass_inverse(cell.volume, r);
                out[dof(c, comp, 0)..dof(c, comp, 0) + 4].copy_from_slice(&x);
            }
        }
    }

    fn project(&self, f: &dyn Fn([f64; 3]) -> [f64; 6]) -> Vec<f64> {
        self.l2_project(f).coeffs
    }

    fn evaluate(&self, u: &[f64], p: [f64; 3]) -> Result<[f64; 6]> {
        let c = self.mesh.locate(p)?;
        Ok(self.evaluate_in(u, c, p))
    }

    /// Broken (cellwise) divergence.
    fn div_norm2(&self, u: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            for off in [0, 3] {
                let mut div = 0.0;
                for a in 0..4 {
                    for d in 0..3 {
                        div += cell.grads[a][d] * u[dof(c, off + d, a)];
                    }
                }
                s += cell.volume * div * div;
            }
        }
        s
    }
}

/// The operator `M_h` as a [`LinearOperator`] on coefficient vectors.
impl LinearOperator for DgSpace {
    fn nrows(&self) -> usize {
        self.dim()
    }
    fn ncols(&self) -> usize {
        self.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.maxwell(x, y)
    }
}

impl TransposeOperator for DgSpace {
    /// Euclidean transpose `Bᵀ Mass⁻¹`.
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let mut r = vec![0.0; self.dim()];
        self.apply_mass_inverse(x, &mut r);
        self.bt.apply(&r, y);
    }
}

/// Tangential jump `n × a` of two vectors, exposed for diagnostics.
pub fn tangential(n: [f64; 3], a: [f64; 3]) -> [f64; 3] {
    cross(n, a)
}

/// Normal component `n · a`.
pub fn normal_component(n: [f64; 3], a: [f64; 3]) -> f64 {
    dot3(n, a)
}
