//! Kuhn triangulation of a box: every hexahedron splits into six tetrahedra
//! `v000 → v000 + e_p0 → v000 + e_p0 + e_p1 → v111`, one per axis permutation.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::Domain;

/// Axis permutations in cell order: cell `6 * hex + p` uses `PERMS[p]`.
pub const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[derive(Debug, Clone, PartialEq)]
pub struct Tet {
    pub vertices: [usize; 4],
    pub volume: f64,
    /// Gradients of the barycentric coordinates, one per vertex.
    pub grads: [[f64; 3]; 4],
    /// Rows of the inverse of `[X1 − X0, X2 − X0, X3 − X0]`.
    pub inv: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteriorFace {
    pub vertices: [usize; 3],
    /// `K`, the cell the normal points away from.
    pub cell: usize,
    /// `K_F`, the cell the normal points into.
    pub neighbor: usize,
    pub normal: [f64; 3],
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorFace {
    pub vertices: [usize; 3],
    pub cell: usize,
    /// Outward unit normal.
    pub normal: [f64; 3],
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct DgMesh {
    pub domain: Domain,
    pub divisions: [usize; 3],
    pub vertices: Vec<[f64; 3]>,
    pub cells: Vec<Tet>,
    pub interior_faces: Vec<InteriorFace>,
    pub exterior_faces: Vec<ExteriorFace>,
    /// Largest cell diameter (longest edge).
    pub h: f64,
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn tet_geometry(x: [[f64; 3]; 4]) -> Result<([[f64; 3]; 3], f64)> {
    let c = [sub(x[1], x[0]), sub(x[2], x[0]), sub(x[3], x[0])];
    // columns c0 c1 c2; inverse rows are (c1×c2, c2×c0, c0×c1)/det
    let det = dot3(c[0], cross(c[1], c[2]));
    if det.abs() < 1e-300 {
        return Err(Error::Mesh("degenerate tetrahedron".into()));
    }
    let r = [cross(c[1], c[2]), cross(c[2], c[0]), cross(c[0], c[1])].map(|v| v.map(|e| e / det));
    Ok((r, det.abs() / 6.0))
}

impl DgMesh {
    pub fn build(domain: Domain, nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Mesh(format!("zero subdivisions: {nx}x{ny}x{nz}")));
        }
        if domain.is_degenerate() {
            return Err(Error::Mesh("degenerate box".into()));
        }
        let n = [nx, ny, nz];
        let l = domain.lengths();
        let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    vertices.push([
                        domain.lo[0] + l[0] * i as f64 / nx as f64,
                        domain.lo[1] + l[1] * j as f64 / ny as f64,
                        domain.lo[2] + l[2] * k as f64 / nz as f64,
                    ]);
                }
            }
        }
        let mut cells = Vec::with_capacity(6 * nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    for p in PERMS {
                        let mut ijk = [i, j, k];
                        let mut vs = [vid(i, j, k); 4];
                        for (s, &axis) in p.iter().enumerate() {
                            ijk[axis] += 1;
                            vs[s + 1] = vid(ijk[0], ijk[1], ijk[2]);
                        }
                        let x = vs.map(|v| vertices[v]);
                        let (inv, volume) = tet_geometry(x)?;
                        let g0 = [0, 1, 2].map(|d| -(inv[0][d] + inv[1][d] + inv[2][d]));
                        cells.push(Tet {
                            vertices: vs,
                            volume,
                            grads: [g0, inv[0], inv[1], inv[2]],
                            inv,
                        });
                    }
                }
            }
        }
        let mut h: f64 = 0.0;
        for c in &cells {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    h = h.max(norm3(sub(vertices[c.vertices[a]], vertices[c.vertices[b]])));
                }
            }
        }
        // face matching by sorted vertex triple
        let mut faces: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
        for (ci, c) in cells.iter().enumerate() {
            for opp in 0..4 {
                let mut f = [0usize; 3];
                let mut t = 0;
                for a in 0..4 {
                    if a != opp {
                        f[t] = c.vertices[a];
                        t += 1;
                    }
                }
                f.sort_unstable();
                faces.entry(f).or_default().push((ci, opp));
            }
        }
        let mut keys: Vec<_> = faces.keys().copied().collect();
        keys.sort_unstable();
        let mut interior_faces = Vec::new();
        let mut exterior_faces = Vec::new();
        for f in keys {
            let owners = &faces[&f];
            let x = f.map(|v| vertices[v]);
            let nrm = cross(sub(x[1], x[0]), sub(x[2], x[0]));
            let len = norm3(nrm);
            let area = 0.5 * len;
            if area <= 0.0 {
                return Err(Error::Mesh("degenerate face".into()));
            }
            let mut normal = nrm.map(|v| v / len);
            let (cell, opp) = *owners.iter().min().expect("face has an owner");
            // orient away from the owner's opposite vertex
            if dot3(normal, sub(vertices[cells[cell].vertices[opp]], x[0])) > 0.0 {
                normal = normal.map(|v| -v);
            }
            match owners.len() {
                1 => exterior_faces.push(ExteriorFace {
                    vertices: f,
                    cell,
                    normal,
                    area,
                }),
                2 => {
                    let neighbor = owners.iter().map(|o| o.0).max().expect("two owners");
                    interior_faces.push(InteriorFace {
                        vertices: f,
                        cell,
                        neighbor,
                        normal,
                        area,
                    })
                }
                k => return Err(Error::Mesh(format!("face {f:?} shared by {k} cells"))),
            }
        }
        Ok(Self {
            domain,
            divisions: n,
            vertices,
            cells,
            interior_faces,
            exterior_faces,
            h,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Barycentric coordinates of `p` with respect to cell `c`.
    pub fn barycentric(&self, c: usize, p: [f64; 3]) -> [f64; 4] {
        let t = &self.cells[c];
        let d = sub(p, self.vertices[t.vertices[0]]);
        let l1 = dot3(t.inv[0], d);
        let l2 = dot3(t.inv[1], d);
        let l3 = dot3(t.inv[2], d);
        [1.0 - l1 - l2 - l3, l1, l2, l3]
    }

    /// Physical point with barycentric coordinates `lam` in cell `c`.
    pub fn point(&self, c: usize, lam: [f64; 4]) -> [f64; 3] {
        let t = &self.cells[c];
        let mut p = [0.0; 3];
        for a in 0..4 {
            let x = self.vertices[t.vertices[a]];
            for d in 0..3 {
                p[d] += lam[a] * x[d];
            }
        }
        p
    }

    /// Cell containing `p`, found from the hexahedron index and the ordering of local coordinates.
    pub fn locate(&self, p: [f64; 3]) -> Result<usize> {
        self.domain.check(p)?;
        let l = self.domain.lengths();
        let mut hex = [0usize; 3];
        let mut xi = [0.0; 3];
        for d in 0..3 {
            let s = (p[d] - self.domain.lo[d]) / l[d] * self.divisions[d] as f64;
            let i = (s.floor().max(0.0) as usize).min(self.divisions[d] - 1);
            hex[d] = i;
            xi[d] = s - i as f64;
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| xi[b].partial_cmp(&xi[a]).expect("finite coordinates").then(a.cmp(&b)));
        let perm = PERMS.iter().position(|q| *q == order).expect("every ordering is a Kuhn simplex");
        let [nx, ny, _] = self.divisions;
        Ok(6 * (hex[0] + nx * (hex[1] + ny * hex[2])) + perm)
    }
}
