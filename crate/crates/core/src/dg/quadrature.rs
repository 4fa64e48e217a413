//! Tetrahedral quadrature in barycentric coordinates, weights normalized to sum to one
//! (multiply by the cell volume).

use serde::{Deserialize, Serialize};

use crate::quad::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "order")]
pub enum QuadratureKind {
    /// Keast's 11-point rule, exact for degree 4.
    #[default]
    Keast,
    /// Collapsed-coordinate Gauss–Legendre product rule with `n` points per direction.
    Conical(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TetRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl TetRule {
    pub fn new(kind: QuadratureKind) -> Self {
        match kind {
            QuadratureKind::Keast => keast4(),
            QuadratureKind::Conical(n) => conical(n.max(1)),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn keast4() -> TetRule {
    // reference-tetrahedron weights (volume 1/6), rescaled below
    let mut points = vec![[0.25; 4]];
    let mut weights = vec![-0.013_155_555_555_555_555];
    let (a, b) = (0.071_428_571_428_571_4, 0.785_714_285_714_286);
    for big in 0..4 {
        let mut p = [a; 4];
        p[big] = b;
        points.push(p);
        weights.push(0.007_622_222_222_222_222);
    }
    let (c, d) = (0.399_403_576_166_799_219, 0.100_596_423_833_200_785);
    for i in 0..4 {
        for j in (i + 1)..4 {
            let mut p = [d; 4];
            p[i] = c;
            p[j] = c;
            points.push(p);
            weights.push(0.024_888_888_888_888_888);
        }
    }
    let s: f64 = weights.iter().sum();
    TetRule {
        points,
        weights: weights.iter().map(|w| w / s).collect(),
    }
}

/// Duffy-collapsed product rule: `x = s`, `y = (1 − s) t`, `z = (1 − s)(1 − t) w`.
pub fn conical(n: usize) -> TetRule {
    let (x, w) = gauss_legendre(n);
    let nodes: Vec<f64> = x.iter().map(|v| 0.5 * (v + 1.0)).collect();
    let wts: Vec<f64> = w.iter().map(|v| 0.5 * v).collect();
    let mut points = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for (s, ws) in nodes.iter().zip(&wts) {
        for (t, wt) in nodes.iter().zip(&wts) {
            for (r, wr) in nodes.iter().zip(&wts) {
                let px = s;
                let py = (1.0 - s) * t;
                let pz = (1.0 - s) * (1.0 - t) * r;
                points.push([1.0 - px - py - pz, *px, py, pz]);
                // Jacobian (1 − s)² (1 − t), reference volume 1/6
                weights.push(6.0 * ws * wt * wr * (1.0 - s).powi(2) * (1.0 - t));
            }
        }
    }
    TetRule { points, weights }
}
