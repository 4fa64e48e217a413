//! Q-Wiener increments through their Karhunen–Loève coefficients.
//!
//! A step of length `dt` has coefficients `c_m = sqrt(η_m dt) z_m` with
//! independent standard normals `z_m`. For the multiplicative process the
//! normals are clipped to `[−A, A]` with `A = sqrt(2 b |ln dt|)`, which keeps
//! the implicit random linear system uniformly solvable. The raw normals are
//! kept on every increment so that coarser increments can be rebuilt from
//! fine ones and clipped again (clipping does not commute with summation).

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{basis_value, Domain, NoiseSpec};

/// Which of the two driving processes a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Process {
    /// Multiplicative (medium) noise `W1`.
    Multiplicative,
    /// Additive (source) noise `W2`.
    Additive,
}

impl Process {
    fn stream_id(self) -> u64 {
        match self {
            Process::Multiplicative => 1,
            Process::Additive => 2,
        }
    }
}

/// Counter-based stream for one (trajectory seed, process) pair.
pub fn noise_stream(seed: u64, process: Process) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(process.stream_id());
    rng
}

/// Clipping level `A_dt = sqrt(2 b |ln dt|)`.
pub fn compute_a(dt: f64, b: f64) -> Result<f64> {
    if !(dt > 0.0 && dt < 1.0) {
        return Err(Error::param("dt", format!("truncation level needs 0 < dt < 1, got {dt}")));
    }
    if !(b >= 4.0) {
        return Err(Error::param("trunc_b", format!("b = {b} < 4")));
    }
    Ok((2.0 * b * dt.ln().abs()).sqrt())
}

#[inline]
pub fn truncate_normal(xi: f64, a: f64) -> f64 {
    xi.clamp(-a, a)
}

/// One step's Karhunen–Loève coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrement {
    pub coeffs: Vec<f64>,
    /// Unclipped standard normals the coefficients were built from.
    pub normals: Vec<f64>,
    pub dt: f64,
    pub truncated: bool,
    pub node_cache: Option<Vec<f64>>,
}

impl WienerIncrement {
    pub fn zero(modes: usize, dt: f64) -> Self {
        Self {
            coeffs: vec![0.0; modes],
            normals: vec![0.0; modes],
            dt,
            truncated: false,
            node_cache: None,
        }
    }

    fn from_normals(ns: &NoiseSpec, normals: Vec<f64>, dt: f64, clip: Option<f64>) -> Self {
        let coeffs = normals
            .iter()
            .zip(ns.eigenvalues())
            .map(|(&z, &eta)| {
                let z = clip.map_or(z, |a| truncate_normal(z, a));
                (eta * dt).sqrt() * z
            })
            .collect();
        Self {
            coeffs,
            normals,
            dt,
            truncated: clip.is_some(),
            node_cache: None,
        }
    }

    /// Evaluates the increment on `nodes` and stores the result in the cache.
    pub fn cache_on_nodes(&mut self, ns: &NoiseSpec, domain: &Domain, nodes: &[[f64; 3]]) -> Result<&[f64]> {
        let field = evaluate_on_nodes(self, ns, domain, nodes)?;
        Ok(self.node_cache.insert(field))
    }
}

/// Draws one increment of the `ns`-Wiener process over a step `dt`.
pub fn sample_increment<R: Rng + ?Sized>(
    ns: &NoiseSpec,
    dt: f64,
    rng: &mut R,
    truncated: bool,
    b: f64,
) -> Result<WienerIncrement> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "step must be positive"));
    }
    let clip = if truncated { Some(compute_a(dt, b)?) } else { None };
    let normals: Vec<f64> = (0..ns.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(WienerIncrement::from_normals(ns, normals, dt, clip))
}

/// `Σ_m c_m q_m(p)` at each node.
pub fn evaluate_on_nodes(
    inc: &WienerIncrement,
    ns: &NoiseSpec,
    domain: &Domain,
    nodes: &[[f64; 3]],
) -> Result<Vec<f64>> {
    if inc.coeffs.len() != ns.len() {
        return Err(Error::Shape {
            expected: ns.len(),
            actual: inc.coeffs.len(),
        });
    }
    nodes
        .iter()
        .map(|&p| {
            domain.check(p)?;
            Ok(ns
                .modes()
                .iter()
                .zip(&inc.coeffs)
                .map(|(&m, &c)| c * basis_value(domain, m, p))
                .sum())
        })
        .collect()
}

/// Combines `L` consecutive fine increments into one increment over `L·dt_f`.
///
/// Untruncated coefficients add. Truncated increments are rebuilt from the
/// summed raw normals `(Σ z)/sqrt(L)` and clipped at the coarse level `A_{L dt_f}`.
pub fn coarsen(fine: &[WienerIncrement], ns: &NoiseSpec, b: f64, truncated: bool) -> Result<WienerIncrement> {
    let first = fine
        .first()
        .ok_or_else(|| Error::param("fine_increments", "need at least one increment"))?;
    let dt_f = first.dt;
    if fine.iter().any(|inc| (inc.dt - dt_f).abs() > 1e-14 * dt_f) {
        return Err(Error::param("fine_increments", "increments have different step sizes"));
    }
    if fine.iter().any(|inc| inc.normals.len() != ns.len()) {
        return Err(Error::Shape {
            expected: ns.len(),
            actual: fine.iter().map(|i| i.normals.len()).find(|&n| n != ns.len()).unwrap_or(0),
        });
    }
    let l = fine.len() as f64;
    let dt = l * dt_f;
    let mut sum = vec![0.0; ns.len()];
    for inc in fine {
        for (s, z) in sum.iter_mut().zip(&inc.normals) {
            *s += z;
        }
    }
    let normals: Vec<f64> = sum.iter().map(|s| s / l.sqrt()).collect();
    if truncated {
        Ok(WienerIncrement::from_normals(ns, normals, dt, Some(compute_a(dt, b)?)))
    } else {
        let mut coeffs = vec![0.0; ns.len()];
        for inc in fine {
            for (c, f) in coeffs.iter_mut().zip(&inc.coeffs) {
                *c += f;
            }
        }
        Ok(WienerIncrement {
            coeffs,
            normals,
            dt,
            truncated: false,
            node_cache: None,
        })
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E|ζ − ξ|² = 2 ∫_a^∞ (x − a)² φ(x) dx` for `ζ` the clip of a standard normal `ξ` at `±a`,
/// evaluated by composite Gauss–Legendre quadrature over `[a, a + 40]`.
pub fn truncation_mse(a: f64) -> f64 {
    2.0 * crate::quad::integrate(|x| (x - a).powi(2) * normal_pdf(x), a, a + 40.0, 80, 12)
}

/// Per-mode margin `dt^b − E|ζ − ξ|²` of the truncation moment bound (`E|ξ|² = 1`).
pub fn truncation_bound_margin(dt: f64, b: f64) -> Result<f64> {
    let a = compute_a(dt, b)?;
    Ok(dt.powf(b) - truncation_mse(a))
}

const DUMP_MAGIC: &[u8; 8] = b"SMXWINC1";

/// Writes increments as little-endian binary: magic, mode count (u64), dt (f64),
/// increment count (u64), then the coefficient arrays back to back.
pub fn write_increments<W: Write>(mut w: W, increments: &[WienerIncrement]) -> Result<()> {
    let modes = increments.first().map_or(0, |i| i.coeffs.len());
    let dt = increments.first().map_or(0.0, |i| i.dt);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(modes as u64).to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    w.write_all(&(increments.len() as u64).to_le_bytes())?;
    for inc in increments {
        if inc.coeffs.len() != modes {
            return Err(Error::Shape {
                expected: modes,
                actual: inc.coeffs.len(),
            });
        }
        for c in &inc.coeffs {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a dump written by [`write_increments`]. Raw normals are not stored,
/// so replayed increments carry empty provenance.
pub fn read_increments<R: Read>(mut r: R) -> Result<Vec<WienerIncrement>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Io("not an increment dump".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let modes = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut coeffs = Vec::with_capacity(modes);
        for _ in 0..modes {
            r.read_exact(&mut b8)?;
            coeffs.push(f64::from_le_bytes(b8));
        }
        out.push(WienerIncrement {
            coeffs,
            normals: Vec::new(),
            dt,
            truncated: false,
            node_cache: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseSpec;

    fn spec3() -> NoiseSpec {
        NoiseSpec::new(vec![[1, 1, 1], [2, 1, 3], [1, 2, 2]], vec![1.0, 0.5, 0.25]).unwrap()
    }

    #[test]
    fn clipping_level_examples() {
        assert!((compute_a(0.01, 4.0).unwrap() - (8.0 * 100f64.ln()).sqrt()).abs() < 1e-12);
        assert!((compute_a(0.01, 4.0).unwrap() - 6.0698).abs() < 1e-4);
        assert!((compute_a((-1f64).exp(), 4.0).unwrap() - 8f64.sqrt()).abs() < 1e-12);
        assert!((compute_a((-2f64).exp(), 8.0).unwrap() - 32f64.sqrt()).abs() < 1e-12);
        assert!(compute_a(1.0, 4.0).is_err());
        assert!(compute_a(2.0, 4.0).is_err());
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate_normal(0.5, 6.07), 0.5);
        assert_eq!(truncate_normal(7.0, 6.07), 6.07);
        assert_eq!(truncate_normal(-10.0, 6.07), -6.07);
    }

    #[test]
    fn untruncated_variance_matches_eta_dt() {
        let ns = spec3();
        let dt = 0.01;
        let mut rng = noise_stream(7, Process::Additive);
        let n = 100_000;
        let mut sum2 = [0.0; 3];
        let mut sum4 = [0.0; 3];
        for _ in 0..n {
            let inc = sample_increment(&ns, dt, &mut rng, false, 4.0).unwrap();
            for m in 0..3 {
                sum2[m] += inc.coeffs[m].powi(2);
                sum4[m] += inc.coeffs[m].powi(4);
            }
        }
        for m in 0..3 {
            let var = sum2[m] / n as f64;
            let se = ((sum4[m] / n as f64 - var * var) / n as f64).sqrt();
            let target = ns.eigenvalues()[m] * dt;
            assert!((var - target).abs() < 3.0 * se, "mode {m}: {var} vs {target} (se {se})");
        }
    }

    #[test]
    fn truncated_normals_respect_bound() {
        let ns = spec3();
        let mut rng = noise_stream(3, Process::Multiplicative);
        let a = compute_a(0.01, 4.0).unwrap();
        for _ in 0..10_000 {
            let inc = sample_increment(&ns, 0.01, &mut rng, true, 4.0).unwrap();
            for (c, eta) in inc.coeffs.iter().zip(ns.eigenvalues()) {
                assert!((c / (eta * 0.01).sqrt()).abs() <= a + 1e-12);
            }
        }
    }

    #[test]
    fn zero_clips_in_a_million_draws() {
        let a = compute_a(0.01, 4.0).unwrap();
        let mut rng = noise_stream(11, Process::Multiplicative);
        let clipped = (0..1_000_000)
            .filter(|_| {
                let z: f64 = rng.sample(StandardNormal);
                truncate_normal(z, a) != z
            })
            .count();
        assert_eq!(clipped, 0);
    }

    #[test]
    fn truncation_mse_matches_quadrature_oracle_and_monte_carlo() {
        // oracle: plain composite Simpson on the tail integral
        let a = 2.0;
        let n = 200_000;
        let (lo, hi) = (a, a + 30.0);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| (x - a).powi(2) * normal_pdf(x);
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
        }
        let oracle = 2.0 * s * h / 3.0;
        assert!((truncation_mse(a) - oracle).abs() < 1e-12);

        let mut rng = noise_stream(5, Process::Multiplicative);
        let m = 400_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let xi: f64 = rng.sample(StandardNormal);
            let d = (truncate_normal(xi, a) - xi).powi(2);
            s1 += d;
            s2 += d * d;
        }
        let mean = s1 / m as f64;
        let se = ((s2 / m as f64 - mean * mean) / m as f64).sqrt();
        assert!((mean - oracle).abs() < 3.0 * se, "{mean} vs {oracle} (se {se})");
    }

    #[test]
    fn evaluate_examples() {
        let ns = spec3();
        let domain = Domain::unit();
        let nodes = [[0.1, 0.2, 0.3], [0.9, 0.5, 0.25], [0.33, 0.66, 0.99], [0.5, 0.5, 0.5]];
        let zero = WienerIncrement::zero(3, 0.1);
        assert!(evaluate_on_nodes(&zero, &ns, &domain, &nodes).unwrap().iter().all(|&v| v == 0.0));

        let single = NoiseSpec::single([2, 1, 3], 1.0).unwrap();
        let mut inc = WienerIncrement::zero(1, 0.1);
        inc.coeffs[0] = 0.7;
        let f = evaluate_on_nodes(&inc, &single, &domain, &nodes).unwrap();
        for (v, p) in f.iter().zip(&nodes) {
            assert!((v - 0.7 * basis_value(&domain, [2, 1, 3], *p)).abs() < 1e-15);
        }

        let mut rng = noise_stream(1, Process::Additive);
        let inc = sample_increment(&ns, 0.3, &mut rng, false, 4.0).unwrap();
        let f = evaluate_on_nodes(&inc, &ns, &domain, &nodes).unwrap();
        for (v, p) in f.iter().zip(&nodes) {
            let mut s = 0.0;
            for m in 0..3 {
                let mode = ns.modes()[m];
                let mut q = 1.0;
                for d in 0..3 {
                    q *= 2f64.sqrt() * (2.0 * std::f64::consts::PI * mode[d] as f64 * p[d]).sin();
                }
                s += inc.coeffs[m] * q;
            }
            assert!((v - s).abs() < 1e-14);
        }
        assert!(evaluate_on_nodes(&inc, &ns, &domain, &[[1.5, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn coarsen_identity_and_mismatch() {
        let ns = spec3();
        let mut rng = noise_stream(2, Process::Multiplicative);
        let inc = sample_increment(&ns, 0.01, &mut rng, true, 4.0).unwrap();
        let c = coarsen(std::slice::from_ref(&inc), &ns, 4.0, true).unwrap();
        for (a, b) in c.coeffs.iter().zip(&inc.coeffs) {
            assert!((a - b).abs() < 1e-15);
        }
        let other = sample_increment(&ns, 0.02, &mut rng, true, 4.0).unwrap();
        assert!(coarsen(&[inc, other], &ns, 4.0, true).is_err());
    }

    #[test]
    fn coarsen_untruncated_variance_scales() {
        let ns = NoiseSpec::single([1, 1, 1], 0.5).unwrap();
        let dt = 0.01;
        let mut rng = noise_stream(9, Process::Additive);
        let n = 50_000;
        let (mut s2, mut s4) = (0.0, 0.0);
        for _ in 0..n {
            let fine: Vec<_> = (0..4)
                .map(|_| sample_increment(&ns, dt, &mut rng, false, 4.0).unwrap())
                .collect();
            let c = coarsen(&fine, &ns, 4.0, false).unwrap();
            assert!((c.dt - 0.04).abs() < 1e-15);
            s2 += c.coeffs[0].powi(2);
            s4 += c.coeffs[0].powi(4);
        }
        let var = s2 / n as f64;
        let se = ((s4 / n as f64 - var * var) / n as f64).sqrt();
        assert!((var - 4.0 * 0.5 * dt).abs() < 3.0 * se);
    }

    #[test]
    fn coarsen_truncated_recomputes_from_raw_normals() {
        let ns = NoiseSpec::single([1, 1, 1], 1.0).unwrap();
        let dt_f = 0.01;
        let a_f = compute_a(dt_f, 4.0).unwrap();
        // first fine normal beyond the clip bound, second ordinary
        let raw = [a_f + 1.5, -0.4];
        let fine: Vec<_> = raw
            .iter()
            .map(|&z| WienerIncrement::from_normals(&ns, vec![z], dt_f, Some(a_f)))
            .collect();
        assert!((fine[0].coeffs[0] - a_f * dt_f.sqrt()).abs() < 1e-15);
        let c = coarsen(&fine, &ns, 4.0, true).unwrap();
        // oracle keeps the unclipped normals
        let z = (raw[0] + raw[1]) / 2f64.sqrt();
        let a_c = compute_a(2.0 * dt_f, 4.0).unwrap();
        let expect = (2.0 * dt_f).sqrt() * z.clamp(-a_c, a_c);
        assert!((c.coeffs[0] - expect).abs() < 1e-15);
        // summing clipped coefficients would give a different answer
        assert!((c.coeffs[0] - (fine[0].coeffs[0] + fine[1].coeffs[0])).abs() > 1e-3);
    }

    #[test]
    fn disjoint_steps_are_uncorrelated() {
        let ns = NoiseSpec::single([1, 1, 1], 1.0).unwrap();
        let mut rng = noise_stream(21, Process::Additive);
        let n = 100_000;
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_increment(&ns, 0.1, &mut rng, false, 4.0).unwrap().coeffs[0];
            let y = sample_increment(&ns, 0.1, &mut rng, false, 4.0).unwrap().coeffs[0];
            sxy += x * y;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let rho = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(rho.abs() < 4.0 / nf.sqrt(), "rho = {rho}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let ns = spec3();
        let a = sample_increment(&ns, 0.1, &mut noise_stream(4, Process::Additive), false, 4.0).unwrap();
        let b = sample_increment(&ns, 0.1, &mut noise_stream(4, Process::Additive), false, 4.0).unwrap();
        let c = sample_increment(&ns, 0.1, &mut noise_stream(4, Process::Multiplicative), false, 4.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.coeffs, c.coeffs);
    }

    #[test]
    fn truncation_moment_bound_holds() {
        for dt in [0.1, 0.01] {
            assert!(truncation_bound_margin(dt, 4.0).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn dump_roundtrip() {
        let ns = spec3();
        let mut rng = noise_stream(8, Process::Additive);
        let incs: Vec<_> = (0..5)
            .map(|_| sample_increment(&ns, 0.05, &mut rng, false, 4.0).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_increments(&mut buf, &incs).unwrap();
        assert_eq!(buf.len(), 8 + 24 + 5 * 3 * 8);
        let back = read_increments(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in incs.iter().zip(&back) {
            assert_eq!(a.coeffs, b.coeffs);
            assert_eq!(a.dt, b.dt);
        }
    }
}
