//! Trajectory diagnostics, convergence-order fits, 1D Wasserstein distances,
//! mixing rates and mergeable moment accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step scalar diagnostics of one trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub times: Vec<f64>,
    pub norm2: Vec<f64>,
    pub energy: Vec<f64>,
    pub curl2: Vec<f64>,
    pub div2: Vec<f64>,
    pub observables: Vec<(String, Vec<f64>)>,
}

impl TrajectoryStats {
    pub fn with_observables<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            observables: names.iter().map(|n| (n.as_ref().to_string(), Vec::new())).collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// A named channel: one of `norm2`, `energy`, `curl2`, `div2` or an observable.
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        match name {
            "norm2" => Some(&self.norm2),
            "energy" => Some(&self.energy),
            "curl2" => Some(&self.curl2),
            "div2" => Some(&self.div2),
            _ => self
                .observables
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.as_slice()),
        }
    }

    /// Checks equal lengths and finiteness of every channel.
    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let channels = [&self.norm2, &self.energy, &self.curl2, &self.div2]
            .into_iter()
            .chain(self.observables.iter().map(|(_, v)| v));
        for c in channels.chain(std::iter::once(&self.times)) {
            if c.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    actual: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trajectory statistics".into()));
            }
        }
        Ok(())
    }
}

/// Sorted samples of one scalar observable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Analysis("empirical measure needs at least one sample".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("empirical measure samples".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Quantile at level `q ∈ (0, 1)` by linear interpolation between order statistics
    /// placed at levels `(i + ½)/n`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.samples.len();
        let pos = (q * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let t = pos - lo as f64;
        self.samples[lo] * (1.0 - t) + self.samples[hi] * t
    }
}

/// Exact 1D quadratic Wasserstein distance by quantile coupling.
///
/// Measures of different sizes are both resampled at `max(n, m)` equally spaced quantile levels.
pub fn wasserstein2_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::Analysis("empty measure".into()));
    }
    let s = if mu.len() == nu.len() {
        mu.samples.iter().zip(&nu.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / mu.len() as f64
    } else {
        let n = mu.len().max(nu.len());
        (0..n)
            .map(|k| {
                let q = (k as f64 + 0.5) / n as f64;
                (mu.quantile(q) - nu.quantile(q)).powi(2)
            })
            .sum::<f64>()
            / n as f64
    };
    Ok(s.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `log(error)` against `log(step)`.
pub fn fit_order(steps: &[f64], errors: &[f64]) -> Result<OrderFit> {
    if steps.len() != errors.len() {
        return Err(Error::Shape {
            expected: steps.len(),
            actual: errors.len(),
        });
    }
    if steps.len() < 3 {
        return Err(Error::Analysis("order fit needs at least three points".into()));
    }
    if steps.iter().chain(errors).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Analysis("order fit needs positive finite inputs".into()));
    }
    let x: Vec<f64> = steps.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y)
}

fn linear_fit(x: &[f64], y: &[f64]) -> Result<OrderFit> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Analysis("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(OrderFit { slope, intercept, r2 })
}

/// Exponential rate of `‖d(t)‖` from a least-squares fit of `log ‖d‖` against `t`.
pub fn mixing_rate(times: &[f64], diff_norms: &[f64]) -> Result<f64> {
    if times.len() != diff_norms.len() {
        return Err(Error::Shape {
            expected: times.len(),
            actual: diff_norms.len(),
        });
    }
    if diff_norms.first().is_none_or(|d| *d <= 0.0) {
        return Err(Error::Analysis("zero initial difference".into()));
    }
    if times.len() < 2 {
        return Err(Error::Analysis("need at least two samples".into()));
    }
    let (t, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(diff_norms)
        .filter(|(_, d)| **d > 0.0)
        .map(|(t, d)| (*t, d.ln()))
        .unzip();
    Ok(linear_fit(&t, &y)?.slope)
}

/// Time average of a channel over indices `burn_in..`.
pub fn ergodic_average(stats: &TrajectoryStats, name: &str, burn_in: usize) -> Result<f64> {
    let s = stats
        .channel(name)
        .ok_or_else(|| Error::Analysis(format!("unknown observable `{name}`")))?;
    if burn_in >= s.len() {
        return Err(Error::Analysis(format!(
            "burn-in {burn_in} not shorter than run length {}",
            s.len()
        )));
    }
    let tail = &s[burn_in..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Mean-square error between paired trajectories.
///
/// `coarse[k][t]` and `reference[k][t]` are the states of trajectory `k` at
/// comparison time `t`; the result is `max_t sqrt(mean_k norm2(coarse − reference))`.
pub fn ms_error(
    coarse: &[Vec<Vec<f64>>],
    reference: &[Vec<Vec<f64>>],
    norm2: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    if coarse.len() != reference.len() || coarse.is_empty() {
        return Err(Error::Analysis("trajectory pairing mismatch".into()));
    }
    let nt = coarse[0].len();
    let mut acc = MsErrorAccumulator::new(nt);
    for (c, r) in coarse.iter().zip(reference) {
        if c.len() != nt || r.len() != nt {
            return Err(Error::Analysis("comparison time mismatch".into()));
        }
        let mut row = Vec::with_capacity(nt);
        for (a, b) in c.iter().zip(r) {
            if a.len() != b.len() {
                return Err(Error::Shape {
                    expected: b.len(),
                    actual: a.len(),
                });
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            row.push(norm2(&d));
        }
        acc.add_trajectory(&row)?;
    }
    acc.finish()
}

/// Online accumulator of squared errors per comparison time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsErrorAccumulator {
    sums: Vec<f64>,
    count: usize,
}

impl MsErrorAccumulator {
    pub fn new(times: usize) -> Self {
        Self {
            sums: vec![0.0; times],
            count: 0,
        }
    }

    pub fn add_trajectory(&mut self, squared_errors: &[f64]) -> Result<()> {
        if squared_errors.len() != self.sums.len() {
            return Err(Error::Shape {
                expected: self.sums.len(),
                actual: squared_errors.len(),
            });
        }
        for (s, e) in self.sums.iter_mut().zip(squared_errors) {
            *s += e;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.sums.len() != self.sums.len() {
            return Err(Error::Shape {
                expected: self.sums.len(),
                actual: other.sums.len(),
            });
        }
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            *s += o;
        }
        self.count += other.count;
        Ok(())
    }

    /// Root-mean-square error at each comparison time.
    pub fn rms(&self) -> Vec<f64> {
        self.sums.iter().map(|s| (s / self.count.max(1) as f64).sqrt()).collect()
    }

    pub fn finish(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::Analysis("no trajectories accumulated".into()));
        }
        Ok(self.rms().into_iter().fold(0.0, f64::max))
    }
}

/// Count, mean and centred second moment, mergeable in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Self::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        Self { n, mean, m2 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Merges a list of accumulators pairwise (tree reduction).
pub fn merge_all(parts: &[Moments]) -> Moments {
    match parts.len() {
        0 => Moments::default(),
        1 => parts[0],
        n => merge_all(&parts[..n / 2]).merge(&merge_all(&parts[n / 2..])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_power_laws() {
        let dt = [0.1, 0.05, 0.025, 0.0125];
        let e: Vec<f64> = dt.iter().map(|d: &f64| 3.0 * d.sqrt()).collect();
        let f = fit_order(&dt, &e).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let e: Vec<f64> = dt.iter().map(|d| 0.7 * d).collect();
        assert!((fit_order(&dt, &e).unwrap().slope - 1.0).abs() < 1e-12);
        assert!(fit_order(&dt[..2], &e[..2]).is_err());
        assert!(fit_order(&[0.1, 0.0, 0.2], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn noisy_synthetic_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dt: Vec<f64> = (0..5).map(|k| 2f64.powi(-(k + 2))).collect();
        let e: Vec<f64> = dt
            .iter()
            .map(|d| {
                let z: f64 = rng.sample(StandardNormal);
                2.0 * d.sqrt() * (1.0 + 0.01 * z)
            })
            .collect();
        let s = fit_order(&dt, &e).unwrap().slope;
        assert!((0.45..=0.55).contains(&s), "{s}");
    }

    #[test]
    fn wasserstein_examples() {
        let a = EmpiricalMeasure::new(vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
        let z = EmpiricalMeasure::new(vec![0.0; 10]).unwrap();
        let o = EmpiricalMeasure::new(vec![1.0; 10]).unwrap();
        assert!((wasserstein2_1d(&z, &o).unwrap() - 1.0).abs() < 1e-15);
        let o7 = EmpiricalMeasure::new(vec![1.0; 7]).unwrap();
        assert!((wasserstein2_1d(&z, &o7).unwrap() - 1.0).abs() < 1e-15);
        assert!(EmpiricalMeasure::new(vec![]).is_err());
    }

    #[test]
    fn translated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 10_000;
        let m = 0.8;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|_| m + rng.sample::<f64, _>(StandardNormal)).collect();
        let w = wasserstein2_1d(&EmpiricalMeasure::new(x).unwrap(), &EmpiricalMeasure::new(y).unwrap()).unwrap();
        assert!((w - m).abs() < 0.05 * m, "{w}");
    }

    #[test]
    fn mixing_rate_recovers_exponent() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.05).collect();
        let d: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        assert!((mixing_rate(&t, &d).unwrap() + 2.0).abs() < 1e-12);
        assert!(mixing_rate(&t, &vec![0.0; 100]).is_err());
    }

    #[test]
    fn ergodic_average_examples() {
        let mut s = TrajectoryStats::with_observables(&["c"]);
        for k in 0..10 {
            s.times.push(k as f64);
            s.norm2.push(k as f64);
            s.energy.push(k as f64);
            s.curl2.push(0.0);
            s.div2.push(0.0);
            s.observables[0].1.push(2.5);
        }
        s.check().unwrap();
        assert_eq!(ergodic_average(&s, "c", 3).unwrap(), 2.5);
        assert_eq!(ergodic_average(&s, "norm2", 8).unwrap(), 8.5);
        assert!(ergodic_average(&s, "missing", 0).is_err());
        assert!(ergodic_average(&s, "c", 10).is_err());
    }

    #[test]
    fn ms_error_zero_and_monotone() {
        let r = vec![vec![vec![1.0, 2.0], vec![0.5, 0.5]]; 3];
        let sq = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>();
        assert_eq!(ms_error(&r, &r, sq).unwrap(), 0.0);
        let small: Vec<Vec<Vec<f64>>> = r
            .iter()
            .map(|tr| tr.iter().map(|s| s.iter().map(|x| x + 0.1).collect()).collect())
            .collect();
        let big: Vec<Vec<Vec<f64>>> = r
            .iter()
            .map(|tr| tr.iter().map(|s| s.iter().map(|x| x + 0.3).collect()).collect())
            .collect();
        assert!(ms_error(&small, &r, sq).unwrap() < ms_error(&big, &r, sq).unwrap());
        assert!(ms_error(&r[..2], &r, sq).is_err());
    }

    #[test]
    fn moments_merge_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 10.0).collect();
        let whole = Moments::from_slice(&xs);
        let parts: Vec<Moments> = xs.chunks(37).map(Moments::from_slice).collect();
        let tree = merge_all(&parts);
        let seq = parts.iter().fold(Moments::default(), |a, b| a.merge(b));
        let rev = parts.iter().rev().fold(Moments::default(), |a, b| a.merge(b));
        for m in [tree, seq, rev] {
            assert_eq!(m.n, whole.n);
            assert!((m.mean - whole.mean).abs() < 1e-12);
            assert!((m.variance() - whole.variance()).abs() < 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn w2_triangle_inequality(
                a in proptest::collection::vec(-10.0f64..10.0, 1..40),
                b in proptest::collection::vec(-10.0f64..10.0, 1..40),
                c in proptest::collection::vec(-10.0f64..10.0, 1..40),
            ) {
                let n = a.len().min(b.len()).min(c.len());
                let (a, b, c) = (
                    EmpiricalMeasure::new(a[..n].to_vec()).unwrap(),
                    EmpiricalMeasure::new(b[..n].to_vec()).unwrap(),
                    EmpiricalMeasure::new(c[..n].to_vec()).unwrap(),
                );
                let ab = wasserstein2_1d(&a, &b).unwrap();
                let bc = wasserstein2_1d(&b, &c).unwrap();
                let ac = wasserstein2_1d(&a, &c).unwrap();
                prop_assert!(ac <= ab + bc + 1e-12);
                prop_assert!((ab - wasserstein2_1d(&b, &a).unwrap()).abs() < 1e-15);
            }
        }
    }
}
