use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::value::{CVec, MAX_R};

pub const Z99: f64 = 2.575_829_303_548_901;
const COMPONENTS: usize = 2 * MAX_R;

/// Streaming mean/variance of the real and imaginary parts of `C^r` samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub n: u64,
    mean: [f64; COMPONENTS],
    m2: [f64; COMPONENTS],
    pub max_abs: f64,
}

impl Accumulator {
    #[inline]
    pub fn push(&mut self, v: &CVec) {
        self.n += 1;
        let n = self.n as f64;
        for (c, z) in v.0.iter().enumerate() {
            for (j, x) in [z.re, z.im].into_iter().enumerate() {
                let i = 2 * c + j;
                let delta = x - self.mean[i];
                self.mean[i] += delta / n;
                self.m2[i] += delta * (x - self.mean[i]);
            }
        }
        self.max_abs = self.max_abs.max(v.norm());
    }

    #[inline]
    pub fn push_real(&mut self, x: f64) {
        self.push(&CVec::real(x));
    }

    /// Chan's pairwise combination.
    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..COMPONENTS {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        self.max_abs = self.max_abs.max(other.max_abs);
    }

    pub fn mean(&self) -> CVec {
        let mut v = CVec::ZERO;
        for (c, z) in v.0.iter_mut().enumerate() {
            z.re = self.mean[2 * c];
            z.im = self.mean[2 * c + 1];
        }
        v
    }

    /// Standard errors of the `2r` real components, `re_0, im_0, re_1, ...`.
    pub fn std_errors(&self, r: usize) -> Vec<f64> {
        (0..2 * r)
            .map(|i| {
                if self.n < 2 {
                    f64::INFINITY
                } else {
                    (self.m2[i] / (self.n - 1) as f64 / self.n as f64).sqrt()
                }
            })
            .collect()
    }
}

/// Component-wise z-score with the convention that a zero standard error
/// gives zero for (numerically) equal values and an infinite score otherwise.
pub fn z_score(estimate: f64, reference: f64, se: f64) -> f64 {
    let diff = estimate - reference;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-14 * (1.0 + reference.abs()) {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Bin integer observations into consecutive value ranges holding at least
/// `min_share` of the data each. Returns the upper value of every bin.
pub fn quantile_bins(values: &[u64], min_share: f64) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let need = ((min_share * sorted.len() as f64).ceil() as usize).max(1);
    let mut uppers = Vec::new();
    let mut in_bin = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        in_bin += j - i;
        if in_bin >= need {
            uppers.push(v);
            in_bin = 0;
        }
        i = j;
    }
    if in_bin > 0 {
        match uppers.last_mut() {
            Some(last) => *last = *sorted.last().expect("nonempty"),
            None => uppers.push(*sorted.last().expect("nonempty")),
        }
    }
    uppers
}

#[inline]
pub fn bin_of(uppers: &[u64], v: u64) -> usize {
    uppers.partition_point(|&u| u < v).min(uppers.len() - 1)
}

/// Pearson statistic and degrees of freedom of a contingency table.
pub fn contingency_chi2(table: &[Vec<f64>]) -> (f64, usize) {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return (0.0, 0);
    }
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = row_tot.iter().sum();
    let mut chi2 = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = row_tot[i] * col_tot[j] / total;
            if e > 0.0 {
                chi2 += (o - e) * (o - e) / e;
            }
        }
    }
    (chi2, (rows - 1) * (cols - 1))
}

pub fn chi2_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.sf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37 % 101) as f64).sin() * 3.0).collect();
        let mut whole = Accumulator::default();
        for x in &xs {
            whole.push(&CVec::scalar(Complex64::new(*x, -x * 0.5)));
        }
        let mut parts = Accumulator::default();
        for chunk in xs.chunks(77) {
            let mut a = Accumulator::default();
            for x in chunk {
                a.push(&CVec::scalar(Complex64::new(*x, -x * 0.5)));
            }
            parts.merge(&a);
        }
        assert_eq!(whole.n, parts.n);
        assert!((whole.mean().0[0] - parts.mean().0[0]).norm() < 1e-12);
        let (a, b) = (whole.std_errors(1), parts.std_errors(1));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((a[0] - (var / 1000.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bins_hold_minimum_share() {
        let v: Vec<u64> = (0..1000).map(|i| (i % 37) as u64 + u64::from(i % 5 == 0) * 100).collect();
        let uppers = quantile_bins(&v, 0.05);
        let mut counts = vec![0usize; uppers.len()];
        for x in &v {
            counts[bin_of(&uppers, *x)] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 50), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 1000);
    }

    #[test]
    fn chi2_of_independent_table_is_small() {
        let t = vec![vec![10.0, 20.0, 30.0], vec![20.0, 40.0, 60.0]];
        let (chi2, dof) = contingency_chi2(&t);
        assert!(chi2 < 1e-12);
        assert_eq!(dof, 2);
        assert!((chi2_sf(chi2, dof) - 1.0).abs() < 1e-12);
        assert!(chi2_sf(30.0, 2) < 1e-6);
    }

    #[test]
    fn z_score_conventions() {
        assert_eq!(z_score(1.0, 1.0, 0.0), 0.0);
        assert_eq!(z_score(1.5, 1.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(1.5, 1.0, 0.25), 2.0);
    }
}
