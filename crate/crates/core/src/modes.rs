//! Lattice indexing over `Z^d`, weights, and convolution pair enumeration.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maximum lattice dimension.
pub const MAX_DIM: usize = 3;

/// A point of `Z^d`, `d ∈ {1, 2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl ModeIndex {
    pub fn new(coords: &[i32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::Domain(format!(
                "mode dimension must be 1..={MAX_DIM}, got {}",
                coords.len()
            )));
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            dim: coords.len() as u8,
            coords: c,
        })
    }

    /// Panicking constructor for literals in code and tests.
    pub fn of(coords: &[i32]) -> Self {
        Self::new(coords).expect("invalid mode literal")
    }

    pub fn zero(dim: usize) -> Self {
        Self::of(&vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim()]
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    pub fn norm_sqr(&self) -> i64 {
        self.coords.iter().map(|&c| i64::from(c) * i64::from(c)).sum()
    }

    /// Euclidean norm `|k|`.
    pub fn norm(&self) -> f64 {
        (self.norm_sqr() as f64).sqrt()
    }

    pub fn sup_norm(&self) -> u32 {
        self.coords.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn dot(&self, other: &ModeIndex) -> i64 {
        debug_assert_eq!(self.dim, other.dim);
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum()
    }

    /// `l^⊥ = (l_2, -l_1)`; only defined in two dimensions.
    pub fn perp(&self) -> ModeIndex {
        assert_eq!(self.dim, 2, "perp is only defined for d = 2");
        ModeIndex::of(&[self.coords[1], -self.coords[0]])
    }

    /// Unit direction `k/|k|` padded to `MAX_DIM`; zero for the origin.
    pub fn unit(&self) -> [f64; MAX_DIM] {
        let n = self.norm();
        if n == 0.0 {
            return [0.0; MAX_DIM];
        }
        self.coords.map(|c| f64::from(c) / n)
    }

    pub fn neg(&self) -> ModeIndex {
        ModeIndex {
            dim: self.dim,
            coords: self.coords.map(|c| -c),
        }
    }

    pub fn add(&self, other: &ModeIndex) -> ModeIndex {
        debug_assert_eq!(self.dim, other.dim);
        let mut c = self.coords;
        for (a, b) in c.iter_mut().zip(other.coords) {
            *a += b;
        }
        ModeIndex { dim: self.dim, coords: c }
    }

    pub fn sub(&self, other: &ModeIndex) -> ModeIndex {
        self.add(&other.neg())
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The finite set of modes with sup-norm `<= k_max`, optionally without the
/// origin. Modes are ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationBox {
    pub dim: usize,
    pub k_max: u32,
    pub exclude_zero: bool,
}

impl TruncationBox {
    pub fn new(dim: usize, k_max: u32, exclude_zero: bool) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Domain(format!("dimension must be 1..={MAX_DIM}, got {dim}")));
        }
        if exclude_zero && k_max == 0 {
            return Err(Error::Domain("box with k_max = 0 and no origin is empty".into()));
        }
        Ok(Self { dim, k_max, exclude_zero })
    }

    fn side(&self) -> usize {
        2 * self.k_max as usize + 1
    }

    pub fn mode_count(&self) -> usize {
        self.side().pow(self.dim as u32) - usize::from(self.exclude_zero)
    }

    pub fn contains(&self, k: &ModeIndex) -> bool {
        k.dim() == self.dim && k.sup_norm() <= self.k_max && !(self.exclude_zero && k.is_zero())
    }

    /// Position of `k` in the lexicographic enumeration.
    pub fn index_of(&self, k: &ModeIndex) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let side = self.side();
        let km = self.k_max as i64;
        let mut idx = 0usize;
        for &c in k.coords() {
            idx = idx * side + (i64::from(c) + km) as usize;
        }
        if self.exclude_zero {
            let origin = (side.pow(self.dim as u32) - 1) / 2;
            if idx > origin {
                idx -= 1;
            }
        }
        Some(idx)
    }

    pub fn modes(&self) -> Vec<ModeIndex> {
        let side = self.side();
        let km = self.k_max as i32;
        let total = side.pow(self.dim as u32);
        let mut out = Vec::with_capacity(total);
        let mut coords = vec![0i32; self.dim];
        for flat in 0..total {
            let mut rem = flat;
            for slot in coords.iter_mut().rev() {
                *slot = (rem % side) as i32 - km;
                rem /= side;
            }
            let k = ModeIndex::of(&coords);
            if !(self.exclude_zero && k.is_zero()) {
                out.push(k);
            }
        }
        out
    }
}

/// `w(k) = max(1, |k|^alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction {
    pub alpha: f64,
}

impl WeightFunction {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("weight exponent must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn weight(&self, k: &ModeIndex) -> f64 {
        k.norm().powf(self.alpha).max(1.0)
    }
}

pub fn weight(k: &ModeIndex, w: &WeightFunction) -> f64 {
    w.weight(k)
}

/// Every ordered pair `(l, m)` with `l + m = k` and both in the box,
/// lexicographic in `l`. The origin is accepted as `k` even when the box
/// excludes it.
pub fn enumerate_pairs(k: &ModeIndex, bx: &TruncationBox) -> Result<Vec<(ModeIndex, ModeIndex)>> {
    if k.dim() != bx.dim || k.sup_norm() > bx.k_max {
        return Err(Error::Domain(format!("mode {k} lies outside the truncation box")));
    }
    Ok(bx
        .modes()
        .into_iter()
        .filter_map(|l| {
            let m = k.sub(&l);
            bx.contains(&m).then_some((l, m))
        })
        .collect())
}

/// Result of comparing the lattice convolution sum against its decay profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionBound {
    pub sum: f64,
    pub bound_shape: f64,
    pub ratio: f64,
    pub beta: f64,
    pub log_case: bool,
}

/// `Σ_{l+m=k, l,m≠0} |m|^{-alpha} |l|^{-gamma}` over the sup-norm box of
/// radius `k_max`, against `(1+|k|)^{-β}` (times `log(1+|k|)` when either
/// exponent equals `d`), `β = min(alpha, gamma, alpha+gamma-d)`.
pub fn convolution_bound_check(
    alpha: f64,
    gamma: f64,
    k: &ModeIndex,
    k_max: u32,
) -> Result<ConvolutionBound> {
    let d = k.dim() as f64;
    if !(alpha > 0.0 && gamma > 0.0) {
        return Err(Error::Domain(format!("exponents must be positive (alpha={alpha}, gamma={gamma})")));
    }
    if !(alpha + gamma > d) {
        return Err(Error::Domain(format!("need alpha+gamma > d (alpha={alpha}, gamma={gamma}, d={d})")));
    }
    if k.is_zero() {
        return Err(Error::Domain("the convolution bound is stated for k != 0".into()));
    }
    let table = PowerTable::new(k.dim(), k_max, alpha, gamma);
    let sum = table.convolution_sum(k);
    let beta = alpha.min(gamma).min(alpha + gamma - d);
    let log_case = alpha == d || gamma == d;
    let kn = k.norm();
    let mut bound_shape = (1.0 + kn).powf(-beta);
    if log_case {
        bound_shape *= (1.0 + kn).ln();
    }
    Ok(ConvolutionBound {
        sum,
        bound_shape,
        ratio: sum / bound_shape,
        beta,
        log_case,
    })
}

/// Sweep `k = (n, 0, ..)` for `n = 1..=n_max`; the maximum ratio is the
/// empirical constant for `(alpha, gamma, d)`.
pub fn convolution_ratio_sweep(
    alpha: f64,
    gamma: f64,
    dim: usize,
    n_max: u32,
    k_max: u32,
) -> Result<Vec<(ModeIndex, ConvolutionBound)>> {
    let _ = TruncationBox::new(dim, k_max, true)?;
    // Validate once up front so the table is only built for legal input.
    let probe = {
        let mut c = vec![0; dim];
        c[0] = 1;
        ModeIndex::of(&c)
    };
    convolution_bound_check(alpha, gamma, &probe, 1)?;
    let table = PowerTable::new(dim, k_max, alpha, gamma);
    let d = dim as f64;
    let beta = alpha.min(gamma).min(alpha + gamma - d);
    let log_case = alpha == d || gamma == d;
    Ok((1..=n_max as i32)
        .map(|n| {
            let mut c = vec![0; dim];
            c[0] = n;
            let k = ModeIndex::of(&c);
            let sum = table.convolution_sum(&k);
            let kn = k.norm();
            let mut bound_shape = (1.0 + kn).powf(-beta);
            if log_case {
                bound_shape *= (1.0 + kn).ln();
            }
            (
                k,
                ConvolutionBound {
                    sum,
                    bound_shape,
                    ratio: sum / bound_shape,
                    beta,
                    log_case,
                },
            )
        })
        .collect())
}

/// `|x|^{-alpha}` and `|x|^{-gamma}` tabulated by squared norm.
struct PowerTable {
    dim: usize,
    k_max: i32,
    inv_alpha: Vec<f64>,
    inv_gamma: Vec<f64>,
}

impl PowerTable {
    fn new(dim: usize, k_max: u32, alpha: f64, gamma: f64) -> Self {
        let max_sq = dim * (k_max as usize) * (k_max as usize);
        let build = |e: f64| -> Vec<f64> {
            (0..=max_sq)
                .map(|s| if s == 0 { 0.0 } else { (s as f64).powf(-e / 2.0) })
                .collect()
        };
        Self {
            dim,
            k_max: k_max as i32,
            inv_alpha: build(alpha),
            inv_gamma: build(gamma),
        }
    }

    fn convolution_sum(&self, k: &ModeIndex) -> f64 {
        let km = self.k_max;
        let kc = k.coords();
        // l ranges over the box; m = k - l must also lie in it.
        let lo0 = (-km).max(kc[0] - km);
        let hi0 = km.min(kc[0] + km);
        let rows: Vec<f64> = (lo0..=hi0)
            .into_par_iter()
            .map(|l0| {
                let m0 = kc[0] - l0;
                self.partial(1, kc, i64::from(l0) * i64::from(l0), i64::from(m0) * i64::from(m0))
            })
            .collect();
        rows.iter().sum()
    }

    fn partial(&self, axis: usize, kc: &[i32], l_sq: i64, m_sq: i64) -> f64 {
        if axis == self.dim {
            if l_sq == 0 || m_sq == 0 {
                return 0.0;
            }
            return self.inv_alpha[m_sq as usize] * self.inv_gamma[l_sq as usize];
        }
        let km = self.k_max;
        let lo = (-km).max(kc[axis] - km);
        let hi = km.min(kc[axis] + km);
        let mut acc = 0.0;
        for l in lo..=hi {
            let m = kc[axis] - l;
            acc += self.partial(
                axis + 1,
                kc,
                l_sq + i64::from(l) * i64::from(l),
                m_sq + i64::from(m) * i64::from(m),
            );
        }
        acc
    }
}
