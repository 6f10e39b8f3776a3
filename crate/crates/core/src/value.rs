//! Small fixed-capacity complex vectors holding one mode's value in `C^r`.

use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;

/// Largest value dimension supported (`r <= 3`, enough for 3D Burgers).
pub const MAX_R: usize = 3;

/// A value in `C^r`, `r <= MAX_R`. Unused trailing components stay zero so
/// norms and sums never need to know `r`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CVec(pub [Complex64; MAX_R]);

impl CVec {
    pub const ZERO: CVec = CVec([Complex64::new(0.0, 0.0); MAX_R]);

    pub fn scalar(z: Complex64) -> Self {
        let mut v = Self::ZERO;
        v.0[0] = z;
        v
    }

    pub fn real(x: f64) -> Self {
        Self::scalar(Complex64::new(x, 0.0))
    }

    pub fn from_slice(zs: &[Complex64]) -> Self {
        assert!(zs.len() <= MAX_R, "value dimension {} exceeds {MAX_R}", zs.len());
        let mut v = Self::ZERO;
        v.0[..zs.len()].copy_from_slice(zs);
        v
    }

    /// Euclidean norm in `C^r`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn conj(&self) -> Self {
        CVec(self.0.map(|z| z.conj()))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        CVec(self.0.map(|z| z * s))
    }

    /// Bilinear (non-conjugating) dot product with a real direction.
    pub fn dot_real(&self, dir: &[f64; MAX_R]) -> Complex64 {
        self.0.iter().zip(dir).map(|(z, d)| z * d).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Add for CVec {
    type Output = CVec;
    fn add(self, rhs: CVec) -> CVec {
        let mut out = self;
        out += rhs;
        out
    }
}

impl AddAssign for CVec {
    fn add_assign(&mut self, rhs: CVec) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for CVec {
    type Output = CVec;
    fn sub(self, rhs: CVec) -> CVec {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        out
    }
}

impl Mul<f64> for CVec {
    type Output = CVec;
    fn mul(self, s: f64) -> CVec {
        CVec(self.0.map(|z| z * s))
    }
}
