use num_complex::Complex64;

use super::{AbstractSystem, BilinearOp, ForcingSource, GammaScaling, RawBranch, SystemParts};
use crate::error::{Error, Result};
use crate::modes::{enumerate_pairs, ModeIndex, TruncationBox, WeightFunction};
use crate::value::CVec;

/// Viscous Burgers `u_t = Δu - (u·∇)u + f` on the torus.
#[derive(Debug, Clone)]
pub struct BurgersParams {
    pub dim: usize,
    pub alpha: f64,
    /// With `exclude_zero` set the zero mode is dropped (only valid for
    /// `d = 1`, where it decouples; the data must then have zero mean).
    pub modes: TruncationBox,
    pub c_f: f64,
    pub c_b: f64,
    pub lambda0: f64,
}

pub fn build_burgers(
    params: &BurgersParams,
    u0: impl Fn(&ModeIndex) -> CVec,
    forcing: ForcingSource,
) -> Result<AbstractSystem> {
    let BurgersParams {
        dim,
        alpha,
        modes: bx,
        c_f,
        c_b,
        lambda0,
    } = *params;
    let d = dim as f64;
    if bx.dim != dim {
        return Err(Error::InvalidModel(format!("box dimension {} differs from d = {dim}", bx.dim)));
    }
    let alpha_min = ((d + 1.0) / 2.0).max(d - 1.0);
    if !(alpha > alpha_min) {
        return Err(Error::InvalidModel(format!("Burgers needs alpha > {alpha_min}, got {alpha}")));
    }
    if bx.exclude_zero && dim != 1 {
        return Err(Error::InvalidModel("the zero mode can only be dropped for d = 1".into()));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidModel(format!("lambda0 must be positive, got {lambda0}")));
    }
    let w = WeightFunction::new(alpha)?;
    let modes = bx.modes();
    let lambda: Vec<f64> = modes
        .iter()
        .map(|k| if k.is_zero() { lambda0 } else { k.norm_sqr() as f64 })
        .collect();
    let mut p = vec![0.0; modes.len()];
    for (pk, k) in p.iter_mut().zip(&modes) {
        if k.is_zero() {
            if !(c_f >= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "the zero mode needs p_0 = 1/C_f <= 1, got C_f = {c_f}"
                )));
            }
            *pk = 1.0 / c_f;
        }
    }
    let mut branches = Vec::with_capacity(modes.len());
    for (k, &lam) in modes.iter().zip(&lambda) {
        let wk = w.weight(k);
        let mut row = Vec::new();
        for (l, m) in enumerate_pairs(k, &bx)? {
            if m.is_zero() {
                continue;
            }
            row.push(RawBranch {
                l,
                m,
                weight: m.norm() * wk / (lam * w.weight(&l) * w.weight(&m)),
                op: BilinearOp::Advection { direction: m.unit() },
            });
        }
        branches.push(row);
    }
    let weights: Vec<f64> = modes.iter().map(|k| w.weight(k)).collect();
    let chi0 = modes.iter().zip(&weights).map(|(k, &wk)| u0(k) * wk).collect();
    let gamma_c = weights.iter().zip(&lambda).map(|(wk, lam)| wk / lam).collect();
    AbstractSystem::from_parts(SystemParts {
        name: format!("burgers-{dim}d"),
        modes: bx,
        r: dim,
        lambda,
        p,
        branches,
        c_f,
        c_b,
        chi0,
        forcing,
        gamma_scaling: GammaScaling::OverDeath(gamma_c),
        weights,
    })
}

/// Two-dimensional Navier-Stokes in vorticity form with `χ_k = |k|^α ξ_k`.
pub fn build_ns2d_vorticity(
    alpha: f64,
    bx: TruncationBox,
    c_b: f64,
    xi0: impl Fn(&ModeIndex) -> Complex64,
    forcing: ForcingSource,
) -> Result<AbstractSystem> {
    if bx.dim != 2 || !bx.exclude_zero {
        return Err(Error::InvalidModel("vorticity needs a 2D box without the zero mode".into()));
    }
    if !(alpha > 0.5) {
        return Err(Error::InvalidModel(format!("vorticity needs alpha > 1/2, got {alpha}")));
    }
    let modes = bx.modes();
    let lambda: Vec<f64> = modes.iter().map(|k| k.norm_sqr() as f64).collect();
    let mut branches = Vec::with_capacity(modes.len());
    for k in &modes {
        let kn = k.norm();
        let mut row = Vec::new();
        for (l, m) in enumerate_pairs(k, &bx)? {
            let cross = k.dot(&l.perp());
            if cross == 0 {
                continue;
            }
            let weight = kn.powf(alpha - 2.0) * (cross.abs() as f64)
                / (l.norm().powf(alpha + 2.0) * m.norm().powf(alpha));
            row.push(RawBranch {
                l,
                m,
                weight,
                op: BilinearOp::Signed(cross.signum() as f64),
            });
        }
        branches.push(row);
    }
    let weights: Vec<f64> = modes.iter().map(|k| k.norm().powf(alpha)).collect();
    let chi0 = modes
        .iter()
        .zip(&weights)
        .map(|(k, &wk)| CVec::scalar(xi0(k) * wk))
        .collect();
    let gamma_c = modes.iter().map(|k| k.norm().powf(alpha - 2.0)).collect();
    AbstractSystem::from_parts(SystemParts {
        name: "ns2d-vorticity".into(),
        modes: bx,
        r: 1,
        lambda,
        p: vec![0.0; modes.len()],
        branches,
        c_f: 0.0,
        c_b,
        chi0,
        forcing,
        gamma_scaling: GammaScaling::OverDeath(gamma_c),
        weights,
    })
}

/// Surface growth `u_t = -a1 Δ²u - a2 Δu - a3 Δ|∇u|² + f` with `χ_k = |k|^α u_k`.
#[derive(Debug, Clone)]
pub struct SurfaceGrowthParams {
    pub dim: usize,
    pub alpha: f64,
    pub modes: TruncationBox,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub c_f: f64,
    pub c_b: f64,
}

pub fn build_surface_growth(
    params: &SurfaceGrowthParams,
    u0: impl Fn(&ModeIndex) -> Complex64,
    forcing: ForcingSource,
) -> Result<AbstractSystem> {
    let SurfaceGrowthParams {
        dim,
        alpha,
        modes: bx,
        a1,
        a2,
        a3,
        c_f,
        c_b,
    } = *params;
    let d = dim as f64;
    if !(dim == 1 || dim == 2) || bx.dim != dim {
        return Err(Error::InvalidModel(format!("surface growth needs d in {{1, 2}} matching the box, got {dim}")));
    }
    if !bx.exclude_zero {
        return Err(Error::InvalidModel("surface growth needs a box without the zero mode".into()));
    }
    let alpha_min = d.max(1.0 + d / 2.0);
    if !(alpha > alpha_min) {
        return Err(Error::InvalidModel(format!("surface growth needs alpha > {alpha_min}, got {alpha}")));
    }
    if !(a1 > 0.0 && a2 > 0.0 && a3 > 0.0) {
        return Err(Error::InvalidModel("a1, a2, a3 must be positive".into()));
    }
    if !(c_f > 0.0) {
        return Err(Error::InvalidModel(format!("C_f must be positive, got {c_f}")));
    }
    let modes = bx.modes();
    let lambda: Vec<f64> = modes.iter().map(|k| a1 * (k.norm_sqr() as f64).powi(2)).collect();
    let p: Vec<f64> = modes
        .iter()
        .map(|k| a2 / a1 / c_f * k.norm().powf(alpha - 2.0))
        .collect();
    if let Some((k, pk)) = modes.iter().zip(&p).find(|(_, &pk)| pk >= 1.0) {
        return Err(Error::InvalidModel(format!(
            "flip probability at mode {k} is {pk} >= 1; increase C_f or shrink the box"
        )));
    }
    let mut branches = Vec::with_capacity(modes.len());
    for k in &modes {
        let kn = k.norm();
        let mut row = Vec::new();
        for (l, m) in enumerate_pairs(k, &bx)? {
            let lm = l.dot(&m);
            if lm == 0 {
                continue;
            }
            let weight = a3 * kn.powf(alpha - 2.0) * (lm.abs() as f64)
                / (a1 * l.norm().powf(alpha) * m.norm().powf(alpha));
            row.push(RawBranch {
                l,
                m,
                weight,
                op: BilinearOp::Signed(lm.signum() as f64),
            });
        }
        branches.push(row);
    }
    let weights: Vec<f64> = modes.iter().map(|k| k.norm().powf(alpha)).collect();
    let chi0 = modes
        .iter()
        .zip(&weights)
        .map(|(k, &wk)| CVec::scalar(u0(k) * wk))
        .collect();
    let gamma_c = modes.iter().map(|k| k.norm().powf(alpha - 4.0) / a1).collect();
    AbstractSystem::from_parts(SystemParts {
        name: format!("surface-growth-{dim}d"),
        modes: bx,
        r: 1,
        lambda,
        p,
        branches,
        c_f,
        c_b,
        chi0,
        forcing,
        gamma_scaling: GammaScaling::OverDeath(gamma_c),
        weights,
    })
}

/// The scalar logistic ODE `u' = -u + u²`.
pub fn build_scalar_quadratic_ode(u0: f64) -> AbstractSystem {
    build_single_mode(&SingleMode {
        q: 1.0,
        chi0: u0,
        ..SingleMode::default()
    })
    .expect("the logistic system is always well formed")
}

/// Parameters of a one-mode scalar system with `B(x, y) = x y`.
#[derive(Debug, Clone)]
pub struct SingleMode {
    pub lambda: f64,
    pub p: f64,
    pub q: f64,
    pub c_f: f64,
    pub c_b: f64,
    pub chi0: f64,
    /// Constant forcing `γ`.
    pub gamma: f64,
}

impl Default for SingleMode {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            p: 0.0,
            q: 0.0,
            c_f: 1.0,
            c_b: 1.0,
            chi0: 0.0,
            gamma: 0.0,
        }
    }
}

pub fn build_single_mode(spec: &SingleMode) -> Result<AbstractSystem> {
    let bx = TruncationBox::new(1, 0, false)?;
    let k = ModeIndex::zero(1);
    let branches = if spec.q > 0.0 {
        vec![vec![RawBranch {
            l: k,
            m: k,
            weight: spec.q * spec.c_b,
            op: BilinearOp::Product,
        }]]
    } else {
        vec![vec![]]
    };
    let forcing = if spec.gamma == 0.0 {
        ForcingSource::Zero
    } else {
        ForcingSource::Steady(vec![CVec::real(spec.gamma)])
    };
    AbstractSystem::from_parts(SystemParts {
        name: "single-mode".into(),
        modes: bx,
        r: 1,
        lambda: vec![spec.lambda],
        p: vec![spec.p],
        branches,
        c_f: spec.c_f,
        c_b: spec.c_b,
        chi0: vec![CVec::real(spec.chi0)],
        forcing,
        gamma_scaling: GammaScaling::Identity,
        weights: vec![1.0],
    })
}

/// `χ' = λ(-χ + γ)`: every particle dies at its first event.
pub fn build_pure_decay(lambda: f64, chi0: f64, gamma: f64) -> Result<AbstractSystem> {
    build_single_mode(&SingleMode {
        lambda,
        chi0,
        gamma,
        ..SingleMode::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn box1(k_max: u32, exclude_zero: bool) -> TruncationBox {
        TruncationBox::new(1, k_max, exclude_zero).unwrap()
    }

    fn burgers_params(k_max: u32, c_b: f64) -> BurgersParams {
        BurgersParams {
            dim: 1,
            alpha: 1.5,
            modes: box1(k_max, true),
            c_f: 1.0,
            c_b,
            lambda0: 1.0,
        }
    }

    #[test]
    fn burgers_zero_data() {
        let sys = build_burgers(&burgers_params(1, 10.0), |_| CVec::ZERO, ForcingSource::Zero).unwrap();
        assert_eq!(sys.n_modes(), 2);
        for i in 0..sys.n_modes() {
            assert_eq!(sys.chi0(i).norm(), 0.0);
            assert_eq!(sys.gamma(i, 0.7).norm(), 0.0);
        }
    }

    #[test]
    fn burgers_branch_mass() {
        let sys = build_burgers(&burgers_params(2, 10.0), |_| CVec::ZERO, ForcingSource::Zero).unwrap();
        let q = sys.branch_mass(&ModeIndex::of(&[2]), &ModeIndex::of(&[1]), &ModeIndex::of(&[1]));
        assert_relative_eq!(q, 2f64.powf(1.5) / 40.0, max_relative = 1e-14);
        assert_relative_eq!(q, 0.070_710_678_118_654_75, max_relative = 1e-12);
    }

    #[test]
    fn burgers_overflow_reports_constant() {
        let err = build_burgers(&burgers_params(4, 0.01), |_| CVec::ZERO, ForcingSource::Zero).unwrap_err();
        let Error::ProbabilityOverflow { suggested_c_b, .. } = err else {
            panic!("unexpected error {err:?}");
        };
        let c = suggested_c_b.unwrap();
        // the suggested constant leaves d_k ≥ 0.05 with equality somewhere
        let sys = build_burgers(&burgers_params(4, c), |_| CVec::ZERO, ForcingSource::Zero).unwrap();
        let min_d = (0..sys.n_modes()).map(|i| sys.d(i)).fold(1.0, f64::min);
        assert!((min_d - 0.05).abs() < 1e-9, "min d = {min_d}");
    }

    #[test]
    fn burgers_rejects_bad_alpha_and_zero_drop() {
        let mut p = burgers_params(2, 10.0);
        p.alpha = 1.0;
        assert!(build_burgers(&p, |_| CVec::ZERO, ForcingSource::Zero).is_err());
        let p = BurgersParams {
            dim: 2,
            alpha: 2.0,
            modes: TruncationBox::new(2, 1, true).unwrap(),
            c_f: 1.0,
            c_b: 10.0,
            lambda0: 1.0,
        };
        assert!(build_burgers(&p, |_| CVec::ZERO, ForcingSource::Zero).is_err());
    }

    #[test]
    fn burgers_zero_mode_uses_lambda0() {
        let p = BurgersParams {
            modes: box1(2, false),
            c_f: 2.0,
            lambda0: 3.0,
            ..burgers_params(2, 20.0)
        };
        let sys = build_burgers(&p, |_| CVec::ZERO, ForcingSource::Zero).unwrap();
        let z = sys.index_of(&ModeIndex::zero(1)).unwrap();
        assert_eq!(sys.lambda(z), 3.0);
        assert_eq!(sys.p(z), 0.5);
        let one = sys.index_of(&ModeIndex::of(&[1])).unwrap();
        assert_eq!(sys.p(one), 0.0);
        assert_eq!(sys.lambda(one), 1.0);
    }

    #[test]
    fn ns_sign_and_orthogonality() {
        let bx = TruncationBox::new(2, 2, true).unwrap();
        let sys = build_ns2d_vorticity(1.0, bx, 50.0, |_| Complex64::new(0.0, 0.0), ForcingSource::Zero).unwrap();
        let k = ModeIndex::of(&[1, 0]);
        let ki = sys.index_of(&k).unwrap();
        let li = sys.index_of(&ModeIndex::of(&[0, 1])).unwrap();
        let mi = sys.index_of(&ModeIndex::of(&[1, -1])).unwrap();
        let e = sys.branches(ki).iter().find(|e| e.l as usize == li && e.m as usize == mi).unwrap();
        assert!(e.mass > 0.0);
        assert_eq!(e.op, BilinearOp::Signed(1.0));
        let q = sys.branch_mass(&k, &ModeIndex::of(&[2, 0]), &ModeIndex::of(&[-1, 0]));
        assert_eq!(q, 0.0);
        for i in 0..sys.n_modes() {
            assert_eq!(sys.chi0(i).norm(), 0.0);
        }
    }

    #[test]
    fn surface_growth_masses() {
        let p = SurfaceGrowthParams {
            dim: 1,
            alpha: 2.5,
            modes: box1(2, true),
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
            c_f: 10.0,
            c_b: 20.0,
        };
        let sys = build_surface_growth(&p, |_| Complex64::new(0.0, 0.0), ForcingSource::Zero).unwrap();
        let q = sys.branch_mass(&ModeIndex::of(&[2]), &ModeIndex::of(&[1]), &ModeIndex::of(&[1]));
        assert_relative_eq!(q, 2f64.sqrt() / 20.0, max_relative = 1e-14);

        let p2 = SurfaceGrowthParams {
            dim: 2,
            alpha: 2.5,
            modes: TruncationBox::new(2, 1, true).unwrap(),
            ..p
        };
        let sys = build_surface_growth(&p2, |_| Complex64::new(0.0, 0.0), ForcingSource::Zero).unwrap();
        let q = sys.branch_mass(&ModeIndex::of(&[1, 1]), &ModeIndex::of(&[1, 0]), &ModeIndex::of(&[0, 1]));
        assert_eq!(q, 0.0);
    }

    #[test]
    fn surface_growth_rejects_large_flip() {
        let p = SurfaceGrowthParams {
            dim: 1,
            alpha: 2.5,
            modes: box1(8, true),
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
            c_f: 1.5,
            c_b: 50.0,
        };
        assert!(matches!(
            build_surface_growth(&p, |_| Complex64::new(0.0, 0.0), ForcingSource::Zero),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn scalar_ode_structure() {
        let sys = build_scalar_quadratic_ode(0.5);
        assert_eq!(sys.n_modes(), 1);
        assert_eq!((sys.lambda(0), sys.p(0), sys.q(0), sys.d(0)), (1.0, 0.0, 1.0, 0.0));
        assert!(sys.is_plain_product());
        assert_eq!(sys.chi0(0).0[0].re, 0.5);
    }

    #[test]
    fn forcing_with_zero_death_is_rejected() {
        let bx = box1(0, false);
        let res = AbstractSystem::from_parts(SystemParts {
            name: "t".into(),
            modes: bx,
            r: 1,
            lambda: vec![1.0],
            p: vec![0.0],
            branches: vec![vec![RawBranch {
                l: ModeIndex::zero(1),
                m: ModeIndex::zero(1),
                weight: 1.0,
                op: BilinearOp::Product,
            }]],
            c_f: 1.0,
            c_b: 1.0,
            chi0: vec![CVec::ZERO],
            forcing: ForcingSource::Steady(vec![CVec::real(1.0)]),
            gamma_scaling: GammaScaling::OverDeath(vec![1.0]),
            weights: vec![1.0],
        });
        assert!(matches!(res, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn hermitian_flag() {
        let herm = build_burgers(
            &burgers_params(2, 20.0),
            |k| CVec::scalar(Complex64::from_polar(0.1, 0.3 * k.coords()[0] as f64)),
            ForcingSource::Zero,
        )
        .unwrap();
        assert!(herm.hermitian_data());
        let not = build_burgers(
            &burgers_params(2, 20.0),
            |k| CVec::scalar(Complex64::new(0.1 * k.coords()[0] as f64, 0.05)),
            ForcingSource::Zero,
        )
        .unwrap();
        assert!(!not.hermitian_data());
    }
}
