use cascade_core::model::{
    build_burgers, build_ns2d_vorticity, build_single_mode, build_surface_growth, AbstractSystem, BurgersParams,
    ForcingSource, SingleMode, SurfaceGrowthParams,
};
use cascade_core::{CVec, ModeIndex, TruncationBox, WeightFunction};
use num_complex::Complex64;

use crate::config::{ExperimentConfig, ForcingBlock, InitialBlock, ModeValue, ModelName};
use crate::error::CliError;

fn cvec(v: &[[f64; 2]], r: usize) -> Result<CVec, CliError> {
    if v.is_empty() || v.len() > r {
        return Err(CliError::Config(format!("mode value needs 1..={r} components, got {}", v.len())));
    }
    let zs: Vec<Complex64> = v.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
    Ok(CVec::from_slice(&zs))
}

fn lookup(values: &[ModeValue], bx: &TruncationBox, r: usize) -> Result<Vec<(ModeIndex, CVec)>, CliError> {
    values
        .iter()
        .map(|mv| {
            let k = ModeIndex::new(&mv.k)?;
            if !bx.contains(&k) {
                return Err(CliError::Config(format!("mode {k} lies outside the truncation box")));
            }
            Ok((k, cvec(&mv.value, r)?))
        })
        .collect()
}

/// `χ_k(0)` for every mode of the box, in box order.
fn initial_chi(init: &InitialBlock, bx: &TruncationBox, r: usize) -> Result<Vec<(ModeIndex, CVec)>, CliError> {
    match init {
        InitialBlock::Uniform { amplitude, phase } => Ok(bx
            .modes()
            .into_iter()
            .map(|k| {
                let s: i32 = k.coords().iter().sum();
                (k, CVec::scalar(Complex64::from_polar(*amplitude, phase * f64::from(s))))
            })
            .collect()),
        InitialBlock::Explicit { modes } => lookup(modes, bx, r),
    }
}

fn forcing(block: Option<&ForcingBlock>, bx: &TruncationBox, r: usize) -> Result<ForcingSource, CliError> {
    let dense = |modes: &[ModeValue]| -> Result<Vec<CVec>, CliError> {
        let mut out = vec![CVec::ZERO; bx.mode_count()];
        for (k, v) in lookup(modes, bx, r)? {
            out[bx.index_of(&k).expect("checked by lookup")] = v;
        }
        Ok(out)
    };
    Ok(match block {
        None | Some(ForcingBlock::Zero) => ForcingSource::Zero,
        Some(ForcingBlock::Steady { modes }) => ForcingSource::Steady(dense(modes)?),
        Some(ForcingBlock::Oscillating { omega, modes }) => ForcingSource::Oscillating {
            amplitude: dense(modes)?,
            omega: *omega,
        },
    })
}

pub fn build_system(cfg: &ExperimentConfig) -> Result<AbstractSystem, CliError> {
    let m = &cfg.model;
    let n = &cfg.numerics;
    if let ModelName::ScalarOde | ModelName::SingleMode = m.name {
        let u0 = m.u0.expect("checked by config");
        let spec = match m.name {
            ModelName::ScalarOde => SingleMode {
                q: 1.0,
                chi0: u0,
                ..SingleMode::default()
            },
            _ => SingleMode {
                lambda: m.lambda.unwrap_or(1.0),
                p: m.p.unwrap_or(0.0),
                q: m.q.unwrap_or(0.0),
                c_f: n.c_f,
                c_b: n.c_b,
                chi0: u0,
                gamma: m.gamma.unwrap_or(0.0),
            },
        };
        return Ok(build_single_mode(&spec)?);
    }
    let alpha = n.alpha.expect("checked by config");
    let bx = TruncationBox::new(m.dim, n.k_max, n.exclude_zero)?;
    let r = if m.name == ModelName::Burgers { m.dim } else { 1 };
    let w = WeightFunction::new(alpha)?;
    let mut u0 = vec![CVec::ZERO; bx.mode_count()];
    for (k, chi) in initial_chi(m.initial.as_ref().expect("checked by config"), &bx, r)? {
        u0[bx.index_of(&k).expect("box mode")] = chi.scale(Complex64::new(1.0 / w.weight(&k), 0.0));
    }
    let at = |k: &ModeIndex| u0[bx.index_of(k).expect("builders only query box modes")];
    let f = forcing(m.forcing.as_ref(), &bx, r)?;
    let sys = match m.name {
        ModelName::Burgers => build_burgers(
            &BurgersParams {
                dim: m.dim,
                alpha,
                modes: bx,
                c_f: n.c_f,
                c_b: n.c_b,
                lambda0: n.lambda0,
            },
            at,
            f,
        )?,
        ModelName::Ns2dVorticity => build_ns2d_vorticity(alpha, bx, n.c_b, |k| at(k).0[0], f)?,
        ModelName::SurfaceGrowth => build_surface_growth(
            &SurfaceGrowthParams {
                dim: m.dim,
                alpha,
                modes: bx,
                a1: m.a1.expect("checked"),
                a2: m.a2.expect("checked"),
                a3: m.a3.expect("checked"),
                c_f: n.c_f,
                c_b: n.c_b,
            },
            |k| at(k).0[0],
            f,
        )?,
        ModelName::ScalarOde | ModelName::SingleMode => unreachable!("handled above"),
    };
    Ok(sys)
}

/// Root modes for Monte Carlo commands, in box order when unspecified.
pub fn root_modes(cfg: &ExperimentConfig, sys: &AbstractSystem) -> Result<Vec<ModeIndex>, CliError> {
    if cfg.mc.modes.is_empty() {
        return Ok(sys.modes().to_vec());
    }
    cfg.mc
        .modes
        .iter()
        .map(|c| {
            let k = ModeIndex::new(c)?;
            sys.index_of(&k)?;
            Ok(k)
        })
        .collect()
}
