use std::fmt::Write as _;
use std::path::PathBuf;

use cascade_core::det::{solve_comparison, solve_mild_picard, solve_semi_implicit, SchemeFamily, TrajectoryGrid};
use cascade_core::mc::{
    branching_property_test, estimate_many, extinction_test, pruning_study, Functional, McConfig,
};
use cascade_core::model::{small_data_global_check, validate, AbstractSystem};
use cascade_core::modes::convolution_ratio_sweep;
use cascade_core::ModeIndex;
use chrono::Utc;
use serde_json::json;

use crate::config::{ExperimentConfig, Format, LemmaBlock};
use crate::error::CliError;
use crate::output::{
    config_hash, estimate_cells, estimate_header, k_cells, k_header, num, timestamp, value_cells, value_header,
    OutputSink, RunManifest, Table,
};
use crate::setup::{build_system, root_modes};

pub const THREADS_ENV: &str = "CASCADE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Validate,
    SolveDet,
    SolveMc,
    PruneStudy,
    Compare,
    Integrability,
    LemmaCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SolveDet => "solve-det",
            Command::SolveMc => "solve-mc",
            Command::PruneStudy => "prune-study",
            Command::Compare => "compare",
            Command::Integrability => "integrability",
            Command::LemmaCheck => "lemma-check",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `None` falls back to the environment, then to all cores.
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Human-readable summary printed on stdout.
    pub report: String,
    pub error: Option<CliError>,
    pub out_dir: PathBuf,
    pub manifest: Option<RunManifest>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    sys: AbstractSystem,
    seed: u64,
    threads: usize,
}

impl Ctx<'_> {
    fn mc(&self) -> McConfig {
        McConfig::new(self.cfg.mc.n_samples, self.seed)
            .with_budget(self.cfg.mc.budget)
            .with_threads(self.threads)
    }

    fn model(&self) -> &str {
        self.sys.name()
    }

    fn picard(&self) -> Result<TrajectoryGrid, CliError> {
        let n = &self.cfg.numerics;
        Ok(solve_mild_picard(&self.sys, n.t_final, n.dt, n.tol, n.max_iter)?)
    }

    fn dim(&self) -> usize {
        self.sys.truncation().dim
    }
}

pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .unwrap_or(0)
}

/// Runs one command on a config text. Outputs, the manifest, and on failure
/// `error.json` are written to the output directory.
pub fn run(cmd: Command, config_text: &str, opts: &RunOptions) -> RunOutcome {
    let started = Utc::now();
    let threads = resolve_threads(opts.threads);
    let parsed = ExperimentConfig::parse(config_text);
    let out_dir = opts
        .out
        .clone()
        .or_else(|| parsed.as_ref().ok().map(|c| c.output.directory.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = opts
        .seed
        .or_else(|| parsed.as_ref().ok().map(|c| c.mc.seed))
        .unwrap_or(0);
    let mut sink = match OutputSink::new(&out_dir) {
        Ok(s) => s,
        Err(e) => {
            return RunOutcome {
                exit_code: e.exit_code(),
                report: String::new(),
                error: Some(e),
                out_dir,
                manifest: None,
            }
        }
    };
    let mut report = String::new();
    let result = parsed.and_then(|cfg| {
        let sys = build_system(&cfg)?;
        let ctx = Ctx {
            cfg: &cfg,
            sys,
            seed,
            threads,
        };
        match cmd {
            Command::Validate => cmd_validate(&ctx, &mut sink, &mut report),
            Command::SolveDet => cmd_solve_det(&ctx, &mut sink, &mut report),
            Command::SolveMc => cmd_solve_mc(&ctx, &mut sink, &mut report),
            Command::PruneStudy => cmd_prune_study(&ctx, &mut sink, &mut report),
            Command::Compare => cmd_compare(&ctx, &mut sink, &mut report),
            Command::Integrability => cmd_integrability(&ctx, &mut sink, &mut report),
            Command::LemmaCheck => cmd_lemma_check(&ctx, &mut sink, &mut report),
        }
    });
    let (exit_code, error) = match result {
        Ok(()) => (0, None),
        Err(e) => {
            let _ = sink.write_json("error.json", &e.to_json());
            (e.exit_code(), Some(e))
        }
    };
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config_hash: config_hash(config_text),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        threads,
        started: timestamp(started),
        finished: timestamp(Utc::now()),
        outputs: sink.written().to_vec(),
        exit_code,
    };
    let manifest = match sink.write_json("manifest.json", &manifest) {
        Ok(_) => Some(manifest),
        Err(_) => None,
    };
    RunOutcome {
        exit_code,
        report,
        error,
        out_dir,
        manifest,
    }
}

fn emit_table(ctx: &Ctx, sink: &mut OutputSink, stem: &str, table: &Table) -> Result<(), CliError> {
    if ctx.cfg.wants(Format::Csv) {
        sink.write(&format!("{stem}.csv"), &table.render())?;
    }
    Ok(())
}

fn emit_json(ctx: &Ctx, sink: &mut OutputSink, stem: &str, value: &serde_json::Value) -> Result<(), CliError> {
    if ctx.cfg.wants(Format::Json) {
        sink.write_json(&format!("{stem}.json"), value)?;
    }
    Ok(())
}

fn cmd_validate(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let sys = &ctx.sys;
    let diag = validate(sys);
    let mut text = String::new();
    let _ = writeln!(text, "model={}", sys.name());
    let _ = writeln!(text, "modes={}", sys.n_modes());
    let _ = writeln!(text, "c_f={}", sys.c_f());
    let _ = writeln!(text, "c_b={}", sys.c_b());
    let _ = writeln!(text, "max_probability_residual={:e}", diag.max_residual);
    let _ = writeln!(text, "min_d={}", diag.min_d);
    let _ = writeln!(text, "max_q={}", diag.max_q);
    let _ = writeln!(text, "bilinear_max_ratio={}", diag.bilinear_max_ratio);
    if let Some(gap) = diag.bilinear_equality_gap {
        let _ = writeln!(text, "bilinear_equality_gap={gap:e}");
    }
    let _ = writeln!(text, "simple_criterion={}", diag.simple_criterion);
    let _ = writeln!(text, "hermitian_data={}", diag.hermitian_data);
    let _ = writeln!(text, "flip_overflow_modes={}", diag.flip_overflow_modes.len());
    let _ = writeln!(text, "low_death_modes={}", diag.low_death_modes.len());
    let mut global_existence = serde_json::Value::Null;
    if let Some(delta) = ctx.cfg.numerics.delta {
        let check = small_data_global_check(sys, delta)?;
        let _ = writeln!(text, "global_existence_delta={delta}");
        let _ = writeln!(text, "global_existence={}", check.overall);
        global_existence = json!({ "delta": delta, "overall": check.overall, "per_mode": check.per_mode });
    }
    report.push_str(&text);
    sink.write("validate.txt", &text)?;
    emit_json(
        ctx,
        sink,
        "validate",
        &json!({
            "model": sys.name(),
            "residuals": diag.residuals,
            "max_residual": diag.max_residual,
            "min_d": diag.min_d,
            "max_q": diag.max_q,
            "bilinear_max_ratio": diag.bilinear_max_ratio,
            "simple_criterion": diag.simple_criterion,
            "hermitian_data": diag.hermitian_data,
            "global_existence": global_existence,
        }),
    )
}

fn trajectory_table(ctx: &Ctx, grid: &TrajectoryGrid, level: Option<usize>) -> Result<Table, CliError> {
    let (dim, r) = (ctx.dim(), ctx.sys.r());
    let mut header = vec!["model".to_string()];
    header.extend(k_header(dim));
    header.push("t".into());
    if level.is_some() {
        header.push("level".into());
    }
    header.extend(value_header("value", r));
    let mut table = Table::new(header);
    for &t in &ctx.cfg.times() {
        for (i, k) in ctx.sys.modes().iter().enumerate() {
            let mut row = vec![ctx.model().to_string()];
            row.extend(k_cells(k));
            row.push(num(t));
            if let Some(n) = level {
                row.push(n.to_string());
            }
            row.extend(value_cells(&grid.value_at(i, t)?, r));
            table.push(row);
        }
    }
    Ok(table)
}

/// `sup_k |χ^(n)_k(t) - χ_k(t)|` at `t` for every level.
pub fn scheme_gaps(family: &SchemeFamily, picard: &TrajectoryGrid, t: f64) -> Result<Vec<f64>, CliError> {
    family
        .levels
        .iter()
        .map(|g| {
            (0..picard.n_modes).try_fold(0.0f64, |acc, i| {
                Ok(acc.max((g.value_at(i, t)? - picard.value_at(i, t)?).norm()))
            })
        })
        .collect()
}

fn cmd_solve_det(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let n = &ctx.cfg.numerics;
    let picard = ctx.picard()?;
    let herm = if ctx.sys.hermitian_data() {
        Some(picard.hermitian_residual(&ctx.sys))
    } else {
        None
    };
    emit_table(ctx, sink, "trajectory", &trajectory_table(ctx, &picard, None)?)?;
    let _ = writeln!(report, "picard_iterations={}", picard.iterations);
    let _ = writeln!(report, "picard_residual={:e}", picard.residual);
    if let Some(h) = herm {
        let _ = writeln!(report, "hermitian_residual={h:e}");
    }
    let mut gaps = Vec::new();
    if n.levels > 0 {
        let family = solve_semi_implicit(&ctx.sys, n.levels, n.t_final, n.dt)?;
        let mut table = Table::default();
        for (level, g) in family.levels.iter().enumerate() {
            let t = trajectory_table(ctx, g, Some(level))?;
            if level == 0 {
                table.header = t.header;
            }
            table.rows.extend(t.rows);
        }
        emit_table(ctx, sink, "scheme", &table)?;
        gaps = scheme_gaps(&family, &picard, n.t_final)?;
        let mut gt = Table::new(vec!["level".into(), "t".into(), "sup_gap".into()]);
        for (level, g) in gaps.iter().enumerate() {
            gt.push(vec![level.to_string(), num(n.t_final), num(*g)]);
            let _ = writeln!(report, "level={level} sup_gap={g:e}");
        }
        emit_table(ctx, sink, "scheme_gaps", &gt)?;
    }
    emit_json(
        ctx,
        sink,
        "solve_det",
        &json!({
            "iterations": picard.iterations,
            "residual": picard.residual,
            "hermitian_residual": herm,
            "scheme_gaps": gaps,
        }),
    )
}

fn functionals(ctx: &Ctx) -> Vec<Functional> {
    std::iter::once(Functional::Direct)
        .chain(ctx.cfg.mc.prune_levels.iter().map(|&n| Functional::pruned(n)))
        .collect()
}

fn cmd_solve_mc(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let cfg = ctx.mc();
    let fs = functionals(ctx);
    let mut table = Table::new(estimate_header(ctx.dim(), ctx.sys.r()));
    let (mut unstable, mut untrusted) = (0, 0);
    for k in root_modes(ctx.cfg, &ctx.sys)? {
        for rep in estimate_many(&ctx.sys, &k, &ctx.cfg.times(), &fs, &cfg)? {
            unstable += usize::from(!rep.stable);
            untrusted += usize::from(!rep.trusted);
            table.push(estimate_cells(ctx.model(), &rep));
        }
    }
    let _ = writeln!(report, "rows={}", table.rows.len());
    let _ = writeln!(report, "unstable_rows={unstable}");
    let _ = writeln!(report, "untrusted_rows={untrusted}");
    emit_table(ctx, sink, "mc", &table)?;
    emit_json(
        ctx,
        sink,
        "solve_mc",
        &json!({ "rows": table.rows.len(), "unstable_rows": unstable, "untrusted_rows": untrusted }),
    )
}

fn cmd_prune_study(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let levels = &ctx.cfg.mc.prune_levels;
    let Some(&top) = levels.last() else {
        return Err(CliError::Config("prune-study needs mc.prune_levels".into()));
    };
    let n = &ctx.cfg.numerics;
    let family = solve_semi_implicit(&ctx.sys, top as usize, n.t_final, n.dt)?;
    let (dim, r) = (ctx.dim(), ctx.sys.r());
    let mut header = estimate_header(dim, r);
    header.extend(value_header("det", r));
    header.push("z".into());
    let mut table = Table::new(header);
    let mut steps = Table::new(
        ["model"]
            .into_iter()
            .map(String::from)
            .chain(k_header(dim))
            .chain(["from_level", "to_level", "z"].map(String::from))
            .collect(),
    );
    let mut worst = 0.0f64;
    for k in root_modes(ctx.cfg, &ctx.sys)? {
        let study = pruning_study(&ctx.sys, &k, n.t_final, levels, &ctx.mc(), Some(&family))?;
        for row in &study.rows {
            let det = row.deterministic.expect("family covers every level");
            let z = row.report.max_abs_z(&det);
            worst = worst.max(z);
            let mut cells = estimate_cells(ctx.model(), &row.report);
            cells.extend(value_cells(&det, r));
            cells.push(num(z));
            table.push(cells);
        }
        for (a, b, z) in study.successive_z() {
            let mut cells = vec![ctx.model().to_string()];
            cells.extend(k_cells(&k));
            cells.extend([a.to_string(), b.to_string(), num(z)]);
            steps.push(cells);
        }
    }
    let _ = writeln!(report, "rows={}", table.rows.len());
    let _ = writeln!(report, "max_abs_z_vs_scheme={worst}");
    emit_table(ctx, sink, "prune", &table)?;
    emit_table(ctx, sink, "prune_steps", &steps)?;
    emit_json(ctx, sink, "prune_study", &json!({ "max_abs_z": worst }))
}

/// Monte Carlo against the Picard oracle at every (mode, time).
pub struct Comparison {
    pub table: Table,
    pub max_abs_z: f64,
    pub worst_mode: Option<ModeIndex>,
    pub hermitian_residual: Option<f64>,
    pub picard_iterations: usize,
}

fn compare_table(ctx: &Ctx) -> Result<Comparison, CliError> {
    let picard = ctx.picard()?;
    let (dim, r) = (ctx.dim(), ctx.sys.r());
    let mut header = vec!["model".to_string()];
    header.extend(k_header(dim));
    header.push("t".into());
    header.extend(value_header("mc", r));
    header.extend(value_header("det", r));
    header.extend(["se", "ci99", "n_samples", "n_excluded", "stable_flag", "z"].map(String::from));
    let mut table = Table::new(header);
    let mut worst = 0.0f64;
    let mut worst_mode = None;
    for k in root_modes(ctx.cfg, &ctx.sys)? {
        let idx = ctx.sys.index_of(&k)?;
        for rep in estimate_many(&ctx.sys, &k, &ctx.cfg.times(), &[Functional::Direct], &ctx.mc())? {
            let det = picard.value_at(idx, rep.t)?;
            let z = rep.max_abs_z(&det);
            if z > worst || worst_mode.is_none() {
                worst = worst.max(z);
                worst_mode = Some(k);
            }
            let mut row = vec![ctx.model().to_string()];
            row.extend(k_cells(&k));
            row.push(num(rep.t));
            row.extend(value_cells(&rep.mean, r));
            row.extend(value_cells(&det, r));
            row.extend([
                num(rep.std_error),
                num(rep.ci99),
                rep.n_samples.to_string(),
                rep.n_excluded.to_string(),
                u8::from(rep.stable).to_string(),
                num(z),
            ]);
            table.push(row);
        }
    }
    Ok(Comparison {
        table,
        max_abs_z: worst,
        worst_mode,
        hermitian_residual: ctx.sys.hermitian_data().then(|| picard.hermitian_residual(&ctx.sys)),
        picard_iterations: picard.iterations,
    })
}

fn cmd_compare(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let cmp = compare_table(ctx)?;
    emit_table(ctx, sink, "compare", &cmp.table)?;
    let _ = writeln!(report, "picard_iterations={}", cmp.picard_iterations);
    if let Some(h) = cmp.hermitian_residual {
        let _ = writeln!(report, "hermitian_residual={h:e}");
    }
    let _ = writeln!(report, "rows={}", cmp.table.rows.len());
    let _ = writeln!(report, "max_abs_z={}", cmp.max_abs_z);
    if let Some(k) = &cmp.worst_mode {
        let _ = writeln!(report, "worst_mode={k}");
    }
    emit_json(
        ctx,
        sink,
        "compare",
        &json!({
            "max_abs_z": cmp.max_abs_z,
            "worst_mode": cmp.worst_mode.map(|k| k.coords().to_vec()),
            "hermitian_residual": cmp.hermitian_residual,
            "picard_iterations": cmp.picard_iterations,
        }),
    )?;
    let limit = ctx.cfg.mc.z_threshold;
    if cmp.max_abs_z >= limit {
        return Err(CliError::Statistical(format!(
            "max |z| = {} >= {limit} at mode {}",
            cmp.max_abs_z,
            cmp.worst_mode.map(|k| k.to_string()).unwrap_or_default()
        )));
    }
    Ok(())
}

fn cmd_integrability(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let n = &ctx.cfg.numerics;
    let grid = solve_comparison(&ctx.sys, n.t_final, n.dt, n.blowup_threshold)?;
    let blowup = grid.blowup_time;
    let (dim, r) = (ctx.dim(), ctx.sys.r());
    let mut header = vec!["model".to_string()];
    header.extend(k_header(dim));
    header.extend(["t", "functional", "blowup_time"].map(String::from));
    header.extend(value_header("mean", r));
    header.extend(value_header("comparison_det", r));
    header.extend(["se", "n_samples", "n_excluded", "stable_flag", "trusted_flag"].map(String::from));
    let mut table = Table::new(header);
    let blowup_cell = blowup.map(num).unwrap_or_else(|| "none".into());
    let _ = writeln!(report, "blowup_time={blowup_cell}");
    let fs = [Functional::Direct, Functional::Comparison];
    for k in root_modes(ctx.cfg, &ctx.sys)? {
        let idx = ctx.sys.index_of(&k)?;
        for rep in estimate_many(&ctx.sys, &k, &ctx.cfg.times(), &fs, &ctx.mc())? {
            let name = match rep.functional {
                Functional::Comparison => "comparison",
                _ => "direct",
            };
            let det = if rep.t <= grid.final_time() {
                value_cells(&grid.value_at(idx, rep.t)?, r)
            } else {
                vec!["inf".to_string(); 2 * r]
            };
            let mut row = vec![ctx.model().to_string()];
            row.extend(k_cells(&k));
            row.extend([num(rep.t), name.to_string(), blowup_cell.clone()]);
            row.extend(value_cells(&rep.mean, r));
            row.extend(det);
            row.extend([
                num(rep.std_error),
                rep.n_samples.to_string(),
                rep.n_excluded.to_string(),
                u8::from(rep.stable).to_string(),
                u8::from(rep.trusted).to_string(),
            ]);
            let _ = writeln!(
                report,
                "k={k} t={} functional={name} stable={} trusted={} excluded={}",
                rep.t, rep.stable, rep.trusted, rep.n_excluded
            );
            table.push(row);
        }
    }
    emit_table(ctx, sink, "integrability", &table)?;
    emit_json(ctx, sink, "integrability", &json!({ "blowup_time": blowup }))
}

fn cmd_lemma_check(ctx: &Ctx, sink: &mut OutputSink, report: &mut String) -> Result<(), CliError> {
    let Some(lemma) = &ctx.cfg.lemma else {
        return Err(CliError::Config("lemma-check needs a [lemma] block".into()));
    };
    match lemma {
        LemmaBlock::Convolution {
            alpha,
            gamma,
            dims,
            n_max,
            k_max,
        } => {
            let mut rows = Table::new(
                ["dim", "alpha", "gamma", "k_max", "n", "sum", "bound_shape", "ratio"]
                    .map(String::from)
                    .to_vec(),
            );
            let mut consts = Table::new(
                ["dim", "alpha", "gamma", "beta", "log_case", "constant", "constant_doubled", "rel_change"]
                    .map(String::from)
                    .to_vec(),
            );
            for &d in dims {
                let mut c = [0.0f64; 2];
                let mut shape = (0.0, false);
                for (j, km) in [*k_max, 2 * k_max].into_iter().enumerate() {
                    for (k, b) in convolution_ratio_sweep(*alpha, *gamma, d, *n_max, km)? {
                        c[j] = c[j].max(b.ratio);
                        shape = (b.beta, b.log_case);
                        rows.push(vec![
                            d.to_string(),
                            num(*alpha),
                            num(*gamma),
                            km.to_string(),
                            k.coords()[0].to_string(),
                            num(b.sum),
                            num(b.bound_shape),
                            num(b.ratio),
                        ]);
                    }
                }
                let rel = (c[1] - c[0]).abs() / c[0];
                let _ = writeln!(report, "dim={d} constant={} doubled={} rel_change={rel}", c[0], c[1]);
                consts.push(vec![
                    d.to_string(),
                    num(*alpha),
                    num(*gamma),
                    num(shape.0),
                    shape.1.to_string(),
                    num(c[0]),
                    num(c[1]),
                    num(rel),
                ]);
            }
            emit_table(ctx, sink, "lemma_ratios", &rows)?;
            emit_table(ctx, sink, "lemma", &consts)
        }
        LemmaBlock::Branching { k, window, shared_stream } => {
            let k = ModeIndex::new(k)?;
            let rep = branching_property_test(&ctx.sys, &k, *window, &ctx.mc(), *shared_stream)?;
            let mut t = Table::new(
                [
                    "p_value",
                    "p_homogeneity",
                    "chi2_homogeneity",
                    "dof_homogeneity",
                    "p_independence",
                    "chi2_independence",
                    "dof_independence",
                    "n_conditioned",
                    "n_attempts",
                    "n_excluded",
                    "shared_stream",
                ]
                .map(String::from)
                .to_vec(),
            );
            t.push(vec![
                num(rep.p_value),
                num(rep.p_homogeneity),
                num(rep.chi2_homogeneity),
                rep.dof_homogeneity.to_string(),
                num(rep.p_independence),
                num(rep.chi2_independence),
                rep.dof_independence.to_string(),
                rep.n_conditioned.to_string(),
                rep.n_attempts.to_string(),
                rep.n_excluded.to_string(),
                shared_stream.to_string(),
            ]);
            let _ = writeln!(report, "p_value={} n_conditioned={}", rep.p_value, rep.n_conditioned);
            emit_table(ctx, sink, "lemma", &t)
        }
        LemmaBlock::Extinction { k, horizons } => {
            let k = ModeIndex::new(k)?;
            let rep = extinction_test(&ctx.sys, &k, horizons, &ctx.mc())?;
            let mut t = Table::new(
                ["horizon", "fraction", "se", "n_used", "n_excluded"]
                    .map(String::from)
                    .to_vec(),
            );
            for ((h, f), se) in rep.horizons.iter().zip(&rep.fractions).zip(&rep.std_errors) {
                t.push(vec![
                    num(*h),
                    num(*f),
                    num(*se),
                    rep.n_used.to_string(),
                    rep.n_excluded.to_string(),
                ]);
                let _ = writeln!(report, "horizon={h} fraction={f}");
            }
            let _ = writeln!(report, "n_excluded={}", rep.n_excluded);
            emit_table(ctx, sink, "lemma", &t)
        }
    }
}
