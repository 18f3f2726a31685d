use std::path::{Path, PathBuf};
use std::time::Instant;

use hazard_ctmc_core::analysis::{kl_recovery, order_counts, equivalent_model, stability_report_with_seeds};
use hazard_ctmc_core::math::{log, ols_slope};
use hazard_ctmc_core::mcmc::{ChainConfig, Proposal};
use hazard_ctmc_core::posterior::{
    block_posterior_density, bound_argmins, bound_constants, grid_moments, iid_posterior_density,
    iid_posterior_summary, time_grid, variance_sweep, Background,
};
use hazard_ctmc_core::sampler::generate_dataset;
use hazard_ctmc_core::trainer::{fit_with_observer, FitConfig, FitMode, GradientMethod, Phase};
use hazard_ctmc_core::RngState;
use serde::Serialize;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::formats::{
    cell, csv_table, format_float, read_dataset, read_model, write_dataset, write_json, write_model, write_text,
    ModelFile,
};
use crate::manifest::RunManifest;
use crate::repro;

/// Files a command read and wrote, plus the seed it ran with.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

/// Progress reporting on standard error.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub quiet: bool,
    pub start: Instant,
}

impl Progress {
    pub fn line(&self, msg: &str) {
        if !self.quiet {
            eprintln!("[{:8.2}s] {msg}", self.start.elapsed().as_secs_f64());
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    let progress = Progress {
        quiet: cli.quiet,
        start: Instant::now(),
    };
    let (name, config, outcome) = match cli.command {
        Command::Simulate(a) => ("simulate", to_value(&a)?, simulate(&a)?),
        Command::Fit(a) => ("fit", to_value(&a)?, fit(&a, progress)?),
        Command::Family(a) => ("family", to_value(&a)?, family(&a)?),
        Command::Repro(a) => ("repro", to_value(&a)?, repro::run(&a, progress)?),
        Command::Eval(e) => match e {
            EvalCommand::Kl(a) => ("eval kl", to_value(&a)?, eval_kl(&a)?),
            EvalCommand::Order(a) => ("eval order", to_value(&a)?, eval_order(&a)?),
            EvalCommand::Stability(a) => ("eval stability", to_value(&a)?, eval_stability(&a, progress)?),
            EvalCommand::TimePosterior(a) => ("eval time-posterior", to_value(&a)?, eval_time_posterior(&a)?),
            EvalCommand::VarianceSweep(a) => ("eval variance-sweep", to_value(&a)?, eval_variance_sweep(&a)?),
            EvalCommand::Bounds(a) => ("eval bounds", to_value(&a)?, eval_bounds(&a)?),
        },
    };
    RunManifest {
        command: name.into(),
        config,
        seed: outcome.seed,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time: progress.start.elapsed().as_secs_f64(),
    }
    .write_sidecars()
}

fn to_value<T: Serialize>(x: &T) -> CliResult<serde_json::Value> {
    serde_json::to_value(x).map_err(|e| CliError::Numerical(e.to_string()))
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    // A second configuration in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// `<path>` with its extension replaced by `csv`.
pub fn csv_sibling(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

fn simulate(a: &SimulateArgs) -> CliResult<Outcome> {
    let theta = read_model(&a.model)?;
    let mut data = generate_dataset(&theta, a.samples, a.with_times, &RngState::new(a.seed))?;
    if let Some(names) = theta.item_names() {
        data = data.with_item_names(names.to_vec())?;
    }
    write_dataset(&a.out, &data)?;
    Ok(Outcome {
        inputs: vec![a.model.clone()],
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
    })
}

pub fn fit_config(t: &TrainArgs, seed: u64) -> FitConfig {
    FitConfig {
        step_size: t.step,
        reg_weight: t.lambda,
        epochs: t.epochs,
        diag_pretrain_epochs: t.pretrain_epochs,
        init_offdiag_halfwidth: t.init_halfwidth,
        mcmc: ChainConfig {
            num_samples: t.mcmc_samples,
            burn_in: t.burn_in,
            proposal: match t.proposal {
                ProposalArg::Guided => Proposal::Guided,
                ProposalArg::Uniform => Proposal::Uniform,
            },
        },
        seed,
        mode: match t.mode {
            ModeArg::Marginal => FitMode::Marginal,
            ModeArg::GivenTimes => FitMode::GivenTimes,
            ModeArg::DiagonalOnly => FitMode::DiagonalOnly,
        },
        gradient: match t.gradient {
            GradientArg::Mcmc => GradientMethod::Mcmc,
            GradientArg::Exact => GradientMethod::Exact,
        },
        enum_cap: t.enum_cap,
        ..FitConfig::default()
    }
}

#[derive(Serialize)]
struct FitReportFile<'a> {
    theta: ModelFile,
    objective_trace: &'a [f64],
    /// Whether the trace is the exact objective or a sampled estimate.
    objective_exact: bool,
    warnings: &'a [String],
    seed: u64,
    config: &'a TrainArgs,
}

fn default_report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.report.json"))
}

fn fit(a: &FitArgs, progress: Progress) -> CliResult<Outcome> {
    let data = read_dataset(&a.data)?;
    let cfg = fit_config(&a.train, a.seed);
    progress.line(&format!(
        "fitting {} items on {} samples ({} + {} epochs)",
        data.n(),
        data.len(),
        cfg.diag_pretrain_epochs,
        cfg.epochs
    ));
    let mut observer = |info: &hazard_ctmc_core::trainer::EpochInfo| {
        let phase = match info.phase {
            Phase::Pretrain => "pretrain",
            Phase::Main => "epoch",
        };
        let obj = info.objective.map_or_else(|| "-".into(), |o| format!("{o:.6}"));
        progress.line(&format!("{phase} {} objective {obj}", info.epoch + 1));
    };
    let report = fit_with_observer(&data, &cfg, &mut observer)?;
    for w in &report.warnings {
        progress.line(&format!("warning: {w}"));
    }
    let report_path = a.report.clone().unwrap_or_else(|| default_report_path(&a.out));
    write_model(&a.out, &report.theta_hat)?;
    write_json(
        &report_path,
        &FitReportFile {
            theta: ModelFile::from_model(&report.theta_hat),
            objective_trace: &report.objective_trace,
            objective_exact: report.objective_exact,
            warnings: &report.warnings,
            seed: a.seed,
            config: &a.train,
        },
    )?;
    Ok(Outcome {
        inputs: vec![a.data.clone()],
        outputs: vec![a.out.clone(), report_path],
        seed: Some(a.seed),
    })
}

fn family(a: &FamilyArgs) -> CliResult<Outcome> {
    let theta = equivalent_model(a.alpha, a.s)?;
    write_model(&a.out, &theta)?;
    Ok(Outcome {
        outputs: vec![a.out.clone()],
        ..Outcome::default()
    })
}

fn to_zero_based(items: &[usize], n: usize, what: &str) -> CliResult<Vec<usize>> {
    items
        .iter()
        .map(|&i| {
            if i == 0 || i > n {
                Err(CliError::Usage(format!("{what}: item {i} outside 1..={n}")))
            } else {
                Ok(i - 1)
            }
        })
        .collect()
}

#[derive(Serialize)]
struct KlFile {
    kl: f64,
    stderr: f64,
    num_draws: usize,
    restricted_items: Vec<usize>,
    histogram_support: usize,
    negative: bool,
    extra_items: usize,
}

fn eval_kl(a: &KlArgs) -> CliResult<Outcome> {
    let fitted = read_model(&a.fit)?;
    let truth = read_model(&a.truth)?;
    let restrict = match &a.restrict {
        Some(r) => to_zero_based(r, fitted.n(), "--restrict")?,
        None => (0..truth.n().min(fitted.n())).collect(),
    };
    let r = kl_recovery(&fitted, &truth, &restrict, a.draws, a.seed)?;
    let extra = fitted.n().saturating_sub(truth.n());
    write_json(
        &a.out,
        &KlFile {
            kl: r.kl,
            stderr: r.stderr,
            num_draws: r.num_draws,
            restricted_items: r.restricted_items.iter().map(|i| i + 1).collect(),
            histogram_support: r.histogram_support,
            negative: r.negative,
            extra_items: extra,
        },
    )?;
    let csv = csv_sibling(&a.out);
    write_text(
        &csv,
        &csv_table(
            &["m", "kl_mean", "kl_stderr"],
            [vec![extra.to_string(), format_float(r.kl), format_float(r.stderr)]],
        )?,
    )?;
    Ok(Outcome {
        inputs: vec![a.fit.clone(), a.truth.clone()],
        outputs: vec![a.out.clone(), csv],
        seed: Some(a.seed),
    })
}

#[derive(Serialize)]
struct PairFile {
    item_a: usize,
    item_b: usize,
    prop_a_first: Option<f64>,
    stderr: Option<f64>,
    num_cooccurrences: usize,
}

#[derive(Serialize)]
struct OrderFile {
    num_draws: usize,
    pairs: Vec<PairFile>,
}

fn eval_order(a: &OrderArgs) -> CliResult<Outcome> {
    let theta = read_model(&a.model)?;
    let n = theta.n();
    let pairs: Vec<(usize, usize)> = match &a.pair {
        Some(p) => {
            if p.len() != 2 {
                return Err(CliError::Usage("--pair takes exactly two items".into()));
            }
            let p = to_zero_based(p, n, "--pair")?;
            if p[0] == p[1] {
                return Err(CliError::Usage("--pair needs two different items".into()));
            }
            vec![(p[0], p[1])]
        }
        None => (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect(),
    };
    let (earlier, co) = order_counts(&theta, a.draws, a.seed);
    let rows: Vec<PairFile> = pairs
        .iter()
        .map(|&(i, j)| {
            let c = co[i * n + j];
            let prop = (c > 0).then(|| earlier[i * n + j] as f64 / c as f64);
            PairFile {
                item_a: i + 1,
                item_b: j + 1,
                prop_a_first: prop,
                stderr: prop.map(|p| (p * (1.0 - p) / c as f64).sqrt()),
                num_cooccurrences: c,
            }
        })
        .collect();
    let csv = csv_table(
        &["item_a", "item_b", "prop", "stderr", "cooccurrences"],
        rows.iter().map(|r| {
            vec![
                r.item_a.to_string(),
                r.item_b.to_string(),
                cell(r.prop_a_first),
                cell(r.stderr),
                r.num_cooccurrences.to_string(),
            ]
        }),
    )?;
    write_json(
        &a.out,
        &OrderFile {
            num_draws: a.draws,
            pairs: rows,
        },
    )?;
    let csv_path = csv_sibling(&a.out);
    write_text(&csv_path, &csv)?;
    Ok(Outcome {
        inputs: vec![a.model.clone()],
        outputs: vec![a.out.clone(), csv_path],
        seed: Some(a.seed),
    })
}

#[derive(Serialize)]
struct StabilityFile {
    seeds: Vec<u64>,
    min: Vec<Vec<f64>>,
    max: Vec<Vec<f64>>,
    range: Vec<Vec<f64>>,
    order_spread: Vec<Vec<Option<f64>>>,
}

fn rows_of<T: Clone>(v: &[T], n: usize) -> Vec<Vec<T>> {
    v.chunks(n).map(<[T]>::to_vec).collect()
}

fn eval_stability(a: &StabilityArgs, progress: Progress) -> CliResult<Outcome> {
    let data = read_dataset(&a.data)?;
    let cfg = fit_config(&a.train, a.seed);
    let seeds: Vec<u64> = (0..a.inits as u64).map(|i| a.seed.wrapping_add(i)).collect();
    progress.line(&format!("fitting {} initializations", seeds.len()));
    let r = stability_report_with_seeds(&data, &cfg, &seeds, a.order_draws)?;
    let n = r.n;
    write_json(
        &a.out,
        &StabilityFile {
            seeds: r.seeds.clone(),
            min: rows_of(&r.min, n),
            max: rows_of(&r.max, n),
            range: rows_of(&r.range, n),
            order_spread: rows_of(&r.order_spread, n),
        },
    )?;
    let csv = csv_table(
        &["row", "col", "min", "max", "range", "order_spread"],
        (0..n * n).map(|p| {
            vec![
                (p / n + 1).to_string(),
                (p % n + 1).to_string(),
                format_float(r.min[p]),
                format_float(r.max[p]),
                format_float(r.range[p]),
                cell(r.order_spread[p]),
            ]
        }),
    )?;
    let csv_path = csv_sibling(&a.out);
    write_text(&csv_path, &csv)?;
    Ok(Outcome {
        inputs: vec![a.data.clone()],
        outputs: vec![a.out.clone(), csv_path],
        seed: Some(a.seed),
    })
}

#[derive(Serialize)]
struct SamplePosterior {
    sample: usize,
    size: usize,
    mean: f64,
    variance: f64,
    true_time: Option<f64>,
}

#[derive(Serialize)]
struct IidPosteriorFile {
    theta_plus: f64,
    m: usize,
    k: usize,
    alpha: f64,
    beta: f64,
    mean: f64,
    variance: f64,
    grid_mean: f64,
    grid_variance: f64,
}

fn eval_time_posterior(a: &TimePosteriorArgs) -> CliResult<Outcome> {
    let grid = time_grid(a.t_max, a.grid_points);
    let csv_path = csv_sibling(&a.out);
    if let (Some(tp), Some(m), Some(k)) = (a.theta_plus, a.m, a.k) {
        let s = iid_posterior_summary(tp, m, k)?;
        let dens = iid_posterior_density(tp, m, k, &grid)?;
        let (gm, gv) = grid_moments(&dens);
        write_json(
            &a.out,
            &IidPosteriorFile {
                theta_plus: tp,
                m,
                k,
                alpha: s.alpha,
                beta: s.beta,
                mean: s.mean,
                variance: s.variance,
                grid_mean: gm,
                grid_variance: gv,
            },
        )?;
        write_text(
            &csv_path,
            &csv_table(&["t", "density"], dens.iter().map(|&(t, d)| vec![format_float(t), format_float(d)]))?,
        )?;
        return Ok(Outcome {
            outputs: vec![a.out.clone(), csv_path],
            ..Outcome::default()
        });
    }
    let (Some(model_path), Some(data_path)) = (&a.model, &a.data) else {
        return Err(CliError::Usage(
            "give either --model and --data, or --theta-plus, --m and --k".into(),
        ));
    };
    let theta = read_model(model_path)?;
    let data = read_dataset(data_path)?;
    if data.n() != theta.n() {
        return Err(CliError::Data(format!(
            "dataset has {} items but the model has {}",
            data.n(),
            theta.n()
        )));
    }
    let picked = match &a.samples {
        Some(s) => to_zero_based(s, data.len(), "--samples")?,
        None => (0..data.len()).collect(),
    };
    let mut summaries = Vec::with_capacity(picked.len());
    let mut rows = Vec::new();
    for &i in &picked {
        let s = &data.samples()[i];
        let dens = block_posterior_density(&theta, s, &grid, a.enum_cap)?;
        let (mean, variance) = grid_moments(&dens);
        summaries.push(SamplePosterior {
            sample: i + 1,
            size: s.len(),
            mean,
            variance,
            true_time: data.times().map(|t| t[i]),
        });
        rows.extend(
            dens.iter()
                .map(|&(t, d)| vec![(i + 1).to_string(), format_float(t), format_float(d)]),
        );
    }
    write_json(&a.out, &summaries)?;
    write_text(&csv_path, &csv_table(&["sample", "t", "density"], rows)?)?;
    Ok(Outcome {
        inputs: vec![model_path.clone(), data_path.clone()],
        outputs: vec![a.out.clone(), csv_path],
        seed: None,
    })
}

#[derive(Serialize)]
struct SweepPointFile {
    m: usize,
    mean_variance: f64,
    stderr_variance: f64,
    mean_abs_error: f64,
    stderr_abs_error: f64,
}

#[derive(Serialize)]
struct SweepFile {
    background: BackgroundArg,
    points: Vec<SweepPointFile>,
    /// Least-squares slope of log mean variance against log m.
    log_log_slope: f64,
}

pub fn background_of(kind: BackgroundArg, theta_plus: f64, lo: f64, hi: f64, gamma: f64) -> Background {
    match kind {
        BackgroundArg::Iid => Background::Iid { theta_plus },
        BackgroundArg::Uniform => Background::UniformDiagonals { lo, hi },
        BackgroundArg::Pairs => Background::Pairs { gamma, theta_plus },
    }
}

pub fn log_log_slope(ms: &[usize], vars: &[f64]) -> f64 {
    let xs: Vec<f64> = ms.iter().map(|&m| log(m as f64)).collect();
    let ys: Vec<f64> = vars.iter().map(|&v| log(v)).collect();
    ols_slope(&xs, &ys)
}

fn eval_variance_sweep(a: &VarianceSweepArgs) -> CliResult<Outcome> {
    let grid = time_grid(a.t_max, a.grid_points);
    let bg = background_of(a.background, a.theta_plus, a.lo, a.hi, a.gamma);
    let points = variance_sweep(&bg, &a.m, a.samples, &grid, a.seed)?;
    let slope = log_log_slope(
        &a.m,
        &points.iter().map(|p| p.mean_variance).collect::<Vec<_>>(),
    );
    let csv = csv_table(
        &["m", "mean_variance", "stderr", "mean_abs_error", "stderr_abs_error"],
        points.iter().map(|p| {
            vec![
                p.m.to_string(),
                format_float(p.mean_variance),
                format_float(p.stderr_variance),
                format_float(p.mean_abs_error),
                format_float(p.stderr_abs_error),
            ]
        }),
    )?;
    write_json(
        &a.out,
        &SweepFile {
            background: a.background,
            points: points
                .iter()
                .map(|p| SweepPointFile {
                    m: p.m,
                    mean_variance: p.mean_variance,
                    stderr_variance: p.stderr_variance,
                    mean_abs_error: p.mean_abs_error,
                    stderr_abs_error: p.stderr_abs_error,
                })
                .collect(),
            log_log_slope: slope,
        },
    )?;
    let csv_path = csv_sibling(&a.out);
    write_text(&csv_path, &csv)?;
    Ok(Outcome {
        outputs: vec![a.out.clone(), csv_path],
        seed: Some(a.seed),
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct BoundRow {
    theta_plus: f64,
    w_plus: f64,
    c1: f64,
    c2: f64,
}

#[derive(Serialize)]
struct BoundsFile {
    t_star: f64,
    /// Background rates minimizing each constant.
    argmin_c1: f64,
    argmin_c2: f64,
    rows: Vec<BoundRow>,
}

fn eval_bounds(a: &BoundsArgs) -> CliResult<Outcome> {
    let (w1, w2) = bound_argmins(a.t_star)?;
    let rows = a
        .theta_plus
        .iter()
        .map(|&tp| {
            bound_constants(tp, a.t_star).map(|b| BoundRow {
                theta_plus: tp,
                w_plus: b.w_plus,
                c1: b.c1,
                c2: b.c2,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let csv = csv_table(
        &["theta_plus", "w_plus", "c1", "c2"],
        rows.iter().map(|r| {
            vec![
                format_float(r.theta_plus),
                format_float(r.w_plus),
                format_float(r.c1),
                format_float(r.c2),
            ]
        }),
    )?;
    write_json(
        &a.out,
        &BoundsFile {
            t_star: a.t_star,
            argmin_c1: w1,
            argmin_c2: w2,
            rows,
        },
    )?;
    let csv_path = csv_sibling(&a.out);
    write_text(&csv_path, &csv)?;
    Ok(Outcome {
        outputs: vec![a.out.clone(), csv_path],
        ..Outcome::default()
    })
}
