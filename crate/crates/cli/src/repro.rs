//! Scripted reproductions: KL recovery against extra independent items, the
//! synthetic order sweep, MCMC gradient error by proposal, and the
//! posterior-variance scaling of the time analysis.

use std::path::PathBuf;

use hazard_ctmc_core::analysis::{
    five_item_truth, gradient_error_experiment, kl_experiment, order_experiment, order_proportion, two_item_truth,
    with_extra_items, KlExperiment, KlExperimentConfig,
};
use hazard_ctmc_core::posterior::{time_grid, variance_sweep, Background};
use hazard_ctmc_core::rng::stream_id;
use hazard_ctmc_core::sampler::generate_dataset;
use hazard_ctmc_core::trainer::{fit, FitConfig, GradientMethod};
use hazard_ctmc_core::RngState;
use serde::Serialize;

use crate::args::{ReproArgs, ScaleArg};
use crate::commands::{log_log_slope, Outcome, Progress};
use crate::error::CliResult;
use crate::formats::{csv_table, format_float, write_json, write_text};

struct Sizes {
    samples: usize,
    m_values: Vec<usize>,
    repetitions: usize,
    kl_draws: usize,
    /// Main-phase epochs of the KL and order fits.
    epochs: usize,
    baseline_epochs: usize,
    pretrain_epochs: usize,
    /// Exact-gradient epochs before the gradient-error comparison.
    grad_fit_epochs: usize,
    order_draws: usize,
    grad_items: Vec<usize>,
    grad_counts: Vec<usize>,
    grad_replicates: usize,
    sweep_m: Vec<usize>,
    sweep_samples: usize,
    grid_points: usize,
}

impl Sizes {
    fn of(scale: ScaleArg) -> Self {
        match scale {
            ScaleArg::Smoke => Sizes {
                samples: 150,
                m_values: vec![0, 3],
                repetitions: 2,
                kl_draws: 20_000,
                epochs: 8,
                baseline_epochs: 20,
                pretrain_epochs: 4,
                grad_fit_epochs: 8,
                order_draws: 20_000,
                grad_items: vec![10],
                grad_counts: vec![5, 50],
                grad_replicates: 6,
                sweep_m: vec![5, 10, 20],
                sweep_samples: 60,
                grid_points: 600,
            },
            ScaleArg::Desk => Sizes {
                samples: 500,
                m_values: vec![0, 5, 25],
                repetitions: 8,
                kl_draws: 1_000_000,
                epochs: 1000,
                baseline_epochs: 3000,
                pretrain_epochs: 50,
                grad_fit_epochs: 100,
                order_draws: 1_000_000,
                grad_items: vec![10, 20],
                grad_counts: vec![5, 10, 20, 50, 100],
                grad_replicates: 20,
                sweep_m: vec![5, 10, 20, 50, 100],
                sweep_samples: 2000,
                grid_points: 4000,
            },
        }
    }
}

#[derive(Serialize)]
struct SummaryRow {
    experiment: String,
    quantity: String,
    value: f64,
}

struct Summary {
    rows: Vec<SummaryRow>,
}

impl Summary {
    fn push(&mut self, experiment: &str, quantity: impl Into<String>, value: f64) {
        self.rows.push(SummaryRow {
            experiment: experiment.into(),
            quantity: quantity.into(),
            value,
        });
    }
}

pub fn run(a: &ReproArgs, progress: Progress) -> CliResult<Outcome> {
    let sizes = Sizes::of(a.scale);
    let wanted = |name: &str| a.only.as_ref().is_none_or(|o| o.iter().any(|x| x == name));
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut summary = Summary { rows: Vec::new() };
    let fit_config = FitConfig {
        epochs: sizes.epochs,
        diag_pretrain_epochs: sizes.pretrain_epochs,
        ..FitConfig::default()
    };
    let base = KlExperimentConfig {
        m_values: sizes.m_values.clone(),
        repetitions: sizes.repetitions,
        samples: sizes.samples,
        kl_draws: sizes.kl_draws,
        extra_range: (-4.0, -2.0),
        fit: fit_config,
        baseline_epochs: sizes.baseline_epochs,
        seed: a.seed,
    };

    if wanted("kl") {
        for (name, truth) in [("two_item", two_item_truth(4.0)), ("five_item", five_item_truth())] {
            progress.line(&format!("KL recovery, {name} model"));
            let cfg = KlExperimentConfig {
                seed: stream_id(&[a.seed, 0x4B, truth.n() as u64]),
                ..base.clone()
            };
            let exp = kl_experiment(&truth, &cfg)?;
            let path = a.out_dir.join(format!("kl_{name}.csv"));
            write_text(&path, &kl_csv(&exp)?)?;
            outputs.push(path);
            for p in &exp.points {
                summary.push(&format!("kl_{name}"), format!("kl_mean[m={}]", p.m), p.kl_mean);
            }
            summary.push(&format!("kl_{name}"), "kl_given_times", exp.baseline_mean);
        }
    }

    if wanted("order") {
        progress.line("order proportions against the number of items");
        let truth = five_item_truth();
        let reference = order_proportion(&truth, 0, 1, sizes.order_draws, stream_id(&[a.seed, 0x0D, 1]))?;
        let cfg = KlExperimentConfig {
            seed: stream_id(&[a.seed, 0x0D, 0]),
            ..base.clone()
        };
        let points = order_experiment(&truth, 0, 1, &cfg, sizes.order_draws)?;
        let mut rows: Vec<Vec<String>> = points
            .iter()
            .map(|p| vec![p.n.to_string(), format_float(p.prop_mean), format_float(p.prop_stderr)])
            .collect();
        if let (Some(p), Some(se)) = (reference.prop_a_first, reference.stderr) {
            rows.push(vec!["truth".into(), format_float(p), format_float(se)]);
            summary.push("order", "prop_truth", p);
        }
        let path = a.out_dir.join("order_1_before_2.csv");
        write_text(&path, &csv_table(&["n", "prop", "stderr"], rows)?)?;
        outputs.push(path);
        for p in &points {
            summary.push("order", format!("prop[n={}]", p.n), p.prop_mean);
        }
    }

    if wanted("gradient") {
        let mut rows = Vec::new();
        for &n in &sizes.grad_items {
            progress.line(&format!("gradient error by proposal at n = {n}"));
            let mut rng = RngState::derive(a.seed, &[0x6E, n as u64]);
            let model = with_extra_items(&two_item_truth(4.0), n - 2, (-4.0, -2.0), &mut rng)?;
            let data = generate_dataset(&model, sizes.samples, false, &RngState::new(stream_id(&[a.seed, 0x6E, n as u64, 1])))?;
            let exact_fit = FitConfig {
                gradient: GradientMethod::Exact,
                epochs: sizes.grad_fit_epochs,
                seed: stream_id(&[a.seed, 0x6E, n as u64, 2]),
                ..base.fit.clone()
            };
            let theta = fit(&data, &exact_fit)?.theta_hat;
            let points = gradient_error_experiment(
                &theta,
                &data,
                &sizes.grad_counts,
                sizes.grad_replicates,
                10,
                exact_fit.enum_cap,
                stream_id(&[a.seed, 0x6E, n as u64, 3]),
            )?;
            for p in &points {
                summary.push("gradient", format!("guided[n={n},M={}]", p.num_samples), p.guided_mean);
                summary.push("gradient", format!("uniform[n={n},M={}]", p.num_samples), p.uniform_mean);
                rows.push(vec![
                    n.to_string(),
                    p.num_samples.to_string(),
                    format_float(p.guided_mean),
                    format_float(p.guided_stderr),
                    format_float(p.uniform_mean),
                    format_float(p.uniform_stderr),
                ]);
            }
        }
        let path = a.out_dir.join("gradient_error.csv");
        write_text(
            &path,
            &csv_table(
                &["n", "samples", "guided_mean", "guided_stderr", "uniform_mean", "uniform_stderr"],
                rows,
            )?,
        )?;
        outputs.push(path);
    }

    if wanted("variance") {
        progress.line("posterior variance against background size");
        let grid = time_grid(21.0, sizes.grid_points);
        let mut rows = Vec::new();
        for tp in [-3.0, -2.0, -1.0] {
            let pts = variance_sweep(
                &Background::Iid { theta_plus: tp },
                &sizes.sweep_m,
                sizes.sweep_samples,
                &grid,
                stream_id(&[a.seed, 0x5E, (tp as i64) as u64]),
            )?;
            let vars: Vec<f64> = pts.iter().map(|p| p.mean_variance).collect();
            summary.push("variance", format!("slope[theta_plus={tp}]"), log_log_slope(&sizes.sweep_m, &vars));
            rows.extend(pts.iter().map(|p| {
                vec![
                    format_float(tp),
                    p.m.to_string(),
                    format_float(p.mean_variance),
                    format_float(p.stderr_variance),
                ]
            }));
        }
        let path = a.out_dir.join("posterior_variance.csv");
        write_text(&path, &csv_table(&["theta_plus", "m", "mean_variance", "stderr"], rows)?)?;
        outputs.push(path);
    }

    let csv_path = a.out_dir.join("summary.csv");
    write_text(
        &csv_path,
        &csv_table(
            &["experiment", "quantity", "value"],
            summary
                .rows
                .iter()
                .map(|r| vec![r.experiment.clone(), r.quantity.clone(), format_float(r.value)]),
        )?,
    )?;
    let json_path = a.out_dir.join("summary.json");
    write_json(&json_path, &summary.rows)?;
    outputs.push(csv_path);
    outputs.push(json_path);
    Ok(Outcome {
        inputs: Vec::new(),
        outputs,
        seed: Some(a.seed),
    })
}

fn kl_csv(exp: &KlExperiment) -> CliResult<String> {
    let mut rows: Vec<Vec<String>> = exp
        .points
        .iter()
        .map(|p| vec![p.m.to_string(), format_float(p.kl_mean), format_float(p.kl_stderr)])
        .collect();
    rows.push(vec![
        "given_times".into(),
        format_float(exp.baseline_mean),
        format_float(exp.baseline_stderr),
    ]);
    csv_table(&["m", "kl_mean", "kl_stderr"], rows)
}
