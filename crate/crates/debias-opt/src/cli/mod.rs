//! The `debias-opt` command-line front end.
//!
//! ```text
//! debias-opt <saddle|minmax|dedier|probe|sweep|gradcheck>
//!            --config <path> --out <dir> [--seed N]
//! ```
//!
//! Every subcommand validates its config against a published schema,
//! runs deterministically from the resolved seed, and writes its
//! artifacts (CSV tables, a JSON summary for sweeps) plus a manifest
//! recording the canonical config, its hash, and an FNV-1a checksum of
//! each artifact. Re-running with the same config and seed reproduces
//! every artifact byte for byte.
//!
//! Exit codes: 0 success, 64 config error, 65 data error, 70 divergence
//! or non-finite numerics.

pub mod config;

use crate::data::{
    gen_multilabel, gen_multitask, gen_spurious_binary, GroupedDataset, MultilabelSpec,
    MultitaskSpec, Split, SpuriousSpec,
};
use crate::dedier::{
    dedier_train, readout_probe, weighting_curve, AuxSource, DedierEpoch, ReadoutReport,
    TrainSettings, WeightingParams,
};
use crate::error::{Error, Result};
use crate::harness::{
    cache_teacher_logits, eval_metrics, mean_std, sweep, train_erm, train_groupdro_lite,
    train_jtt_lite, train_kd, MetricsRow, ModelCfg, SweepCell, SweepResult,
};
use crate::linalg::DenseMatrix;
use crate::minmax::{
    direct_method_train, mixture_grad, one_step_update, GumbelConfig, MinmaxTrace,
    MixtureWeights, QuadraticTask, Split as TaskSplit, TaskBundle, TaskLoss, WorstTaskMode,
};
use crate::nn::loss::{hinge_grad, hinge_loss};
use crate::nn::{finite_diff_check, LossKind, LossTarget, MlpConfig, MlpModel};
use crate::rng::{fnv1a64, stream_seed, SplitMix64};
use crate::saddle::{
    DualRule, LabelModelBank, SaddleParams, SaddleTrace, StepSchedule, WeightInit,
};
use config::RunConfig;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_DIVERGENCE: i32 = 70;

const USAGE: &str = "usage: debias-opt <saddle|minmax|dedier|probe|sweep|gradcheck> \
--config <path> --out <dir> [--seed N]";

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match run_inner(args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Io(_) | Error::Shape(_) => EXIT_DATA,
        Error::NonFinite(_) | Error::Divergence { .. } => EXIT_DIVERGENCE,
    }
}

fn run_inner(args: &[String]) -> Result<()> {
    let parsed = CliArgs::parse(args)?;
    let config_text = std::fs::read_to_string(&parsed.config_path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", parsed.config_path)))?;
    run_to_dir(
        &parsed.subcommand,
        &config_text,
        Path::new(&parsed.out_dir),
        parsed.seed,
    )
}

struct CliArgs {
    subcommand: String,
    config_path: String,
    out_dir: String,
    seed: Option<u64>,
}

impl CliArgs {
    fn parse(args: &[String]) -> Result<Self> {
        let mut it = args.iter();
        let subcommand = it
            .next()
            .ok_or_else(|| Error::InvalidConfig(USAGE.into()))?
            .clone();
        let mut config_path = None;
        let mut out_dir = None;
        let mut seed = None;
        while let Some(flag) = it.next() {
            let value = it
                .next()
                .ok_or_else(|| Error::InvalidConfig(format!("{flag} needs a value\n{USAGE}")))?;
            match flag.as_str() {
                "--config" => config_path = Some(value.clone()),
                "--out" => out_dir = Some(value.clone()),
                "--seed" => {
                    seed = Some(value.parse::<u64>().map_err(|_| {
                        Error::InvalidConfig(format!("--seed must be an integer, got {value}"))
                    })?)
                }
                other => {
                    return Err(Error::InvalidConfig(format!("unknown flag {other}\n{USAGE}")))
                }
            }
        }
        Ok(Self {
            subcommand,
            config_path: config_path
                .ok_or_else(|| Error::InvalidConfig(format!("--config is required\n{USAGE}")))?,
            out_dir: out_dir
                .ok_or_else(|| Error::InvalidConfig(format!("--out is required\n{USAGE}")))?,
            seed,
        })
    }
}

/// Run a subcommand from config text into an output directory. Exposed so
/// tests can drive the CLI without a process boundary.
pub fn run_to_dir(
    subcommand: &str,
    config_text: &str,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<()> {
    let schema = match subcommand {
        "saddle" => config::SADDLE_SCHEMA,
        "minmax" => config::MINMAX_SCHEMA,
        "dedier" => config::DEDIER_SCHEMA,
        "probe" => config::PROBE_SCHEMA,
        "sweep" => config::SWEEP_SCHEMA,
        "gradcheck" => config::GRADCHECK_SCHEMA,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown subcommand {other}\n{USAGE}"
            )))
        }
    };
    let mut cfg = RunConfig::parse(config_text, schema)?;
    if let Some(seed) = seed_override {
        cfg.override_seed(seed);
    }
    let artifacts = match subcommand {
        "saddle" => run_saddle(&cfg)?,
        "minmax" => run_minmax(&cfg)?,
        "dedier" => run_dedier(&cfg)?,
        "probe" => run_probe(&cfg)?,
        "sweep" => run_sweep(&cfg)?,
        "gradcheck" => run_gradcheck(&cfg)?,
        _ => unreachable!(),
    };
    write_run(out_dir, subcommand, &cfg, &artifacts)
}

fn write_run(
    out_dir: &Path,
    subcommand: &str,
    cfg: &RunConfig,
    artifacts: &[(String, String)],
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let canonical = cfg.canonical();
    let mut manifest = String::new();
    manifest.push_str("# debias-opt run manifest\n");
    manifest.push_str(&format!("subcommand = {subcommand}\n"));
    manifest.push_str(&format!("seed = {}\n", cfg.u64("seed")));
    manifest.push_str(&format!(
        "config_hash = {:016x}\n",
        fnv1a64(canonical.as_bytes())
    ));
    manifest.push_str("[config]\n");
    manifest.push_str(&canonical);
    manifest.push_str("[artifacts]\n");
    for (name, content) in artifacts {
        std::fs::write(out_dir.join(name), content)?;
        manifest.push_str(&format!("{name} = {:016x}\n", fnv1a64(content.as_bytes())));
    }
    std::fs::write(out_dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Pull the embedded canonical config back out of a manifest; the run is
/// reproducible from exactly this text.
pub fn embedded_config(manifest: &str) -> Result<String> {
    let mut out = String::new();
    let mut inside = false;
    for line in manifest.lines() {
        match line {
            "[config]" => inside = true,
            "[artifacts]" => break,
            _ if inside => {
                out.push_str(line);
                out.push('\n');
            }
            _ => {}
        }
    }
    if out.is_empty() {
        return Err(Error::Data("manifest has no embedded config".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// saddle

fn run_saddle(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let (data, partition, prior) = gen_multilabel(&MultilabelSpec {
        n: cfg.usize("data.n"),
        m: cfg.usize("data.m"),
        labels: cfg.usize("data.labels"),
        overlap: cfg.f64("data.overlap"),
        privileged: cfg.usize("data.privileged"),
        seed: cfg.u64("seed"),
    })?;
    let params = SaddleParams {
        epsilon: cfg.f64("epsilon"),
        mu: cfg.f64("mu"),
        eta: cfg.f64("eta"),
        dual_rule: match cfg.text("dual_rule") {
            "raw" => DualRule::RawHingeSums,
            _ => DualRule::ExactAscent,
        },
        init: match cfg.text("init") {
            "zero" => WeightInit::Zero,
            _ => WeightInit::Prior,
        },
    };
    let schedule = match cfg.text("schedule") {
        "inv_sqrt" => StepSchedule::InvSqrt,
        _ => StepSchedule::Constant,
    };
    let mut bank = LabelModelBank::new(prior, partition, &data, params)?;
    let iters = cfg.usize("iters");
    let trace = match cfg.text("mode") {
        "fixed" => {
            let fixed = vec![cfg.f64("fixed_lambda"); bank.partition().complement().len()];
            bank.solve_fixed_lambda(&data, &fixed, iters, schedule)?
        }
        _ => bank.solve(&data, iters, schedule)?,
    };
    Ok(vec![("trace.csv".to_string(), saddle_trace_csv(&trace))])
}

pub fn saddle_trace_csv(trace: &SaddleTrace) -> String {
    let lambda_len = trace.iterates.first().map_or(0, |it| it.lambda.len());
    let mut out = String::from("iter,obj_p,constraint_residual_max");
    for i in 1..=lambda_len {
        out.push_str(&format!(",lambda_{i}"));
    }
    out.push('\n');
    for it in &trace.iterates {
        let max_residual = it
            .residuals
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!("{},{},{}", it.iter, it.objective_p, max_residual));
        for l in &it.lambda {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// minmax

fn run_minmax(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let seed = cfg.u64("seed");
    let noise = cfg.f64_list("tasks.noise");
    if noise.len() != cfg.usize("tasks.k") {
        return Err(Error::Data(format!(
            "tasks.noise has {} entries but tasks.k = {}",
            noise.len(),
            cfg.usize("tasks.k")
        )));
    }
    let mut bundle = gen_multitask(&MultitaskSpec {
        tasks: cfg.usize("tasks.k"),
        n_train: cfg.usize("tasks.n_train"),
        n_val: cfg.usize("tasks.n_val"),
        feature_dim: cfg.usize("tasks.m"),
        noise,
        margin: cfg.f64("tasks.margin"),
        seed,
    })?;
    if cfg.text("regularizer") == "l2" {
        bundle = bundle.with_regularizer(Box::new(crate::minmax::SquaredNorm));
    }
    let mut init_rng = SplitMix64::stream(seed, "theta-init");
    let scale = cfg.f64("theta_init_scale");
    let theta0: Vec<f64> = (0..bundle.param_dim())
        .map(|_| scale * init_rng.next_normal())
        .collect();
    if cfg.text("val_normalization") == "initial" {
        bundle = bundle.normalize_validation(&theta0);
    }
    let lambda0 = vec![1.0; bundle.weight_len()];
    let mode = match cfg.text("mode") {
        "gumbel" => WorstTaskMode::Gumbel(GumbelConfig {
            gumbel_tau: cfg.f64("gumbel_tau"),
            noise_seed: match cfg.text("gumbel_noise") {
                "off" => None,
                _ => Some(stream_seed(seed, "gumbel")),
            },
        }),
        "fixed" => WorstTaskMode::FixedWeights,
        _ => WorstTaskMode::HardArgmax,
    };
    let out = direct_method_train(
        &bundle,
        &lambda0,
        &theta0,
        cfg.usize("iters"),
        cfg.f64("alpha1"),
        cfg.f64("alpha2"),
        &mode,
    )?;
    Ok(vec![("trace.csv".to_string(), minmax_trace_csv(&out.trace))])
}

pub fn minmax_trace_csv(trace: &MinmaxTrace) -> String {
    let lambda_len = trace.iterates.first().map_or(0, |it| it.lambda.len());
    let mut out = String::from("iter,j_t,max_val_loss,min_val_loss");
    for i in 1..=lambda_len {
        out.push_str(&format!(",lambda_{i}"));
    }
    out.push('\n');
    for it in &trace.iterates {
        out.push_str(&format!(
            "{},{},{},{}",
            it.iter,
            it.worst_index + 1,
            it.max_val_loss,
            it.min_val_loss
        ));
        for l in &it.lambda {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// dedier

fn spurious_spec_from(cfg: &RunConfig) -> SpuriousSpec {
    SpuriousSpec {
        rho: cfg.f64("data.rho"),
        core_snr: cfg.f64("data.core_snr"),
        spur_snr: cfg.f64("data.spur_snr"),
        n_train: cfg.usize("data.n_train"),
        n_val: cfg.usize("data.n_val"),
        n_test_per_group: cfg.usize("data.n_test_per_group"),
        seed: cfg.u64("seed"),
    }
}

fn train_teacher(cfg: &RunConfig, data: &GroupedDataset, seed: u64) -> Result<MlpModel> {
    let tcfg = ModelCfg {
        hidden: cfg.usize_list("teacher.hidden"),
        lr: cfg.f64("teacher.lr"),
        batch_size: cfg.usize("teacher.batch"),
    };
    train_groupdro_lite(
        data,
        &tcfg,
        cfg.f64("teacher.group_step"),
        cfg.usize("teacher.epochs"),
        stream_seed(seed, "teacher"),
    )
}

fn run_dedier(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let seed = cfg.u64("seed");
    let data = gen_spurious_binary(&spurious_spec_from(cfg))?;
    let teacher = train_teacher(cfg, &data, seed)?;
    let train_view = data.class_view(Split::Train);
    let teacher_logits = cache_teacher_logits(&teacher, &train_view)?;

    let mut init_rng = SplitMix64::stream(seed, "student-init");
    let student = MlpModel::new(
        &MlpConfig {
            input_dim: train_view.feature_dim(),
            hidden: cfg.usize_list("student.hidden"),
            outputs: train_view.classes(),
            freeze_bias: false,
        },
        &mut init_rng,
    )?;
    let params = WeightingParams {
        alpha: cfg.f64("alpha"),
        beta: cfg.f64("beta"),
        kd_mix: cfg.f64("kd_mix"),
        kd_temperature: cfg.f64("kd_temperature"),
        aux_position: cfg.usize("aux_position"),
        refresh_interval: cfg.usize("refresh_interval"),
        aux_epochs: cfg.usize("aux_epochs"),
    };
    let settings = TrainSettings {
        lr: cfg.f64("student.lr"),
        batch_size: cfg.usize("student.batch"),
        aux_lr: cfg.f64("aux_lr"),
    };
    let out = dedier_train(
        student,
        &teacher_logits,
        &data,
        &params,
        cfg.usize("student.epochs"),
        &settings,
        seed,
        AuxSource::Learned,
    )?;

    let test = data.grouped_view(Split::Test);
    let rows = vec![
        MetricsRow {
            method: "teacher_groupdro".into(),
            seed,
            ..eval_metrics(&teacher, &test)?
        },
        MetricsRow {
            method: "dedier".into(),
            seed,
            ..eval_metrics(&out.student, &test)?
        },
    ];

    Ok(vec![
        ("trace.csv".to_string(), dedier_trace_csv(&out.trace)),
        ("readout.csv".to_string(), readout_csv(&out.reports)),
        (
            "weighting_curve.csv".to_string(),
            weighting_curve_csv(&[(cfg.f64("alpha"), cfg.f64("beta"))], 100)?,
        ),
        ("metrics.csv".to_string(), metrics_csv(&rows)),
    ])
}

/// Per-epoch training dynamics, one row per epoch (the reweighting
/// evolution panels).
pub fn dedier_trace_csv(trace: &[DedierEpoch]) -> String {
    let groups = trace.first().map_or(4, |r| r.group_error_aux.len());
    let mut out = String::from("epoch");
    for g in 0..groups {
        out.push_str(&format!(",group_{g}_error_aux"));
    }
    for g in 0..groups {
        out.push_str(&format!(",group_{g}_mean_weight"));
    }
    for g in 0..groups {
        out.push_str(&format!(",group_{g}_acc_final"));
    }
    out.push_str(",avg_acc,wga\n");
    for row in trace {
        out.push_str(&row.epoch.to_string());
        for v in &row.group_error_aux {
            out.push_str(&format!(",{v}"));
        }
        for v in &row.group_mean_weight {
            out.push_str(&format!(",{v}"));
        }
        for v in &row.group_acc_final {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", row.avg_acc, row.wga));
    }
    out
}

/// Readout diagnostics, one row per (report, group).
pub fn readout_csv(reports: &[ReadoutReport]) -> String {
    let mut out =
        String::from("report,depth,group,population,error_rate,mean_error_margin,error_share\n");
    for (idx, report) in reports.iter().enumerate() {
        for g in &report.groups {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                idx,
                report.depth,
                g.group,
                g.population,
                g.error_rate,
                g.mean_error_margin,
                g.error_share
            ));
        }
    }
    out
}

/// Weighting-scheme curves for a list of (alpha, beta) settings.
pub fn weighting_curve_csv(settings: &[(f64, f64)], samples: usize) -> Result<String> {
    let mut out = String::from("alpha,beta,cm,wt\n");
    for &(alpha, beta) in settings {
        for (cm, wt) in weighting_curve(alpha, beta, samples)? {
            out.push_str(&format!("{alpha},{beta},{cm},{wt}\n"));
        }
    }
    Ok(out)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let groups = rows.first().map_or(4, |r| r.per_group_acc.len());
    let mut out = String::from("method,seed,avg_acc,wga");
    for g in 0..groups {
        out.push_str(&format!(",acc_group_{g}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{},{},{}", row.method, row.seed, row.avg_acc, row.wga));
        for v in &row.per_group_acc {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// probe

fn run_probe(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let seed = cfg.u64("seed");
    let data = gen_spurious_binary(&spurious_spec_from(cfg))?;
    let mcfg = ModelCfg {
        hidden: cfg.usize_list("model.hidden"),
        lr: cfg.f64("model.lr"),
        batch_size: cfg.usize("model.batch"),
    };
    let model = train_erm(&data, &mcfg, cfg.usize("model.epochs"), seed)?;
    let reports = readout_probe(
        &model,
        &data,
        &cfg.usize_list("depths"),
        cfg.usize("decoder.epochs"),
        cfg.f64("decoder.lr"),
        cfg.usize("decoder.batch"),
        seed,
    )?;
    Ok(vec![("readout.csv".to_string(), readout_csv(&reports))])
}

// ---------------------------------------------------------------------------
// sweep

fn run_sweep(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let data = gen_spurious_binary(&spurious_spec_from(cfg))?;
    let test = data.grouped_view(Split::Test);
    let scfg = ModelCfg {
        hidden: cfg.usize_list("student.hidden"),
        lr: cfg.f64("student.lr"),
        batch_size: cfg.usize("student.batch"),
    };
    let epochs = cfg.usize("student.epochs");
    let methods: Vec<String> = match cfg.text("methods") {
        "all" => ["erm", "kd", "jtt", "groupdro", "dedier"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        one => vec![one.to_string()],
    };
    let seeds = cfg.u64_list("seeds");
    // Only the weighted-distillation method consumes the grid; everything
    // else runs once per seed on a single default assignment.
    let grid = vec![
        ("alpha".to_string(), cfg.f64_list("grid.alpha")),
        ("beta".to_string(), cfg.f64_list("grid.beta")),
    ];
    let single_cell = vec![
        ("alpha".to_string(), vec![cfg.f64_list("grid.alpha")[0]]),
        ("beta".to_string(), vec![cfg.f64_list("grid.beta")[0]]),
    ];

    // Teachers are shared per seed across all distillation cells.
    let mut teacher_cache: std::collections::BTreeMap<u64, (MlpModel, Vec<Vec<f64>>)> =
        std::collections::BTreeMap::new();
    for &seed in &seeds {
        let teacher = train_teacher(cfg, &data, seed)?;
        let logits = cache_teacher_logits(&teacher, &data.class_view(Split::Train))?;
        teacher_cache.insert(seed, (teacher, logits));
    }

    let run_cell = |cell: &SweepCell| {
        let seed = cell.seed;
        let model = match cell.method.as_str() {
            "erm" => train_erm(&data, &scfg, epochs, seed)?,
            "kd" => {
                let (_, logits) = &teacher_cache[&seed];
                train_kd(
                    &data,
                    &scfg,
                    logits,
                    cfg.f64("kd_mix"),
                    cfg.f64("kd_temperature"),
                    epochs,
                    seed,
                )?
            }
            "jtt" => {
                train_jtt_lite(
                    &data,
                    &scfg,
                    cfg.usize("jtt.first_epochs"),
                    cfg.f64("jtt.upweight"),
                    epochs,
                    seed,
                )?
                .model
            }
            "groupdro" => {
                train_groupdro_lite(&data, &scfg, cfg.f64("teacher.group_step"), epochs, seed)?
            }
            "dedier" => {
                let (_, logits) = &teacher_cache[&seed];
                let mut init_rng = SplitMix64::stream(seed, "student-init");
                let student = MlpModel::new(
                    &MlpConfig {
                        input_dim: data.feature_dim(),
                        hidden: scfg.hidden.clone(),
                        outputs: data.classes(),
                        freeze_bias: false,
                    },
                    &mut init_rng,
                )?;
                let assignment: std::collections::BTreeMap<&str, f64> = cell
                    .assignment
                    .iter()
                    .map(|(k, v)| (k.as_str(), *v))
                    .collect();
                let params = WeightingParams {
                    alpha: assignment["alpha"],
                    beta: assignment["beta"],
                    kd_mix: cfg.f64("kd_mix"),
                    kd_temperature: cfg.f64("kd_temperature"),
                    aux_position: cfg.usize("aux_position"),
                    refresh_interval: cfg.usize("refresh_interval"),
                    aux_epochs: cfg.usize("aux_epochs"),
                };
                let settings = TrainSettings {
                    lr: scfg.lr,
                    batch_size: scfg.batch_size,
                    aux_lr: cfg.f64("aux_lr"),
                };
                dedier_train(
                    student,
                    logits,
                    &data,
                    &params,
                    epochs,
                    &settings,
                    seed,
                    AuxSource::Learned,
                )?
                .student
            }
            other => return Err(Error::Data(format!("unknown method {other}"))),
        };
        eval_metrics(&model, &test)
    };
    let mut result = SweepResult::default();
    for method in &methods {
        let method_grid = if method == "dedier" { &grid } else { &single_cell };
        let part = sweep(method_grid, &seeds, std::slice::from_ref(method), run_cell);
        result.rows.extend(part.rows);
        result.failures.extend(part.failures);
    }

    // Results table.
    let mut out = String::from("method,seed,alpha,beta,avg_acc,wga");
    let groups = test.group_count();
    for g in 0..groups {
        out.push_str(&format!(",acc_group_{g}"));
    }
    out.push('\n');
    for (cell, row) in &result.rows {
        let alpha = cell.assignment[0].1;
        let beta = cell.assignment[1].1;
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            cell.method, cell.seed, alpha, beta, row.avg_acc, row.wga
        ));
        for v in &row.per_group_acc {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }

    // JSON summary: per-method mean/std over seeds (all grid cells pooled
    // for dedier, whose grid sensitivity is reported separately).
    let mut json = String::from("{\n");
    json.push_str(&format!("  \"failures\": {},\n", result.failures.len()));
    json.push_str("  \"methods\": {\n");
    let mut first = true;
    for method in &methods {
        let avg: Vec<f64> = result
            .rows
            .iter()
            .filter(|(c, _)| &c.method == method)
            .map(|(_, r)| r.avg_acc)
            .collect();
        let wga: Vec<f64> = result
            .rows
            .iter()
            .filter(|(c, _)| &c.method == method)
            .map(|(_, r)| r.wga)
            .collect();
        let (am, asd) = mean_std(&avg);
        let (wm, wsd) = mean_std(&wga);
        if !first {
            json.push_str(",\n");
        }
        first = false;
        json.push_str(&format!(
            "    \"{method}\": {{\"avg_acc_mean\": {am}, \"avg_acc_std\": {asd}, \"wga_mean\": {wm}, \"wga_std\": {wsd}, \"runs\": {}}}",
            avg.len()
        ));
    }
    json.push_str("\n  },\n");
    let dedier_wga: Vec<f64> = result
        .rows
        .iter()
        .filter(|(c, _)| c.method == "dedier")
        .map(|(_, r)| r.wga)
        .collect();
    let (_, grid_std) = mean_std(&dedier_wga);
    json.push_str(&format!("  \"dedier_grid_wga_std\": {grid_std}\n"));
    json.push_str("}\n");

    Ok(vec![
        ("results.csv".to_string(), out),
        ("summary.json".to_string(), json),
    ])
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradTarget {
    name: &'static str,
    max_rel_err: f64,
}

fn run_gradcheck(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let seed = cfg.u64("seed");
    let trials = cfg.usize("trials");
    let h = cfg.f64("step");
    let tolerance = cfg.f64("tolerance");
    let results = gradcheck_suite(seed, trials, h)?;
    let mut out = String::from("target,trials,max_rel_err,tolerance,pass\n");
    for t in &results {
        let pass = t.max_rel_err < tolerance;
        println!(
            "gradcheck {:<24} max_rel_err {:.3e} tolerance {:.1e} {}",
            t.name,
            t.max_rel_err,
            tolerance,
            if pass { "pass" } else { "FAIL" }
        );
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.name, trials, t.max_rel_err, tolerance, pass
        ));
    }
    Ok(vec![("gradcheck.csv".to_string(), out)])
}

/// The finite-difference suite: every loss family backpropagated through
/// random small models, the saddle gradient against the Lagrangian, and
/// the one-step hypergradient on random quadratics. Returns the max
/// relative error per target over `trials` kink-safe instances.
fn gradcheck_suite(seed: u64, trials: usize, h: f64) -> Result<Vec<GradTarget>> {
    let mut out = Vec::new();
    let loss_kinds: [(&'static str, LossKind); 3] = [
        ("cross_entropy_softmax", LossKind::CrossEntropySoftmax),
        ("bce_sigmoid_per_label", LossKind::BceSigmoidPerLabel),
        (
            "kd_kl_with_temperature",
            LossKind::KdKlWithTemperature { temperature: 2.0 },
        ),
    ];
    for (name, kind) in loss_kinds {
        let mut rng = SplitMix64::stream(seed, name);
        let mut worst = 0.0f64;
        let mut done = 0;
        while done < trials {
            let (model, x) = random_small_model(&mut rng)?;
            if min_relu_margin(&model, &x) < 1e-3 {
                continue;
            }
            let outputs = model.output_dim();
            let target = match kind {
                LossKind::CrossEntropySoftmax => LossTarget::Class(rng.next_below(outputs)),
                LossKind::BceSigmoidPerLabel => LossTarget::Binary(
                    (0..outputs)
                        .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
                        .collect(),
                ),
                LossKind::KdKlWithTemperature { .. } => LossTarget::TeacherLogits(
                    (0..outputs).map(|_| rng.next_normal()).collect(),
                ),
                LossKind::Hinge => unreachable!(),
            };
            let err = model_loss_gradcheck(&model, &x, &kind, &target, h)?;
            worst = worst.max(err);
            done += 1;
        }
        out.push(GradTarget {
            name,
            max_rel_err: worst,
        });
    }

    // Hinge on a linear scorer, away from the kink.
    {
        let mut rng = SplitMix64::stream(seed, "hinge");
        let mut worst = 0.0f64;
        let mut done = 0;
        while done < trials {
            let dim = 3 + rng.next_below(4);
            let logits: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            let signs: Vec<f64> = (0..dim)
                .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { -1.0 })
                .collect();
            if logits
                .iter()
                .zip(&signs)
                .any(|(&z, &y)| (1.0 - y * z).abs() < 1e-3)
            {
                continue;
            }
            let grad = hinge_grad(&logits, &signs)?;
            let err = finite_diff_check(
                |z| hinge_loss(z, &signs).unwrap(),
                &grad,
                &logits,
                h,
            )?;
            worst = worst.max(err);
            done += 1;
        }
        out.push(GradTarget {
            name: "hinge",
            max_rel_err: worst,
        });
    }

    out.push(GradTarget {
        name: "saddle_lagrangian",
        max_rel_err: saddle_gradcheck(seed, trials, h)?,
    });
    out.push(GradTarget {
        name: "minmax_hypergradient",
        max_rel_err: hypergradient_gradcheck(seed, trials, h)?,
    });
    Ok(out)
}

fn random_small_model(rng: &mut SplitMix64) -> Result<(MlpModel, Vec<f64>)> {
    let input = 2 + rng.next_below(3);
    let layers = 1 + rng.next_below(2);
    let hidden: Vec<usize> = (0..layers).map(|_| 2 + rng.next_below(6)).collect();
    let outputs = 2 + rng.next_below(3);
    let model = MlpModel::new(
        &MlpConfig {
            input_dim: input,
            hidden,
            outputs,
            freeze_bias: false,
        },
        rng,
    )?;
    let x: Vec<f64> = (0..input).map(|_| rng.next_normal()).collect();
    Ok((model, x))
}

/// Smallest |pre-activation| over all relu units; finite differences are
/// only trusted when every relu argument clears the kink.
fn min_relu_margin(model: &MlpModel, x: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    let mut current = x.to_vec();
    for layer in model.layers() {
        let mut z = layer.weights.matvec(&current);
        for (zi, &b) in z.iter_mut().zip(&layer.biases) {
            *zi += b;
        }
        if layer.activation == crate::nn::Activation::Relu {
            for &zi in &z {
                margin = margin.min(zi.abs());
            }
            for zi in &mut z {
                if *zi < 0.0 {
                    *zi = 0.0;
                }
            }
        }
        current = z;
    }
    margin
}

fn model_loss_gradcheck(
    model: &MlpModel,
    x: &[f64],
    kind: &LossKind,
    target: &LossTarget,
    h: f64,
) -> Result<f64> {
    let (logits, taps) = model.forward(x)?;
    let at_logits = kind.grad(&logits, target)?;
    let grads = model.backward(x, &taps, &at_logits)?;
    let mut flat = Vec::new();
    for (dw, db) in grads.d_weights.iter().zip(&grads.d_biases) {
        flat.extend_from_slice(dw.as_slice());
        flat.extend_from_slice(db);
    }
    let params = model.params_vec();
    let kind = kind.clone();
    let target = target.clone();
    let model_ref = model;
    finite_diff_check(
        move |p| {
            let mut m = model_ref.clone();
            m.set_params(p).unwrap();
            let (logits, _) = m.forward(x).unwrap();
            kind.value(&logits, &target).unwrap()
        },
        &flat,
        &params,
        h,
    )
}

fn saddle_gradcheck(seed: u64, trials: usize, h: f64) -> Result<f64> {
    let mut rng = SplitMix64::stream(seed, "saddle-gradcheck");
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < trials {
        let n = 4 + rng.next_below(4);
        let t = 3 + rng.next_below(2);
        let m = 2 + rng.next_below(2);
        let mut rows = Vec::with_capacity(n);
        let mut signs: Vec<i8> = Vec::with_capacity(n * t);
        for _ in 0..n {
            rows.push((0..m).map(|_| rng.next_normal()).collect::<Vec<_>>());
            let mut any = false;
            for _ in 0..t {
                let s: i8 = if rng.next_f64() < 0.4 { 1 } else { -1 };
                any |= s == 1;
                signs.push(s);
            }
            if !any {
                let len = signs.len();
                signs[len - t] = 1;
            }
        }
        let data = crate::saddle::MultiLabelDataset::new(
            DenseMatrix::from_rows(&rows)?,
            signs,
        )?;
        let mut weights = DenseMatrix::zeros(t, m);
        for v in weights.as_mut_slice() {
            *v = 0.5 * rng.next_normal();
        }
        // Reject draws near set-membership boundaries.
        let mut margin = f64::INFINITY;
        for i in 0..n {
            let x = data.feature_row(i);
            let scores: Vec<f64> = (0..t)
                .map(|l| crate::linalg::dot(weights.row(l), x))
                .collect();
            for l in 0..t {
                if data.sign(i, l) <= 0 {
                    continue;
                }
                for j in 0..t {
                    if data.sign(i, j) < 0 {
                        margin = margin.min((scores[j] - scores[l]).abs());
                    }
                }
            }
        }
        if margin < 1e-3 {
            continue;
        }
        let mut prior = DenseMatrix::zeros(t, m);
        for v in prior.as_mut_slice() {
            *v = 0.5 * rng.next_normal();
        }
        let partition = crate::saddle::PrivilegedPartition::new(t, &[0])?;
        let mut bank = LabelModelBank::new(
            prior,
            partition,
            &data,
            SaddleParams {
                epsilon: 0.1,
                mu: 1.0,
                eta: 0.1,
                dual_rule: DualRule::ExactAscent,
                init: WeightInit::Prior,
            },
        )?;
        bank.set_weights(weights.clone())?;
        let lambda: Vec<f64> = (0..t - 1).map(|_| rng.next_f64()).collect();
        bank.set_lambda(&lambda)?;

        let grad = bank.primal_gradient(&data);
        let bank_ref = &bank;
        let data_ref = &data;
        let err = finite_diff_check(
            |p| {
                let mut b = bank_ref.clone();
                b.set_weights(DenseMatrix::from_vec(t, m, p.to_vec()).unwrap()).unwrap();
                b.lagrangian(data_ref)
            },
            grad.as_slice(),
            weights.as_slice(),
            h,
        )?;
        worst = worst.max(err);
        done += 1;
    }
    Ok(worst)
}

fn hypergradient_gradcheck(seed: u64, trials: usize, h: f64) -> Result<f64> {
    let mut rng = SplitMix64::stream(seed, "hypergrad-gradcheck");
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let dim = 2 + rng.next_below(3);
        let k = 2 + rng.next_below(2);
        let tasks: Vec<Box<dyn TaskLoss>> = (0..k)
            .map(|_| {
                Box::new(QuadraticTask {
                    center: (0..dim).map(|_| rng.next_normal()).collect(),
                    diag: (0..dim).map(|_| 0.5 + rng.next_f64()).collect(),
                }) as Box<dyn TaskLoss>
            })
            .collect();
        let bundle = TaskBundle::new(tasks, dim)?;
        let theta: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let lambda: Vec<f64> = (0..k).map(|_| 0.3 + rng.next_f64()).collect();
        let alpha1 = 0.05;
        let weights = MixtureWeights {
            lambda: lambda.clone(),
            alpha1,
            alpha2: 0.1,
        };
        let step = one_step_update(&theta, &weights, &bundle)?;
        let j = step.worst_index;
        let bundle_ref = &bundle;
        let theta_ref = &theta;
        let err = finite_diff_check(
            |l| {
                let g = mixture_grad(theta_ref, l, bundle_ref).unwrap();
                let mut th = theta_ref.clone();
                crate::linalg::axpy(&mut th, -alpha1, &g);
                bundle_ref.task_loss(j, &th, TaskSplit::Val)
            },
            &step.hypergradient,
            &lambda,
            h,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}
