//! High-level operations behind the CLI subcommands. Each function
//! does the work and writes its artifacts; the binary only parses
//! arguments and maps results to exit codes.

use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    default_tau_grid, evaluate_network, roc_points, scale_sweep, EvalError, EvalSummary,
};
use crate::gradcheck::{
    check_iou_gradients, check_network_gradients, standard_layer_checks, GradCheckReport,
    DEFAULT_EXCLUSION,
};
use crate::loss::LossKind;
use crate::nn::{load_checkpoint, save_checkpoint, CheckpointError, Network, NetworkConfig};
use crate::report::{fmt_g6, write_csv, write_pgm, write_svg_plot, Series};
use crate::synth::{SampleStream, SynthError};
use crate::train::{learning_rate_grid, LossBreakdown, RateTrial, Trainer, TrainError};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("network: {0}")]
    Nn(#[from] crate::nn::NnError),
    #[error("data: {0}")]
    Synth(#[from] SynthError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { path: path.to_path_buf(), source }
}

/// Number of checked scenes when ranking learning-rate candidates.
const TRIAL_EVAL_SCENES: usize = 50;

// ---------------------------------------------------------------- gradcheck

/// Runs the full gradient-check battery and prints one summary line per
/// check. Returns true iff every check passed.
pub fn cmd_gradcheck(
    samples: usize,
    seed: u64,
    tol: f64,
    csv_out: Option<&Path>,
) -> Result<bool, CommandError> {
    let mut reports: Vec<GradCheckReport> = Vec::new();
    reports.push(check_iou_gradients(samples, seed, tol, DEFAULT_EXCLUSION));
    reports.extend(standard_layer_checks(seed, tol));
    let probe_cfg = NetworkConfig {
        stem: vec![4, 8],
        conf_tap: 1,
        box_tap: 2,
        seed,
        ..NetworkConfig::default()
    };
    for kind in [LossKind::Iou, LossKind::L2] {
        reports.push(check_network_gradients(&probe_cfg, (16, 16), kind, 2, seed, tol.max(1e-3)));
    }

    for r in &reports {
        println!("{}", r.summary());
    }
    if let Some(path) = csv_out {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    r.samples.to_string(),
                    r.components.to_string(),
                    fmt_g6(r.max_rel_error),
                    fmt_g6(r.mean_rel_error),
                    fmt_g6(r.tolerance),
                    if r.pass { "pass" } else { "fail" }.to_string(),
                ]
            })
            .collect();
        write_csv(
            path,
            &["check", "samples", "components", "max_rel_error", "mean_rel_error", "tolerance", "result"],
            &rows,
        )
        .map_err(io_at(path))?;
    }
    Ok(reports.iter().all(|r| r.pass))
}

// -------------------------------------------------------------------- train

/// Everything a finished training run leaves behind.
pub struct TrainedRun {
    pub cfg: RunConfig,
    pub net: Network,
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log_csv: PathBuf,
}

/// Trains per the config and writes the run directory:
/// `out_dir/name/{checkpoints,logs,curves}`. The loss log has one row
/// per iteration, measured before that iteration's update, so row 0 is
/// the untrained network.
pub fn run_training(cfg: &RunConfig, quiet: bool) -> Result<TrainedRun, CommandError> {
    cfg.validate()?;
    let run_dir = cfg.run.out_dir.join(&cfg.run.name);
    let ckpt_dir = run_dir.join("checkpoints");
    let logs_dir = run_dir.join("logs");
    let curves_dir = run_dir.join("curves");
    for d in [&ckpt_dir, &logs_dir, &curves_dir] {
        std::fs::create_dir_all(d).map_err(io_at(d))?;
    }

    let stream = SampleStream::new(cfg.data.clone(), cfg.run.train_seed);
    let mut trainer = Trainer::new(
        cfg.network.clone(),
        cfg.optimizer,
        stream,
        cfg.loss.kind,
        cfg.loss.box_weight,
    )?;
    let echo = cfg.to_toml_string();

    let save = |net: &Network, iter: u64| -> Result<PathBuf, CommandError> {
        let path = ckpt_dir.join(format!("ckpt_{iter:06}.bin"));
        let named: Vec<(String, &crate::tensor::Tensor)> = net
            .param_names()
            .into_iter()
            .zip(net.params())
            .collect();
        save_checkpoint(&path, &echo, &named)?;
        Ok(path)
    };

    let mut rows: Vec<Vec<String>> = Vec::with_capacity(cfg.run.iterations as usize);
    let mut history: Vec<(u64, LossBreakdown)> = Vec::new();
    for iter in 0..cfg.run.iterations {
        let losses = trainer.step()?;
        rows.push(vec![
            iter.to_string(),
            fmt_g6(losses.combined),
            fmt_g6(losses.conf),
            fmt_g6(losses.boxes),
        ]);
        history.push((iter, losses));
        if (iter + 1) % cfg.run.checkpoint_stride == 0 && iter + 1 != cfg.run.iterations {
            save(&trainer.net, iter + 1)?;
        }
        if !quiet && (iter + 1) % 500 == 0 {
            println!(
                "[{}] iter {}/{} combined {}",
                cfg.run.name,
                iter + 1,
                cfg.run.iterations,
                fmt_g6(losses.combined)
            );
        }
    }
    let final_checkpoint = save(&trainer.net, cfg.run.iterations)?;

    let log_csv = logs_dir.join("train.csv");
    write_csv(&log_csv, &["iteration", "combined", "conf", "box"], &rows)
        .map_err(io_at(&log_csv))?;

    let curve = curves_dir.join("loss.svg");
    let series = vec![
        Series {
            label: "combined".into(),
            points: history.iter().map(|(i, l)| (*i as f64, l.combined)).collect(),
        },
        Series {
            label: "conf".into(),
            points: history.iter().map(|(i, l)| (*i as f64, l.conf)).collect(),
        },
        Series {
            label: "box".into(),
            points: history.iter().map(|(i, l)| (*i as f64, l.boxes)).collect(),
        },
    ];
    write_svg_plot(&curve, &cfg.run.name, "iteration", "loss", &series, false)
        .map_err(io_at(&curve))?;

    Ok(TrainedRun { cfg: cfg.clone(), net: trainer.net, run_dir, final_checkpoint, log_csv })
}

pub fn cmd_train(config_path: &Path, quiet: bool) -> Result<TrainedRun, CommandError> {
    let cfg = RunConfig::load(config_path)?;
    let run = run_training(&cfg, quiet)?;
    if !quiet {
        println!("run complete: {}", run.run_dir.display());
    }
    Ok(run)
}

// --------------------------------------------------------------------- eval

/// Rebuilds the network stored in a checkpoint, using the config echoed
/// into the file.
pub fn network_from_checkpoint(path: &Path) -> Result<(RunConfig, Network), CommandError> {
    let (echo, tensors) = load_checkpoint(path)?;
    let cfg = RunConfig::from_toml_str(&echo, path)?;
    let mut net = Network::new(cfg.network.clone())?;
    net.set_params(&tensors)?;
    Ok((cfg, net))
}

pub fn cmd_eval(
    checkpoint: &Path,
    scenes: Option<usize>,
    seed: Option<u64>,
    threads: usize,
    csv_out: Option<&Path>,
) -> Result<EvalSummary, CommandError> {
    let (cfg, net) = network_from_checkpoint(checkpoint)?;
    let n = scenes.unwrap_or(cfg.run.eval_scenes);
    let seed = seed.unwrap_or(cfg.run.eval_seed);
    let samples = crate::eval::build_eval_set(&cfg.data, seed, n)?;
    let summary = evaluate_network(&net, &samples, &cfg.postprocess, 0.5, threads)?;
    println!(
        "scenes {} objects {} tp {} fp {} missed {} miss_rate {} mean_center_iou {}",
        n,
        summary.objects,
        summary.tp,
        summary.fp,
        summary.missed,
        fmt_g6(summary.miss_rate),
        fmt_g6(summary.mean_center_iou),
    );
    if let Some(path) = csv_out {
        write_csv(
            path,
            &["scenes", "objects", "tp", "fp", "missed", "miss_rate", "mean_center_iou"],
            &[vec![
                n.to_string(),
                summary.objects.to_string(),
                summary.tp.to_string(),
                summary.fp.to_string(),
                summary.missed.to_string(),
                fmt_g6(summary.miss_rate),
                fmt_g6(summary.mean_center_iou),
            ]],
        )
        .map_err(io_at(path))?;
    }
    Ok(summary)
}

// ------------------------------------------------------------------ compare

pub struct CompareModelOutcome {
    pub kind: LossKind,
    pub selected_rate: f64,
    pub trials: Vec<RateTrial>,
    pub summary: EvalSummary,
    pub final_checkpoint: PathBuf,
    pub net: Network,
}

pub struct CompareOutcome {
    pub out_dir: PathBuf,
    pub iou: CompareModelOutcome,
    pub l2: CompareModelOutcome,
}

/// Short-budget trial of one learning rate; a run that produces a
/// non-finite loss counts as diverged and ranks last.
fn trial_rate(
    base: &RunConfig,
    kind: LossKind,
    rate: f64,
    trial_iters: u64,
) -> Result<RateTrial, CommandError> {
    let mut cfg = base.clone();
    cfg.optimizer.learning_rate = rate;
    cfg.loss.kind = kind;
    let stream = SampleStream::new(cfg.data.clone(), cfg.run.train_seed);
    let mut trainer =
        Trainer::new(cfg.network.clone(), cfg.optimizer, stream, kind, cfg.loss.box_weight)?;
    for _ in 0..trial_iters {
        match trainer.step() {
            Ok(_) => {}
            Err(TrainError::NonFiniteLoss { .. }) | Err(TrainError::Optim(_)) => {
                return Ok(RateTrial { rate, miss_rate: 1.0, mean_center_iou: 0.0, diverged: true });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let samples = crate::eval::build_eval_set(&cfg.data, cfg.run.eval_seed, TRIAL_EVAL_SCENES)?;
    let summary = evaluate_network(&trainer.net, &samples, &cfg.postprocess, 0.5, 1)?;
    Ok(RateTrial {
        rate,
        miss_rate: summary.miss_rate,
        mean_center_iou: summary.mean_center_iou,
        diverged: false,
    })
}

/// Picks the rate with the lowest trial miss rate, breaking ties by the
/// higher mean center IoU, then by the lower rate.
pub fn select_learning_rate(
    base: &RunConfig,
    kind: LossKind,
    quiet: bool,
) -> Result<(f64, Vec<RateTrial>), CommandError> {
    let trial_iters = (base.run.iterations / 4).max(1);
    let mut trials = Vec::new();
    for rate in learning_rate_grid() {
        let t = trial_rate(base, kind, rate, trial_iters)?;
        if !quiet {
            println!(
                "  {kind} lr {}: miss_rate {} mean_center_iou {}{}",
                fmt_g6(t.rate),
                fmt_g6(t.miss_rate),
                fmt_g6(t.mean_center_iou),
                if t.diverged { " (diverged)" } else { "" },
            );
        }
        trials.push(t);
    }
    let best = trials
        .iter()
        .fold(None::<&RateTrial>, |best, t| match best {
            None => Some(t),
            Some(b) => {
                if t.miss_rate < b.miss_rate
                    || (t.miss_rate == b.miss_rate && t.mean_center_iou > b.mean_center_iou)
                {
                    Some(t)
                } else {
                    Some(b)
                }
            }
        })
        .expect("grid is non-empty");
    Ok((best.rate, trials))
}

/// Runs the full fair comparison: per loss, a rate sweep at a quarter
/// of the budget, then a full-budget run at the selected rate from an
/// identical initialization. Writes selection, convergence, evaluation
/// and ROC artifacts under `out_dir`.
pub fn cmd_compare(base: &RunConfig, quiet: bool) -> Result<CompareOutcome, CommandError> {
    base.validate()?;
    let out_dir = base.run.out_dir.join(&base.run.name);
    std::fs::create_dir_all(&out_dir).map_err(io_at(&out_dir))?;

    let mut outcomes: Vec<CompareModelOutcome> = Vec::new();
    let mut selection_rows: Vec<Vec<String>> = Vec::new();
    let mut log_rows: Vec<(LossKind, Vec<Vec<String>>)> = Vec::new();

    for kind in [LossKind::Iou, LossKind::L2] {
        if !quiet {
            println!("selecting learning rate for {kind}");
        }
        let (rate, trials) = select_learning_rate(base, kind, quiet)?;
        for t in &trials {
            selection_rows.push(vec![
                kind.to_string(),
                fmt_g6(t.rate),
                fmt_g6(t.miss_rate),
                fmt_g6(t.mean_center_iou),
                if t.diverged { "yes" } else { "no" }.to_string(),
                if t.rate == rate { "yes" } else { "no" }.to_string(),
            ]);
        }

        let mut cfg = base.clone();
        cfg.run.name = format!("{}_{kind}", base.run.name);
        cfg.optimizer.learning_rate = rate;
        cfg.loss.kind = kind;
        let run = run_training(&cfg, quiet)?;

        let log_text = std::fs::read_to_string(&run.log_csv).map_err(io_at(&run.log_csv))?;
        let rows: Vec<Vec<String>> = log_text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        log_rows.push((kind, rows));

        let samples =
            crate::eval::build_eval_set(&cfg.data, cfg.run.eval_seed, cfg.run.eval_scenes)?;
        let summary = evaluate_network(&run.net, &samples, &cfg.postprocess, 0.5, 1)?;
        if !quiet {
            println!(
                "{kind}: lr {} miss_rate {} mean_center_iou {}",
                fmt_g6(rate),
                fmt_g6(summary.miss_rate),
                fmt_g6(summary.mean_center_iou),
            );
        }
        outcomes.push(CompareModelOutcome {
            kind,
            selected_rate: rate,
            trials,
            summary,
            final_checkpoint: run.final_checkpoint,
            net: run.net,
        });
    }

    let sel_path = out_dir.join("selection.csv");
    write_csv(
        &sel_path,
        &["model", "learning_rate", "miss_rate", "mean_center_iou", "diverged", "selected"],
        &selection_rows,
    )
    .map_err(io_at(&sel_path))?;

    // joint convergence table: both models share the iteration grid
    let (iou_rows, l2_rows) = (&log_rows[0].1, &log_rows[1].1);
    assert_eq!(iou_rows.len(), l2_rows.len(), "full runs share the iteration budget");
    let joint: Vec<Vec<String>> = iou_rows
        .iter()
        .zip(l2_rows)
        .map(|(a, b)| {
            vec![a[0].clone(), a[1].clone(), a[2].clone(), a[3].clone(), b[1].clone(), b[2].clone(), b[3].clone()]
        })
        .collect();
    let conv_path = out_dir.join("convergence.csv");
    write_csv(
        &conv_path,
        &["iteration", "iou_combined", "iou_conf", "iou_box", "l2_combined", "l2_conf", "l2_box"],
        &joint,
    )
    .map_err(io_at(&conv_path))?;

    let conv_svg = out_dir.join("convergence.svg");
    let to_points = |rows: &Vec<Vec<String>>| {
        rows.iter()
            .map(|r| (r[0].parse::<f64>().unwrap(), r[1].parse::<f64>().unwrap()))
            .collect::<Vec<_>>()
    };
    write_svg_plot(
        &conv_svg,
        "combined training loss",
        "iteration",
        "loss",
        &[
            Series { label: "iou".into(), points: to_points(iou_rows) },
            Series { label: "l2".into(), points: to_points(l2_rows) },
        ],
        false,
    )
    .map_err(io_at(&conv_svg))?;

    // ROC curves over the confidence threshold, final checkpoints
    let samples =
        crate::eval::build_eval_set(&base.data, base.run.eval_seed, base.run.eval_scenes)?;
    let mut roc_rows: Vec<Vec<String>> = Vec::new();
    let mut roc_series: Vec<Series> = Vec::new();
    for oc in &outcomes {
        let points = roc_points(&oc.net, &samples, &base.postprocess, 0.5, &default_tau_grid())?;
        roc_series.push(Series {
            label: oc.kind.to_string(),
            points: points.iter().map(|p| (p.fp_count as f64, p.tp_rate)).collect(),
        });
        for p in &points {
            roc_rows.push(vec![
                oc.kind.to_string(),
                fmt_g6(p.tau),
                fmt_g6(p.tp_rate),
                p.fp_count.to_string(),
            ]);
        }
    }
    let roc_path = out_dir.join("roc.csv");
    write_csv(&roc_path, &["model", "tau", "tp_rate", "fp_count"], &roc_rows)
        .map_err(io_at(&roc_path))?;
    let roc_svg = out_dir.join("roc.svg");
    write_svg_plot(&roc_svg, "detection tradeoff", "false positives", "true positive rate", &roc_series, false)
        .map_err(io_at(&roc_svg))?;

    // summary table
    let sum_path = out_dir.join("summary.csv");
    let sum_rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|oc| {
            vec![
                oc.kind.to_string(),
                fmt_g6(oc.selected_rate),
                oc.summary.tp.to_string(),
                oc.summary.fp.to_string(),
                oc.summary.missed.to_string(),
                fmt_g6(oc.summary.miss_rate),
                fmt_g6(oc.summary.mean_center_iou),
            ]
        })
        .collect();
    write_csv(
        &sum_path,
        &["model", "learning_rate", "tp", "fp", "missed", "miss_rate", "mean_center_iou"],
        &sum_rows,
    )
    .map_err(io_at(&sum_path))?;

    let mut it = outcomes.into_iter();
    let iou = it.next().expect("two outcomes");
    let l2 = it.next().expect("two outcomes");
    Ok(CompareOutcome { out_dir, iou, l2 })
}

// -------------------------------------------------------------- scale sweep

/// Evaluates two trained checkpoints on the size-generalization scenes
/// and writes one CSV row per (factor, model).
pub fn cmd_scale_sweep(
    ckpt_iou: &Path,
    ckpt_l2: &Path,
    factors: &[f64],
    csv_out: &Path,
) -> Result<Vec<crate::eval::SweepRow>, CommandError> {
    let (cfg, net_iou) = network_from_checkpoint(ckpt_iou)?;
    let (_, net_l2) = network_from_checkpoint(ckpt_l2)?;
    let rows = scale_sweep(&net_iou, &net_l2, &cfg.data, factors, &cfg.postprocess)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_g6(r.factor),
                r.model.to_string(),
                fmt_g6(r.center_iou),
                fmt_g6(r.detection_iou),
            ]
        })
        .collect();
    write_csv(csv_out, &["factor", "model", "center_iou", "detection_iou"], &csv_rows)
        .map_err(io_at(csv_out))?;
    for r in &rows {
        println!(
            "factor {} model {} center_iou {} detection_iou {}",
            fmt_g6(r.factor),
            r.model,
            fmt_g6(r.center_iou),
            fmt_g6(r.detection_iou),
        );
    }
    Ok(rows)
}

// -------------------------------------------------------------- dump sample

/// Renders one sample of the training stream to PGM files: the image,
/// the confidence target and the four distance-target channels, plus a
/// sidecar text file recording the gray-level mapping of each map.
pub fn cmd_dump_sample(
    cfg: &RunConfig,
    index: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CommandError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let stream = SampleStream::new(cfg.data.clone(), cfg.run.train_seed);
    let sample = stream.sample(index)?;
    let (h, w) = (cfg.data.height, cfg.data.width);

    let mut written = Vec::new();
    let mut meta = String::new();
    let mut dump = |name: &str, data: &[f64], lo: f64, hi: f64| -> Result<(), CommandError> {
        let path = out_dir.join(format!("{name}.pgm"));
        write_pgm(&path, data, h, w, lo, hi).map_err(io_at(&path))?;
        meta.push_str(&format!("{name}.pgm: gray 0..255 maps {}..{}\n", fmt_g6(lo), fmt_g6(hi)));
        written.push(path);
        Ok(())
    };

    dump("image", sample.image.data(), 0.0, 1.0)?;
    dump("conf", sample.conf_target.data(), 0.0, 1.0)?;
    let max_dist = sample.box_target.data().iter().cloned().fold(1.0f64, f64::max);
    for (ch, name) in ["box_top", "box_bottom", "box_left", "box_right"].iter().enumerate() {
        let off = sample.box_target.idx(0, ch, 0, 0);
        dump(name, &sample.box_target.data()[off..off + h * w], 0.0, max_dist)?;
    }
    let meta_path = out_dir.join("meta.txt");
    std::fs::write(&meta_path, meta).map_err(io_at(&meta_path))?;
    written.push(meta_path);
    println!("wrote {} files to {}", written.len(), out_dir.display());
    Ok(written)
}
