//! Quantitative evaluation: detection matching, miss rate, ROC
//! sweeps, center-pixel IoU, and the multi-scale robustness sweep.

use crate::geometry::{distances_to_rect, rect_iou, DistanceBox, PixelCoord, RectBox};
use crate::loss::LossKind;
use crate::nn::Network;
use crate::postprocess::{detect, Detection, PostprocessParams};
use crate::synth::{encode_targets, DataConfig, Sample, SampleStream, SceneObject, SceneSpec, SynthError};
use crate::tensor::Tensor;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scale factor {factor} shrinks the object below 4 px")]
    DegenerateScale { factor: f64 },
    #[error("data: {0}")]
    Synth(#[from] SynthError),
    #[error("network: {0}")]
    Nn(#[from] crate::nn::NnError),
}

/// Bookkeeping for one matching pass. `tp + missed` equals the ground
/// truth count; every detection and every ground truth matches at most
/// once.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
    pub match_ious: Vec<f64>,
}

impl MatchResult {
    pub fn miss_rate(&self) -> f64 {
        let gts = self.tp + self.missed;
        if gts == 0 {
            0.0
        } else {
            self.missed as f64 / gts as f64
        }
    }

    pub fn absorb(&mut self, other: &MatchResult) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.missed += other.missed;
        self.match_ious.extend_from_slice(&other.match_ious);
    }
}

/// Greedy matching in descending score order: each detection claims
/// the unmatched ground truth of highest IoU if that IoU reaches
/// `iou_thresh`, otherwise it counts as a false positive.
pub fn match_detections(dets: &[Detection], gts: &[RectBox], iou_thresh: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut gt_taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for di in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let iou = rect_iou(&dets[di].rect, gt);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) if iou >= iou_thresh => {
                gt_taken[gi] = true;
                result.tp += 1;
                result.match_ious.push(iou);
            }
            _ => result.fp += 1,
        }
    }
    result.missed = gt_taken.iter().filter(|&&t| !t).count();
    result
}

/// Fixed, seed-determined evaluation set.
pub fn build_eval_set(cfg: &DataConfig, seed: u64, n: usize) -> Result<Vec<Sample>, SynthError> {
    let stream = SampleStream::new(cfg.clone(), seed);
    (0..n as u64).map(|i| stream.sample(i)).collect()
}

/// The pixel at an object's geometric center, rounded down.
pub fn center_pixel(rect: &RectBox) -> PixelCoord {
    let (cx, cy) = rect.center();
    PixelCoord::new(cy.floor() as usize, cx.floor() as usize)
}

/// Reads the predicted box at a pixel of a 4-channel distance map.
pub fn predicted_box_at(box_map: &Tensor, p: PixelCoord) -> DistanceBox {
    DistanceBox::new(
        box_map.at(0, 0, p.row, p.col),
        box_map.at(0, 1, p.row, p.col),
        box_map.at(0, 2, p.row, p.col),
        box_map.at(0, 3, p.row, p.col),
    )
}

/// IoU between the box read from the map at the object's center pixel
/// and the object's ground-truth rect.
pub fn center_iou(box_map: &Tensor, obj: &RectBox) -> f64 {
    let p = center_pixel(obj);
    rect_iou(&distances_to_rect(p, &predicted_box_at(box_map, p)), obj)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
    pub miss_rate: f64,
    pub mean_center_iou: f64,
    pub objects: usize,
}

fn eval_one(
    net: &Network,
    sample: &Sample,
    pp: &PostprocessParams,
    match_thresh: f64,
) -> Result<(MatchResult, Vec<f64>), EvalError> {
    let acts = net.forward(&sample.image)?;
    let dets = detect(&acts.conf_logits, &acts.box_map, pp);
    let gts: Vec<RectBox> = sample.scene.objects.iter().map(|o| o.rect).collect();
    let result = match_detections(&dets, &gts, match_thresh);
    let center_ious = gts.iter().map(|g| center_iou(&acts.box_map, g)).collect();
    Ok((result, center_ious))
}

/// Full evaluation over a sample set. With `threads > 1` samples are
/// evaluated in parallel; aggregation runs in sample order either way,
/// so results are byte-identical.
pub fn evaluate_network(
    net: &Network,
    samples: &[Sample],
    pp: &PostprocessParams,
    match_thresh: f64,
    threads: usize,
) -> Result<EvalSummary, EvalError> {
    let per_sample: Vec<Result<(MatchResult, Vec<f64>), EvalError>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| {
            samples.par_iter().map(|s| eval_one(net, s, pp, match_thresh)).collect()
        })
    } else {
        samples.iter().map(|s| eval_one(net, s, pp, match_thresh)).collect()
    };

    let mut total = MatchResult::default();
    let mut iou_sum = 0.0;
    let mut objects = 0usize;
    for r in per_sample {
        let (m, ious) = r?;
        total.absorb(&m);
        objects += ious.len();
        iou_sum += ious.iter().sum::<f64>();
    }
    Ok(EvalSummary {
        tp: total.tp,
        fp: total.fp,
        missed: total.missed,
        miss_rate: total.miss_rate(),
        mean_center_iou: if objects > 0 { iou_sum / objects as f64 } else { 0.0 },
        objects,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RocPoint {
    pub tau: f64,
    pub tp_rate: f64,
    pub fp_count: usize,
}

/// True-positive rate vs absolute false-positive count across a
/// confidence-threshold sweep (default grid 0.05..0.95 step 0.05).
pub fn roc_points(
    net: &Network,
    samples: &[Sample],
    base: &PostprocessParams,
    match_thresh: f64,
    taus: &[f64],
) -> Result<Vec<RocPoint>, EvalError> {
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let pp = PostprocessParams { tau, ..*base };
        let summary = evaluate_network(net, samples, &pp, match_thresh, 1)?;
        let gts = summary.tp + summary.missed;
        points.push(RocPoint {
            tau,
            tp_rate: if gts == 0 { 0.0 } else { summary.tp as f64 / gts as f64 },
            fp_count: summary.fp,
        });
    }
    Ok(points)
}

pub fn default_tau_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub factor: f64,
    pub model: LossKind,
    pub center_iou: f64,
    pub detection_iou: f64,
}

/// Builds the single-object test scene at a given scale factor of the
/// training-size midpoint: both the canvas and the object scale.
pub fn sweep_scene(cfg: &DataConfig, factor: f64) -> Result<SceneSpec, EvalError> {
    let mid = (cfg.size_range[0] + cfg.size_range[1]) / 2;
    let size = (mid as f64 * factor).round() as i64;
    if size < 4 {
        return Err(EvalError::DegenerateScale { factor });
    }
    let size = size as usize;
    let h = ((cfg.height as f64) * factor).round() as usize;
    let w = ((cfg.width as f64) * factor).round() as usize;
    let x_min = ((w - 1 - size) / 2) as f64;
    let y_min = ((h - 1 - size) / 2) as f64;
    let rect = RectBox::new(x_min, y_min, x_min + size as f64, y_min + size as f64)
        .expect("centered object fits");
    Ok(SceneSpec {
        height: h,
        width: w,
        background: cfg.background,
        noise_amp: cfg.noise_amp,
        seed: 0x5eed,
        objects: vec![SceneObject { rect, contrast: cfg.contrast_range[1] }],
    })
}

/// Runs both models over the sweep scenes. One row per (factor,
/// model): center-pixel IoU plus the full-pipeline detection IoU.
pub fn scale_sweep(
    net_iou: &Network,
    net_l2: &Network,
    cfg: &DataConfig,
    factors: &[f64],
    pp: &PostprocessParams,
) -> Result<Vec<SweepRow>, EvalError> {
    let mut rows = Vec::new();
    for &factor in factors {
        let scene = sweep_scene(cfg, factor)?;
        let sample = encode_targets(&scene, cfg.positive_shrink);
        let gt = scene.objects[0].rect;
        for (model, net) in [(LossKind::Iou, net_iou), (LossKind::L2, net_l2)] {
            let acts = net.forward(&sample.image)?;
            let c_iou = center_iou(&acts.box_map, &gt);
            let dets = detect(&acts.conf_logits, &acts.box_map, pp);
            let d_iou = dets.iter().map(|d| rect_iou(&d.rect, &gt)).fold(0.0f64, f64::max);
            rows.push(SweepRow { factor, model, center_iou: c_iou, detection_iou: d_iou });
        }
    }
    Ok(rows)
}
