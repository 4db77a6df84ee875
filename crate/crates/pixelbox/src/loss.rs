//! Differentiable loss layers.
//!
//! The IoU loss treats the four bound distances of a box as a single
//! unit: for a predicted box `x` and ground truth `x~`, the forward
//! pass computes the intersection-over-union of the two boxes around
//! their shared anchor pixel and returns `L = -ln(IoU)`. Because the
//! IoU lies in [0, 1] regardless of box size, the loss is invariant
//! to uniform scaling of both boxes.
//!
//! The L2 baseline `L = sum_i (x_i - x~_i)^2` regresses the four
//! bounds as independent variables and scales quadratically with box
//! size; it exists here for comparison experiments.
//!
//! The confidence branch uses a numerically stable sigmoid
//! cross-entropy. Map-level reductions combine per-pixel losses into
//! the scalars and gradient maps the training loop consumes.

use crate::geometry::DistanceBox;
use crate::tensor::Tensor;
use thiserror::Error;

/// Clamp floor for the IoU inside the logarithm and for the
/// intersection term in the gradient denominator. Inert whenever
/// IoU >= 1e-6; keeps loss and gradients finite when the boxes are
/// disjoint or the prediction has zero area.
pub const IOU_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("negative distance component in {side}: {value} (missing ReLU upstream?)")]
    NegativeComponent { side: &'static str, value: f64 },
    #[error("ground truth box is empty; gradient undefined, mask such pixels")]
    EmptyGroundTruth,
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(f64),
    #[error("map shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Which box-regression loss a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Iou,
    L2,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Iou => write!(f, "iou"),
            LossKind::L2 => write!(f, "l2"),
        }
    }
}

/// Intermediates of the IoU loss forward pass, reused by the backward
/// pass. Invariants: `inter = inter_h * inter_w`,
/// `union = pred_area + gt_area - inter`, `0 <= iou <= 1`,
/// `loss = -ln(max(iou, IOU_EPS))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouForwardRecord {
    pub pred_area: f64,
    pub gt_area: f64,
    pub inter_h: f64,
    pub inter_w: f64,
    pub inter: f64,
    pub union: f64,
    pub iou: f64,
    pub loss: f64,
}

impl IouForwardRecord {
    fn zero() -> Self {
        Self {
            pred_area: 0.0,
            gt_area: 0.0,
            inter_h: 0.0,
            inter_w: 0.0,
            inter: 0.0,
            union: 0.0,
            iou: 0.0,
            loss: 0.0,
        }
    }
}

/// Gradient of a box loss w.r.t. the four bound distances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxGradient {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl BoxGradient {
    pub fn as_array(&self) -> [f64; 4] {
        [self.top, self.bottom, self.left, self.right]
    }
}

fn check_non_negative(b: &DistanceBox, side: &'static str) -> Result<(), LossError> {
    for v in b.as_array() {
        if v < 0.0 {
            return Err(LossError::NegativeComponent { side, value: v });
        }
    }
    Ok(())
}

/// IoU loss forward pass for one pixel.
///
/// An all-zero ground truth marks an invalid pixel: the record is all
/// zeros and the loss is 0. Otherwise:
///
/// ```text
/// X  = (x_t + x_b) (x_l + x_r)          predicted area
/// X~ = (x~_t + x~_b) (x~_l + x~_r)      ground-truth area
/// I  = [min(x_t,x~_t) + min(x_b,x~_b)] [min(x_l,x~_l) + min(x_r,x~_r)]
/// U  = X + X~ - I
/// L  = -ln(I / U)
/// ```
pub fn iou_forward(pred: &DistanceBox, gt: &DistanceBox) -> Result<IouForwardRecord, LossError> {
    check_non_negative(pred, "prediction")?;
    check_non_negative(gt, "ground truth")?;
    if gt.is_empty() {
        return Ok(IouForwardRecord::zero());
    }
    let pred_area = pred.area();
    let gt_area = gt.area();
    let inter_h = pred.top.min(gt.top) + pred.bottom.min(gt.bottom);
    let inter_w = pred.left.min(gt.left) + pred.right.min(gt.right);
    let inter = inter_h * inter_w;
    let union = pred_area + gt_area - inter;
    let iou = inter / union; // union >= gt_area > 0
    let loss = -(iou.max(IOU_EPS)).ln();
    Ok(IouForwardRecord { pred_area, gt_area, inter_h, inter_w, inter, union, iou, loss })
}

/// IoU loss backward pass for one pixel.
///
/// For each bound `x`, with `dX` the area derivative and `dI` the
/// intersection derivative:
///
/// ```text
/// dX/dx_t = dX/dx_b = x_l + x_r        dX/dx_l = dX/dx_r = x_t + x_b
/// dI/dx_t = I_w if x_t < x~_t else 0   (likewise x_b; I_h for l, r)
/// dL/dx   = dX/U - ((U + I) / (U I)) dI
/// ```
///
/// Ties `x = x~` take the zero branch (one-sided subgradient). When
/// the forward clamp is active (`IoU < IOU_EPS`) the loss is locally
/// constant, so the gradient is exactly zero; otherwise `I` is still
/// clamped in the denominator so the gradient stays finite.
pub fn iou_backward(
    pred: &DistanceBox,
    gt: &DistanceBox,
    rec: &IouForwardRecord,
) -> Result<BoxGradient, LossError> {
    if gt.is_empty() {
        return Err(LossError::EmptyGroundTruth);
    }
    if rec.iou < IOU_EPS {
        return Ok(BoxGradient { top: 0.0, bottom: 0.0, left: 0.0, right: 0.0 });
    }
    let u = rec.union;
    let i_clamped = rec.inter.max(IOU_EPS);
    let inter_factor = (u + rec.inter) / (u * i_clamped);

    let dx_vert = pred.width(); // dX/dx_t and dX/dx_b
    let dx_horiz = pred.height(); // dX/dx_l and dX/dx_r

    let di = |p: f64, g: f64, extent: f64| if p < g { extent } else { 0.0 };
    let g = BoxGradient {
        top: dx_vert / u - inter_factor * di(pred.top, gt.top, rec.inter_w),
        bottom: dx_vert / u - inter_factor * di(pred.bottom, gt.bottom, rec.inter_w),
        left: dx_horiz / u - inter_factor * di(pred.left, gt.left, rec.inter_h),
        right: dx_horiz / u - inter_factor * di(pred.right, gt.right, rec.inter_h),
    };
    Ok(g)
}

/// L2 baseline: sum of squared per-bound differences, no 0.5 factor.
pub fn l2_forward(pred: &DistanceBox, gt: &DistanceBox) -> f64 {
    pred.as_array()
        .iter()
        .zip(gt.as_array())
        .map(|(p, g)| (p - g) * (p - g))
        .sum()
}

/// Exact derivative of [`l2_forward`]: `g_i = 2 (x_i - x~_i)`.
pub fn l2_backward(pred: &DistanceBox, gt: &DistanceBox) -> BoxGradient {
    BoxGradient {
        top: 2.0 * (pred.top - gt.top),
        bottom: 2.0 * (pred.bottom - gt.bottom),
        left: 2.0 * (pred.left - gt.left),
        right: 2.0 * (pred.right - gt.right),
    }
}

fn check_label(label: f64) -> Result<(), LossError> {
    if label != 0.0 && label != 1.0 {
        return Err(LossError::InvalidLabel(label));
    }
    Ok(())
}

/// Sigmoid cross-entropy, stable for |logit| up to ~1e3:
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`.
pub fn sigmoid_ce_forward(logit: f64, label: f64) -> Result<f64, LossError> {
    check_label(label)?;
    Ok(logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p())
}

/// Derivative of the sigmoid cross-entropy: `sigma(z) - y`.
pub fn sigmoid_ce_backward(logit: f64, label: f64) -> Result<f64, LossError> {
    check_label(label)?;
    Ok(sigmoid(logit) - label)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn pixel_dbox(map: &Tensor, n: usize, h: usize, w: usize) -> DistanceBox {
    DistanceBox::new(map.at(n, 0, h, w), map.at(n, 1, h, w), map.at(n, 2, h, w), map.at(n, 3, h, w))
}

/// Box loss over a (batched) 4-channel distance map.
///
/// `mask` is row-major N*H*W; only mask-true pixels contribute. The
/// scalar is the mean per-pixel loss over positive pixels (0 when none)
/// and the returned gradient map is the gradient of that scalar: zero
/// at every negative pixel, per-pixel backward divided by the positive
/// count elsewhere.
pub fn map_box_loss(
    pred_map: &Tensor,
    gt_map: &Tensor,
    mask: &[bool],
    kind: LossKind,
) -> Result<(f64, Tensor), LossError> {
    let [n, c, h, w] = pred_map.shape();
    if c != 4 {
        return Err(LossError::ShapeMismatch(format!("expected 4 channels, got {c}")));
    }
    if gt_map.shape() != pred_map.shape() {
        return Err(LossError::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred_map.shape(),
            gt_map.shape()
        )));
    }
    if mask.len() != n * h * w {
        return Err(LossError::ShapeMismatch(format!(
            "mask length {} for {}x{}x{} map",
            mask.len(),
            n,
            h,
            w
        )));
    }

    let mut grad = Tensor::zeros(pred_map.shape());
    let positives = mask.iter().filter(|&&m| m).count();
    if positives == 0 {
        return Ok((0.0, grad));
    }
    let inv_count = 1.0 / positives as f64;

    let mut total = 0.0;
    for bi in 0..n {
        for hi in 0..h {
            for wi in 0..w {
                if !mask[(bi * h + hi) * w + wi] {
                    continue;
                }
                let pred = pixel_dbox(pred_map, bi, hi, wi);
                let gt = pixel_dbox(gt_map, bi, hi, wi);
                let g = match kind {
                    LossKind::Iou => {
                        let rec = iou_forward(&pred, &gt)?;
                        total += rec.loss;
                        iou_backward(&pred, &gt, &rec)?
                    }
                    LossKind::L2 => {
                        total += l2_forward(&pred, &gt);
                        l2_backward(&pred, &gt)
                    }
                };
                for (ci, gv) in g.as_array().into_iter().enumerate() {
                    *grad.at_mut(bi, ci, hi, wi) = gv * inv_count;
                }
            }
        }
    }
    Ok((total * inv_count, grad))
}

/// Sigmoid cross-entropy over a 1-channel logit map, mean over all
/// pixels; returns the scalar and its gradient w.r.t. the logits.
pub fn map_conf_loss(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor), LossError> {
    logits
        .same_shape(targets)
        .map_err(|e| LossError::ShapeMismatch(e.to_string()))?;
    let count = logits.numel() as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (i, (&z, &y)) in logits.data().iter().zip(targets.data()).enumerate() {
        total += sigmoid_ce_forward(z, y)?;
        grad.data_mut()[i] = sigmoid_ce_backward(z, y)? / count;
    }
    Ok((total / count, grad))
}

/// Weighted average of the two branch losses:
/// `(conf + w_box * box) / (1 + w_box)`.
pub fn combined_loss(conf_loss: f64, box_loss: f64, w_box: f64) -> f64 {
    (conf_loss + w_box * box_loss) / (1.0 + w_box)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distances_to_rect, rect_iou, PixelCoord};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn db(t: f64, b: f64, l: f64, r: f64) -> DistanceBox {
        DistanceBox::new(t, b, l, r)
    }

    #[test]
    fn iou_forward_perfect_match() {
        let d = db(2.0, 2.0, 2.0, 2.0);
        let rec = iou_forward(&d, &d).unwrap();
        assert_eq!(rec.iou, 1.0);
        assert_eq!(rec.loss, 0.0);
    }

    #[test]
    fn iou_forward_empty_gt_is_zero_loss() {
        let rec = iou_forward(&db(3.0, 1.0, 2.0, 5.0), &db(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(rec.loss, 0.0);
        assert_eq!(rec.iou, 0.0);
        assert_eq!(rec.union, 0.0);
    }

    #[test]
    fn iou_forward_worked_example() {
        let rec = iou_forward(&db(1.0, 1.0, 1.0, 1.0), &db(2.0, 2.0, 2.0, 2.0)).unwrap();
        assert_eq!(rec.pred_area, 4.0);
        assert_eq!(rec.gt_area, 16.0);
        assert_eq!(rec.inter, 4.0);
        assert_eq!(rec.union, 16.0);
        assert_eq!(rec.iou, 0.25);
        assert!((rec.loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn iou_forward_rejects_negative() {
        assert!(matches!(
            iou_forward(&db(-0.1, 1.0, 1.0, 1.0), &db(2.0, 2.0, 2.0, 2.0)),
            Err(LossError::NegativeComponent { .. })
        ));
        assert!(iou_forward(&db(1.0, 1.0, 1.0, 1.0), &db(2.0, -2.0, 2.0, 2.0)).is_err());
    }

    #[test]
    fn iou_backward_worked_example() {
        let pred = db(1.0, 1.0, 1.0, 1.0);
        let gt = db(2.0, 2.0, 2.0, 2.0);
        let rec = iou_forward(&pred, &gt).unwrap();
        let g = iou_backward(&pred, &gt, &rec).unwrap();
        for v in g.as_array() {
            assert!((v - (-0.5)).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn iou_backward_at_tie_uses_zero_branch() {
        let d = db(2.0, 2.0, 2.0, 2.0);
        let rec = iou_forward(&d, &d).unwrap();
        let g = iou_backward(&d, &d, &rec).unwrap();
        // dI = 0 at ties, so only the area term remains: (x_l+x_r)/U.
        for v in g.as_array() {
            assert!((v - 0.25).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn iou_backward_rejects_empty_gt() {
        let rec = IouForwardRecord::zero();
        assert_eq!(
            iou_backward(&db(1.0, 1.0, 1.0, 1.0), &db(0.0, 0.0, 0.0, 0.0), &rec),
            Err(LossError::EmptyGroundTruth)
        );
    }

    #[test]
    fn iou_gradient_is_homogeneous_degree_minus_one() {
        let pred = db(1.5, 0.8, 2.5, 1.1);
        let gt = db(2.0, 1.0, 2.0, 2.0);
        let g1 = iou_backward(&pred, &gt, &iou_forward(&pred, &gt).unwrap()).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let (ps, gs) = (pred.scaled(s), gt.scaled(s));
            let g2 = iou_backward(&ps, &gs, &iou_forward(&ps, &gs).unwrap()).unwrap();
            for (a, b) in g1.as_array().iter().zip(g2.as_array()) {
                assert!((a / s - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iou_gradient_finite_when_disjoint() {
        // Zero-area prediction: I = 0, loss hits the clamp.
        let pred = db(0.0, 0.0, 1.0, 1.0);
        let gt = db(3.0, 3.0, 3.0, 3.0);
        let rec = iou_forward(&pred, &gt).unwrap();
        assert!((rec.loss - -(IOU_EPS.ln())).abs() < 1e-9);
        let g = iou_backward(&pred, &gt, &rec).unwrap();
        assert!(g.as_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn one_gradient_step_decreases_loss() {
        let pred = db(1.0, 1.0, 1.0, 1.0);
        let gt = db(2.0, 2.0, 2.0, 2.0);
        let rec = iou_forward(&pred, &gt).unwrap();
        let g = iou_backward(&pred, &gt, &rec).unwrap();
        let eta = 1e-2;
        let stepped = db(
            pred.top - eta * g.top,
            pred.bottom - eta * g.bottom,
            pred.left - eta * g.left,
            pred.right - eta * g.right,
        );
        let rec2 = iou_forward(&stepped, &gt).unwrap();
        assert!(rec2.loss < rec.loss);
    }

    #[test]
    fn l2_values_and_scale_dependence() {
        let pred = db(1.0, 1.0, 1.0, 1.0);
        let gt = db(2.0, 2.0, 2.0, 2.0);
        assert_eq!(l2_forward(&gt, &gt), 0.0);
        assert_eq!(l2_forward(&pred, &gt), 4.0);
        // doubling both boxes quadruples the loss: L2 is not scale-invariant
        assert_eq!(l2_forward(&pred.scaled(2.0), &gt.scaled(2.0)), 16.0);
    }

    #[test]
    fn l2_backward_values() {
        let pred = db(1.0, 1.0, 1.0, 1.0);
        let gt = db(2.0, 2.0, 2.0, 2.0);
        assert_eq!(l2_backward(&gt, &gt).as_array(), [0.0; 4]);
        assert_eq!(l2_backward(&pred, &gt).as_array(), [-2.0; 4]);
    }

    #[test]
    fn l2_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-3;
        for _ in 0..100 {
            let mut point: Vec<f64> = (0..8).map(|_| rng.gen_range(0.2..10.0)).collect();
            let gt = db(point[4], point[5], point[6], point[7]);
            let analytic =
                l2_backward(&db(point[0], point[1], point[2], point[3]), &gt).as_array();
            for k in 0..4 {
                let orig = point[k];
                point[k] = orig + h;
                let fp = l2_forward(&db(point[0], point[1], point[2], point[3]), &gt);
                point[k] = orig - h;
                let fm = l2_forward(&db(point[0], point[1], point[2], point[3]), &gt);
                point[k] = orig;
                let num = (fp - fm) / (2.0 * h);
                assert!((num - analytic[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn iou_couples_bounds_but_l2_does_not() {
        // prediction taller than ground truth, narrower in width;
        // widening `left` changes the top gradient through X and U
        let pred = db(3.0, 3.0, 1.0, 1.0);
        let gt = db(2.0, 2.0, 2.0, 2.0);
        let perturbed = db(3.0, 3.0, 1.7, 1.0);
        let g_iou_a = iou_backward(&pred, &gt, &iou_forward(&pred, &gt).unwrap()).unwrap();
        let g_iou_b =
            iou_backward(&perturbed, &gt, &iou_forward(&perturbed, &gt).unwrap()).unwrap();
        assert!((g_iou_a.top - g_iou_b.top).abs() > 1e-6, "IoU g_t must react to x_l");
        let g_l2_a = l2_backward(&pred, &gt);
        let g_l2_b = l2_backward(&perturbed, &gt);
        assert_eq!(g_l2_a.top, g_l2_b.top);
    }

    #[test]
    fn sigmoid_ce_examples() {
        let (z, y) = (0.0, 1.0);
        assert!((sigmoid_ce_forward(z, y).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        assert!((sigmoid_ce_backward(z, y).unwrap() - -0.5).abs() < 1e-12);

        assert!(sigmoid_ce_forward(50.0, 1.0).unwrap() < 1e-20);
        assert!(sigmoid_ce_backward(50.0, 1.0).unwrap().abs() < 1e-20);

        // moderate z: stable form agrees with the naive formula
        let (z, y) = (-3.0, 0.0);
        let stable = sigmoid_ce_forward(z, y).unwrap();
        let naive = -((1.0 - sigmoid(z)).ln());
        assert!((stable - naive).abs() < 1e-12);
        assert!((stable - 0.048587).abs() < 1e-6);
        assert!((sigmoid_ce_backward(z, y).unwrap() - 0.047426).abs() < 1e-6);

        // no overflow at |z| = 1000
        assert!(sigmoid_ce_forward(-1000.0, 1.0).unwrap().is_finite());
        assert!(sigmoid_ce_forward(1000.0, 0.0).unwrap().is_finite());
    }

    #[test]
    fn sigmoid_ce_rejects_bad_label() {
        assert_eq!(sigmoid_ce_forward(0.0, 0.5), Err(LossError::InvalidLabel(0.5)));
        assert_eq!(sigmoid_ce_backward(0.0, 2.0), Err(LossError::InvalidLabel(2.0)));
    }

    #[test]
    fn map_box_loss_all_false_mask() {
        let pred = Tensor::full([1, 4, 2, 2], 1.0);
        let gt = Tensor::full([1, 4, 2, 2], 2.0);
        let mask = vec![false; 4];
        let (loss, grad) = map_box_loss(&pred, &gt, &mask, LossKind::Iou).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_box_loss_single_positive_pixel() {
        let pred = Tensor::full([1, 4, 2, 2], 1.0);
        let gt = Tensor::full([1, 4, 2, 2], 2.0);
        let mask = vec![true, false, false, false];
        let (loss, grad) = map_box_loss(&pred, &gt, &mask, LossKind::Iou).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        for c in 0..4 {
            assert!((grad.at(0, c, 0, 0) - -0.5).abs() < 1e-12);
        }
        // everything off the positive pixel stays zero
        assert_eq!(grad.at(0, 0, 1, 1), 0.0);
        assert_eq!(grad.at(0, 3, 0, 1), 0.0);
    }

    #[test]
    fn map_box_loss_mean_reduction_halves_gradient() {
        let pred = Tensor::full([1, 4, 1, 2], 1.0);
        let gt = Tensor::full([1, 4, 1, 2], 2.0);
        let (l1, g1) = map_box_loss(&pred, &gt, &[true, false], LossKind::Iou).unwrap();
        let (l2, g2) = map_box_loss(&pred, &gt, &[true, true], LossKind::Iou).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!((g2.at(0, 0, 0, 0) - g1.at(0, 0, 0, 0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn map_box_loss_shape_errors() {
        let pred = Tensor::zeros([1, 4, 2, 2]);
        let gt = Tensor::zeros([1, 4, 2, 3]);
        assert!(map_box_loss(&pred, &gt, &[false; 4], LossKind::Iou).is_err());
        let pred3 = Tensor::zeros([1, 3, 2, 2]);
        assert!(map_box_loss(&pred3, &pred3.clone(), &[false; 4], LossKind::L2).is_err());
        assert!(map_box_loss(&pred, &pred.clone(), &[false; 3], LossKind::L2).is_err());
    }

    #[test]
    fn combined_loss_examples() {
        assert!((combined_loss(0.6, 1.0, 1.0) - 0.8).abs() < 1e-12);
        assert_eq!(combined_loss(0.37, 9.0, 0.0), 0.37);
        assert_eq!(combined_loss(0.5, 0.5, 3.7), 0.5);
    }

    fn arb_pair() -> impl Strategy<Value = (DistanceBox, DistanceBox)> {
        let comp = 0.05..12.0f64;
        (
            (comp.clone(), comp.clone(), comp.clone(), comp.clone()),
            (comp.clone(), comp.clone(), comp.clone(), comp),
        )
            .prop_map(|((a, b, c, d), (e, f, g, h))| (db(a, b, c, d), db(e, f, g, h)))
    }

    proptest! {
        #[test]
        fn iou_matches_rect_oracle((pred, gt) in arb_pair()) {
            let rec = iou_forward(&pred, &gt).unwrap();
            let p = PixelCoord::new(40, 40);
            let oracle = rect_iou(&distances_to_rect(p, &pred), &distances_to_rect(p, &gt));
            prop_assert!((rec.iou - oracle).abs() <= 1e-9);
        }

        #[test]
        fn iou_loss_is_scale_invariant((pred, gt) in arb_pair()) {
            let base = iou_forward(&pred, &gt).unwrap().loss;
            for s in [0.5, 2.0, 10.0] {
                let scaled = iou_forward(&pred.scaled(s), &gt.scaled(s)).unwrap().loss;
                prop_assert!((base - scaled).abs() <= 1e-9);
            }
        }

        #[test]
        fn iou_loss_nonnegative_and_zero_only_at_full_overlap((pred, gt) in arb_pair()) {
            let rec = iou_forward(&pred, &gt).unwrap();
            prop_assert!(rec.loss >= 0.0);
            prop_assert!(rec.iou >= 0.0 && rec.iou <= 1.0 + 1e-12);
            prop_assert!(rec.inter <= rec.pred_area.min(rec.gt_area) + 1e-9);
            prop_assert!(rec.union >= rec.pred_area.max(rec.gt_area) - 1e-9);
            if rec.loss == 0.0 {
                prop_assert!((rec.iou - 1.0).abs() < 1e-12);
            }
        }
    }
}
