//! From heatmaps to detections: threshold the confidence map, label
//! 4-connected components, read the predicted box at each component's
//! centroid pixel, and suppress duplicates.

use crate::geometry::{distances_to_rect, rect_iou, DistanceBox, PixelCoord, RectBox};
use crate::loss::sigmoid;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// A scored detection. The score is the confidence value at the source
/// pixel the box was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub rect: RectBox,
    pub score: f64,
    pub source: PixelCoord,
}

fn default_tau() -> f64 {
    0.5
}
fn default_min_area() -> usize {
    9
}
fn default_nms() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessParams {
    /// Confidence threshold.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Components smaller than this many pixels are discarded.
    #[serde(default = "default_min_area")]
    pub min_area: usize,
    /// IoU threshold for non-maximum suppression.
    #[serde(default = "default_nms")]
    pub nms_thresh: f64,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self { tau: default_tau(), min_area: default_min_area(), nms_thresh: default_nms() }
    }
}

/// 4-connected components of `{p : conf[p] >= tau}` on a 1x1xHxW map,
/// dropping components smaller than `min_area` pixels.
pub fn threshold_components(conf: &Tensor, tau: f64, min_area: usize) -> Vec<Vec<PixelCoord>> {
    let [_, _, h, w] = conf.shape();
    let above = |i: usize, j: usize| conf.at(0, 0, i, j) >= tau;
    let mut visited = vec![false; h * w];
    let mut components = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for si in 0..h {
        for sj in 0..w {
            if visited[si * w + sj] || !above(si, sj) {
                continue;
            }
            let mut component = Vec::new();
            visited[si * w + sj] = true;
            queue.push_back((si, sj));
            while let Some((i, j)) = queue.pop_front() {
                component.push(PixelCoord::new(i, j));
                let mut push = |ni: usize, nj: usize, visited: &mut Vec<bool>| {
                    if !visited[ni * w + nj] && above(ni, nj) {
                        visited[ni * w + nj] = true;
                        queue.push_back((ni, nj));
                    }
                };
                if i > 0 {
                    push(i - 1, j, &mut visited);
                }
                if i + 1 < h {
                    push(i + 1, j, &mut visited);
                }
                if j > 0 {
                    push(i, j - 1, &mut visited);
                }
                if j + 1 < w {
                    push(i, j + 1, &mut visited);
                }
            }
            if component.len() >= min_area {
                components.push(component);
            }
        }
    }
    components
}

/// Reads one detection per component at its mask-constrained centroid:
/// the component pixel nearest the mean coordinate (ties to the first
/// in scan order).
pub fn extract_boxes(
    components: &[Vec<PixelCoord>],
    conf: &Tensor,
    box_map: &Tensor,
) -> Vec<Detection> {
    components
        .iter()
        .filter(|c| !c.is_empty())
        .map(|component| {
            let n = component.len() as f64;
            let mean_i = component.iter().map(|p| p.row as f64).sum::<f64>() / n;
            let mean_j = component.iter().map(|p| p.col as f64).sum::<f64>() / n;
            let source = *component
                .iter()
                .min_by(|a, b| {
                    let da = (a.row as f64 - mean_i).powi(2) + (a.col as f64 - mean_j).powi(2);
                    let db = (b.row as f64 - mean_i).powi(2) + (b.col as f64 - mean_j).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .expect("component is non-empty");
            let d = DistanceBox::new(
                box_map.at(0, 0, source.row, source.col),
                box_map.at(0, 1, source.row, source.col),
                box_map.at(0, 2, source.row, source.col),
                box_map.at(0, 3, source.row, source.col),
            );
            Detection {
                rect: distances_to_rect(source, &d),
                score: conf.at(0, 0, source.row, source.col),
                source,
            }
        })
        .collect()
}

/// Greedy non-maximum suppression by descending score: a detection is
/// kept iff its IoU with every already-kept detection is below
/// `iou_thresh`. Output order is by descending score.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let d = &dets[idx];
        if kept.iter().all(|k| rect_iou(&k.rect, &d.rect) < iou_thresh) {
            kept.push(d.clone());
        }
    }
    kept
}

/// Full pipeline on one image's maps. `conf_logits` are raw network
/// outputs; the threshold applies to sigmoid probabilities.
pub fn detect(conf_logits: &Tensor, box_map: &Tensor, params: &PostprocessParams) -> Vec<Detection> {
    let mut probs = conf_logits.clone();
    for v in probs.data_mut() {
        *v = sigmoid(*v);
    }
    let components = threshold_components(&probs, params.tau, params.min_area);
    let dets = extract_boxes(&components, &probs, box_map);
    nms(&dets, params.nms_thresh)
}

/// Pipeline on maps already in probability space (e.g. oracle target
/// maps where confidence is exactly 0 or 1).
pub fn detect_on_probabilities(
    conf_probs: &Tensor,
    box_map: &Tensor,
    params: &PostprocessParams,
) -> Vec<Detection> {
    let components = threshold_components(conf_probs, params.tau, params.min_area);
    let dets = extract_boxes(&components, conf_probs, box_map);
    nms(&dets, params.nms_thresh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{encode_targets, generate_scene, DataConfig};

    fn map_from(h: usize, w: usize, pixels: &[(usize, usize)]) -> Tensor {
        let mut t = Tensor::zeros([1, 1, h, w]);
        for &(i, j) in pixels {
            *t.at_mut(0, 0, i, j) = 1.0;
        }
        t
    }

    #[test]
    fn all_zero_map_has_no_components() {
        let t = Tensor::zeros([1, 1, 8, 8]);
        assert!(threshold_components(&t, 0.5, 1).is_empty());
    }

    #[test]
    fn two_disjoint_blobs_two_components() {
        let t = map_from(8, 8, &[(1, 1), (1, 2), (2, 1), (2, 2), (5, 5), (5, 6), (6, 5), (6, 6)]);
        assert_eq!(threshold_components(&t, 0.5, 1).len(), 2);
    }

    #[test]
    fn diagonal_touch_stays_separate_under_4_connectivity() {
        let t = map_from(4, 4, &[(0, 0), (1, 1)]);
        assert_eq!(threshold_components(&t, 0.5, 1).len(), 2);
    }

    #[test]
    fn min_area_filters_small_components() {
        let t = map_from(8, 8, &[(0, 0), (4, 4), (4, 5), (5, 4), (5, 5)]);
        let comps = threshold_components(&t, 0.5, 4);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 4);
    }

    #[test]
    fn raising_tau_never_adds_components() {
        let scene = generate_scene(&DataConfig::default(), 21).unwrap();
        let s = encode_targets(&scene, 1.0);
        let mut prev = usize::MAX;
        for tau in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.1] {
            let n = threshold_components(&s.conf_target, tau, 1).len();
            assert!(n <= prev, "component count grew when raising tau to {tau}");
            prev = n;
        }
        assert!(threshold_components(&s.conf_target, 1.1, 1).is_empty());
    }

    #[test]
    fn symmetric_component_centroid_is_geometric_center() {
        let mut pix = Vec::new();
        for i in 2..7 {
            for j in 3..8 {
                pix.push((i, j));
            }
        }
        let conf = map_from(10, 10, &pix);
        let boxes = Tensor::full([1, 4, 10, 10], 2.0);
        let comps = threshold_components(&conf, 0.5, 1);
        let dets = extract_boxes(&comps, &conf, &boxes);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].source, PixelCoord::new(4, 5));
        assert_eq!(dets[0].score, 1.0);
    }

    #[test]
    fn concave_component_snaps_to_nearest_member_pixel() {
        // U shape: two vertical arms joined at the bottom; the mean
        // falls in the empty middle
        let mut pix = Vec::new();
        for i in 0..6 {
            pix.push((i, 0));
            pix.push((i, 4));
        }
        for j in 1..4 {
            pix.push((5, j));
        }
        let conf = map_from(8, 8, &pix);
        let comps = threshold_components(&conf, 0.5, 1);
        assert_eq!(comps.len(), 1);
        let dets = extract_boxes(&comps, &conf, &Tensor::full([1, 4, 8, 8], 1.0));
        let s = dets[0].source;
        assert!(pix.contains(&(s.row, s.col)), "source {s:?} must be inside the component");
    }

    #[test]
    fn oracle_maps_recover_objects() {
        let scene = generate_scene(&DataConfig::default(), 3).unwrap();
        let s = encode_targets(&scene, 1.0);
        let dets = detect_on_probabilities(
            &s.conf_target,
            &s.box_target,
            &PostprocessParams::default(),
        );
        assert_eq!(dets.len(), scene.objects.len());
        for obj in &scene.objects {
            let best = dets
                .iter()
                .map(|d| rect_iou(&d.rect, &obj.rect))
                .fold(0.0f64, f64::max);
            assert!(best >= 0.99, "object {obj:?} recovered at IoU {best}");
        }
    }

    #[test]
    fn nms_keeps_single_and_disjoint() {
        let d1 = Detection {
            rect: RectBox::new(0.0, 0.0, 4.0, 4.0).unwrap(),
            score: 0.9,
            source: PixelCoord::new(2, 2),
        };
        assert_eq!(nms(&[d1.clone()], 0.5), vec![d1.clone()]);
        let d2 = Detection {
            rect: RectBox::new(10.0, 10.0, 14.0, 14.0).unwrap(),
            score: 0.8,
            source: PixelCoord::new(12, 12),
        };
        assert_eq!(nms(&[d1.clone(), d2.clone()], 0.01).len(), 2);
    }

    #[test]
    fn nms_suppresses_identical_boxes() {
        let rect = RectBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        let hi = Detection { rect, score: 0.9, source: PixelCoord::new(2, 2) };
        let lo = Detection { rect, score: 0.8, source: PixelCoord::new(2, 3) };
        let kept = nms(&[lo.clone(), hi.clone()], 0.5);
        assert_eq!(kept, vec![hi]);
    }

    #[test]
    fn nms_output_is_score_sorted_subset() {
        let mk = |x: f64, s: f64| Detection {
            rect: RectBox::new(x, 0.0, x + 4.0, 4.0).unwrap(),
            score: s,
            source: PixelCoord::new(0, x as usize),
        };
        let dets = vec![mk(0.0, 0.3), mk(3.0, 0.9), mk(20.0, 0.5)];
        let kept = nms(&dets, 0.2);
        assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(kept.iter().all(|k| dets.contains(k)));
    }
}
