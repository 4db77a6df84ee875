//! Finite-difference verification of analytic gradients.
//!
//! Central differences are the independent oracle for every backward
//! pass in the crate: the IoU loss, each network layer, and the
//! end-to-end parameter gradient. Check points avoid known non-smooth
//! loci (min() ties in the IoU loss, ReLU zeros) by an exclusion
//! margin, since a one-sided subgradient cannot match a two-sided
//! difference there.

use crate::geometry::DistanceBox;
use crate::loss::{self, LossKind};
use crate::nn::{self, Conv2d, Network, NetworkConfig};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step for central differences. Inputs here are O(1)-O(10) pixels, so
/// an absolute step balances truncation against rounding.
pub const DEFAULT_H: f64 = 1e-3;

/// Default exclusion margin around min() ties and ReLU zeros.
pub const DEFAULT_EXCLUSION: f64 = 0.1;

/// Outcome of a batch of gradient checks. `pass` holds iff
/// `max_rel_error <= tolerance` and every compared value was finite.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub samples: usize,
    pub components: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub worst_input: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    fn empty(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            samples: 0,
            components: 0,
            max_rel_error: 0.0,
            mean_rel_error: 0.0,
            worst_input: Vec::new(),
            tolerance,
            pass: true,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} ({} samples, {} components, max rel err {:.3e}, mean {:.3e}, tol {:.1e})",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.samples,
            self.components,
            self.max_rel_error,
            self.mean_rel_error,
            self.tolerance,
        )
    }
}

/// Relative error with a floor that avoids blowup near zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central difference of a scalar function at `point`:
/// component k is `(f(x + h e_k) - f(x - h e_k)) / 2h`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let orig = x[k];
        x[k] = orig + h;
        let fp = f(&x);
        x[k] = orig - h;
        let fm = f(&x);
        x[k] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

struct Accumulator {
    samples: usize,
    components: usize,
    max_rel: f64,
    sum_rel: f64,
    worst: Vec<f64>,
    saw_non_finite: bool,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            samples: 0,
            components: 0,
            max_rel: 0.0,
            sum_rel: 0.0,
            worst: Vec::new(),
            saw_non_finite: false,
        }
    }

    fn record(&mut self, point: &[f64], analytic: &[f64], numeric: &[f64]) {
        self.samples += 1;
        for (&a, &n) in analytic.iter().zip(numeric) {
            if !a.is_finite() || !n.is_finite() {
                self.saw_non_finite = true;
                self.worst = point.to_vec();
                continue;
            }
            let rel = relative_error(a, n);
            self.components += 1;
            self.sum_rel += rel;
            if rel > self.max_rel {
                self.max_rel = rel;
                self.worst = point.to_vec();
            }
        }
    }

    fn finish(self, name: &str, tolerance: f64) -> GradCheckReport {
        let mean = if self.components > 0 { self.sum_rel / self.components as f64 } else { 0.0 };
        GradCheckReport {
            name: name.to_string(),
            samples: self.samples,
            components: self.components,
            max_rel_error: self.max_rel,
            mean_rel_error: mean,
            worst_input: self.worst,
            tolerance,
            pass: !self.saw_non_finite && self.max_rel <= tolerance,
        }
    }
}

/// Checks the IoU loss backward pass against central differences on
/// seeded random (pred, gt) pairs with components in [0.2, 10].
/// Pairs with any |x_i - x~_i| < `exclusion` or intersection < 0.01
/// are rejected and resampled.
pub fn check_iou_gradients(
    n_samples: usize,
    seed: u64,
    tol: f64,
    exclusion: f64,
) -> GradCheckReport {
    let name = "iou_backward";
    if n_samples == 0 {
        return GradCheckReport::empty(name, tol);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Accumulator::new();
    while acc.samples < n_samples {
        let vals: Vec<f64> = (0..8).map(|_| rng.gen_range(0.2..10.0)).collect();
        let pred = DistanceBox::from_array([vals[0], vals[1], vals[2], vals[3]]);
        let gt = DistanceBox::from_array([vals[4], vals[5], vals[6], vals[7]]);
        let near_tie = pred
            .as_array()
            .iter()
            .zip(gt.as_array())
            .any(|(p, g)| (p - g).abs() < exclusion);
        let rec = loss::iou_forward(&pred, &gt).expect("components are positive");
        if near_tie || rec.inter < 0.01 {
            continue;
        }
        let analytic = loss::iou_backward(&pred, &gt, &rec).expect("gt is non-empty");
        let f = |x: &[f64]| {
            let p = DistanceBox::from_array([x[0], x[1], x[2], x[3]]);
            loss::iou_forward(&p, &gt).map(|r| r.loss).unwrap_or(f64::NAN)
        };
        let numeric = central_difference(f, &vals[0..4], DEFAULT_H);
        acc.record(&vals, &analytic.as_array(), &numeric);
    }
    acc.finish(name, tol)
}

/// A layer shape to be gradient-checked on small tensors.
#[derive(Debug, Clone)]
pub enum LayerSpec {
    Conv { c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize },
    Relu,
    Upsample { target: (usize, usize) },
    Crop { target: (usize, usize) },
}

impl LayerSpec {
    pub fn label(&self) -> String {
        match self {
            LayerSpec::Conv { c_in, c_out, kernel, stride, .. } => {
                format!("conv{kernel}x{kernel}_{c_in}to{c_out}_s{stride}")
            }
            LayerSpec::Relu => "relu".into(),
            LayerSpec::Upsample { target } => format!("upsample_{}x{}", target.0, target.1),
            LayerSpec::Crop { target } => format!("crop_{}x{}", target.0, target.1),
        }
    }
}

fn random_tensor<R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    t
}

/// Random tensor with every entry at least `margin` away from zero,
/// for ReLU kink exclusion.
fn random_tensor_excluding_zero<R: Rng>(shape: [usize; 4], margin: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.gen_range(margin..1.0);
        *v = if rng.gen_bool(0.5) { mag } else { -mag };
    }
    t
}

/// Checks a layer's backward pass (inputs and, for conv, parameters)
/// against central differences of a randomly projected scalar output.
pub fn check_layer_gradients(
    layer: &LayerSpec,
    input_shape: [usize; 4],
    seed: u64,
    tol: f64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Accumulator::new();
    let name = layer.label();
    match layer {
        LayerSpec::Conv { c_in, c_out, kernel, stride, pad } => {
            let conv = Conv2d::new(*c_in, *c_out, *kernel, *stride, *pad, &mut rng);
            let mut conv = conv;
            for v in conv.bias.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
            let x = random_tensor(input_shape, &mut rng);
            let y = conv.forward(&x).expect("valid shapes");
            let proj = random_tensor(y.shape(), &mut rng);
            let (gx, gw, gb) = conv.backward(&x, &proj).expect("valid shapes");

            // flatten input ++ weight ++ bias into one vector
            let mut point: Vec<f64> = Vec::new();
            point.extend_from_slice(x.data());
            point.extend_from_slice(conv.weight.data());
            point.extend_from_slice(conv.bias.data());
            let mut analytic: Vec<f64> = Vec::new();
            analytic.extend_from_slice(gx.data());
            analytic.extend_from_slice(gw.data());
            analytic.extend_from_slice(gb.data());

            let n_in = x.numel();
            let n_w = conv.weight.numel();
            let f = |v: &[f64]| {
                let xi = Tensor::from_vec(input_shape, v[0..n_in].to_vec()).unwrap();
                let mut c = conv.clone();
                c.weight.data_mut().copy_from_slice(&v[n_in..n_in + n_w]);
                c.bias.data_mut().copy_from_slice(&v[n_in + n_w..]);
                let out = c.forward(&xi).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let numeric = central_difference(f, &point, DEFAULT_H);
            acc.record(&point, &analytic, &numeric);
        }
        LayerSpec::Relu => {
            let x = random_tensor_excluding_zero(input_shape, DEFAULT_EXCLUSION, &mut rng);
            let proj = random_tensor(input_shape, &mut rng);
            let gx = nn::relu_backward(&x, &proj);
            let f = |v: &[f64]| {
                let xi = Tensor::from_vec(input_shape, v.to_vec()).unwrap();
                let out = nn::relu_forward(&xi);
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let numeric = central_difference(f, x.data(), DEFAULT_H);
            acc.record(x.data(), gx.data(), &numeric);
        }
        LayerSpec::Upsample { target } => {
            let x = random_tensor(input_shape, &mut rng);
            let y = nn::bilinear_upsample_forward(&x, target.0, target.1).expect("upscale");
            let proj = random_tensor(y.shape(), &mut rng);
            let gx = nn::bilinear_upsample_backward(input_shape, &proj).expect("upscale");
            let f = |v: &[f64]| {
                let xi = Tensor::from_vec(input_shape, v.to_vec()).unwrap();
                let out = nn::bilinear_upsample_forward(&xi, target.0, target.1).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let numeric = central_difference(f, x.data(), DEFAULT_H);
            acc.record(x.data(), gx.data(), &numeric);
        }
        LayerSpec::Crop { target } => {
            let x = random_tensor(input_shape, &mut rng);
            let y = nn::crop_center_forward(&x, target.0, target.1).expect("crop");
            let proj = random_tensor(y.shape(), &mut rng);
            let gx = nn::crop_center_backward(input_shape, &proj).expect("crop");
            let f = |v: &[f64]| {
                let xi = Tensor::from_vec(input_shape, v.to_vec()).unwrap();
                let out = nn::crop_center_forward(&xi, target.0, target.1).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let numeric = central_difference(f, x.data(), DEFAULT_H);
            acc.record(x.data(), gx.data(), &numeric);
        }
    }
    acc.finish(&name, tol)
}

/// The default battery of layer checks run by the `gradcheck` command.
pub fn standard_layer_checks(seed: u64, tol: f64) -> Vec<GradCheckReport> {
    vec![
        check_layer_gradients(
            &LayerSpec::Conv { c_in: 2, c_out: 2, kernel: 3, stride: 1, pad: 1 },
            [1, 2, 6, 6],
            seed,
            tol,
        ),
        check_layer_gradients(
            &LayerSpec::Conv { c_in: 2, c_out: 3, kernel: 3, stride: 2, pad: 1 },
            [1, 2, 6, 6],
            seed.wrapping_add(1),
            tol,
        ),
        check_layer_gradients(&LayerSpec::Relu, [1, 2, 5, 5], seed.wrapping_add(2), tol),
        check_layer_gradients(
            &LayerSpec::Upsample { target: (8, 8) },
            [1, 2, 4, 4],
            seed.wrapping_add(3),
            tol,
        ),
        check_layer_gradients(
            &LayerSpec::Crop { target: (4, 4) },
            [1, 2, 6, 6],
            seed.wrapping_add(4),
            tol,
        ),
    ]
}

/// End-to-end probe: perturbs individual network parameters and checks
/// the analytic gradient of the combined loss against central
/// differences. Uses a small step because a parameter perturbation
/// sweeps many activations past ReLU kinks at larger steps.
pub fn check_network_gradients(
    config: &NetworkConfig,
    input_hw: (usize, usize),
    kind: LossKind,
    probes_per_param: usize,
    seed: u64,
    tol: f64,
) -> GradCheckReport {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(config.clone()).expect("valid config");
    let (ih, iw) = input_hw;

    let mut input = Tensor::zeros([1, 1, ih, iw]);
    for v in input.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    // synthetic targets: one positive block with a fixed ground-truth box
    let mut conf_target = Tensor::zeros([1, 1, ih, iw]);
    let mut box_target = Tensor::zeros([1, 4, ih, iw]);
    let mut mask = vec![false; ih * iw];
    for hi in ih / 4..ih / 2 {
        for wi in iw / 4..iw / 2 {
            *conf_target.at_mut(0, 0, hi, wi) = 1.0;
            mask[hi * iw + wi] = true;
            let d = [
                (hi - ih / 4) as f64,
                (ih / 2 - 1 - hi) as f64,
                (wi - iw / 4) as f64,
                (iw / 2 - 1 - wi) as f64,
            ];
            for (c, dv) in d.into_iter().enumerate() {
                // keep ground truth non-empty at region corners
                *box_target.at_mut(0, c, hi, wi) = dv + 0.5;
            }
        }
    }

    let w_box = 1.0;
    let eval_loss = |net: &Network| -> f64 {
        let acts = net.forward(&input).unwrap();
        let (conf_loss, _) = loss::map_conf_loss(&acts.conf_logits, &conf_target).unwrap();
        let (box_loss, _) = loss::map_box_loss(&acts.box_map, &box_target, &mask, kind).unwrap();
        loss::combined_loss(conf_loss, box_loss, w_box)
    };

    // analytic gradient
    let acts = net.forward(&input).unwrap();
    let (_, conf_grad) = loss::map_conf_loss(&acts.conf_logits, &conf_target).unwrap();
    let (_, box_grad) = loss::map_box_loss(&acts.box_map, &box_target, &mask, kind).unwrap();
    let scale_c = 1.0 / (1.0 + w_box);
    let scale_b = w_box / (1.0 + w_box);
    let mut gc = conf_grad;
    for v in gc.data_mut() {
        *v *= scale_c;
    }
    let mut gb = box_grad;
    for v in gb.data_mut() {
        *v *= scale_b;
    }
    let grads = net.backward(&input, &acts, &gc, &gb).unwrap();
    let grads_flat = grads.flat();

    let mut acc = Accumulator::new();
    let mut net_probe = Network::new(config.clone()).expect("valid config");
    let f0 = eval_loss(&net_probe);
    let n_params = net.params().len();
    for pi in 0..n_params {
        let numel = net.params()[pi].numel();
        for probe in 0..probes_per_param.min(numel) {
            let ei = (rng.gen_range(0..numel) + probe) % numel;
            let base = net.params()[pi].data()[ei];
            let analytic = grads_flat[pi].data()[ei];

            net_probe.params_mut()[pi].data_mut()[ei] = base + h;
            let fp = eval_loss(&net_probe);
            net_probe.params_mut()[pi].data_mut()[ei] = base - h;
            let fm = eval_loss(&net_probe);
            net_probe.params_mut()[pi].data_mut()[ei] = base;

            // when a ReLU or min() kink falls inside the probe interval
            // the two-sided difference averages the side slopes, but the
            // analytic value is a one-sided subgradient; accept a match
            // against either one-sided slope as well
            let central = (fp - fm) / (2.0 * h);
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            let numeric = [central, fwd, bwd]
                .into_iter()
                .min_by(|a, b| {
                    relative_error(analytic, *a).total_cmp(&relative_error(analytic, *b))
                })
                .unwrap();
            acc.record(&[pi as f64, ei as f64, base], &[analytic], &[numeric]);
        }
    }
    acc.finish(&format!("network_end_to_end_{kind}"), tol)
}
