//! The two-branch detector.
//!
//! A strided convolutional stem feeds two heads: a confidence head
//! tapped at an early stage (pixel-in-object needs only local
//! evidence) and a box head tapped at the deepest stage, giving it the
//! larger receptive field that whole-box regression needs. Both heads
//! are upsampled back to input resolution and center-cropped; the box
//! branch passes through a ReLU so predicted distances are
//! non-negative.

use super::conv::Conv2d;
use super::resample::{
    bilinear_upsample_backward, bilinear_upsample_forward, crop_center_backward,
    crop_center_forward,
};
use super::{relu_backward, relu_forward, NnError};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn default_stem() -> Vec<usize> {
    vec![8, 16, 32]
}
fn default_downsample() -> usize {
    2
}
fn default_conf_tap() -> usize {
    2
}
fn default_box_tap() -> usize {
    3
}
fn default_head_kernel() -> usize {
    7
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channel width of each stem stage; every stage downsamples.
    #[serde(default = "default_stem")]
    pub stem: Vec<usize>,
    /// Spatial downsample factor per stem stage.
    #[serde(default = "default_downsample")]
    pub downsample: usize,
    /// Stem stage (1-based) feeding the confidence head.
    #[serde(default = "default_conf_tap")]
    pub conf_tap: usize,
    /// Stem stage (1-based) feeding the box head; must be at least as
    /// deep as the confidence tap.
    #[serde(default = "default_box_tap")]
    pub box_tap: usize,
    /// Kernel size of both heads (odd).
    #[serde(default = "default_head_kernel")]
    pub head_kernel: usize,
    /// Parameter initialization seed.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            stem: default_stem(),
            downsample: default_downsample(),
            conf_tap: default_conf_tap(),
            box_tap: default_box_tap(),
            head_kernel: default_head_kernel(),
            seed: default_seed(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.stem.is_empty() {
            return Err(NnError::InvalidConfig("stem must have at least one stage".into()));
        }
        if self.stem.iter().any(|&c| c == 0) {
            return Err(NnError::InvalidConfig("stem widths must be positive".into()));
        }
        if self.downsample < 2 {
            return Err(NnError::InvalidConfig("downsample factor must be >= 2".into()));
        }
        if self.conf_tap == 0 || self.box_tap == 0 {
            return Err(NnError::InvalidConfig("tap indices are 1-based".into()));
        }
        if self.box_tap < self.conf_tap {
            return Err(NnError::InvalidConfig(
                "box tap must be at least as deep as the confidence tap".into(),
            ));
        }
        if self.box_tap > self.stem.len() {
            return Err(NnError::InvalidConfig(format!(
                "box tap {} exceeds stem depth {}",
                self.box_tap,
                self.stem.len()
            )));
        }
        if self.head_kernel % 2 == 0 {
            return Err(NnError::InvalidConfig("head kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Forward-pass intermediates kept for the backward pass.
pub struct NetworkActivations {
    pub input_shape: [usize; 4],
    /// Per-stage conv outputs (pre-ReLU), stages 1..=box_tap.
    pub stem_pre: Vec<Tensor>,
    /// Per-stage ReLU outputs.
    pub stem_out: Vec<Tensor>,
    pub conf_head_out: Tensor,
    pub conf_upsampled: Tensor,
    /// Confidence logits at input resolution, N x 1 x H x W.
    pub conf_logits: Tensor,
    pub box_head_out: Tensor,
    pub box_relu: Tensor,
    pub box_upsampled: Tensor,
    /// Predicted distances at input resolution, N x 4 x H x W.
    pub box_map: Tensor,
}

/// Per-parameter gradients, shapes mirroring [`Network`] parameters.
pub struct NetworkGradients {
    pub stem: Vec<(Tensor, Tensor)>,
    pub conf_head: (Tensor, Tensor),
    pub box_head: (Tensor, Tensor),
}

impl NetworkGradients {
    /// Flat view in the same order as [`Network::param_names`].
    pub fn flat(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (w, b) in &self.stem {
            out.push(w);
            out.push(b);
        }
        out.push(&self.conf_head.0);
        out.push(&self.conf_head.1);
        out.push(&self.box_head.0);
        out.push(&self.box_head.1);
        out
    }
}

pub struct Network {
    pub config: NetworkConfig,
    pub stem: Vec<Conv2d>,
    pub conf_head: Conv2d,
    pub box_head: Conv2d,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stem = Vec::with_capacity(config.stem.len());
        let mut c_in = 1;
        for &c_out in &config.stem {
            stem.push(Conv2d::new(c_in, c_out, 3, config.downsample, 1, &mut rng));
            c_in = c_out;
        }
        let hk = config.head_kernel;
        let conf_head =
            Conv2d::new(config.stem[config.conf_tap - 1], 1, hk, 1, hk / 2, &mut rng);
        let box_head = Conv2d::new(config.stem[config.box_tap - 1], 4, hk, 1, hk / 2, &mut rng);
        Ok(Self { config, stem, conf_head, box_head })
    }

    /// (confidence head RF, box head RF) in input pixels.
    pub fn receptive_fields(&self) -> (usize, usize) {
        let rf_at = |tap: usize| {
            let mut rf = 1usize;
            let mut jump = 1usize;
            for conv in self.stem.iter().take(tap) {
                rf += (conv.kernel() - 1) * jump;
                jump *= conv.stride;
            }
            (rf, jump)
        };
        let (rf_c, j_c) = rf_at(self.config.conf_tap);
        let (rf_b, j_b) = rf_at(self.config.box_tap);
        let hk = self.config.head_kernel;
        (rf_c + (hk - 1) * j_c, rf_b + (hk - 1) * j_b)
    }

    fn branch_to_full_res(
        &self,
        head_out: &Tensor,
        tap: usize,
        h: usize,
        w: usize,
    ) -> Result<(Tensor, Tensor), NnError> {
        let factor = self.config.downsample.pow(tap as u32);
        let fh = head_out.shape()[2];
        let fw = head_out.shape()[3];
        let up = bilinear_upsample_forward(head_out, fh * factor, fw * factor)?;
        let cropped = crop_center_forward(&up, h, w)?;
        Ok((up, cropped))
    }

    pub fn forward(&self, input: &Tensor) -> Result<NetworkActivations, NnError> {
        let [_, c, h, w] = input.shape();
        if c != 1 {
            return Err(NnError::ShapeMismatch(format!("expected 1 input channel, got {c}")));
        }
        let mut stem_pre: Vec<Tensor> = Vec::new();
        let mut stem_out: Vec<Tensor> = Vec::new();
        for (i, conv) in self.stem.iter().take(self.config.box_tap).enumerate() {
            let pre = if i == 0 { conv.forward(input)? } else { conv.forward(&stem_out[i - 1])? };
            let act = relu_forward(&pre);
            stem_pre.push(pre);
            stem_out.push(act);
        }

        let conf_head_out = self.conf_head.forward(&stem_out[self.config.conf_tap - 1])?;
        let (conf_upsampled, conf_logits) =
            self.branch_to_full_res(&conf_head_out, self.config.conf_tap, h, w)?;

        let box_head_out = self.box_head.forward(&stem_out[self.config.box_tap - 1])?;
        let box_relu = relu_forward(&box_head_out);
        let (box_upsampled, box_map) =
            self.branch_to_full_res(&box_relu, self.config.box_tap, h, w)?;

        Ok(NetworkActivations {
            input_shape: input.shape(),
            stem_pre,
            stem_out,
            conf_head_out,
            conf_upsampled,
            conf_logits,
            box_head_out,
            box_relu,
            box_upsampled,
            box_map,
        })
    }

    /// Backward pass from gradients w.r.t. the two full-resolution
    /// output maps. `input` must be the tensor given to `forward`.
    pub fn backward(
        &self,
        input: &Tensor,
        acts: &NetworkActivations,
        grad_conf: &Tensor,
        grad_box: &Tensor,
    ) -> Result<NetworkGradients, NnError> {
        let conf_tap = self.config.conf_tap;
        let box_tap = self.config.box_tap;

        // box branch: crop -> upsample -> relu -> head conv
        let g = crop_center_backward(acts.box_upsampled.shape(), grad_box)?;
        let g = bilinear_upsample_backward(acts.box_relu.shape(), &g)?;
        let g = relu_backward(&acts.box_head_out, &g);
        let (mut g_stage, box_w, box_b) =
            self.box_head.backward(&acts.stem_out[box_tap - 1], &g)?;

        // confidence branch down to its tap
        let g = crop_center_backward(acts.conf_upsampled.shape(), grad_conf)?;
        let g = bilinear_upsample_backward(acts.conf_head_out.shape(), &g)?;
        let (g_conf_tap, conf_w, conf_b) =
            self.conf_head.backward(&acts.stem_out[conf_tap - 1], &g)?;

        // walk the stem from the deepest used stage back to the input,
        // merging the confidence-branch gradient at its tap
        let mut stem_grads: Vec<(Tensor, Tensor)> = self
            .stem
            .iter()
            .map(|c| (Tensor::zeros(c.weight.shape()), Tensor::zeros(c.bias.shape())))
            .collect();
        for stage in (1..=box_tap).rev() {
            if stage == conf_tap {
                for (a, b) in g_stage.data_mut().iter_mut().zip(g_conf_tap.data()) {
                    *a += b;
                }
            }
            let g_pre = relu_backward(&acts.stem_pre[stage - 1], &g_stage);
            let below: &Tensor =
                if stage == 1 { input } else { &acts.stem_out[stage - 2] };
            let (gx, gw, gb) = self.stem[stage - 1].backward(below, &g_pre)?;
            stem_grads[stage - 1] = (gw, gb);
            g_stage = gx;
        }

        Ok(NetworkGradients { stem: stem_grads, conf_head: (conf_w, conf_b), box_head: (box_w, box_b) })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.stem.len() {
            names.push(format!("stem{i}.weight"));
            names.push(format!("stem{i}.bias"));
        }
        names.push("conf_head.weight".into());
        names.push("conf_head.bias".into());
        names.push("box_head.weight".into());
        names.push("box_head.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.stem {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.conf_head.weight);
        out.push(&self.conf_head.bias);
        out.push(&self.box_head.weight);
        out.push(&self.box_head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.stem {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.conf_head.weight);
        out.push(&mut self.conf_head.bias);
        out.push(&mut self.box_head.weight);
        out.push(&mut self.box_head.bias);
        out
    }

    /// Overwrites parameters from (name, tensor) pairs; every network
    /// parameter must be present with a matching shape.
    pub fn set_params(&mut self, named: &[(String, Tensor)]) -> Result<(), NnError> {
        let names = self.param_names();
        for (name, slot) in names.iter().zip(self.params_mut()) {
            let src = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| NnError::InvalidConfig(format!("missing parameter {name}")))?;
            if src.1.shape() != slot.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {name}: checkpoint {:?} vs model {:?}",
                    src.1.shape(),
                    slot.shape()
                )));
            }
            *slot = src.1.clone();
        }
        Ok(())
    }
}
