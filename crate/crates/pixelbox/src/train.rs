//! Deterministic mini-batch training loop and the fair-comparison
//! learning-rate selection used when racing the two box losses.

use crate::loss::{self, LossKind};
use crate::nn::optim::OptimError;
use crate::nn::{Network, NetworkConfig, NnError, OptimizerState, SgdConfig};
use crate::synth::{Batch, SampleStream, SynthError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("loss: {0}")]
    Loss(#[from] loss::LossError),
    #[error("data: {0}")]
    Synth(#[from] SynthError),
}

/// Per-iteration loss readings, taken before the parameter update.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub combined: f64,
    pub conf: f64,
    pub boxes: f64,
}

pub struct Trainer {
    pub net: Network,
    pub sgd: SgdConfig,
    pub stream: SampleStream,
    pub kind: LossKind,
    pub box_weight: f64,
    opt: OptimizerState,
    cursor: u64,
}

impl Trainer {
    pub fn new(
        net_config: NetworkConfig,
        sgd: SgdConfig,
        stream: SampleStream,
        kind: LossKind,
        box_weight: f64,
    ) -> Result<Self, TrainError> {
        let net = Network::new(net_config)?;
        let opt = OptimizerState::new(&net.params());
        Ok(Self { net, sgd, stream, kind, box_weight, opt, cursor: 0 })
    }

    pub fn iteration(&self) -> u64 {
        self.opt.iteration
    }

    /// Forward + losses on a batch without touching parameters.
    pub fn measure(&self, batch: &Batch) -> Result<LossBreakdown, TrainError> {
        let acts = self.net.forward(&batch.images)?;
        let (conf, _) = loss::map_conf_loss(&acts.conf_logits, &batch.conf_targets)?;
        let (boxes, _) = loss::map_box_loss(&acts.box_map, &batch.box_targets, &batch.mask, self.kind)?;
        Ok(LossBreakdown { combined: loss::combined_loss(conf, boxes, self.box_weight), conf, boxes })
    }

    /// One SGD step on the next batch. Returns the losses measured
    /// before the update, so iteration 0's reading reflects the
    /// untrained network.
    pub fn step(&mut self) -> Result<LossBreakdown, TrainError> {
        let batch = self.stream.batch(self.cursor)?;
        self.cursor += self.stream.cfg.batch as u64;

        let acts = self.net.forward(&batch.images)?;
        let (conf, mut conf_grad) = loss::map_conf_loss(&acts.conf_logits, &batch.conf_targets)?;
        let (boxes, mut box_grad) =
            loss::map_box_loss(&acts.box_map, &batch.box_targets, &batch.mask, self.kind)?;
        let combined = loss::combined_loss(conf, boxes, self.box_weight);
        if !combined.is_finite() {
            return Err(TrainError::NonFiniteLoss { iteration: self.opt.iteration });
        }
        let scale_conf = 1.0 / (1.0 + self.box_weight);
        let scale_box = self.box_weight / (1.0 + self.box_weight);
        for v in conf_grad.data_mut() {
            *v *= scale_conf;
        }
        for v in box_grad.data_mut() {
            *v *= scale_box;
        }
        let grads = self.net.backward(&batch.images, &acts, &conf_grad, &box_grad)?;
        let flat = grads.flat();
        self.opt.step(&self.sgd, &mut self.net.params_mut(), &flat)?;
        Ok(LossBreakdown { combined, conf, boxes })
    }
}

/// Candidate learning rates, ascending: {1, 3} x 10^-k for k = 5..1.
pub fn learning_rate_grid() -> Vec<f64> {
    vec![1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1]
}

/// Result of trying one learning rate for a quarter of the budget.
#[derive(Debug, Clone, Copy)]
pub struct RateTrial {
    pub rate: f64,
    /// Miss rate on the eval set; 1.0 when training diverged.
    pub miss_rate: f64,
    pub mean_center_iou: f64,
    pub diverged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DataConfig;

    fn tiny_trainer(kind: LossKind, lr: f64) -> Trainer {
        let data = DataConfig { height: 32, width: 32, size_range: [8, 16], batch: 2, ..DataConfig::default() };
        let net = NetworkConfig { stem: vec![4, 8], conf_tap: 1, box_tap: 2, ..NetworkConfig::default() };
        let sgd = SgdConfig { learning_rate: lr, ..SgdConfig::default() };
        Trainer::new(net, sgd, SampleStream::new(data, 7), kind, 1.0).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let run = |steps: usize| {
            let mut t = tiny_trainer(LossKind::Iou, 1e-2);
            let mut last = 0.0;
            for _ in 0..steps {
                last = t.step().unwrap().combined;
            }
            (last, t.net.params()[0].data().to_vec())
        };
        let (l1, p1) = run(5);
        let (l2, p2) = run(5);
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn a_few_steps_reduce_the_loss() {
        let mut t = tiny_trainer(LossKind::Iou, 1e-2);
        let first = t.step().unwrap().combined;
        let mut last = first;
        for _ in 0..30 {
            last = t.step().unwrap().combined;
        }
        assert!(last < first, "loss did not move: {first} -> {last}");
    }

    #[test]
    fn grid_is_ascending_and_has_ten_rates() {
        let g = learning_rate_grid();
        assert_eq!(g.len(), 10);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g[0], 1e-5);
        assert_eq!(*g.last().unwrap(), 3e-1);
    }
}
