//! 2-D convolution (cross-correlation) with zero padding.

use super::NnError;
use crate::tensor::Tensor;
use rand::Rng;

/// Convolution layer. Weight layout [c_out, c_in, k, k]; bias is a
/// [c_out, 1, 1, 1] tensor so the optimizer and checkpoints treat all
/// parameters uniformly.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Seeded init: weights uniform in +-sqrt(1 / fan_in), bias zero.
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let mut weight = Tensor::zeros([c_out, c_in, kernel, kernel]);
        for v in weight.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        Self { weight, bias: Tensor::zeros([c_out, 1, 1, 1]), stride, pad }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        ((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1)
    }

    /// Range of output positions `o` with `0 <= o*stride + k - pad < limit`.
    #[inline]
    fn valid_out_range(&self, k: usize, limit: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off < limit
        let hi = (limit as isize - 1 - off).div_euclid(s);
        let lo = lo.max(0) as usize;
        let hi = (hi.max(-1) + 1).min(out_len as isize).max(0) as usize;
        (lo.min(hi), hi)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let [n, c_in, h, w] = x.shape();
        if c_in != self.c_in() {
            return Err(NnError::ShapeMismatch(format!(
                "conv expects {} input channels, got {c_in}",
                self.c_in()
            )));
        }
        let k = self.kernel();
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(NnError::ShapeMismatch(format!(
                "input {h}x{w} too small for kernel {k} with pad {}",
                self.pad
            )));
        }
        let (oh, ow) = self.out_dims(h, w);
        let mut out = Tensor::zeros([n, self.c_out(), oh, ow]);
        let s = self.stride;
        for ni in 0..n {
            for co in 0..self.c_out() {
                let b = self.bias.at(co, 0, 0, 0);
                let out_base = out.idx(ni, co, 0, 0);
                out.data_mut()[out_base..out_base + oh * ow].fill(b);
                for ci in 0..c_in {
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = self.valid_out_range(kh, h, oh);
                        for kw in 0..k {
                            let wv = self.weight.at(co, ci, kh, kw);
                            if wv == 0.0 {
                                continue;
                            }
                            let (ow_lo, ow_hi) = self.valid_out_range(kw, w, ow);
                            for ohi in oh_lo..oh_hi {
                                let ih = ohi * s + kh - self.pad;
                                let in_row = x.idx(ni, ci, ih, 0);
                                let out_row = out.idx(ni, co, ohi, 0);
                                let xd = x.data();
                                let od = out.data_mut();
                                for owi in ow_lo..ow_hi {
                                    let iw = owi * s + kw - self.pad;
                                    od[out_row + owi] += wv * xd[in_row + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact adjoint of [`Self::forward`]: gradients w.r.t. input,
    /// weight and bias given the upstream gradient.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor), NnError> {
        let [n, c_in, h, w] = x.shape();
        let k = self.kernel();
        let (oh, ow) = self.out_dims(h, w);
        if grad_out.shape() != [n, self.c_out(), oh, ow] {
            return Err(NnError::ShapeMismatch(format!(
                "conv backward: expected grad {:?}, got {:?}",
                [n, self.c_out(), oh, ow],
                grad_out.shape()
            )));
        }
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        let s = self.stride;
        for ni in 0..n {
            for co in 0..self.c_out() {
                let mut bsum = 0.0;
                for ohi in 0..oh {
                    let row = grad_out.idx(ni, co, ohi, 0);
                    for owi in 0..ow {
                        bsum += grad_out.data()[row + owi];
                    }
                }
                *gb.at_mut(co, 0, 0, 0) += bsum;

                for ci in 0..c_in {
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = self.valid_out_range(kh, h, oh);
                        for kw in 0..k {
                            let (ow_lo, ow_hi) = self.valid_out_range(kw, w, ow);
                            let wv = self.weight.at(co, ci, kh, kw);
                            let mut wsum = 0.0;
                            for ohi in oh_lo..oh_hi {
                                let ih = ohi * s + kh - self.pad;
                                let go_row = grad_out.idx(ni, co, ohi, 0);
                                let in_row = x.idx(ni, ci, ih, 0);
                                let gx_row = gx.idx(ni, ci, ih, 0);
                                let god = grad_out.data();
                                let xd = x.data();
                                let gxd = gx.data_mut();
                                for owi in ow_lo..ow_hi {
                                    let iw = owi * s + kw - self.pad;
                                    let g = god[go_row + owi];
                                    wsum += g * xd[in_row + iw];
                                    gxd[gx_row + iw] += g * wv;
                                }
                            }
                            *gw.at_mut(co, ci, kh, kw) += wsum;
                        }
                    }
                }
            }
        }
        Ok((gx, gw, gb))
    }
}
