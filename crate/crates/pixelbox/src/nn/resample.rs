//! Bilinear upsampling and center cropping.
//!
//! Upsampling uses corner-aligned sampling: output corners map exactly
//! onto input corners, and a linear ramp stays a linear ramp. Because
//! distance targets vary linearly with pixel position inside an
//! object, corner-aligned interpolation can represent them exactly
//! between coarse grid points.

use super::NnError;
use crate::tensor::Tensor;

/// Per-axis interpolation taps: output index -> (low index, high index, weight of high).
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = if dst > 1 { (src - 1) as f64 / (dst - 1) as f64 } else { 0.0 };
    (0..dst)
        .map(|o| {
            let pos = o as f64 * scale;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub fn bilinear_upsample_forward(
    x: &Tensor,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor, NnError> {
    let [n, c, h, w] = x.shape();
    if target_h < h || target_w < w {
        return Err(NnError::DownscaleRequest { from: (h, w), target: (target_h, target_w) });
    }
    let rows = axis_taps(h, target_h);
    let cols = axis_taps(w, target_w);
    let mut out = Tensor::zeros([n, c, target_h, target_w]);
    for ni in 0..n {
        for ci in 0..c {
            for (oh, &(r0, r1, fr)) in rows.iter().enumerate() {
                let row0 = x.idx(ni, ci, r0, 0);
                let row1 = x.idx(ni, ci, r1, 0);
                let orow = out.idx(ni, ci, oh, 0);
                for (ow, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let xd = x.data();
                    let v00 = xd[row0 + c0];
                    let v01 = xd[row0 + c1];
                    let v10 = xd[row1 + c0];
                    let v11 = xd[row1 + c1];
                    let top = v00 + fc * (v01 - v00);
                    let bot = v10 + fc * (v11 - v10);
                    out.data_mut()[orow + ow] = top + fr * (bot - top);
                }
            }
        }
    }
    Ok(out)
}

/// Distributes the upstream gradient back to the source grid with the
/// same interpolation weights used by the forward pass.
pub fn bilinear_upsample_backward(
    source_shape: [usize; 4],
    grad_out: &Tensor,
) -> Result<Tensor, NnError> {
    let [n, c, h, w] = source_shape;
    let [gn, gc, th, tw] = grad_out.shape();
    if gn != n || gc != c || th < h || tw < w {
        return Err(NnError::ShapeMismatch(format!(
            "upsample backward: source {source_shape:?}, grad {:?}",
            grad_out.shape()
        )));
    }
    let rows = axis_taps(h, th);
    let cols = axis_taps(w, tw);
    let mut gx = Tensor::zeros(source_shape);
    for ni in 0..n {
        for ci in 0..c {
            for (oh, &(r0, r1, fr)) in rows.iter().enumerate() {
                let grow = grad_out.idx(ni, ci, oh, 0);
                let xrow0 = gx.idx(ni, ci, r0, 0);
                let xrow1 = gx.idx(ni, ci, r1, 0);
                for (ow, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let g = grad_out.data()[grow + ow];
                    let gxd = gx.data_mut();
                    gxd[xrow0 + c0] += g * (1.0 - fr) * (1.0 - fc);
                    gxd[xrow0 + c1] += g * (1.0 - fr) * fc;
                    gxd[xrow1 + c0] += g * fr * (1.0 - fc);
                    gxd[xrow1 + c1] += g * fr * fc;
                }
            }
        }
    }
    Ok(gx)
}

/// Center crop to `target_h` x `target_w`; the dropped border is split
/// evenly, extra pixel on the bottom/right.
pub fn crop_center_forward(
    x: &Tensor,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor, NnError> {
    let [n, c, h, w] = x.shape();
    if target_h > h || target_w > w {
        return Err(NnError::CropTooLarge { from: (h, w), target: (target_h, target_w) });
    }
    let off_h = (h - target_h) / 2;
    let off_w = (w - target_w) / 2;
    let mut out = Tensor::zeros([n, c, target_h, target_w]);
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..target_h {
                let src = x.idx(ni, ci, oh + off_h, off_w);
                let dst = out.idx(ni, ci, oh, 0);
                let xd = x.data();
                out.data_mut()[dst..dst + target_w].copy_from_slice(&xd[src..src + target_w]);
            }
        }
    }
    Ok(out)
}

/// Adjoint of the center crop: zero-pads the gradient back to the
/// source size.
pub fn crop_center_backward(source_shape: [usize; 4], grad_out: &Tensor) -> Result<Tensor, NnError> {
    let [n, c, h, w] = source_shape;
    let [gn, gc, th, tw] = grad_out.shape();
    if gn != n || gc != c || th > h || tw > w {
        return Err(NnError::ShapeMismatch(format!(
            "crop backward: source {source_shape:?}, grad {:?}",
            grad_out.shape()
        )));
    }
    let off_h = (h - th) / 2;
    let off_w = (w - tw) / 2;
    let mut gx = Tensor::zeros(source_shape);
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..th {
                let dst = gx.idx(ni, ci, oh + off_h, off_w);
                let src = grad_out.idx(ni, ci, oh, 0);
                let god = grad_out.data();
                gx.data_mut()[dst..dst + tw].copy_from_slice(&god[src..src + tw]);
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_stays_constant() {
        let x = Tensor::full([1, 1, 2, 2], 3.5);
        let y = bilinear_upsample_forward(&x, 5, 7).unwrap();
        assert!(y.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn row_ramp_interpolates_monotonically() {
        // 2x2 [[0,1],[0,1]] -> 2x4: rows ramp 0 -> 1
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = bilinear_upsample_forward(&x, 2, 4).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..2 {
            for (col, &e) in expected.iter().enumerate() {
                assert!((y.at(0, 0, row, col) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_alignment_preserves_corners() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bilinear_upsample_forward(&x, 9, 9).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), 1.0);
        assert_eq!(y.at(0, 0, 0, 8), 2.0);
        assert_eq!(y.at(0, 0, 8, 0), 3.0);
        assert_eq!(y.at(0, 0, 8, 8), 4.0);
    }

    #[test]
    fn upsample_rejects_downscale() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        assert!(matches!(
            bilinear_upsample_forward(&x, 2, 8),
            Err(NnError::DownscaleRequest { .. })
        ));
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut x = Tensor::zeros([1, 2, 3, 4]);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let y = bilinear_upsample_forward(&x, 7, 9).unwrap();
        let mut gy = Tensor::zeros(y.shape());
        for v in gy.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let gx = bilinear_upsample_backward(x.shape(), &gy).unwrap();
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn crop_equal_size_is_identity() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(crop_center_forward(&x, 2, 2).unwrap(), x);
    }

    #[test]
    fn crop_drops_one_pixel_border() {
        let mut x = Tensor::zeros([1, 1, 10, 10]);
        for h in 0..10 {
            for w in 0..10 {
                *x.at_mut(0, 0, h, w) = (h * 10 + w) as f64;
            }
        }
        let y = crop_center_forward(&x, 8, 8).unwrap();
        assert_eq!(y.shape(), [1, 1, 8, 8]);
        assert_eq!(y.at(0, 0, 0, 0), 11.0); // offset (10-8)/2 = 1
        assert_eq!(y.at(0, 0, 7, 7), 88.0);
    }

    #[test]
    fn crop_rejects_enlarge() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        assert!(matches!(crop_center_forward(&x, 6, 4), Err(NnError::CropTooLarge { .. })));
    }

    #[test]
    fn crop_backward_zero_pads_border() {
        let g = Tensor::full([1, 1, 2, 2], 1.0);
        let gx = crop_center_backward([1, 1, 4, 4], &g).unwrap();
        assert_eq!(gx.at(0, 0, 0, 0), 0.0);
        assert_eq!(gx.at(0, 0, 1, 1), 1.0);
        assert_eq!(gx.at(0, 0, 2, 2), 1.0);
        assert_eq!(gx.at(0, 0, 3, 3), 0.0);
        let total: f64 = gx.data().iter().sum();
        assert_eq!(total, 4.0);
    }
}
