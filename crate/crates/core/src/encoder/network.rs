//! Forward and reverse-mode passes of the convolutional encoder.
//!
//! Activations are `(channels, rows * cols)` matrices; rows are frequency
//! bins and cols are STFT frames. Convolutions are lowered to GEMM through
//! im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::params::ParameterSet;
use super::{conv_bias_name, conv_weight_name, EncoderConfig, DENSE_BIAS, DENSE_WEIGHT, KERNEL};
use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// Pool factor along an axis: 2, or 1 once the axis has shrunk to a single cell.
pub(crate) fn pool_factor(size: usize) -> usize {
    if size >= 2 {
        2
    } else {
        1
    }
}

struct Stage {
    rows: usize,
    cols: usize,
    /// im2col of the stage input, `(c_in * 9, rows * cols)`.
    patches: Array2<f64>,
    /// Post-ReLU activations, `(c_out, rows * cols)`.
    act: Array2<f64>,
    /// For every pooled cell, the flat spatial index of its maximum.
    argmax: Array2<usize>,
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct Trace {
    stages: Vec<Stage>,
    pooled: Vec<f64>,
    raw: Vec<f64>,
    norm: f64,
    pub(crate) embedding: Vec<f64>,
}

fn im2col(x: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let c_in = x.nrows();
    let k2 = KERNEL * KERNEL;
    let mut out = Array2::zeros((c_in * k2, rows * cols));
    let half = (KERNEL / 2) as isize;
    for c in 0..c_in {
        let src = x.row(c);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let mut dst = out.row_mut(c * k2 + ky * KERNEL + kx);
                let dy = ky as isize - half;
                let dx = kx as isize - half;
                for r in 0..rows {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= rows as isize {
                        continue;
                    }
                    for q in 0..cols {
                        let sq = q as isize + dx;
                        if sq < 0 || sq >= cols as isize {
                            continue;
                        }
                        dst[r * cols + q] = src[sr as usize * cols + sq as usize];
                    }
                }
            }
        }
    }
    out
}

fn col2im(patches: &Array2<f64>, c_in: usize, rows: usize, cols: usize) -> Array2<f64> {
    let k2 = KERNEL * KERNEL;
    let mut out = Array2::zeros((c_in, rows * cols));
    let half = (KERNEL / 2) as isize;
    for c in 0..c_in {
        let mut dst = out.row_mut(c);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let src = patches.row(c * k2 + ky * KERNEL + kx);
                let dy = ky as isize - half;
                let dx = kx as isize - half;
                for r in 0..rows {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= rows as isize {
                        continue;
                    }
                    for q in 0..cols {
                        let sq = q as isize + dx;
                        if sq < 0 || sq >= cols as isize {
                            continue;
                        }
                        dst[sr as usize * cols + sq as usize] += src[r * cols + q];
                    }
                }
            }
        }
    }
    out
}

fn max_pool(act: &Array2<f64>, rows: usize, cols: usize) -> (Array2<f64>, Array2<usize>, usize, usize) {
    let (fr, fc) = (pool_factor(rows), pool_factor(cols));
    let (pr, pc) = (rows / fr, cols / fc);
    let channels = act.nrows();
    let mut out = Array2::zeros((channels, pr * pc));
    let mut argmax = Array2::zeros((channels, pr * pc));
    for c in 0..channels {
        let src = act.row(c);
        for i in 0..pr {
            for j in 0..pc {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for di in 0..fr {
                    for dj in 0..fc {
                        let idx = (i * fr + di) * cols + j * fc + dj;
                        if src[idx] > best {
                            best = src[idx];
                            at = idx;
                        }
                    }
                }
                out[[c, i * pc + j]] = best;
                argmax[[c, i * pc + j]] = at;
            }
        }
    }
    (out, argmax, pr, pc)
}

fn weight_view<'a>(params: &'a ParameterSet, name: &str, rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>> {
    let t = params.expect(name)?;
    ArrayView2::from_shape((rows, cols), &t.data).map_err(|_| Error::ShapeMismatch {
        expected: vec![rows, cols],
        got: t.shape.clone(),
    })
}

fn bias_view<'a>(params: &'a ParameterSet, name: &str, len: usize) -> Result<ArrayView1<'a, f64>> {
    let t = params.expect(name)?;
    ArrayView1::from_shape(len, &t.data).map_err(|_| Error::ShapeMismatch {
        expected: vec![len],
        got: t.shape.clone(),
    })
}

fn grad_matrix<'a>(grads: &'a mut ParameterSet, name: &str, rows: usize, cols: usize) -> ArrayViewMut2<'a, f64> {
    let t = grads.get_mut(name).expect("gradient layout mirrors parameters");
    ArrayViewMut2::from_shape((rows, cols), &mut t.data).expect("gradient shape")
}

fn grad_vector<'a>(grads: &'a mut ParameterSet, name: &str, len: usize) -> ArrayViewMut1<'a, f64> {
    let t = grads.get_mut(name).expect("gradient layout mirrors parameters");
    ArrayViewMut1::from_shape(len, &mut t.data).expect("gradient shape")
}

pub(crate) fn forward_trace(params: &ParameterSet, cfg: &EncoderConfig, spec: &Spectrogram) -> Result<Trace> {
    let (rows0, cols0) = cfg.input_shape;
    if spec.shape() != cfg.input_shape {
        return Err(Error::ShapeMismatch {
            expected: vec![rows0, cols0],
            got: vec![spec.freq_bins(), spec.frames()],
        });
    }
    let mut x = spec
        .data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, rows0 * cols0))
        .expect("contiguous spectrogram");
    let (mut rows, mut cols) = (rows0, cols0);
    let mut c_in = 1;
    let mut stages = Vec::with_capacity(cfg.conv_channels.len());
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        let w = weight_view(params, &conv_weight_name(i), c_out, c_in * KERNEL * KERNEL)?;
        let b = bias_view(params, &conv_bias_name(i), c_out)?;
        let patches = im2col(&x, rows, cols);
        let mut act = Array2::zeros((c_out, rows * cols));
        general_mat_mul(1.0, &w, &patches, 0.0, &mut act);
        for (mut row, &bias) in act.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|v| (v + bias).max(0.0));
        }
        let (pooled, argmax, pr, pc) = max_pool(&act, rows, cols);
        stages.push(Stage {
            rows,
            cols,
            patches,
            act,
            argmax,
        });
        x = pooled;
        rows = pr;
        cols = pc;
        c_in = c_out;
    }

    let cells = (rows * cols) as f64;
    let pooled: Vec<f64> = x.rows().into_iter().map(|r| r.sum() / cells).collect();
    let d = cfg.embedding_dim;
    let wd = weight_view(params, DENSE_WEIGHT, d, c_in)?;
    let bd = bias_view(params, DENSE_BIAS, d)?;
    let raw: Vec<f64> = (0..d)
        .map(|k| wd.row(k).iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + bd[k])
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            tensor: "embedding".into(),
        });
    }
    if norm == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let embedding = raw.iter().map(|v| v / norm).collect();
    Ok(Trace {
        stages,
        pooled,
        raw,
        norm,
        embedding,
    })
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding).
pub(crate) fn backward(
    params: &ParameterSet,
    cfg: &EncoderConfig,
    trace: &Trace,
    d_embedding: &[f64],
    grads: &mut ParameterSet,
) -> Result<()> {
    let d = cfg.embedding_dim;
    let z = &trace.embedding;
    let zdz: f64 = z.iter().zip(d_embedding).map(|(a, b)| a * b).sum();
    let d_raw: Vec<f64> = z
        .iter()
        .zip(d_embedding)
        .map(|(zi, gi)| (gi - zi * zdz) / trace.norm)
        .collect();
    debug_assert_eq!(trace.raw.len(), d);

    let c_last = trace.pooled.len();
    let wd = weight_view(params, DENSE_WEIGHT, d, c_last)?;
    {
        let mut gw = grad_matrix(grads, DENSE_WEIGHT, d, c_last);
        for k in 0..d {
            for c in 0..c_last {
                gw[[k, c]] += d_raw[k] * trace.pooled[c];
            }
        }
    }
    {
        let mut gb = grad_vector(grads, DENSE_BIAS, d);
        for k in 0..d {
            gb[k] += d_raw[k];
        }
    }
    let d_pooled: Vec<f64> = (0..c_last)
        .map(|c| (0..d).map(|k| wd[[k, c]] * d_raw[k]).sum())
        .collect();

    // Gradient w.r.t. the last stage's pooled output (global average pool).
    let last = trace.stages.last().expect("at least one stage");
    let out_cells = {
        let (fr, fc) = (pool_factor(last.rows), pool_factor(last.cols));
        (last.rows / fr) * (last.cols / fc)
    };
    let mut d_out = Array2::from_shape_fn((c_last, out_cells), |(c, _)| d_pooled[c] / out_cells as f64);

    for (i, stage) in trace.stages.iter().enumerate().rev() {
        let c_out = stage.act.nrows();
        let c_in = stage.patches.nrows() / (KERNEL * KERNEL);
        let mut d_act = Array2::zeros((c_out, stage.rows * stage.cols));
        for c in 0..c_out {
            for (cell, &at) in stage.argmax.row(c).iter().enumerate() {
                d_act[[c, at]] += d_out[[c, cell]];
            }
        }
        // ReLU: subgradient 0 wherever the activation is not positive.
        ndarray::Zip::from(&mut d_act)
            .and(&stage.act)
            .for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
        {
            let mut gw = grad_matrix(grads, &conv_weight_name(i), c_out, c_in * KERNEL * KERNEL);
            general_mat_mul(1.0, &d_act, &stage.patches.t(), 1.0, &mut gw);
        }
        {
            let mut gb = grad_vector(grads, &conv_bias_name(i), c_out);
            for c in 0..c_out {
                gb[c] += d_act.row(c).sum();
            }
        }
        if i > 0 {
            let w = weight_view(params, &conv_weight_name(i), c_out, c_in * KERNEL * KERNEL)?;
            let mut d_patches = Array2::zeros(stage.patches.dim());
            general_mat_mul(1.0, &w.t(), &d_act, 0.0, &mut d_patches);
            d_out = col2im(&d_patches, c_in, stage.rows, stage.cols);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let (c, rows, cols) = (2, 5, 3);
        let x = Array2::from_shape_fn((c, rows * cols), |(i, j)| ((i * 31 + j * 7) % 11) as f64 - 5.0);
        let y = Array2::from_shape_fn((c * 9, rows * cols), |(i, j)| ((i * 13 + j * 3) % 7) as f64 - 3.0);
        let lhs: f64 = (&im2col(&x, rows, cols) * &y).sum();
        let rhs: f64 = (&x * &col2im(&y, c, rows, cols)).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn pooling_floors_and_passes_single_cells() {
        let act = Array2::from_shape_vec((1, 15), (0..15).map(|v| v as f64).collect()).unwrap();
        let (out, arg, pr, pc) = max_pool(&act, 5, 3);
        assert_eq!((pr, pc), (2, 1));
        assert_eq!(out.row(0).to_vec(), vec![4.0, 10.0]);
        assert_eq!(arg.row(0).to_vec(), vec![4, 10]);
        let (_, _, pr, pc) = max_pool(&Array2::zeros((1, 4)), 4, 1);
        assert_eq!((pr, pc), (2, 1));
    }
}
