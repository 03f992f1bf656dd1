//! Dense loops behind the graph operators. Every tensor is viewed as
//! `[channels, depth, height, width]`; 1-D and 2-D spatial layouts get unit
//! leading spatial axes.

use crate::error::{Error, Result};

/// Channels plus a 3-D spatial box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub c: usize,
    pub s: [usize; 3],
}

impl Geom {
    pub fn of(shape: &[usize]) -> Result<Geom> {
        if shape.len() < 2 || shape.len() > 4 {
            return Err(Error::ShapeMismatch(format!(
                "expected [channels, spatial..] with 1 to 3 spatial axes, got {shape:?}"
            )));
        }
        let spatial = &shape[1..];
        let mut s = [1; 3];
        s[3 - spatial.len()..].copy_from_slice(spatial);
        Ok(Geom { c: shape[0], s })
    }

    pub fn voxels(&self) -> usize {
        self.s.iter().product()
    }
}

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub ci: usize,
    pub co: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn weight_len(&self) -> usize {
        self.co * self.ci * self.kernel.iter().product::<usize>()
    }
}

/// Output positions `o` with `0 <= o*stride + k - pad < len`.
fn valid(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    if len + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Visits every (weight, output row, input row) triple of a convolution.
///
/// `f(weight_index, out_offset, in_offset, run)` receives the first output
/// element of a row segment, the matching first input element and the
/// segment length; inner elements advance by 1 on the output side and by
/// the width stride on the input side.
fn for_each_row(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ovox = od * oh * ow;
    let ivox = id * ih * iw;
    for co in 0..g.co {
        for ci in 0..g.ci {
            for a in 0..kd {
                let (z0, z1) = valid(a, pd, sd, id, od);
                for b in 0..kh {
                    let (y0, y1) = valid(b, ph, sh, ih, oh);
                    for c in 0..kw {
                        let (x0, x1) = valid(c, pw, sw, iw, ow);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = (((co * g.ci + ci) * kd + a) * kh + b) * kw + c;
                        for z in z0..z1 {
                            let iz = z * sd + a - pd;
                            for y in y0..y1 {
                                let iy = y * sh + b - ph;
                                let out = co * ovox + (z * oh + y) * ow + x0;
                                let inp = ci * ivox + (iz * ih + iy) * iw + x0 * sw + c - pw;
                                f(widx, out, inp, x1 - x0);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ovox: usize = g.output.iter().product();
    let mut out = vec![0.0; g.co * ovox];
    for (co, chunk) in out.chunks_mut(ovox).enumerate() {
        chunk.fill(b[co]);
    }
    let sw = g.stride[2];
    for_each_row(g, |widx, o, i, run| {
        let wv = w[widx];
        let dst = &mut out[o..o + run];
        if sw == 1 {
            for (d, s) in dst.iter_mut().zip(&x[i..i + run]) {
                *d += wv * s;
            }
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d += wv * x[i + j * sw];
            }
        }
    });
    out
}

/// Accumulates input, weight and bias gradients of a convolution.
pub fn conv_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    grad_x: Option<&mut [f64]>,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    let sw = g.stride[2];
    if let Some(gx) = grad_x {
        for_each_row(g, |widx, o, i, run| {
            let wv = w[widx];
            let src = &grad_out[o..o + run];
            if sw == 1 {
                for (d, s) in gx[i..i + run].iter_mut().zip(src) {
                    *d += wv * s;
                }
            } else {
                for (j, s) in src.iter().enumerate() {
                    gx[i + j * sw] += wv * s;
                }
            }
        });
    }
    if let Some(gw) = grad_w {
        for_each_row(g, |widx, o, i, run| {
            let src = &grad_out[o..o + run];
            let dot: f64 = if sw == 1 {
                src.iter().zip(&x[i..i + run]).map(|(a, b)| a * b).sum()
            } else {
                src.iter()
                    .enumerate()
                    .map(|(j, a)| a * x[i + j * sw])
                    .sum()
            };
            gw[widx] += dot;
        });
    }
    if let Some(gb) = grad_b {
        let ovox: usize = g.output.iter().product();
        for (co, chunk) in grad_out.chunks(ovox).enumerate() {
            gb[co] += chunk.iter().sum::<f64>();
        }
    }
}

/// 2x max pooling over the `factor` axes. Returns values and the flat input
/// offset of each window maximum (first occurrence on ties).
pub fn maxpool_forward(x: &[f64], g: Geom, factor: [usize; 3]) -> (Vec<f64>, Vec<usize>) {
    let o = [g.s[0] / factor[0], g.s[1] / factor[1], g.s[2] / factor[2]];
    let ovox = o[0] * o[1] * o[2];
    let ivox = g.voxels();
    let mut out = Vec::with_capacity(g.c * ovox);
    let mut arg = Vec::with_capacity(g.c * ovox);
    for c in 0..g.c {
        for z in 0..o[0] {
            for y in 0..o[1] {
                for xx in 0..o[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..factor[0] {
                        for b in 0..factor[1] {
                            for d in 0..factor[2] {
                                let iz = z * factor[0] + a;
                                let iy = y * factor[1] + b;
                                let ix = xx * factor[2] + d;
                                let idx = c * ivox + (iz * g.s[1] + iy) * g.s[2] + ix;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbour upsampling by `factor` per axis.
pub fn upsample_forward(x: &[f64], g: Geom, factor: [usize; 3]) -> Vec<f64> {
    let o = [g.s[0] * factor[0], g.s[1] * factor[1], g.s[2] * factor[2]];
    let ivox = g.voxels();
    let mut out = Vec::with_capacity(g.c * o[0] * o[1] * o[2]);
    for c in 0..g.c {
        for z in 0..o[0] {
            for y in 0..o[1] {
                let row = c * ivox + ((z / factor[0]) * g.s[1] + y / factor[1]) * g.s[2];
                out.extend((0..o[2]).map(|xx| x[row + xx / factor[2]]));
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &[f64], g: Geom, factor: [usize; 3], grad_x: &mut [f64]) {
    let o = [g.s[0] * factor[0], g.s[1] * factor[1], g.s[2] * factor[2]];
    let ivox = g.voxels();
    let mut k = 0;
    for c in 0..g.c {
        for z in 0..o[0] {
            for y in 0..o[1] {
                let row = c * ivox + ((z / factor[0]) * g.s[1] + y / factor[1]) * g.s[2];
                for xx in 0..o[2] {
                    grad_x[row + xx / factor[2]] += grad_out[k];
                    k += 1;
                }
            }
        }
    }
}
