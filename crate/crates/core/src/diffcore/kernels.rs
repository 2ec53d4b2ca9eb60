//! Raw loops behind the convolution and pooling ops.

use std::ops::Range;

/// Geometry of a strided, zero-padded 3D cross-correlation
/// `[ci, D, H, W] -> [co, D', H', W']` with kernel `[co, ci, kd, kh, kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub ci: usize,
    pub co: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output extents of a forward convolution, or `None` when empty.
    pub fn forward(ci: usize, co: usize, input: [usize; 3], kernel: [usize; 3], stride: usize, pad: usize) -> Option<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * pad;
            if stride == 0 || span < kernel[a] {
                return None;
            }
            output[a] = (span - kernel[a]) / stride + 1;
        }
        Some(Self { ci, co, input, kernel, output, stride, pad })
    }

    fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.co * self.ci * self.kernel.iter().product::<usize>()
    }

    /// Outputs `o` along `axis` whose tap `o * stride + k - pad` is inside
    /// the input.
    fn valid(&self, axis: usize, k: usize) -> Range<usize> {
        let (s, p, n) = (self.stride, self.pad, self.input[axis]);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n + p > k { ((n - 1 + p - k) / s + 1).min(self.output[axis]) } else { 0 };
        lo..hi.max(lo)
    }

    /// Calls `f(out_offset, in_offset, weight_index, len)` for every run of
    /// taps along x that share a kernel weight.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [kd, kh, kw] = self.kernel;
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let s = self.stride;
        for co in 0..self.co {
            for ci in 0..self.ci {
                for kz in 0..kd {
                    let rz = self.valid(0, kz);
                    for ky in 0..kh {
                        let ry = self.valid(1, ky);
                        for kx in 0..kw {
                            let rx = self.valid(2, kx);
                            if rx.is_empty() {
                                continue;
                            }
                            let widx = (((co * self.ci + ci) * kd + kz) * kh + ky) * kw + kx;
                            for oz in rz.clone() {
                                let iz = oz * s + kz - self.pad;
                                for oy in ry.clone() {
                                    let iy = oy * s + ky - self.pad;
                                    let ix = rx.start * s + kx - self.pad;
                                    let o = ((co * self.output[0] + oz) * oh + oy) * ow + rx.start;
                                    let i = ((ci * self.input[0] + iz) * ih + iy) * iw + ix;
                                    f(o, i, widx, rx.len());
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward_into(&self, x: &[f64], w: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ci * self.in_len());
        debug_assert_eq!(y.len(), self.co * self.out_len());
        let s = self.stride;
        self.for_each_row(|o, i, widx, len| {
            let wv = w[widx];
            if s == 1 {
                for (yo, xi) in y[o..o + len].iter_mut().zip(&x[i..i + len]) {
                    *yo += wv * xi;
                }
            } else {
                for t in 0..len {
                    y[o + t] += wv * x[i + t * s];
                }
            }
        });
    }

    /// Adjoint of [`forward_into`] in the input: `gx += A^T gy`.
    pub fn backward_input(&self, gy: &[f64], w: &[f64], gx: &mut [f64]) {
        let s = self.stride;
        self.for_each_row(|o, i, widx, len| {
            let wv = w[widx];
            if s == 1 {
                for (g, gyo) in gx[i..i + len].iter_mut().zip(&gy[o..o + len]) {
                    *g += wv * gyo;
                }
            } else {
                for t in 0..len {
                    gx[i + t * s] += wv * gy[o + t];
                }
            }
        });
    }

    /// Kernel gradient: `gw[co, ci, k] += sum_o gy[co, o] * x[ci, o*s + k - p]`.
    pub fn backward_weight(&self, x: &[f64], gy: &[f64], gw: &mut [f64]) {
        let s = self.stride;
        self.for_each_row(|o, i, widx, len| {
            let mut acc = 0.0;
            for t in 0..len {
                acc += gy[o + t] * x[i + t * s];
            }
            gw[widx] += acc;
        });
    }
}

/// 2x2x2 max pooling with stride 2. Odd extents behave as if padded with
/// `-inf`; ties keep the first voxel in window order. Returns the pooled
/// values, the flat input index of each maximum, and the output extents.
pub fn maxpool2(input: &[f64], channels: usize, ext: [usize; 3]) -> (Vec<f64>, Vec<usize>, [usize; 3]) {
    let out = [ext[0].div_ceil(2), ext[1].div_ceil(2), ext[2].div_ceil(2)];
    let n_out = out.iter().product::<usize>();
    let n_in = ext.iter().product::<usize>();
    let mut vals = Vec::with_capacity(channels * n_out);
    let mut arg = Vec::with_capacity(channels * n_out);
    for c in 0..channels {
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut best_i = usize::MAX;
                    for z in 2 * oz..(2 * oz + 2).min(ext[0]) {
                        for y in 2 * oy..(2 * oy + 2).min(ext[1]) {
                            for x in 2 * ox..(2 * ox + 2).min(ext[2]) {
                                let i = c * n_in + (z * ext[1] + y) * ext[2] + x;
                                if best_i == usize::MAX || input[i] > input[best_i] {
                                    best_i = i;
                                }
                            }
                        }
                    }
                    vals.push(input[best_i]);
                    arg.push(best_i);
                }
            }
        }
    }
    (vals, arg, out)
}
