//! im2col lowering for "same"-padded strided convolutions and their transposes.

use super::Real;

/// Geometry of a same-padded convolution over a `[channels, height, width]` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad_h(&self) -> usize {
        self.kh / 2
    }

    pub fn pad_w(&self) -> usize {
        self.kw / 2
    }

    pub fn out_h(&self) -> usize {
        self.height.div_ceil(self.stride)
    }

    pub fn out_w(&self) -> usize {
        self.width.div_ceil(self.stride)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (ph, pw) = (g.pad_h() as isize, g.pad_w() as isize);
    let mut cols = vec![T::zero(); g.col_rows() * oh * ow];
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + ki as isize - ph;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + kj as isize - pw;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of `cols` back onto a `[channels, height, width]` map; the adjoint of [`im2col`].
pub(crate) fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (ph, pw) = (g.pad_h() as isize, g.pad_w() as isize);
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + ki as isize - ph;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride) as isize + kj as isize - pw;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Adds `bias[c]` to every element of channel `c`.
pub(crate) fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T]) {
    let plane = out.len() / bias.len();
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

pub(crate) fn channel_sums_add<T: Real>(grad: &[T], channels: usize, acc: &mut [T]) {
    let plane = grad.len() / channels;
    for (chunk, a) in grad.chunks(plane).zip(acc.iter_mut()) {
        *a += chunk.iter().copied().sum::<T>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 6,
            kh: 3,
            kw: 5,
            stride: 2,
        };
        let x: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 3) % 13) as f64 - 6.0).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn output_extents_round_up() {
        let g = ConvGeom {
            channels: 1,
            height: 7,
            width: 8,
            kh: 3,
            kw: 3,
            stride: 2,
        };
        assert_eq!((g.out_h(), g.out_w()), (4, 4));
    }
}
