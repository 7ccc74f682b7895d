use crate::error::{Error, Result};
use crate::rng::DetRng;

use super::fmap::FeatureMap;

/// Convolution weights laid out `[out][in][ky][kx]`, plus one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || kernel == 0 {
            return Err(Error::Topology { node: "<conv>".into(), reason: "zero-sized convolution".into() });
        }
        if weights.len() != out_ch * in_ch * kernel * kernel || bias.len() != out_ch {
            return Err(Error::Topology {
                node: "<conv>".into(),
                reason: format!(
                    "{kernel}x{kernel} conv {in_ch}->{out_ch} needs {} weights and {out_ch} biases, got {} and {}",
                    out_ch * in_ch * kernel * kernel,
                    weights.len(),
                    bias.len()
                ),
            });
        }
        Ok(Self { in_ch, out_ch, kernel, weights, bias })
    }

    /// Weights uniform in `[-0.1, 0.1)`, zero bias.
    pub fn random(rng: &mut DetRng, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let weights = (0..out_ch * in_ch * kernel * kernel).map(|_| rng.uniform(-0.1, 0.1) as f32).collect();
        Self { in_ch, out_ch, kernel, weights, bias: vec![0.0; out_ch] }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_ch + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Pointwise convolution.
    pub fn apply_1x1(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(self.kernel, 1);
        let mut out = FeatureMap::zeros(x.rows(), x.cols(), self.out_ch);
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let px = x.pixel(r, c);
                let base = out.index(r, c, 0);
                let dst = &mut out.data_mut()[base..base + self.out_ch];
                for (o, d) in dst.iter_mut().enumerate() {
                    let row = &self.weights[o * self.in_ch..(o + 1) * self.in_ch];
                    *d = self.bias[o] + row.iter().zip(px).map(|(w, v)| w * v).sum::<f32>();
                }
            }
        }
        out
    }

    /// 3x3 convolution, stride 2, zero padding 1: halves each side.
    pub fn apply_3x3_s2(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(self.kernel, 3);
        let (rows, cols) = (x.rows().div_ceil(2), x.cols().div_ceil(2));
        let mut out = FeatureMap::zeros(rows, cols, self.out_ch);
        for r in 0..rows {
            for c in 0..cols {
                for o in 0..self.out_ch {
                    let mut acc = self.bias[o];
                    for ky in 0..3 {
                        let sr = (2 * r + ky) as isize - 1;
                        if sr < 0 || sr >= x.rows() as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sc = (2 * c + kx) as isize - 1;
                            if sc < 0 || sc >= x.cols() as isize {
                                continue;
                            }
                            let px = x.pixel(sr as usize, sc as usize);
                            for (i, v) in px.iter().enumerate() {
                                acc += self.weight(o, i, ky, kx) * v;
                            }
                        }
                    }
                    let idx = out.index(r, c, o);
                    out.data_mut()[idx] = acc;
                }
            }
        }
        out
    }
}

/// Nearest-neighbour 2x upscale: each value fills a 2x2 block.
pub fn upscale_nn_2x(x: &FeatureMap) -> FeatureMap {
    let (rows, cols, ch) = (x.rows() * 2, x.cols() * 2, x.channels());
    let mut data = Vec::with_capacity(rows * cols * ch);
    for r in 0..rows {
        for c in 0..cols {
            data.extend_from_slice(x.pixel(r / 2, c / 2));
        }
    }
    FeatureMap::new(rows, cols, ch, data).expect("upscale preserves finiteness")
}

/// Channel concatenation of equally sized maps, in argument order.
pub fn concat(parts: &[&FeatureMap]) -> FeatureMap {
    let (rows, cols) = (parts[0].rows(), parts[0].cols());
    let ch: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(rows * cols * ch);
    for r in 0..rows {
        for c in 0..cols {
            for p in parts {
                data.extend_from_slice(p.pixel(r, c));
            }
        }
    }
    FeatureMap::new(rows, cols, ch, data).expect("concat preserves finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upscale_replicates_blocks() {
        let x = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upscale_nn_2x(&x);
        assert_eq!((y.rows(), y.cols(), y.channels()), (4, 4, 1));
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn pointwise_conv_mixes_channels() {
        let conv = Conv::new(2, 1, 1, vec![3.0, 4.0], vec![0.5]).unwrap();
        let x = FeatureMap::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(conv.apply_1x1(&x).data(), &[11.5]);
    }

    #[test]
    fn strided_conv_matches_direct_sum() {
        // all-ones 3x3 kernel on a 4x4 ramp; output (0,0) sees rows/cols 0..=1
        let conv = Conv::new(1, 1, 3, vec![1.0; 9], vec![0.0]).unwrap();
        let x = FeatureMap::new(4, 4, 1, (0..16).map(|v| v as f32).collect()).unwrap();
        let y = conv.apply_3x3_s2(&x);
        assert_eq!((y.rows(), y.cols()), (2, 2));
        assert_eq!(y.get(0, 0, 0), 0.0 + 1.0 + 4.0 + 5.0);
        // output (1,1) sees rows/cols 1..=3
        let expected: f32 = [5, 6, 7, 9, 10, 11, 13, 14, 15].iter().map(|&v| v as f32).sum();
        assert_eq!(y.get(1, 1, 0), expected);
    }

    #[test]
    fn concat_interleaves_per_pixel() {
        let a = FeatureMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = FeatureMap::new(1, 2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(concat(&[&a, &b]).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn conv_shape_validation() {
        assert!(Conv::new(2, 1, 1, vec![1.0], vec![0.0]).is_err());
        assert!(Conv::new(0, 1, 1, vec![], vec![0.0]).is_err());
    }
}
