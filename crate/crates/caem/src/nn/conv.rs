//! Convolution layers over `[batch, channels, height, width]` maps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Activation, Bound, Params};
use crate::tensor::Tensor;

/// `conv2d` + channel bias + activation. Padding is symmetric per axis;
/// callers that need asymmetric "same" padding for even kernels pad the
/// input explicitly with [`Tensor::pad2d`] and use `pad = [0, 0]` here.
#[derive(Debug, Clone)]
pub struct Conv2DLayer {
    kernel: usize,
    bias: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    pub act: Activation,
}

impl Conv2DLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        ksize: [usize; 2],
        stride: [usize; 2],
        pad: [usize; 2],
        act: Activation,
    ) -> Result<Self> {
        let fan = ksize[0] * ksize[1];
        let n = out_ch * in_ch * fan;
        let kernel = params.add(
            &format!("{prefix}.kernel"),
            vec![out_ch, in_ch, ksize[0], ksize[1]],
            glorot_uniform(rng, in_ch * fan, out_ch * fan, n),
        )?;
        let bias = params.add(&format!("{prefix}.bias"), vec![out_ch], vec![0.0; out_ch])?;
        Ok(Conv2DLayer { kernel, bias, in_ch, out_ch, ksize, stride, pad, act })
    }

    pub fn forward(&self, bound: &Bound, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_ch {
            return Err(Error::DimensionMismatch {
                op: "conv2d layer",
                what: "input channels",
                expected: self.in_ch,
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        let y = x.conv2d(bound.leaf(self.kernel), self.stride, self.pad)?;
        let y = y.add_channel_bias(bound.leaf(self.bias))?;
        self.act.apply(&y)
    }
}

/// `conv_transpose2d` + channel bias + activation. The kernel layout
/// (`[in_ch, out_ch, kh, kw]`) matches the adjoint of [`Conv2DLayer`], so a
/// kernel buffer is interchangeable between a conv and the transposed conv
/// that inverts it.
#[derive(Debug, Clone)]
pub struct ConvTranspose2DLayer {
    kernel: usize,
    bias: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    pub act: Activation,
}

impl ConvTranspose2DLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        ksize: [usize; 2],
        stride: [usize; 2],
        pad: [usize; 2],
        act: Activation,
    ) -> Result<Self> {
        let fan = ksize[0] * ksize[1];
        let n = in_ch * out_ch * fan;
        let kernel = params.add(
            &format!("{prefix}.kernel"),
            vec![in_ch, out_ch, ksize[0], ksize[1]],
            glorot_uniform(rng, in_ch * fan, out_ch * fan, n),
        )?;
        let bias = params.add(&format!("{prefix}.bias"), vec![out_ch], vec![0.0; out_ch])?;
        Ok(ConvTranspose2DLayer { kernel, bias, in_ch, out_ch, ksize, stride, pad, act })
    }

    pub fn forward(&self, bound: &Bound, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_ch {
            return Err(Error::DimensionMismatch {
                op: "conv_transpose2d layer",
                what: "input channels",
                expected: self.in_ch,
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        let y = x.conv_transpose2d(bound.leaf(self.kernel), self.stride, self.pad)?;
        let y = y.add_channel_bias(bound.leaf(self.bias))?;
        self.act.apply(&y)
    }
}

/// Asymmetric "same" padding amounts for stride-1 convolution with kernel
/// size `k`: total `k - 1`, split floor/ceil (extra goes after), matching
/// the usual convention for even kernels.
pub fn same_pad(k: usize) -> (usize, usize) {
    let total = k - 1;
    (total / 2, total - total / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind_all;
    use crate::rng::{stream, Stream};
    use crate::tensor::Tape;

    #[test]
    fn same_pad_splits_even_kernels_asymmetrically() {
        assert_eq!(same_pad(3), (1, 1));
        assert_eq!(same_pad(4), (1, 2));
        assert_eq!(same_pad(1), (0, 0));
    }

    #[test]
    fn padded_conv_preserves_extent() {
        let mut params = Params::new();
        let mut rng = stream(5, Stream::Init, 0, 0);
        let layer =
            Conv2DLayer::new(&mut params, &mut rng, "c", 1, 2, [4, 4], [1, 1], [0, 0], Activation::Relu)
                .unwrap();
        let tape = Tape::new();
        let bound = bind_all(&tape, &params).unwrap();
        let x = tape.leaf(vec![0.25; 6 * 16], vec![1, 1, 6, 16]).unwrap();
        let (pt, pb) = same_pad(4);
        let y = layer.forward(&bound, &x.pad2d([pt, pb, pt, pb]).unwrap()).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 6, 16]);
    }

    #[test]
    fn transpose_layer_inverts_pooled_extent() {
        let mut params = Params::new();
        let mut rng = stream(6, Stream::Init, 0, 0);
        let layer = ConvTranspose2DLayer::new(
            &mut params,
            &mut rng,
            "t",
            3,
            1,
            [4, 4],
            [2, 2],
            [0, 0],
            Activation::Linear,
        )
        .unwrap();
        let tape = Tape::new();
        let bound = bind_all(&tape, &params).unwrap();
        let x = tape.leaf(vec![0.5; 3 * 1 * 4], vec![1, 3, 1, 4]).unwrap();
        let y = layer.forward(&bound, &x).unwrap();
        // (1-1)*2+4 = 4, (4-1)*2+4 = 10: always overshoots, callers crop.
        assert_eq!(y.shape(), vec![1, 1, 4, 10]);
    }

    #[test]
    fn channel_count_is_validated() {
        let mut params = Params::new();
        let mut rng = stream(7, Stream::Init, 0, 0);
        let layer =
            Conv2DLayer::new(&mut params, &mut rng, "c", 2, 2, [3, 3], [1, 1], [1, 1], Activation::Linear)
                .unwrap();
        let tape = Tape::new();
        let bound = bind_all(&tape, &params).unwrap();
        let x = tape.leaf(vec![0.0; 3 * 4 * 4], vec![1, 3, 4, 4]).unwrap();
        assert!(matches!(layer.forward(&bound, &x), Err(Error::DimensionMismatch { .. })));
    }
}
