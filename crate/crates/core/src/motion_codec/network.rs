//! Temporal convolution encoder/decoder. Encoder: input conv, `log2(ratio)`
//! stride-2 blocks each followed by a residual block, latent projection.
//! Decoder mirrors it with nearest-neighbour upsampling.

use candle_core::{Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::ParamStore;

pub(crate) struct Conv1d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let weight = store.uniform(rng, &format!("{name}.weight"), &[c_out, c_in, kernel], bound)?;
        let bias = store.uniform(rng, &format!("{name}.bias"), &[c_out], bound)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// `(B, C_in, L)` → `(B, C_out, L_out)`, computed as im2col followed by
    /// a matmul. candle's native conv1d returns wrong kernel gradients on
    /// CPU, which a finite-difference check exposes.
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c_in, l) = x.dims3()?;
        let (c_out, _, k) = self.weight.dims3()?;
        let padded = l + 2 * self.padding;
        if padded < k {
            return Err(crate::Error::ShapeMismatch(format!("conv input of length {l} shorter than kernel {k}")));
        }
        let l_out = (padded - k) / self.stride + 1;
        let xp = x.pad_with_zeros(2, self.padding, self.padding)?;
        let mut taps = Vec::with_capacity(k);
        for tap in 0..k {
            let span = xp.narrow(2, tap, (l_out - 1) * self.stride + 1)?;
            let span = if self.stride == 1 {
                span
            } else {
                span.pad_with_zeros(2, 0, self.stride - 1)?
                    .reshape((b, c_in, l_out, self.stride))?
                    .narrow(3, 0, 1)?
                    .squeeze(3)?
            };
            taps.push(span);
        }
        // (B, C_in, L_out, K) → (B·L_out, C_in·K), matching the weight layout.
        let cols = Tensor::stack(&taps, 3)?
            .permute((0, 2, 1, 3))?
            .contiguous()?
            .reshape((b * l_out, c_in * k))?;
        let w = self.weight.as_tensor().reshape((c_out, c_in * k))?;
        let y = cols.matmul(&w.t()?)?.broadcast_add(self.bias.as_tensor())?;
        Ok(y.reshape((b, l_out, c_out))?.transpose(1, 2)?.contiguous()?)
    }

    pub(crate) fn vars(&self) -> [&Var; 2] {
        [&self.weight, &self.bias]
    }
}

struct ResBlock {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::new(store, rng, &format!("{name}.conv1"), c, c, 3, 1, 1)?,
            conv2: Conv1d::new(store, rng, &format!("{name}.conv2"), c, c, 1, 1, 0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&x.silu()?)?;
        let h = self.conv2.forward(&h.silu()?)?;
        Ok((x + h)?)
    }
}

pub(crate) struct Encoder {
    input: Conv1d,
    down: Vec<(Conv1d, ResBlock)>,
    pub(crate) output: Conv1d,
}

impl Encoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        widths: &[usize],
        blocks: usize,
        latent_dim: usize,
    ) -> Result<Self> {
        let w0 = widths[0];
        let input = Conv1d::new(store, rng, "enc.input", in_channels, w0, 3, 1, 1)?;
        let mut down = Vec::with_capacity(blocks);
        let mut c = w0;
        for i in 0..blocks {
            let out = widths[i.min(widths.len() - 1)];
            down.push((
                Conv1d::new(store, rng, &format!("enc.down.{i}"), c, out, 4, 2, 1)?,
                ResBlock::new(store, rng, &format!("enc.res.{i}"), out)?,
            ));
            c = out;
        }
        let output = Conv1d::new(store, rng, "enc.output", c, latent_dim, 3, 1, 1)?;
        Ok(Self { input, down, output })
    }

    /// `(B, J·6, T)` → `(B, latent_dim, T / 2^blocks)`.
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward(x)?.silu()?;
        for (conv, res) in &self.down {
            h = res.forward(&conv.forward(&h)?)?;
        }
        self.output.forward(&h.silu()?)
    }
}

pub(crate) struct Decoder {
    input: Conv1d,
    up: Vec<(ResBlock, Conv1d)>,
    output: Conv1d,
}

impl Decoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        out_channels: usize,
        widths: &[usize],
        blocks: usize,
        latent_dim: usize,
    ) -> Result<Self> {
        let top = widths[blocks.min(widths.len()).saturating_sub(1)];
        let input = Conv1d::new(store, rng, "dec.input", latent_dim, top, 3, 1, 1)?;
        let mut up = Vec::with_capacity(blocks);
        let mut c = top;
        for i in (0..blocks).rev() {
            let out = if i == 0 { widths[0] } else { widths[(i - 1).min(widths.len() - 1)] };
            up.push((
                ResBlock::new(store, rng, &format!("dec.res.{i}"), c)?,
                Conv1d::new(store, rng, &format!("dec.up.{i}"), c, out, 3, 1, 1)?,
            ));
            c = out;
        }
        let output = Conv1d::new(store, rng, "dec.output", c, out_channels, 3, 1, 1)?;
        Ok(Self { input, up, output })
    }

    /// `(B, latent_dim, T′)` → `(B, J·6, T′ · 2^blocks)`.
    pub(crate) fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward(z)?.silu()?;
        for (res, conv) in &self.up {
            h = res.forward(&h)?;
            let len = h.dim(2)?;
            h = conv.forward(&h.upsample_nearest1d(len * 2)?)?.silu()?;
        }
        self.output.forward(&h)
    }
}
