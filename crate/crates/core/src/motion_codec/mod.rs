//! Residual-VQ motion autoencoder: [`PoseSequence`] ↔ [`MotionTokenGrid`].

mod network;
pub mod quantizer;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, CheckpointWriter, NamedArray};
use crate::error::{Error, Result};
use crate::nn::{scalar, Adam, AdamConfig, LrSchedule, ParamStore};
use crate::rotgeom::PoseSequence;

use network::{Decoder, Encoder};
pub use quantizer::{quantize_residual, Codebook, Latents, Quantized};

pub const CHECKPOINT_KIND: &str = "motion-codec";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub num_residual_layers: usize,
    pub downsample_ratio: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub joints: usize,
    pub fps: f64,
    /// Channel width per encoder stage (input conv, then each stride-2 block);
    /// the decoder mirrors it.
    pub channels: Vec<usize>,
    pub commitment_weight: f64,
    pub ema_momentum: f64,
    /// EMA cluster size below which an entry is re-seeded.
    pub dead_threshold: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            num_residual_layers: 4,
            downsample_ratio: 4,
            codebook_size: 512,
            latent_dim: 64,
            joints: 6,
            fps: 20.0,
            channels: vec![64, 64],
            commitment_weight: 0.25,
            ema_momentum: 0.99,
            dead_threshold: 1e-3,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_residual_layers == 0 {
            return Err(Error::Config("num_residual_layers must be ≥ 1".into()));
        }
        if self.downsample_ratio == 0 || !self.downsample_ratio.is_power_of_two() {
            return Err(Error::Config(format!(
                "downsample_ratio {} is not a power of two",
                self.downsample_ratio
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook_size must be ≥ 2".into()));
        }
        if self.latent_dim == 0 || self.joints == 0 {
            return Err(Error::Config("latent_dim and joints must be ≥ 1".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("channels must be a non-empty list of positive widths".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config("ema_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn downsample_blocks(&self) -> usize {
        self.downsample_ratio.trailing_zeros() as usize
    }

    /// Latent timesteps for a sequence of `frames` frames.
    pub fn timesteps_for(&self, frames: usize) -> usize {
        frames.div_ceil(self.downsample_ratio)
    }
}

/// Per-timestep stack of residual codebook indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionTokenGrid {
    timesteps: usize,
    layers: usize,
    codebook_size: usize,
    /// Row-major `(timesteps, layers)`.
    indices: Vec<u32>,
}

impl MotionTokenGrid {
    pub fn new(timesteps: usize, layers: usize, codebook_size: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != timesteps * layers {
            return Err(Error::ShapeMismatch(format!(
                "grid ({timesteps}, {layers}) needs {} indices, got {}",
                timesteps * layers,
                indices.len()
            )));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= codebook_size) {
            return Err(Error::InvalidToken(format!(
                "motion index {bad} outside codebook of size {codebook_size}"
            )));
        }
        Ok(Self {
            timesteps,
            layers,
            codebook_size,
            indices,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn at(&self, t: usize, layer: usize) -> u32 {
        self.indices[t * self.layers + layer]
    }

    /// Keeps only the first `layers` residual stages.
    pub fn truncate_layers(&self, layers: usize) -> Self {
        let layers = layers.min(self.layers);
        let indices = (0..self.timesteps)
            .flat_map(|t| (0..layers).map(move |l| (t, l)))
            .map(|(t, l)| self.at(t, l))
            .collect();
        Self {
            timesteps: self.timesteps,
            layers,
            codebook_size: self.codebook_size,
            indices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainReport {
    pub step: u64,
    pub lr: f64,
    pub recon_loss: f64,
    pub commit_loss: f64,
    /// Fraction of entries used in this batch, per residual layer.
    pub utilization: Vec<f64>,
    pub restarted_entries: usize,
}

/// How the latent passes between encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Residual quantization with straight-through gradients.
    Quantize,
    /// Identity; the autoencoder is fully continuous.
    Bypass,
}

pub struct MotionCodec {
    config: CodecConfig,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    codebooks: Vec<Codebook>,
    initialized: bool,
}

/// Loss tensors of one forward pass.
pub struct CodecLosses {
    pub recon: Tensor,
    pub commit: Tensor,
    pub quantized: Option<Quantized>,
    pub latents: Latents,
}

impl MotionCodec {
    pub fn new(config: CodecConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype);
        let blocks = config.downsample_blocks();
        let io = config.joints * 6;
        let encoder = Encoder::new(&mut params, &mut rng, io, &config.channels, blocks, config.latent_dim)?;
        let decoder = Decoder::new(&mut params, &mut rng, io, &config.channels, blocks, config.latent_dim)?;
        let codebooks = (0..config.num_residual_layers)
            .map(|_| {
                Codebook::from_entries(
                    config.codebook_size,
                    config.latent_dim,
                    vec![0.0; config.codebook_size * config.latent_dim],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            codebooks,
            initialized: false,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn codebooks_mut(&mut self) -> &mut [Codebook] {
        &mut self.codebooks
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Zeroes the encoder's latent projection (weights and bias).
    pub fn zero_encoder_output(&self) -> Result<()> {
        for v in self.encoder.output.vars() {
            v.set(&v.as_tensor().zeros_like()?)?;
        }
        Ok(())
    }

    fn check_sequence(&self, x: &PoseSequence) -> Result<()> {
        if x.joints() != self.config.joints {
            return Err(Error::ShapeMismatch(format!(
                "sequence has {} joints, codec expects {}",
                x.joints(),
                self.config.joints
            )));
        }
        if x.frames() < self.config.downsample_ratio {
            return Err(Error::TooShort {
                len: x.frames(),
                min: self.config.downsample_ratio,
            });
        }
        Ok(())
    }

    /// Stacks equal-length sequences into `(B, J·6, T)`.
    fn batch_tensor(&self, batch: &[&PoseSequence]) -> Result<Tensor> {
        let frames = batch[0].frames();
        let width = self.config.joints * 6;
        let mut data = Vec::with_capacity(batch.len() * frames * width);
        for seq in batch {
            if seq.frames() != frames {
                return Err(Error::ShapeMismatch("batch sequences differ in length".into()));
            }
            data.extend_from_slice(seq.data());
        }
        let t = Tensor::from_vec(data, (batch.len(), frames, width), &Device::Cpu)?
            .to_dtype(self.dtype())?
            .transpose(1, 2)?
            .contiguous()?;
        Ok(t)
    }

    /// `(B, D, T′)` → rows `(B·T′, D)`.
    fn tensor_to_latents(z: &Tensor) -> Result<Latents> {
        let (b, d, t) = z.dims3()?;
        let rows: Vec<f32> = z
            .transpose(1, 2)?
            .flatten_all()?
            .to_dtype(DType::F32)?
            .to_vec1()?;
        Latents::new(b * t, d, rows)
    }

    fn latents_to_tensor(&self, z: &Latents, batch: usize) -> Result<Tensor> {
        let t = z.rows / batch;
        Ok(Tensor::from_vec(z.data.clone(), (batch, t, z.dim), &Device::Cpu)?
            .to_dtype(self.dtype())?
            .transpose(1, 2)?
            .contiguous()?)
    }

    fn padded(&self, x: &PoseSequence) -> Result<PoseSequence> {
        let target = self.config.timesteps_for(x.frames()) * self.config.downsample_ratio;
        x.fit_length(target)
    }

    /// Continuous latents, one row per latent timestep (`ceil(T / ratio)` rows).
    /// Lengths that are not a multiple of the ratio are edge-padded first.
    pub fn encode(&self, x: &PoseSequence) -> Result<Latents> {
        self.check_sequence(x)?;
        let padded = self.padded(x)?;
        let z = self.encoder.forward(&self.batch_tensor(&[&padded])?)?;
        Self::tensor_to_latents(&z)
    }

    pub fn quantize(&self, z: &Latents) -> Result<Quantized> {
        quantize_residual(z, &self.codebooks, self.config.commitment_weight)
    }

    pub fn tokenize(&self, x: &PoseSequence) -> Result<MotionTokenGrid> {
        let z = self.encode(x)?;
        let q = self.quantize(&z)?;
        MotionTokenGrid::new(z.rows, q.layers, self.config.codebook_size, q.indices)
    }

    /// Sum of the selected entries of the first `grid.layers()` stages.
    pub fn dequantize(&self, grid: &MotionTokenGrid) -> Result<Latents> {
        if grid.layers() > self.codebooks.len() {
            return Err(Error::InvalidToken(format!(
                "grid has {} layers, codec has {}",
                grid.layers(),
                self.codebooks.len()
            )));
        }
        let d = self.config.latent_dim;
        let mut data = vec![0f32; grid.timesteps() * d];
        for t in 0..grid.timesteps() {
            for l in 0..grid.layers() {
                let k = grid.at(t, l) as usize;
                if k >= self.config.codebook_size {
                    return Err(Error::InvalidToken(format!("motion index {k} out of range")));
                }
                for (o, e) in data[t * d..(t + 1) * d].iter_mut().zip(self.codebooks[l].entry(k)) {
                    *o += e;
                }
            }
        }
        Latents::new(grid.timesteps(), d, data)
    }

    pub fn decode_latents(&self, z: &Latents) -> Result<PoseSequence> {
        if z.rows == 0 {
            return PoseSequence::new(0, self.config.joints, self.config.fps, vec![]);
        }
        let out = self.decoder.forward(&self.latents_to_tensor(z, 1)?)?;
        let frames = out.dim(2)?;
        let data: Vec<f32> = out
            .transpose(1, 2)?
            .flatten_all()?
            .to_dtype(DType::F32)?
            .to_vec1()?;
        PoseSequence::new(frames, self.config.joints, self.config.fps, data)
    }

    /// Decodes to `timesteps × ratio` frames.
    pub fn decode(&self, grid: &MotionTokenGrid) -> Result<PoseSequence> {
        if grid.codebook_size() != self.config.codebook_size {
            return Err(Error::InvalidToken(format!(
                "grid codebook size {} vs codec {}",
                grid.codebook_size(),
                self.config.codebook_size
            )));
        }
        self.decode_latents(&self.dequantize(grid)?)
    }

    /// Encode → quantize → decode, cropped back to the input length.
    pub fn reconstruct(&self, x: &PoseSequence) -> Result<PoseSequence> {
        let grid = self.tokenize(x)?;
        self.decode(&grid)?.slice(0, x.frames())
    }

    /// Seeds every stage's entries from encoder outputs of `batch` (stage ℓ
    /// from the residual left by stages `< ℓ`).
    pub fn init_codebooks(&mut self, batch: &[PoseSequence], rng: &mut ChaCha8Rng) -> Result<()> {
        let refs: Vec<&PoseSequence> = batch.iter().collect();
        let z = self.encoder.forward(&self.batch_tensor(&refs)?)?;
        let mut residual = Self::tensor_to_latents(&z)?;
        let (k, d) = (self.config.codebook_size, self.config.latent_dim);
        let spread = (residual.mean_sq_norm() / d as f64).sqrt().max(1e-6) as f32;
        for l in 0..self.codebooks.len() {
            let mut entries = Vec::with_capacity(k * d);
            let mut order: Vec<usize> = (0..residual.rows).collect();
            order.shuffle(rng);
            for i in 0..k {
                let row = residual.row(order[i % order.len()]);
                // Copies beyond the first pass get jitter so they are distinguishable.
                let jitter = if i >= order.len() { spread * 0.01 } else { 0.0 };
                entries.extend(row.iter().map(|v| v + jitter * rng.gen_range(-1.0f32..1.0)));
            }
            self.codebooks[l] = Codebook::from_entries(k, d, entries)?;
            let q = quantize_residual(&residual, &self.codebooks[l..=l], 0.0)?;
            for (r, qv) in residual.data.iter_mut().zip(&q.quantized.data) {
                *r -= qv;
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// Forward pass over a batch of equal-length sequences whose length is a
    /// multiple of the downsampling ratio.
    pub fn losses(&self, batch: &[&PoseSequence], mode: QuantMode) -> Result<CodecLosses> {
        let x = self.batch_tensor(batch)?;
        let z = self.encoder.forward(&x)?;
        let latents = Self::tensor_to_latents(&z)?;
        let (z_dec, commit, quantized) = match mode {
            QuantMode::Bypass => (z.clone(), z.zeros_like()?.sum_all()?, None),
            QuantMode::Quantize => {
                let q = self.quantize(&latents)?;
                let tensors = self.codebook_tensors()?;
                let q_t = gather_quantized(&tensors, &q.indices, q.layers, batch.len(), self.dtype())?;
                let (st, commit) = straight_through(&z, &q_t, self.config.commitment_weight)?;
                (st, commit, Some(q))
            }
        };
        let recon = (self.decoder.forward(&z_dec)? - &x)?.sqr()?.mean_all()?;
        Ok(CodecLosses {
            recon,
            commit,
            quantized,
            latents,
        })
    }

    pub(crate) fn codebook_tensors(&self) -> Result<Vec<Tensor>> {
        self.codebooks
            .iter()
            .map(|cb| {
                Ok(Tensor::from_vec(cb.entries.clone(), (cb.size, cb.dim), &Device::Cpu)?
                    .to_dtype(self.dtype())?)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, step: u64, seed: u64, optimizer: Option<&Adam>) -> Result<()> {
        let mut arrays = self.params.to_arrays("param.")?;
        for (l, cb) in self.codebooks.iter().enumerate() {
            let (k, d) = (cb.size, cb.dim);
            arrays.insert(format!("codebook.{l}.entries"), NamedArray { shape: vec![k, d], data: cb.entries.clone() });
            arrays.insert(format!("codebook.{l}.ema_cluster_size"), NamedArray { shape: vec![k], data: cb.ema_cluster_size.clone() });
            arrays.insert(format!("codebook.{l}.ema_embed_sum"), NamedArray { shape: vec![k, d], data: cb.ema_embed_sum.clone() });
        }
        if let Some(opt) = optimizer {
            arrays.extend(opt.to_arrays()?);
        }
        CheckpointWriter {
            kind: CHECKPOINT_KIND,
            step,
            seed,
            config: serde_json::to_value(&self.config)?,
            extra: serde_json::json!({
                "initialized": self.initialized,
                "optimizer_step": optimizer.map(|o| o.step),
            }),
        }
        .write(dir, &arrays)
    }

    /// Loads a codec checkpoint; returns the codec, its step, and the raw arrays
    /// (for optimizer restoration).
    pub fn load(dir: &Path) -> Result<(Self, u64, BTreeMap<String, NamedArray>)> {
        let (meta, arrays) = read_checkpoint(dir, CHECKPOINT_KIND)?;
        let config: CodecConfig = serde_json::from_value(meta.config.clone())?;
        let mut codec = Self::new(config, meta.seed, DType::F32)?;
        codec.params.load_arrays("param.", &arrays)?;
        let (k, d) = (codec.config.codebook_size, codec.config.latent_dim);
        for l in 0..codec.codebooks.len() {
            let get = |suffix: &str| -> Result<Vec<f32>> {
                arrays
                    .get(&format!("codebook.{l}.{suffix}"))
                    .map(|a| a.data.clone())
                    .ok_or_else(|| Error::CheckpointFormat {
                        path: dir.to_path_buf(),
                        detail: format!("missing codebook.{l}.{suffix}"),
                    })
            };
            let cb = Codebook {
                size: k,
                dim: d,
                entries: get("entries")?,
                ema_cluster_size: get("ema_cluster_size")?,
                ema_embed_sum: get("ema_embed_sum")?,
            };
            if cb.entries.len() != k * d || cb.ema_cluster_size.len() != k || cb.ema_embed_sum.len() != k * d {
                return Err(Error::CheckpointFormat {
                    path: dir.to_path_buf(),
                    detail: format!("codebook {l} has the wrong shape"),
                });
            }
            codec.codebooks[l] = cb;
        }
        codec.initialized = meta.extra.get("initialized").and_then(|v| v.as_bool()).unwrap_or(true);
        Ok((codec, meta.step, arrays))
    }
}

/// Rows of `Σ_ℓ codebook_ℓ[index]`, reshaped to `(B, D, T′)`; detached so no
/// gradient reaches the codebooks.
pub(crate) fn gather_quantized(
    codebooks: &[Tensor],
    indices: &[u32],
    layers: usize,
    batch: usize,
    dtype: DType,
) -> Result<Tensor> {
    let rows = indices.len() / layers;
    let mut acc: Option<Tensor> = None;
    for (l, cb) in codebooks.iter().enumerate().take(layers) {
        let idx: Vec<u32> = indices.iter().skip(l).step_by(layers).copied().collect();
        let idx = Tensor::from_vec(idx, rows, &Device::Cpu)?;
        let sel = cb.index_select(&idx, 0)?;
        acc = Some(match acc {
            Some(a) => (a + sel)?,
            None => sel,
        });
    }
    let q = acc.ok_or_else(|| Error::Config("no codebooks".into()))?;
    let d = q.dim(1)?;
    let t = rows / batch;
    Ok(q.to_dtype(dtype)?
        .reshape((batch, t, d))?
        .transpose(1, 2)?
        .contiguous()?
        .detach())
}

/// `z + sg(q − z)` for the decoder and `β·mean((z − sg(q))²)` for the encoder.
pub(crate) fn straight_through(z: &Tensor, q: &Tensor, beta: f64) -> Result<(Tensor, Tensor)> {
    let q = q.detach();
    let delta = (&q - z.detach())?;
    let st = (z + delta)?;
    let commit = ((z - &q)?.sqr()?.mean_all()? * beta)?;
    Ok((st, commit))
}

/// Training state for the codec: optimizer, schedule, step counter, RNG.
pub struct CodecTrainer {
    pub codec: MotionCodec,
    pub optimizer: Adam,
    pub schedule: LrSchedule,
    pub step: u64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl CodecTrainer {
    pub fn new(codec: MotionCodec, schedule: LrSchedule, adam: AdamConfig, seed: u64) -> Self {
        Self {
            codec,
            optimizer: Adam::new(adam),
            schedule,
            step: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de),
        }
    }

    /// Paper-scale optimizer defaults: lr 1e-5, β = (0.9, 0.999), no weight
    /// decay, ×0.4 at epochs 50/150/250.
    pub fn paper_schedule(steps_per_epoch: u64) -> LrSchedule {
        LrSchedule::MultiStep {
            lr: 1e-5,
            milestones: [50, 150, 250].iter().map(|e| e * steps_per_epoch).collect(),
            gamma: 0.4,
        }
    }

    /// One gradient step on `recon + β·commit` followed by the EMA codebook update.
    pub fn train_step(&mut self, batch: &[PoseSequence]) -> Result<CodecTrainReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty codec batch".into()));
        }
        let ratio = self.codec.config.downsample_ratio;
        for seq in batch {
            self.codec.check_sequence(seq)?;
            if seq.frames() % ratio != 0 || seq.frames() != batch[0].frames() {
                return Err(Error::ShapeMismatch(
                    "codec batch must hold equal-length windows that are a multiple of the ratio".into(),
                ));
            }
        }
        if !self.codec.initialized {
            self.codec.init_codebooks(batch, &mut self.rng)?;
        }
        let refs: Vec<&PoseSequence> = batch.iter().collect();
        let losses = self.codec.losses(&refs, QuantMode::Quantize)?;
        let recon = scalar(&losses.recon)?;
        let commit = scalar(&losses.commit)?;
        if !recon.is_finite() || !commit.is_finite() {
            return Err(Error::TrainingDiverged {
                step: self.step,
                detail: format!("recon {recon}, commit {commit}"),
            });
        }
        let lr = self.schedule.lr_at(self.step);
        let grads = (&losses.recon + &losses.commit)?.backward()?;
        self.optimizer.update(&self.codec.params, &grads, lr)?;

        let q = losses.quantized.expect("quantize mode yields assignments");
        let momentum = self.codec.config.ema_momentum as f32;
        let threshold = self.codec.config.dead_threshold as f32;
        let mut utilization = Vec::with_capacity(q.layers);
        let mut restarted = 0;
        for l in 0..q.layers {
            let assign = q.layer_indices(l);
            let mut used = vec![false; self.codec.config.codebook_size];
            for &a in &assign {
                used[a as usize] = true;
            }
            utilization.push(used.iter().filter(|&&u| u).count() as f64 / used.len() as f64);
            restarted += self.codec.codebooks[l].ema_update(&q.residuals[l], &assign, momentum, threshold, &mut self.rng)?;
        }
        let report = CodecTrainReport {
            step: self.step,
            lr,
            recon_loss: recon,
            commit_loss: commit,
            utilization,
            restarted_entries: restarted,
        };
        self.step += 1;
        Ok(report)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.codec.save(dir, self.step, self.seed, Some(&self.optimizer))
    }
}

/// Random fixed-length windows (length a multiple of the ratio) cut from `clips`.
pub fn sample_windows(
    clips: &[PoseSequence],
    window: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PoseSequence>> {
    if clips.is_empty() {
        return Err(Error::InsufficientData("no clips to sample windows from".into()));
    }
    (0..count)
        .map(|_| {
            let clip = &clips[rng.gen_range(0..clips.len())];
            if clip.frames() <= window {
                clip.fit_length(window)
            } else {
                let start = rng.gen_range(0..=clip.frames() - window);
                clip.slice(start, start + window)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotgeom::{axis_angle_to_matrix, matrix_to_6d, AxisAngle};

    fn tiny_config() -> CodecConfig {
        CodecConfig {
            num_residual_layers: 2,
            downsample_ratio: 4,
            codebook_size: 8,
            latent_dim: 4,
            joints: 2,
            fps: 20.0,
            channels: vec![8, 8],
            ..CodecConfig::default()
        }
    }

    fn wave(frames: usize, joints: usize, phase: f64) -> PoseSequence {
        let mut data = Vec::new();
        for t in 0..frames {
            for j in 0..joints {
                let a = 0.6 * ((t as f64) * 0.3 + phase + j as f64).sin();
                let r = axis_angle_to_matrix(&AxisAngle::new(a, 0.5 * a, 0.1)).unwrap();
                data.extend_from_slice(&matrix_to_6d(&r).unwrap().to_f32());
            }
        }
        PoseSequence::new(frames, joints, 20.0, data).unwrap()
    }

    #[test]
    fn latent_length_is_ceiling_of_ratio() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        assert_eq!(codec.encode(&wave(16, 2, 0.0)).unwrap().rows, 4);
        assert_eq!(codec.encode(&wave(17, 2, 0.0)).unwrap().rows, 5);
        for t in 4..40 {
            assert_eq!(codec.encode(&wave(t, 2, 0.0)).unwrap().rows, t.div_ceil(4));
        }
    }

    #[test]
    fn too_short_sequence_rejected() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        assert!(matches!(
            codec.encode(&wave(3, 2, 0.0)),
            Err(Error::TooShort { len: 3, min: 4 })
        ));
    }

    #[test]
    fn zero_projection_gives_zero_latents() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        codec.zero_encoder_output().unwrap();
        let z = codec.encode(&PoseSequence::new(8, 2, 20.0, vec![0.0; 8 * 12]).unwrap()).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_length_and_invalid_index() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        let grid = MotionTokenGrid::new(3, 2, 8, vec![0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(codec.decode(&grid).unwrap().frames(), 12);
        assert!(matches!(
            MotionTokenGrid::new(1, 2, 8, vec![0, 8]),
            Err(Error::InvalidToken(_))
        ));
    }

    #[test]
    fn constant_grid_decodes_to_constant_interior() {
        let codec = MotionCodec::new(tiny_config(), 1, DType::F32).unwrap();
        let grid = MotionTokenGrid::new(16, 2, 8, [3, 5].repeat(16)).unwrap();
        let out = codec.decode(&grid).unwrap();
        // Receptive field stays well inside 20 frames from either edge.
        let mid = out.frame(32).to_vec();
        for t in 20..44 {
            assert_eq!(out.frame(t), mid.as_slice(), "frame {t}");
        }
    }

    #[test]
    fn decode_is_deterministic() {
        let codec = MotionCodec::new(tiny_config(), 1, DType::F32).unwrap();
        let grid = MotionTokenGrid::new(4, 2, 8, vec![1, 2, 3, 4, 5, 6, 7, 0]).unwrap();
        assert_eq!(codec.decode(&grid).unwrap(), codec.decode(&grid).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny_config();
        c.downsample_ratio = 3;
        assert!(MotionCodec::new(c, 0, DType::F32).is_err());
        let mut c = tiny_config();
        c.codebook_size = 1;
        assert!(MotionCodec::new(c, 0, DType::F32).is_err());
        let mut c = tiny_config();
        c.num_residual_layers = 0;
        assert!(MotionCodec::new(c, 0, DType::F32).is_err());
    }

    #[test]
    fn ema_unit_momentum_training_leaves_codebooks() {
        let mut cfg = tiny_config();
        cfg.ema_momentum = 1.0;
        let codec = MotionCodec::new(cfg, 0, DType::F32).unwrap();
        let mut trainer = CodecTrainer::new(codec, LrSchedule::Constant { lr: 1e-3 }, AdamConfig::default(), 0);
        let batch = vec![wave(16, 2, 0.0), wave(16, 2, 1.0)];
        trainer.train_step(&batch).unwrap();
        let before = trainer.codec.codebooks().to_vec();
        trainer.train_step(&batch).unwrap();
        assert_eq!(trainer.codec.codebooks(), before.as_slice());
    }

    #[test]
    fn ema_mass_is_conserved_during_training() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        let mut trainer = CodecTrainer::new(codec, LrSchedule::Constant { lr: 1e-3 }, AdamConfig::default(), 0);
        let batch = vec![wave(16, 2, 0.0), wave(16, 2, 1.0), wave(16, 2, 2.0)];
        trainer.train_step(&batch).unwrap();
        let before: Vec<f32> = trainer.codec.codebooks().iter().map(|c| c.ema_cluster_size.iter().sum()).collect();
        trainer.train_step(&batch).unwrap();
        let rows = 3 * 4;
        for (l, cb) in trainer.codec.codebooks().iter().enumerate() {
            let now: f32 = cb.ema_cluster_size.iter().sum();
            let expected = 0.99 * before[l] + 0.01 * rows as f32;
            assert!((now - expected).abs() < 1e-4, "layer {l}: {now} vs {expected}");
        }
    }

    #[test]
    fn loss_decreases_on_overfit_set() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        let mut trainer = CodecTrainer::new(codec, LrSchedule::Constant { lr: 3e-3 }, AdamConfig::default(), 0);
        let batch: Vec<_> = (0..4).map(|i| wave(16, 2, i as f64)).collect();
        let first = trainer.train_step(&batch).unwrap();
        let mut last = first.clone();
        for _ in 0..199 {
            last = trainer.train_step(&batch).unwrap();
        }
        assert!(last.recon_loss < first.recon_loss * 0.5, "{} vs {}", last.recon_loss, first.recon_loss);
        assert!(last.utilization.iter().all(|u| (0.0..=1.0).contains(u)));
    }

    #[test]
    fn checkpoint_round_trip_preserves_decoding() {
        let codec = MotionCodec::new(tiny_config(), 0, DType::F32).unwrap();
        let mut trainer = CodecTrainer::new(codec, LrSchedule::Constant { lr: 1e-3 }, AdamConfig::default(), 4);
        let batch = vec![wave(16, 2, 0.0), wave(16, 2, 1.0)];
        for _ in 0..3 {
            trainer.train_step(&batch).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        trainer.save(dir.path()).unwrap();
        let (loaded, step, _) = MotionCodec::load(dir.path()).unwrap();
        assert_eq!(step, 3);
        let x = wave(16, 2, 0.3);
        assert_eq!(loaded.tokenize(&x).unwrap(), trainer.codec.tokenize(&x).unwrap());
        assert_eq!(loaded.reconstruct(&x).unwrap(), trainer.codec.reconstruct(&x).unwrap());
    }

    #[test]
    fn recon_gradients_match_finite_differences() {
        let codec = MotionCodec::new(tiny_config(), 4, DType::F64).unwrap();
        let batch = [wave(16, 2, 0.0), wave(16, 2, 1.3)];
        let refs: Vec<&PoseSequence> = batch.iter().collect();
        let report = crate::nn::gradient_check(
            codec.params(),
            || Ok(codec.losses(&refs, QuantMode::Bypass)?.recon),
            60,
            1e-5,
            1e-7,
            8,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
