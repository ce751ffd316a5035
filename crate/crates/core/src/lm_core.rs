//! Toy decoder-only transformer over the unified vocabulary: learned token
//! and position embeddings, pre-norm blocks with causal multi-head attention
//! and a GELU MLP, output head tied to the token embedding.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, CheckpointWriter, NamedArray};
use crate::error::{Error, Result};
use crate::mixture::TrainingExample;
use crate::nn::{causal_softmax, scalar, Adam, AdamConfig, LrSchedule, ParamStore};

pub const CHECKPOINT_KIND: &str = "lm";
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            context_length: 512,
            layers: 3,
            heads: 4,
            model_dim: 96,
            ff_dim: 384,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return Err(Error::Config("LM sizes must be ≥ 1".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.context_length < 16 {
            return Err(Error::Config("context_length must be ≥ 16".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count of the architecture.
    pub fn param_count(&self) -> usize {
        let (v, c, d, f) = (self.vocab_size, self.context_length, self.model_dim, self.ff_dim);
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        v * d + c * d + self.layers * block + 2 * d
    }
}

#[derive(Debug, Clone)]
pub struct LmModel {
    config: LmConfig,
    params: ParamStore,
}

fn layer_norm(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
    Ok(xn.broadcast_mul(w)?.broadcast_add(b)?)
}

fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// `x (N, in) · w (in, out) + b`.
fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(w)?.broadcast_add(b)?)
}

impl LmModel {
    pub fn new(config: LmConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new(dtype);
        let (d, f) = (config.model_dim, config.ff_dim);
        let std = 0.02;
        // Residual projections are scaled down with depth.
        let proj_std = std / (2.0 * config.layers as f64).sqrt();
        p.normal(&mut rng, "tok_emb", &[config.vocab_size, d], std)?;
        p.normal(&mut rng, "pos_emb", &[config.context_length, d], std)?;
        for i in 0..config.layers {
            let n = |s: &str| format!("blocks.{i}.{s}");
            p.constant(&n("ln1.weight"), &[d], 1.0)?;
            p.constant(&n("ln1.bias"), &[d], 0.0)?;
            p.normal(&mut rng, &n("attn.qkv.weight"), &[d, 3 * d], std)?;
            p.constant(&n("attn.qkv.bias"), &[3 * d], 0.0)?;
            p.normal(&mut rng, &n("attn.proj.weight"), &[d, d], proj_std)?;
            p.constant(&n("attn.proj.bias"), &[d], 0.0)?;
            p.constant(&n("ln2.weight"), &[d], 1.0)?;
            p.constant(&n("ln2.bias"), &[d], 0.0)?;
            p.normal(&mut rng, &n("mlp.fc.weight"), &[d, f], std)?;
            p.constant(&n("mlp.fc.bias"), &[f], 0.0)?;
            p.normal(&mut rng, &n("mlp.proj.weight"), &[f, d], proj_std)?;
            p.constant(&n("mlp.proj.bias"), &[d], 0.0)?;
        }
        p.constant("ln_f.weight", &[d], 1.0)?;
        p.constant("ln_f.bias", &[d], 0.0)?;
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    fn p(&self, name: &str) -> Result<Tensor> {
        Ok(self.params.get(name)?.as_tensor().clone())
    }

    fn dropout(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f32> = (0..x.elem_count())
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep as f32 })
                    .collect();
                let mask = Tensor::from_vec(mask, x.shape(), &Device::Cpu)?.to_dtype(x.dtype())?;
                Ok((x * mask)?)
            }
            _ => Ok(x.clone()),
        }
    }

    /// Logits `(B, T, V)` for token ids `(B, T)`. Dropout is applied only
    /// when an rng is supplied.
    pub fn forward(&self, ids: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        if t > self.config.context_length {
            return Err(Error::ContextOverflow {
                len: t,
                context: self.config.context_length,
            });
        }
        let d = self.config.model_dim;
        let h = self.config.heads;
        let hd = d / h;
        let tok = self.p("tok_emb")?;
        let x = tok.index_select(&ids.flatten_all()?, 0)?.reshape((b, t, d))?;
        let pos = self.p("pos_emb")?.narrow(0, 0, t)?;
        let mut x = x.broadcast_add(&pos)?;
        let scale = 1.0 / (hd as f64).sqrt();
        for i in 0..self.config.layers {
            let n = |s: &str| self.p(&format!("blocks.{i}.{s}"));
            let a = layer_norm(&x, &n("ln1.weight")?, &n("ln1.bias")?)?.reshape((b * t, d))?;
            let qkv = linear(&a, &n("attn.qkv.weight")?, &n("attn.qkv.bias")?)?.reshape((b, t, 3, h, hd))?;
            let head = |k: usize| -> Result<Tensor> {
                Ok(qkv.narrow(2, k, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?)
            };
            let (q, k, v) = (head(0)?, head(1)?, head(2)?);
            let scores = q.matmul(&k.t()?.contiguous()?)?;
            let att = causal_softmax(&scores, scale)?.matmul(&v)?;
            let att = att.transpose(1, 2)?.contiguous()?.reshape((b * t, d))?;
            let att = linear(&att, &n("attn.proj.weight")?, &n("attn.proj.bias")?)?;
            let att = self.dropout(&att, rng.as_deref_mut())?;
            x = (x + att.reshape((b, t, d))?)?;
            let m = layer_norm(&x, &n("ln2.weight")?, &n("ln2.bias")?)?.reshape((b * t, d))?;
            let m = linear(&m, &n("mlp.fc.weight")?, &n("mlp.fc.bias")?)?.gelu_erf()?;
            let m = linear(&m, &n("mlp.proj.weight")?, &n("mlp.proj.bias")?)?;
            let m = self.dropout(&m, rng.as_deref_mut())?;
            x = (x + m.reshape((b, t, d))?)?;
        }
        let x = layer_norm(&x, &self.p("ln_f.weight")?, &self.p("ln_f.bias")?)?;
        let logits = x.reshape((b * t, d))?.matmul(&tok.t()?)?;
        Ok(logits.reshape((b, t, self.config.vocab_size))?)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::InvalidId {
                id: bad,
                vocab_size: self.config.vocab_size as u32,
            });
        }
        Ok(())
    }

    /// Per-position logits for one sequence.
    pub fn forward_logits(&self, ids: &[u32]) -> Result<Vec<Vec<f32>>> {
        if ids.is_empty() {
            return Ok(vec![]);
        }
        self.check_ids(ids)?;
        let t = Tensor::from_vec(ids.to_vec(), (1, ids.len()), &Device::Cpu)?;
        Ok(self.forward(&t, None)?.squeeze(0)?.to_dtype(DType::F32)?.to_vec2()?)
    }

    /// Logits for the token following `ids`.
    pub fn next_logits(&self, ids: &[u32]) -> Result<Vec<f32>> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("next_logits needs at least one token".into()));
        }
        self.check_ids(ids)?;
        let n = ids.len();
        let t = Tensor::from_vec(ids.to_vec(), (1, n), &Device::Cpu)?;
        let logits = self.forward(&t, None)?.narrow(1, n - 1, 1)?;
        Ok(logits.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
    }

    /// Grows the vocabulary. Existing rows are kept bit-exactly; new rows are
    /// drawn per dimension from the mean and spread of the old embeddings.
    pub fn resize_vocab(&mut self, new_size: usize) -> Result<()> {
        let old = self.config.vocab_size;
        if new_size < old {
            return Err(Error::Unsupported(format!("shrinking vocabulary from {old} to {new_size}")));
        }
        if new_size == old {
            return Ok(());
        }
        let emb = self.p("tok_emb")?;
        let rows: Vec<Vec<f64>> = emb.to_dtype(DType::F64)?.to_vec2()?;
        let d = self.config.model_dim;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / old as f64).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / old.max(2).saturating_sub(1) as f64;
                var.sqrt()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (new_size as u64).rotate_left(32));
        let mut extra = Vec::with_capacity((new_size - old) * d);
        for _ in old..new_size {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                extra.push(mean[j] + std[j] * z);
            }
        }
        let extra = Tensor::from_vec(extra, (new_size - old, d), &Device::Cpu)?.to_dtype(self.dtype())?;
        let grown = Tensor::cat(&[&emb, &extra], 0)?;
        self.params.replace("tok_emb", &grown)?;
        self.config.vocab_size = new_size;
        Ok(())
    }

    pub fn to_arrays(&self) -> Result<BTreeMap<String, NamedArray>> {
        self.params.to_arrays("param.")
    }

    pub fn save(&self, dir: &Path, step: u64, optimizer: Option<&Adam>, extra: serde_json::Value) -> Result<()> {
        let mut arrays = self.to_arrays()?;
        if let Some(opt) = optimizer {
            arrays.extend(opt.to_arrays()?);
        }
        let mut extra = extra;
        if let (Some(opt), Some(obj)) = (optimizer, extra.as_object_mut()) {
            obj.insert("optimizer_step".into(), opt.step.into());
        }
        CheckpointWriter {
            kind: CHECKPOINT_KIND,
            step,
            seed: self.config.seed,
            config: serde_json::to_value(&self.config)?,
            extra,
        }
        .write(dir, &arrays)
    }

    pub fn load(dir: &Path) -> Result<(Self, u64, BTreeMap<String, NamedArray>, serde_json::Value)> {
        let (meta, arrays) = read_checkpoint(dir, CHECKPOINT_KIND)?;
        let config: LmConfig = serde_json::from_value(meta.config.clone()).map_err(|e| Error::CheckpointFormat {
            path: dir.to_path_buf(),
            detail: format!("bad config: {e}"),
        })?;
        let mut model = Self::new(config, DType::F32)?;
        model.params.load_arrays("param.", &arrays).map_err(|e| Error::CheckpointFormat {
            path: dir.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok((model, meta.step, arrays, meta.extra))
    }
}

/// Padded batch of `[BOS] + prompt + target` sequences with next-token labels
/// and a loss mask that covers target positions only.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Tensor,
    pub mask: Tensor,
    pub target_tokens: usize,
}

pub fn make_batch(examples: &[&TrainingExample], bos: u32, pad: u32, context: usize, dtype: DType) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let seqs: Vec<(Vec<u32>, usize)> = examples
        .iter()
        .map(|ex| {
            let mut s = Vec::with_capacity(1 + ex.prompt.len() + ex.target.len());
            s.push(bos);
            s.extend_from_slice(&ex.prompt);
            s.extend_from_slice(&ex.target);
            (s, 1 + ex.prompt.len())
        })
        .collect();
    let width = seqs.iter().map(|(s, _)| s.len() - 1).max().unwrap_or(0);
    if let Some((s, _)) = seqs.iter().find(|(s, _)| s.len() - 1 > context) {
        return Err(Error::ContextOverflow {
            len: s.len() - 1,
            context,
        });
    }
    let mut inputs = Vec::with_capacity(seqs.len() * width);
    let mut labels = Vec::with_capacity(seqs.len() * width);
    let mut mask = Vec::with_capacity(seqs.len() * width);
    let mut target_tokens = 0;
    for (s, target_start) in &seqs {
        for j in 0..width {
            if j + 1 < s.len() {
                inputs.push(s[j]);
                labels.push(s[j + 1]);
                let on = j + 1 >= *target_start;
                mask.push(if on { 1.0f32 } else { 0.0 });
                target_tokens += on as usize;
            } else {
                inputs.push(pad);
                labels.push(pad);
                mask.push(0.0);
            }
        }
    }
    let n = seqs.len();
    Ok(Batch {
        inputs: Tensor::from_vec(inputs, (n, width), &Device::Cpu)?,
        labels: Tensor::from_vec(labels, (n, width), &Device::Cpu)?,
        mask: Tensor::from_vec(mask, (n, width), &Device::Cpu)?.to_dtype(dtype)?,
        target_tokens,
    })
}

/// Mean next-token cross-entropy over masked-in positions.
pub fn masked_cross_entropy(logits: &Tensor, labels: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (b, t, v) = logits.dims3()?;
    let logp = log_softmax_last(&logits.reshape((b * t, v))?)?;
    let picked = logp.gather(&labels.reshape((b * t, 1))?, 1)?.squeeze(1)?;
    let mask = mask.reshape(b * t)?;
    let count = scalar(&mask.sum_all()?)?.max(1.0);
    Ok(((picked * mask)?.sum_all()? * (-1.0 / count))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmStepReport {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub target_tokens: usize,
}

pub struct LmTrainer {
    pub model: LmModel,
    pub optimizer: Adam,
    pub schedule: LrSchedule,
    pub step: u64,
    pub bos: u32,
    pub pad: u32,
    dropout_rng: ChaCha8Rng,
}

impl LmTrainer {
    pub fn new(model: LmModel, schedule: LrSchedule, adam: AdamConfig, bos: u32, pad: u32) -> Self {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        dropout_rng.set_stream(7);
        Self {
            model,
            optimizer: Adam::new(adam),
            schedule,
            step: 0,
            bos,
            pad,
            dropout_rng,
        }
    }

    pub fn batch(&self, examples: &[&TrainingExample]) -> Result<Batch> {
        make_batch(examples, self.bos, self.pad, self.model.config.context_length, self.model.dtype())
    }

    pub fn loss(&self, examples: &[&TrainingExample]) -> Result<f64> {
        let b = self.batch(examples)?;
        let logits = self.model.forward(&b.inputs, None)?;
        scalar(&masked_cross_entropy(&logits, &b.labels, &b.mask)?)
    }

    pub fn train_step(&mut self, examples: &[&TrainingExample]) -> Result<LmStepReport> {
        let b = self.batch(examples)?;
        let lr = self.schedule.lr_at(self.step);
        let rng = if self.model.config.dropout > 0.0 {
            Some(&mut self.dropout_rng)
        } else {
            None
        };
        let logits = self.model.forward(&b.inputs, rng)?;
        let loss_t = masked_cross_entropy(&logits, &b.labels, &b.mask)?;
        let loss = scalar(&loss_t)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step: self.step,
                detail: format!("LM loss is {loss}"),
            });
        }
        let grads = loss_t.backward()?;
        self.optimizer.update(&self.model.params, &grads, lr)?;
        let report = LmStepReport {
            step: self.step,
            lr,
            loss,
            target_tokens: b.target_tokens,
        };
        self.step += 1;
        Ok(report)
    }

    /// Teacher-forced argmax accuracy over target tokens.
    pub fn target_accuracy(&self, examples: &[&TrainingExample]) -> Result<f64> {
        let mut hit = 0usize;
        let mut total = 0usize;
        for chunk in examples.chunks(16) {
            let b = self.batch(chunk)?;
            let pred = self.model.forward(&b.inputs, None)?.argmax(D::Minus1)?;
            let pred: Vec<Vec<u32>> = pred.to_vec2()?;
            let labels: Vec<Vec<u32>> = b.labels.to_vec2()?;
            let mask: Vec<Vec<f32>> = b.mask.to_dtype(DType::F32)?.to_vec2()?;
            for ((p, l), m) in pred.iter().zip(&labels).zip(&mask) {
                for j in 0..p.len() {
                    if m[j] > 0.0 {
                        total += 1;
                        hit += (p[j] == l[j]) as usize;
                    }
                }
            }
        }
        if total == 0 {
            return Err(Error::InsufficientData("no target tokens".into()));
        }
        Ok(hit as f64 / total as f64)
    }

    pub fn resize_vocab(&mut self, new_size: usize) -> Result<()> {
        self.model.resize_vocab(new_size)?;
        self.optimizer.forget("tok_emb");
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(
            dir,
            self.step,
            Some(&self.optimizer),
            serde_json::json!({
                "schedule": self.schedule,
                "bos": self.bos,
                "pad": self.pad,
            }),
        )
    }

    /// Restores model, optimizer moments, step counter and schedule.
    pub fn load(dir: &Path, adam: AdamConfig) -> Result<Self> {
        let (model, step, arrays, extra) = LmModel::load(dir)?;
        let bad = |what: &str| Error::CheckpointFormat {
            path: dir.to_path_buf(),
            detail: format!("missing {what} in trainer state"),
        };
        let schedule: LrSchedule =
            serde_json::from_value(extra.get("schedule").cloned().ok_or_else(|| bad("schedule"))?)?;
        let bos = extra.get("bos").and_then(|v| v.as_u64()).ok_or_else(|| bad("bos"))? as u32;
        let pad = extra.get("pad").and_then(|v| v.as_u64()).ok_or_else(|| bad("pad"))? as u32;
        let mut t = Self::new(model, schedule, adam, bos, pad);
        t.optimizer.load_arrays(&arrays, DType::F32)?;
        t.optimizer.step = extra.get("optimizer_step").and_then(|v| v.as_u64()).unwrap_or(step);
        t.step = step;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::TaskKind;
    use crate::token_space::SectionOrder;

    fn micro(seed: u64) -> LmConfig {
        LmConfig {
            vocab_size: 20,
            context_length: 16,
            layers: 2,
            heads: 2,
            model_dim: 16,
            ff_dim: 32,
            dropout: 0.0,
            seed,
        }
    }

    fn example(prompt: Vec<u32>, target: Vec<u32>) -> TrainingExample {
        TrainingExample {
            task: TaskKind::T2m,
            prompt,
            target,
            order: SectionOrder::TextFirst,
            sources: vec![],
        }
    }

    #[test]
    fn init_is_seeded_and_count_matches_formula() {
        let a = LmModel::new(micro(1), DType::F32).unwrap();
        let b = LmModel::new(micro(1), DType::F32).unwrap();
        let c = LmModel::new(micro(2), DType::F32).unwrap();
        assert_eq!(a.to_arrays().unwrap(), b.to_arrays().unwrap());
        assert_ne!(a.to_arrays().unwrap(), c.to_arrays().unwrap());
        // Hand count for V=20, C=16, D=16, F=32, 2 layers:
        // emb 320 + pos 256; per block 32 + 816 + 272 + 32 + 544 + 528 = 2224; final norm 32.
        assert_eq!(a.params().num_scalars(), 320 + 256 + 2 * 2224 + 32);
        assert_eq!(micro(0).param_count(), a.params().num_scalars());
    }

    #[test]
    fn invalid_configs() {
        let mut c = micro(0);
        c.heads = 3;
        assert!(matches!(LmModel::new(c, DType::F32), Err(Error::Config(_))));
        let mut c = micro(0);
        c.context_length = 8;
        assert!(LmModel::new(c, DType::F32).is_err());
    }

    #[test]
    fn causal_and_overflow() {
        let m = LmModel::new(micro(3), DType::F32).unwrap();
        let seq = [1u32, 5, 7, 2, 9];
        let full = m.forward_logits(&seq).unwrap();
        let mut longer = seq.to_vec();
        longer.push(11);
        let ext = m.forward_logits(&longer).unwrap();
        for i in 0..seq.len() {
            for (a, b) in full[i].iter().zip(&ext[i]) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
        assert!(m.forward_logits(&[4]).unwrap()[0].iter().all(|v| v.is_finite()));
        assert!(matches!(
            m.forward_logits(&[1; 17]),
            Err(Error::ContextOverflow { len: 17, context: 16 })
        ));
    }

    #[test]
    fn init_loss_near_uniform_entropy() {
        let cfg = LmConfig {
            vocab_size: 64,
            context_length: 32,
            ..micro(4)
        };
        let t = LmTrainer::new(LmModel::new(cfg, DType::F32).unwrap(), LrSchedule::Constant { lr: 0.0 }, AdamConfig::default(), 0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exs: Vec<TrainingExample> = (0..8)
            .map(|_| example((0..4).map(|_| rng.gen_range(0..64)).collect(), (0..20).map(|_| rng.gen_range(0..64)).collect()))
            .collect();
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        let loss = t.loss(&refs).unwrap();
        let ln_v = (64f64).ln();
        assert!((loss - ln_v).abs() < 0.1 * ln_v, "{loss} vs {ln_v}");
    }

    #[test]
    fn prompt_positions_are_masked() {
        let ex = example(vec![3, 4, 5], vec![6, 7]);
        let b = make_batch(&[&ex], 0, 1, 16, DType::F32).unwrap();
        let mask: Vec<Vec<f32>> = b.mask.to_vec2().unwrap();
        // Sequence [0,3,4,5,6,7]; labels [3,4,5,6,7]; only 6 and 7 count.
        assert_eq!(mask[0], vec![0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(b.target_tokens, 2);
    }

    #[test]
    fn frozen_run_leaves_parameters() {
        let m = LmModel::new(micro(6), DType::F32).unwrap();
        let before = m.to_arrays().unwrap();
        let mut t = LmTrainer::new(m, LrSchedule::Constant { lr: 0.0 }, AdamConfig::default(), 0, 1);
        let ex = example(vec![2, 3], vec![4, 5, 6]);
        for _ in 0..3 {
            t.train_step(&[&ex]).unwrap();
        }
        assert_eq!(t.model.to_arrays().unwrap(), before);
    }

    #[test]
    fn overfits_tiny_set() {
        let m = LmModel::new(micro(7), DType::F32).unwrap();
        let mut t = LmTrainer::new(m, LrSchedule::Constant { lr: 3e-3 }, AdamConfig::default(), 0, 1);
        let exs = [example(vec![2, 3], vec![4, 5, 6, 7]), example(vec![3, 2], vec![7, 6, 5, 4])];
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        for _ in 0..300 {
            t.train_step(&refs).unwrap();
        }
        assert_eq!(t.target_accuracy(&refs).unwrap(), 1.0);
    }

    #[test]
    fn resize_keeps_old_rows_and_ratios() {
        let mut m = LmModel::new(micro(8), DType::F32).unwrap();
        let prompt = [1u32, 2, 3];
        let before = m.next_logits(&prompt).unwrap();
        let old = m.params().get("tok_emb").unwrap().as_tensor().to_vec2::<f32>().unwrap();
        m.resize_vocab(20).unwrap();
        assert_eq!(m.params().get("tok_emb").unwrap().as_tensor().to_vec2::<f32>().unwrap(), old);
        m.resize_vocab(26).unwrap();
        let grown = m.params().get("tok_emb").unwrap().as_tensor().to_vec2::<f32>().unwrap();
        assert_eq!(&grown[..20], &old[..]);
        let after = m.next_logits(&prompt).unwrap();
        assert_eq!(after.len(), 26);
        // Tied head: old-id logits are unchanged, so only the softmax
        // normalizer differs between the two distributions.
        assert_eq!(&after[..20], &before[..]);
        assert!(matches!(m.resize_vocab(10), Err(Error::Unsupported(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = LmModel::new(micro(9), DType::F32).unwrap();
        let mut t = LmTrainer::new(m, LrSchedule::Constant { lr: 1e-3 }, AdamConfig::default(), 0, 1);
        let ex = example(vec![2, 3], vec![4, 5]);
        for _ in 0..5 {
            t.train_step(&[&ex]).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        let mut r = LmTrainer::load(dir.path(), AdamConfig::default()).unwrap();
        assert_eq!(r.step, 5);
        let probe = [0u32, 2, 3, 4, 5];
        assert_eq!(r.model.forward_logits(&probe).unwrap(), t.model.forward_logits(&probe).unwrap());
        // Restored optimizer continues identically.
        t.train_step(&[&ex]).unwrap();
        r.train_step(&[&ex]).unwrap();
        assert_eq!(r.model.to_arrays().unwrap(), t.model.to_arrays().unwrap());

        let file = dir.path().join("param.tok_emb.f32");
        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(LmModel::load(dir.path()), Err(Error::CheckpointFormat { .. })));
    }

    #[test]
    fn dropout_is_seeded() {
        let cfg = LmConfig { dropout: 0.2, ..micro(10) };
        let run = || {
            let mut t = LmTrainer::new(LmModel::new(cfg.clone(), DType::F32).unwrap(), LrSchedule::Constant { lr: 1e-3 }, AdamConfig::default(), 0, 1);
            let ex = example(vec![2, 3], vec![4, 5, 6]);
            (0..4).map(|_| t.train_step(&[&ex]).unwrap().loss).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = LmModel::new(micro(11), DType::F64).unwrap();
        let ex = example(vec![2, 3, 9], vec![4, 5, 6, 12, 1]);
        let b = make_batch(&[&ex], 0, 1, 16, DType::F64).unwrap();
        let report = crate::nn::gradient_check(
            model.params(),
            || masked_cross_entropy(&model.forward(&b.inputs, None)?, &b.labels, &b.mask),
            50,
            1e-5,
            1e-7,
            3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
