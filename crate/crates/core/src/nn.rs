//! Minimal trainable-parameter plumbing over candle: a named parameter store,
//! seeded initializers, Adam with checkpointable moments, and LR schedules.

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, CpuStorage, CustomOp1, CustomOp2, DType, Device, Layout, Shape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedArray;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn normal(&mut self, rng: &mut ChaCha8Rng, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        }).collect();
        self.insert(name, shape, values)
    }

    pub fn uniform(&mut self, rng: &mut ChaCha8Rng, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![value; n])
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Replaces the tensor held under `name`, returning the new variable.
    pub fn replace(&mut self, name: &str, t: &Tensor) -> Result<Var> {
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn to_arrays(&self, prefix: &str) -> Result<BTreeMap<String, NamedArray>> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.vars {
            out.insert(format!("{prefix}{name}"), tensor_to_array(var.as_tensor())?);
        }
        Ok(out)
    }

    /// Overwrites every parameter from `arrays[prefix + name]`; shapes must match.
    pub fn load_arrays(&mut self, prefix: &str, arrays: &BTreeMap<String, NamedArray>) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let arr = arrays
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks array {key}")))?;
            if arr.shape != var.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "array {key}: checkpoint shape {:?}, model shape {:?}",
                    arr.shape,
                    var.dims()
                )));
            }
            var.set(&array_to_tensor(arr)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> Result<bool> {
        for var in self.vars.values() {
            let v: Vec<f64> = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn tensor_to_array(t: &Tensor) -> Result<NamedArray> {
    Ok(NamedArray {
        shape: t.dims().to_vec(),
        data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
    })
}

pub fn array_to_tensor(a: &NamedArray) -> Result<Tensor> {
    Ok(Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &Device::Cpu)?)
}

/// Scalar tensor value as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are keyed by parameter name so
/// they can be checkpointed next to the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let mut sq = 0.0;
                for (_, var) in params.iter() {
                    if let Some(g) = grads.get(var.as_tensor()) {
                        sq += scalar(&g.sqr()?.sum_all()?)?;
                    }
                }
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Detached so the moments do not keep the backward graph alive.
            let g = g.detach();
            let g = if scale != 1.0 { g.affine(scale, 0.0)? } else { g };
            let m = match self.first.get(name) {
                Some(m) => ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?,
                None => (&g * (1.0 - c.beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                None => (g.sqr()? * (1.0 - c.beta2))?,
            };
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let delta = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let mut next = var.as_tensor().clone();
            if c.weight_decay != 0.0 {
                next = (&next * (1.0 - lr * c.weight_decay))?;
            }
            next = (next - (delta * lr)?)?;
            var.set(&next)?;
            self.first.insert(name.clone(), m);
            self.second.insert(name.clone(), v);
        }
        Ok(())
    }

    pub fn to_arrays(&self) -> Result<BTreeMap<String, NamedArray>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.first {
            out.insert(format!("adam.m.{name}"), tensor_to_array(t)?);
        }
        for (name, t) in &self.second {
            out.insert(format!("adam.v.{name}"), tensor_to_array(t)?);
        }
        Ok(out)
    }

    pub fn load_arrays(&mut self, arrays: &BTreeMap<String, NamedArray>, dtype: DType) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (key, arr) in arrays {
            if let Some(name) = key.strip_prefix("adam.m.") {
                self.first.insert(name.to_string(), array_to_tensor(arr)?.to_dtype(dtype)?);
            } else if let Some(name) = key.strip_prefix("adam.v.") {
                self.second.insert(name.to_string(), array_to_tensor(arr)?.to_dtype(dtype)?);
            }
        }
        Ok(())
    }

    /// Drops moments for a parameter whose shape changed (e.g. after a vocabulary resize).
    pub fn forget(&mut self, name: &str) {
        self.first.remove(name);
        self.second.remove(name);
    }
}

/// Learning-rate schedules used by the codec and LM trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Multiply by `gamma` at each milestone step.
    MultiStep { lr: f64, milestones: Vec<u64>, gamma: f64 },
    /// Linear warmup then cosine decay to `min_lr` at `total_steps`.
    Cosine {
        peak_lr: f64,
        min_lr: f64,
        warmup_steps: u64,
        total_steps: u64,
    },
}

impl LrSchedule {
    /// Learning rate for zero-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self {
            Self::Constant { lr } => *lr,
            Self::MultiStep { lr, milestones, gamma } => {
                let passed = milestones.iter().filter(|&&m| step >= m).count();
                lr * gamma.powi(passed as i32)
            }
            Self::Cosine {
                peak_lr,
                min_lr,
                warmup_steps,
                total_steps,
            } => {
                if step < *warmup_steps {
                    return peak_lr * (step + 1) as f64 / *warmup_steps as f64;
                }
                let span = total_steps.saturating_sub(*warmup_steps).max(1);
                let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
                min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Compares backprop gradients against central differences on `coords`
/// randomly chosen scalars. Relative error is `|a − n| / max(|a|, |n|, floor)`;
/// the floor keeps near-zero gradients from dividing round-off by zero.
pub fn gradient_check<F>(params: &ParamStore, loss: F, coords: usize, h: f64, floor: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    let grads = loss()?.backward()?;
    let entries: Vec<(&String, &Var)> = params.iter().collect();
    let total = params.num_scalars();
    if total == 0 || coords == 0 {
        return Err(Error::InvalidArgument("nothing to check".into()));
    }
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    for _ in 0..coords {
        let mut k = rng.gen_range(0..total);
        let (name, var) = entries
            .iter()
            .find(|(_, v)| {
                if k < v.elem_count() {
                    true
                } else {
                    k -= v.elem_count();
                    false
                }
            })
            .expect("index within total");
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[k],
            None => 0.0,
        };
        let shape = var.shape().clone();
        let dtype = var.dtype();
        let base: Vec<f64> = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let set_at = |delta: f64| -> Result<()> {
            let mut v = base.clone();
            v[k] += delta;
            var.set(&Tensor::from_vec(v, &shape, &Device::Cpu)?.to_dtype(dtype)?)?;
            Ok(())
        };
        set_at(h)?;
        let plus = scalar(&loss()?)?;
        set_at(-h)?;
        let minus = scalar(&loss()?)?;
        set_at(0.0)?;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        log::debug!("gradcheck {name}[{k}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}");
        max_rel = max_rel.max(rel);
        sum_rel += rel;
    }
    Ok(GradCheckReport {
        coordinates: coords,
        max_rel_error: max_rel,
        mean_rel_error: sum_rel / coords as f64,
    })
}

/// Scalar types the fused kernels run on.
trait Float: Copy + PartialOrd + std::ops::Mul<Output = Self> + std::ops::Sub<Output = Self> + std::ops::AddAssign {
    const ZERO: Self;
    const NEG_INF: Self;
    fn from_f64(v: f64) -> Self;
    fn exp(self) -> Self;
    fn div(self, rhs: Self) -> Self;
}

impl Float for f32 {
    const ZERO: Self = 0.0;
    const NEG_INF: Self = f32::NEG_INFINITY;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
}

impl Float for f64 {
    const ZERO: Self = 0.0;
    const NEG_INF: Self = f64::NEG_INFINITY;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
}

fn contiguous_slice<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("fused kernel needs a contiguous input"),
    }
}

/// Row-wise causal softmax of `scale · x` over square trailing `(T, T)` blocks:
/// row `i` covers columns `0..=i` and is zero beyond.
fn causal_softmax_rows<T: Float>(x: &[T], t: usize, scale: f64) -> Vec<T> {
    let s = T::from_f64(scale);
    let mut out = vec![T::ZERO; x.len()];
    for (r, (row, o)) in x.chunks_exact(t).zip(out.chunks_exact_mut(t)).enumerate() {
        let n = r % t + 1;
        let mut max = T::NEG_INF;
        for &v in &row[..n] {
            let v = v * s;
            if v > max {
                max = v;
            }
        }
        let mut sum = T::ZERO;
        for (o, &v) in o[..n].iter_mut().zip(&row[..n]) {
            *o = (v * s - max).exp();
            sum += *o;
        }
        for o in &mut o[..n] {
            *o = o.div(sum);
        }
    }
    out
}

/// `scale · y ⊙ (g − Σ g·y)` per row.
fn causal_softmax_grad_rows<T: Float>(y: &[T], g: &[T], t: usize, scale: f64) -> Vec<T> {
    let s = T::from_f64(scale);
    let mut out = vec![T::ZERO; y.len()];
    for (r, ((yr, gr), o)) in y.chunks_exact(t).zip(g.chunks_exact(t)).zip(out.chunks_exact_mut(t)).enumerate() {
        let n = r % t + 1;
        let mut dot = T::ZERO;
        for (&a, &b) in yr[..n].iter().zip(&gr[..n]) {
            dot += a * b;
        }
        for ((o, &a), &b) in o[..n].iter_mut().zip(&yr[..n]).zip(&gr[..n]) {
            *o = s * a * (b - dot);
        }
    }
    out
}

fn square_tail(shape: &Shape) -> candle_core::Result<usize> {
    let dims = shape.dims();
    match dims {
        [.., a, b] if a == b => Ok(*b),
        _ => candle_core::bail!("causal softmax needs square trailing dims, got {shape:?}"),
    }
}

struct CausalSoftmax {
    scale: f64,
}

struct CausalSoftmaxGrad {
    scale: f64,
}

impl CustomOp1 for CausalSoftmax {
    fn name(&self) -> &'static str {
        "causal-softmax"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let t = square_tail(layout.shape())?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(causal_softmax_rows(contiguous_slice(v, layout)?, t, self.scale)),
            CpuStorage::F64(v) => CpuStorage::F64(causal_softmax_rows(contiguous_slice(v, layout)?, t, self.scale)),
            _ => candle_core::bail!("causal softmax supports f32 and f64"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad_res.contiguous()?;
        Ok(Some(res.apply_op2_no_bwd(&g, &CausalSoftmaxGrad { scale: self.scale })?))
    }
}

impl CustomOp2 for CausalSoftmaxGrad {
    fn name(&self) -> &'static str {
        "causal-softmax-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let t = square_tail(l1.shape())?;
        let out = match (s1, s2) {
            (CpuStorage::F32(y), CpuStorage::F32(g)) => CpuStorage::F32(causal_softmax_grad_rows(
                contiguous_slice(y, l1)?,
                contiguous_slice(g, l2)?,
                t,
                self.scale,
            )),
            (CpuStorage::F64(y), CpuStorage::F64(g)) => CpuStorage::F64(causal_softmax_grad_rows(
                contiguous_slice(y, l1)?,
                contiguous_slice(g, l2)?,
                t,
                self.scale,
            )),
            _ => candle_core::bail!("causal softmax grad supports matching f32 or f64"),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Attention weights from raw scores `(…, T, T)`: softmax of `scale · x`
/// with future positions masked out, as one fused kernel.
pub fn causal_softmax(scores: &Tensor, scale: f64) -> Result<Tensor> {
    Ok(scores.contiguous()?.apply_op1(CausalSoftmax { scale })?)
}
