//! Residual vector quantization with EMA codebook statistics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `(rows, dim)` latent vectors; one row per latent timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Latents {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "latents ({rows}, {dim}) need {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean_sq_norm(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        self.data.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / self.rows as f64
    }
}

/// One residual stage: entries plus the EMA statistics that drive them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub size: usize,
    pub dim: usize,
    /// Row-major `(size, dim)`.
    pub entries: Vec<f32>,
    pub ema_cluster_size: Vec<f32>,
    /// Row-major `(size, dim)`.
    pub ema_embed_sum: Vec<f32>,
}

impl Codebook {
    /// Codebook whose EMA state is consistent with `entries` (unit counts).
    pub fn from_entries(size: usize, dim: usize, entries: Vec<f32>) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("codebook must have at least one entry".into()));
        }
        if entries.len() != size * dim {
            return Err(Error::ShapeMismatch(format!(
                "codebook ({size}, {dim}) needs {} values, got {}",
                size * dim,
                entries.len()
            )));
        }
        Ok(Self {
            size,
            dim,
            ema_embed_sum: entries.clone(),
            entries,
            ema_cluster_size: vec![1.0; size],
        })
    }

    pub fn entry(&self, k: usize) -> &[f32] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the nearest entry (squared Euclidean, lowest index on ties) and its distance.
    pub fn nearest(&self, v: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for k in 0..self.size {
            let d: f32 = self
                .entry(k)
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// EMA update from one batch of (residual row, assignment) pairs.
    ///
    /// `cluster_size ← m·cluster_size + (1−m)·counts`, `embed_sum ← m·embed_sum + (1−m)·sums`,
    /// and live entries become `embed_sum / cluster_size`. Entries whose cluster
    /// size is below `dead_threshold` are re-seeded from a random row of the batch;
    /// their cluster size is left untouched so the EMA mass is conserved.
    pub fn ema_update(
        &mut self,
        residuals: &Latents,
        assignments: &[u32],
        momentum: f32,
        dead_threshold: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        if residuals.dim != self.dim || residuals.rows != assignments.len() {
            return Err(Error::ShapeMismatch("EMA batch does not match codebook".into()));
        }
        let mut counts = vec![0f32; self.size];
        let mut sums = vec![0f32; self.size * self.dim];
        for (i, &a) in assignments.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1.0;
            for (s, v) in sums[a * self.dim..(a + 1) * self.dim]
                .iter_mut()
                .zip(residuals.row(i))
            {
                *s += v;
            }
        }
        let keep = momentum;
        let take = 1.0 - momentum;
        for (cs, c) in self.ema_cluster_size.iter_mut().zip(&counts) {
            *cs = keep * *cs + take * c;
        }
        for (es, s) in self.ema_embed_sum.iter_mut().zip(&sums) {
            *es = keep * *es + take * s;
        }
        let mut restarted = 0;
        for k in 0..self.size {
            let cs = self.ema_cluster_size[k];
            let range = k * self.dim..(k + 1) * self.dim;
            if cs >= dead_threshold {
                for (e, s) in self.entries[range.clone()].iter_mut().zip(&self.ema_embed_sum[range]) {
                    *e = s / cs;
                }
            } else if residuals.rows > 0 {
                let pick = rng.gen_range(0..residuals.rows);
                let row = residuals.row(pick).to_vec();
                for ((e, s), v) in self.entries[range.clone()]
                    .iter_mut()
                    .zip(self.ema_embed_sum[range].iter_mut())
                    .zip(&row)
                {
                    *e = *v;
                    *s = v * cs;
                }
                restarted += 1;
            }
        }
        Ok(restarted)
    }
}

/// Result of quantizing one latent batch through every residual stage.
#[derive(Debug, Clone)]
pub struct Quantized {
    /// Row-major `(rows, layers)` codebook indices.
    pub indices: Vec<u32>,
    pub layers: usize,
    /// Σ over stages of the selected entries, row-major `(rows, dim)`.
    pub quantized: Latents,
    /// `β · mean((z − Σq)²)` over all latent elements.
    pub commit_loss: f64,
    /// Input residual of each stage: `r_ℓ = z − Σ_{k<ℓ} q_k`.
    pub residuals: Vec<Latents>,
    /// Mean squared residual norm after each stage, `‖z − Σ_{k≤ℓ} q_k‖²`.
    pub residual_energy: Vec<f64>,
}

impl Quantized {
    pub fn layer_indices(&self, layer: usize) -> Vec<u32> {
        self.indices
            .iter()
            .skip(layer)
            .step_by(self.layers)
            .copied()
            .collect()
    }
}

/// Stage ℓ quantizes the residual left by stages `< ℓ` by nearest neighbour.
pub fn quantize_residual(z: &Latents, codebooks: &[Codebook], beta: f64) -> Result<Quantized> {
    if codebooks.is_empty() {
        return Err(Error::Config("no codebooks".into()));
    }
    for cb in codebooks {
        if cb.size == 0 {
            return Err(Error::Config("empty codebook".into()));
        }
        if cb.dim != z.dim {
            return Err(Error::ShapeMismatch(format!(
                "codebook dim {} vs latent dim {}",
                cb.dim, z.dim
            )));
        }
    }
    let layers = codebooks.len();
    let mut indices = vec![0u32; z.rows * layers];
    let mut residual = z.clone();
    let mut quantized = Latents::new(z.rows, z.dim, vec![0.0; z.data.len()])?;
    let mut residuals = Vec::with_capacity(layers);
    let mut residual_energy = Vec::with_capacity(layers);
    for (l, cb) in codebooks.iter().enumerate() {
        residuals.push(residual.clone());
        for i in 0..z.rows {
            let (k, _) = cb.nearest(residual.row(i));
            indices[i * layers + l] = k as u32;
            let entry = cb.entry(k);
            let off = i * z.dim;
            for d in 0..z.dim {
                quantized.data[off + d] += entry[d];
                residual.data[off + d] -= entry[d];
            }
        }
        residual_energy.push(residual.mean_sq_norm());
    }
    let n = z.data.len().max(1) as f64;
    let mse = residual.data.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / n;
    Ok(Quantized {
        indices,
        layers,
        quantized,
        commit_loss: beta * mse,
        residuals,
        residual_energy,
    })
}
