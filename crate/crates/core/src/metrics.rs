//! Motion evaluation: Fréchet Gesture Distance over windowed 6D features,
//! feature-space diversity, angle error, and a pluggable judge.
//!
//! Features are raw flattened 6D windows, so absolute values are only
//! comparable between runs of this crate with the same feature settings.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotgeom::{pose_angle_error, PoseSequence};

/// Eigenvalues above `-PSD_TOLERANCE · max(1, |λ|max)` are clipped to zero.
const PSD_TOLERANCE: f64 = 1e-8;
/// Negative FGD values down to this are treated as round-off.
const FGD_ROUNDOFF: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub window: usize,
    pub stride: usize,
    /// Sets up to this size use every pair for diversity.
    pub exhaustive_limit: usize,
    /// Pairs drawn for diversity on larger sets.
    pub diversity_pairs: usize,
    /// Z-normalize features by reference statistics before fitting.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            window: 30,
            stride: 15,
            exhaustive_limit: 500,
            diversity_pairs: 1000,
            normalize: false,
            seed: 0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("metric window and stride must be ≥ 1".into()));
        }
        if self.diversity_pairs == 0 {
            return Err(Error::Config("diversity_pairs must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Row-per-window feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    /// Index of the source motion for each row.
    pub owners: Vec<usize>,
    /// Motions shorter than the window.
    pub skipped: usize,
}

/// Source of per-window features; the default flattens raw 6D poses.
pub trait FeatureExtractor {
    fn extract(&self, motions: &[PoseSequence], window: usize, stride: usize) -> Result<FeatureMatrix>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Raw6dFeatures;

impl FeatureExtractor for Raw6dFeatures {
    fn extract(&self, motions: &[PoseSequence], window: usize, stride: usize) -> Result<FeatureMatrix> {
        extract_features(motions, window, stride)
    }
}

/// Flattened `(W, J, 6)` windows taken every `stride` frames.
pub fn extract_features(motions: &[PoseSequence], window: usize, stride: usize) -> Result<FeatureMatrix> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be ≥ 1".into()));
    }
    let joints = motions.first().map(|m| m.joints()).unwrap_or(0);
    let dim = window * joints * 6;
    let mut out = FeatureMatrix {
        dim,
        rows: Vec::new(),
        owners: Vec::new(),
        skipped: 0,
    };
    for (i, m) in motions.iter().enumerate() {
        if m.joints() != joints {
            return Err(Error::ShapeMismatch(format!(
                "motion {i} has {} joints, expected {joints}",
                m.joints()
            )));
        }
        if m.frames() < window {
            out.skipped += 1;
            continue;
        }
        let w = m.frame_width();
        let mut start = 0;
        while start + window <= m.frames() {
            let row = m.data()[start * w..(start + window) * w].iter().map(|&v| v as f64).collect();
            out.rows.push(row);
            out.owners.push(i);
            start += stride;
        }
    }
    if out.skipped > 0 {
        log::warn!("{} motion(s) shorter than the {window}-frame window were skipped", out.skipped);
    }
    Ok(out)
}

/// Per-dimension affine map fitted on reference features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let stats = fit_gaussian(rows)?;
        let scale = (0..stats.dim())
            .map(|i| {
                let s = stats.covariance[(i, i)].max(0.0).sqrt();
                if s > 1e-6 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean: stats.mean.iter().copied().collect(),
            scale,
        })
    }

    pub fn apply(&self, rows: &mut [Vec<f64>]) {
        for row in rows {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::ShapeMismatch(format!(
                "covariance {:?} for a {d}-dimensional mean",
                covariance.shape()
            )));
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::Numerical(format!("covariance asymmetric by {asym:e}")));
        }
        Ok(Self { mean, covariance, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Unbiased mean and covariance of the rows.
pub fn fit_gaussian(rows: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 feature rows, got {n}")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("feature rows differ in length".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianStats::new(mean, cov, n)
}

/// Eigen-decomposition of a symmetric PSD matrix with small negative
/// eigenvalues clipped.
fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOLERANCE * scale {
                return Err(Error::Numerical(format!("{what} is not positive semidefinite (eigenvalue {v:e})")));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½)`, with the trace of the square
/// root taken from the eigenvalues of the symmetric `Σa^½ Σb Σa^½`.
pub fn fgd(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("FGD between {}-d and {}-d stats", a.dim(), b.dim())));
    }
    let ea = psd_eigen(&a.covariance, "covariance a")?;
    let root_a = &ea.eigenvectors * DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt)) * ea.eigenvectors.transpose();
    let inner = &root_a * &b.covariance * &root_a;
    let ei = psd_eigen(&inner, "Σa^½ Σb Σa^½")?;
    let tr_root: f64 = ei.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = &a.mean - &b.mean;
    let value = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_root;
    if value < 0.0 {
        if value < -FGD_ROUNDOFF {
            return Err(Error::Numerical(format!("FGD evaluated to {value:e}")));
        }
        return Ok(0.0);
    }
    Ok(value)
}

/// Index pairs used for diversity; deterministic per seed.
pub fn diversity_pairs(n: usize, pairs: usize, exhaustive_limit: usize, seed: u64) -> Vec<(usize, usize)> {
    if n <= exhaustive_limit {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let picked = rand::seq::index::sample(&mut rng, n, 2);
            (picked.index(0), picked.index(1))
        })
        .collect()
}

/// Mean Euclidean distance between feature vectors over the given pairs.
pub fn feature_diversity(features: &[Vec<f64>], pairs: &[(usize, usize)]) -> Result<f64> {
    if features.len() < 2 || pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "diversity needs at least 2 items, got {}",
            features.len()
        )));
    }
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// One feature vector per motion: the mean of its window rows.
pub fn motion_features(matrix: &FeatureMatrix, motions: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; matrix.dim]; motions];
    let mut counts = vec![0usize; motions];
    for (row, &owner) in matrix.rows.iter().zip(&matrix.owners) {
        for (s, v) in sums[owner].iter_mut().zip(row) {
            *s += v;
        }
        counts[owner] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect()
}

/// Diversity of a motion set in windowed-feature space.
pub fn diversity(motions: &[PoseSequence], cfg: &MetricsConfig, seed: u64) -> Result<f64> {
    let matrix = extract_features(motions, cfg.window, cfg.stride)?;
    let feats = motion_features(&matrix, motions.len());
    let pairs = diversity_pairs(feats.len(), cfg.diversity_pairs, cfg.exhaustive_limit, seed);
    feature_diversity(&feats, &pairs)
}

/// Mean geodesic joint error; the same computation as the rotation module.
pub fn angle_error(pred: &PoseSequence, reference: &PoseSequence) -> Result<f64> {
    pose_angle_error(pred, reference)
}

/// Mean over pairs; each prediction is cropped or padded to its reference length.
pub fn paired_angle_error(preds: &[PoseSequence], references: &[PoseSequence]) -> Result<f64> {
    if preds.len() != references.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} references",
            preds.len(),
            references.len()
        )));
    }
    let mut total = 0.0;
    for (p, r) in preds.iter().zip(references) {
        total += angle_error(&p.fit_length(r.frames())?, r)?;
    }
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub relevance: f64,
    pub naturalness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeInput {
    pub question: String,
    pub answer: String,
}

/// Scores dialogue responses on 0–10 scales.
pub trait Judge {
    fn score(&self, input: &JudgeInput) -> Result<JudgeScores>;
}

/// Deterministic lexical proxy: relevance is the word-set Jaccard overlap,
/// naturalness penalizes repetition and very short answers.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubJudge;

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Judge for StubJudge {
    fn score(&self, input: &JudgeInput) -> Result<JudgeScores> {
        let q: HashSet<String> = words(&input.question).into_iter().collect();
        let a_words = words(&input.answer);
        if a_words.is_empty() {
            return Ok(JudgeScores {
                relevance: 0.0,
                naturalness: 0.0,
            });
        }
        let a: HashSet<String> = a_words.iter().cloned().collect();
        let union = q.union(&a).count();
        let relevance = 10.0 * q.intersection(&a).count() as f64 / union as f64;
        let distinct = a.len() as f64 / a_words.len() as f64;
        let length = (a_words.len() as f64 / 3.0).min(1.0);
        Ok(JudgeScores {
            relevance,
            naturalness: 10.0 * distinct * length,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub generated: usize,
    pub reference: usize,
    pub generated_windows: usize,
    pub reference_windows: usize,
    pub skipped_generated: usize,
    pub skipped_reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fgd: f64,
    pub diversity: f64,
    /// Present when generated and reference motions are paired.
    pub angle_error: Option<f64>,
    pub judge: Option<JudgeScores>,
    pub counts: MetricCounts,
    pub config: MetricsConfig,
}

/// FGD and diversity of `generated` against `reference`, plus angle error
/// when `paired` is set (equal counts, matched by index).
pub fn evaluate_motions(
    generated: &[PoseSequence],
    reference: &[PoseSequence],
    paired: bool,
    cfg: &MetricsConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<MetricReport> {
    cfg.validate()?;
    let mut gen = extractor.extract(generated, cfg.window, cfg.stride)?;
    let mut refs = extractor.extract(reference, cfg.window, cfg.stride)?;
    if gen.dim != refs.dim {
        return Err(Error::ShapeMismatch(format!(
            "generated features are {}-d, reference {}-d",
            gen.dim, refs.dim
        )));
    }
    if cfg.normalize {
        let norm = FeatureNormalizer::fit(&refs.rows)?;
        norm.apply(&mut refs.rows);
        norm.apply(&mut gen.rows);
    }
    let value = fgd(&fit_gaussian(&gen.rows)?, &fit_gaussian(&refs.rows)?)?;
    let feats = motion_features(&gen, generated.len());
    let pairs = diversity_pairs(feats.len(), cfg.diversity_pairs, cfg.exhaustive_limit, cfg.seed);
    let div = feature_diversity(&feats, &pairs)?;
    let angle = if paired {
        Some(paired_angle_error(generated, reference)?)
    } else {
        None
    };
    Ok(MetricReport {
        fgd: value,
        diversity: div,
        angle_error: angle,
        judge: None,
        counts: MetricCounts {
            generated: generated.len(),
            reference: reference.len(),
            generated_windows: gen.rows.len(),
            reference_windows: refs.rows.len(),
            skipped_generated: gen.skipped,
            skipped_reference: refs.skipped,
        },
        config: cfg.clone(),
    })
}

/// Mean judge scores; `None` when the adapter fails, so callers can drop
/// the columns and continue.
pub fn judge_all(judge: &dyn Judge, inputs: &[JudgeInput]) -> Option<JudgeScores> {
    if inputs.is_empty() {
        return None;
    }
    let mut sum = JudgeScores {
        relevance: 0.0,
        naturalness: 0.0,
    };
    for input in inputs {
        match judge.score(input) {
            Ok(s) => {
                sum.relevance += s.relevance;
                sum.naturalness += s.naturalness;
            }
            Err(e) => {
                log::warn!("judge skipped: {e}");
                return None;
            }
        }
    }
    let n = inputs.len() as f64;
    Some(JudgeScores {
        relevance: sum.relevance / n,
        naturalness: sum.naturalness / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_stats(d: usize, rng: &mut ChaCha8Rng) -> GaussianStats {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let cov = (&cov + cov.transpose()) * 0.5;
        let mean = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        GaussianStats::new(mean, cov, 100).unwrap()
    }

    /// Trace of `(Σa Σb)^½` from the eigenvalues of the non-symmetric product.
    fn oracle_fgd(a: &GaussianStats, b: &GaussianStats) -> f64 {
        let prod = &a.covariance * &b.covariance;
        let tr_root: f64 = prod.complex_eigenvalues().iter().map(|z| z.sqrt().re).sum();
        (&a.mean - &b.mean).norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_root
    }

    fn seq(frames: usize, joints: usize, f: impl Fn(usize) -> f32) -> PoseSequence {
        let data = (0..frames * joints * 6).map(f).collect();
        PoseSequence::new(frames, joints, 20.0, data).unwrap()
    }

    #[test]
    fn window_counts() {
        let m = seq(8, 1, |i| i as f32);
        assert_eq!(extract_features(&[m.clone()], 4, 4).unwrap().rows.len(), 2);
        assert_eq!(extract_features(&[m], 4, 2).unwrap().rows.len(), 3);
    }

    #[test]
    fn feature_row_matches_index_oracle() {
        let m = seq(10, 2, |i| (i as f32).sin());
        let f = extract_features(&[m.clone()], 3, 2).unwrap();
        assert_eq!(f.dim, 3 * 2 * 6);
        let row = &f.rows[2];
        let mut k = 0;
        for t in 4..7 {
            for j in 0..2 {
                let r = m.joint(t, j).0;
                for c in 0..6 {
                    assert_eq!(row[k], r[c]);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn short_sequences_are_skipped() {
        let f = extract_features(&[seq(3, 1, |_| 0.0), seq(8, 1, |_| 0.0)], 4, 4).unwrap();
        assert_eq!(f.skipped, 1);
        assert_eq!(f.rows.len(), 2);
    }

    #[test]
    fn gaussian_fit_by_hand() {
        let s = fit_gaussian(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[3.0, 4.0]);
        // Deviations (-2,-2), (0,2), (2,0): Σ = [[8,4],[4,8]] / 2.
        assert_eq!(s.covariance, DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]));
        let z = fit_gaussian(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(z.covariance.abs().max(), 0.0);
        assert!(matches!(fit_gaussian(&[vec![1.0]]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sample_mean_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d) = (2000, 4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let s = fit_gaussian(&rows).unwrap();
        let bound = 5.0 * d as f64 / (n as f64).sqrt();
        assert!(s.mean.iter().all(|m| m.abs() < bound));
    }

    #[test]
    fn one_dimensional_shift() {
        let a = GaussianStats::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1), 2).unwrap();
        let b = GaussianStats::new(DVector::from_element(1, 3.0), DMatrix::identity(1, 1), 2).unwrap();
        assert!((fgd(&a, &b).unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn identity_symmetry_nonnegativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let d = rng.gen_range(1..6);
            let a = random_stats(d, &mut rng);
            let b = random_stats(d, &mut rng);
            assert!(fgd(&a, &a).unwrap() <= 1e-6);
            let ab = fgd(&a, &b).unwrap();
            let ba = fgd(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        }
    }

    #[test]
    fn matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_stats(4, &mut rng);
            let b = random_stats(4, &mut rng);
            let got = fgd(&a, &b).unwrap();
            assert!((got - oracle_fgd(&a, &b)).abs() < 1e-6, "{got}");
        }
    }

    #[test]
    fn mean_translation_adds_squared_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_stats(3, &mut rng);
        let b = GaussianStats::new(a.mean.clone(), a.covariance.clone(), 10).unwrap();
        let t = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let shifted = GaussianStats::new(&b.mean + &t, b.covariance.clone(), 10).unwrap();
        let base = fgd(&a, &b).unwrap();
        assert!((fgd(&a, &shifted).unwrap() - base - t.norm_squared()).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_stats(2, &mut rng);
        let b = random_stats(3, &mut rng);
        assert!(matches!(fgd(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn diversity_cases() {
        let cfg = MetricsConfig {
            window: 2,
            stride: 2,
            ..Default::default()
        };
        let same = vec![seq(4, 1, |i| i as f32); 5];
        assert_eq!(diversity(&same, &cfg, 0).unwrap(), 0.0);

        let two = [vec![0.0, 0.0], vec![3.0, 4.0]];
        let pairs = diversity_pairs(2, 10, 0, 7);
        assert_eq!(pairs.len(), 10);
        assert!((feature_diversity(&two, &pairs).unwrap() - 5.0).abs() < 1e-12);

        assert!(matches!(diversity(&same[..1], &cfg, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sampled_diversity_tracks_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let exhaustive = feature_diversity(&feats, &diversity_pairs(20, 0, 500, 0)).unwrap();
        let sampled = feature_diversity(&feats, &diversity_pairs(20, 20_000, 0, 0)).unwrap();
        assert!((exhaustive - sampled).abs() < 0.02 * exhaustive);
    }

    #[test]
    fn angle_error_delegates() {
        let a = seq(3, 2, |i| ((i % 6) as f32 + 1.0).recip());
        let b = PoseSequence::rest(3, 2, 20.0).unwrap();
        assert_eq!(angle_error(&a, &b).unwrap(), pose_angle_error(&a, &b).unwrap());
    }

    #[test]
    fn stub_judge() {
        let j = StubJudge;
        let same = j
            .score(&JudgeInput {
                question: "wave hello now".into(),
                answer: "wave hello now".into(),
            })
            .unwrap();
        assert_eq!(same.relevance, 10.0);
        let empty = j
            .score(&JudgeInput {
                question: "wave".into(),
                answer: String::new(),
            })
            .unwrap();
        assert_eq!(empty.relevance, 0.0);
        let q = "alpha beta gamma delta";
        let r: Vec<f64> = ["alpha zeta eta", "alpha beta eta", "alpha beta gamma"]
            .iter()
            .map(|a| {
                j.score(&JudgeInput {
                    question: q.into(),
                    answer: (*a).into(),
                })
                .unwrap()
                .relevance
            })
            .collect();
        assert!(r[0] < r[1] && r[1] < r[2]);
    }

    #[test]
    fn failing_judge_drops_columns() {
        struct Down;
        impl Judge for Down {
            fn score(&self, _: &JudgeInput) -> Result<JudgeScores> {
                Err(Error::JudgeUnavailable("offline".into()))
            }
        }
        let inputs = [JudgeInput {
            question: "a".into(),
            answer: "b".into(),
        }];
        assert!(judge_all(&Down, &inputs).is_none());
        assert!(judge_all(&StubJudge, &inputs).is_some());
    }
}
