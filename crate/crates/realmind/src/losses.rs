//! The four training losses and their weighted combination.
//!
//! All loss math runs in double precision. Every loss has a `_grad` variant
//! returning the analytic gradient with respect to the EEG embedding entries
//! (image embeddings are fixed targets during training). The gradients are
//! validated against central finite differences in the acceptance suite.

use crate::types::{
    cosine_similarity_matrix, CoreError, EmbeddingBatch, LossBreakdown, SimilarityMatrix,
    DEFAULT_NORM_EPS,
};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which template value the geometric loss drives same-class kernels toward.
///
/// The default takes the minimum kernel value over each class's cross-modal
/// pairs. `MaxKernel` uses the maximum kernel (the closest pair) instead and
/// flips the summand sign so the loss stays non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeometricTemplate {
    #[default]
    MinKernel,
    MaxKernel,
}

/// Loss term weights plus the scalar knobs of the contrastive and geometric
/// terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    /// Contrastive softmax temperature (logits are cosines divided by this).
    pub temperature: f64,
    /// Gaussian kernel rate t in exp(-t * distance).
    pub kernel_t: f64,
    pub geometric_template: GeometricTemplate,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.5,
            alpha4: 0.1,
            temperature: 0.07,
            kernel_t: 2.0,
            geometric_template: GeometricTemplate::MinKernel,
        }
    }
}

impl LossWeights {
    pub fn alphas(&self) -> [f64; 4] {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4]
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::InvalidParameter {
                    name: name.to_string(),
                    detail: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "temperature".to_string(),
                detail: format!("must be > 0, got {}", self.temperature),
            });
        }
        if !(self.kernel_t.is_finite() && self.kernel_t > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "kernel_t".to_string(),
                detail: format!("must be > 0, got {}", self.kernel_t),
            });
        }
        Ok(())
    }
}

/// Training objective variant: full four-term alignment or MSE-only caption
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossMode {
    #[default]
    Alignment,
    Caption,
}

fn check_same_shape(eeg: &EmbeddingBatch, other: &EmbeddingBatch, context: &str) -> Result<(), CoreError> {
    if eeg.len() != other.len() || eeg.dim() != other.dim() {
        return Err(CoreError::ShapeMismatch {
            context: context.to_string(),
            left: format!("{}x{}", eeg.len(), eeg.dim()),
            right: format!("{}x{}", other.len(), other.dim()),
        });
    }
    Ok(())
}

/// Mean squared error between predicted and target embeddings:
/// (1/N) * sum_i ||z_i - zhat_i||^2.
pub fn mse_loss(eeg: &EmbeddingBatch, target: &EmbeddingBatch) -> Result<f64, CoreError> {
    check_same_shape(eeg, target, "mse_loss")?;
    let diff = &eeg.vectors() - &target.vectors();
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / eeg.len() as f64)
}

/// MSE and its gradient with respect to the EEG (prediction) rows.
pub fn mse_loss_grad(
    eeg: &EmbeddingBatch,
    target: &EmbeddingBatch,
) -> Result<(f64, Array2<f64>), CoreError> {
    check_same_shape(eeg, target, "mse_loss")?;
    let b = eeg.len() as f64;
    let diff = &eeg.vectors() - &target.vectors();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
    let grad = diff.mapv(|d| 2.0 * d / b);
    Ok((loss, grad))
}

fn guarded_norms(m: ArrayView2<'_, f64>) -> Vec<f64> {
    m.axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt().max(DEFAULT_NORM_EPS))
        .collect()
}

/// Cross-modal cosine matrix C[i][j] = cos(eeg_i, image_j).
fn cross_cosine(eeg: &EmbeddingBatch, image: &EmbeddingBatch) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let ne = guarded_norms(eeg.vectors());
    let nv = guarded_norms(image.vectors());
    let mut c = eeg.vectors().dot(&image.vectors().t());
    for (i, mut row) in c.axis_iter_mut(Axis(0)).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v /= ne[i] * nv[j];
        }
    }
    (c, ne, nv)
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Symmetric InfoNCE over temperature-scaled cosine logits with matched pairs
/// as positives: row-wise plus column-wise cross-entropy, halved.
pub fn contrastive_loss(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    temperature: f64,
) -> Result<f64, CoreError> {
    contrastive_loss_grad(eeg, image, temperature).map(|(l, _, _)| l)
}

/// Contrastive loss, its gradient w.r.t. the EEG rows, and the derivative
/// w.r.t. the temperature (used when the temperature is learnable).
pub fn contrastive_loss_grad(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    temperature: f64,
) -> Result<(f64, Array2<f64>, f64), CoreError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(CoreError::InvalidParameter {
            name: "temperature".to_string(),
            detail: format!("must be > 0, got {temperature}"),
        });
    }
    check_same_shape(eeg, image, "contrastive_loss")?;
    let b = eeg.len();
    let (c, ne, _nv) = cross_cosine(eeg, image);
    let z = c.mapv(|v| v / temperature);

    let p_row = softmax_rows(&z);
    let p_col = softmax_rows(&z.t().to_owned()); // p_col[j][i] = softmax over i of Z[:,j]

    let mut loss = 0.0;
    for i in 0..b {
        loss += -p_row[[i, i]].ln() - p_col[[i, i]].ln();
    }
    loss /= 2.0 * b as f64;

    // dL/dZ[i][j] = ((p_row - I) + (p_col^T - I)) / (2B)
    let mut dz = Array2::<f64>::zeros((b, b));
    let scale = 1.0 / (2.0 * b as f64);
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            dz[[i, j] ] = scale * ((p_row[[i, j]] - delta) + (p_col[[j, i]] - delta));
        }
    }

    // dL/dtemperature = sum dL/dZ * (-C / tau^2)
    let mut d_temp = 0.0;
    for i in 0..b {
        for j in 0..b {
            d_temp += dz[[i, j]] * (-c[[i, j]] / (temperature * temperature));
        }
    }

    // Chain through cos(e_i, v_j) / tau.
    let dc = dz.mapv(|v| v / temperature);
    let mut grad = Array2::<f64>::zeros((b, eeg.dim()));
    let v = image.vectors();
    let nv = guarded_norms(v);
    for i in 0..b {
        let e_i = eeg.row(i);
        let raw_norm = e_i.dot(&e_i).sqrt();
        let n_i = raw_norm.max(DEFAULT_NORM_EPS);
        let mut g_i = Array1::<f64>::zeros(eeg.dim());
        let mut cos_weighted = 0.0;
        for j in 0..b {
            let w = dc[[i, j]];
            if w == 0.0 {
                continue;
            }
            g_i.scaled_add(w / (n_i * nv[j]), &v.row(j));
            cos_weighted += w * c[[i, j]];
        }
        // Norm-direction term vanishes when the guard clamps the denominator.
        if raw_norm > DEFAULT_NORM_EPS {
            g_i.scaled_add(-cos_weighted / (n_i * n_i), &e_i);
        }
        grad.row_mut(i).assign(&g_i);
    }
    let _ = ne;
    Ok((loss, grad, d_temp))
}

/// Squared Frobenius distance between two intra-modal similarity structures,
/// normalized by B^2.
pub fn semantic_loss(
    image_sim: &SimilarityMatrix,
    eeg_sim: &SimilarityMatrix,
) -> Result<f64, CoreError> {
    let bi = image_sim.size();
    let bx = eeg_sim.size();
    if bi != bx {
        return Err(CoreError::shape("semantic_loss", bi, bx));
    }
    let diff = &image_sim.values() - &eeg_sim.values();
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / (bi * bi) as f64)
}

/// Semantic loss computed from raw embedding batches (image side fixed),
/// with the gradient w.r.t. the EEG rows chained through the EEG-side
/// cosine similarity matrix.
pub fn semantic_loss_grad(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
) -> Result<(f64, Array2<f64>), CoreError> {
    if eeg.len() != image.len() {
        return Err(CoreError::shape("semantic_loss", eeg.len(), image.len()));
    }
    let m_img = cosine_similarity_matrix(image)?;
    let m_eeg = cosine_similarity_matrix(eeg)?;
    let loss = semantic_loss(&m_img, &m_eeg)?;

    let b = eeg.len();
    let d = eeg.dim();
    let b2 = (b * b) as f64;
    let e = eeg.vectors();
    let norms: Vec<f64> = (0..b).map(|i| e.row(i).dot(&e.row(i)).sqrt()).collect();
    let guarded: Vec<f64> = norms.iter().map(|n| n.max(DEFAULT_NORM_EPS)).collect();

    let mut grad = Array2::<f64>::zeros((b, d));
    let mx = m_eeg.values();
    let mi = m_img.values();
    for i in 0..b {
        for j in (i + 1)..b {
            // Entries (i,j) and (j,i) share one cosine value.
            let s = 4.0 / b2 * (mx[[i, j]] - mi[[i, j]]);
            if s == 0.0 {
                continue;
            }
            let cos = mx[[i, j]];
            // d cos / d e_i
            {
                let mut g = Array1::<f64>::zeros(d);
                g.scaled_add(1.0 / (guarded[i] * guarded[j]), &e.row(j));
                if norms[i] > DEFAULT_NORM_EPS {
                    g.scaled_add(-cos / (guarded[i] * guarded[i]), &e.row(i));
                }
                grad.row_mut(i).scaled_add(s, &g);
            }
            // d cos / d e_j
            {
                let mut g = Array1::<f64>::zeros(d);
                g.scaled_add(1.0 / (guarded[i] * guarded[j]), &e.row(i));
                if norms[j] > DEFAULT_NORM_EPS {
                    g.scaled_add(-cos / (guarded[j] * guarded[j]), &e.row(j));
                }
                grad.row_mut(j).scaled_add(s, &g);
            }
        }
    }
    Ok((loss, grad))
}

/// Gaussian latent kernel G(a, b) = exp(-t * ||a - b||), a similarity in
/// (0, 1] that equals 1 iff a == b.
pub fn gaussian_kernel(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, t: f64) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::shape("gaussian_kernel", a.len(), b.len()));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(CoreError::InvalidParameter {
            name: "t".to_string(),
            detail: format!("must be > 0, got {t}"),
        });
    }
    let dist = (&a - &b).mapv(|v| v * v).sum().sqrt();
    Ok((-t * dist).exp())
}

struct ClassPairs {
    /// (eeg index, image index, kernel value) for every same-class pair.
    pairs: Vec<(usize, usize, f64)>,
    /// Index into `pairs` of the template (extremal) pair.
    template: usize,
}

/// Collects per-class cross-modal pairs and kernel values. Classes are
/// iterated in ascending id order so results are deterministic.
fn class_kernels(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    t: f64,
) -> Result<BTreeMap<u32, ClassPairs>, CoreError> {
    check_same_shape(eeg, image, "geometric_loss")?;
    if !(t.is_finite() && t > 0.0) {
        return Err(CoreError::InvalidParameter {
            name: "kernel_t".to_string(),
            detail: format!("must be > 0, got {t}"),
        });
    }
    let eeg_classes: std::collections::BTreeSet<u32> = eeg.class_ids().iter().copied().collect();
    let image_classes: std::collections::BTreeSet<u32> =
        image.class_ids().iter().copied().collect();
    if eeg_classes != image_classes {
        let only_eeg: Vec<u32> = eeg_classes.difference(&image_classes).copied().collect();
        let only_img: Vec<u32> = image_classes.difference(&eeg_classes).copied().collect();
        return Err(CoreError::LabelMismatch {
            detail: format!(
                "classes without a cross-modal pair (eeg-only {only_eeg:?}, image-only {only_img:?})"
            ),
        });
    }

    let mut out = BTreeMap::new();
    for &k in &eeg_classes {
        let mut pairs = Vec::new();
        for (i, &yi) in eeg.class_ids().iter().enumerate() {
            if yi != k {
                continue;
            }
            for (j, &yj) in image.class_ids().iter().enumerate() {
                if yj != k {
                    continue;
                }
                let g = gaussian_kernel(eeg.row(i), image.row(j), t)?;
                pairs.push((i, j, g));
            }
        }
        // First extremal pair in scan order breaks ties deterministically.
        let template = pairs
            .iter()
            .enumerate()
            .fold(0usize, |best, (idx, p)| {
                if p.2 < pairs[best].2 {
                    idx
                } else {
                    best
                }
            });
        out.insert(k, ClassPairs { pairs, template });
    }
    Ok(out)
}

/// Per-class kernel-spread penalty: for each class present in the batch, the
/// extremal kernel value over its cross-modal same-class pairs is the
/// template, and every pair pays its distance to that template.
pub fn geometric_loss(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    t: f64,
) -> Result<f64, CoreError> {
    geometric_loss_with(eeg, image, t, GeometricTemplate::MinKernel)
}

pub fn geometric_loss_with(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    t: f64,
    template: GeometricTemplate,
) -> Result<f64, CoreError> {
    geometric_loss_grad_with(eeg, image, t, template).map(|(l, _)| l)
}

pub fn geometric_loss_grad(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    t: f64,
) -> Result<(f64, Array2<f64>), CoreError> {
    geometric_loss_grad_with(eeg, image, t, GeometricTemplate::MinKernel)
}

pub fn geometric_loss_grad_with(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    t: f64,
    template: GeometricTemplate,
) -> Result<(f64, Array2<f64>), CoreError> {
    let by_class = class_kernels(eeg, image, t)?;
    let d = eeg.dim();
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((eeg.len(), d));

    // d G(e_i, v_j) / d e_i = -t * G * (e_i - v_j) / ||e_i - v_j||
    let kernel_grad = |i: usize, j: usize, g: f64| -> Array1<f64> {
        let diff = &eeg.row(i) - &image.row(j);
        let dist = diff.dot(&diff).sqrt();
        if dist <= 1e-300 {
            return Array1::zeros(d);
        }
        diff.mapv(|v| -t * g * v / dist)
    };

    for cp in by_class.values() {
        let tmpl_idx = match template {
            GeometricTemplate::MinKernel => cp.template,
            GeometricTemplate::MaxKernel => cp
                .pairs
                .iter()
                .enumerate()
                .fold(0usize, |best, (idx, p)| {
                    if p.2 > cp.pairs[best].2 {
                        idx
                    } else {
                        best
                    }
                }),
        };
        let d_k = cp.pairs[tmpl_idx].2;
        let n_k = cp.pairs.len() as f64;
        let (ti, tj, tg) = cp.pairs[tmpl_idx];
        match template {
            GeometricTemplate::MinKernel => {
                for &(i, j, g) in &cp.pairs {
                    loss += g - d_k;
                    grad.row_mut(i).scaled_add(1.0, &kernel_grad(i, j, g));
                }
                grad.row_mut(ti).scaled_add(-n_k, &kernel_grad(ti, tj, tg));
            }
            GeometricTemplate::MaxKernel => {
                for &(i, j, g) in &cp.pairs {
                    loss += d_k - g;
                    grad.row_mut(i).scaled_add(-1.0, &kernel_grad(i, j, g));
                }
                grad.row_mut(ti).scaled_add(n_k, &kernel_grad(ti, tj, tg));
            }
        }
    }
    Ok((loss, grad))
}

/// All four terms and their weighted total; caption mode keeps only the MSE
/// term and reports the other three as zero.
pub fn total_loss(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    weights: &LossWeights,
    mode: LossMode,
) -> Result<LossBreakdown, CoreError> {
    total_loss_grad(eeg, image, weights, mode).map(|(b, _, _)| b)
}

/// Total loss, gradient w.r.t. the EEG rows, and derivative w.r.t. the
/// contrastive temperature.
pub fn total_loss_grad(
    eeg: &EmbeddingBatch,
    image: &EmbeddingBatch,
    weights: &LossWeights,
    mode: LossMode,
) -> Result<(LossBreakdown, Array2<f64>, f64), CoreError> {
    weights.validate()?;
    let alphas = weights.alphas();
    let (mse, mse_g) = mse_loss_grad(eeg, image)?;
    match mode {
        LossMode::Caption => {
            let grad = mse_g.mapv(|v| alphas[0] * v);
            Ok((LossBreakdown::new(mse, 0.0, 0.0, 0.0, alphas), grad, 0.0))
        }
        LossMode::Alignment => {
            let (con, con_g, con_dt) = contrastive_loss_grad(eeg, image, weights.temperature)?;
            let (sem, sem_g) = semantic_loss_grad(eeg, image)?;
            let (geo, geo_g) =
                geometric_loss_grad_with(eeg, image, weights.kernel_t, weights.geometric_template)?;
            let mut grad = mse_g.mapv(|v| alphas[0] * v);
            grad.scaled_add(alphas[1], &con_g);
            grad.scaled_add(alphas[2], &sem_g);
            grad.scaled_add(alphas[3], &geo_g);
            Ok((
                LossBreakdown::new(mse, con, sem, geo, alphas),
                grad,
                alphas[1] * con_dt,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eeg_batch(v: Array2<f64>, classes: Vec<u32>) -> EmbeddingBatch {
        EmbeddingBatch::new(v, classes, Modality::Eeg).unwrap()
    }

    fn img_batch(v: Array2<f64>, classes: Vec<u32>) -> EmbeddingBatch {
        EmbeddingBatch::new(v, classes, Modality::Image).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize, modality: Modality) -> EmbeddingBatch {
        let v = Array2::from_shape_fn((b, d), |_| rng.gen_range(-1.0..1.0));
        EmbeddingBatch::new(v, (0..b as u32).collect(), modality).unwrap()
    }

    #[test]
    fn mse_zero_for_identical_batches() {
        let a = eeg_batch(array![[1.0, 2.0], [3.0, 4.0]], vec![0, 1]);
        let b = img_batch(array![[1.0, 2.0], [3.0, 4.0]], vec![0, 1]);
        assert_eq!(mse_loss(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn mse_hand_value_and_symmetry() {
        let a = eeg_batch(array![[0.0, 0.0]], vec![0]);
        let b = img_batch(array![[1.0, 0.0]], vec![0]);
        assert!((mse_loss(&a, &b).unwrap() - 1.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x = random_batch(&mut rng, 4, 6, Modality::Eeg);
            let y = random_batch(&mut rng, 4, 6, Modality::Image);
            let xy = mse_loss(&x, &y).unwrap();
            let yx = mse_loss(
                &eeg_batch(y.vectors().to_owned(), y.class_ids().to_vec()),
                &img_batch(x.vectors().to_owned(), x.class_ids().to_vec()),
            )
            .unwrap();
            assert!((xy - yx).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_shape_mismatch_names_both_shapes() {
        let a = eeg_batch(array![[1.0, 2.0]], vec![0]);
        let b = img_batch(array![[1.0, 2.0, 3.0]], vec![0]);
        let err = mse_loss(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2") && msg.contains("1x3"), "{msg}");
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let a = eeg_batch(array![[0.3, 0.4]], vec![0]);
        let b = img_batch(array![[0.1, -0.2]], vec![0]);
        assert!(contrastive_loss(&a, &b, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn contrastive_orthonormal_pairs_closed_form() {
        let a = eeg_batch(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]);
        let b = img_batch(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]);
        let loss = contrastive_loss(&a, &b, 1.0).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn contrastive_identical_rows_gives_log_b() {
        for b in [2usize, 5, 8] {
            let v = Array2::from_shape_fn((b, 3), |_| 0.5);
            let a = eeg_batch(v.clone(), (0..b as u32).collect());
            let im = img_batch(v, (0..b as u32).collect());
            let loss = contrastive_loss(&a, &im, 0.3).unwrap();
            assert!((loss - (b as f64).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn contrastive_rejects_bad_temperature() {
        let a = eeg_batch(array![[1.0, 0.0]], vec![0]);
        let b = img_batch(array![[1.0, 0.0]], vec![0]);
        assert!(contrastive_loss(&a, &b, 0.0).is_err());
        assert!(contrastive_loss(&a, &b, -1.0).is_err());
    }

    #[test]
    fn semantic_equal_matrices_zero() {
        let m = cosine_similarity_matrix(&eeg_batch(array![[1.0, 0.2], [0.4, 0.5]], vec![0, 1]))
            .unwrap();
        assert_eq!(semantic_loss(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn semantic_hand_values() {
        // Difference [[0, 0.5], [0.5, 0]] -> 0.5 / 4 = 0.125
        let mi = SimilarityMatrix::new(array![[1.0, 0.5], [0.5, 1.0]], Modality::Image).unwrap();
        let mx = SimilarityMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], Modality::Eeg).unwrap();
        assert!((semantic_loss(&mi, &mx).unwrap() - 0.125).abs() < 1e-12);

        // Identity vs all-ones -> 2 / 4 = 0.5
        let mi = SimilarityMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], Modality::Image).unwrap();
        let mx = SimilarityMatrix::new(array![[1.0, 1.0], [1.0, 1.0]], Modality::Eeg).unwrap();
        assert!((semantic_loss(&mi, &mx).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn semantic_shape_mismatch() {
        let m2 = SimilarityMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], Modality::Image).unwrap();
        let m3 = SimilarityMatrix::new(Array2::eye(3), Modality::Eeg).unwrap();
        assert!(semantic_loss(&m2, &m3).is_err());
    }

    #[test]
    fn semantic_invariant_under_row_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eeg = random_batch(&mut rng, 5, 4, Modality::Eeg);
        let img = random_batch(&mut rng, 5, 4, Modality::Image);
        let (base, _) = semantic_loss_grad(&eeg, &img).unwrap();
        let mut scaled = eeg.vectors().to_owned();
        for (i, mut row) in scaled.axis_iter_mut(Axis(0)).enumerate() {
            let c = 0.1 + i as f64;
            row.mapv_inplace(|v| v * c);
        }
        let eeg2 = eeg_batch(scaled, eeg.class_ids().to_vec());
        let (rescaled, _) = semantic_loss_grad(&eeg2, &img).unwrap();
        assert!((base - rescaled).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn gaussian_kernel_values() {
        let a = array![1.0, 2.0];
        assert_eq!(gaussian_kernel(a.view(), a.view(), 2.0).unwrap(), 1.0);

        let b = array![1.0, 3.0]; // distance 1
        let g = gaussian_kernel(a.view(), b.view(), 2.0).unwrap();
        assert!((g - (-2.0f64).exp()).abs() < 1e-15);

        let c = array![1.0, 12.0]; // distance 10
        let g = gaussian_kernel(a.view(), c.view(), 2.0).unwrap();
        assert!((g - (-20.0f64).exp()).abs() < 1e-24);

        let short = array![1.0];
        assert!(gaussian_kernel(a.view(), short.view(), 2.0).is_err());
    }

    /// Fixture with one class at kernels {0.9, 0.7} and one at equal kernels.
    fn two_pair_fixture() -> (EmbeddingBatch, EmbeddingBatch) {
        let t = 2.0;
        let d9 = -(0.9f64.ln()) / t;
        let d7 = -(0.7f64.ln()) / t;
        let d5 = -(0.5f64.ln()) / t;
        let eeg = eeg_batch(array![[d9], [d7], [10.0]], vec![7, 7, 9]);
        let img = img_batch(array![[0.0], [10.0 - d5], [10.0 + d5]], vec![7, 9, 9]);
        (eeg, img)
    }

    #[test]
    fn geometric_equal_kernels_is_zero() {
        // Index-matched pairs all at identical distance.
        let eeg = eeg_batch(array![[0.0, 0.0], [4.0, 0.0]], vec![1, 2]);
        let img = img_batch(array![[1.0, 0.0], [5.0, 0.0]], vec![1, 2]);
        let loss = geometric_loss(&eeg, &img, 2.0).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn geometric_two_pair_hand_value() {
        let (eeg, img) = two_pair_fixture();
        let loss = geometric_loss(&eeg, &img, 2.0).unwrap();
        assert!((loss - 0.2).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn geometric_ignores_cross_class_distances() {
        let (eeg, img) = two_pair_fixture();
        let base = geometric_loss(&eeg, &img, 2.0).unwrap();
        // Shift the second class far away: same-class distances unchanged,
        // every cross-class distance changes.
        let mut e2 = eeg.vectors().to_owned();
        let mut v2 = img.vectors().to_owned();
        e2[[2, 0]] += 100.0;
        v2[[1, 0]] += 100.0;
        v2[[2, 0]] += 100.0;
        let shifted = geometric_loss(
            &eeg_batch(e2, eeg.class_ids().to_vec()),
            &img_batch(v2, img.class_ids().to_vec()),
            2.0,
        )
        .unwrap();
        assert!((base - shifted).abs() < 1e-12);
    }

    #[test]
    fn geometric_label_mismatch_errors() {
        let eeg = eeg_batch(array![[0.0], [1.0]], vec![1, 2]);
        let img = img_batch(array![[0.0], [1.0]], vec![1, 3]);
        let err = geometric_loss(&eeg, &img, 2.0).unwrap_err();
        assert!(matches!(err, CoreError::LabelMismatch { .. }));
    }

    #[test]
    fn geometric_max_kernel_variant_nonnegative() {
        let (eeg, img) = two_pair_fixture();
        let loss =
            geometric_loss_with(&eeg, &img, 2.0, GeometricTemplate::MaxKernel).unwrap();
        assert!((loss - 0.2).abs() < 1e-9); // symmetric spread for two pairs
        assert!(loss >= 0.0);
    }

    #[test]
    fn total_loss_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eeg = random_batch(&mut rng, 4, 5, Modality::Eeg);
        let img = random_batch(&mut rng, 4, 5, Modality::Image);
        let w = LossWeights {
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            alpha4: 0.0,
            ..LossWeights::default()
        };
        let b = total_loss(&eeg, &img, &w, LossMode::Alignment).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn total_loss_single_term_equals_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eeg = random_batch(&mut rng, 4, 5, Modality::Eeg);
        let img = random_batch(&mut rng, 4, 5, Modality::Image);
        let w = LossWeights {
            alpha1: 1.0,
            alpha2: 0.0,
            alpha3: 0.0,
            alpha4: 0.0,
            ..LossWeights::default()
        };
        let b = total_loss(&eeg, &img, &w, LossMode::Alignment).unwrap();
        assert_eq!(b.total, mse_loss(&eeg, &img).unwrap());
    }

    #[test]
    fn caption_mode_keeps_only_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eeg = random_batch(&mut rng, 4, 5, Modality::Eeg);
        let img = random_batch(&mut rng, 4, 5, Modality::Image);
        let w = LossWeights::default(); // alpha2..4 > 0
        let b = total_loss(&eeg, &img, &w, LossMode::Caption).unwrap();
        assert_eq!(b.contrastive, 0.0);
        assert_eq!(b.semantic, 0.0);
        assert_eq!(b.geometric, 0.0);
        let mse = mse_loss(&eeg, &img).unwrap();
        assert_eq!(b.total, w.alpha1 * mse);
        assert_eq!(b.mse, mse);
    }

    #[test]
    fn caption_mode_gradient_is_pure_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eeg = random_batch(&mut rng, 4, 5, Modality::Eeg);
        let img = random_batch(&mut rng, 4, 5, Modality::Image);
        let w = LossWeights::default();
        let (_, grad, d_temp) = total_loss_grad(&eeg, &img, &w, LossMode::Caption).unwrap();
        let (_, mse_g) = mse_loss_grad(&eeg, &img).unwrap();
        for (a, b) in grad.iter().zip(mse_g.iter()) {
            assert_eq!(*a, w.alpha1 * b);
        }
        assert_eq!(d_temp, 0.0);
    }

    #[test]
    fn contrastive_row_softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let b = rng.gen_range(2..10);
            let d = rng.gen_range(2..8);
            let eeg = random_batch(&mut rng, b, d, Modality::Eeg);
            let img = random_batch(&mut rng, b, d, Modality::Image);
            let (c, _, _) = cross_cosine(&eeg, &img);
            let z = c.mapv(|v| v / 0.2);
            let p = softmax_rows(&z);
            for row in p.axis_iter(Axis(0)) {
                assert!((row.sum() - 1.0).abs() <= 1e-9);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn losses_are_nonnegative(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = rng.gen_range(2..9);
            let d = rng.gen_range(2..9);
            let eeg = random_batch(&mut rng, b, d, Modality::Eeg);
            // Matched class ids so the geometric term accepts the batch.
            let img = EmbeddingBatch::new(
                Array2::from_shape_fn((b, d), |_| rng.gen_range(-1.0..1.0)),
                eeg.class_ids().to_vec(),
                Modality::Image,
            ).unwrap();
            let breakdown = total_loss(&eeg, &img, &LossWeights::default(), LossMode::Alignment).unwrap();
            proptest::prop_assert!(breakdown.mse >= 0.0);
            proptest::prop_assert!(breakdown.contrastive >= 0.0);
            proptest::prop_assert!(breakdown.semantic >= 0.0);
            proptest::prop_assert!(breakdown.geometric >= 0.0);
            let recomputed = breakdown.recomputed_total();
            proptest::prop_assert!((breakdown.total - recomputed).abs() <= 1e-9 * recomputed.abs().max(1.0));
        }
    }
}
