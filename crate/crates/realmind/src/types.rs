//! Shared domain types: EEG epochs, embedding batches, similarity matrices,
//! loss breakdowns and retrieval reports.

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

/// Default denominator floor for cosine similarity. Keeps degenerate
/// embeddings from producing NaN mid-training.
pub const DEFAULT_NORM_EPS: f64 = 1e-12;

/// Errors raised by type construction and the basic batch operations.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {context}: {left} vs {right}")]
    ShapeMismatch {
        context: String,
        left: String,
        right: String,
    },
    #[error("row {row} has zero norm and the norm guard is disabled")]
    ZeroNormRow { row: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("empty input: {context}")]
    Empty { context: String },
    #[error("class label mismatch: {detail}")]
    LabelMismatch { detail: String },
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: String, detail: String },
}

impl CoreError {
    /// Stable machine-parsable code for logs and CLI exit reporting.
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::ShapeMismatch { .. } => "RM-CORE-001",
            CoreError::ZeroNormRow { .. } => "RM-CORE-002",
            CoreError::NonFinite { .. } => "RM-CORE-003",
            CoreError::Empty { .. } => "RM-CORE-004",
            CoreError::LabelMismatch { .. } => "RM-CORE-005",
            CoreError::InvalidParameter { .. } => "RM-CORE-006",
        }
    }

    pub(crate) fn shape(context: &str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Self {
        CoreError::ShapeMismatch {
            context: context.to_string(),
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }
}

/// Which side of the cross-modal pairing a batch or matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Modality {
    Eeg,
    Image,
}

/// One preprocessed EEG trial: channels x timepoints plus its labels.
#[derive(Debug, Clone)]
pub struct EegEpoch {
    signal: Array2<f64>,
    subject_id: u32,
    class_id: u32,
    image_id: String,
}

impl EegEpoch {
    /// Builds an epoch, rejecting empty or non-finite signals.
    pub fn new(
        signal: Array2<f64>,
        subject_id: u32,
        class_id: u32,
        image_id: impl Into<String>,
    ) -> Result<Self, CoreError> {
        if signal.nrows() == 0 || signal.ncols() == 0 {
            return Err(CoreError::Empty {
                context: format!("EEG signal with shape {:?}", signal.dim()),
            });
        }
        if !signal.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "EEG signal".to_string(),
            });
        }
        if subject_id == 0 {
            return Err(CoreError::InvalidParameter {
                name: "subject_id".to_string(),
                detail: "subject ids are 1-based".to_string(),
            });
        }
        Ok(Self {
            signal,
            subject_id,
            class_id,
            image_id: image_id.into(),
        })
    }

    pub fn signal(&self) -> ArrayView2<'_, f64> {
        self.signal.view()
    }

    pub fn n_channels(&self) -> usize {
        self.signal.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.signal.ncols()
    }

    pub fn subject_id(&self) -> u32 {
        self.subject_id
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }
}

/// A B x D block of feature vectors in the shared embedding space,
/// row-aligned with class labels.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    vectors: Array2<f64>,
    class_ids: Vec<u32>,
    modality: Modality,
}

impl EmbeddingBatch {
    pub fn new(
        vectors: Array2<f64>,
        class_ids: Vec<u32>,
        modality: Modality,
    ) -> Result<Self, CoreError> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(CoreError::Empty {
                context: format!("embedding batch with shape {:?}", vectors.dim()),
            });
        }
        if class_ids.len() != vectors.nrows() {
            return Err(CoreError::shape(
                "embedding batch labels",
                vectors.nrows(),
                class_ids.len(),
            ));
        }
        if !vectors.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "embedding batch".to_string(),
            });
        }
        Ok(Self {
            vectors,
            class_ids,
            modality,
        })
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Number of rows B.
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // B >= 1 by construction
    }

    /// Embedding dimension D.
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }
}

/// How to treat zero-norm rows when computing cosine similarities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormGuard {
    /// Denominators are floored at max(norm, eps).
    Epsilon(f64),
    /// Any exactly-zero-norm row is an error.
    Strict,
}

impl Default for NormGuard {
    fn default() -> Self {
        NormGuard::Epsilon(DEFAULT_NORM_EPS)
    }
}

/// Symmetric B x B matrix of pairwise cosine similarities within one modality.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
    modality: Modality,
}

impl SimilarityMatrix {
    /// Wraps an existing matrix, checking symmetry and the [-1, 1] range
    /// (1e-6 slack for values arriving from single-precision sources).
    pub fn new(values: Array2<f64>, modality: Modality) -> Result<Self, CoreError> {
        let (r, c) = values.dim();
        if r != c {
            return Err(CoreError::shape("similarity matrix", r, c));
        }
        if r == 0 {
            return Err(CoreError::Empty {
                context: "similarity matrix".to_string(),
            });
        }
        for i in 0..r {
            for j in 0..c {
                let v = values[[i, j]];
                if !v.is_finite() {
                    return Err(CoreError::NonFinite {
                        context: format!("similarity matrix entry ({i},{j})"),
                    });
                }
                if v.abs() > 1.0 + 1e-6 {
                    return Err(CoreError::InvalidParameter {
                        name: "similarity".to_string(),
                        detail: format!("entry ({i},{j}) = {v} outside [-1, 1]"),
                    });
                }
                if (v - values[[j, i]]).abs() > 1e-9 {
                    return Err(CoreError::InvalidParameter {
                        name: "similarity".to_string(),
                        detail: format!("asymmetry at ({i},{j})"),
                    });
                }
            }
        }
        Ok(Self { values, modality })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Pairwise cosine similarity matrix of a batch with the default norm guard.
pub fn cosine_similarity_matrix(batch: &EmbeddingBatch) -> Result<SimilarityMatrix, CoreError> {
    cosine_similarity_matrix_with(batch, NormGuard::default())
}

/// Pairwise cosine similarity matrix with an explicit norm guard.
///
/// The upper triangle is computed and mirrored so the output is exactly
/// symmetric; diagonal entries are 1 for every nonzero-norm row.
pub fn cosine_similarity_matrix_with(
    batch: &EmbeddingBatch,
    guard: NormGuard,
) -> Result<SimilarityMatrix, CoreError> {
    let b = batch.len();
    let vectors = batch.vectors();
    let mut norms = Vec::with_capacity(b);
    for i in 0..b {
        let row = vectors.row(i);
        let n = row.dot(&row).sqrt();
        match guard {
            NormGuard::Strict if n == 0.0 => return Err(CoreError::ZeroNormRow { row: i }),
            NormGuard::Strict => norms.push(n),
            NormGuard::Epsilon(eps) => norms.push(n.max(eps)),
        }
    }
    let mut values = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let vi = vectors.row(i);
        let ni = vi.dot(&vi).sqrt();
        values[[i, i]] = if ni > 0.0 { 1.0 } else { 0.0 };
        for j in (i + 1)..b {
            let s = vi.dot(&vectors.row(j)) / (norms[i] * norms[j]);
            // Clamp rounding spill so entries stay inside [-1, 1].
            let s = s.clamp(-1.0, 1.0);
            values[[i, j]] = s;
            values[[j, i]] = s;
        }
    }
    Ok(SimilarityMatrix {
        values,
        modality: batch.modality(),
    })
}

/// The four loss terms, their weights and the weighted total for one batch.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub contrastive: f64,
    pub semantic: f64,
    pub geometric: f64,
    /// (alpha1, alpha2, alpha3, alpha4) applied to the terms above, in order.
    pub weights: [f64; 4],
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse: f64, contrastive: f64, semantic: f64, geometric: f64, weights: [f64; 4]) -> Self {
        let total = weights[0] * mse
            + weights[1] * contrastive
            + weights[2] * semantic
            + weights[3] * geometric;
        Self {
            mse,
            contrastive,
            semantic,
            geometric,
            weights,
            total,
        }
    }

    /// Recomputes the weighted total from the stored terms; used to check
    /// the decomposition invariant.
    pub fn recomputed_total(&self) -> f64 {
        self.weights[0] * self.mse
            + self.weights[1] * self.contrastive
            + self.weights[2] * self.semantic
            + self.weights[3] * self.geometric
    }

    /// The weighted contribution of one term (0 = mse .. 3 = geometric).
    pub fn contribution(&self, term: usize) -> f64 {
        let t = [self.mse, self.contrastive, self.semantic, self.geometric][term];
        self.weights[term] * t
    }
}

/// Accuracy of one (k_way, top_k) retrieval evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetrievalReport {
    pub k_way: usize,
    pub top_k: usize,
    pub n_trials: usize,
    pub n_hits: usize,
    pub accuracy: f64,
    /// Distractor seed the galleries were drawn with.
    pub distractor_seed: u64,
    /// Whether repeated trials of a stimulus were averaged before retrieval.
    pub average_repeats: bool,
}

impl RetrievalReport {
    pub fn new(
        k_way: usize,
        top_k: usize,
        n_trials: usize,
        n_hits: usize,
        distractor_seed: u64,
        average_repeats: bool,
    ) -> Result<Self, CoreError> {
        if k_way < 2 {
            return Err(CoreError::InvalidParameter {
                name: "k_way".to_string(),
                detail: format!("{k_way} < 2"),
            });
        }
        if top_k == 0 || top_k >= k_way {
            return Err(CoreError::InvalidParameter {
                name: "top_k".to_string(),
                detail: format!("need 1 <= top_k < k_way, got top_k={top_k}, k_way={k_way}"),
            });
        }
        if n_trials == 0 {
            return Err(CoreError::Empty {
                context: "retrieval trials".to_string(),
            });
        }
        if n_hits > n_trials {
            return Err(CoreError::InvalidParameter {
                name: "n_hits".to_string(),
                detail: format!("{n_hits} > n_trials {n_trials}"),
            });
        }
        Ok(Self {
            k_way,
            top_k,
            n_trials,
            n_hits,
            accuracy: n_hits as f64 / n_trials as f64,
            distractor_seed,
            average_repeats,
        })
    }

    /// Binomial standard error of the reported accuracy.
    pub fn std_error(&self) -> f64 {
        let p = self.accuracy;
        (p * (1.0 - p) / self.n_trials as f64).sqrt()
    }
}
