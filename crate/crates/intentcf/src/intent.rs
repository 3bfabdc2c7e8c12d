//! Intent encoding: prototype cosine distributions, the four intent
//! MLPs, and simplex projection of user-side intent embeddings.
//!
//! Entities are soft-assigned to two shared prototype sets. On the
//! user-perspective side, the structure-aware user embedding and the
//! base item embedding are both matched against the user prototypes;
//! the item-perspective side mirrors this with the item prototypes.
//! Each of the four resulting cosine distributions feeds its own MLP,
//! and the two user-side outputs are L1-normalized onto the
//! probability simplex.

use crate::error::{Error, Result};
use crate::tensor::{mlp_forward, MlpWeights, Tensor2};

/// Below this Euclidean norm a vector is treated as zero and cosine
/// similarity is defined to be 0, keeping isolated nodes inert.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Cosine similarity with the zero-norm convention, clamped into
/// `[-1, 1]` against float drift.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(
            "cosine",
            format!("vector lengths {} vs {}", a.len(), b.len()),
        ));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let daa = crate::tensor::dot(a, a);
    let dbb = crate::tensor::dot(b, b);
    if daa < COSINE_NORM_FLOOR * COSINE_NORM_FLOOR || dbb < COSINE_NORM_FLOOR * COSINE_NORM_FLOOR {
        return 0.0;
    }
    // sqrt(daa * dbb) keeps cosine(x, x) exactly 1.
    (crate::tensor::dot(a, b) / (daa * dbb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine of `x` against every prototype row: the K-dimensional intent
/// distribution of one entity.
pub fn intent_distribution(x: &[f64], prototypes: &Tensor2) -> Result<Vec<f64>> {
    if x.len() != prototypes.cols() {
        return Err(Error::dimension(
            "intent_distribution",
            format!(
                "vector width {} vs prototype width {}",
                x.len(),
                prototypes.cols()
            ),
        ));
    }
    Ok((0..prototypes.rows())
        .map(|k| cosine_unchecked(x, prototypes.row(k)))
        .collect())
}

/// Row-wise [`intent_distribution`] over a whole table: `(B x d, K x d)
/// -> B x K`.
pub fn distributions_matrix(x: &Tensor2, prototypes: &Tensor2) -> Result<Tensor2> {
    if x.cols() != prototypes.cols() {
        return Err(Error::dimension(
            "intent_distribution",
            format!(
                "vector width {} vs prototype width {}",
                x.cols(),
                prototypes.cols()
            ),
        ));
    }
    let mut out = Tensor2::zeros(x.rows(), prototypes.rows());
    for r in 0..x.rows() {
        let xrow = x.row(r);
        for (k, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = cosine_unchecked(xrow, prototypes.row(k));
        }
    }
    Ok(out)
}

/// Divides each row by its sum. Rows must have a positive sum, which
/// holds for sigmoid outputs since they are strictly positive.
pub fn l1_normalize_rows(t: &mut Tensor2) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Numeric(format!(
                "l1 normalization: row {r} sums to {sum}, expected > 0"
            )));
        }
        for v in row {
            *v /= sum;
        }
    }
    Ok(())
}

/// The four per-entity cosine distributions of one (user, item) pair.
#[derive(Debug, Clone)]
pub struct IntentDistributions {
    /// User structure embedding vs user prototypes.
    pub p_user: Vec<f64>,
    /// Item base embedding vs user prototypes.
    pub p_item: Vec<f64>,
    /// User base embedding vs item prototypes.
    pub p_user_x: Vec<f64>,
    /// Item structure embedding vs item prototypes.
    pub p_item_x: Vec<f64>,
}

/// The four intent embeddings after the MLPs; user-side vectors live on
/// the probability simplex, item-side vectors in `(0, 1)`.
#[derive(Debug, Clone)]
pub struct IntentEmbeddings {
    pub h_user: Vec<f64>,
    pub h_item: Vec<f64>,
    pub h_user_x: Vec<f64>,
    pub h_item_x: Vec<f64>,
}

/// The four intent MLPs, one per distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentMlps {
    pub user_user: MlpWeights,
    pub user_item: MlpWeights,
    pub item_user: MlpWeights,
    pub item_item: MlpWeights,
}

/// Runs the four intent MLPs on one pair's distributions and projects
/// the user-side outputs onto the simplex.
pub fn encode_intents(dists: &IntentDistributions, mlps: &IntentMlps) -> Result<IntentEmbeddings> {
    let run = |mlp: &MlpWeights, p: &[f64], normalize: bool| -> Result<Vec<f64>> {
        let x = Tensor2::from_vec(1, p.len(), p.to_vec())?;
        let mut y = mlp_forward(mlp, &x)?;
        if normalize {
            l1_normalize_rows(&mut y)?;
        }
        Ok(y.into_data())
    };
    Ok(IntentEmbeddings {
        h_user: run(&mlps.user_user, &dists.p_user, true)?,
        h_item: run(&mlps.user_item, &dists.p_item, false)?,
        h_user_x: run(&mlps.item_user, &dists.p_user_x, true)?,
        h_item_x: run(&mlps.item_item, &dists.p_item_x, false)?,
    })
}
