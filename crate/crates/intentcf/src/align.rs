//! Interaction-level alignment of intent embeddings, local structural
//! similarity, dual-perspective fusion, and the relevance head.
//!
//! Each perspective owns an alignment encoder that maps the pair
//! `(user intent embedding, item intent embedding)` to an aligned
//! vector. Three encoder variants are supported; two fusion strategies
//! combine the two perspectives with the two local similarity scalars
//! before the prediction MLP reduces everything to one raw score.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{
    matmul, mlp_forward, mlp_forward_on_tape, GradientTape, MlpWeights, Tensor2, TensorId,
};

/// How the two intent embeddings of a pair are aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentVariant {
    /// Concatenate the pair and run an MLP over the 2d' vector.
    ConcatMlp,
    /// Hadamard product of the pair, then an MLP over the d' vector.
    GmfMlp,
    /// Single-token cross-attention with learned query/key/value
    /// projections.
    CrossAttention,
}

impl AlignmentVariant {
    pub fn name(self) -> &'static str {
        match self {
            AlignmentVariant::ConcatMlp => "concat_mlp",
            AlignmentVariant::GmfMlp => "gmf_mlp",
            AlignmentVariant::CrossAttention => "cross_attention",
        }
    }
}

impl fmt::Display for AlignmentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlignmentVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_mlp" => Ok(AlignmentVariant::ConcatMlp),
            "gmf_mlp" => Ok(AlignmentVariant::GmfMlp),
            "cross_attention" => Ok(AlignmentVariant::CrossAttention),
            other => Err(Error::Config(format!(
                "unknown alignment variant {other:?}; expected concat_mlp, gmf_mlp, or cross_attention"
            ))),
        }
    }
}

/// How the two perspectives are combined before prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    /// Add the aligned vectors, then append both similarity scalars.
    Sequential,
    /// Concatenate both aligned vectors and both scalars.
    Flat,
}

impl FusionVariant {
    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Sequential => "sequential",
            FusionVariant::Flat => "flat",
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(FusionVariant::Sequential),
            "flat" => Ok(FusionVariant::Flat),
            other => Err(Error::Config(format!(
                "unknown fusion variant {other:?}; expected sequential or flat"
            ))),
        }
    }
}

/// Which perspectives feed the fusion input; dropping one gives the
/// single-perspective ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perspectives {
    Both,
    UserOnly,
    ItemOnly,
}

impl Perspectives {
    pub fn name(self) -> &'static str {
        match self {
            Perspectives::Both => "both",
            Perspectives::UserOnly => "user_only",
            Perspectives::ItemOnly => "item_only",
        }
    }

    pub fn uses_user_side(self) -> bool {
        matches!(self, Perspectives::Both | Perspectives::UserOnly)
    }

    pub fn uses_item_side(self) -> bool {
        matches!(self, Perspectives::Both | Perspectives::ItemOnly)
    }
}

impl fmt::Display for Perspectives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Perspectives {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Perspectives::Both),
            "user_only" => Ok(Perspectives::UserOnly),
            "item_only" => Ok(Perspectives::ItemOnly),
            other => Err(Error::Config(format!(
                "unknown perspectives value {other:?}; expected both, user_only, or item_only"
            ))),
        }
    }
}

/// Width of the fusion vector the prediction MLP consumes.
pub fn fused_width(fusion: FusionVariant, perspectives: Perspectives, align_dim: usize) -> usize {
    match perspectives {
        Perspectives::Both => match fusion {
            FusionVariant::Flat => 2 * align_dim + 2,
            FusionVariant::Sequential => align_dim + 2,
        },
        // One aligned vector plus its own similarity scalar.
        Perspectives::UserOnly | Perspectives::ItemOnly => align_dim + 1,
    }
}

/// One perspective's alignment parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentWeights {
    Mlp(MlpWeights),
    CrossAttention {
        w_query: Tensor2,
        w_key: Tensor2,
        w_value: Tensor2,
    },
}

/// Tape handles for one perspective's alignment parameters, parallel
/// to [`AlignmentWeights`].
pub enum AlignmentBinding {
    Mlp(Vec<(TensorId, TensorId)>),
    CrossAttention {
        w_query: TensorId,
        w_key: TensorId,
        w_value: TensorId,
    },
}

fn variant_err(variant: AlignmentVariant, detail: String) -> Error {
    Error::dimension("align", format!("{}: {detail}", variant.name()))
}

fn check_width(
    variant: AlignmentVariant,
    side: &str,
    got: usize,
    expected: usize,
) -> Result<()> {
    if got != expected {
        return Err(variant_err(
            variant,
            format!("{side} width {got}, expected {expected}"),
        ));
    }
    Ok(())
}

/// Batched alignment on the tape: rows of `h_user` pair with rows of
/// `h_item`, producing a `B x d*` aligned block.
pub fn align_on_tape(
    tape: &mut GradientTape,
    variant: AlignmentVariant,
    weights: &AlignmentWeights,
    binding: &AlignmentBinding,
    h_user: TensorId,
    h_item: TensorId,
    intent_dim: usize,
) -> Result<TensorId> {
    check_width(variant, "user embedding", tape.value(h_user).cols(), intent_dim)?;
    check_width(variant, "item embedding", tape.value(h_item).cols(), intent_dim)?;
    match (variant, weights, binding) {
        (AlignmentVariant::ConcatMlp, AlignmentWeights::Mlp(mlp), AlignmentBinding::Mlp(ids)) => {
            let cat = tape.concat_cols(&[h_user, h_item])?;
            mlp_forward_on_tape(tape, mlp, ids, cat)
        }
        (AlignmentVariant::GmfMlp, AlignmentWeights::Mlp(mlp), AlignmentBinding::Mlp(ids)) => {
            let had = tape.hadamard(h_user, h_item)?;
            mlp_forward_on_tape(tape, mlp, ids, had)
        }
        (
            AlignmentVariant::CrossAttention,
            AlignmentWeights::CrossAttention { w_value, .. },
            AlignmentBinding::CrossAttention {
                w_query: bq,
                w_key: bk,
                w_value: bv,
            },
        ) => {
            let d_star = w_value.cols();
            let q = tape.matmul(h_user, *bq)?;
            let k = tape.matmul(h_item, *bk)?;
            let v = tape.matmul(h_item, *bv)?;
            let scores = tape.row_dot(q, k)?;
            let scaled = tape.scale(scores, 1.0 / (d_star as f64).sqrt());
            // One key-value pair per query: the softmax weight is
            // exactly 1 and contributes no gradient to the scores.
            let attn = tape.softmax_rows(scaled, 1.0)?;
            tape.scale_rows(v, attn)
        }
        _ => Err(variant_err(
            variant,
            "weights do not match the alignment variant".into(),
        )),
    }
}

/// Plain (no-gradient) batched alignment; bitwise-identical to the tape
/// path because both run the same kernels in the same order.
pub fn align_plain(
    variant: AlignmentVariant,
    weights: &AlignmentWeights,
    h_user: &Tensor2,
    h_item: &Tensor2,
    intent_dim: usize,
) -> Result<Tensor2> {
    check_width(variant, "user embedding", h_user.cols(), intent_dim)?;
    check_width(variant, "item embedding", h_item.cols(), intent_dim)?;
    match (variant, weights) {
        (AlignmentVariant::ConcatMlp, AlignmentWeights::Mlp(mlp)) => {
            mlp_forward(mlp, &crate::tensor::concat_cols(&[h_user, h_item])?)
        }
        (AlignmentVariant::GmfMlp, AlignmentWeights::Mlp(mlp)) => {
            mlp_forward(mlp, &crate::tensor::hadamard(h_user, h_item)?)
        }
        (AlignmentVariant::CrossAttention, AlignmentWeights::CrossAttention { w_value, .. }) => {
            // The singleton softmax weight is exactly 1, so the
            // attention output reduces to the value projection.
            matmul(h_item, w_value)
        }
        _ => Err(variant_err(
            variant,
            "weights do not match the alignment variant".into(),
        )),
    }
}

/// Eq-15-style local similarity scalars for one pair:
/// `(cos(z_user, e_item), cos(z_item, e_user))`.
pub fn local_similarity(
    z_user: &[f64],
    e_item: &[f64],
    z_item: &[f64],
    e_user: &[f64],
) -> Result<(f64, f64)> {
    Ok((
        crate::intent::cosine(z_user, e_item)?,
        crate::intent::cosine(z_item, e_user)?,
    ))
}

/// Fusion input assembled from per-perspective blocks. `t_*` are
/// `B x d*` aligned blocks, `s_*` are `B x 1` similarity columns.
pub struct FusionInputs<T> {
    pub t_user: Option<T>,
    pub t_item: Option<T>,
    pub s_user: Option<T>,
    pub s_item: Option<T>,
}

pub fn fuse_on_tape(
    tape: &mut GradientTape,
    fusion: FusionVariant,
    perspectives: Perspectives,
    inputs: FusionInputs<TensorId>,
) -> Result<TensorId> {
    match perspectives {
        Perspectives::Both => {
            let (t_u, t_v) = (required(inputs.t_user)?, required(inputs.t_item)?);
            let (s_u, s_v) = (required(inputs.s_user)?, required(inputs.s_item)?);
            match fusion {
                FusionVariant::Flat => tape.concat_cols(&[t_u, t_v, s_u, s_v]),
                FusionVariant::Sequential => {
                    let combined = tape.add(t_u, t_v)?;
                    tape.concat_cols(&[combined, s_u, s_v])
                }
            }
        }
        Perspectives::UserOnly => {
            tape.concat_cols(&[required(inputs.t_user)?, required(inputs.s_user)?])
        }
        Perspectives::ItemOnly => {
            tape.concat_cols(&[required(inputs.t_item)?, required(inputs.s_item)?])
        }
    }
}

pub fn fuse_plain(
    fusion: FusionVariant,
    perspectives: Perspectives,
    inputs: FusionInputs<Tensor2>,
) -> Result<Tensor2> {
    match perspectives {
        Perspectives::Both => {
            let (t_u, t_v) = (required(inputs.t_user)?, required(inputs.t_item)?);
            let (s_u, s_v) = (required(inputs.s_user)?, required(inputs.s_item)?);
            match fusion {
                FusionVariant::Flat => crate::tensor::concat_cols(&[&t_u, &t_v, &s_u, &s_v]),
                FusionVariant::Sequential => {
                    let combined = crate::tensor::add(&t_u, &t_v)?;
                    crate::tensor::concat_cols(&[&combined, &s_u, &s_v])
                }
            }
        }
        Perspectives::UserOnly => {
            let (t_u, s_u) = (required(inputs.t_user)?, required(inputs.s_user)?);
            crate::tensor::concat_cols(&[&t_u, &s_u])
        }
        Perspectives::ItemOnly => {
            let (t_v, s_v) = (required(inputs.t_item)?, required(inputs.s_item)?);
            crate::tensor::concat_cols(&[&t_v, &s_v])
        }
    }
}

fn required<T>(v: Option<T>) -> Result<T> {
    v.ok_or_else(|| {
        Error::dimension("fuse", "missing perspective input for the active variant")
    })
}

/// Raw relevance score of already-fused rows: `MLP_predict` with an
/// identity output so the downstream temperature softmax receives an
/// unbounded logit.
pub fn predict_raw(predict: &MlpWeights, fused: &Tensor2) -> Result<Tensor2> {
    mlp_forward(predict, fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{xavier_init, Activation, MlpSpec};

    fn identity_mlp(width: usize) -> MlpWeights {
        let mut mlp = MlpWeights::zeros(MlpSpec::new(vec![width, width], Activation::Identity).unwrap());
        mlp.layers[0].0 = Tensor2::identity(width);
        mlp
    }

    #[test]
    fn gmf_with_all_ones_item_side_passes_user_through() {
        // Identity single-layer MLP exposes the Hadamard input.
        let weights = AlignmentWeights::Mlp(identity_mlp(4));
        let h_u = xavier_init(3, 4, 50);
        let ones = Tensor2::filled(3, 4, 1.0);
        let out = align_plain(AlignmentVariant::GmfMlp, &weights, &h_u, &ones, 4).unwrap();
        assert_eq!(out, h_u);
    }

    #[test]
    fn gmf_is_symmetric_in_its_arguments() {
        let mut rng = rand::SeedableRng::seed_from_u64(8);
        let mlp = MlpWeights::init(
            MlpSpec::new(vec![4, 5, 3], Activation::Identity).unwrap(),
            &mut rng,
        );
        let weights = AlignmentWeights::Mlp(mlp);
        let a = xavier_init(2, 4, 51);
        let b = xavier_init(2, 4, 52);
        let ab = align_plain(AlignmentVariant::GmfMlp, &weights, &a, &b, 4).unwrap();
        let ba = align_plain(AlignmentVariant::GmfMlp, &weights, &b, &a, 4).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn concat_with_zero_weights_gives_zero_output() {
        let mlp = MlpWeights::zeros(MlpSpec::new(vec![8, 5, 3], Activation::Identity).unwrap());
        let weights = AlignmentWeights::Mlp(mlp);
        let a = xavier_init(2, 4, 53);
        let b = xavier_init(2, 4, 54);
        let out = align_plain(AlignmentVariant::ConcatMlp, &weights, &a, &b, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_attention_singleton_reduces_to_value_projection() {
        let d_prime = 4;
        let d_star = 3;
        let weights = AlignmentWeights::CrossAttention {
            w_query: xavier_init(d_prime, d_star, 60),
            w_key: xavier_init(d_prime, d_star, 61),
            w_value: xavier_init(d_prime, d_star, 62),
        };
        let h_u = xavier_init(2, d_prime, 63);
        let h_v = xavier_init(2, d_prime, 64);
        let out =
            align_plain(AlignmentVariant::CrossAttention, &weights, &h_u, &h_v, d_prime).unwrap();
        let AlignmentWeights::CrossAttention { w_value, .. } = &weights else {
            unreachable!()
        };
        let direct = matmul(&h_v, w_value).unwrap();
        assert_eq!(out, direct);

        // The output does not depend on the query side at all.
        let other_user = xavier_init(2, d_prime, 65);
        let out2 = align_plain(
            AlignmentVariant::CrossAttention,
            &weights,
            &other_user,
            &h_v,
            d_prime,
        )
        .unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn local_similarity_identity_and_zero_cases() {
        let z_u = [0.5, -1.0, 2.0];
        let e_v = z_u;
        let (s_u, s_v) = local_similarity(&z_u, &e_v, &[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s_u, 1.0);
        assert_eq!(s_v, 0.0);
    }

    #[test]
    fn flat_fusion_width_and_ordering() {
        assert_eq!(fused_width(FusionVariant::Flat, Perspectives::Both, 16), 34);
        assert_eq!(fused_width(FusionVariant::Sequential, Perspectives::Both, 16), 18);
        assert_eq!(fused_width(FusionVariant::Flat, Perspectives::UserOnly, 16), 17);

        let t_u = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let t_v = Tensor2::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let s_u = Tensor2::from_rows(&[vec![0.5]]).unwrap();
        let s_v = Tensor2::from_rows(&[vec![-0.5]]).unwrap();
        let fused = fuse_plain(
            FusionVariant::Flat,
            Perspectives::Both,
            FusionInputs {
                t_user: Some(t_u.clone()),
                t_item: Some(t_v.clone()),
                s_user: Some(s_u.clone()),
                s_item: Some(s_v.clone()),
            },
        )
        .unwrap();
        // Positional check of the fixed (t_user, t_item, s_user, s_item) order.
        assert_eq!(fused.data(), &[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
    }

    #[test]
    fn sequential_fusion_cancels_opposite_vectors() {
        let t_u = Tensor2::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        let t_v = t_u.map(|v| -v);
        let s = Tensor2::from_rows(&[vec![0.1]]).unwrap();
        let fused = fuse_plain(
            FusionVariant::Sequential,
            Perspectives::Both,
            FusionInputs {
                t_user: Some(t_u),
                t_item: Some(t_v),
                s_user: Some(s.clone()),
                s_item: Some(s),
            },
        )
        .unwrap();
        assert_eq!(&fused.data()[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(fused.cols(), 5);
    }

    #[test]
    fn predict_zero_weights_scores_zero_and_projection_copies() {
        let spec = MlpSpec::new(vec![4, 3, 1], Activation::Identity).unwrap();
        let zero = MlpWeights::zeros(spec);
        let fused = xavier_init(2, 4, 70);
        let out = predict_raw(&zero, &fused).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        // Single-layer weights that copy coordinate 0.
        let mut copy = MlpWeights::zeros(MlpSpec::new(vec![4, 1], Activation::Identity).unwrap());
        copy.layers[0].0.set(0, 0, 1.0);
        let out = predict_raw(&copy, &fused).unwrap();
        assert_eq!(out.get(0, 0), fused.get(0, 0));
        assert_eq!(out.get(1, 0), fused.get(1, 0));
    }

    #[test]
    fn predict_matches_scalar_loop_oracle() {
        let mut rng = rand::SeedableRng::seed_from_u64(71);
        let mlp = MlpWeights::init(
            MlpSpec::new(vec![5, 4, 1], Activation::Identity).unwrap(),
            &mut rng,
        );
        let fused = xavier_init(1, 5, 72);
        let out = predict_raw(&mlp, &fused).unwrap();

        // Loop oracle: sigmoid hidden layer, identity output.
        let (w0, b0) = &mlp.layers[0];
        let (w1, b1) = &mlp.layers[1];
        let mut hidden = vec![0.0; 4];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut acc = b0.get(0, j);
            for (i, &x) in fused.row(0).iter().enumerate() {
                acc += x * w0.get(i, j);
            }
            *h = 1.0 / (1.0 + (-acc).exp());
        }
        let mut score = b1.get(0, 0);
        for (i, &h) in hidden.iter().enumerate() {
            score += h * w1.get(i, 0);
        }
        assert!((out.get(0, 0) - score).abs() < 1e-10);
    }

    #[test]
    fn width_mismatch_names_the_variant() {
        let weights = AlignmentWeights::Mlp(identity_mlp(4));
        let bad = Tensor2::zeros(1, 3);
        let good = Tensor2::zeros(1, 4);
        let err = align_plain(AlignmentVariant::GmfMlp, &weights, &bad, &good, 4).unwrap_err();
        assert!(err.to_string().contains("gmf_mlp"), "{err}");
    }
}
