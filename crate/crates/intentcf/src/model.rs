//! Model configuration, the full learnable parameter set, and the two
//! forward paths: a gradient-tape pipeline for training and a plain
//! pipeline for inference. Both run the same kernels in the same
//! order, so their scores agree bitwise.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{
    align_on_tape, align_plain, fuse_on_tape, fuse_plain, fused_width, AlignmentBinding,
    AlignmentVariant, AlignmentWeights, FusionInputs, FusionVariant, Perspectives,
};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::intent::{distributions_matrix, l1_normalize_rows, IntentMlps};
use crate::tensor::{
    mlp_forward, mlp_forward_on_tape, xavier_from_rng, Activation, GradientTape, MlpSpec,
    MlpWeights, ParamId, Tensor2, TensorId,
};

/// Architecture hyperparameters. Defaults follow the reference
/// configuration: 32-dimensional embeddings, 32 prototypes, intent
/// MLPs [32, 48, 80], alignment MLPs [80, 128, 64, 16], and a
/// [34, 32, 1] prediction head under flat fusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Base embedding width `d`.
    pub embedding_dim: usize,
    /// Number of intent prototypes `K` per perspective.
    pub num_prototypes: usize,
    /// Hidden width of the four intent MLPs.
    pub intent_hidden: usize,
    /// Intent embedding width `d'`.
    pub intent_dim: usize,
    /// First hidden width of the alignment MLPs.
    pub align_hidden1: usize,
    /// Second hidden width of the alignment MLPs.
    pub align_hidden2: usize,
    /// Aligned vector width `d*`.
    pub align_dim: usize,
    /// Hidden width of the prediction MLP.
    pub predict_hidden: usize,
    pub alignment: AlignmentVariant,
    pub fusion: FusionVariant,
    pub perspectives: Perspectives,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 32,
            num_prototypes: 32,
            intent_hidden: 48,
            intent_dim: 80,
            align_hidden1: 128,
            align_hidden2: 64,
            align_dim: 16,
            predict_hidden: 32,
            alignment: AlignmentVariant::GmfMlp,
            fusion: FusionVariant::Flat,
            perspectives: Perspectives::Both,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d", self.embedding_dim),
            ("k", self.num_prototypes),
            ("intent_hidden", self.intent_hidden),
            ("d_prime", self.intent_dim),
            ("align_hidden1", self.align_hidden1),
            ("align_hidden2", self.align_hidden2),
            ("d_star", self.align_dim),
            ("predict_hidden", self.predict_hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn intent_mlp_spec(&self) -> MlpSpec {
        MlpSpec::new(
            vec![self.num_prototypes, self.intent_hidden, self.intent_dim],
            Activation::Sigmoid,
        )
        .expect("widths validated")
    }

    pub fn align_mlp_spec(&self) -> MlpSpec {
        let input = match self.alignment {
            AlignmentVariant::ConcatMlp => 2 * self.intent_dim,
            _ => self.intent_dim,
        };
        MlpSpec::new(
            vec![input, self.align_hidden1, self.align_hidden2, self.align_dim],
            Activation::Identity,
        )
        .expect("widths validated")
    }

    /// Width of the vector entering the prediction MLP; 34 for the
    /// default flat-fusion configuration.
    pub fn fused_width(&self) -> usize {
        fused_width(self.fusion, self.perspectives, self.align_dim)
    }

    pub fn predict_mlp_spec(&self) -> MlpSpec {
        MlpSpec::new(
            vec![self.fused_width(), self.predict_hidden, 1],
            Activation::Identity,
        )
        .expect("widths validated")
    }
}

/// Every learnable tensor of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub e_user: Tensor2,
    pub e_item: Tensor2,
    pub c_user: Tensor2,
    pub c_item: Tensor2,
    pub intent: IntentMlps,
    pub align_user: AlignmentWeights,
    pub align_item: AlignmentWeights,
    pub predict: MlpWeights,
}

fn init_alignment(config: &ModelConfig, rng: &mut ChaCha8Rng) -> AlignmentWeights {
    match config.alignment {
        AlignmentVariant::ConcatMlp | AlignmentVariant::GmfMlp => {
            AlignmentWeights::Mlp(MlpWeights::init(config.align_mlp_spec(), rng))
        }
        AlignmentVariant::CrossAttention => AlignmentWeights::CrossAttention {
            w_query: xavier_from_rng(config.intent_dim, config.align_dim, rng),
            w_key: xavier_from_rng(config.intent_dim, config.align_dim, rng),
            w_value: xavier_from_rng(config.intent_dim, config.align_dim, rng),
        },
    }
}

impl ModelParameters {
    /// Xavier-uniform initialization of every weight (biases zero),
    /// deterministic in `seed`. The prediction head width is checked
    /// against the active fusion arithmetic at construction.
    pub fn init(
        config: ModelConfig,
        num_users: usize,
        num_items: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::Config(format!(
                "model needs at least one user and one item, got {num_users} x {num_items}"
            )));
        }
        let predict_spec = config.predict_mlp_spec();
        if predict_spec.input_width() != config.fused_width() {
            return Err(Error::Config(format!(
                "prediction head expects width {} but fusion produces {}",
                predict_spec.input_width(),
                config.fused_width()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embedding_dim;
        let k = config.num_prototypes;
        let intent_spec = config.intent_mlp_spec();
        Ok(ModelParameters {
            num_users,
            num_items,
            e_user: xavier_from_rng(num_users, d, &mut rng),
            e_item: xavier_from_rng(num_items, d, &mut rng),
            c_user: xavier_from_rng(k, d, &mut rng),
            c_item: xavier_from_rng(k, d, &mut rng),
            intent: IntentMlps {
                user_user: MlpWeights::init(intent_spec.clone(), &mut rng),
                user_item: MlpWeights::init(intent_spec.clone(), &mut rng),
                item_user: MlpWeights::init(intent_spec.clone(), &mut rng),
                item_item: MlpWeights::init(intent_spec, &mut rng),
            },
            align_user: init_alignment(&config, &mut rng),
            align_item: init_alignment(&config, &mut rng),
            predict: MlpWeights::init(predict_spec, &mut rng),
            config,
        })
    }

    /// Canonical `(name, tensor)` enumeration; the order defines the
    /// parameter ids used by the tape, the optimizer, and checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut out: Vec<(String, &Tensor2)> = vec![
            ("e_user".into(), &self.e_user),
            ("e_item".into(), &self.e_item),
            ("c_user".into(), &self.c_user),
            ("c_item".into(), &self.c_item),
        ];
        push_mlp(&mut out, "intent_user_user", &self.intent.user_user);
        push_mlp(&mut out, "intent_user_item", &self.intent.user_item);
        push_mlp(&mut out, "intent_item_user", &self.intent.item_user);
        push_mlp(&mut out, "intent_item_item", &self.intent.item_item);
        push_alignment(&mut out, "align_user", &self.align_user);
        push_alignment(&mut out, "align_item", &self.align_item);
        push_mlp(&mut out, "predict", &self.predict);
        out
    }

    /// Mutable view in the same canonical order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out: Vec<(String, &mut Tensor2)> = vec![
            ("e_user".into(), &mut self.e_user),
            ("e_item".into(), &mut self.e_item),
            ("c_user".into(), &mut self.c_user),
            ("c_item".into(), &mut self.c_item),
        ];
        push_mlp_mut(&mut out, "intent_user_user", &mut self.intent.user_user);
        push_mlp_mut(&mut out, "intent_user_item", &mut self.intent.user_item);
        push_mlp_mut(&mut out, "intent_item_user", &mut self.intent.item_user);
        push_mlp_mut(&mut out, "intent_item_item", &mut self.intent.item_item);
        push_alignment_mut(&mut out, "align_user", &mut self.align_user);
        push_alignment_mut(&mut out, "align_item", &mut self.align_item);
        push_mlp_mut(&mut out, "predict", &mut self.predict);
        out
    }

    pub fn num_tensors(&self) -> usize {
        self.named_tensors().len()
    }

    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.shape())
            .collect()
    }

    /// Registers every tensor on a tape in canonical order, so
    /// `ParamId(i)` matches position `i` of [`named_tensors`].
    pub fn bind(&self, tape: &mut GradientTape) -> BoundParams {
        let mut next = 0usize;
        let e_user = bind_one(tape, &mut next, &self.e_user);
        let e_item = bind_one(tape, &mut next, &self.e_item);
        let c_user = bind_one(tape, &mut next, &self.c_user);
        let c_item = bind_one(tape, &mut next, &self.c_item);
        let intent_user_user = bind_mlp(tape, &mut next, &self.intent.user_user);
        let intent_user_item = bind_mlp(tape, &mut next, &self.intent.user_item);
        let intent_item_user = bind_mlp(tape, &mut next, &self.intent.item_user);
        let intent_item_item = bind_mlp(tape, &mut next, &self.intent.item_item);
        let align_user = bind_align(tape, &mut next, &self.align_user);
        let align_item = bind_align(tape, &mut next, &self.align_item);
        let predict = bind_mlp(tape, &mut next, &self.predict);
        BoundParams {
            e_user,
            e_item,
            c_user,
            c_item,
            intent_user_user,
            intent_user_item,
            intent_item_user,
            intent_item_item,
            align_user,
            align_item,
            predict,
        }
    }
}

fn bind_one(tape: &mut GradientTape, next: &mut usize, t: &Tensor2) -> TensorId {
    let id = tape.parameter(ParamId(*next), t.clone());
    *next += 1;
    id
}

fn bind_mlp(tape: &mut GradientTape, next: &mut usize, w: &MlpWeights) -> Vec<(TensorId, TensorId)> {
    w.layers
        .iter()
        .map(|(wt, bt)| (bind_one(tape, next, wt), bind_one(tape, next, bt)))
        .collect()
}

fn bind_align(tape: &mut GradientTape, next: &mut usize, w: &AlignmentWeights) -> AlignmentBinding {
    match w {
        AlignmentWeights::Mlp(mlp) => AlignmentBinding::Mlp(bind_mlp(tape, next, mlp)),
        AlignmentWeights::CrossAttention {
            w_query,
            w_key,
            w_value,
        } => AlignmentBinding::CrossAttention {
            w_query: bind_one(tape, next, w_query),
            w_key: bind_one(tape, next, w_key),
            w_value: bind_one(tape, next, w_value),
        },
    }
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor2)>, prefix: &str, mlp: &'a MlpWeights) {
    for (i, (w, b)) in mlp.layers.iter().enumerate() {
        out.push((format!("{prefix}.w{i}"), w));
        out.push((format!("{prefix}.b{i}"), b));
    }
}

fn push_mlp_mut<'a>(
    out: &mut Vec<(String, &'a mut Tensor2)>,
    prefix: &str,
    mlp: &'a mut MlpWeights,
) {
    for (i, (w, b)) in mlp.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.w{i}"), w));
        out.push((format!("{prefix}.b{i}"), b));
    }
}

fn push_alignment<'a>(
    out: &mut Vec<(String, &'a Tensor2)>,
    prefix: &str,
    w: &'a AlignmentWeights,
) {
    match w {
        AlignmentWeights::Mlp(mlp) => push_mlp(out, prefix, mlp),
        AlignmentWeights::CrossAttention {
            w_query,
            w_key,
            w_value,
        } => {
            out.push((format!("{prefix}.w_query"), w_query));
            out.push((format!("{prefix}.w_key"), w_key));
            out.push((format!("{prefix}.w_value"), w_value));
        }
    }
}

fn push_alignment_mut<'a>(
    out: &mut Vec<(String, &'a mut Tensor2)>,
    prefix: &str,
    w: &'a mut AlignmentWeights,
) {
    match w {
        AlignmentWeights::Mlp(mlp) => push_mlp_mut(out, prefix, mlp),
        AlignmentWeights::CrossAttention {
            w_query,
            w_key,
            w_value,
        } => {
            out.push((format!("{prefix}.w_query"), w_query));
            out.push((format!("{prefix}.w_key"), w_key));
            out.push((format!("{prefix}.w_value"), w_value));
        }
    }
}

/// Tape handles for every parameter, mirroring [`ModelParameters`].
pub struct BoundParams {
    pub e_user: TensorId,
    pub e_item: TensorId,
    pub c_user: TensorId,
    pub c_item: TensorId,
    pub intent_user_user: Vec<(TensorId, TensorId)>,
    pub intent_user_item: Vec<(TensorId, TensorId)>,
    pub intent_item_user: Vec<(TensorId, TensorId)>,
    pub intent_item_item: Vec<(TensorId, TensorId)>,
    pub align_user: AlignmentBinding,
    pub align_item: AlignmentBinding,
    pub predict: Vec<(TensorId, TensorId)>,
}

/// Scores a flattened list of (user, item) pairs on the tape,
/// returning a `P x 1` column of raw relevance scores. Structure-aware
/// embeddings are recomputed from the current base embeddings inside
/// the tape, so gradients flow through the propagation.
pub fn score_pairs_on_tape(
    tape: &mut GradientTape,
    params: &ModelParameters,
    bound: &BoundParams,
    graph: &Rc<InteractionGraph>,
    users: Rc<[u32]>,
    items: Rc<[u32]>,
) -> Result<TensorId> {
    if users.len() != items.len() {
        return Err(Error::dimension(
            "score_pairs",
            format!("{} users vs {} items", users.len(), items.len()),
        ));
    }
    let cfg = &params.config;

    let z_user = tape.propagate_user(graph.clone(), bound.e_item)?;
    let z_item = tape.propagate_item(graph.clone(), bound.e_user)?;

    let zu = tape.gather_rows(z_user, users.clone())?;
    let eu = tape.gather_rows(bound.e_user, users)?;
    let zv = tape.gather_rows(z_item, items.clone())?;
    let ev = tape.gather_rows(bound.e_item, items)?;

    let mut t_user = None;
    let mut s_user = None;
    if cfg.perspectives.uses_user_side() {
        let p_u = tape.cosine_vs_rows(zu, bound.c_user)?;
        let p_v = tape.cosine_vs_rows(ev, bound.c_user)?;
        let h_u_raw =
            mlp_forward_on_tape(tape, &params.intent.user_user, &bound.intent_user_user, p_u)?;
        let h_u = tape.l1_normalize_rows(h_u_raw)?;
        let h_v =
            mlp_forward_on_tape(tape, &params.intent.user_item, &bound.intent_user_item, p_v)?;
        t_user = Some(align_on_tape(
            tape,
            cfg.alignment,
            &params.align_user,
            &bound.align_user,
            h_u,
            h_v,
            cfg.intent_dim,
        )?);
        s_user = Some(tape.row_cosine(zu, ev)?);
    }

    let mut t_item = None;
    let mut s_item = None;
    if cfg.perspectives.uses_item_side() {
        let pt_u = tape.cosine_vs_rows(eu, bound.c_item)?;
        let pt_v = tape.cosine_vs_rows(zv, bound.c_item)?;
        let ht_u_raw =
            mlp_forward_on_tape(tape, &params.intent.item_user, &bound.intent_item_user, pt_u)?;
        let ht_u = tape.l1_normalize_rows(ht_u_raw)?;
        let ht_v =
            mlp_forward_on_tape(tape, &params.intent.item_item, &bound.intent_item_item, pt_v)?;
        t_item = Some(align_on_tape(
            tape,
            cfg.alignment,
            &params.align_item,
            &bound.align_item,
            ht_u,
            ht_v,
            cfg.intent_dim,
        )?);
        s_item = Some(tape.row_cosine(zv, eu)?);
    }

    let fused = fuse_on_tape(
        tape,
        cfg.fusion,
        cfg.perspectives,
        FusionInputs {
            t_user,
            t_item,
            s_user,
            s_item,
        },
    )?;
    mlp_forward_on_tape(tape, &params.predict, &bound.predict, fused)
}

/// Per-entity tables the plain inference path precomputes once per
/// parameter snapshot: structure-aware embeddings and the four intent
/// embedding tables.
#[derive(Debug, Clone)]
pub struct EntityTables {
    pub z_user: Tensor2,
    pub z_item: Tensor2,
    /// `M x d'` user intent embeddings in the user prototype space
    /// (simplex rows).
    pub h_user: Tensor2,
    /// `M x d'` user intent embeddings in the item prototype space
    /// (simplex rows).
    pub h_user_x: Tensor2,
    /// `N x d'` item intent embeddings in the user prototype space.
    pub h_item: Tensor2,
    /// `N x d'` item intent embeddings in the item prototype space.
    pub h_item_x: Tensor2,
}

impl EntityTables {
    pub fn new(params: &ModelParameters, graph: &InteractionGraph) -> Result<Self> {
        let z_user = graph.propagate_to_users(&params.e_item)?;
        let z_item = graph.propagate_to_items(&params.e_user)?;

        let mut h_user = mlp_forward(
            &params.intent.user_user,
            &distributions_matrix(&z_user, &params.c_user)?,
        )?;
        l1_normalize_rows(&mut h_user)?;
        let h_item = mlp_forward(
            &params.intent.user_item,
            &distributions_matrix(&params.e_item, &params.c_user)?,
        )?;
        let mut h_user_x = mlp_forward(
            &params.intent.item_user,
            &distributions_matrix(&params.e_user, &params.c_item)?,
        )?;
        l1_normalize_rows(&mut h_user_x)?;
        let h_item_x = mlp_forward(
            &params.intent.item_item,
            &distributions_matrix(&z_item, &params.c_item)?,
        )?;

        Ok(EntityTables {
            z_user,
            z_item,
            h_user,
            h_user_x,
            h_item,
            h_item_x,
        })
    }
}

fn repeat_row(row: &[f64], times: usize) -> Tensor2 {
    let mut out = Tensor2::zeros(times, row.len());
    for r in 0..times {
        out.row_mut(r).copy_from_slice(row);
    }
    out
}

fn gather(table: &Tensor2, indices: &[u32]) -> Tensor2 {
    let mut out = Tensor2::zeros(indices.len(), table.cols());
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(table.row(i as usize));
    }
    out
}

/// Plain raw scores of `user` against each candidate item, using
/// precomputed [`EntityTables`].
pub fn score_items_for_user(
    params: &ModelParameters,
    tables: &EntityTables,
    user: usize,
    items: &[u32],
) -> Result<Vec<f64>> {
    if user >= params.num_users {
        return Err(Error::Usage(format!(
            "user index {user} out of range for {} users",
            params.num_users
        )));
    }
    let cfg = &params.config;
    let n = items.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut t_user = None;
    let mut s_user = None;
    if cfg.perspectives.uses_user_side() {
        let h_u = repeat_row(tables.h_user.row(user), n);
        let h_v = gather(&tables.h_item, items);
        t_user = Some(align_plain(
            cfg.alignment,
            &params.align_user,
            &h_u,
            &h_v,
            cfg.intent_dim,
        )?);
        let zu = tables.z_user.row(user);
        let mut s = Tensor2::zeros(n, 1);
        for (r, &i) in items.iter().enumerate() {
            s.set(
                r,
                0,
                crate::intent::cosine(zu, params.e_item.row(i as usize))?,
            );
        }
        s_user = Some(s);
    }

    let mut t_item = None;
    let mut s_item = None;
    if cfg.perspectives.uses_item_side() {
        let ht_u = repeat_row(tables.h_user_x.row(user), n);
        let ht_v = gather(&tables.h_item_x, items);
        t_item = Some(align_plain(
            cfg.alignment,
            &params.align_item,
            &ht_u,
            &ht_v,
            cfg.intent_dim,
        )?);
        let eu = params.e_user.row(user);
        let mut s = Tensor2::zeros(n, 1);
        for (r, &i) in items.iter().enumerate() {
            s.set(r, 0, crate::intent::cosine(tables.z_item.row(i as usize), eu)?);
        }
        s_item = Some(s);
    }

    let fused = fuse_plain(
        cfg.fusion,
        cfg.perspectives,
        FusionInputs {
            t_user,
            t_item,
            s_user,
            s_item,
        },
    )?;
    let scores = mlp_forward(&params.predict, &fused)?;
    Ok(scores.into_data())
}
