//! The two-layer relational graph convolutional encoder, the five prediction
//! heads, the sentiment/role prior classifiers with their L1 alignment
//! losses, and the combined training objective with hand-derived gradients.
//!
//! Per layer, a node's representation is
//! `h_i' = ReLU( sum_r (1/max(1,|N_i^r|)) * sum_{j in N_i^r} h_j W_r )`,
//! with a dedicated weight matrix for each of the 17 relation slots (8 base
//! relations, 8 inverses, one self-loop).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Role, Sentiment};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NUM_RELATION_SLOTS};
use crate::numkit::{
    l1_loss, matmul, matmul_a_bt, matmul_at_b, relu, relu_backward, softmax_backward, softmax_ce,
    softmax_rows, AdamW, Matrix, Moments, Scalar,
};

pub const NUM_STANCES: usize = 2;
pub const NUM_ABSTRACT_ENTITIES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_h1: usize,
    pub d_h2: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// When true the tweet-stance head reads the author and tweet embeddings
    /// concatenated; when false (text-only ablation) the tweet embedding
    /// alone.
    pub author_aware: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 256,
            d_h1: 100,
            d_h2: 50,
            lr: 0.0005,
            weight_decay: 0.0,
            seed: 0,
            author_aware: true,
        }
    }
}

impl ModelConfig {
    fn tweet_head_in(&self) -> usize {
        if self.author_aware {
            2 * self.d_h2
        } else {
            self.d_h2
        }
    }
}

/// All trainable tensors of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub layer1: Vec<Matrix<S>>,
    pub layer2: Vec<Matrix<S>>,
    pub head_tweet_stance: Matrix<S>,
    pub head_sent: Matrix<S>,
    pub head_role: Matrix<S>,
    pub head_map: Matrix<S>,
    pub head_entity_stance: Matrix<S>,
    pub prior_sent: Matrix<S>,
    pub prior_role: Matrix<S>,
}

fn glorot_uniform<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<S> {
    let scale: f64 = std::env::var("DBG_INIT_SCALE").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let limit = scale * (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| S::from_f64(rng.random_range(-limit..limit))).collect();
    Matrix::from_vec(rows, cols, data)
}

impl<S: Scalar> ModelParams<S> {
    /// Glorot-uniform initialization in fixed tensor order from the given
    /// RNG stream.
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let layer1 =
            (0..NUM_RELATION_SLOTS).map(|_| glorot_uniform(rng, config.d_in, config.d_h1)).collect();
        let layer2 =
            (0..NUM_RELATION_SLOTS).map(|_| glorot_uniform(rng, config.d_h1, config.d_h2)).collect();
        ModelParams {
            head_tweet_stance: glorot_uniform(rng, config.tweet_head_in(), NUM_STANCES),
            head_sent: glorot_uniform(rng, 2 * config.d_h2, 2),
            head_role: glorot_uniform(rng, 2 * config.d_h2, 2),
            head_map: glorot_uniform(rng, config.d_h2, NUM_ABSTRACT_ENTITIES),
            head_entity_stance: glorot_uniform(rng, 2 * config.d_h2, NUM_STANCES),
            prior_sent: glorot_uniform(rng, config.d_in, 2),
            prior_role: glorot_uniform(rng, config.d_in, 2),
            config,
            layer1,
            layer2,
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, m| m.fill(S::zero()));
        z
    }

    /// Every tensor with its stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix<S>)> {
        let mut out: Vec<(String, &Matrix<S>)> = Vec::new();
        for (i, m) in self.layer1.iter().enumerate() {
            out.push((format!("layer1.{i}"), m));
        }
        for (i, m) in self.layer2.iter().enumerate() {
            out.push((format!("layer2.{i}"), m));
        }
        out.push(("head.tweet_stance".into(), &self.head_tweet_stance));
        out.push(("head.sent".into(), &self.head_sent));
        out.push(("head.role".into(), &self.head_role));
        out.push(("head.map".into(), &self.head_map));
        out.push(("head.entity_stance".into(), &self.head_entity_stance));
        out.push(("prior.sent".into(), &self.prior_sent));
        out.push(("prior.role".into(), &self.prior_role));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<S>)> {
        let mut out: Vec<(String, &mut Matrix<S>)> = Vec::new();
        for (i, m) in self.layer1.iter_mut().enumerate() {
            out.push((format!("layer1.{i}"), m));
        }
        for (i, m) in self.layer2.iter_mut().enumerate() {
            out.push((format!("layer2.{i}"), m));
        }
        out.push(("head.tweet_stance".into(), &mut self.head_tweet_stance));
        out.push(("head.sent".into(), &mut self.head_sent));
        out.push(("head.role".into(), &mut self.head_role));
        out.push(("head.map".into(), &mut self.head_map));
        out.push(("head.entity_stance".into(), &mut self.head_entity_stance));
        out.push(("prior.sent".into(), &mut self.prior_sent));
        out.push(("prior.role".into(), &mut self.prior_role));
        out
    }

    /// Visits every tensor with a stable name, in a fixed order.
    pub fn visit<F: FnMut(&str, &Matrix<S>)>(&self, mut f: F) {
        for (name, m) in self.tensors() {
            f(&name, m);
        }
    }

    pub fn visit_mut<F: FnMut(&str, &mut Matrix<S>)>(&mut self, mut f: F) {
        for (name, m) in self.tensors_mut() {
            f(&name, m);
        }
    }

    /// Flattens all tensors into one vector (gradient-check plumbing).
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::new();
        self.visit(|_, m| out.extend_from_slice(m.data()));
        out
    }

    pub fn unflatten_into(&mut self, flat: &[S]) {
        let mut offset = 0;
        self.visit_mut(|_, m| {
            let len = m.data().len();
            m.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        });
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config,
            layer1: self.layer1.iter().map(Matrix::cast).collect(),
            layer2: self.layer2.iter().map(Matrix::cast).collect(),
            head_tweet_stance: self.head_tweet_stance.cast(),
            head_sent: self.head_sent.cast(),
            head_role: self.head_role.cast(),
            head_map: self.head_map.cast(),
            head_entity_stance: self.head_entity_stance.cast(),
            prior_sent: self.prior_sent.cast(),
            prior_role: self.prior_role.cast(),
        }
    }
}

/// Normalized aggregation of `h` rows along one relation slot, restricted to
/// destinations with nonzero in-degree. Returns the active destination list
/// and the compacted, already-normalized gather matrix.
fn aggregate_slot<S: Scalar>(
    g: &HeteroGraph,
    slot: usize,
    h: &Matrix<S>,
) -> Option<(Vec<u32>, Matrix<S>)> {
    let edges = g.edges(slot);
    if edges.is_empty() {
        return None;
    }
    let n = g.num_nodes();
    let mut row_of = vec![u32::MAX; n];
    let mut active: Vec<u32> = Vec::new();
    for node in 0..n {
        if g.in_degree(slot, node) > 0 {
            row_of[node] = active.len() as u32;
            active.push(node as u32);
        }
    }
    let mut compact = Matrix::zeros(active.len(), h.cols());
    for &(src, dst) in edges {
        let r = row_of[dst as usize] as usize;
        let src_row = h.row(src as usize);
        let dst_row = compact.row_mut(r);
        for (o, &x) in dst_row.iter_mut().zip(src_row.iter()) {
            *o += x;
        }
    }
    for (r, &dst) in active.iter().enumerate() {
        let inv = S::one() / S::from_f64(g.in_degree(slot, dst as usize) as f64);
        for x in compact.row_mut(r) {
            *x *= inv;
        }
    }
    Some((active, compact))
}

fn rgcn_layer<S: Scalar>(
    g: &HeteroGraph,
    h: &Matrix<S>,
    weights: &[Matrix<S>],
    d_out: usize,
) -> Result<Matrix<S>> {
    let mut pre = Matrix::zeros(g.num_nodes(), d_out);
    for slot in 0..NUM_RELATION_SLOTS {
        let Some((active, compact)) = aggregate_slot(g, slot, h) else { continue };
        let transformed = matmul(&compact, &weights[slot])?;
        for (r, &dst) in active.iter().enumerate() {
            let src_row = transformed.row(r);
            let dst_row = pre.row_mut(dst as usize);
            for (o, &x) in dst_row.iter_mut().zip(src_row.iter()) {
                *o += x;
            }
        }
    }
    Ok(pre)
}

/// Backward through one R-GCN layer. Accumulates weight gradients into
/// `dweights` and returns the gradient w.r.t. the layer input.
fn rgcn_layer_backward<S: Scalar>(
    g: &HeteroGraph,
    h: &Matrix<S>,
    weights: &[Matrix<S>],
    dpre: &Matrix<S>,
    dweights: &mut [Matrix<S>],
) -> Result<Matrix<S>> {
    let mut dh = Matrix::zeros(h.rows(), h.cols());
    for slot in 0..NUM_RELATION_SLOTS {
        let Some((active, compact)) = aggregate_slot(g, slot, h) else { continue };
        let mut row_of = vec![u32::MAX; g.num_nodes()];
        for (r, &dst) in active.iter().enumerate() {
            row_of[dst as usize] = r as u32;
        }
        let mut dm = Matrix::zeros(active.len(), dpre.cols());
        for (r, &dst) in active.iter().enumerate() {
            dm.row_mut(r).copy_from_slice(dpre.row(dst as usize));
        }
        dweights[slot].add_scaled(&matmul_at_b(&compact, &dm)?, S::one());
        let dgather = matmul_a_bt(&dm, &weights[slot])?;
        for &(src, dst) in g.edges(slot) {
            let r = row_of[dst as usize] as usize;
            let inv = S::one() / S::from_f64(g.in_degree(slot, dst as usize) as f64);
            let src_row = dh.row_mut(src as usize);
            for (o, &x) in src_row.iter_mut().zip(dgather.row(r).iter()) {
                *o += x * inv;
            }
        }
    }
    Ok(dh)
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RgcnActivations<S> {
    pub pre1: Matrix<S>,
    pub h1: Matrix<S>,
    pub pre2: Matrix<S>,
    /// Layer-2 output: the node embeddings E.
    pub h2: Matrix<S>,
}

/// Two R-GCN layers with ReLU.
pub fn rgcn_forward<S: Scalar>(
    g: &HeteroGraph,
    x: &Matrix<S>,
    p: &ModelParams<S>,
) -> Result<RgcnActivations<S>> {
    if x.cols() != p.config.d_in {
        return Err(Error::Dimension(format!(
            "feature dim {} does not match configured d_in {}",
            x.cols(),
            p.config.d_in
        )));
    }
    if x.rows() != g.num_nodes() {
        return Err(Error::Dimension(format!(
            "feature rows {} do not match node count {}",
            x.rows(),
            g.num_nodes()
        )));
    }
    let pre1 = rgcn_layer(g, x, &p.layer1, p.config.d_h1)?;
    let h1 = relu(&pre1);
    let pre2 = rgcn_layer(g, &h1, &p.layer2, p.config.d_h2)?;
    let h2 = relu(&pre2);
    Ok(RgcnActivations { pre1, h1, pre2, h2 })
}

/// Per-item class probabilities from every head plus the prior classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<S> {
    pub tweet_stance: Matrix<S>,
    pub sent: Matrix<S>,
    pub role: Matrix<S>,
    pub map: Matrix<S>,
    pub entity_stance: Matrix<S>,
    pub prior_sent: Matrix<S>,
    pub prior_role: Matrix<S>,
}

struct HeadCache<S> {
    acts: RgcnActivations<S>,
    tweet_inputs: Matrix<S>,
    mention_inputs: Matrix<S>,
    map_inputs: Matrix<S>,
    prior_inputs: Matrix<S>,
    tweet_logits: Matrix<S>,
    sent_logits: Matrix<S>,
    role_logits: Matrix<S>,
    map_logits: Matrix<S>,
    entity_stance_logits: Matrix<S>,
}

fn concat_rows<S: Scalar>(e: &Matrix<S>, pairs: &[(usize, usize)]) -> Matrix<S> {
    let d = e.cols();
    let mut out = Matrix::zeros(pairs.len(), 2 * d);
    for (i, &(a, b)) in pairs.iter().enumerate() {
        out.row_mut(i)[..d].copy_from_slice(e.row(a));
        out.row_mut(i)[d..].copy_from_slice(e.row(b));
    }
    out
}

fn gather_rows<S: Scalar>(e: &Matrix<S>, idxs: &[usize]) -> Matrix<S> {
    let mut out = Matrix::zeros(idxs.len(), e.cols());
    for (i, &ix) in idxs.iter().enumerate() {
        out.row_mut(i).copy_from_slice(e.row(ix));
    }
    out
}

fn heads_forward_cached<S: Scalar>(
    g: &HeteroGraph,
    x: &Matrix<S>,
    p: &ModelParams<S>,
) -> Result<(Predictions<S>, HeadCache<S>)> {
    let acts = rgcn_forward(g, x, p)?;
    let e = &acts.h2;
    let tweet_inputs = if p.config.author_aware {
        let pairs: Vec<(usize, usize)> = (0..g.num_tweets())
            .map(|ti| {
                let a = g.author_node(g.tweet_author_ordinal(ti)).expect("author-aware graph");
                (a, g.tweet_node(ti))
            })
            .collect();
        concat_rows(e, &pairs)
    } else {
        let idxs: Vec<usize> = (0..g.num_tweets()).map(|ti| g.tweet_node(ti)).collect();
        gather_rows(e, &idxs)
    };
    let mention_pairs: Vec<(usize, usize)> = (0..g.num_mentions())
        .map(|mo| (g.mention_node(mo), g.tweet_node(g.mention_tweet(mo))))
        .collect();
    let mention_inputs = concat_rows(e, &mention_pairs);
    let mention_nodes: Vec<usize> = (0..g.num_mentions()).map(|mo| g.mention_node(mo)).collect();
    let map_inputs = gather_rows(e, &mention_nodes);
    // Priors read the frozen input features of the mention nodes.
    let prior_inputs = gather_rows(x, &mention_nodes);

    let tweet_logits = matmul(&tweet_inputs, &p.head_tweet_stance)?;
    let sent_logits = matmul(&mention_inputs, &p.head_sent)?;
    let role_logits = matmul(&mention_inputs, &p.head_role)?;
    let map_logits = matmul(&map_inputs, &p.head_map)?;
    let entity_stance_logits = matmul(&mention_inputs, &p.head_entity_stance)?;
    let prior_sent_logits = matmul(&prior_inputs, &p.prior_sent)?;
    let prior_role_logits = matmul(&prior_inputs, &p.prior_role)?;

    let predictions = Predictions {
        tweet_stance: softmax_rows(&tweet_logits),
        sent: softmax_rows(&sent_logits),
        role: softmax_rows(&role_logits),
        map: softmax_rows(&map_logits),
        entity_stance: softmax_rows(&entity_stance_logits),
        prior_sent: softmax_rows(&prior_sent_logits),
        prior_role: softmax_rows(&prior_role_logits),
    };
    let cache = HeadCache {
        acts,
        tweet_inputs,
        mention_inputs,
        map_inputs,
        prior_inputs,
        tweet_logits,
        sent_logits,
        role_logits,
        map_logits,
        entity_stance_logits,
    };
    Ok((predictions, cache))
}

/// Forward pass through the encoder and every head.
pub fn heads_forward<S: Scalar>(
    g: &HeteroGraph,
    x: &Matrix<S>,
    p: &ModelParams<S>,
) -> Result<Predictions<S>> {
    Ok(heads_forward_cached(g, x, p)?.0)
}

/// Which items carry (pseudo-)labels for the masked loss terms. Entity-stance
/// supervision is derived from the containing tweet's label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub tweet_stance: Vec<Option<usize>>,
    pub mention_map: Vec<Option<usize>>,
    pub mention_sent: Vec<Option<usize>>,
    pub mention_role: Vec<Option<usize>>,
}

impl Labels {
    pub fn empty(n_tweets: usize, n_mentions: usize) -> Self {
        Labels {
            tweet_stance: vec![None; n_tweets],
            mention_map: vec![None; n_mentions],
            mention_sent: vec![None; n_mentions],
            mention_role: vec![None; n_mentions],
        }
    }

    fn unpack(items: &[Option<usize>], num_classes: usize) -> Result<(Vec<usize>, Vec<bool>)> {
        let mut labels = vec![0usize; items.len()];
        let mut mask = vec![false; items.len()];
        for (i, item) in items.iter().enumerate() {
            if let Some(class) = item {
                if *class >= num_classes {
                    return Err(Error::Validation(format!(
                        "label index {class} out of range for {num_classes} classes"
                    )));
                }
                labels[i] = *class;
                mask[i] = true;
            }
        }
        Ok((labels, mask))
    }
}

/// The individual terms of the combined loss L, all unit-weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub tweet_stance: f64,
    pub sent: f64,
    pub role: f64,
    pub map: f64,
    pub entity_stance: f64,
    pub sent_align: f64,
    pub role_align: f64,
    pub total: f64,
}

/// Computes L and all parameter gradients in one backward pass.
pub fn loss_and_grads<S: Scalar>(
    g: &HeteroGraph,
    x: &Matrix<S>,
    p: &ModelParams<S>,
    labels: &Labels,
) -> Result<(LossBreakdown, ModelParams<S>, Predictions<S>)> {
    let (predictions, cache) = heads_forward_cached(g, x, p)?;
    let mut grads = p.zeros_like();
    let n_nodes = g.num_nodes();
    let mut de = Matrix::zeros(n_nodes, p.config.d_h2);

    // Tweet stance CE.
    let (tweet_labels, tweet_mask) = Labels::unpack(&labels.tweet_stance, NUM_STANCES)?;
    let (loss_tweet, dz_tweet) = softmax_ce(&cache.tweet_logits, &tweet_labels, &tweet_mask);
    grads.head_tweet_stance.add_scaled(&matmul_at_b(&cache.tweet_inputs, &dz_tweet)?, S::one());
    let d_tweet_in = matmul_a_bt(&dz_tweet, &p.head_tweet_stance)?;
    let d = p.config.d_h2;
    for ti in 0..g.num_tweets() {
        let row = d_tweet_in.row(ti);
        if p.config.author_aware {
            let a = g.author_node(g.tweet_author_ordinal(ti)).expect("author-aware graph");
            let t = g.tweet_node(ti);
            for (o, &v) in de.row_mut(a).iter_mut().zip(row[..d].iter()) {
                *o += v;
            }
            for (o, &v) in de.row_mut(t).iter_mut().zip(row[d..].iter()) {
                *o += v;
            }
        } else {
            let t = g.tweet_node(ti);
            for (o, &v) in de.row_mut(t).iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
    }

    // Mention heads: CE plus, for sentiment/role, the L1 alignment with the
    // prior classifiers over all mentions.
    let (sent_labels, sent_mask) = Labels::unpack(&labels.mention_sent, 2)?;
    let (role_labels, role_mask) = Labels::unpack(&labels.mention_role, 2)?;
    let (map_labels, map_mask) = Labels::unpack(&labels.mention_map, NUM_ABSTRACT_ENTITIES)?;
    let entity_stance_items: Vec<Option<usize>> =
        (0..g.num_mentions()).map(|mo| labels.tweet_stance[g.mention_tweet(mo)]).collect();
    let (es_labels, es_mask) = Labels::unpack(&entity_stance_items, NUM_STANCES)?;

    let (loss_sent, dz_sent_ce) = softmax_ce(&cache.sent_logits, &sent_labels, &sent_mask);
    let (loss_role, dz_role_ce) = softmax_ce(&cache.role_logits, &role_labels, &role_mask);
    let (loss_map, dz_map) = softmax_ce(&cache.map_logits, &map_labels, &map_mask);
    let (loss_es, dz_es) = softmax_ce(&cache.entity_stance_logits, &es_labels, &es_mask);

    let (loss_sa, dp_sent) = l1_loss(&predictions.sent, &predictions.prior_sent)?;
    let (loss_ra, dp_role) = l1_loss(&predictions.role, &predictions.prior_role)?;
    let mut dz_sent = softmax_backward(&predictions.sent, &dp_sent);
    dz_sent.add_scaled(&dz_sent_ce, S::one());
    let mut dz_role = softmax_backward(&predictions.role, &dp_role);
    dz_role.add_scaled(&dz_role_ce, S::one());
    // The prior side of each alignment term sees the negated L1 gradient.
    let dz_prior_sent = softmax_backward(&predictions.prior_sent, &dp_sent.map(|v| -v));
    let dz_prior_role = softmax_backward(&predictions.prior_role, &dp_role.map(|v| -v));

    grads.head_sent.add_scaled(&matmul_at_b(&cache.mention_inputs, &dz_sent)?, S::one());
    grads.head_role.add_scaled(&matmul_at_b(&cache.mention_inputs, &dz_role)?, S::one());
    grads.head_map.add_scaled(&matmul_at_b(&cache.map_inputs, &dz_map)?, S::one());
    grads
        .head_entity_stance
        .add_scaled(&matmul_at_b(&cache.mention_inputs, &dz_es)?, S::one());
    grads.prior_sent.add_scaled(&matmul_at_b(&cache.prior_inputs, &dz_prior_sent)?, S::one());
    grads.prior_role.add_scaled(&matmul_at_b(&cache.prior_inputs, &dz_prior_role)?, S::one());

    let mut d_mention_in = matmul_a_bt(&dz_sent, &p.head_sent)?;
    d_mention_in.add_scaled(&matmul_a_bt(&dz_role, &p.head_role)?, S::one());
    d_mention_in.add_scaled(&matmul_a_bt(&dz_es, &p.head_entity_stance)?, S::one());
    let d_map_in = matmul_a_bt(&dz_map, &p.head_map)?;
    for mo in 0..g.num_mentions() {
        let m = g.mention_node(mo);
        let t = g.tweet_node(g.mention_tweet(mo));
        let row = d_mention_in.row(mo);
        for (o, &v) in de.row_mut(m).iter_mut().zip(row[..d].iter()) {
            *o += v;
        }
        for (o, &v) in de.row_mut(t).iter_mut().zip(row[d..].iter()) {
            *o += v;
        }
        for (o, &v) in de.row_mut(m).iter_mut().zip(d_map_in.row(mo).iter()) {
            *o += v;
        }
    }

    // Backward through the two R-GCN layers.
    let dpre2 = relu_backward(&cache.acts.pre2, &de);
    let dh1 = rgcn_layer_backward(g, &cache.acts.h1, &p.layer2, &dpre2, &mut grads.layer2)?;
    let dpre1 = relu_backward(&cache.acts.pre1, &dh1);
    rgcn_layer_backward(g, x, &p.layer1, &dpre1, &mut grads.layer1)?;

    let breakdown = LossBreakdown {
        tweet_stance: loss_tweet.as_f64(),
        sent: loss_sent.as_f64(),
        role: loss_role.as_f64(),
        map: loss_map.as_f64(),
        entity_stance: loss_es.as_f64(),
        sent_align: loss_sa.as_f64(),
        role_align: loss_ra.as_f64(),
        total: (loss_tweet + loss_sent + loss_role + loss_map + loss_es + loss_sa + loss_ra).as_f64(),
    };
    Ok((breakdown, grads, predictions))
}

/// AdamW state for every model tensor.
#[derive(Debug, Clone)]
pub struct OptState<S> {
    pub opt: AdamW<S>,
    pub moments: BTreeMap<String, Moments<S>>,
}

impl<S: Scalar> OptState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let mut moments = BTreeMap::new();
        params.visit(|name, m| {
            moments.insert(name.to_string(), Moments::zeros(m.data().len()));
        });
        OptState {
            opt: AdamW::new(S::from_f64(params.config.lr), S::from_f64(params.config.weight_decay)),
            moments,
        }
    }

    /// One full-batch optimizer step.
    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &ModelParams<S>) {
        self.opt.begin_step();
        for ((name, p), (gname, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            debug_assert_eq!(name, gname);
            let mom = self.moments.get_mut(&name).expect("moment buffers cover all tensors");
            self.opt.update(p.data_mut(), g.data(), mom);
        }
    }
}

/// Out-of-domain mention set for prior pretraining: frozen feature rows with
/// sentiment and role labels.
#[derive(Debug, Clone)]
pub struct OodSet<S> {
    pub features: Matrix<S>,
    pub sent: Vec<Sentiment>,
    pub role: Vec<Role>,
}

#[derive(Debug, Clone)]
pub struct PriorFit<S> {
    pub sent_weights: Matrix<S>,
    pub role_weights: Matrix<S>,
    pub sent_val_accuracy: f64,
    pub role_val_accuracy: f64,
    pub sent_epochs: usize,
    pub role_epochs: usize,
    pub sent_best_epoch: usize,
    pub role_best_epoch: usize,
}

const PRIOR_MAX_EPOCHS: usize = 200;
const PRIOR_WEIGHT_DECAY: f64 = 0.01;

fn accuracy<S: Scalar>(logits: &Matrix<S>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

fn fit_linear_softmax<S: Scalar>(
    features: &Matrix<S>,
    labels: &[usize],
    num_classes: usize,
    lr: f64,
    seed: u64,
    patience: usize,
) -> Result<(Matrix<S>, f64, usize, usize)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n = features.rows();
    if n == 0 {
        return Err(Error::Validation("empty training set for prior classifier".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (((n as f64) * 0.8).round() as usize).clamp(1, n);
    let train_idx = &order[..n_train];
    let val_idx = if n_train < n { &order[n_train..] } else { &order[..n_train] };
    let gather = |idxs: &[usize]| -> (Matrix<S>, Vec<usize>) {
        let m = gather_rows(features, idxs);
        let l = idxs.iter().map(|&i| labels[i]).collect();
        (m, l)
    };
    let (train_x, train_y) = gather(train_idx);
    let (val_x, val_y) = gather(val_idx);
    let train_mask = vec![true; train_y.len()];

    // Zero init: a linear softmax model starts at the uniform predictor.
    // Weight decay keeps the fitted logits bounded, so the classifier's
    // confidence tracks how consistently the data supports each label even
    // when the validation split is tiny.
    let mut weights: Matrix<S> = Matrix::zeros(features.cols(), num_classes);
    let mut opt = AdamW::new(S::from_f64(lr), S::from_f64(PRIOR_WEIGHT_DECAY));
    let mut moments = Moments::zeros(weights.data().len());
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_weights = weights.clone();
    let mut epochs_run = 0usize;
    for epoch in 1..=PRIOR_MAX_EPOCHS {
        epochs_run = epoch;
        let logits = matmul(&train_x, &weights)?;
        let (_, dz) = softmax_ce(&logits, &train_y, &train_mask);
        let dw = matmul_at_b(&train_x, &dz)?;
        opt.begin_step();
        opt.update(weights.data_mut(), dw.data(), &mut moments);
        let val_logits = matmul(&val_x, &weights)?;
        let acc = accuracy(&val_logits, &val_y);
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_weights = weights.clone();
        } else if epoch - best_epoch >= patience {
            break;
        }
    }
    Ok((best_weights, best_acc, epochs_run, best_epoch))
}

/// Fits the sentiment and role prior classifiers on an out-of-domain set,
/// with early stopping on held-out accuracy.
pub fn pretrain_priors<S: Scalar>(
    ood: &OodSet<S>,
    lr: f64,
    seed: u64,
    patience: usize,
) -> Result<PriorFit<S>> {
    if ood.features.rows() == 0 {
        return Err(Error::Validation("empty out-of-domain set".into()));
    }
    if ood.features.rows() != ood.sent.len() || ood.features.rows() != ood.role.len() {
        return Err(Error::Validation("out-of-domain labels do not match feature rows".into()));
    }
    let sent_labels: Vec<usize> = ood.sent.iter().map(|s| s.code()).collect();
    let role_labels: Vec<usize> = ood.role.iter().map(|r| r.code()).collect();
    let (sent_weights, sent_acc, sent_epochs, sent_best) =
        fit_linear_softmax(&ood.features, &sent_labels, 2, lr, seed, patience)?;
    let (role_weights, role_acc, role_epochs, role_best) =
        fit_linear_softmax(&ood.features, &role_labels, 2, lr, seed.wrapping_add(1), patience)?;
    Ok(PriorFit {
        sent_weights,
        role_weights,
        sent_val_accuracy: sent_acc,
        role_val_accuracy: role_acc,
        sent_epochs,
        role_epochs,
        sent_best_epoch: sent_best,
        role_best_epoch: role_best,
    })
}

/// One refresher pass of the prior classifiers on currently labeled mentions.
pub fn refresh_priors<S: Scalar>(
    params: &mut ModelParams<S>,
    prior_inputs: &Matrix<S>,
    sent_items: &[Option<usize>],
    role_items: &[Option<usize>],
) -> Result<()> {
    let (sent_labels, sent_mask) = Labels::unpack(sent_items, 2)?;
    let (role_labels, role_mask) = Labels::unpack(role_items, 2)?;
    let lr = S::from_f64(params.config.lr);
    for (weights, labels, mask) in [
        (&mut params.prior_sent, &sent_labels, &sent_mask),
        (&mut params.prior_role, &role_labels, &role_mask),
    ] {
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let logits = matmul(prior_inputs, weights)?;
        let (_, dz) = softmax_ce(&logits, labels, mask);
        let dw = matmul_at_b(prior_inputs, &dz)?;
        // Plain gradient step; the AdamW state belongs to the joint loss.
        weights.add_scaled(&dw, -lr);
    }
    Ok(())
}

/// Graph shape recorded in a checkpoint, validated against the corpus at
/// inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeCounts {
    pub authors: u64,
    pub tweets: u64,
    pub mentions: u64,
    pub hashtags: u64,
    pub keywords: u64,
}

impl NodeCounts {
    pub fn of(graph: &HeteroGraph) -> NodeCounts {
        use crate::graph::NodeKind;
        let mut c = NodeCounts { authors: 0, tweets: 0, mentions: 0, hashtags: 0, keywords: 0 };
        for n in graph.nodes() {
            match n.kind {
                NodeKind::Author => c.authors += 1,
                NodeKind::Tweet => c.tweets += 1,
                NodeKind::Entity => c.mentions += 1,
                NodeKind::Hashtag => c.hashtags += 1,
                NodeKind::Keyword => c.keywords += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub counts: NodeCounts,
    pub epoch: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

/// A resumable training snapshot: parameters, optimizer state, and metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub opt_step: u64,
    pub moments: BTreeMap<String, Moments<f32>>,
    pub meta: CheckpointMeta,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PGN1";
const CHECKPOINT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, m: &Matrix<f32>) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, m.rows() as u32)?;
    write_u32(w, m.cols() as u32)?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Matrix<f32>)> {
    let name_len = read_u32(r)? as usize;
    if name_len > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible tensor name length {name_len}")));
    }
    let mut name_bytes = vec![0u8; name_len];
    read_exact(r, &mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut data = vec![0f32; rows * cols];
    for v in data.iter_mut() {
        let mut b = [0u8; 4];
        read_exact(r, &mut b)?;
        *v = f32::from_le_bytes(b);
    }
    Ok((name, Matrix::from_vec(rows, cols, data)))
}

/// Serializes a checkpoint: magic, version, config block, metadata, then
/// length-prefixed named f32 tensors (parameters and optimizer moments).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    let cfg = &ckpt.params.config;
    write_u32(&mut w, cfg.d_in as u32)?;
    write_u32(&mut w, cfg.d_h1 as u32)?;
    write_u32(&mut w, cfg.d_h2 as u32)?;
    write_f64(&mut w, cfg.lr)?;
    write_f64(&mut w, cfg.weight_decay)?;
    write_u64(&mut w, cfg.seed)?;
    write_u32(&mut w, cfg.author_aware as u32)?;
    let meta = &ckpt.meta;
    for v in [meta.counts.authors, meta.counts.tweets, meta.counts.mentions, meta.counts.hashtags, meta.counts.keywords]
    {
        write_u64(&mut w, v)?;
    }
    write_u64(&mut w, meta.epoch)?;
    write_u64(&mut w, meta.rng_seed)?;
    w.write_all(&meta.rng_word_pos.to_le_bytes())?;
    write_u64(&mut w, ckpt.opt_step)?;

    let mut tensors: Vec<(String, Matrix<f32>)> = Vec::new();
    ckpt.params.visit(|name, m| tensors.push((name.to_string(), m.clone())));
    for (name, mom) in &ckpt.moments {
        tensors.push((format!("adamw.m.{name}"), Matrix::from_vec(1, mom.m.len(), mom.m.clone())));
        tensors.push((format!("adamw.v.{name}"), Matrix::from_vec(1, mom.v.len(), mom.v.clone())));
    }
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, m) in &tensors {
        write_tensor(&mut w, name, m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let d_in = read_u32(&mut r)? as usize;
    let d_h1 = read_u32(&mut r)? as usize;
    let d_h2 = read_u32(&mut r)? as usize;
    let lr = read_f64(&mut r)?;
    let weight_decay = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let author_aware = read_u32(&mut r)? != 0;
    let config = ModelConfig { d_in, d_h1, d_h2, lr, weight_decay, seed, author_aware };
    let counts = NodeCounts {
        authors: read_u64(&mut r)?,
        tweets: read_u64(&mut r)?,
        mentions: read_u64(&mut r)?,
        hashtags: read_u64(&mut r)?,
        keywords: read_u64(&mut r)?,
    };
    let epoch = read_u64(&mut r)?;
    let rng_seed = read_u64(&mut r)?;
    let mut word_pos_bytes = [0u8; 16];
    read_exact(&mut r, &mut word_pos_bytes)?;
    let rng_word_pos = u128::from_le_bytes(word_pos_bytes);
    let opt_step = read_u64(&mut r)?;

    let n_tensors = read_u32(&mut r)? as usize;
    let mut by_name: BTreeMap<String, Matrix<f32>> = BTreeMap::new();
    for _ in 0..n_tensors {
        let (name, m) = read_tensor(&mut r)?;
        by_name.insert(name, m);
    }
    let mut params = {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ModelParams::<f32>::init(config, &mut rng)
    };
    let mut missing: Option<String> = None;
    params.visit_mut(|name, m| {
        match by_name.get(name) {
            Some(t) if t.rows() == m.rows() && t.cols() == m.cols() => *m = t.clone(),
            _ => missing = Some(name.to_string()),
        }
    });
    if let Some(name) = missing {
        return Err(Error::Checkpoint(format!("missing or misshapen tensor {name}")));
    }
    let mut moments = BTreeMap::new();
    params.visit(|name, m| {
        let len = m.data().len();
        let m_buf = by_name.get(&format!("adamw.m.{name}")).map(|t| t.data().to_vec());
        let v_buf = by_name.get(&format!("adamw.v.{name}")).map(|t| t.data().to_vec());
        let mom = match (m_buf, v_buf) {
            (Some(mb), Some(vb)) if mb.len() == len && vb.len() == len => Moments { m: mb, v: vb },
            _ => Moments::zeros(len),
        };
        moments.insert(name.to_string(), mom);
    });
    Ok(Checkpoint {
        params,
        opt_step,
        moments,
        meta: CheckpointMeta { counts, epoch, rng_seed, rng_word_pos },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Author, Corpus, EntityMention, GoldTriple, Stance, Tweet};
    use crate::graph::build_graph;
    use crate::numkit::grad_check;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn author(id: &str, profile: Option<&str>) -> Author {
        Author {
            id: id.into(),
            profile: profile.map(String::from),
            keywords: vec![],
            retweets: vec![],
            follows: None,
            gold_stance: None,
            imaginary: false,
        }
    }

    fn tweet(id: &str, author_id: &str, text: &str) -> Tweet {
        Tweet {
            id: id.into(),
            author_id: author_id.into(),
            text: text.into(),
            timestamp: "2020-05-26".into(),
            hashtags: vec![],
            entities: vec![],
            domains: None,
            gold_stance: None,
            gold_ambiguous: None,
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn small_config(author_aware: bool) -> ModelConfig {
        ModelConfig { d_in: 6, d_h1: 5, d_h2: 4, seed: 3, author_aware, ..ModelConfig::default() }
    }

    /// A small corpus whose graph exercises every relation kind.
    fn small_corpus() -> Corpus {
        let mut a1 = author("a1", Some("loud profile"));
        a1.keywords = vec!["blm".into()];
        a1.retweets = vec!["a2".into()];
        let a2 = author("a2", Some("quiet profile"));
        let mut t1 = tweet("t1", "a1", "the police are out");
        t1.hashtags = vec!["blm".into()];
        t1.entities = vec![EntityMention {
            id: "m1".into(),
            surface: "police".into(),
            start: 4,
            end: 10,
            gold: Some(GoldTriple {
                entity: crate::corpus::AbstractEntity::Police,
                sentiment: Sentiment::Negative,
                role: Role::Actor,
            }),
        }];
        t1.gold_stance = Some(Stance::ProBlackLM);
        let mut t2 = tweet("t2", "a2", "cops keep us safe");
        t2.hashtags = vec!["backtheblue".into()];
        t2.entities = vec![EntityMention {
            id: "m2".into(),
            surface: "cops".into(),
            start: 0,
            end: 4,
            gold: None,
        }];
        let mut t3 = tweet("t3", "a1", "march for justice");
        t3.hashtags = vec!["blm".into()];
        Corpus::new(vec![a1, a2], vec![t1, t2, t3]).unwrap()
    }

    #[test]
    fn identity_self_loop_propagates_nonnegative_input() {
        let c = Corpus::new(vec![author("a1", Some("p"))], vec![]).unwrap();
        let g = build_graph(&c, None).unwrap();
        let cfg = ModelConfig { d_in: 4, d_h1: 4, d_h2: 4, seed: 1, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::<f64>::init(cfg, &mut rng);
        for m in p.layer1.iter_mut().chain(p.layer2.iter_mut()) {
            *m = Matrix::identity(4);
        }
        let x = Matrix::from_vec(1, 4, vec![0.3, 0.0, 1.2, 0.5]);
        let acts = rgcn_forward(&g, &x, &p).unwrap();
        assert_eq!(acts.h2, x);
    }

    #[test]
    fn two_neighbors_contribute_their_mean() {
        let mut a1 = author("a1", None);
        a1.retweets = vec!["a2".into(), "a3".into()];
        let c = Corpus::new(vec![a1, author("a2", None), author("a3", None)], vec![]).unwrap();
        let g = build_graph(&c, None).unwrap();
        let cfg = ModelConfig { d_in: 2, d_h1: 2, d_h2: 2, seed: 1, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::<f64>::init(cfg, &mut rng);
        for m in p.layer1.iter_mut() {
            m.fill(0.0);
        }
        // Only the inverse retweet relation carries weight; a1 receives the
        // mean of its two retweet targets.
        p.layer1[crate::graph::RelationKind::AuthorRetweets.inverse_slot()] = Matrix::identity(2);
        let x = Matrix::from_vec(3, 2, vec![0.0, 0.0, 0.4, 0.8, 0.6, 0.2]);
        let acts = rgcn_forward(&g, &x, &p).unwrap();
        assert_relative_eq!(acts.pre1.get(0, 0), 0.5, max_relative = 1e-12);
        assert_relative_eq!(acts.pre1.get(0, 1), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn hand_computed_forward_matches() {
        // 1 author, 1 tweet, 1 mention; d=2 everywhere; every weight matrix a
        // scalar multiple of the identity so the expected values can be
        // written out longhand below.
        let mut t1 = tweet("t1", "a1", "police here");
        t1.entities = vec![EntityMention {
            id: "m1".into(),
            surface: "police".into(),
            start: 0,
            end: 6,
            gold: None,
        }];
        let c = Corpus::new(vec![author("a1", None)], vec![t1]).unwrap();
        let g = build_graph(&c, None).unwrap();
        let cfg = ModelConfig { d_in: 2, d_h1: 2, d_h2: 2, seed: 1, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::<f64>::init(cfg, &mut rng);
        let scaled = |s: f64| {
            let mut m = Matrix::<f64>::zeros(2, 2);
            m.set(0, 0, s);
            m.set(1, 1, s);
            m
        };
        for m in p.layer1.iter_mut().chain(p.layer2.iter_mut()) {
            m.fill(0.0);
        }
        use crate::graph::{RelationKind, SELF_LOOP_SLOT};
        for layer in [&mut p.layer1, &mut p.layer2] {
            layer[SELF_LOOP_SLOT] = scaled(1.0);
            layer[RelationKind::AuthorTweets.slot()] = scaled(0.5);
            layer[RelationKind::AuthorTweets.inverse_slot()] = scaled(0.2);
            layer[RelationKind::MentionPosActor.slot()] = scaled(0.1);
            layer[RelationKind::MentionPosActor.inverse_slot()] = scaled(0.3);
        }
        // Node ordinals: author 0, tweet 1, mention 2.
        let x = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let acts = rgcn_forward(&g, &x, &p).unwrap();
        // Layer 1, scalar weights act per coordinate:
        //   author : self 1.0*[1,0]   + inv(author-tweets) 0.2*[0,1]    = [1.0, 0.2]
        //   tweet  : self 1.0*[0,1]   + author-tweets 0.5*[1,0]
        //            + mention-pos-actor 0.1*[0.5,0.5]                  = [0.55, 1.05]
        //   mention: self 1.0*[.5,.5] + inv(mention) 0.3*[0,1]          = [0.5, 0.8]
        assert_relative_eq!(acts.h1.get(0, 0), 1.0, max_relative = 1e-10);
        assert_relative_eq!(acts.h1.get(0, 1), 0.2, max_relative = 1e-10);
        assert_relative_eq!(acts.h1.get(1, 0), 0.55, max_relative = 1e-10);
        assert_relative_eq!(acts.h1.get(1, 1), 1.05, max_relative = 1e-10);
        assert_relative_eq!(acts.h1.get(2, 0), 0.5, max_relative = 1e-10);
        assert_relative_eq!(acts.h1.get(2, 1), 0.8, max_relative = 1e-10);
        // Layer 2 repeats the same mixing on h1 (all values nonnegative, so
        // ReLU is the identity here).
        assert_relative_eq!(acts.h2.get(0, 0), 1.0 + 0.2 * 0.55, max_relative = 1e-10);
        assert_relative_eq!(acts.h2.get(0, 1), 0.2 + 0.2 * 1.05, max_relative = 1e-10);
        assert_relative_eq!(acts.h2.get(1, 0), 0.55 + 0.5 * 1.0 + 0.1 * 0.5, max_relative = 1e-10);
        assert_relative_eq!(acts.h2.get(1, 1), 1.05 + 0.5 * 0.2 + 0.1 * 0.8, max_relative = 1e-10);
        assert_relative_eq!(acts.h2.get(2, 0), 0.5 + 0.3 * 0.55, max_relative = 1e-10);
        assert_relative_eq!(acts.h2.get(2, 1), 0.8 + 0.3 * 1.05, max_relative = 1e-10);
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let c = small_corpus();
        let g = build_graph(&c, None).unwrap();
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ModelParams::<f64>::init(cfg, &mut rng);
        p.visit_mut(|_, m| m.fill(0.0));
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let x = random_features(&mut rng2, g.num_nodes(), cfg.d_in);
        let preds = heads_forward(&g, &x, &p).unwrap();
        for i in 0..preds.tweet_stance.rows() {
            assert_relative_eq!(preds.tweet_stance.get(i, 0), 0.5, max_relative = 1e-12);
        }
        for i in 0..preds.map.rows() {
            for j in 0..NUM_ABSTRACT_ENTITIES {
                assert_relative_eq!(preds.map.get(i, j), 1.0 / 11.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let c = small_corpus();
        let g = build_graph(&c, None).unwrap();
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let p = ModelParams::<f64>::init(cfg, &mut rng);
        let x = random_features(&mut rng, g.num_nodes(), cfg.d_in);
        let preds = heads_forward(&g, &x, &p).unwrap();
        for m in [&preds.tweet_stance, &preds.sent, &preds.role, &preds.map, &preds.entity_stance, &preds.prior_sent, &preds.prior_role] {
            for i in 0..m.rows() {
                let s: f64 = m.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mapping_head_depends_only_on_mention_embedding() {
        let c = small_corpus();
        let g = build_graph(&c, None).unwrap();
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let p = ModelParams::<f64>::init(cfg, &mut rng);
        let x = random_features(&mut rng, g.num_nodes(), cfg.d_in);
        let before = heads_forward(&g, &x, &p).unwrap();
        let mut p2 = p.clone();
        p2.head_sent.fill(7.0);
        p2.head_tweet_stance.fill(-3.0);
        p2.prior_sent.fill(2.0);
        let after = heads_forward(&g, &x, &p2).unwrap();
        assert_eq!(before.map, after.map);
    }

    #[test]
    fn empty_labels_with_matching_priors_give_zero_loss() {
        let c = small_corpus();
        let g = build_graph(&c, None).unwrap();
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ModelParams::<f64>::init(cfg, &mut rng);
        // All-zero weights: every head and prior outputs the uniform
        // distribution, so the alignment terms vanish too.
        p.visit_mut(|_, m| m.fill(0.0));
        let x = random_features(&mut rng, g.num_nodes(), cfg.d_in);
        let labels = Labels::empty(g.num_tweets(), g.num_mentions());
        let (loss, grads, _) = loss_and_grads(&g, &x, &p, &labels).unwrap();
        assert_eq!(loss.total, 0.0);
        let flat = grads.flatten();
        assert!(flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_labeled_tweet_uniform_prediction_costs_ln2() {
        let c = small_corpus();
        let g = build_graph(&c, None).unwrap();
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ModelParams::<f64>::init(cfg, &mut rng);
        p.visit_mut(|_, m| m.fill(0.0));
        let x = random_features(&mut rng, g.num_nodes(), cfg.d_in);
        let mut labels = Labels::empty(g.num_tweets(), g.num_mentions());
        labels.tweet_stance[0] = Some(0);
        let (loss, _, _) = loss_and_grads(&g, &x, &p, &labels).unwrap();
        // Entity-stance supervision derives from the tweet label, so the
        // labeled tweet's one mention adds a second ln 2 term.
        assert_relative_eq!(loss.tweet_stance, std::f64::consts::LN_2, max_relative = 1e-12);
        assert_relative_eq!(loss.entity_stance, std::f64::consts::LN_2, max_relative = 1e-12);
        assert_relative_eq!(loss.total, 2.0 * std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn full_loss_passes_gradient_check_on_small_graph() {
        for author_aware in [true, false] {
            let c = small_corpus();
            let g = build_graph(&c, None).unwrap();
            let cfg = small_config(author_aware);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let p = ModelParams::<f64>::init(cfg, &mut rng);
            let x = random_features(&mut rng, g.num_nodes(), cfg.d_in);
            let mut labels = Labels::empty(g.num_tweets(), g.num_mentions());
            labels.tweet_stance[0] = Some(0);
            labels.tweet_stance[1] = Some(1);
            labels.mention_map[0] = Some(1);
            labels.mention_sent[0] = Some(1);
            labels.mention_role[1] = Some(0);
            let (_, grads, _) = loss_and_grads(&g, &x, &p, &labels).unwrap();
            let analytic = grads.flatten();
            let x0 = p.flatten();
            let mut probe = p.clone();
            let f = |theta: &[f64]| {
                probe.unflatten_into(theta);
                loss_and_grads(&g, &x, &probe, &labels).unwrap().0.total
            };
            let err = grad_check(f, &x0, &analytic, 1e-4);
            assert!(err <= 1e-4, "author_aware={author_aware}: max rel err {err}");
        }
    }

    #[test]
    fn alignment_gradients_reach_prior_weights() {
        let c = small_corpus();
        let g = build_graph(&c, None).unwrap();
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let p = ModelParams::<f64>::init(cfg, &mut rng);
        let x = random_features(&mut rng, g.num_nodes(), cfg.d_in);
        let labels = Labels::empty(g.num_tweets(), g.num_mentions());
        let (loss, grads, _) = loss_and_grads(&g, &x, &p, &labels).unwrap();
        assert!(loss.sent_align > 0.0);
        assert!(grads.prior_sent.data().iter().any(|&v| v != 0.0));
        assert!(grads.prior_role.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn permuting_tweet_order_preserves_predictions() {
        let cfg_gen = crate::synthgen::GenConfig { seed: 71, n_authors: 8, ..Default::default() };
        let mut corpus = crate::synthgen::generate(&cfg_gen, &crate::synthgen::Lexicon::builtin()).unwrap();
        // Give every author a profile so feature rows depend only on content.
        let authors: Vec<Author> = corpus
            .authors
            .iter()
            .map(|a| Author { profile: Some(format!("profile of {}", a.id)), ..a.clone() })
            .collect();
        corpus = Corpus::new(authors, corpus.tweets.clone()).unwrap();
        let mut tweets = corpus.tweets.clone();
        tweets.reverse();
        let permuted = Corpus::new(corpus.authors.clone(), tweets).unwrap();

        let cfg = ModelConfig { d_in: 32, d_h1: 12, d_h2: 8, seed: 5, ..ModelConfig::default() };
        let f = crate::featurize::HashFeaturizer::new(cfg.d_in).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let p64 = ModelParams::<f32>::init(cfg, &mut rng);

        let run = |c: &Corpus| {
            let g = build_graph(c, None).unwrap();
            let x = crate::featurize::build_node_features(c, &g, &f, 0).unwrap();
            let preds = heads_forward(&g, &x, &p64).unwrap();
            let by_id: BTreeMap<String, Vec<f32>> = (0..g.num_tweets())
                .map(|ti| (c.tweets[ti].id.clone(), preds.tweet_stance.row(ti).to_vec()))
                .collect();
            by_id
        };
        let a = run(&corpus);
        let b = run(&permuted);
        assert_eq!(a.len(), b.len());
        for (id, pa) in &a {
            let pb = &b[id];
            for (x, y) in pa.iter().zip(pb.iter()) {
                assert!((x - y).abs() < 1e-5, "tweet {id}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn prior_pretraining_separable_set_reaches_full_accuracy() {
        let n = 40;
        let d = 8;
        let mut data = Vec::new();
        let mut sent = Vec::new();
        let mut role = Vec::new();
        for i in 0..n {
            let mut row = vec![0.0f64; d];
            let pos = i % 2 == 0;
            row[0] = if pos { 1.0 } else { -1.0 };
            row[1] = if i % 4 < 2 { 1.0 } else { -1.0 };
            data.extend_from_slice(&row);
            sent.push(if pos { Sentiment::Positive } else { Sentiment::Negative });
            role.push(if i % 4 < 2 { Role::Actor } else { Role::Target });
        }
        let ood = OodSet { features: Matrix::from_vec(n, d, data), sent, role };
        let fit = pretrain_priors(&ood, 0.05, 3, 3).unwrap();
        assert_eq!(fit.sent_val_accuracy, 1.0);
        assert_eq!(fit.role_val_accuracy, 1.0);
        // Patience respected: training halts within `patience` epochs of the
        // best epoch.
        assert!(fit.sent_epochs <= fit.sent_best_epoch + 3);
        assert!(fit.role_epochs <= fit.role_best_epoch + 3);
    }

    #[test]
    fn empty_ood_set_is_rejected() {
        let ood: OodSet<f64> =
            OodSet { features: Matrix::zeros(0, 4), sent: vec![], role: vec![] };
        assert!(pretrain_priors(&ood, 0.05, 3, 3).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = ModelParams::<f32>::init(cfg, &mut rng);
        let mut opt = OptState::new(&params);
        // A couple of steps so the moment buffers are nonzero.
        let mut p = params.clone();
        for _ in 0..3 {
            let mut grads = p.zeros_like();
            grads.visit_mut(|_, m| m.fill(0.01));
            opt.step(&mut p, &grads);
        }
        let ckpt = Checkpoint {
            params: p.clone(),
            opt_step: opt.opt.step_count(),
            moments: opt.moments.clone(),
            meta: CheckpointMeta {
                counts: NodeCounts { authors: 2, tweets: 3, mentions: 2, hashtags: 2, keywords: 1 },
                epoch: 3,
                rng_seed: 17,
                rng_word_pos: 1234,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, p);
        assert_eq!(loaded.opt_step, 3);
        assert_eq!(loaded.meta, ckpt.meta);
        assert_eq!(loaded.moments, ckpt.moments);

        // Saving the loaded checkpoint is byte-identical.
        let path2 = dir.path().join("model2.bin");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE0000").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let cfg = small_config(true);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = ModelParams::<f32>::init(cfg, &mut rng);
        let ckpt = Checkpoint {
            params,
            opt_step: 0,
            moments: BTreeMap::new(),
            meta: CheckpointMeta {
                counts: NodeCounts { authors: 0, tweets: 0, mentions: 0, hashtags: 0, keywords: 0 },
                epoch: 0,
                rng_seed: 0,
                rng_word_pos: 0,
            },
        };
        let full = dir.path().join("full.bin");
        save_checkpoint(&ckpt, &full).unwrap();
        let bytes = std::fs::read(&full).unwrap();
        let truncated = dir.path().join("trunc.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&truncated).is_err());
    }
}
