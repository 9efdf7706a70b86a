//! The self-learning loop: periodic inference with confidence, tweet
//! consistency, and author consistency checks applied sequentially, monotone
//! training-set growth, prior refreshes, and the stopping rule.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AbstractEntity, Corpus, Perspective, PerspectiveTable, Role, Sentiment, Stance};
use crate::error::{Error, Result};
use crate::featurize::{build_node_features, HashFeaturizer};
use crate::graph::{build_graph_with, GraphOptions, HeteroGraph};
use crate::model::{
    heads_forward, loss_and_grads, Labels, LossBreakdown, ModelConfig, ModelParams,
    OodSet, OptState, Predictions,
};
use crate::numkit::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainConfig {
    /// Epochs between inference steps.
    pub k: usize,
    /// (from_epoch, confidence) steps; the last entry at or below the current
    /// epoch applies.
    pub c_schedule: Vec<(usize, f64)>,
    /// (from_epoch, author tweet-count threshold) steps.
    pub t_schedule: Vec<(usize, usize)>,
    /// Stop when the new-example fraction stays below this...
    pub stop_frac: f64,
    /// ...for this many consecutive inference steps.
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub warmup_patience: usize,
    pub warmup_cap: usize,
    /// Retype mention edges from the prior classifiers at inference steps.
    pub refresh_mention_edges: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            k: 10,
            c_schedule: vec![(1, 0.9), (201, 0.8)],
            t_schedule: vec![(1, 10), (20, 5), (50, 3)],
            stop_frac: 0.003,
            stop_patience: 10,
            max_epochs: 300,
            warmup_patience: 3,
            warmup_cap: 50,
            refresh_mention_edges: true,
        }
    }
}

fn schedule_value<T: Copy>(schedule: &[(usize, T)], epoch: usize) -> Option<T> {
    schedule.iter().rev().find(|(from, _)| *from <= epoch).map(|&(_, v)| v)
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        for window in self.c_schedule.windows(2) {
            if window[1].1 > window[0].1 {
                return Err(Error::Validation("confidence schedule must be non-increasing".into()));
            }
        }
        for &(_, c) in &self.c_schedule {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Validation(format!("confidence {c} outside [0,1]")));
            }
        }
        for window in self.t_schedule.windows(2) {
            if window[1].1 > window[0].1 {
                return Err(Error::Validation("tweet-threshold schedule must be non-increasing".into()));
            }
        }
        if self.c_schedule.is_empty() || self.t_schedule.is_empty() {
            return Err(Error::Validation("schedules must be non-empty".into()));
        }
        Ok(())
    }

    pub fn confidence_at(&self, epoch: usize) -> f64 {
        schedule_value(&self.c_schedule, epoch).unwrap_or(self.c_schedule[0].1)
    }

    pub fn tweet_threshold_at(&self, epoch: usize) -> usize {
        schedule_value(&self.t_schedule, epoch).unwrap_or(self.t_schedule[0].1)
    }
}

/// Step size for pretraining the prior classifiers on the seed mentions.
const PRIOR_PRETRAIN_LR: f64 = 0.01;

/// Mention edges take a prior-classifier subtype only when both prior heads
/// are at least this confident on the item; otherwise they keep the pending
/// default type. Mirrors the loop's initial label-confidence threshold.
pub const MENTION_TYPE_CONFIDENCE: f64 = 0.9;

/// Prior classifiers must demonstrate at least this held-out accuracy before
/// their argmax is trusted to type mention edges.
pub const PRIOR_TRUST_ACCURACY: f64 = 0.9;

/// Gated subtype assignment from prior probabilities: argmax when the
/// classifiers earn trust on held-out data and both rows clear the per-item
/// confidence bar; the pending default otherwise.
pub fn gated_mention_types(
    prior_sent: &Matrix<f32>,
    prior_role: &Matrix<f32>,
    sent_val_accuracy: f64,
    role_val_accuracy: f64,
) -> Vec<(Sentiment, Role)> {
    let trusted = sent_val_accuracy >= PRIOR_TRUST_ACCURACY && role_val_accuracy >= PRIOR_TRUST_ACCURACY;
    let n = prior_sent.rows();
    (0..n)
        .map(|mo| {
            let srow = prior_sent.row(mo);
            let rrow = prior_role.row(mo);
            let s_ok = srow[argmax(srow)] as f64 >= MENTION_TYPE_CONFIDENCE;
            let r_ok = rrow[argmax(rrow)] as f64 >= MENTION_TYPE_CONFIDENCE;
            if trusted && s_ok && r_ok {
                (
                    Sentiment::from_code(argmax(srow)).expect("2-way prior"),
                    Role::from_code(argmax(rrow)).expect("2-way prior"),
                )
            } else {
                (Sentiment::Positive, Role::Actor)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Seed,
    Pseudo,
}

/// The monotone training set: seed entries never change, pseudo entries
/// freeze once added.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    pub tweets: BTreeMap<usize, (Stance, Origin)>,
    pub mentions: BTreeMap<usize, (Perspective, Origin)>,
    pub author_seeds: BTreeMap<usize, Stance>,
}

impl LabelSet {
    /// Seed labels from the gold annotations of the listed authors.
    pub fn seed_from_authors(corpus: &Corpus, author_ids: &[String]) -> Result<LabelSet> {
        let mut set = LabelSet::default();
        for id in author_ids {
            let ai = corpus
                .author_ordinal(id)
                .ok_or_else(|| Error::Validation(format!("unknown author {id}")))?;
            let stance = corpus.authors[ai]
                .gold_stance
                .ok_or_else(|| Error::Validation(format!("author {id} has no gold stance")))?;
            set.author_seeds.insert(ai, stance);
            for &ti in corpus.tweets_of_author(ai) {
                if let Some(s) = corpus.tweets[ti].gold_stance {
                    set.tweets.insert(ti, (s, Origin::Seed));
                }
            }
        }
        for (mo, ti, m) in corpus.mentions() {
            if !set.tweets.contains_key(&ti) {
                continue;
            }
            if let Some(gold) = &m.gold {
                set.mentions.insert(mo, (gold.perspective(), Origin::Seed));
            }
        }
        Ok(set)
    }

    /// Seed labels from every imaginary (weak-supervision) author.
    pub fn seed_from_imaginary(corpus: &Corpus) -> Result<LabelSet> {
        let ids: Vec<String> =
            corpus.authors.iter().filter(|a| a.imaginary).map(|a| a.id.clone()).collect();
        if ids.is_empty() {
            return Err(Error::Validation("corpus has no imaginary authors to seed from".into()));
        }
        LabelSet::seed_from_authors(corpus, &ids)
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty() && self.mentions.is_empty()
    }

    /// Adds a pseudo tweet label unless the tweet is already labeled.
    pub fn add_pseudo_tweet(&mut self, tweet: usize, stance: Stance) -> bool {
        if self.tweets.contains_key(&tweet) {
            return false;
        }
        self.tweets.insert(tweet, (stance, Origin::Pseudo));
        true
    }

    pub fn add_pseudo_mention(&mut self, mention: usize, p: Perspective) -> bool {
        if self.mentions.contains_key(&mention) {
            return false;
        }
        self.mentions.insert(mention, (p, Origin::Pseudo));
        true
    }

    pub fn pseudo_tweet_count(&self) -> usize {
        self.tweets.values().filter(|(_, o)| *o == Origin::Pseudo).count()
    }

    /// Projects into the per-item class indices the loss consumes.
    pub fn to_model_labels(&self, n_tweets: usize, n_mentions: usize) -> Labels {
        let mut labels = Labels::empty(n_tweets, n_mentions);
        for (&ti, &(stance, _)) in &self.tweets {
            labels.tweet_stance[ti] = Some(stance.code());
        }
        for (&mo, &(p, _)) in &self.mentions {
            labels.mention_map[mo] = Some(p.entity.code());
            labels.mention_sent[mo] = Some(p.sentiment.code());
            labels.mention_role[mo] = Some(p.role.code());
        }
        labels
    }
}

/// Per-item, per-head reliability flags: max probability at or above c.
#[derive(Debug, Clone, PartialEq)]
pub struct Reliability {
    pub tweet_stance: Vec<bool>,
    pub sent: Vec<bool>,
    pub role: Vec<bool>,
    pub map: Vec<bool>,
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn row_reliable<S: Scalar>(row: &[S], c: f64) -> bool {
    row[argmax(row)].as_f64() >= c
}

/// Check (1): label confidence.
pub fn check_reliable<S: Scalar>(preds: &Predictions<S>, c: f64) -> Reliability {
    let flags = |m: &Matrix<S>| (0..m.rows()).map(|i| row_reliable(m.row(i), c)).collect();
    Reliability {
        tweet_stance: flags(&preds.tweet_stance),
        sent: flags(&preds.sent),
        role: flags(&preds.role),
        map: flags(&preds.map),
    }
}

fn predicted_perspective<S: Scalar>(preds: &Predictions<S>, mo: usize) -> Perspective {
    Perspective::new(
        AbstractEntity::from_code(argmax(preds.map.row(mo))).expect("11-way head"),
        Sentiment::from_code(argmax(preds.sent.row(mo))).expect("2-way head"),
        Role::from_code(argmax(preds.role.row(mo))).expect("2-way head"),
    )
}

/// Check (2): a tweet is consistent if its (reliable) stance is compatible
/// with the perspective of every fully-reliable mention in it. Mentions with
/// any unreliable sub-label are ignored; a tweet whose stance is unreliable
/// is not consistent.
pub fn check_tweet_consistency<S: Scalar>(
    tweet: usize,
    mentions_of_tweet: &[usize],
    preds: &Predictions<S>,
    rel: &Reliability,
    table: &PerspectiveTable,
) -> bool {
    if !rel.tweet_stance[tweet] {
        return false;
    }
    let stance = Stance::from_code(argmax(preds.tweet_stance.row(tweet))).expect("2-way head");
    for &mo in mentions_of_tweet {
        if !(rel.map[mo] && rel.sent[mo] && rel.role[mo]) {
            continue;
        }
        if !table.contains(stance, &predicted_perspective(preds, mo)) {
            return false;
        }
    }
    true
}

/// Check (3): an author is consistent if all their consistent tweets share
/// one predicted stance and there are at least `t` of them.
pub fn check_author_consistency(consistent_tweet_stances: &[Stance], t: usize) -> Option<Stance> {
    let first = *consistent_tweet_stances.first()?;
    if consistent_tweet_stances.len() < t {
        return None;
    }
    if consistent_tweet_stances.iter().any(|&s| s != first) {
        return None;
    }
    Some(first)
}

/// The outcome of running checks (1)-(3) sequentially over all predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyOutcome {
    pub reliability: Reliability,
    pub tweet_consistent: Vec<bool>,
    pub tweet_stance: Vec<Stance>,
    pub author_stance: Vec<Option<Stance>>,
}

/// Applies the three checks over a full prediction set.
///
/// `tweet_author[ti]` and `mention_tweet[mo]` give the containment structure;
/// they usually come from the graph but are plain slices so an independent
/// oracle can drive the same code path.
pub fn consistent_items<S: Scalar>(
    preds: &Predictions<S>,
    tweet_author: &[usize],
    mention_tweet: &[usize],
    n_authors: usize,
    table: &PerspectiveTable,
    c: f64,
    t: usize,
) -> ConsistencyOutcome {
    let n_tweets = tweet_author.len();
    let rel = check_reliable(preds, c);
    let mut mentions_by_tweet: Vec<Vec<usize>> = vec![Vec::new(); n_tweets];
    for (mo, &ti) in mention_tweet.iter().enumerate() {
        mentions_by_tweet[ti].push(mo);
    }
    let tweet_stance: Vec<Stance> = (0..n_tweets)
        .map(|ti| Stance::from_code(argmax(preds.tweet_stance.row(ti))).expect("2-way head"))
        .collect();
    let tweet_consistent: Vec<bool> = (0..n_tweets)
        .map(|ti| check_tweet_consistency(ti, &mentions_by_tweet[ti], preds, &rel, table))
        .collect();
    let mut author_stance = vec![None; n_authors];
    for (ai, slot) in author_stance.iter_mut().enumerate() {
        let stances: Vec<Stance> = (0..n_tweets)
            .filter(|&ti| tweet_author[ti] == ai && tweet_consistent[ti])
            .map(|ti| tweet_stance[ti])
            .collect();
        *slot = check_author_consistency(&stances, t);
    }
    ConsistencyOutcome { reliability: rel, tweet_consistent, tweet_stance, author_stance }
}

/// Majority vote over an author's predicted tweet stances; ties break toward
/// the stance with more summed probability mass, then toward ProBlackLM.
/// Authors with no tweets are skipped (None).
pub fn predict_author_stances<S: Scalar>(
    preds: &Predictions<S>,
    tweet_author: &[usize],
    n_authors: usize,
) -> Vec<Option<Stance>> {
    let mut votes = vec![[0usize; 2]; n_authors];
    let mut mass = vec![[0f64; 2]; n_authors];
    for (ti, &ai) in tweet_author.iter().enumerate() {
        let row = preds.tweet_stance.row(ti);
        votes[ai][argmax(row)] += 1;
        mass[ai][0] += row[0].as_f64();
        mass[ai][1] += row[1].as_f64();
    }
    (0..n_authors)
        .map(|ai| {
            let [black, blue] = votes[ai];
            if black + blue == 0 {
                return None;
            }
            let stance = match black.cmp(&blue) {
                std::cmp::Ordering::Greater => Stance::ProBlackLM,
                std::cmp::Ordering::Less => Stance::ProBlueLM,
                std::cmp::Ordering::Equal => {
                    if mass[ai][0] >= mass[ai][1] {
                        Stance::ProBlackLM
                    } else {
                        Stance::ProBlueLM
                    }
                }
            };
            Some(stance)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Tweets, mentions, and hashtags only; tweet stance from the tweet
    /// embedding alone; no self-learning.
    TextOnly,
    /// Full graph including the author network; no self-learning.
    AuthorNetwork,
    /// Full graph plus the self-learning loop.
    SelfLearning,
}

impl Variant {
    fn graph_options(self) -> GraphOptions {
        GraphOptions { include_authors: self != Variant::TextOnly }
    }

    fn author_aware(self) -> bool {
        self != Variant::TextOnly
    }

    fn self_learning(self) -> bool {
        self == Variant::SelfLearning
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub labelset_tweets: usize,
    pub labelset_mentions: usize,
    /// Present on epochs where an inference step ran.
    pub new_fraction: Option<f64>,
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct RunOutcome {
    pub params: ModelParams<f32>,
    pub opt: OptState<f32>,
    pub labels: LabelSet,
    pub graph: HeteroGraph,
    pub features: Matrix<f32>,
    pub log: Vec<EpochLog>,
    pub final_epoch: usize,
    pub rng_word_pos: u128,
}

struct LoopState {
    params: ModelParams<f32>,
    opt: OptState<f32>,
    graph: HeteroGraph,
    features: Matrix<f32>,
    labels: LabelSet,
    model_labels: Labels,
    epoch: usize,
    log: Vec<EpochLog>,
    prior_val_accuracy: (f64, f64),
}

impl LoopState {
    fn train_epoch(&mut self) -> Result<()> {
        self.epoch += 1;
        let (losses, grads, _) =
            loss_and_grads(&self.graph, &self.features, &self.params, &self.model_labels)?;
        self.opt.step(&mut self.params, &grads);
        self.log.push(EpochLog {
            epoch: self.epoch,
            losses,
            labelset_tweets: self.labels.tweets.len(),
            labelset_mentions: self.labels.mentions.len(),
            new_fraction: None,
        });
        Ok(())
    }

    fn refresh_model_labels(&mut self) {
        self.model_labels =
            self.labels.to_model_labels(self.graph.num_tweets(), self.graph.num_mentions());
    }
}

/// What one inference step saw and did; handed to a run observer.
#[derive(Debug)]
pub struct InferenceReport<'a> {
    pub epoch: usize,
    pub schedule_epoch: usize,
    pub confidence: f64,
    pub tweet_threshold: usize,
    pub outcome: &'a ConsistencyOutcome,
    pub predictions: &'a Predictions<f32>,
    pub added_tweets: &'a [(usize, Stance)],
    pub new_fraction: f64,
}

/// One inference step: forward pass, the three checks, training-set growth,
/// optional mention-edge retyping, and a one-pass prior refresh. Returns the
/// newly added tweet fraction.
fn inference_step(
    state: &mut LoopState,
    cfg: &SelfTrainConfig,
    table: &PerspectiveTable,
    schedule_epoch: usize,
    observer: &mut dyn FnMut(InferenceReport<'_>),
) -> Result<f64> {
    let preds = heads_forward(&state.graph, &state.features, &state.params)?;
    let c = cfg.confidence_at(schedule_epoch);
    let t = cfg.tweet_threshold_at(schedule_epoch);
    let tweet_author: Vec<usize> =
        (0..state.graph.num_tweets()).map(|ti| state.graph.tweet_author_ordinal(ti)).collect();
    let mention_tweet: Vec<usize> =
        (0..state.graph.num_mentions()).map(|mo| state.graph.mention_tweet(mo)).collect();
    let outcome = consistent_items(
        &preds,
        &tweet_author,
        &mention_tweet,
        state.graph.num_authors(),
        table,
        c,
        t,
    );

    let mut added: Vec<(usize, Stance)> = Vec::new();
    for ti in 0..state.graph.num_tweets() {
        let ai = tweet_author[ti];
        let Some(author_stance) = outcome.author_stance[ai] else { continue };
        if !outcome.tweet_consistent[ti] {
            continue;
        }
        if state.labels.add_pseudo_tweet(ti, author_stance) {
            added.push((ti, author_stance));
        }
        for (mo, &mt) in mention_tweet.iter().enumerate() {
            if mt != ti {
                continue;
            }
            let rel = &outcome.reliability;
            if rel.map[mo] && rel.sent[mo] && rel.role[mo] {
                state.labels.add_pseudo_mention(mo, predicted_perspective(&preds, mo));
            }
        }
    }

    if cfg.refresh_mention_edges {
        let (sent_acc, role_acc) = state.prior_val_accuracy;
        let assignments = gated_mention_types(&preds.prior_sent, &preds.prior_role, sent_acc, role_acc);
        let typed = assignments.iter().filter(|&&a| a != (Sentiment::Positive, Role::Actor)).count();
        log::debug!(
            "inference step at epoch {}: {typed}/{} mention edges typed (prior val acc {sent_acc:.3}/{role_acc:.3})",
            state.epoch,
            assignments.len()
        );
        state.graph = state.graph.retype_mention_edges(&assignments)?;
    }

    state.refresh_model_labels();
    // Keep the prior classifiers up to date: refit on the grown label set,
    // early-stopped on held-out accuracy so their confidence stays honest.
    let labeled: Vec<(usize, Perspective)> =
        state.labels.mentions.iter().map(|(&mo, &(p, _))| (mo, p)).collect();
    if !labeled.is_empty() {
        let mut feat = Matrix::zeros(labeled.len(), state.features.cols());
        let mut sent = Vec::with_capacity(labeled.len());
        let mut role = Vec::with_capacity(labeled.len());
        for (i, &(mo, p)) in labeled.iter().enumerate() {
            feat.row_mut(i).copy_from_slice(state.features.row(state.graph.mention_node(mo)));
            sent.push(p.sentiment);
            role.push(p.role);
        }
        let ood = OodSet { features: feat, sent, role };
        let fit = crate::model::pretrain_priors(
            &ood,
            PRIOR_PRETRAIN_LR,
            state.params.config.seed ^ state.epoch as u64,
            3,
        )?;
        state.params.prior_sent = fit.sent_weights;
        state.params.prior_role = fit.role_weights;
        state.prior_val_accuracy = (fit.sent_val_accuracy, fit.role_val_accuracy);
    }

    let new_fraction = added.len() as f64 / state.graph.num_tweets().max(1) as f64;
    observer(InferenceReport {
        epoch: state.epoch,
        schedule_epoch,
        confidence: c,
        tweet_threshold: t,
        outcome: &outcome,
        predictions: &preds,
        added_tweets: &added,
        new_fraction,
    });
    Ok(new_fraction)
}

/// Trains until the loss stops improving for `patience` consecutive epochs,
/// with a floor of `min_epochs` and a ceiling of `cap` (all bounded by the
/// global epoch budget).
fn train_until_plateau(
    state: &mut LoopState,
    min_epochs: usize,
    patience: usize,
    cap: usize,
) -> Result<()> {
    let mut best = f64::INFINITY;
    let mut stall = 0usize;
    let mut trained = 0usize;
    while trained < cap {
        state.train_epoch()?;
        trained += 1;
        let loss = state.log.last().expect("just trained").losses.total;
        if loss < best {
            best = loss;
            stall = 0;
        } else {
            stall += 1;
        }
        if trained >= min_epochs && stall >= patience {
            break;
        }
    }
    Ok(())
}

/// Runs the full pipeline for one variant: feature construction, prior
/// pretraining on the seed mentions, graph typing, warmup, and (for the
/// self-learning variant) the grow-and-train loop with its stopping rule.
pub fn run(
    corpus: &Corpus,
    seed_labels: &LabelSet,
    cfg: &SelfTrainConfig,
    model_cfg: ModelConfig,
    variant: Variant,
    table: &PerspectiveTable,
) -> Result<RunOutcome> {
    run_with_observer(corpus, seed_labels, cfg, model_cfg, variant, table, |_| {})
}

/// [`run`] with a per-inference-step observer for monitoring and diagnosis.
pub fn run_with_observer(
    corpus: &Corpus,
    seed_labels: &LabelSet,
    cfg: &SelfTrainConfig,
    model_cfg: ModelConfig,
    variant: Variant,
    table: &PerspectiveTable,
    mut observer: impl FnMut(InferenceReport<'_>),
) -> Result<RunOutcome> {
    cfg.validate()?;
    if seed_labels.is_empty() {
        return Err(Error::Validation("seed label set is empty".into()));
    }
    let model_cfg = ModelConfig { author_aware: variant.author_aware(), ..model_cfg };
    let featurizer = HashFeaturizer::new(model_cfg.d_in)?;
    let graph = build_graph_with(corpus, None, variant.graph_options())?;
    let features = build_node_features(corpus, &graph, &featurizer, model_cfg.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed);
    let mut params = ModelParams::<f32>::init(model_cfg, &mut rng);

    // Prior classifiers pretrain on the seed-labeled mentions, standing in
    // for the out-of-domain pretraining set.
    let mut prior_val_accuracy = (0.0f64, 0.0f64);
    let seed_mentions: Vec<(usize, Perspective)> =
        seed_labels.mentions.iter().map(|(&mo, &(p, _))| (mo, p)).collect();
    if !seed_mentions.is_empty() {
        let mut feat = Matrix::zeros(seed_mentions.len(), model_cfg.d_in);
        let mut sent = Vec::with_capacity(seed_mentions.len());
        let mut role = Vec::with_capacity(seed_mentions.len());
        for (i, &(mo, p)) in seed_mentions.iter().enumerate() {
            feat.row_mut(i).copy_from_slice(features.row(graph.mention_node(mo)));
            sent.push(p.sentiment);
            role.push(p.role);
        }
        let ood = OodSet { features: feat, sent, role };
        let fit = crate::model::pretrain_priors(&ood, PRIOR_PRETRAIN_LR, model_cfg.seed, 3)?;
        params.prior_sent = fit.sent_weights;
        params.prior_role = fit.role_weights;
        prior_val_accuracy = (fit.sent_val_accuracy, fit.role_val_accuracy);
    }

    // Type the mention edges from the pretrained prior argmax.
    let graph = {
        let mention_nodes: Vec<usize> =
            (0..graph.num_mentions()).map(|mo| graph.mention_node(mo)).collect();
        let mut prior_inputs = Matrix::zeros(mention_nodes.len(), features.cols());
        for (i, &node) in mention_nodes.iter().enumerate() {
            prior_inputs.row_mut(i).copy_from_slice(features.row(node));
        }
        let sent_probs = crate::numkit::softmax_rows(&crate::numkit::matmul(&prior_inputs, &params.prior_sent)?);
        let role_probs = crate::numkit::softmax_rows(&crate::numkit::matmul(&prior_inputs, &params.prior_role)?);
        let assignments =
            gated_mention_types(&sent_probs, &role_probs, prior_val_accuracy.0, prior_val_accuracy.1);
        graph.retype_mention_edges(&assignments)?
    };

    let opt = OptState::new(&params);
    let mut state = LoopState {
        model_labels: seed_labels.to_model_labels(graph.num_tweets(), graph.num_mentions()),
        params,
        opt,
        graph,
        features,
        labels: seed_labels.clone(),
        epoch: 0,
        log: Vec::new(),
        prior_val_accuracy,
    };

    // Warmup: train until the total loss stops improving, bounded by the
    // warmup cap. The non-self-learning variants train at least 15 epochs
    // under the same plateau rule and stop there. The schedule clock and the
    // epoch budget cover the learning epochs after warmup.
    if cfg.max_epochs > 0 {
        let min_epochs = if variant.self_learning() { 1 } else { 15 };
        train_until_plateau(&mut state, min_epochs, cfg.warmup_patience, cfg.warmup_cap)?;
    }
    let warmup_len = state.epoch;

    if variant.self_learning() {
        let mut stall_steps = 0usize;
        'outer: while state.epoch - warmup_len < cfg.max_epochs {
            for _ in 0..cfg.k {
                if state.epoch - warmup_len >= cfg.max_epochs {
                    break 'outer;
                }
                state.train_epoch()?;
            }
            let schedule_epoch = state.epoch - warmup_len;
            let new_fraction = inference_step(&mut state, cfg, table, schedule_epoch, &mut observer)?;
            if let Some(last) = state.log.last_mut() {
                last.new_fraction = Some(new_fraction);
                last.labelset_tweets = state.labels.tweets.len();
                last.labelset_mentions = state.labels.mentions.len();
            }
            if new_fraction < cfg.stop_frac {
                stall_steps += 1;
                if stall_steps >= cfg.stop_patience {
                    break;
                }
            } else {
                stall_steps = 0;
            }
        }
    }

    Ok(RunOutcome {
        params: state.params,
        opt: state.opt,
        labels: state.labels,
        graph: state.graph,
        features: state.features,
        log: state.log,
        final_epoch: state.epoch,
        rng_word_pos: rng.get_word_pos(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, GenConfig, Lexicon};
    use rand::Rng;

    fn uniform_preds(n_tweets: usize, n_mentions: usize) -> Predictions<f64> {
        Predictions {
            tweet_stance: Matrix::from_vec(n_tweets, 2, vec![0.5; n_tweets * 2]),
            sent: Matrix::from_vec(n_mentions, 2, vec![0.5; n_mentions * 2]),
            role: Matrix::from_vec(n_mentions, 2, vec![0.5; n_mentions * 2]),
            map: Matrix::from_vec(n_mentions, 11, vec![1.0 / 11.0; n_mentions * 11]),
            entity_stance: Matrix::from_vec(n_mentions, 2, vec![0.5; n_mentions * 2]),
            prior_sent: Matrix::from_vec(n_mentions, 2, vec![0.5; n_mentions * 2]),
            prior_role: Matrix::from_vec(n_mentions, 2, vec![0.5; n_mentions * 2]),
        }
    }

    fn two_class(p: f64) -> [f64; 2] {
        [p, 1.0 - p]
    }

    fn set_mention(preds: &mut Predictions<f64>, mo: usize, e: AbstractEntity, s: Sentiment, r: Role, conf: f64) {
        let mut map_row = vec![(1.0 - conf) / 10.0; 11];
        map_row[e.code()] = conf;
        preds.map.row_mut(mo).copy_from_slice(&map_row);
        let sent_row = if s == Sentiment::Positive { two_class(conf) } else { two_class(1.0 - conf) };
        preds.sent.row_mut(mo).copy_from_slice(&sent_row);
        let role_row = if r == Role::Actor { two_class(conf) } else { two_class(1.0 - conf) };
        preds.role.row_mut(mo).copy_from_slice(&role_row);
    }

    #[test]
    fn reliability_boundaries() {
        let mut preds = uniform_preds(3, 0);
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.95, 0.05]);
        preds.tweet_stance.row_mut(1).copy_from_slice(&[0.89, 0.11]);
        preds.tweet_stance.row_mut(2).copy_from_slice(&[0.90, 0.10]);
        let rel = check_reliable(&preds, 0.9);
        assert_eq!(rel.tweet_stance, vec![true, false, true]);
        let all = check_reliable(&preds, 0.0);
        assert!(all.tweet_stance.iter().all(|&b| b));
    }

    #[test]
    fn tweet_consistency_follows_the_table() {
        let table = PerspectiveTable::default();
        // One tweet with one mention.
        let mut preds = uniform_preds(1, 1);
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.95, 0.05]); // ProBlackLM
        set_mention(&mut preds, 0, AbstractEntity::Police, Sentiment::Negative, Role::Actor, 0.95);
        let rel = check_reliable(&preds, 0.9);
        assert!(check_tweet_consistency(0, &[0], &preds, &rel, &table));

        // police-pos-target contradicts ProBlackLM.
        set_mention(&mut preds, 0, AbstractEntity::Police, Sentiment::Positive, Role::Target, 0.95);
        let rel = check_reliable(&preds, 0.9);
        assert!(!check_tweet_consistency(0, &[0], &preds, &rel, &table));

        // Unreliable stance fails check (2) outright.
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.6, 0.4]);
        let rel = check_reliable(&preds, 0.9);
        assert!(!check_tweet_consistency(0, &[0], &preds, &rel, &table));
    }

    #[test]
    fn tweet_consistency_ignores_partially_reliable_mentions() {
        let table = PerspectiveTable::default();
        let mut preds = uniform_preds(1, 2);
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.05, 0.95]); // ProBlueLM
        set_mention(&mut preds, 0, AbstractEntity::Antifa, Sentiment::Negative, Role::Actor, 0.95);
        // Second mention: confident map and sentiment, unreliable role.
        set_mention(&mut preds, 1, AbstractEntity::Police, Sentiment::Positive, Role::Actor, 0.95);
        preds.role.row_mut(1).copy_from_slice(&[0.6, 0.4]);
        let rel = check_reliable(&preds, 0.9);
        assert!(check_tweet_consistency(0, &[0, 1], &preds, &rel, &table));
        // A tweet with zero fully-reliable mentions is vacuously consistent.
        preds.map.row_mut(0).copy_from_slice(&[1.0 / 11.0; 11]);
        preds.map.row_mut(1).copy_from_slice(&[1.0 / 11.0; 11]);
        let rel = check_reliable(&preds, 0.9);
        assert!(check_tweet_consistency(0, &[0, 1], &preds, &rel, &table));
    }

    #[test]
    fn author_consistency_thresholds() {
        let twelve = vec![Stance::ProBlackLM; 12];
        assert_eq!(check_author_consistency(&twelve, 10), Some(Stance::ProBlackLM));
        let mut mixed = vec![Stance::ProBlackLM; 11];
        mixed.push(Stance::ProBlueLM);
        assert_eq!(check_author_consistency(&mixed, 10), None);
        let four = vec![Stance::ProBlueLM; 4];
        assert_eq!(check_author_consistency(&four, 5), None);
        assert_eq!(check_author_consistency(&four, 3), Some(Stance::ProBlueLM));
        assert_eq!(check_author_consistency(&[], 1), None);
    }

    /// Direct-definition enumerator used as the oracle for the consistency
    /// engine.
    fn brute_force_outcome(
        preds: &Predictions<f64>,
        tweet_author: &[usize],
        mention_tweet: &[usize],
        n_authors: usize,
        table: &PerspectiveTable,
        c: f64,
        t: usize,
    ) -> (Vec<bool>, Vec<Option<Stance>>) {
        let reliable = |row: &[f64]| row.iter().cloned().fold(f64::MIN, f64::max) >= c;
        let argmax_slow = |row: &[f64]| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        };
        let n_tweets = tweet_author.len();
        let mut tweet_ok = vec![false; n_tweets];
        for ti in 0..n_tweets {
            if !reliable(preds.tweet_stance.row(ti)) {
                continue;
            }
            let stance = Stance::from_code(argmax_slow(preds.tweet_stance.row(ti))).unwrap();
            let mut ok = true;
            for (mo, &mt) in mention_tweet.iter().enumerate() {
                if mt != ti {
                    continue;
                }
                if !(reliable(preds.map.row(mo)) && reliable(preds.sent.row(mo)) && reliable(preds.role.row(mo))) {
                    continue;
                }
                let p = Perspective::new(
                    AbstractEntity::from_code(argmax_slow(preds.map.row(mo))).unwrap(),
                    Sentiment::from_code(argmax_slow(preds.sent.row(mo))).unwrap(),
                    Role::from_code(argmax_slow(preds.role.row(mo))).unwrap(),
                );
                if !table.lookup(stance).contains(&p) {
                    ok = false;
                    break;
                }
            }
            tweet_ok[ti] = ok;
        }
        let mut author_stance = vec![None; n_authors];
        for ai in 0..n_authors {
            let stances: Vec<Stance> = (0..n_tweets)
                .filter(|&ti| tweet_author[ti] == ai && tweet_ok[ti])
                .map(|ti| Stance::from_code(argmax_slow(preds.tweet_stance.row(ti))).unwrap())
                .collect();
            if stances.len() >= t && !stances.is_empty() && stances.iter().all(|&s| s == stances[0]) {
                author_stance[ai] = Some(stances[0]);
            }
        }
        (tweet_ok, author_stance)
    }

    fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix<f64> {
        let mut m = Matrix::zeros(n, k);
        for i in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
            m.row_mut(i).copy_from_slice(&row);
        }
        m
    }

    #[test]
    fn consistency_engine_matches_brute_force_on_random_instances() {
        let table = PerspectiveTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let n_authors = rng.random_range(1..5);
            let n_tweets = rng.random_range(1..8);
            let n_mentions = rng.random_range(0..10);
            let tweet_author: Vec<usize> =
                (0..n_tweets).map(|_| rng.random_range(0..n_authors)).collect();
            let mention_tweet: Vec<usize> =
                (0..n_mentions).map(|_| rng.random_range(0..n_tweets)).collect();
            let preds = Predictions {
                tweet_stance: random_probs(&mut rng, n_tweets, 2),
                sent: random_probs(&mut rng, n_mentions, 2),
                role: random_probs(&mut rng, n_mentions, 2),
                map: random_probs(&mut rng, n_mentions, 11),
                entity_stance: random_probs(&mut rng, n_mentions, 2),
                prior_sent: random_probs(&mut rng, n_mentions, 2),
                prior_role: random_probs(&mut rng, n_mentions, 2),
            };
            let c = rng.random_range(0.0..1.0);
            let t = rng.random_range(1..4);
            let got = consistent_items(&preds, &tweet_author, &mention_tweet, n_authors, &table, c, t);
            let (want_tweets, want_authors) =
                brute_force_outcome(&preds, &tweet_author, &mention_tweet, n_authors, &table, c, t);
            assert_eq!(got.tweet_consistent, want_tweets);
            assert_eq!(got.author_stance, want_authors);
        }
    }

    #[test]
    fn author_vote_majority_and_tiebreaks() {
        // Three tweets for author 0: two ProBlackLM, one ProBlueLM.
        let mut preds = uniform_preds(3, 0);
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.9, 0.1]);
        preds.tweet_stance.row_mut(1).copy_from_slice(&[0.8, 0.2]);
        preds.tweet_stance.row_mut(2).copy_from_slice(&[0.3, 0.7]);
        let stances = predict_author_stances(&preds, &[0, 0, 0], 1);
        assert_eq!(stances[0], Some(Stance::ProBlackLM));

        // 1-1 tie: mass 0.9 vs 0.6 favors ProBlackLM.
        let mut preds = uniform_preds(2, 0);
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.9, 0.1]);
        preds.tweet_stance.row_mut(1).copy_from_slice(&[0.4, 0.6]);
        let stances = predict_author_stances(&preds, &[0, 0], 1);
        assert_eq!(stances[0], Some(Stance::ProBlackLM));

        // Exact tie in count and mass falls back to ProBlackLM.
        let mut preds = uniform_preds(2, 0);
        preds.tweet_stance.row_mut(0).copy_from_slice(&[0.7, 0.3]);
        preds.tweet_stance.row_mut(1).copy_from_slice(&[0.3, 0.7]);
        let stances = predict_author_stances(&preds, &[0, 0], 1);
        assert_eq!(stances[0], Some(Stance::ProBlackLM));

        // An author with no tweets is skipped.
        let preds = uniform_preds(1, 0);
        let stances = predict_author_stances(&preds, &[1], 2);
        assert_eq!(stances[0], None);
    }

    fn small_seeded_run(max_epochs: usize, variant: Variant) -> RunOutcome {
        let gen = GenConfig { seed: 5, n_authors: 12, tweets_per_author: (3, 5), ..GenConfig::default() };
        let corpus = generate(&gen, &Lexicon::builtin()).unwrap();
        let split = crate::corpus::split_by_author(&corpus, 4, 7).unwrap();
        let seed = LabelSet::seed_from_authors(&corpus, &split.train_authors).unwrap();
        let cfg = SelfTrainConfig { max_epochs, warmup_cap: 10, ..SelfTrainConfig::default() };
        let model_cfg = ModelConfig { d_in: 32, d_h1: 10, d_h2: 8, seed: 11, ..ModelConfig::default() };
        run(&corpus, &seed, &cfg, model_cfg, variant, &PerspectiveTable::default()).unwrap()
    }

    #[test]
    fn zero_epoch_budget_returns_untrained_model_and_empty_log() {
        let out = small_seeded_run(0, Variant::SelfLearning);
        assert!(out.log.is_empty());
        assert_eq!(out.final_epoch, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = small_seeded_run(25, Variant::SelfLearning);
        let b = small_seeded_run(25, Variant::SelfLearning);
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn labelset_grows_monotonically_and_preserves_seeds() {
        let out = small_seeded_run(40, Variant::SelfLearning);
        let mut prev = 0usize;
        for row in &out.log {
            assert!(row.labelset_tweets >= prev, "labelset shrank at epoch {}", row.epoch);
            prev = row.labelset_tweets;
        }
        // Seeds survive bitwise.
        let gen = GenConfig { seed: 5, n_authors: 12, tweets_per_author: (3, 5), ..GenConfig::default() };
        let corpus = generate(&gen, &Lexicon::builtin()).unwrap();
        let split = crate::corpus::split_by_author(&corpus, 4, 7).unwrap();
        let seed = LabelSet::seed_from_authors(&corpus, &split.train_authors).unwrap();
        for (ti, entry) in &seed.tweets {
            assert_eq!(out.labels.tweets.get(ti), Some(entry));
        }
        for (mo, entry) in &seed.mentions {
            assert_eq!(out.labels.mentions.get(mo), Some(entry));
        }
        // Warmup (bounded by its cap) plus the learning-epoch budget.
        assert!(out.final_epoch <= 10 + 40);
    }

    #[test]
    fn pseudo_mentions_stay_table_compatible() {
        let out = small_seeded_run(40, Variant::SelfLearning);
        let table = PerspectiveTable::default();
        for (&mo, &(p, origin)) in &out.labels.mentions {
            if origin != Origin::Pseudo {
                continue;
            }
            let ti = out.graph.mention_tweet(mo);
            let (stance, _) = out.labels.tweets[&ti];
            assert!(table.contains(stance, &p), "mention {mo} incompatible with its tweet stance");
        }
    }

    #[test]
    fn uniform_predictions_add_nothing() {
        let gen = GenConfig { seed: 5, n_authors: 6, tweets_per_author: (2, 3), ..GenConfig::default() };
        let corpus = generate(&gen, &Lexicon::builtin()).unwrap();
        let split = crate::corpus::split_by_author(&corpus, 2, 7).unwrap();
        let seed = LabelSet::seed_from_authors(&corpus, &split.train_authors).unwrap();
        let model_cfg = ModelConfig { d_in: 32, d_h1: 8, d_h2: 6, seed: 1, ..ModelConfig::default() };
        let graph = build_graph_with(&corpus, None, GraphOptions::default()).unwrap();
        let featurizer = HashFeaturizer::new(32).unwrap();
        let features = build_node_features(&corpus, &graph, &featurizer, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ModelParams::<f32>::init(model_cfg, &mut rng);
        params.visit_mut(|_, m| m.fill(0.0));
        let mut state = LoopState {
            model_labels: seed.to_model_labels(graph.num_tweets(), graph.num_mentions()),
            opt: OptState::new(&params),
            params,
            graph,
            features,
            labels: seed.clone(),
            epoch: 1,
            log: Vec::new(),
            prior_val_accuracy: (0.0, 0.0),
        };
        let cfg = SelfTrainConfig::default();
        let frac = inference_step(&mut state, &cfg, &PerspectiveTable::default(), 1, &mut |_| {}).unwrap();
        assert_eq!(frac, 0.0);
        assert_eq!(state.labels.tweets, seed.tweets);

        // Idempotence at a fixed point: a second identical step adds nothing.
        let frac2 = inference_step(&mut state, &cfg, &PerspectiveTable::default(), 2, &mut |_| {}).unwrap();
        assert_eq!(frac2, 0.0);
    }

    #[test]
    fn schedules_follow_the_configured_boundaries() {
        let cfg = SelfTrainConfig::default();
        assert_eq!(cfg.confidence_at(1), 0.9);
        assert_eq!(cfg.confidence_at(200), 0.9);
        assert_eq!(cfg.confidence_at(201), 0.8);
        assert_eq!(cfg.tweet_threshold_at(1), 10);
        assert_eq!(cfg.tweet_threshold_at(19), 10);
        assert_eq!(cfg.tweet_threshold_at(20), 5);
        assert_eq!(cfg.tweet_threshold_at(50), 3);
        assert_eq!(cfg.tweet_threshold_at(300), 3);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut cfg = SelfTrainConfig::default();
        cfg.c_schedule = vec![(1, 0.8), (100, 0.9)];
        assert!(cfg.validate().is_err());
        let mut cfg = SelfTrainConfig::default();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_seed_set_is_rejected() {
        let gen = GenConfig { seed: 5, n_authors: 4, ..GenConfig::default() };
        let corpus = generate(&gen, &Lexicon::builtin()).unwrap();
        let empty = LabelSet::default();
        let err = run(
            &corpus,
            &empty,
            &SelfTrainConfig::default(),
            ModelConfig { d_in: 32, ..ModelConfig::default() },
            Variant::SelfLearning,
            &PerspectiveTable::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
    }
}
