use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use perspectra::corpus::{
    flag_ambiguous, load_corpus, load_perspective_table, merge_corpora, split_by_author, Corpus,
    Perspective, PerspectiveTable, Role, Sentiment, Stance,
};
use perspectra::error::Error as LibError;
use perspectra::eval::{
    behavior_correlations, f1, keyword_stance, pmi, temporal_trends, F1Report, PerspectiveAssignments,
};
use perspectra::featurize::{build_node_features, HashFeaturizer};
use perspectra::graph::{build_graph_with, GraphOptions, HeteroGraph};
use perspectra::model::{
    heads_forward, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelConfig,
    ModelParams, NodeCounts, Predictions,
};
use perspectra::numkit::{matmul, Matrix};
use perspectra::selftrain::{
    argmax, predict_author_stances, run, LabelSet, Origin, SelfTrainConfig, Variant,
};
use perspectra::synthgen::{generate_with_table, oracle_labels, GenConfig, GenMode, Lexicon};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Errors carrying the process exit code: 1 usage, 2 data validation,
/// 3 runtime.
#[derive(Debug)]
pub struct AppError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn usage(msg: impl Into<String>) -> AppError {
    AppError { code: 1, message: msg.into() }
}

pub fn data_err(msg: impl std::fmt::Display) -> AppError {
    AppError { code: 2, message: msg.to_string() }
}

pub fn runtime(msg: impl std::fmt::Display) -> AppError {
    AppError { code: 3, message: msg.to_string() }
}

/// Library errors during input handling: malformed or inconsistent data is a
/// validation failure, I/O and internal faults are runtime failures.
pub fn lib_err(e: LibError) -> AppError {
    match e {
        LibError::Parse { .. } | LibError::Integrity(_) | LibError::Validation(_) => data_err(e),
        LibError::Io(_) | LibError::Dimension(_) | LibError::Checkpoint(_) => runtime(e),
    }
}

pub type CmdResult = Result<(), AppError>;

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct SynthOpts {
    pub mode: GenMode,
    pub gen: GenConfig,
    pub lexicon: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn cmd_synth(opts: &SynthOpts) -> CmdResult {
    let gen = GenConfig { mode: opts.mode, ..opts.gen.clone() };
    gen.validate().map_err(|e| usage(e.to_string()))?;
    let lexicon = match &opts.lexicon {
        None => Lexicon::builtin(),
        Some(p) => Lexicon::load(p).map_err(lib_err)?,
    };
    let table = load_perspective_table(opts.table.as_deref()).map_err(lib_err)?;
    let corpus = generate_with_table(&gen, &lexicon, &table).map_err(lib_err)?;
    let labels = oracle_labels(&corpus).map_err(lib_err)?;

    write_file(&opts.out.join("corpus.jsonl"), &corpus.to_jsonl())?;
    let mut summary = String::from("kind,id,label\n");
    for (id, stance) in &labels.author_stances {
        let _ = writeln!(summary, "author,{id},{stance}");
    }
    for (id, stance) in &labels.tweet_stances {
        let _ = writeln!(summary, "tweet,{id},{stance}");
    }
    for (id, p) in &labels.mention_triples {
        let _ = writeln!(summary, "mention,{id},{}", p.label());
    }
    for id in &labels.ambiguous_tweets {
        let _ = writeln!(summary, "ambiguous,{id},");
    }
    write_file(&opts.out.join("oracle_labels.csv"), &summary)?;
    println!(
        "wrote {} authors, {} tweets to {}",
        corpus.authors.len(),
        corpus.tweets.len(),
        opts.out.join("corpus.jsonl").display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Direct,
    Weak,
}

#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub corpus: PathBuf,
    pub mode: TrainMode,
    pub weak_corpus: Option<PathBuf>,
    pub train_authors: usize,
    pub variant: Variant,
    pub model: ModelConfig,
    pub selftrain: SelfTrainConfig,
    pub table: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

fn labelset_to_jsonl(labels: &LabelSet, corpus: &Corpus) -> String {
    let origin = |o: Origin| match o {
        Origin::Seed => "seed",
        Origin::Pseudo => "pseudo",
    };
    let mut out = String::new();
    for (&ai, stance) in &labels.author_seeds {
        let _ = writeln!(
            out,
            "{{\"kind\":\"author\",\"id\":\"{}\",\"stance\":\"{stance}\",\"origin\":\"seed\"}}",
            corpus.authors[ai].id
        );
    }
    for (&ti, &(stance, o)) in &labels.tweets {
        let _ = writeln!(
            out,
            "{{\"kind\":\"tweet\",\"id\":\"{}\",\"stance\":\"{stance}\",\"origin\":\"{}\"}}",
            corpus.tweets[ti].id,
            origin(o)
        );
    }
    for (&mo, &(p, o)) in &labels.mentions {
        let _ = writeln!(
            out,
            "{{\"kind\":\"mention\",\"id\":\"{}\",\"entity\":\"{}\",\"sentiment\":\"{}\",\"role\":\"{}\",\"origin\":\"{}\"}}",
            corpus.mention(mo).id,
            p.entity,
            p.sentiment,
            p.role,
            origin(o)
        );
    }
    out
}

fn metrics_to_csv(log: &[perspectra::selftrain::EpochLog]) -> String {
    let mut out = String::from(
        "epoch,total_loss,tweet_stance_loss,sent_loss,role_loss,map_loss,entity_stance_loss,sent_align_loss,role_align_loss,labelset_tweets,labelset_mentions,new_fraction\n",
    );
    for row in log {
        let nf = row.new_fraction.map(|v| v.to_string()).unwrap_or_default();
        let l = &row.losses;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.epoch,
            l.total,
            l.tweet_stance,
            l.sent,
            l.role,
            l.map,
            l.entity_stance,
            l.sent_align,
            l.role_align,
            row.labelset_tweets,
            row.labelset_mentions,
            nf
        );
    }
    out
}

pub fn cmd_train(opts: &TrainOpts) -> CmdResult {
    let table = load_perspective_table(opts.table.as_deref()).map_err(lib_err)?;
    let base = load_corpus(&opts.corpus).map_err(lib_err)?;
    let (corpus, seed_labels, split) = match opts.mode {
        TrainMode::Direct => {
            let split = split_by_author(&base, opts.train_authors, opts.seed).map_err(lib_err)?;
            let labels = LabelSet::seed_from_authors(&base, &split.train_authors).map_err(lib_err)?;
            (base, labels, Some(split))
        }
        TrainMode::Weak => {
            let weak_path = opts
                .weak_corpus
                .as_ref()
                .ok_or_else(|| usage("--mode weak requires --weak-corpus"))?;
            let weak = load_corpus(weak_path).map_err(lib_err)?;
            let merged = merge_corpora(&base, &weak).map_err(lib_err)?;
            let labels = LabelSet::seed_from_imaginary(&merged).map_err(lib_err)?;
            (merged, labels, None)
        }
    };
    let model_cfg = ModelConfig { seed: opts.seed, ..opts.model };
    let outcome =
        run(&corpus, &seed_labels, &opts.selftrain, model_cfg, opts.variant, &table).map_err(lib_err)?;

    let ckpt = Checkpoint {
        opt_step: outcome.opt.opt.step_count(),
        moments: outcome.opt.moments.clone(),
        meta: CheckpointMeta {
            counts: NodeCounts::of(&outcome.graph),
            epoch: outcome.final_epoch as u64,
            rng_seed: opts.seed,
            rng_word_pos: outcome.rng_word_pos,
        },
        params: outcome.params.clone(),
    };
    save_checkpoint(&ckpt, &ensure_dir(&opts.out)?.join("checkpoint.bin")).map_err(lib_err)?;
    write_file(&opts.out.join("metrics.csv"), &metrics_to_csv(&outcome.log))?;
    write_file(&opts.out.join("labels.jsonl"), &labelset_to_jsonl(&outcome.labels, &corpus))?;
    if let Some(split) = split {
        let mut csv = String::from("author,role\n");
        for a in &split.train_authors {
            let _ = writeln!(csv, "{a},train");
        }
        for a in &split.test_authors {
            let _ = writeln!(csv, "{a},test");
        }
        write_file(&opts.out.join("split.csv"), &csv)?;
    }
    println!(
        "trained {} epochs; {} labeled tweets ({} pseudo); checkpoint at {}",
        outcome.final_epoch,
        outcome.labels.tweets.len(),
        outcome.labels.pseudo_tweet_count(),
        opts.out.join("checkpoint.bin").display()
    );
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<PathBuf, AppError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

/// Rebuilds the graph and features exactly as training does, from the
/// checkpoint's recorded configuration.
fn rebuild_for_inference(
    corpus: &Corpus,
    ckpt: &Checkpoint,
) -> Result<(HeteroGraph, Matrix<f32>), AppError> {
    let cfg = ckpt.params.config;
    let options = GraphOptions { include_authors: cfg.author_aware };
    let graph = build_graph_with(corpus, None, options).map_err(lib_err)?;
    let counts = NodeCounts::of(&graph);
    if counts != ckpt.meta.counts {
        return Err(data_err(format!(
            "checkpoint/corpus mismatch: checkpoint built for {:?}, corpus gives {counts:?}",
            ckpt.meta.counts
        )));
    }
    let featurizer = HashFeaturizer::new(cfg.d_in).map_err(lib_err)?;
    let features =
        build_node_features(corpus, &graph, &featurizer, ckpt.meta.rng_seed).map_err(lib_err)?;
    // Mention edges take the prior classifiers' argmax types.
    let mention_nodes: Vec<usize> =
        (0..graph.num_mentions()).map(|mo| graph.mention_node(mo)).collect();
    let mut prior_inputs = Matrix::zeros(mention_nodes.len(), cfg.d_in);
    for (i, &node) in mention_nodes.iter().enumerate() {
        prior_inputs.row_mut(i).copy_from_slice(features.row(node));
    }
    let sent_logits = matmul(&prior_inputs, &ckpt.params.prior_sent).map_err(lib_err)?;
    let role_logits = matmul(&prior_inputs, &ckpt.params.prior_role).map_err(lib_err)?;
    let assignments: Vec<(Sentiment, Role)> = (0..graph.num_mentions())
        .map(|mo| {
            (
                Sentiment::from_code(argmax(sent_logits.row(mo))).expect("2-way prior"),
                Role::from_code(argmax(role_logits.row(mo))).expect("2-way prior"),
            )
        })
        .collect();
    let graph = graph.retype_mention_edges(&assignments).map_err(lib_err)?;
    Ok((graph, features))
}

fn predictions_to_csv(
    corpus: &Corpus,
    graph: &HeteroGraph,
    preds: &Predictions<f32>,
) -> String {
    let mut out = String::from("kind,id,task,label,confidence\n");
    for (ti, t) in corpus.tweets.iter().enumerate() {
        let row = preds.tweet_stance.row(ti);
        let label = Stance::from_code(argmax(row)).expect("2-way head");
        let _ = writeln!(out, "tweet,{},stance,{label},{}", t.id, row[argmax(row)]);
    }
    for (mo, _, m) in corpus.mentions() {
        let map_row = preds.map.row(mo);
        let entity =
            perspectra::corpus::AbstractEntity::from_code(argmax(map_row)).expect("11-way head");
        let _ = writeln!(out, "mention,{},map,{entity},{}", m.id, map_row[argmax(map_row)]);
        let sent_row = preds.sent.row(mo);
        let sentiment = Sentiment::from_code(argmax(sent_row)).expect("2-way head");
        let _ = writeln!(out, "mention,{},sentiment,{sentiment},{}", m.id, sent_row[argmax(sent_row)]);
        let role_row = preds.role.row(mo);
        let role = Role::from_code(argmax(role_row)).expect("2-way head");
        let _ = writeln!(out, "mention,{},role,{role},{}", m.id, role_row[argmax(role_row)]);
        let es_row = preds.entity_stance.row(mo);
        let es = Stance::from_code(argmax(es_row)).expect("2-way head");
        let _ = writeln!(out, "mention,{},entity_stance,{es},{}", m.id, es_row[argmax(es_row)]);
    }
    let tweet_author: Vec<usize> =
        (0..corpus.tweets.len()).map(|ti| graph.tweet_author_ordinal(ti)).collect();
    let stances = predict_author_stances(preds, &tweet_author, corpus.authors.len());
    for (ai, a) in corpus.authors.iter().enumerate() {
        if let Some(stance) = stances[ai] {
            let n = corpus.tweets_of_author(ai).len();
            let votes = corpus
                .tweets_of_author(ai)
                .iter()
                .filter(|&&ti| argmax(preds.tweet_stance.row(ti)) == stance.code())
                .count();
            let _ = writeln!(out, "author,{},stance,{stance},{}", a.id, votes as f32 / n as f32);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct InferOpts {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub weak_corpus: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn cmd_infer(opts: &InferOpts) -> CmdResult {
    let ckpt = load_checkpoint(&opts.checkpoint).map_err(lib_err)?;
    let mut corpus = load_corpus(&opts.corpus).map_err(lib_err)?;
    if let Some(weak) = &opts.weak_corpus {
        let weak = load_corpus(weak).map_err(lib_err)?;
        corpus = merge_corpora(&corpus, &weak).map_err(lib_err)?;
    }
    let (graph, features) = rebuild_for_inference(&corpus, &ckpt)?;
    let preds = heads_forward(&graph, &features, &ckpt.params).map_err(lib_err)?;
    write_file(&opts.out.join("preds.csv"), &predictions_to_csv(&corpus, &graph, &preds))?;
    println!("wrote predictions for {} tweets to {}", corpus.tweets.len(), opts.out.join("preds.csv").display());
    Ok(())
}

/// Parsed preds.csv contents.
#[derive(Debug, Default, Clone)]
pub struct PredFile {
    pub tweet_stance: BTreeMap<String, Stance>,
    pub mention_map: BTreeMap<String, perspectra::corpus::AbstractEntity>,
    pub mention_sent: BTreeMap<String, Sentiment>,
    pub mention_role: BTreeMap<String, Role>,
    pub author_stance: BTreeMap<String, Stance>,
}

pub fn read_preds(path: &Path) -> Result<PredFile, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut preds = PredFile::default();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(data_err(format!("preds.csv line {}: expected 5 fields", idx + 1)));
        }
        let (kind, id, task, label) = (fields[0], fields[1], fields[2], fields[3]);
        let parse = |e: LibError| data_err(format!("preds.csv line {}: {e}", idx + 1));
        match (kind, task) {
            ("tweet", "stance") => {
                preds.tweet_stance.insert(id.into(), label.parse().map_err(parse)?);
            }
            ("mention", "map") => {
                preds.mention_map.insert(id.into(), label.parse().map_err(parse)?);
            }
            ("mention", "sentiment") => {
                preds.mention_sent.insert(id.into(), label.parse().map_err(parse)?);
            }
            ("mention", "role") => {
                preds.mention_role.insert(id.into(), label.parse().map_err(parse)?);
            }
            ("mention", "entity_stance") => {}
            ("author", "stance") => {
                preds.author_stance.insert(id.into(), label.parse().map_err(parse)?);
            }
            other => return Err(data_err(format!("preds.csv line {}: unknown row {other:?}", idx + 1))),
        }
    }
    Ok(preds)
}

/// Reads a split.csv written by `train --mode direct` and returns the test
/// author ids.
pub fn read_test_split(path: &Path) -> Result<Vec<String>, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut test = Vec::new();
    for line in text.lines().skip(1) {
        if let Some((author, role)) = line.split_once(',') {
            if role.trim() == "test" {
                test.push(author.trim().to_string());
            }
        }
    }
    Ok(test)
}

#[derive(Debug, Clone)]
pub struct EvalOpts {
    pub preds: PathBuf,
    pub corpus: PathBuf,
    pub split: Option<PathBuf>,
    pub out: PathBuf,
}

fn stance_classes() -> Vec<String> {
    Stance::ALL.iter().map(|s| s.token().to_string()).collect()
}

struct TaskEval {
    name: &'static str,
    report: F1Report,
    n: usize,
}

pub fn cmd_eval(opts: &EvalOpts) -> CmdResult {
    let corpus = load_corpus(&opts.corpus).map_err(lib_err)?;
    let preds = read_preds(&opts.preds)?;
    let test_authors: Option<Vec<String>> = match &opts.split {
        Some(p) => Some(read_test_split(p)?),
        None => None,
    };
    let in_scope = |author_id: &str| match &test_authors {
        None => true,
        Some(list) => list.iter().any(|a| a == author_id),
    };
    let ambiguous = flag_ambiguous(&corpus);

    let mut tasks: Vec<TaskEval> = Vec::new();
    {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for a in &corpus.authors {
            let (Some(g), Some(&p)) = (a.gold_stance, preds.author_stance.get(&a.id)) else { continue };
            if !in_scope(&a.id) {
                continue;
            }
            pred.push(p.code());
            gold.push(g.code());
        }
        let n = gold.len();
        let report = f1(&pred, &gold, &stance_classes()).map_err(lib_err)?;
        tasks.push(TaskEval { name: "author_stance", report, n });
    }
    for (name, only_ambiguous) in [("all_tweet_stance", false), ("ambiguous_tweet_stance", true)] {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for t in &corpus.tweets {
            let (Some(g), Some(&p)) = (t.gold_stance, preds.tweet_stance.get(&t.id)) else { continue };
            if !in_scope(&t.author_id) || (only_ambiguous && !ambiguous.contains(&t.id)) {
                continue;
            }
            pred.push(p.code());
            gold.push(g.code());
        }
        let n = gold.len();
        let report = f1(&pred, &gold, &stance_classes()).map_err(lib_err)?;
        tasks.push(TaskEval { name, report, n });
    }
    {
        let two = |names: [&str; 2]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut sent = (Vec::new(), Vec::new());
        let mut role = (Vec::new(), Vec::new());
        let mut map = (Vec::new(), Vec::new());
        for (_, ti, m) in corpus.mentions() {
            let Some(g) = &m.gold else { continue };
            if !in_scope(&corpus.tweets[ti].author_id) {
                continue;
            }
            if let Some(&p) = preds.mention_sent.get(&m.id) {
                sent.0.push(p.code());
                sent.1.push(g.sentiment.code());
            }
            if let Some(&p) = preds.mention_role.get(&m.id) {
                role.0.push(p.code());
                role.1.push(g.role.code());
            }
            if let Some(&p) = preds.mention_map.get(&m.id) {
                map.0.push(p.code());
                map.1.push(g.entity.code());
            }
        }
        let n = sent.1.len();
        let report = f1(&sent.0, &sent.1, &two(["positive", "negative"])).map_err(lib_err)?;
        tasks.push(TaskEval { name: "entity_sentiment", report, n });
        let n = role.1.len();
        let report = f1(&role.0, &role.1, &two(["actor", "target"])).map_err(lib_err)?;
        tasks.push(TaskEval { name: "entity_role", report, n });
        let classes: Vec<String> =
            perspectra::corpus::AbstractEntity::ALL.iter().map(|e| e.token().to_string()).collect();
        let n = map.1.len();
        let report = f1(&map.0, &map.1, &classes).map_err(lib_err)?;
        tasks.push(TaskEval { name: "entity_mapping", report, n });
    }

    let mut csv = String::from("task,macro_f1,weighted_f1,n\n");
    println!("{:<24} {:>9} {:>11} {:>7}", "task", "macro_f1", "weighted_f1", "n");
    for t in &tasks {
        let _ = writeln!(csv, "{},{},{},{}", t.name, t.report.macro_f1, t.report.weighted_f1, t.n);
        println!("{:<24} {:>9.4} {:>11.4} {:>7}", t.name, t.report.macro_f1, t.report.weighted_f1, t.n);
    }
    write_file(&opts.out.join("eval.csv"), &csv)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeKind {
    Pmi,
    Trends,
    Correlation,
}

#[derive(Debug, Clone)]
pub struct AnalyzeOpts {
    pub kind: AnalyzeKind,
    pub preds: PathBuf,
    pub corpus: PathBuf,
    pub min_frac: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Joins predicted labels with the corpus structure.
fn predicted_assignments(corpus: &Corpus, preds: &PredFile) -> PerspectiveAssignments {
    let mut tweets = Vec::new();
    let mut index_of = BTreeMap::new();
    for t in &corpus.tweets {
        if let Some(&stance) = preds.tweet_stance.get(&t.id) {
            index_of.insert(t.id.clone(), tweets.len());
            tweets.push((t.timestamp.clone(), stance));
        }
    }
    let mut mentions = Vec::new();
    for (_, ti, m) in corpus.mentions() {
        let Some(&idx) = index_of.get(&corpus.tweets[ti].id) else { continue };
        let (Some(&e), Some(&s), Some(&r)) = (
            preds.mention_map.get(&m.id),
            preds.mention_sent.get(&m.id),
            preds.mention_role.get(&m.id),
        ) else {
            continue;
        };
        mentions.push((idx, Perspective::new(e, s, r)));
    }
    PerspectiveAssignments { tweets, mentions }
}

pub fn cmd_analyze(opts: &AnalyzeOpts) -> CmdResult {
    let corpus = load_corpus(&opts.corpus).map_err(lib_err)?;
    let preds = read_preds(&opts.preds)?;
    match opts.kind {
        AnalyzeKind::Pmi => {
            if !(0.0..=1.0).contains(&opts.min_frac) {
                return Err(usage(format!("--min-frac must be in [0,1], got {}", opts.min_frac)));
            }
            let assignments = predicted_assignments(&corpus, &preds);
            let report = pmi(&assignments, opts.min_frac).map_err(lib_err)?;
            write_file(&opts.out.join("pmi.csv"), &report.to_csv())?;
            println!("wrote {} PMI rows to {}", report.entries.len(), opts.out.join("pmi.csv").display());
        }
        AnalyzeKind::Trends => {
            let assignments = predicted_assignments(&corpus, &preds);
            let report = temporal_trends(&assignments).map_err(lib_err)?;
            write_file(&opts.out.join("trends.csv"), &report.to_csv())?;
            println!(
                "wrote {} days of trends to {}",
                report.stance_shares.len(),
                opts.out.join("trends.csv").display()
            );
        }
        AnalyzeKind::Correlation => {
            let report = behavior_correlations(&corpus, &preds.author_stance).map_err(lib_err)?;
            write_file(&opts.out.join("correlations.csv"), &report.to_csv())?;
            println!("wrote correlations to {}", opts.out.join("correlations.csv").display());
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct KeywordOpts {
    pub corpus: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
}

/// Keyword-rule predictions in the same preds.csv format, so they flow
/// through `eval` and `analyze` unchanged.
pub fn cmd_keyword(opts: &KeywordOpts) -> CmdResult {
    let corpus = load_corpus(&opts.corpus).map_err(lib_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = String::from("kind,id,task,label,confidence\n");
    let mut stances: Vec<Stance> = Vec::with_capacity(corpus.tweets.len());
    for t in &corpus.tweets {
        let stance = keyword_stance(t, &mut rng);
        stances.push(stance);
        let _ = writeln!(out, "tweet,{},stance,{stance},1", t.id);
    }
    for (ai, a) in corpus.authors.iter().enumerate() {
        let own = corpus.tweets_of_author(ai);
        if own.is_empty() {
            continue;
        }
        let black = own.iter().filter(|&&ti| stances[ti] == Stance::ProBlackLM).count();
        let blue = own.len() - black;
        let stance = if black >= blue { Stance::ProBlackLM } else { Stance::ProBlueLM };
        let _ = writeln!(out, "author,{},stance,{stance},{}", a.id, black.max(blue) as f32 / own.len() as f32);
    }
    write_file(&opts.out.join("preds.csv"), &out)?;
    println!("wrote keyword-rule predictions to {}", opts.out.join("preds.csv").display());
    Ok(())
}

/// The perspective-table default used when no path is given, exposed for the
/// round-trip check in the test suite.
pub fn default_table() -> PerspectiveTable {
    PerspectiveTable::default()
}
