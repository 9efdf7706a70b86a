//! Fixed-width input features for every node type via signed feature hashing.
//!
//! Stateless and deterministic: the same text always maps to the same vector,
//! and all nonzero vectors are L2-normalized.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeKind};
use crate::numkit::Matrix;

/// Text-to-vector contract: pure, same text same vector, output L2 norm is
/// 0 (empty) or 1.
pub trait Featurizer {
    fn featurize(&self, text: &str) -> Vec<f32>;
    fn dim(&self) -> usize;
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercases and splits on non-alphanumerics, keeping '#' and '@' prefixes
/// as part of their token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if c == '#' || c == '@' {
            flush_token(&mut tokens, &mut current);
            current.push(c);
        } else {
            flush_token(&mut tokens, &mut current);
        }
    }
    flush_token(&mut tokens, &mut current);
    tokens
}

fn flush_token(tokens: &mut Vec<String>, current: &mut String) {
    if current.chars().any(|c| c.is_alphanumeric()) {
        tokens.push(std::mem::take(current));
    } else {
        current.clear();
    }
}

fn l2_normalize(v: &mut [f32]) {
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Signed feature hashing into `d` buckets. Each token adds the sign of the
/// high 32-bit half of its 64-bit FNV-1a hash at the index given by the low
/// half mod `d`.
#[derive(Debug, Clone)]
pub struct HashFeaturizer {
    dim: usize,
}

impl HashFeaturizer {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 8 || !dim.is_power_of_two() {
            return Err(Error::Validation(format!(
                "feature dim must be a power of two >= 8, got {dim}"
            )));
        }
        Ok(HashFeaturizer { dim })
    }
}

impl Featurizer for HashFeaturizer {
    fn featurize(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let index = (h & 0xffff_ffff) as usize & (self.dim - 1);
            let sign = if (h >> 32) as u32 as i32 >= 0 { 1.0 } else { -1.0 };
            v[index] += sign;
        }
        l2_normalize(&mut v);
        v
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// One-shot signed hashing of a text into `d` buckets.
pub fn hash_featurize(text: &str, d: usize) -> Result<Vec<f32>> {
    Ok(HashFeaturizer::new(d)?.featurize(text))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-author RNG stream derived from (run seed, author ordinal), so author
/// rows are independent of visit order.
fn author_stream(seed: u64, author_ordinal: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(author_ordinal as u64)))
}

/// How many tweets back an author's feature row when they have no profile.
pub const AUTHOR_TWEET_SAMPLE: usize = 5;

/// The tweet ordinals (positions into the author's own tweet list) sampled
/// for an author without a profile: min(k, n) distinct picks.
pub fn sampled_tweet_positions(seed: u64, author_ordinal: usize, n_tweets: usize) -> Vec<usize> {
    let k = AUTHOR_TWEET_SAMPLE.min(n_tweets);
    let mut rng = author_stream(seed, author_ordinal);
    let mut positions: Vec<usize> = (0..n_tweets).collect();
    for i in 0..k {
        let j = rng.random_range(i..n_tweets);
        positions.swap(i, j);
    }
    positions.truncate(k);
    positions.sort_unstable();
    positions
}

fn mean_of_rows(rows: &[Vec<f32>], dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; dim];
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        for (o, &x) in out.iter_mut().zip(r.iter()) {
            *o += x;
        }
    }
    let inv = 1.0 / rows.len() as f32;
    for o in out.iter_mut() {
        *o *= inv;
    }
    l2_normalize(&mut out);
    out
}

/// Builds the node feature matrix, row-aligned with graph node ordinals.
///
/// Tweets hash their text, mentions their surface, hashtags and keywords
/// their token. Authors hash their profile when present; otherwise they
/// average a fixed-size sample of their own tweets (imaginary authors
/// average all of their tweets) and re-normalize.
pub fn build_node_features(
    corpus: &Corpus,
    graph: &HeteroGraph,
    featurizer: &dyn Featurizer,
    seed: u64,
) -> Result<Matrix<f32>> {
    let d = featurizer.dim();
    let mut rows: Vec<Vec<f32>> = vec![Vec::new(); graph.num_nodes()];
    let tweet_vectors: Vec<Vec<f32>> =
        corpus.tweets.iter().map(|t| featurizer.featurize(&t.text)).collect();
    for (ti, v) in tweet_vectors.iter().enumerate() {
        rows[graph.tweet_node(ti)] = v.clone();
    }
    for (mo, _, m) in corpus.mentions() {
        rows[graph.mention_node(mo)] = featurizer.featurize(&m.surface);
    }
    for (ordinal, node) in graph.nodes().iter().enumerate() {
        match node.kind {
            NodeKind::Hashtag | NodeKind::Keyword => {
                rows[ordinal] = featurizer.featurize(&node.id);
            }
            _ => {}
        }
    }
    if graph.has_authors() {
        for (ai, a) in corpus.authors.iter().enumerate() {
            let ordinal = graph.author_node(ai).expect("graph has authors");
            let own = corpus.tweets_of_author(ai);
            rows[ordinal] = if let Some(profile) = &a.profile {
                featurizer.featurize(profile)
            } else if own.is_empty() {
                warn!("author {} has no profile and no tweets; zero feature row", a.id);
                vec![0.0; d]
            } else if a.imaginary {
                let vecs: Vec<Vec<f32>> = own.iter().map(|&ti| tweet_vectors[ti].clone()).collect();
                mean_of_rows(&vecs, d)
            } else {
                let sample = sampled_tweet_positions(seed, ai, own.len());
                let vecs: Vec<Vec<f32>> =
                    sample.iter().map(|&pos| tweet_vectors[own[pos]].clone()).collect();
                mean_of_rows(&vecs, d)
            };
        }
    }
    let matrix = Matrix::from_rows(&rows);
    if matrix.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite node feature".into()));
    }
    Ok(matrix)
}

/// Applies a precomputed-embedding import file on top of hashed features.
///
/// Format: header line `dim=<d>`, then `<node-kind>:<id>\t<f32 csv>` rows.
/// Rows override features for matching (kind, id) nodes; unmatched rows are
/// ignored. Returns the number of rows applied.
pub fn apply_embedding_import(
    features: &mut Matrix<f32>,
    graph: &HeteroGraph,
    text: &str,
) -> Result<usize> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty embedding import".into() })?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("expected `dim=<d>`, got {header:?}") })?;
    if dim != features.cols() {
        return Err(Error::Validation(format!(
            "embedding import dim {dim} does not match feature dim {}",
            features.cols()
        )));
    }
    let mut index: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (ordinal, node) in graph.nodes().iter().enumerate() {
        index.insert((node.kind.name(), node.id.as_str()), ordinal);
    }
    let mut applied = 0;
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: idx + 1, msg };
        let (key, csv) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `<kind>:<id>\\t<csv>`".into()))?;
        let (kind, id) = key
            .split_once(':')
            .ok_or_else(|| err(format!("expected `<kind>:<id>`, got {key:?}")))?;
        let values: Vec<f32> = csv
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("bad float: {e}")))?;
        if values.len() != dim {
            return Err(err(format!("row has {} values, expected {dim}", values.len())));
        }
        if let Some(&ordinal) = index.get(&(kind, id)) {
            features.row_mut(ordinal).copy_from_slice(&values);
            applied += 1;
        }
    }
    Ok(applied)
}
