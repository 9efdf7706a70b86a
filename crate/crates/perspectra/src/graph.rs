//! The heterogeneous multi-relational graph over authors, tweets, entity
//! mentions, hashtags, and profile keywords.
//!
//! Eight base relations get an auto-derived inverse each, plus one shared
//! self-loop relation: 17 relation slots in total. Mentions are distinct
//! nodes even when lexically equal; their tweet edge carries one of four
//! (sentiment, role) subtypes.

use std::collections::BTreeMap;
use std::io::Write;

use crate::corpus::{Corpus, Role, Sentiment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKind {
    Author,
    Tweet,
    Entity,
    Hashtag,
    Keyword,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Author => "author",
            NodeKind::Tweet => "tweet",
            NodeKind::Entity => "entity",
            NodeKind::Hashtag => "hashtag",
            NodeKind::Keyword => "keyword",
        }
    }
}

/// Base relations. Slot layout: base kinds at 0..8, their inverses at 8..16,
/// the shared self-loop at 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    AuthorTweets,
    AuthorRetweets,
    AuthorUsesKeyword,
    HashtagUsedIn,
    MentionPosActor,
    MentionNegActor,
    MentionPosTarget,
    MentionNegTarget,
}

impl RelationKind {
    pub const ALL: [RelationKind; 8] = [
        RelationKind::AuthorTweets,
        RelationKind::AuthorRetweets,
        RelationKind::AuthorUsesKeyword,
        RelationKind::HashtagUsedIn,
        RelationKind::MentionPosActor,
        RelationKind::MentionNegActor,
        RelationKind::MentionPosTarget,
        RelationKind::MentionNegTarget,
    ];

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn inverse_slot(self) -> usize {
        self.slot() + NUM_BASE_RELATIONS
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::AuthorTweets => "author_tweets",
            RelationKind::AuthorRetweets => "author_retweets",
            RelationKind::AuthorUsesKeyword => "author_uses_keyword",
            RelationKind::HashtagUsedIn => "hashtag_used_in",
            RelationKind::MentionPosActor => "mention_pos_actor",
            RelationKind::MentionNegActor => "mention_neg_actor",
            RelationKind::MentionPosTarget => "mention_pos_target",
            RelationKind::MentionNegTarget => "mention_neg_target",
        }
    }

    /// The mention-edge subtype for a (sentiment, role) prior.
    pub fn mention_subtype(sentiment: Sentiment, role: Role) -> RelationKind {
        match (sentiment, role) {
            (Sentiment::Positive, Role::Actor) => RelationKind::MentionPosActor,
            (Sentiment::Negative, Role::Actor) => RelationKind::MentionNegActor,
            (Sentiment::Positive, Role::Target) => RelationKind::MentionPosTarget,
            (Sentiment::Negative, Role::Target) => RelationKind::MentionNegTarget,
        }
    }
}

pub const NUM_BASE_RELATIONS: usize = 8;
pub const SELF_LOOP_SLOT: usize = 2 * NUM_BASE_RELATIONS;
pub const NUM_RELATION_SLOTS: usize = 2 * NUM_BASE_RELATIONS + 1;

pub fn slot_name(slot: usize) -> String {
    if slot == SELF_LOOP_SLOT {
        "self_loop".to_string()
    } else if slot < NUM_BASE_RELATIONS {
        RelationKind::ALL[slot].name().to_string()
    } else {
        format!("inv_{}", RelationKind::ALL[slot - NUM_BASE_RELATIONS].name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub kind: NodeKind,
    /// Source id: author/tweet/mention id, or the hashtag/keyword string.
    pub id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    /// When false, author and keyword nodes and all their relations are
    /// omitted (the text-only ablation).
    pub include_authors: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { include_authors: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    nodes: Vec<NodeInfo>,
    /// Edge lists per relation slot, (src, dst), in deterministic build order.
    edges: Vec<Vec<(u32, u32)>>,
    /// In-degree per slot per node, for normalized aggregation.
    in_degree: Vec<Vec<u32>>,
    options: GraphOptions,
    n_authors: usize,
    author_nodes: Vec<usize>,
    tweet_nodes: Vec<usize>,
    mention_nodes: Vec<usize>,
    hashtag_nodes: BTreeMap<String, usize>,
    keyword_nodes: BTreeMap<String, usize>,
    /// Mention ordinal -> tweet ordinal.
    mention_tweet: Vec<usize>,
    /// Tweet ordinal -> author ordinal.
    tweet_author: Vec<usize>,
    /// Current subtype of each mention edge.
    mention_types: Vec<(Sentiment, Role)>,
}

impl HeteroGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, ordinal: usize) -> &NodeInfo {
        &self.nodes[ordinal]
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn edges(&self, slot: usize) -> &[(u32, u32)] {
        &self.edges[slot]
    }

    pub fn in_degree(&self, slot: usize, node: usize) -> u32 {
        self.in_degree[slot][node]
    }

    pub fn options(&self) -> GraphOptions {
        self.options
    }

    pub fn has_authors(&self) -> bool {
        self.options.include_authors
    }

    pub fn author_node(&self, author_ordinal: usize) -> Option<usize> {
        if self.options.include_authors {
            Some(self.author_nodes[author_ordinal])
        } else {
            None
        }
    }

    pub fn tweet_node(&self, tweet_ordinal: usize) -> usize {
        self.tweet_nodes[tweet_ordinal]
    }

    pub fn mention_node(&self, mention_ordinal: usize) -> usize {
        self.mention_nodes[mention_ordinal]
    }

    pub fn num_tweets(&self) -> usize {
        self.tweet_nodes.len()
    }

    pub fn num_mentions(&self) -> usize {
        self.mention_nodes.len()
    }

    pub fn num_authors(&self) -> usize {
        self.n_authors
    }

    pub fn mention_tweet(&self, mention_ordinal: usize) -> usize {
        self.mention_tweet[mention_ordinal]
    }

    pub fn tweet_author_ordinal(&self, tweet_ordinal: usize) -> usize {
        self.tweet_author[tweet_ordinal]
    }

    pub fn mention_types(&self) -> &[(Sentiment, Role)] {
        &self.mention_types
    }

    /// Replaces every mention edge subtype; all other structure is unchanged.
    pub fn retype_mention_edges(&self, assignments: &[(Sentiment, Role)]) -> Result<HeteroGraph> {
        if assignments.len() != self.mention_nodes.len() {
            return Err(Error::Validation(format!(
                "got {} mention assignments for {} mentions",
                assignments.len(),
                self.mention_nodes.len()
            )));
        }
        let mut g = self.clone();
        for kind in [
            RelationKind::MentionPosActor,
            RelationKind::MentionNegActor,
            RelationKind::MentionPosTarget,
            RelationKind::MentionNegTarget,
        ] {
            g.edges[kind.slot()].clear();
            g.edges[kind.inverse_slot()].clear();
            g.in_degree[kind.slot()].fill(0);
            g.in_degree[kind.inverse_slot()].fill(0);
        }
        for (mo, &(sentiment, role)) in assignments.iter().enumerate() {
            let kind = RelationKind::mention_subtype(sentiment, role);
            let src = g.mention_nodes[mo] as u32;
            let dst = g.tweet_nodes[g.mention_tweet[mo]] as u32;
            g.push_edge(kind.slot(), src, dst);
            g.push_edge(kind.inverse_slot(), dst, src);
        }
        g.mention_types = assignments.to_vec();
        Ok(g)
    }

    fn push_edge(&mut self, slot: usize, src: u32, dst: u32) {
        self.edges[slot].push((src, dst));
        self.in_degree[slot][dst as usize] += 1;
    }

    /// Debug dump: `NODE <ordinal> <kind> <id>` lines, then
    /// `REL <kind> <src> <dst>` lines.
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(w, "NODE {i} {} {}", n.kind.name(), n.id)?;
        }
        for slot in 0..NUM_RELATION_SLOTS {
            for &(src, dst) in &self.edges[slot] {
                writeln!(w, "REL {} {src} {dst}", slot_name(slot))?;
            }
        }
        Ok(())
    }
}

/// Builds the graph with all relations. Absent priors default every mention
/// edge to the positive-actor subtype, pending assignment.
pub fn build_graph(corpus: &Corpus, priors: Option<&[(Sentiment, Role)]>) -> Result<HeteroGraph> {
    build_graph_with(corpus, priors, GraphOptions::default())
}

pub fn build_graph_with(
    corpus: &Corpus,
    priors: Option<&[(Sentiment, Role)]>,
    options: GraphOptions,
) -> Result<HeteroGraph> {
    if let Some(p) = priors {
        if p.len() != corpus.num_mentions() {
            return Err(Error::Validation(format!(
                "got {} mention priors for {} mentions",
                p.len(),
                corpus.num_mentions()
            )));
        }
    }
    let mut nodes = Vec::new();
    let mut author_nodes = Vec::new();
    if options.include_authors {
        for a in &corpus.authors {
            author_nodes.push(nodes.len());
            nodes.push(NodeInfo { kind: NodeKind::Author, id: a.id.clone() });
        }
    }
    let mut tweet_nodes = Vec::new();
    for t in &corpus.tweets {
        tweet_nodes.push(nodes.len());
        nodes.push(NodeInfo { kind: NodeKind::Tweet, id: t.id.clone() });
    }
    let mut mention_nodes = Vec::new();
    let mut mention_tweet = Vec::new();
    for (_, ti, m) in corpus.mentions() {
        mention_nodes.push(nodes.len());
        mention_tweet.push(ti);
        nodes.push(NodeInfo { kind: NodeKind::Entity, id: m.id.clone() });
    }
    let mut hashtag_nodes: BTreeMap<String, usize> = BTreeMap::new();
    for t in &corpus.tweets {
        for h in &t.hashtags {
            if !hashtag_nodes.contains_key(h) {
                hashtag_nodes.insert(h.clone(), nodes.len());
                nodes.push(NodeInfo { kind: NodeKind::Hashtag, id: h.clone() });
            }
        }
    }
    let mut keyword_nodes: BTreeMap<String, usize> = BTreeMap::new();
    if options.include_authors {
        for a in &corpus.authors {
            for k in &a.keywords {
                if !keyword_nodes.contains_key(k) {
                    keyword_nodes.insert(k.clone(), nodes.len());
                    nodes.push(NodeInfo { kind: NodeKind::Keyword, id: k.clone() });
                }
            }
        }
    }

    let tweet_author: Vec<usize> = corpus
        .tweets
        .iter()
        .map(|t| corpus.author_ordinal(&t.author_id).expect("validated corpus"))
        .collect();

    let mut g = HeteroGraph {
        edges: vec![Vec::new(); NUM_RELATION_SLOTS],
        in_degree: vec![vec![0u32; nodes.len()]; NUM_RELATION_SLOTS],
        nodes,
        options,
        n_authors: corpus.authors.len(),
        author_nodes,
        tweet_nodes,
        mention_nodes,
        hashtag_nodes,
        keyword_nodes,
        mention_tweet,
        tweet_author,
        mention_types: Vec::new(),
    };

    if options.include_authors {
        for ti in 0..corpus.tweets.len() {
            let a = g.author_nodes[g.tweet_author[ti]] as u32;
            let tn = g.tweet_nodes[ti] as u32;
            g.push_edge(RelationKind::AuthorTweets.slot(), a, tn);
        }
        for (ai, author) in corpus.authors.iter().enumerate() {
            let src = g.author_nodes[ai] as u32;
            for r in &author.retweets {
                let dst = g.author_nodes[corpus.author_ordinal(r).expect("validated corpus")] as u32;
                g.push_edge(RelationKind::AuthorRetweets.slot(), src, dst);
            }
        }
        for (ai, author) in corpus.authors.iter().enumerate() {
            let src = g.author_nodes[ai] as u32;
            let mut seen: Vec<&str> = Vec::new();
            for k in &author.keywords {
                if seen.contains(&k.as_str()) {
                    continue;
                }
                seen.push(k);
                let dst = g.keyword_nodes[k] as u32;
                g.push_edge(RelationKind::AuthorUsesKeyword.slot(), src, dst);
            }
        }
    }
    for (ti, t) in corpus.tweets.iter().enumerate() {
        let tn = g.tweet_nodes[ti] as u32;
        let mut seen: Vec<&str> = Vec::new();
        for h in &t.hashtags {
            if seen.contains(&h.as_str()) {
                continue;
            }
            seen.push(h);
            let src = g.hashtag_nodes[h] as u32;
            g.push_edge(RelationKind::HashtagUsedIn.slot(), src, tn);
        }
    }
    let default_type = (Sentiment::Positive, Role::Actor);
    let mut mention_types = Vec::with_capacity(g.mention_nodes.len());
    for mo in 0..g.mention_nodes.len() {
        let (sentiment, role) = priors.map_or(default_type, |p| p[mo]);
        mention_types.push((sentiment, role));
        let kind = RelationKind::mention_subtype(sentiment, role);
        let src = g.mention_nodes[mo] as u32;
        let dst = g.tweet_nodes[g.mention_tweet[mo]] as u32;
        g.push_edge(kind.slot(), src, dst);
    }
    g.mention_types = mention_types;

    // Inverses are exact transposes of the base lists.
    for kind in RelationKind::ALL {
        let base: Vec<(u32, u32)> = g.edges[kind.slot()].clone();
        for (src, dst) in base {
            g.push_edge(kind.inverse_slot(), dst, src);
        }
    }
    for i in 0..g.nodes.len() {
        g.push_edge(SELF_LOOP_SLOT, i as u32, i as u32);
    }
    Ok(g)
}
