//! Domain data model, corpus (de)serialization, and the train/test split.
//!
//! A corpus file is UTF-8 with one JSON object per line, discriminated by a
//! `"type"` field (`author` or `tweet`). Serialization is canonical: loading
//! a saved corpus and saving it again is byte-identical.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camp label of a tweet or author.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    #[serde(rename = "pro_blacklm")]
    ProBlackLM,
    #[serde(rename = "pro_bluelm")]
    ProBlueLM,
}

impl Stance {
    pub const ALL: [Stance; 2] = [Stance::ProBlackLM, Stance::ProBlueLM];

    pub fn opponent(self) -> Stance {
        match self {
            Stance::ProBlackLM => Stance::ProBlueLM,
            Stance::ProBlueLM => Stance::ProBlackLM,
        }
    }

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Stance> {
        Stance::ALL.get(code).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Stance::ProBlackLM => "pro_blacklm",
            Stance::ProBlueLM => "pro_bluelm",
        }
    }
}

impl FromStr for Stance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pro_blacklm" => Ok(Stance::ProBlackLM),
            "pro_bluelm" => Ok(Stance::ProBlueLM),
            other => Err(Error::Validation(format!("unknown stance token {other:?}"))),
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Sentiment expressed towards an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    #[serde(rename = "positive")]
    Positive,
    #[serde(rename = "negative")]
    Negative,
}

impl Sentiment {
    pub const ALL: [Sentiment; 2] = [Sentiment::Positive, Sentiment::Negative];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Sentiment> {
        Sentiment::ALL.get(code).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
        }
    }
}

impl FromStr for Sentiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            other => Err(Error::Validation(format!("unknown sentiment token {other:?}"))),
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Role an entity is assigned: do-er with agency, or do-ee impacted by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "actor")]
    Actor,
    #[serde(rename = "target")]
    Target,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Actor, Role::Target];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Role> {
        Role::ALL.get(code).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Role::Actor => "actor",
            Role::Target => "target",
        }
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actor" => Ok(Role::Actor),
            "target" => Ok(Role::Target),
            other => Err(Error::Validation(format!("unknown role token {other:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// The eleven canonical abstract entities surface mentions disambiguate to.
/// Integer codes follow declaration order, 0 through 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AbstractEntity {
    #[serde(rename = "black_americans")]
    BlackAmericans,
    #[serde(rename = "police")]
    Police,
    #[serde(rename = "community")]
    Community,
    #[serde(rename = "racism")]
    Racism,
    #[serde(rename = "democrats")]
    Democrats,
    #[serde(rename = "republicans")]
    Republicans,
    #[serde(rename = "government")]
    Government,
    #[serde(rename = "white_americans")]
    WhiteAmericans,
    #[serde(rename = "blm_movement")]
    BlmMovement,
    #[serde(rename = "petition")]
    Petition,
    #[serde(rename = "antifa")]
    Antifa,
}

impl AbstractEntity {
    pub const ALL: [AbstractEntity; 11] = [
        AbstractEntity::BlackAmericans,
        AbstractEntity::Police,
        AbstractEntity::Community,
        AbstractEntity::Racism,
        AbstractEntity::Democrats,
        AbstractEntity::Republicans,
        AbstractEntity::Government,
        AbstractEntity::WhiteAmericans,
        AbstractEntity::BlmMovement,
        AbstractEntity::Petition,
        AbstractEntity::Antifa,
    ];

    pub const COUNT: usize = 11;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<AbstractEntity> {
        AbstractEntity::ALL.get(code).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            AbstractEntity::BlackAmericans => "black_americans",
            AbstractEntity::Police => "police",
            AbstractEntity::Community => "community",
            AbstractEntity::Racism => "racism",
            AbstractEntity::Democrats => "democrats",
            AbstractEntity::Republicans => "republicans",
            AbstractEntity::Government => "government",
            AbstractEntity::WhiteAmericans => "white_americans",
            AbstractEntity::BlmMovement => "blm_movement",
            AbstractEntity::Petition => "petition",
            AbstractEntity::Antifa => "antifa",
        }
    }
}

impl FromStr for AbstractEntity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AbstractEntity::ALL
            .iter()
            .copied()
            .find(|e| e.token() == s)
            .ok_or_else(|| Error::Validation(format!("unknown entity token {s:?}")))
    }
}

impl fmt::Display for AbstractEntity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// How an entity is portrayed: which abstract entity, with what sentiment,
/// in what role. Ordered by (entity, sentiment, role) codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Perspective {
    pub entity: AbstractEntity,
    pub sentiment: Sentiment,
    pub role: Role,
}

impl Perspective {
    pub fn new(entity: AbstractEntity, sentiment: Sentiment, role: Role) -> Self {
        Perspective { entity, sentiment, role }
    }

    /// Canonical string form, e.g. `police_negative_actor`.
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.entity, self.sentiment, self.role)
    }
}

/// Stance to compatible-perspectives map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerspectiveTable {
    map: BTreeMap<Stance, BTreeSet<Perspective>>,
}

impl PerspectiveTable {
    pub fn empty() -> Self {
        let mut map = BTreeMap::new();
        map.insert(Stance::ProBlackLM, BTreeSet::new());
        map.insert(Stance::ProBlueLM, BTreeSet::new());
        PerspectiveTable { map }
    }

    pub fn insert(&mut self, stance: Stance, p: Perspective) {
        self.map.entry(stance).or_default().insert(p);
    }

    pub fn contains(&self, stance: Stance, p: &Perspective) -> bool {
        self.map.get(&stance).is_some_and(|set| set.contains(p))
    }

    pub fn lookup(&self, stance: Stance) -> &BTreeSet<Perspective> {
        static EMPTY: BTreeSet<Perspective> = BTreeSet::new();
        self.map.get(&stance).unwrap_or(&EMPTY)
    }

    /// All (stance, perspective) pairs in table order.
    pub fn pairs(&self) -> impl Iterator<Item = (Stance, Perspective)> + '_ {
        self.map.iter().flat_map(|(&s, set)| set.iter().map(move |&p| (s, p)))
    }

    /// Parses lines of the form `pro_blacklm: police negative actor`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        use AbstractEntity as E;
        let mut table = PerspectiveTable::empty();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let (stance_tok, rest) = line
                .split_once(':')
                .ok_or_else(|| err("expected `<stance>: <entity> <sentiment> <role>`".into()))?;
            let stance: Stance = stance_tok.trim().parse().map_err(|e: Error| err(e.to_string()))?;
            let mut toks = rest.split_whitespace();
            let entity: E = toks
                .next()
                .ok_or_else(|| err("missing entity token".into()))?
                .parse()
                .map_err(|e: Error| err(e.to_string()))?;
            let sentiment: Sentiment = toks
                .next()
                .ok_or_else(|| err("missing sentiment token".into()))?
                .parse()
                .map_err(|e: Error| err(e.to_string()))?;
            let role: Role = toks
                .next()
                .ok_or_else(|| err("missing role token".into()))?
                .parse()
                .map_err(|e: Error| err(e.to_string()))?;
            if let Some(extra) = toks.next() {
                return Err(err(format!("unexpected trailing token {extra:?}")));
            }
            table.insert(stance, Perspective::new(entity, sentiment, role));
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (stance, p) in self.pairs() {
            out.push_str(&format!("{stance}: {} {} {}\n", p.entity, p.sentiment, p.role));
        }
        out
    }
}

impl Default for PerspectiveTable {
    /// The built-in stance/perspective compatibility map.
    fn default() -> Self {
        use AbstractEntity::*;
        use Role::*;
        use Sentiment::*;
        let mut t = PerspectiveTable::empty();
        let black = [
            (BlackAmericans, Positive, Target),
            (Police, Negative, Actor),
            (Racism, Negative, Actor),
            (Government, Negative, Actor),
            (WhiteAmericans, Negative, Actor),
            (BlmMovement, Positive, Actor),
            (BlmMovement, Positive, Target),
            (Petition, Positive, Target),
        ];
        let blue = [
            (BlackAmericans, Negative, Actor),
            (Police, Positive, Actor),
            (Police, Positive, Target),
            (Community, Positive, Target),
            (Democrats, Negative, Actor),
            (Republicans, Positive, Actor),
            (BlmMovement, Negative, Actor),
            (Antifa, Negative, Actor),
        ];
        for (e, s, r) in black {
            t.insert(Stance::ProBlackLM, Perspective::new(e, s, r));
        }
        for (e, s, r) in blue {
            t.insert(Stance::ProBlueLM, Perspective::new(e, s, r));
        }
        t
    }
}

/// Loads a perspective table from a file, or the built-in default when no
/// path is given.
pub fn load_perspective_table(path: Option<&Path>) -> Result<PerspectiveTable> {
    match path {
        None => Ok(PerspectiveTable::default()),
        Some(p) => PerspectiveTable::parse(&std::fs::read_to_string(p)?),
    }
}

/// Political party tag for a followed politician.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    D,
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Follow {
    pub id: String,
    pub party: Party,
}

/// Coarse bias tag for a shared media domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MediaBias {
    #[serde(rename = "left")]
    Left,
    #[serde(rename = "right")]
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedDomain {
    pub domain: String,
    pub bias: MediaBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Author {
    pub id: String,
    pub profile: Option<String>,
    pub keywords: Vec<String>,
    pub retweets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follows: Option<Vec<Follow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_stance: Option<Stance>,
    /// Weak-supervision authors constructed for generated tweets. Their
    /// feature rows average all of their tweets instead of a sample.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub imaginary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldTriple {
    pub entity: AbstractEntity,
    pub sentiment: Sentiment,
    pub role: Role,
}

impl GoldTriple {
    pub fn perspective(&self) -> Perspective {
        Perspective::new(self.entity, self.sentiment, self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityMention {
    pub id: String,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tweet {
    pub id: String,
    pub author_id: String,
    pub text: String,
    /// ISO-8601 date, `YYYY-MM-DD`.
    pub timestamp: String,
    pub hashtags: Vec<String>,
    pub entities: Vec<EntityMention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains: Option<Vec<SharedDomain>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_stance: Option<Stance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_ambiguous: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type")]
enum Record {
    #[serde(rename = "author")]
    Author(Author),
    #[serde(rename = "tweet")]
    Tweet(Tweet),
}

/// Validated, immutable corpus. Ordinals are dense and follow ingestion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub authors: Vec<Author>,
    pub tweets: Vec<Tweet>,
    author_index: BTreeMap<String, usize>,
    tweet_index: BTreeMap<String, usize>,
    mention_index: BTreeMap<String, usize>,
    /// Flat mention ordinal -> (tweet ordinal, index within tweet).
    mention_locs: Vec<(usize, usize)>,
    /// Author ordinal -> tweet ordinals, in ingestion order.
    author_tweets: Vec<Vec<usize>>,
}

impl Corpus {
    /// Builds and validates a corpus from parsed records. Hashtags are
    /// normalized (lowercased, leading '#' stripped) during ingestion.
    pub fn new(authors: Vec<Author>, mut tweets: Vec<Tweet>) -> Result<Self> {
        for t in &mut tweets {
            for h in &mut t.hashtags {
                let normalized = normalize_hashtag(h);
                if *h != normalized {
                    *h = normalized;
                }
            }
        }
        let mut author_index = BTreeMap::new();
        for (i, a) in authors.iter().enumerate() {
            if author_index.insert(a.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate author id {}", a.id)));
            }
        }
        let mut tweet_index = BTreeMap::new();
        let mut mention_index = BTreeMap::new();
        let mut mention_locs = Vec::new();
        let mut author_tweets = vec![Vec::new(); authors.len()];
        for (ti, t) in tweets.iter().enumerate() {
            if tweet_index.insert(t.id.clone(), ti).is_some() {
                return Err(Error::Integrity(format!("duplicate tweet id {}", t.id)));
            }
            let ai = *author_index
                .get(&t.author_id)
                .ok_or_else(|| Error::Integrity(format!("unknown author {}", t.author_id)))?;
            author_tweets[ai].push(ti);
            let mut prev_end = None::<usize>;
            let mut spans: Vec<(usize, usize, &str)> =
                t.entities.iter().map(|m| (m.start, m.end, m.id.as_str())).collect();
            spans.sort_unstable();
            for &(start, end, _) in &spans {
                if start >= end || end > t.text.len() {
                    return Err(Error::Integrity(format!(
                        "entity span {start}..{end} out of bounds in tweet {}",
                        t.id
                    )));
                }
                if let Some(pe) = prev_end {
                    if start < pe {
                        return Err(Error::Integrity(format!(
                            "overlapping entity spans in tweet {}",
                            t.id
                        )));
                    }
                }
                prev_end = Some(end);
            }
            for (mi, m) in t.entities.iter().enumerate() {
                match t.text.get(m.start..m.end) {
                    Some(slice) if slice == m.surface => {}
                    _ => {
                        return Err(Error::Integrity(format!(
                            "surface {:?} does not match span {}..{} in tweet {}",
                            m.surface, m.start, m.end, t.id
                        )))
                    }
                }
                if mention_index.insert(m.id.clone(), mention_locs.len()).is_some() {
                    return Err(Error::Integrity(format!("duplicate mention id {}", m.id)));
                }
                mention_locs.push((ti, mi));
            }
            parse_date(&t.timestamp)
                .ok_or_else(|| Error::Integrity(format!("bad timestamp {:?} in tweet {}", t.timestamp, t.id)))?;
        }
        for a in &authors {
            for r in &a.retweets {
                if !author_index.contains_key(r) {
                    return Err(Error::Integrity(format!("unknown author {r}")));
                }
            }
        }
        Ok(Corpus { authors, tweets, author_index, tweet_index, mention_index, mention_locs, author_tweets })
    }

    pub fn author_ordinal(&self, id: &str) -> Option<usize> {
        self.author_index.get(id).copied()
    }

    pub fn tweet_ordinal(&self, id: &str) -> Option<usize> {
        self.tweet_index.get(id).copied()
    }

    pub fn mention_ordinal(&self, id: &str) -> Option<usize> {
        self.mention_index.get(id).copied()
    }

    pub fn num_mentions(&self) -> usize {
        self.mention_locs.len()
    }

    /// Tweet ordinals of an author, in ingestion order.
    pub fn tweets_of_author(&self, author_ordinal: usize) -> &[usize] {
        &self.author_tweets[author_ordinal]
    }

    /// (tweet ordinal, index within tweet) for a flat mention ordinal.
    pub fn mention_loc(&self, mention_ordinal: usize) -> (usize, usize) {
        self.mention_locs[mention_ordinal]
    }

    pub fn mention(&self, mention_ordinal: usize) -> &EntityMention {
        let (ti, mi) = self.mention_locs[mention_ordinal];
        &self.tweets[ti].entities[mi]
    }

    /// Iterates (mention ordinal, tweet ordinal, mention) in corpus order.
    pub fn mentions(&self) -> impl Iterator<Item = (usize, usize, &EntityMention)> + '_ {
        self.mention_locs
            .iter()
            .enumerate()
            .map(move |(mo, &(ti, mi))| (mo, ti, &self.tweets[ti].entities[mi]))
    }

    /// Mention ordinals belonging to a tweet, in order.
    pub fn mentions_of_tweet(&self, tweet_ordinal: usize) -> Vec<usize> {
        self.mention_locs
            .iter()
            .enumerate()
            .filter(|(_, &(ti, _))| ti == tweet_ordinal)
            .map(|(mo, _)| mo)
            .collect()
    }

    /// Copy with every gold field removed.
    pub fn strip_labels(&self) -> Corpus {
        let authors = self
            .authors
            .iter()
            .map(|a| Author { gold_stance: None, ..a.clone() })
            .collect();
        let tweets = self
            .tweets
            .iter()
            .map(|t| Tweet {
                gold_stance: None,
                gold_ambiguous: None,
                entities: t.entities.iter().map(|m| EntityMention { gold: None, ..m.clone() }).collect(),
                ..t.clone()
            })
            .collect();
        Corpus::new(authors, tweets).expect("stripping labels preserves validity")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut authors = Vec::new();
        let mut tweets = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line)
                .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
            match record {
                Record::Author(a) => authors.push(a),
                Record::Tweet(t) => tweets.push(t),
            }
        }
        Corpus::new(authors, tweets)
    }

    /// Canonical serialization: authors in order, then tweets in order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.authors {
            out.push_str(&serde_json::to_string(&Record::Author(a.clone())).expect("serialize author"));
            out.push('\n');
        }
        for t in &self.tweets {
            out.push_str(&serde_json::to_string(&Record::Tweet(t.clone())).expect("serialize tweet"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Concatenates two corpora (e.g. a real corpus with a weak-supervision
/// one). Ids must not collide.
pub fn merge_corpora(base: &Corpus, extra: &Corpus) -> Result<Corpus> {
    let mut authors = base.authors.clone();
    authors.extend(extra.authors.iter().cloned());
    let mut tweets = base.tweets.clone();
    tweets.extend(extra.tweets.iter().cloned());
    Corpus::new(authors, tweets)
}

/// Loads and validates a corpus from a JSONL file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let mut text = String::new();
    let mut reader = std::io::BufReader::new(file);
    std::io::Read::read_to_string(&mut reader, &mut text)?;
    Corpus::from_jsonl(&text)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    corpus.save(path)
}

/// Normalizes a hashtag: strip a leading '#', lowercase, NFC.
///
/// Inputs here are ASCII-leaning tweet hashtags; lowercasing covers the NFC
/// requirement for them, and non-ASCII text is passed through char-wise
/// lowercased.
pub fn normalize_hashtag(raw: &str) -> String {
    raw.trim().trim_start_matches('#').to_lowercase()
}

/// Days since 1970-01-01 for a `YYYY-MM-DD` string, if well-formed.
pub fn parse_date(s: &str) -> Option<i64> {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    let year: i64 = s[0..4].parse().ok()?;
    let month: u32 = s[5..7].parse().ok()?;
    let day: u32 = s[8..10].parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    // Civil-from-days algorithm (Howard Hinnant's days_from_civil).
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as i64;
    let mp = (month as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Some(era * 146097 + doe - 719468)
}

/// Inverse of [`parse_date`]: formats days-since-epoch as `YYYY-MM-DD`.
pub fn format_date(days: i64) -> String {
    let z = days + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = if m <= 2 { y + 1 } else { y };
    format!("{y:04}-{m:02}-{d:02}")
}

/// Author-disjoint train/test split over gold-labeled authors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_authors: Vec<String>,
    pub test_authors: Vec<String>,
}

/// Samples `n_train_authors` of the gold-labeled authors, deterministically
/// for a given seed. All remaining labeled authors form the test side.
pub fn split_by_author(corpus: &Corpus, n_train_authors: usize, seed: u64) -> Result<Split> {
    let labeled: Vec<&Author> = corpus.authors.iter().filter(|a| a.gold_stance.is_some()).collect();
    if n_train_authors > labeled.len() {
        return Err(Error::Validation(format!(
            "requested {n_train_authors} train authors but only {} are labeled",
            labeled.len()
        )));
    }
    let mut ids: Vec<String> = labeled.iter().map(|a| a.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut train: Vec<String> = ids[..n_train_authors].to_vec();
    let mut test: Vec<String> = ids[n_train_authors..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train_authors: train, test_authors: test })
}

fn contains_keyword(tweet: &Tweet, keyword: &str) -> bool {
    if tweet.text.to_lowercase().contains(keyword) {
        return true;
    }
    tweet.hashtags.iter().any(|h| h.contains(keyword))
}

/// Tweets whose gold stance is contradicted by the opponent camp's signature
/// keyword (hashtag hijacking). Unlabeled tweets are skipped.
pub fn flag_ambiguous(corpus: &Corpus) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in &corpus.tweets {
        let Some(stance) = t.gold_stance else { continue };
        let opponent_keyword = match stance {
            Stance::ProBlackLM => "bluelivesmatter",
            Stance::ProBlueLM => "blacklivesmatter",
        };
        if contains_keyword(t, opponent_keyword) {
            out.insert(t.id.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn author(id: &str) -> Author {
        Author {
            id: id.into(),
            profile: None,
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

    #[test]
    fn default_table_matches_published_map() {
        let t = PerspectiveTable::default();
        assert!(t.contains(
            Stance::ProBlackLM,
            &Perspective::new(AbstractEntity::Police, Sentiment::Negative, Role::Actor)
        ));
        assert!(t.contains(
            Stance::ProBlueLM,
            &Perspective::new(AbstractEntity::Police, Sentiment::Positive, Role::Actor)
        ));
        assert!(t.contains(
            Stance::ProBlueLM,
            &Perspective::new(AbstractEntity::Police, Sentiment::Positive, Role::Target)
        ));
        assert!(!t.contains(
            Stance::ProBlackLM,
            &Perspective::new(AbstractEntity::Antifa, Sentiment::Negative, Role::Actor)
        ));
        assert_eq!(t.lookup(Stance::ProBlackLM).len(), 8);
        assert_eq!(t.lookup(Stance::ProBlueLM).len(), 8);
    }

    #[test]
    fn table_text_round_trip() {
        let t = PerspectiveTable::default();
        let parsed = PerspectiveTable::parse(&t.to_text()).unwrap();
        assert_eq!(t, parsed);
    }

    #[test]
    fn table_parse_rejects_unknown_token() {
        let err = PerspectiveTable::parse("pro_blacklm: cops negative actor").unwrap_err();
        assert!(err.to_string().contains("cops"), "{err}");
    }

    #[test]
    fn minimal_corpus_loads() {
        let c = Corpus::new(vec![author("a1")], vec![]).unwrap();
        assert_eq!(c.authors.len(), 1);
        assert_eq!(c.tweets.len(), 0);
    }

    #[test]
    fn unknown_author_is_named_in_error() {
        let err = Corpus::new(vec![author("a1")], vec![tweet("t1", "u9", "hello")]).unwrap_err();
        assert!(err.to_string().contains("unknown author u9"), "{err}");
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let mut t = tweet("t1", "a1", "the police here");
        t.entities = vec![
            EntityMention { id: "m1".into(), surface: "the police".into(), start: 0, end: 10, gold: None },
            EntityMention { id: "m2".into(), surface: "police".into(), start: 4, end: 10, gold: None },
        ];
        let err = Corpus::new(vec![author("a1")], vec![t]).unwrap_err();
        assert!(err.to_string().contains("t1"), "{err}");
    }

    #[test]
    fn surface_must_match_span() {
        let mut t = tweet("t1", "a1", "the police here");
        t.entities =
            vec![EntityMention { id: "m1".into(), surface: "cops".into(), start: 4, end: 10, gold: None }];
        assert!(Corpus::new(vec![author("a1")], vec![t]).is_err());
    }

    #[test]
    fn jsonl_round_trip_is_identity() {
        let mut a = author("a1");
        a.gold_stance = Some(Stance::ProBlackLM);
        a.keywords = vec!["blacklivesmatter".into()];
        let mut t = tweet("t1", "a1", "justice for the police victims");
        t.hashtags = vec!["blm".into()];
        t.entities = vec![EntityMention {
            id: "m1".into(),
            surface: "police".into(),
            start: 16,
            end: 22,
            gold: Some(GoldTriple {
                entity: AbstractEntity::Police,
                sentiment: Sentiment::Negative,
                role: Role::Actor,
            }),
        }];
        t.gold_stance = Some(Stance::ProBlackLM);
        let c = Corpus::new(vec![a], vec![t]).unwrap();
        let text = c.to_jsonl();
        let c2 = Corpus::from_jsonl(&text).unwrap();
        assert_eq!(c, c2);
        assert_eq!(text, c2.to_jsonl());
    }

    #[test]
    fn split_exhaustive_sample_leaves_empty_test() {
        let authors: Vec<Author> = (0..10)
            .map(|i| {
                let mut a = author(&format!("a{i}"));
                a.gold_stance = Some(Stance::ProBlackLM);
                a
            })
            .collect();
        let c = Corpus::new(authors, vec![]).unwrap();
        let split = split_by_author(&c, 10, 3).unwrap();
        assert_eq!(split.train_authors.len(), 10);
        assert!(split.test_authors.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let authors: Vec<Author> = (0..189)
            .map(|i| {
                let mut a = author(&format!("a{i:03}"));
                a.gold_stance = Some(if i % 3 == 0 { Stance::ProBlueLM } else { Stance::ProBlackLM });
                a
            })
            .collect();
        let c = Corpus::new(authors, vec![]).unwrap();
        let s1 = split_by_author(&c, 50, 42).unwrap();
        let s2 = split_by_author(&c, 50, 42).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.train_authors.len(), 50);
        assert_eq!(s1.test_authors.len(), 139);
        for id in &s1.train_authors {
            assert!(!s1.test_authors.contains(id));
        }
    }

    #[test]
    fn split_insufficient_labeled_authors() {
        let c = Corpus::new(vec![author("a1")], vec![]).unwrap();
        assert!(split_by_author(&c, 1, 0).is_err());
    }

    #[test]
    fn ambiguity_flagging_rules() {
        let a = author("a1");
        let mut hijack = tweet("t1", "a1", "tell me about the good cops");
        hijack.hashtags = vec!["bluelivesmatter".into()];
        hijack.gold_stance = Some(Stance::ProBlackLM);
        let mut own_camp = tweet("t2", "a1", "back the blue");
        own_camp.hashtags = vec!["bluelivesmatter".into()];
        own_camp.gold_stance = Some(Stance::ProBlueLM);
        let mut both = tweet("t3", "a1", "some text");
        both.hashtags = vec!["blacklivesmatter".into(), "bluelivesmatter".into()];
        both.gold_stance = Some(Stance::ProBlackLM);
        let mut unlabeled = tweet("t4", "a1", "whatever #bluelivesmatter");
        unlabeled.hashtags = vec!["bluelivesmatter".into()];
        let c = Corpus::new(vec![a], vec![hijack, own_camp, both, unlabeled]).unwrap();
        let flagged = flag_ambiguous(&c);
        assert!(flagged.contains("t1"));
        assert!(!flagged.contains("t2"));
        assert!(flagged.contains("t3"));
        assert!(!flagged.contains("t4"));
    }

    #[test]
    fn strip_labels_removes_gold_fields() {
        let mut a = author("a1");
        a.gold_stance = Some(Stance::ProBlueLM);
        let mut t = tweet("t1", "a1", "the police");
        t.gold_stance = Some(Stance::ProBlueLM);
        t.gold_ambiguous = Some(false);
        t.entities = vec![EntityMention {
            id: "m1".into(),
            surface: "police".into(),
            start: 4,
            end: 10,
            gold: Some(GoldTriple {
                entity: AbstractEntity::Police,
                sentiment: Sentiment::Positive,
                role: Role::Actor,
            }),
        }];
        let c = Corpus::new(vec![a], vec![t]).unwrap();
        let stripped = c.strip_labels();
        assert!(stripped.authors[0].gold_stance.is_none());
        assert!(stripped.tweets[0].gold_stance.is_none());
        assert!(stripped.tweets[0].entities[0].gold.is_none());
    }

    #[test]
    fn date_round_trip() {
        for s in ["2020-05-26", "2020-06-26", "1970-01-01", "2000-02-29"] {
            let days = parse_date(s).unwrap();
            assert_eq!(format_date(days), s);
        }
        assert_eq!(parse_date("2020-05-26").unwrap() + 31, parse_date("2020-06-26").unwrap());
        assert!(parse_date("2020-13-01").is_none());
        assert!(parse_date("garbage").is_none());
    }

    #[test]
    fn hashtag_normalization() {
        assert_eq!(normalize_hashtag("#BlackLivesMatter"), "blacklivesmatter");
        assert_eq!(normalize_hashtag("BLM"), "blm");
    }
}
