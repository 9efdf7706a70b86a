//! Deterministic template-based corpus generation with planted gold labels.
//!
//! Every generated tweet satisfies three conditions for its (stance,
//! perspective) assignment: at least one entity mention whose gold triple is
//! compatible with the stance, template text realizing that perspective, and
//! at least one stance hashtag. With probability `ambiguous_rate` a tweet
//! hijacks the opponent camp's hashtags instead and is marked ambiguous.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    format_date, parse_date, AbstractEntity, Author, Corpus, EntityMention, Follow, GoldTriple, MediaBias,
    Party, Perspective, PerspectiveTable, Role, Sentiment, SharedDomain, Stance, Tweet,
};
use crate::error::{Error, Result};

/// Signature keyword of a camp; the keyword baseline and ambiguity flagging
/// key on these.
pub fn signature_hashtag(stance: Stance) -> &'static str {
    match stance {
        Stance::ProBlackLM => "blacklivesmatter",
        Stance::ProBlueLM => "bluelivesmatter",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    /// Authors with tweet histories, retweet edges, and behavior metadata.
    RealLike,
    /// One imaginary author per (stance, perspective) pair, ~20 tweets each.
    WeakSupervision,
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n_authors: usize,
    pub tweets_per_author: (usize, usize),
    /// Fraction of authors assigned ProBlackLM.
    pub stance_mix: f64,
    /// Marginal probability that a tweet hijacks opponent hashtags.
    pub ambiguous_rate: f64,
    /// Probability a retweet edge stays intra-stance.
    pub retweet_homophily: f64,
    /// Expected entity mentions per tweet, in [1, 2].
    pub entity_rate: f64,
    /// Probability an author's following/sharing behavior matches the camp
    /// conventional for their stance.
    pub behavior_alignment: f64,
    pub seed: u64,
    pub mode: GenMode,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_authors: 150,
            tweets_per_author: (8, 12),
            stance_mix: 0.65,
            ambiguous_rate: 0.15,
            retweet_homophily: 0.9,
            entity_rate: 1.2,
            behavior_alignment: 0.9,
            seed: 0,
            mode: GenMode::RealLike,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("stance_mix", self.stance_mix),
            ("ambiguous_rate", self.ambiguous_rate),
            ("retweet_homophily", self.retweet_homophily),
            ("behavior_alignment", self.behavior_alignment),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if self.tweets_per_author.0 > self.tweets_per_author.1 {
            return Err(Error::Validation(format!(
                "tweets_per_author min {} exceeds max {}",
                self.tweets_per_author.0, self.tweets_per_author.1
            )));
        }
        if !(1.0..=2.0).contains(&self.entity_rate) {
            return Err(Error::Validation(format!(
                "entity_rate must be in [1,2], got {}",
                self.entity_rate
            )));
        }
        Ok(())
    }
}

/// Surface used by both camps to address different abstract entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguousSurface {
    pub surface: String,
    pub per_stance: BTreeMap<Stance, AbstractEntity>,
}

/// Surface forms, per-camp hashtags, and sentence templates the generator
/// draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub surfaces: BTreeMap<AbstractEntity, Vec<String>>,
    pub hashtags: BTreeMap<Stance, Vec<String>>,
    pub templates: BTreeMap<(Sentiment, Role), Vec<String>>,
    pub ambiguous: Vec<AmbiguousSurface>,
}

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.txt");

impl Lexicon {
    /// The lexicon shipped with the crate (also at `data/lexicon.txt`).
    pub fn builtin() -> Lexicon {
        Lexicon::parse(DEFAULT_LEXICON).expect("builtin lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the sectioned lexicon format; see `data/lexicon.txt`.
    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut surfaces: BTreeMap<AbstractEntity, Vec<String>> = BTreeMap::new();
        let mut hashtags: BTreeMap<Stance, Vec<String>> = BTreeMap::new();
        let mut templates: BTreeMap<(Sentiment, Role), Vec<String>> = BTreeMap::new();
        let mut ambiguous: Vec<AmbiguousSurface> = Vec::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| err("expected `key: values`".into()))?;
            let key = key.trim();
            let rest = rest.trim();
            match section.as_str() {
                "entities" => {
                    let entity: AbstractEntity = key.parse().map_err(|e: Error| err(e.to_string()))?;
                    let forms: Vec<String> =
                        rest.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                    surfaces.entry(entity).or_default().extend(forms);
                }
                "hashtags" => {
                    let stance: Stance = key.parse().map_err(|e: Error| err(e.to_string()))?;
                    let tags: Vec<String> = rest
                        .split(',')
                        .map(crate::corpus::normalize_hashtag)
                        .filter(|s| !s.is_empty())
                        .collect();
                    hashtags.entry(stance).or_default().extend(tags);
                }
                "templates" => {
                    let mut toks = key.split_whitespace();
                    let sentiment: Sentiment = toks
                        .next()
                        .ok_or_else(|| err("missing sentiment".into()))?
                        .parse()
                        .map_err(|e: Error| err(e.to_string()))?;
                    let role: Role = toks
                        .next()
                        .ok_or_else(|| err("missing role".into()))?
                        .parse()
                        .map_err(|e: Error| err(e.to_string()))?;
                    if rest.matches("{entity}").count() != 1 {
                        return Err(err(format!("template must contain one {{entity}} slot: {rest:?}")));
                    }
                    templates.entry((sentiment, role)).or_default().push(rest.to_string());
                }
                "ambiguous" => {
                    let mut per_stance = BTreeMap::new();
                    for part in rest.split(',') {
                        let (stance_tok, entity_tok) = part
                            .trim()
                            .split_once('=')
                            .ok_or_else(|| err("expected `<stance>=<entity>`".into()))?;
                        let stance: Stance =
                            stance_tok.trim().parse().map_err(|e: Error| err(e.to_string()))?;
                        let entity: AbstractEntity =
                            entity_tok.trim().parse().map_err(|e: Error| err(e.to_string()))?;
                        per_stance.insert(stance, entity);
                    }
                    ambiguous.push(AmbiguousSurface { surface: key.to_string(), per_stance });
                }
                other => return Err(err(format!("line outside a known section (in {other:?})"))),
            }
        }
        let lex = Lexicon { surfaces, hashtags, templates, ambiguous };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        for entity in AbstractEntity::ALL {
            let n = self.surfaces.get(&entity).map_or(0, Vec::len);
            if n < 3 {
                return Err(Error::Validation(format!(
                    "entity {entity} has {n} surface forms, need at least 3"
                )));
            }
        }
        for stance in Stance::ALL {
            let tags = self.hashtags.get(&stance).map_or(&[][..], |v| &v[..]);
            if tags.len() < 5 {
                return Err(Error::Validation(format!(
                    "stance {stance} has {} hashtags, need at least 5",
                    tags.len()
                )));
            }
            if !tags.iter().any(|t| t == signature_hashtag(stance)) {
                return Err(Error::Validation(format!(
                    "stance {stance} hashtag list must contain {:?}",
                    signature_hashtag(stance)
                )));
            }
            let opponent = signature_hashtag(stance.opponent());
            if tags.iter().any(|t| t.contains(opponent)) {
                return Err(Error::Validation(format!(
                    "stance {stance} hashtag list contains opponent keyword {opponent:?}"
                )));
            }
        }
        for sentiment in Sentiment::ALL {
            for role in Role::ALL {
                if self.templates.get(&(sentiment, role)).map_or(0, Vec::len) == 0 {
                    return Err(Error::Validation(format!(
                        "no templates for ({sentiment}, {role})"
                    )));
                }
            }
        }
        for amb in &self.ambiguous {
            for stance in Stance::ALL {
                if !amb.per_stance.contains_key(&stance) {
                    return Err(Error::Validation(format!(
                        "ambiguous surface {:?} does not resolve for {stance}",
                        amb.surface
                    )));
                }
            }
        }
        Ok(())
    }

    fn ambiguous_surface_for(&self, stance: Stance, entity: AbstractEntity) -> Option<&str> {
        self.ambiguous
            .iter()
            .find(|a| a.per_stance.get(&stance) == Some(&entity))
            .map(|a| a.surface.as_str())
    }
}

/// Start of the generated time window.
const START_DATE: &str = "2020-05-26";
/// Days covered by generated timestamps.
const DAY_SPAN: i64 = 31;
/// Probability a real author carries a profile description.
const PROFILE_PROB: f64 = 0.85;
/// Probability a real author carries following metadata.
const FOLLOWS_PROB: f64 = 0.7;
/// Probability a tweet shares a media domain.
const DOMAIN_PROB: f64 = 0.4;
/// Probability a mention uses a cross-camp ambiguous surface when one exists.
const AMBIGUOUS_SURFACE_PROB: f64 = 0.2;
/// Probability a non-hijacked tweet includes its camp's signature hashtag.
const SIGNATURE_PROB: f64 = 0.9;
/// Fraction of authors with concentrated hijacking behavior.
const TROLL_FRAC: f64 = 0.2;
/// Tweets per (stance, perspective) tuple in weak-supervision mode.
const WEAK_TWEETS_PER_TUPLE: usize = 20;

fn left_domains() -> &'static [&'static str] {
    &["leftledger.example", "progressdaily.example", "bluereview.example"]
}

fn right_domains() -> &'static [&'static str] {
    &["eaglereport.example", "rightwatch.example", "redsignal.example"]
}

/// Per-author hijack propensities. Hijacking is concentrated: a small troll
/// fraction hijacks often, the rest rarely; the marginal rate over authors
/// stays `rate`.
fn hijack_propensities(rate: f64) -> (f64, f64) {
    if rate <= 0.0 {
        return (0.0, 0.0);
    }
    let troll = (3.5 * rate).min(0.95);
    let normal = ((rate - TROLL_FRAC * troll) / (1.0 - TROLL_FRAC)).clamp(0.0, 1.0);
    (troll, normal)
}

struct TweetPlan<'a> {
    stance: Stance,
    hijack: bool,
    perspectives: Vec<Perspective>,
    lexicon: &'a Lexicon,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty list")
}

fn render_tweet(
    rng: &mut ChaCha8Rng,
    plan: &TweetPlan<'_>,
    tweet_id: &str,
) -> (String, Vec<String>, Vec<EntityMention>) {
    let lex = plan.lexicon;
    let mut text = String::new();
    let mut mentions = Vec::new();
    for (i, p) in plan.perspectives.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let surface = match lex.ambiguous_surface_for(plan.stance, p.entity) {
            Some(s) if rng.random_bool(AMBIGUOUS_SURFACE_PROB) => s.to_string(),
            _ => pick(rng, &lex.surfaces[&p.entity]).clone(),
        };
        let template = pick(rng, &lex.templates[&(p.sentiment, p.role)]);
        let (prefix, suffix) = template.split_once("{entity}").expect("validated template");
        let start = text.len() + prefix.len();
        let end = start + surface.len();
        text.push_str(prefix);
        text.push_str(&surface);
        text.push_str(suffix);
        mentions.push(EntityMention {
            id: format!("{tweet_id}_m{i}"),
            surface,
            start,
            end,
            gold: Some(GoldTriple { entity: p.entity, sentiment: p.sentiment, role: p.role }),
        });
    }
    let tag_camp = if plan.hijack { plan.stance.opponent() } else { plan.stance };
    let pool = &lex.hashtags[&tag_camp];
    let mut tags: Vec<String> = Vec::new();
    if plan.hijack || rng.random_bool(SIGNATURE_PROB) {
        // A hijacked tweet always carries the opponent's signature keyword so
        // the keyword rule deterministically misreads it.
        tags.push(signature_hashtag(tag_camp).to_string());
    }
    let extras = rng.random_range(2..=3);
    for _ in 0..extras {
        let tag = pick(rng, pool).clone();
        if !tags.contains(&tag) {
            tags.push(tag);
        }
    }
    if tags.is_empty() {
        tags.push(pick(rng, pool).clone());
    }
    for tag in &tags {
        text.push_str(" #");
        text.push_str(tag);
    }
    (text, tags, mentions)
}

fn sample_perspectives(
    rng: &mut ChaCha8Rng,
    table: &PerspectiveTable,
    stance: Stance,
    entity_rate: f64,
    forced_first: Option<Perspective>,
) -> Result<Vec<Perspective>> {
    let options: Vec<Perspective> = table.lookup(stance).iter().copied().collect();
    if options.is_empty() {
        return Err(Error::Validation(format!("perspective table has no entries for {stance}")));
    }
    let n = if rng.random_bool((entity_rate - 1.0).clamp(0.0, 1.0)) { 2 } else { 1 };
    let mut out = Vec::with_capacity(n);
    if let Some(first) = forced_first {
        out.push(first);
    }
    while out.len() < n {
        out.push(*pick(rng, &options));
    }
    Ok(out)
}

/// Generates a fully gold-labeled corpus. Pure function of (cfg, lexicon,
/// table): identical inputs produce byte-identical corpora.
pub fn generate_with_table(cfg: &GenConfig, lex: &Lexicon, table: &PerspectiveTable) -> Result<Corpus> {
    cfg.validate()?;
    lex.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start_day = parse_date(START_DATE).expect("valid start date");
    match cfg.mode {
        GenMode::WeakSupervision => {
            let mut authors = Vec::new();
            let mut tweets = Vec::new();
            for (stance, p) in table.pairs() {
                let author_id = format!("weak_{}_{}", stance, p.label());
                authors.push(Author {
                    id: author_id.clone(),
                    profile: None,
                    keywords: vec![],
                    retweets: vec![],
                    follows: None,
                    gold_stance: Some(stance),
                    imaginary: true,
                });
                for k in 0..WEAK_TWEETS_PER_TUPLE {
                    let tweet_id = format!("{author_id}_t{k}");
                    let perspectives =
                        sample_perspectives(&mut rng, table, stance, cfg.entity_rate, Some(p))?;
                    let plan = TweetPlan { stance, hijack: false, perspectives, lexicon: lex };
                    let (text, hashtags, entities) = render_tweet(&mut rng, &plan, &tweet_id);
                    let day = start_day + rng.random_range(0..DAY_SPAN);
                    tweets.push(Tweet {
                        id: tweet_id,
                        author_id: author_id.clone(),
                        text,
                        timestamp: format_date(day),
                        hashtags,
                        entities,
                        domains: None,
                        gold_stance: Some(stance),
                        gold_ambiguous: None,
                    });
                }
            }
            Corpus::new(authors, tweets)
        }
        GenMode::RealLike => {
            let (troll_p, normal_p) = hijack_propensities(cfg.ambiguous_rate);
            let mut authors: Vec<Author> = Vec::with_capacity(cfg.n_authors);
            let mut tweets = Vec::new();
            // Stratified stance assignment: exactly round(n * mix) authors
            // are ProBlackLM, at shuffled positions.
            let n_black = (cfg.n_authors as f64 * cfg.stance_mix).round() as usize;
            let mut stances: Vec<Stance> = (0..cfg.n_authors)
                .map(|i| if i < n_black { Stance::ProBlackLM } else { Stance::ProBlueLM })
                .collect();
            stances.shuffle(&mut rng);
            for i in 0..cfg.n_authors {
                let author_id = format!("a{i:04}");
                let stance = stances[i];
                let hijack_p = if rng.random_bool(TROLL_FRAC) { troll_p } else { normal_p };
                let own_tags = &lex.hashtags[&stance];
                let (profile, keywords) = if rng.random_bool(PROFILE_PROB) {
                    let n_kw = rng.random_range(3..=5);
                    let mut kws: Vec<String> = Vec::new();
                    for _ in 0..n_kw {
                        let kw = pick(&mut rng, own_tags).clone();
                        if !kws.contains(&kw) {
                            kws.push(kw);
                        }
                    }
                    (Some(format!("standing with {}", kws.join(" "))), kws)
                } else {
                    (None, vec![])
                };
                let follows = if rng.random_bool(FOLLOWS_PROB) {
                    let aligned = rng.random_bool(cfg.behavior_alignment);
                    let party = match (stance, aligned) {
                        (Stance::ProBlackLM, true) | (Stance::ProBlueLM, false) => Party::D,
                        _ => Party::R,
                    };
                    let tag = match party {
                        Party::D => "d",
                        Party::R => "r",
                    };
                    let n = rng.random_range(1..=3);
                    let mut ids: Vec<Follow> = Vec::new();
                    for _ in 0..n {
                        let pid = format!("pol_{tag}_{}", rng.random_range(0..10));
                        if !ids.iter().any(|f| f.id == pid) {
                            ids.push(Follow { id: pid, party });
                        }
                    }
                    Some(ids)
                } else {
                    None
                };
                let shares_aligned = rng.random_bool(cfg.behavior_alignment);
                let n_tweets = rng.random_range(cfg.tweets_per_author.0..=cfg.tweets_per_author.1);
                for k in 0..n_tweets {
                    let tweet_id = format!("{author_id}_t{k}");
                    let hijack = rng.random_bool(hijack_p);
                    let perspectives =
                        sample_perspectives(&mut rng, table, stance, cfg.entity_rate, None)?;
                    let plan = TweetPlan { stance, hijack, perspectives, lexicon: lex };
                    let (text, hashtags, entities) = render_tweet(&mut rng, &plan, &tweet_id);
                    let day = start_day + rng.random_range(0..DAY_SPAN);
                    let domains = if rng.random_bool(DOMAIN_PROB) {
                        let left = matches!(
                            (stance, shares_aligned),
                            (Stance::ProBlackLM, true) | (Stance::ProBlueLM, false)
                        );
                        let (pool, bias) = if left {
                            (left_domains(), MediaBias::Left)
                        } else {
                            (right_domains(), MediaBias::Right)
                        };
                        Some(vec![SharedDomain { domain: pick(&mut rng, pool).to_string(), bias }])
                    } else {
                        None
                    };
                    tweets.push(Tweet {
                        id: tweet_id,
                        author_id: author_id.clone(),
                        text,
                        timestamp: format_date(day),
                        hashtags,
                        entities,
                        domains,
                        gold_stance: Some(stance),
                        gold_ambiguous: if hijack { Some(true) } else { None },
                    });
                }
                authors.push(Author {
                    id: author_id,
                    profile,
                    keywords,
                    retweets: vec![],
                    follows,
                    gold_stance: Some(stance),
                    imaginary: false,
                });
            }
            // Retweet edges: Geometric(0.5)-many targets per author, capped
            // at 5, homophily applied per edge.
            for i in 0..authors.len() {
                let mut k = 0;
                while k < 5 && rng.random_bool(0.5) {
                    k += 1;
                }
                let mut targets: Vec<String> = Vec::new();
                for _ in 0..k {
                    let same = rng.random_bool(cfg.retweet_homophily);
                    let pool: Vec<usize> = (0..authors.len())
                        .filter(|&j| j != i && (stances[j] == stances[i]) == same)
                        .collect();
                    if pool.is_empty() {
                        continue;
                    }
                    let j = *pick(&mut rng, &pool);
                    let id = authors[j].id.clone();
                    if !targets.contains(&id) {
                        targets.push(id);
                    }
                }
                authors[i].retweets = targets;
            }
            Corpus::new(authors, tweets)
        }
    }
}

/// [`generate_with_table`] with the built-in perspective table.
pub fn generate(cfg: &GenConfig, lex: &Lexicon) -> Result<Corpus> {
    generate_with_table(cfg, lex, &PerspectiveTable::default())
}

/// Planted gold labels in evaluation-ready tabular form.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLabels {
    pub author_stances: Vec<(String, Stance)>,
    pub tweet_stances: Vec<(String, Stance)>,
    pub mention_triples: Vec<(String, Perspective)>,
    pub ambiguous_tweets: Vec<String>,
}

/// Extracts the planted labels from a generated corpus.
pub fn oracle_labels(corpus: &Corpus) -> Result<OracleLabels> {
    let mut author_stances = Vec::new();
    for a in &corpus.authors {
        let stance = a
            .gold_stance
            .ok_or_else(|| Error::Validation(format!("author {} lacks a gold stance", a.id)))?;
        author_stances.push((a.id.clone(), stance));
    }
    let mut tweet_stances = Vec::new();
    let mut mention_triples = Vec::new();
    let mut ambiguous_tweets = Vec::new();
    for t in &corpus.tweets {
        let stance = t
            .gold_stance
            .ok_or_else(|| Error::Validation(format!("tweet {} lacks a gold stance", t.id)))?;
        tweet_stances.push((t.id.clone(), stance));
        if t.gold_ambiguous == Some(true) {
            ambiguous_tweets.push(t.id.clone());
        }
        for m in &t.entities {
            let gold = m
                .gold
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("mention {} lacks a gold triple", m.id)))?;
            mention_triples.push((m.id.clone(), gold.perspective()));
        }
    }
    Ok(OracleLabels { author_stances, tweet_stances, mention_triples, ambiguous_tweets })
}
