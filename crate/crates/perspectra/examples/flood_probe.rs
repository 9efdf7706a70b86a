// Diagnoses pseudo-label flood quality per inference step.
use perspectra::corpus::{split_by_author, PerspectiveTable, Stance};
use perspectra::model::ModelConfig;
use perspectra::selftrain::{argmax, run_with_observer, LabelSet, SelfTrainConfig, Variant};
use perspectra::synthgen::{generate, GenConfig, Lexicon};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let lr: f64 = std::env::var("PROBE_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.03);
    let wd: f64 = std::env::var("PROBE_WD").ok().and_then(|v| v.parse().ok()).unwrap_or(0.01);
    let gen = GenConfig { seed: 1000, n_authors: 150, ambiguous_rate: 0.15, ..GenConfig::default() };
    let corpus = generate(&gen, &Lexicon::builtin()).unwrap();
    let split = split_by_author(&corpus, 10, 1000).unwrap();
    let seed_labels = LabelSet::seed_from_authors(&corpus, &split.train_authors).unwrap();
    let seed_black = split.train_authors.iter()
        .filter(|id| corpus.authors[corpus.author_ordinal(id).unwrap()].gold_stance == Some(Stance::ProBlackLM)).count();
    eprintln!("seed authors: {} black / {} blue", seed_black, 10 - seed_black);
    let st = SelfTrainConfig::default();
    let model_cfg = ModelConfig { d_in: 256, seed, lr, weight_decay: wd, ..ModelConfig::default() };
    let gold: Vec<Stance> = corpus.tweets.iter().map(|t| t.gold_stance.unwrap()).collect();

    let out = run_with_observer(&corpus, &seed_labels, &st, model_cfg, Variant::SelfLearning, &PerspectiveTable::default(), |rep| {
        let n_tweets = gold.len();
        // stance reliability/accuracy among reliable
        let mut rel = 0; let mut rel_ok = 0;
        let mut pred_black = 0;
        for ti in 0..n_tweets {
            let p = Stance::from_code(argmax(rep.predictions.tweet_stance.row(ti))).unwrap();
            if p == Stance::ProBlackLM { pred_black += 1; }
            if rep.outcome.reliability.tweet_stance[ti] {
                rel += 1;
                if p == gold[ti] { rel_ok += 1; }
            }
        }
        let n_mentions = rep.predictions.map.rows();
        let mut mrel = 0;
        for mo in 0..n_mentions {
            let r = &rep.outcome.reliability;
            if r.map[mo] && r.sent[mo] && r.role[mo] { mrel += 1; }
        }
        let consistent = rep.outcome.tweet_consistent.iter().filter(|&&b| b).count();
        let add_ok = rep.added_tweets.iter().filter(|&&(ti, s)| gold[ti] == s).count();
        eprintln!(
            "ep {:3} c={} t={:2} | pred_black {:4}/{n_tweets} | stance rel {rel:4} acc {:.3} | mentions fully-rel {mrel:4} | consistent {consistent:4} | add {:4} ok {add_ok:4}",
            rep.epoch, rep.confidence, rep.tweet_threshold, pred_black,
            if rel > 0 { rel_ok as f64 / rel as f64 } else { 0.0 },
            rep.added_tweets.len(),
        );
    }).unwrap();
    let mut right = 0; let mut wrong = 0;
    for (&ti, &(stance, origin)) in &out.labels.tweets {
        if origin == perspectra::selftrain::Origin::Pseudo {
            if gold[ti] == stance { right += 1 } else { wrong += 1 }
        }
    }
    eprintln!("final pseudo: {right} ok, {wrong} wrong; final epoch {}", out.final_epoch);
}
