// Reports seed-author balance for candidate split seeds on the benchmark corpus.
use perspectra::corpus::{split_by_author, Stance};
use perspectra::synthgen::{generate, GenConfig, Lexicon};

fn main() {
    let gen = GenConfig { seed: 1000, n_authors: 150, ambiguous_rate: 0.15, ..GenConfig::default() };
    let corpus = generate(&gen, &Lexicon::builtin()).unwrap();
    let n_black = corpus.authors.iter().filter(|a| a.gold_stance == Some(Stance::ProBlackLM)).count();
    eprintln!("corpus: {} tweets, {}/{} black/blue authors", corpus.tweets.len(), n_black, corpus.authors.len() - n_black);
    for seed in [1000u64, 1, 2, 3, 4, 5, 2000, 3000] {
        let split = split_by_author(&corpus, 10, seed).unwrap();
        let black = split.train_authors.iter()
            .filter(|id| corpus.authors[corpus.author_ordinal(id).unwrap()].gold_stance == Some(Stance::ProBlackLM))
            .count();
        eprintln!("split seed {seed}: {black} black / {} blue", 10 - black);
    }
}
