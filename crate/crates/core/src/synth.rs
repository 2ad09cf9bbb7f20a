//! Seeded generator of small parsed corpora.
//!
//! Each document has a handful of templated sentences with their dependency
//! trees. One "key" sentence has a made-up name as its subject; the reference
//! is that name, the key verb, and the key object noun. Other sentences may
//! carry a second made-up name inside a prepositional phrase, which never
//! appears in the reference, so picking the right name to copy depends on
//! its syntactic role rather than on being unknown.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, ParsedSentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGrammar {
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub max_adjectives: usize,
    /// Chance that a sentence ends with a prepositional phrase.
    pub pp_probability: f64,
    /// Chance that a prepositional phrase outside the key sentence holds a distractor name.
    pub distractor_probability: f64,
    /// Chance that the verb takes an adverb.
    pub adverb_probability: f64,
}

impl Default for SynthGrammar {
    fn default() -> Self {
        SynthGrammar {
            min_sentences: 2,
            max_sentences: 4,
            max_adjectives: 2,
            pp_probability: 0.5,
            distractor_probability: 0.5,
            adverb_probability: 0.3,
        }
    }
}

const DETERMINERS: &[&str] = &["the", "a"];
const ADJECTIVES: &[&str] = &["big", "small", "red", "old", "quiet", "happy", "new", "dark"];
const NOUNS: &[&str] = &[
    "cat", "dog", "bird", "farmer", "teacher", "child", "river", "house", "city", "car", "boat", "tree",
];
const VERBS: &[&str] = &["saw", "found", "liked", "visited", "built", "moved", "painted", "followed"];
const ADVERBS: &[&str] = &["quickly", "slowly", "often", "never"];
const PREPOSITIONS: &[&str] = &["near", "with", "behind"];
const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Incrementally built sentence with 1-based heads.
#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl Builder {
    /// Appends a token and returns its 1-based position; head 0 means "fill in later".
    fn push(&mut self, tok: &str, label: &str) -> usize {
        self.tokens.push(tok.to_string());
        self.heads.push(0);
        self.labels.push(label.to_string());
        self.tokens.len()
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.heads[dep - 1] = head;
    }

    fn finish(self) -> ParsedSentence {
        ParsedSentence {
            tokens: self.tokens,
            heads: self.heads,
            labels: self.labels,
        }
    }
}

struct Generator<'g> {
    rng: ChaCha8Rng,
    grammar: &'g SynthGrammar,
}

impl Generator<'_> {
    fn pick(&mut self, words: &[&'static str]) -> &'static str {
        words.choose(&mut self.rng).expect("word lists are nonempty")
    }

    fn name(&mut self) -> String {
        let syllables = self.rng.gen_range(2..=3);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push_str(self.pick(ONSETS));
            s.push_str(self.pick(VOWELS));
        }
        s.push_str(self.pick(&["x", "q", "k", "th"]));
        s
    }

    /// Determiner, adjectives, noun. Returns the noun position and the noun.
    fn noun_phrase(&mut self, b: &mut Builder, label: &str) -> (usize, String) {
        let det = self.pick(DETERMINERS);
        let n_adj = self.rng.gen_range(0..=self.grammar.max_adjectives);
        let adjs: Vec<&str> = (0..n_adj).map(|_| self.pick(ADJECTIVES)).collect();
        let noun = self.pick(NOUNS);
        let d = b.push(det, "det");
        let a: Vec<usize> = adjs.iter().map(|w| b.push(w, "amod")).collect();
        let n = b.push(noun, label);
        b.attach(d, n);
        for p in a {
            b.attach(p, n);
        }
        (n, noun.to_string())
    }

    /// Returns the sentence plus (verb, object noun) for key sentences.
    fn sentence(&mut self, subject_name: Option<&str>, allow_distractor: bool) -> (ParsedSentence, String, String) {
        let mut b = Builder::default();
        let subj = match subject_name {
            Some(name) => b.push(name, "nsubj"),
            None => self.noun_phrase(&mut b, "nsubj").0,
        };
        let adv = (self.rng.gen::<f64>() < self.grammar.adverb_probability).then(|| {
            let w = self.pick(ADVERBS);
            b.push(w, "advmod")
        });
        let verb_word = self.pick(VERBS);
        let verb = b.push(verb_word, "root");
        b.attach(subj, verb);
        if let Some(a) = adv {
            b.attach(a, verb);
        }
        let (obj, obj_word) = self.noun_phrase(&mut b, "dobj");
        b.attach(obj, verb);
        if self.rng.gen::<f64>() < self.grammar.pp_probability {
            let prep = b.push(self.pick(PREPOSITIONS), "prep");
            // attach to the verb or to the object
            let head = if self.rng.gen::<bool>() { verb } else { obj };
            b.attach(prep, head);
            let pobj = if allow_distractor && self.rng.gen::<f64>() < self.grammar.distractor_probability {
                let name = self.name();
                b.push(&name, "pobj")
            } else {
                self.noun_phrase(&mut b, "pobj").0
            };
            b.attach(pobj, prep);
        }
        let punct = b.push(".", "punct");
        b.attach(punct, verb);
        (b.finish(), verb_word.to_string(), obj_word)
    }

    fn document(&mut self) -> Document {
        let g = self.grammar;
        let count = self.rng.gen_range(g.min_sentences..=g.max_sentences.max(g.min_sentences));
        let key = self.rng.gen_range(0..count);
        let name = self.name();
        let mut sentences = Vec::with_capacity(count);
        let mut reference = Vec::new();
        for k in 0..count {
            if k == key {
                let (s, verb, obj) = self.sentence(Some(&name), false);
                sentences.push(s);
                reference = vec![name.clone(), verb, obj];
            } else {
                sentences.push(self.sentence(None, true).0);
            }
        }
        Document { sentences, reference }
    }
}

/// Deterministic for a given `(seed, size, grammar)`.
pub fn generate_synthetic_corpus(seed: u64, size: usize, grammar: &SynthGrammar) -> Vec<Document> {
    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(seed),
        grammar,
    };
    (0..size).map(|_| gen.document()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_documents;

    #[test]
    fn same_seed_same_bytes() {
        let g = SynthGrammar::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_documents(&mut a, &generate_synthetic_corpus(7, 16, &g)).unwrap();
        write_documents(&mut b, &generate_synthetic_corpus(7, 16, &g)).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_documents(&mut c, &generate_synthetic_corpus(8, 16, &g)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sentences_are_valid_trees() {
        for doc in generate_synthetic_corpus(3, 200, &SynthGrammar::default()) {
            assert!((2..=4).contains(&doc.sentences.len()));
            for s in &doc.sentences {
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn references_are_contained_in_sources() {
        for doc in generate_synthetic_corpus(7, 16, &SynthGrammar::default()) {
            let src: Vec<&str> = doc.tokens().collect();
            assert_eq!(doc.reference.len(), 3);
            for t in &doc.reference {
                assert!(src.contains(&t.as_str()), "{t} missing from {src:?}");
            }
        }
    }
}
