//! Small template grammar producing explanatory sentences with their parses.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::{parse_bracketed_tree, SyntaxTree};

const NOUNS: &[&str] = &[
    "bee", "animal", "plant", "tree", "rock", "metal", "magnet", "heat", "light", "water", "ice", "cloud", "rain",
    "sun", "moon", "leaf", "root", "seed", "flower", "fish", "bird", "insect", "mineral", "soil", "wind", "energy",
    "sound", "iron", "copper", "glass", "wood", "oxygen", "gas", "liquid", "solid", "organism", "habitat",
];
const PLURALS: &[&str] = &[
    "bees", "animals", "plants", "trees", "rocks", "metals", "magnets", "fish", "birds", "insects", "minerals",
    "flowers", "seeds", "roots", "leaves", "clouds", "organisms", "tools", "thermometers", "scales",
];
const ADJECTIVES: &[&str] = &[
    "small", "large", "hot", "cold", "living", "green", "solid", "liquid", "bright", "dark", "heavy", "light",
    "renewable", "natural", "electrical", "magnetic",
];
const VERBS: &[&str] = &["causes", "requires", "produces", "absorbs", "reflects", "contains", "needs", "changes"];
const PURPOSES: &[&str] = &["measuring", "heating", "cooling", "building", "cutting", "growing", "moving"];

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty lexicon")
}

/// One generated sentence and its constituency tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub text: String,
    pub tree: SyntaxTree,
}

pub struct NaturalGenerator {
    rng: ChaCha8Rng,
}

impl NaturalGenerator {
    pub const FAMILIES: usize = 6;

    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn generate(&mut self) -> Sentence {
        let family = self.rng.random_range(0..Self::FAMILIES);
        self.generate_family(family)
    }

    pub fn generate_family(&mut self, family: usize) -> Sentence {
        let r = &mut self.rng;
        let bracketed = match family {
            0 => {
                let (x, y) = (pick(r, NOUNS), pick(r, NOUNS));
                format!("(S (NP (DT a) (NN {x})) (VP (VBZ is) (NP (NP (DT a) (NN kind)) (PP (IN of) (NP (NN {y}))))))")
            }
            1 => {
                let (a, x, b, y) = (pick(r, ADJECTIVES), pick(r, NOUNS), pick(r, ADJECTIVES), pick(r, NOUNS));
                format!("(S (NP (JJ {a}) (NN {x})) (VP (VBZ is) (NP (JJ {b}) (NN {y}))))")
            }
            2 => {
                let (x, v, y) = (pick(r, NOUNS), pick(r, VERBS), pick(r, NOUNS));
                format!("(S (NP (DT the) (NN {x})) (VP (VBZ {v}) (NP (NN {y}))))")
            }
            3 => {
                let (x, p, y) = (pick(r, PLURALS), pick(r, PURPOSES), pick(r, NOUNS));
                format!(
                    "(S (NP (NNS {x})) (VP (MD can) (VP (VB be) (VP (VBN used) (PP (IN for) (NP (NN {p}))) (PP (IN in) (NP (DT the) (NN {y})))))))"
                )
            }
            4 => {
                let (x, y) = (pick(r, NOUNS), pick(r, NOUNS));
                format!("(S (NP (NN {x})) (VP (VBZ is) (VP (VBN made) (PP (IN of) (NP (NN {y}))))))")
            }
            _ => {
                let (a, x, v, y, b, z) = (
                    pick(r, ADJECTIVES),
                    pick(r, NOUNS),
                    pick(r, VERBS),
                    pick(r, NOUNS),
                    pick(r, ADJECTIVES),
                    pick(r, NOUNS),
                );
                format!(
                    "(S (NP (DT a) (JJ {a}) (NN {x})) (VP (VBZ {v}) (NP (NP (NN {y})) (SBAR (WHNP (WDT that)) (S (VP (VBZ is) (ADJP (JJ {b})) (PP (IN in) (NP (NN {z})))))))))"
                )
            }
        };
        let tree = parse_bracketed_tree(&bracketed).expect("templates are well formed");
        let text = tree.content_leaves().join(" ");
        Sentence { text, tree }
    }
}
