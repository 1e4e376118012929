//! Seeded synthetic multi-modal QA collections.
//!
//! Every query is generated from a question template and a latent visual
//! class; its answer is a token specific to that (template, class) pair.
//! Questions only reveal the template, so the same question text recurs
//! with different answers. Captions name the class and its attributes,
//! objects name some of its parts, and region features are noisy copies of
//! a per-class prototype vector. Answer-bearing passages mention the answer
//! together with template topic words and class words, alongside class-only,
//! template-only and filler distractors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{write_passages, write_queries, MultiModalQuery, Passage};
use crate::error::{Error, Result};

pub const VISUAL_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub passages: Vec<Passage>,
    pub queries: Vec<MultiModalQuery>,
}

impl SynthData {
    /// Writes `passages.jsonl` and `queries.jsonl` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("passages.jsonl");
        let q = dir.join("queries.jsonl");
        write_passages(&p, &self.passages)?;
        write_queries(&q, &self.queries)?;
        Ok((p, q))
    }
}

struct Class {
    name: String,
    attributes: Vec<String>,
    parts: Vec<String>,
    prototype: Vec<f64>,
}

struct Template {
    question: String,
    topics: Vec<String>,
}

struct WordSource {
    used: HashSet<String>,
}

impl WordSource {
    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        const ONSETS: &[&str] = &[
            "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st",
            "gl",
        ];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).expect("non-empty"));
                w.push_str(VOWELS.choose(rng).expect("non-empty"));
            }
            if rng.random_bool(0.5) {
                w.push_str(["n", "r", "s", "x"].choose(rng).expect("non-empty"));
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n).map(|_| self.word(rng)).collect()
    }
}

/// Generates a collection of `num_passages` passages and `num_queries`
/// queries. Identical arguments always give identical output.
pub fn synth_gen(seed: u64, num_passages: usize, num_queries: usize) -> Result<SynthData> {
    if num_passages < 10 || num_queries < 10 {
        return Err(Error::InvalidArgument(
            "synthetic generation needs at least 10 passages and 10 queries".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = (num_passages / 80).clamp(2, 30);
    let num_templates = (num_passages / (num_classes * 8)).clamp(1, 8);
    let pairs = num_classes * num_templates;
    let per_pair = ((num_passages / 2) / pairs).clamp(1, 4);

    let mut words = WordSource {
        used: HashSet::new(),
    };
    // shared function words appear everywhere and carry little weight
    let function_words: Vec<String> = [
        "the", "a", "of", "in", "with", "and", "is", "to", "on", "for",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for w in &function_words {
        words.used.insert(w.clone());
    }
    words
        .used
        .extend(["what", "this", "kind", "does", "which"].map(String::from));
    let filler = words.words(400, &mut rng);
    let generic_objects = words.words(12, &mut rng);

    let proto = Normal::new(0.0, 1.0).expect("valid");
    let classes: Vec<Class> = (0..num_classes)
        .map(|_| Class {
            name: words.word(&mut rng),
            attributes: words.words(4, &mut rng),
            parts: words.words(3, &mut rng),
            prototype: (0..VISUAL_DIM).map(|_| proto.sample(&mut rng)).collect(),
        })
        .collect();
    let templates: Vec<Template> = (0..num_templates)
        .map(|_| {
            let topics = words.words(3, &mut rng);
            let opener = ["what", "which", "what kind of"]
                .choose(&mut rng)
                .expect("non-empty");
            Template {
                question: format!("{opener} {} {} does this have", topics[0], topics[1]),
                topics,
            }
        })
        .collect();
    // answers[t][c]
    let answers: Vec<Vec<String>> = (0..num_templates)
        .map(|_| words.words(num_classes, &mut rng))
        .collect();

    let fill = |rng: &mut ChaCha8Rng, lo: usize, hi: usize, out: &mut Vec<String>| {
        let n = rng.random_range(lo..=hi);
        for _ in 0..n {
            if rng.random_bool(0.3) {
                out.push(function_words.choose(rng).expect("non-empty").clone());
            } else {
                out.push(filler.choose(rng).expect("non-empty").clone());
            }
        }
    };

    let mut texts: Vec<Vec<String>> = Vec::with_capacity(num_passages);
    for t in 0..num_templates {
        for (c, class) in classes.iter().enumerate() {
            for _ in 0..per_pair {
                let mut w = vec![answers[t][c].clone()];
                w.extend(templates[t].topics.choose_multiple(&mut rng, 2).cloned());
                w.push(class.name.clone());
                w.extend(class.attributes.choose_multiple(&mut rng, 2).cloned());
                if rng.random_bool(0.7) {
                    w.push(class.parts.choose(&mut rng).expect("non-empty").clone());
                }
                fill(&mut rng, 8, 16, &mut w);
                texts.push(w);
            }
        }
    }
    while texts.len() < num_passages {
        let mut w = Vec::new();
        match rng.random_range(0..10) {
            0..=3 => {
                let class = classes.choose(&mut rng).expect("non-empty");
                w.push(class.name.clone());
                w.extend(class.attributes.choose_multiple(&mut rng, 2).cloned());
                w.push(class.parts.choose(&mut rng).expect("non-empty").clone());
                if rng.random_bool(0.5) {
                    let t = templates.choose(&mut rng).expect("non-empty");
                    w.push(t.topics.choose(&mut rng).expect("non-empty").clone());
                }
            }
            4..=6 => {
                let t = templates.choose(&mut rng).expect("non-empty");
                w.extend(t.topics.choose_multiple(&mut rng, 2).cloned());
                w.push(generic_objects.choose(&mut rng).expect("non-empty").clone());
            }
            _ => {
                w.push(generic_objects.choose(&mut rng).expect("non-empty").clone());
            }
        }
        fill(&mut rng, 8, 16, &mut w);
        texts.push(w);
    }
    texts.truncate(num_passages);
    texts.shuffle(&mut rng);
    let passages = texts
        .into_iter()
        .enumerate()
        .map(|(i, mut w)| {
            w.shuffle(&mut rng);
            Passage {
                id: format!("p{i:06}"),
                text: w.join(" "),
            }
        })
        .collect();

    let noise = Normal::new(0.0, 0.8).expect("valid");
    let queries = (0..num_queries)
        .map(|i| {
            let t = rng.random_range(0..num_templates);
            let c = rng.random_range(0..num_classes);
            let class = &classes[c];
            let mut objects: Vec<String> =
                class.parts.choose_multiple(&mut rng, 2).cloned().collect();
            objects.push(generic_objects.choose(&mut rng).expect("non-empty").clone());
            objects.shuffle(&mut rng);
            let captions = (0..3)
                .map(|_| {
                    let attrs: Vec<&String> =
                        class.attributes.choose_multiple(&mut rng, 2).collect();
                    let extra = filler.choose(&mut rng).expect("non-empty");
                    format!("a {} {} with {} {}", attrs[0], class.name, attrs[1], extra)
                })
                .collect();
            let regions = rng.random_range(2..=4);
            let visual = (0..regions)
                .map(|_| {
                    class
                        .prototype
                        .iter()
                        .map(|x| x + noise.sample(&mut rng))
                        .collect()
                })
                .collect();
            MultiModalQuery {
                id: format!("q{i:05}"),
                question: templates[t].question.clone(),
                objects,
                captions,
                answers: vec![answers[t][c].clone()],
                visual_features: Some(visual),
            }
        })
        .collect();
    Ok(SynthData { passages, queries })
}
