//! Passages, multi-modal queries, tokenization and answer-containment relevance.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A unit of the retrieval collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let passage = Passage {
            id: id.into(),
            text: text.into(),
        };
        passage.validate()?;
        Ok(passage)
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidArgument("passage id is empty".into()));
        }
        if self.text.split_whitespace().next().is_none() {
            return Err(Error::InvalidArgument(format!(
                "passage `{}` has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

/// A question about an image, with the textual and numeric visual clues that
/// accompany it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalQuery {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
    /// One feature vector per detected region.
    #[serde(default, rename = "visual", skip_serializing_if = "Option::is_none")]
    pub visual_features: Option<Vec<Vec<f64>>>,
}

impl MultiModalQuery {
    pub fn new(id: impl Into<String>, question: impl Into<String>) -> Self {
        MultiModalQuery {
            id: id.into(),
            question: question.into(),
            objects: Vec::new(),
            captions: Vec::new(),
            answers: Vec::new(),
            visual_features: None,
        }
    }

    /// Dimensionality of the region features, if any are present.
    pub fn visual_dim(&self) -> Option<usize> {
        self.visual_features
            .as_ref()
            .and_then(|v| v.first())
            .map(Vec::len)
    }

    pub fn has_visual(&self) -> bool {
        self.visual_features.as_ref().is_some_and(|v| !v.is_empty())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("query id is empty".into());
        }
        if self.question.trim().is_empty() {
            return Err(format!("query `{}` has an empty question", self.id));
        }
        if let Some(features) = &self.visual_features {
            let dim = features.first().map_or(0, Vec::len);
            if features.iter().any(|f| f.len() != dim || f.is_empty()) {
                return Err(format!(
                    "query `{}` has region features of inconsistent or zero length",
                    self.id
                ));
            }
            if features.iter().flatten().any(|x| !x.is_finite()) {
                return Err(format!("query `{}` has non-finite features", self.id));
            }
        }
        Ok(())
    }
}

/// How visual clues are folded into the text query for term matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpansionMode {
    Orig,
    Obj,
    Cap,
    All,
}

impl ExpansionMode {
    pub const ALL_MODES: [ExpansionMode; 4] = [
        ExpansionMode::Orig,
        ExpansionMode::Obj,
        ExpansionMode::Cap,
        ExpansionMode::All,
    ];
}

impl fmt::Display for ExpansionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpansionMode::Orig => "orig",
            ExpansionMode::Obj => "obj",
            ExpansionMode::Cap => "cap",
            ExpansionMode::All => "all",
        })
    }
}

impl FromStr for ExpansionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orig" => Ok(ExpansionMode::Orig),
            "obj" => Ok(ExpansionMode::Obj),
            "cap" => Ok(ExpansionMode::Cap),
            "all" => Ok(ExpansionMode::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown expansion mode `{other}`"
            ))),
        }
    }
}

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True iff the token sequence of some answer occurs contiguously in the
/// passage's token sequence.
pub fn contains_answer(passage: &Passage, answers: &[String]) -> bool {
    contains_answer_tokens(&tokenize(&passage.text), answers)
}

pub(crate) fn contains_answer_tokens(passage_tokens: &[String], answers: &[String]) -> bool {
    answers.iter().any(|answer| {
        let needle = tokenize(answer);
        !needle.is_empty()
            && needle.len() <= passage_tokens.len()
            && passage_tokens
                .windows(needle.len())
                .any(|w| w == needle.as_slice())
    })
}

/// Builds the set of text queries for one information need.
///
/// `Obj` and `Cap` with no corresponding clues fall back to the bare
/// question so that the result is never empty.
pub fn expand_query(query: &MultiModalQuery, mode: ExpansionMode) -> Vec<String> {
    let append = |clues: &[String]| -> Vec<String> {
        clues
            .iter()
            .map(|c| format!("{} {}", query.question, c))
            .collect()
    };
    let orig = || vec![query.question.clone()];
    match mode {
        ExpansionMode::Orig => orig(),
        ExpansionMode::Obj | ExpansionMode::Cap => {
            let clues = if mode == ExpansionMode::Obj {
                &query.objects
            } else {
                &query.captions
            };
            if clues.is_empty() {
                log::warn!(
                    "query `{}` has no clues for {mode} expansion; using the question only",
                    query.id
                );
                orig()
            } else {
                append(clues)
            }
        }
        ExpansionMode::All => {
            let mut out = orig();
            out.extend(append(&query.objects));
            out.extend(append(&query.captions));
            out
        }
    }
}

/// Streaming reader over a JSON Lines passage file.
///
/// Ids are remembered to reject duplicates; texts are not retained.
pub struct PassageReader<R> {
    path: PathBuf,
    lines: Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
}

impl<R: BufRead> PassageReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        PassageReader {
            path: path.into(),
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
        }
    }
}

impl<R: BufRead> Iterator for PassageReader<R> {
    type Item = Result<Passage>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message,
            };
            let passage: Passage = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(e) => return Some(Err(parse_err(e.to_string()))),
            };
            if let Err(e) = passage.validate() {
                return Some(Err(parse_err(e.to_string())));
            }
            if !self.seen.insert(passage.id.clone()) {
                return Some(Err(Error::DuplicateId(passage.id)));
            }
            return Some(Ok(passage));
        }
    }
}

pub fn load_passages(path: impl AsRef<Path>) -> Result<PassageReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(PassageReader::new(BufReader::new(file), path))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<MultiModalQuery>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_queries(BufReader::new(file), path)
}

pub fn read_queries(reader: impl BufRead, path: &Path) -> Result<Vec<MultiModalQuery>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let query: MultiModalQuery =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        query.validate().map_err(parse_err)?;
        if let Some(d) = query.visual_dim() {
            match dim {
                Some(expected) if expected != d => {
                    return Err(parse_err(format!(
                        "visual feature dimension {d} differs from {expected} seen earlier"
                    )))
                }
                _ => dim = Some(d),
            }
        }
        if !seen.insert(query.id.clone()) {
            return Err(Error::DuplicateId(query.id));
        }
        out.push(query);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("serializable record");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_passages<'a>(
    path: impl AsRef<Path>,
    passages: impl IntoIterator<Item = &'a Passage>,
) -> Result<()> {
    write_jsonl(path.as_ref(), passages)
}

pub fn write_queries<'a>(
    path: impl AsRef<Path>,
    queries: impl IntoIterator<Item = &'a MultiModalQuery>,
) -> Result<()> {
    write_jsonl(path.as_ref(), queries)
}

/// In-memory passage collection with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Collection {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Collection {
    pub fn new(passages: impl IntoIterator<Item = Passage>) -> Result<Self> {
        let mut c = Collection::default();
        for p in passages {
            c.push(p)?;
        }
        Ok(c)
    }

    pub fn from_results(passages: impl IntoIterator<Item = Result<Passage>>) -> Result<Self> {
        let mut c = Collection::default();
        for p in passages {
            c.push(p?)?;
        }
        Ok(c)
    }

    /// Loads only the passages whose id satisfies `keep`.
    pub fn load_filtered(path: impl AsRef<Path>, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let mut c = Collection::default();
        for p in load_passages(path)? {
            let p = p?;
            if keep(&p.id) {
                c.push(p)?;
            }
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_results(load_passages(path)?)
    }

    fn push(&mut self, p: Passage) -> Result<()> {
        if self.by_id.contains_key(&p.id) {
            return Err(Error::DuplicateId(p.id));
        }
        self.by_id.insert(p.id.clone(), self.passages.len());
        self.passages.push(p);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn require(&self, id: &str) -> Result<&Passage> {
        self.get(id)
            .ok_or_else(|| Error::UnknownPassage(id.to_string()))
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Passage> {
        self.passages.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("What is this?"), strings(&["what", "is", "this"]));
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("fire-hydrant 7"),
            strings(&["fire", "hydrant", "7"])
        );
    }

    #[test]
    fn answer_matching_respects_token_boundaries() {
        let p = Passage::new("p", "a yellow Labrador retriever").unwrap();
        assert!(contains_answer(&p, &strings(&["labrador"])));
        assert!(contains_answer(&p, &strings(&["Yellow LABRADOR"])));
        assert!(!contains_answer(&p, &strings(&["labrador yellow"])));

        let p = Passage::new("p", "a category of things").unwrap();
        assert!(!contains_answer(&p, &strings(&["cat"])));

        let empty = Passage {
            id: "e".into(),
            text: String::new(),
        };
        assert!(!contains_answer(&empty, &strings(&["x"])));
    }

    #[test]
    fn passage_validation() {
        assert!(Passage::new("", "text").is_err());
        assert!(Passage::new("p", "  \t ").is_err());
    }

    #[test]
    fn expansion_modes() {
        let mut q = MultiModalQuery::new("q1", "what breed is this dog");
        q.objects = strings(&["dog", "frisbee"]);
        assert_eq!(
            expand_query(&q, ExpansionMode::Obj),
            strings(&[
                "what breed is this dog dog",
                "what breed is this dog frisbee"
            ])
        );
        assert_eq!(
            expand_query(&q, ExpansionMode::Orig),
            strings(&["what breed is this dog"])
        );
        // no captions: degrade to the bare question
        assert_eq!(
            expand_query(&q, ExpansionMode::Cap),
            strings(&["what breed is this dog"])
        );
        q.captions = strings(&["a", "b", "c"]);
        let all = expand_query(&q, ExpansionMode::All);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], q.question);
        assert_eq!(all[5], "what breed is this dog c");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("CAP".parse::<ExpansionMode>().unwrap(), ExpansionMode::Cap);
        assert!("caption".parse::<ExpansionMode>().is_err());
    }

    #[test]
    fn passage_reader_rejects_duplicates_and_bad_lines() {
        let data = "{\"id\":\"p1\",\"text\":\"hello world\"}\n";
        let got: Vec<_> = PassageReader::new(data.as_bytes(), "mem")
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(got, vec![Passage::new("p1", "hello world").unwrap()]);

        let dup = format!("{data}{data}");
        let err = PassageReader::new(dup.as_bytes(), "mem")
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "p1"));

        let bad = format!("{data}\nnot json\n");
        let err = PassageReader::new(bad.as_bytes(), "mem")
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn query_reader_reports_missing_question() {
        let data = "{\"id\":\"q1\",\"question\":\"why\",\"answers\":[\"x\"]}\n{\"id\":\"q2\",\"answers\":[\"y\"]}\n";
        let err = read_queries(data.as_bytes(), Path::new("q.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("question"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn query_reader_checks_visual_dims() {
        let data = "{\"id\":\"q1\",\"question\":\"why\",\"visual\":[[1,2],[3]]}\n";
        assert!(read_queries(data.as_bytes(), Path::new("q")).is_err());
        let data = "{\"id\":\"q1\",\"question\":\"why\",\"visual\":[[1,2]]}\n{\"id\":\"q2\",\"question\":\"why\",\"visual\":[[1,2,3]]}\n";
        assert!(read_queries(data.as_bytes(), Path::new("q")).is_err());
        let data = "{\"id\":\"q1\",\"question\":\"why\",\"visual\":[[1,2]]}\n";
        let q = read_queries(data.as_bytes(), Path::new("q")).unwrap();
        assert_eq!(q[0].visual_dim(), Some(2));
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn matching_is_case_insensitive(text in "[a-zA-Z ]{0,30}", ans in "[a-zA-Z]{1,5}( [a-zA-Z]{1,5})?") {
            let p = Passage { id: "p".into(), text };
            let a = vec![ans.clone()];
            let lower = vec![ans.to_lowercase()];
            prop_assert_eq!(contains_answer(&p, &a), contains_answer(&p, &lower));
        }

        #[test]
        fn expansion_sizes(n_obj in 0usize..4, n_cap in 0usize..4) {
            let mut q = MultiModalQuery::new("q", "question text");
            q.objects = (0..n_obj).map(|i| format!("o{i}")).collect();
            q.captions = (0..n_cap).map(|i| format!("c{i}")).collect();
            for mode in ExpansionMode::ALL_MODES {
                prop_assert!(!expand_query(&q, mode).is_empty());
            }
            prop_assert_eq!(expand_query(&q, ExpansionMode::All).len(), 1 + n_obj + n_cap);
        }
    }
}
