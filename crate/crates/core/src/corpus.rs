//! Sentence corpus: ingestion, sentence bags keyed by entity pair,
//! subject-entity indexing, and distant-supervision labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{CplError, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};

/// Reserved token id for out-of-vocabulary words.
pub const UNK_TOKEN: u32 = 0;
pub const UNK_TOKEN_NAME: &str = "<unk>";

/// Name of the reserved no-relation class used in distant supervision.
pub const NO_RELATION_NAME: &str = "<no_relation>";

pub type BagKey = (EntityId, EntityId);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<u32>,
    pub head_pos: usize,
    pub tail_pos: usize,
    pub pair: BagKey,
}

#[derive(Debug, Clone)]
pub struct SentenceBag {
    pub pair: BagKey,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub bags: BTreeMap<BagKey, SentenceBag>,
    /// entity → keys of bags whose subject is that entity, sorted by object.
    pub subject_index: BTreeMap<EntityId, Vec<BagKey>>,
    pub word_vocab: Vocabulary,
    pub num_sentences: usize,
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    sentence: String,
    head: String,
    tail: String,
    head_pos: usize,
    tail_pos: usize,
}

/// A distant-supervision label: the bag's pair matches a KG triple with this
/// relation, or the reserved no-relation id when nothing matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagLabel {
    pub bag: BagKey,
    pub relation: RelationId,
}

impl Corpus {
    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    /// Bags whose subject entity is `e`, sorted by object entity id.
    pub fn bags_for_subject(&self, e: EntityId) -> Vec<&SentenceBag> {
        self.subject_index
            .get(&e)
            .map(|keys| keys.iter().map(|k| &self.bags[k]).collect())
            .unwrap_or_default()
    }
}

/// Every entity name mentioned as a head or tail in a corpus file. Useful
/// for building a vocabulary that covers the corpus before the graph is
/// finalized, since [`load_corpus`] rejects unresolvable entities.
pub fn corpus_entity_names(path: &Path) -> Result<BTreeSet<String>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut names = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CplError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        names.insert(record.head);
        names.insert(record.tail);
    }
    Ok(names)
}

/// Load a JSON-lines corpus file. Each record carries a whitespace-tokenized
/// sentence, head/tail entity strings resolvable in the KG vocabulary, and
/// token indices of the two mentions.
pub fn load_corpus(path: &Path, kg: &KnowledgeGraph, max_len: usize) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut word_vocab = Vocabulary::new();
    word_vocab.intern(UNK_TOKEN_NAME);
    let mut bags: BTreeMap<BagKey, SentenceBag> = BTreeMap::new();
    let mut num_sentences = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CplError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let head = kg.entities.id(&record.head).ok_or_else(|| {
            CplError::Ingestion(format!(
                "line {}: head entity '{}' not in graph vocabulary",
                lineno + 1,
                record.head
            ))
        })?;
        let tail = kg.entities.id(&record.tail).ok_or_else(|| {
            CplError::Ingestion(format!(
                "line {}: tail entity '{}' not in graph vocabulary",
                lineno + 1,
                record.tail
            ))
        })?;
        let mut tokens: Vec<u32> = record
            .sentence
            .split_whitespace()
            .map(|w| word_vocab.intern(w))
            .collect();
        if record.head_pos >= tokens.len()
            || record.tail_pos >= tokens.len()
            || record.head_pos == record.tail_pos
        {
            return Err(CplError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!(
                    "mention positions {}/{} invalid for {} tokens",
                    record.head_pos,
                    record.tail_pos,
                    tokens.len()
                ),
            });
        }
        // Clip long sentences; mention positions must survive the clip.
        if tokens.len() > max_len {
            if record.head_pos >= max_len || record.tail_pos >= max_len {
                return Err(CplError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("mention position beyond clip length {max_len}"),
                });
            }
            tokens.truncate(max_len);
        }
        let pair = (EntityId(head), EntityId(tail));
        let sentence = Sentence {
            tokens,
            head_pos: record.head_pos,
            tail_pos: record.tail_pos,
            pair,
        };
        bags.entry(pair)
            .or_insert_with(|| SentenceBag {
                pair,
                sentences: Vec::new(),
            })
            .sentences
            .push(sentence);
        num_sentences += 1;
    }
    let mut subject_index: BTreeMap<EntityId, Vec<BagKey>> = BTreeMap::new();
    for key in bags.keys() {
        subject_index.entry(key.0).or_default().push(*key);
    }
    Ok(Corpus {
        bags,
        subject_index,
        word_vocab,
        num_sentences,
    })
}

/// The reserved no-relation id for a graph: one past the relation vocabulary.
pub fn no_relation_id(kg: &KnowledgeGraph) -> RelationId {
    RelationId(kg.num_relations() as u32)
}

/// Label every bag by distant supervision: one `(bag, r)` instance per KG
/// triple `(head, r, tail)` matching the bag's pair, or the no-relation id
/// when nothing matches.
pub fn distant_supervision_labels(corpus: &Corpus, kg: &KnowledgeGraph) -> Vec<BagLabel> {
    let na = no_relation_id(kg);
    let mut labels = Vec::new();
    for (&(head, tail), _) in &corpus.bags {
        let mut matched = false;
        if let Ok(edges) = kg.out_edges(head) {
            for edge in edges {
                if edge.object == tail && kg.contains_base(&Triple::new(head, edge.relation, tail))
                {
                    labels.push(BagLabel {
                        bag: (head, tail),
                        relation: edge.relation,
                    });
                    matched = true;
                }
            }
        }
        if !matched {
            labels.push(BagLabel {
                bag: (head, tail),
                relation: na,
            });
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_triples, VocabMode};
    use std::io::Write as _;

    fn kg_from(lines: &[&str]) -> KnowledgeGraph {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        load_triples(file.path(), VocabMode::Build).unwrap()
    }

    fn corpus_from(kg: &KnowledgeGraph, records: &[&str]) -> Result<Corpus> {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for r in records {
            writeln!(file, "{r}").unwrap();
        }
        load_corpus(file.path(), kg, 120)
    }

    #[test]
    fn same_pair_shares_a_bag() {
        let kg = kg_from(&["miami\tlocated_in\tusa"]);
        let corpus = corpus_from(
            &kg,
            &[
                r#"{"sentence": "miami is in usa", "head": "miami", "tail": "usa", "head_pos": 0, "tail_pos": 3}"#,
                r#"{"sentence": "usa contains miami", "head": "miami", "tail": "usa", "head_pos": 2, "tail_pos": 0}"#,
            ],
        )
        .unwrap();
        assert_eq!(corpus.num_bags(), 1);
        assert_eq!(corpus.bags.values().next().unwrap().sentences.len(), 2);
        assert_eq!(corpus.num_sentences, 2);
    }

    #[test]
    fn unknown_entity_rejected() {
        let kg = kg_from(&["a\tr\tb"]);
        let err = corpus_from(
            &kg,
            &[r#"{"sentence": "x y", "head": "ghost", "tail": "b", "head_pos": 0, "tail_pos": 1}"#],
        )
        .unwrap_err();
        assert!(matches!(err, CplError::Ingestion(_)));
    }

    #[test]
    fn missing_field_is_parse_error() {
        let kg = kg_from(&["a\tr\tb"]);
        let err = corpus_from(
            &kg,
            &[r#"{"sentence": "x y", "head": "a", "tail": "b"}"#],
        )
        .unwrap_err();
        assert!(matches!(err, CplError::Parse { .. }));
    }

    #[test]
    fn subject_index_is_subject_keyed() {
        let kg = kg_from(&["a\tr\tb", "a\tr\tc", "a\tr\td", "b\tr\ta"]);
        let corpus = corpus_from(
            &kg,
            &[
                r#"{"sentence": "a x b", "head": "a", "tail": "b", "head_pos": 0, "tail_pos": 2}"#,
                r#"{"sentence": "a x c", "head": "a", "tail": "c", "head_pos": 0, "tail_pos": 2}"#,
                r#"{"sentence": "a x d", "head": "a", "tail": "d", "head_pos": 0, "tail_pos": 2}"#,
            ],
        )
        .unwrap();
        let a = EntityId(kg.entities.id("a").unwrap());
        let b = EntityId(kg.entities.id("b").unwrap());
        let d = EntityId(kg.entities.id("d").unwrap());
        assert_eq!(corpus.bags_for_subject(a).len(), 3);
        // b appears only as a sentence object.
        assert!(corpus.bags_for_subject(b).is_empty());
        assert!(corpus.bags_for_subject(d).is_empty());
        // Index coverage: per-subject bag counts sum to the bag total.
        let total: usize = corpus
            .subject_index
            .values()
            .map(|keys| keys.len())
            .sum();
        assert_eq!(total, corpus.num_bags());
    }

    #[test]
    fn distant_supervision_matches_and_na() {
        let kg = kg_from(&["miami\tlocated_in\tusa", "miami\tpart_of\tusa", "x\tr\ty"]);
        let corpus = corpus_from(
            &kg,
            &[
                r#"{"sentence": "miami sits in usa", "head": "miami", "tail": "usa", "head_pos": 0, "tail_pos": 3}"#,
                r#"{"sentence": "y near x", "head": "y", "tail": "x", "head_pos": 0, "tail_pos": 2}"#,
            ],
        )
        .unwrap();
        let labels = distant_supervision_labels(&corpus, &kg);
        let na = no_relation_id(&kg);
        let miami = EntityId(kg.entities.id("miami").unwrap());
        let usa = EntityId(kg.entities.id("usa").unwrap());
        // The double-matching pair yields two labeled instances.
        let matched: Vec<_> = labels
            .iter()
            .filter(|l| l.bag == (miami, usa))
            .collect();
        assert_eq!(matched.len(), 2);
        assert!(matched.iter().all(|l| l.relation != na));
        // Labeling soundness.
        for l in &matched {
            assert!(kg.contains_base(&Triple::new(l.bag.0, l.relation, l.bag.1)));
        }
        // Unmatched pair gets the no-relation label.
        let y = EntityId(kg.entities.id("y").unwrap());
        let x = EntityId(kg.entities.id("x").unwrap());
        let un: Vec<_> = labels.iter().filter(|l| l.bag == (y, x)).collect();
        assert_eq!(un.len(), 1);
        assert_eq!(un[0].relation, na);
    }

    #[test]
    fn long_sentence_is_clipped() {
        let kg = kg_from(&["a\tr\tb"]);
        let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let sentence = words.join(" ");
        let record = format!(
            r#"{{"sentence": "{sentence}", "head": "a", "tail": "b", "head_pos": 0, "tail_pos": 5}}"#
        );
        let corpus = corpus_from(&kg, &[&record]).unwrap();
        let bag = corpus.bags.values().next().unwrap();
        assert_eq!(bag.sentences[0].tokens.len(), 120);
    }
}
