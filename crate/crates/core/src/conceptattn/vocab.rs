use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdit::EmbeddingTable;
use crate::numerics::{Matrix, Real};

/// Ordered single-token concepts, some of them flagged as background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct ConceptVocabulary {
    concepts: Vec<String>,
    background: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    concepts: Vec<String>,
    #[serde(default)]
    background: Vec<String>,
}

impl TryFrom<VocabularyRepr> for ConceptVocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        ConceptVocabulary::new(r.concepts, &r.background)
    }
}

impl From<ConceptVocabulary> for VocabularyRepr {
    fn from(v: ConceptVocabulary) -> Self {
        VocabularyRepr {
            background: v.background_concepts().map(str::to_string).collect(),
            concepts: v.concepts,
        }
    }
}

impl ConceptVocabulary {
    /// `background` must be a subset of `concepts`.
    pub fn new<S: AsRef<str>>(concepts: Vec<String>, background: &[S]) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Empty("concept vocabulary"));
        }
        for (i, c) in concepts.iter().enumerate() {
            if concepts[..i].contains(c) {
                return Err(Error::Invalid(format!("duplicate concept {c:?}")));
            }
        }
        let mut flags = vec![false; concepts.len()];
        for b in background {
            let b = b.as_ref();
            let i = concepts.iter().position(|c| c == b).ok_or_else(|| {
                Error::Invalid(format!("background concept {b:?} is not in the vocabulary"))
            })?;
            flags[i] = true;
        }
        Ok(Self {
            concepts,
            background: flags,
        })
    }

    pub fn from_strs(concepts: &[&str], background: &[&str]) -> Result<Self> {
        Self::new(concepts.iter().map(|s| s.to_string()).collect(), background)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn index_of(&self, concept: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == concept)
    }

    pub fn is_background(&self, i: usize) -> bool {
        self.background[i]
    }

    pub fn background_concepts(&self) -> impl Iterator<Item = &str> {
        self.concepts
            .iter()
            .zip(&self.background)
            .filter(|(_, &b)| b)
            .map(|(c, _)| c.as_str())
    }

    /// Reorders concepts: entry `i` of the result is entry `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len()
            || perm
                .iter()
                .any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Invalid(format!(
                "{perm:?} is not a permutation of 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            concepts: perm.iter().map(|&i| self.concepts[i].clone()).collect(),
            background: perm.iter().map(|&i| self.background[i]).collect(),
        })
    }
}

/// Concept embeddings `c` entering layer `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptState<T = f64> {
    pub c: Matrix<T>,
    pub layer: usize,
}

/// `c⁰`: the table rows of the vocabulary, in vocabulary order.
pub fn init_concepts<T: Real>(
    vocab: &ConceptVocabulary,
    table: &EmbeddingTable<T>,
) -> Result<ConceptState<T>> {
    Ok(ConceptState {
        c: table.lookup(vocab.concepts())?,
        layer: 0,
    })
}
