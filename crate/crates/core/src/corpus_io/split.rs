use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance};
use crate::error::{NatError, Result};
use crate::rng::substream;

/// One requested partition: a name, a document count and whether its gold
/// labels stay visible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub name: String,
    pub size: usize,
    #[serde(default = "yes")]
    pub labeled: bool,
}

fn yes() -> bool {
    true
}

impl PartitionSpec {
    pub fn labeled(name: impl Into<String>, size: usize) -> Self {
        PartitionSpec {
            name: name.into(),
            size,
            labeled: true,
        }
    }

    pub fn unlabeled(name: impl Into<String>, size: usize) -> Self {
        PartitionSpec {
            name: name.into(),
            size,
            labeled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub name: String,
    pub corpus: Corpus,
    /// Gold labels of an unlabeled partition, kept for scoring weak labels.
    pub sealed: Option<Corpus>,
}

/// Disjoint seeded partitions; each partition is ordered by document id.
pub fn split_corpus(corpus: &Corpus, sizes: &[PartitionSpec], seed: u64) -> Result<Vec<Partition>> {
    let requested: usize = sizes.iter().map(|s| s.size).sum();
    if requested > corpus.len() {
        return Err(NatError::OverSubscribed {
            requested,
            available: corpus.len(),
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut substream(seed, "split"));
    let mut cursor = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for spec in sizes {
        let mut picked: Vec<usize> = order[cursor..cursor + spec.size].to_vec();
        cursor += spec.size;
        picked.sort_by(|&a, &b| corpus.documents[a].id.cmp(&corpus.documents[b].id));
        let part = Corpus {
            schema: corpus.schema.clone(),
            provenance: corpus.provenance.clone(),
            documents: picked.iter().map(|&i| corpus.documents[i].clone()).collect(),
        };
        out.push(if spec.labeled {
            Partition {
                name: spec.name.clone(),
                corpus: part,
                sealed: None,
            }
        } else {
            let sealed = Corpus {
                provenance: Provenance::Human,
                ..part.clone()
            };
            Partition {
                name: spec.name.clone(),
                corpus: part.stripped(),
                sealed: Some(sealed),
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus_io::{generate_mini_invoices, MiniInvoiceConfig};

    fn corpus(n: usize) -> Corpus {
        generate_mini_invoices(
            &MiniInvoiceConfig {
                n_documents: n,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn cord_like_split_matches_requested_sizes() {
        let c = corpus(700);
        let parts = split_corpus(
            &c,
            &[
                PartitionSpec::labeled("train", 500),
                PartitionSpec::labeled("test", 100),
                PartitionSpec::unlabeled("unlabeled", 100),
            ],
            1,
        )
        .unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.corpus.len()).collect();
        assert_eq!(sizes, [500, 100, 100]);
        let mut seen = BTreeSet::new();
        for p in &parts {
            for d in &p.corpus.documents {
                assert!(seen.insert(d.id.clone()), "duplicate {}", d.id);
            }
        }
        let u = &parts[2];
        assert!(u.corpus.documents.iter().all(|d| d.gold_spans.is_empty()));
        assert_eq!(u.corpus.provenance, Provenance::Unlabeled);
        let sealed = u.sealed.as_ref().unwrap();
        assert!(sealed.documents.iter().all(|d| d.is_labeled()));
        assert!(u.corpus.validate().is_empty());
    }

    #[test]
    fn full_split_covers_corpus_and_is_deterministic() {
        let c = corpus(30);
        let spec = [PartitionSpec::labeled("a", 10), PartitionSpec::labeled("b", 20)];
        let parts = split_corpus(&c, &spec, 9).unwrap();
        let mut ids: Vec<String> = parts
            .iter()
            .flat_map(|p| p.corpus.documents.iter().map(|d| d.id.clone()))
            .collect();
        ids.sort();
        let mut all: Vec<String> = c.documents.iter().map(|d| d.id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
        assert_eq!(split_corpus(&c, &spec, 9).unwrap(), parts);
        assert_ne!(split_corpus(&c, &spec, 10).unwrap(), parts);
    }

    #[test]
    fn oversubscription_is_rejected() {
        let c = corpus(5);
        let err = split_corpus(&c, &[PartitionSpec::labeled("a", 6)], 0).unwrap_err();
        assert!(matches!(err, NatError::OverSubscribed { requested: 6, available: 5 }));
    }
}
