//! Case and knowledge file formats, tokenization and dataset splits.

mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Whitespace tokenization with lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// One training example: a fact description and its charge label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub fact: String,
    pub charge: String,
}

impl CaseRecord {
    pub fn new(fact: impl Into<String>, charge: impl Into<String>) -> Self {
        CaseRecord {
            id: None,
            fact: fact.into(),
            charge: charge.into(),
        }
    }
}

/// A charge and its four constitutive-element schemas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeKnowledge {
    pub name: String,
    #[serde(default)]
    pub object_elements: String,
    #[serde(default)]
    pub objective_elements: String,
    #[serde(default)]
    pub subject_elements: String,
    #[serde(default)]
    pub subjective_elements: String,
}

impl ChargeKnowledge {
    /// Schema texts in order K₁ (object), K₂ (objective), K₃ (subject),
    /// K₄ (subjective).
    pub fn schemas(&self) -> [&str; 4] {
        [
            &self.object_elements,
            &self.objective_elements,
            &self.subject_elements,
            &self.subjective_elements,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeGroup {
    pub name: String,
    pub charges: Vec<ChargeKnowledge>,
}

/// Root → groups → charges → schemas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTree {
    pub groups: Vec<ChargeGroup>,
}

const SCHEMA_NAMES: [&str; 4] = [
    "object_elements",
    "objective_elements",
    "subject_elements",
    "subjective_elements",
];

impl KnowledgeTree {
    /// Parses and validates a knowledge file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tree: KnowledgeTree = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Every charge has a group, a unique name and four non-empty schemas.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for group in &self.groups {
            if tokenize(&group.name).is_empty() {
                return Err(Error::Validation("charge group with an empty name".into()));
            }
            for charge in &group.charges {
                if !seen.insert(charge.name.as_str()) {
                    return Err(Error::Validation(format!("duplicate charge name {:?}", charge.name)));
                }
                for (text, field) in charge.schemas().iter().zip(SCHEMA_NAMES) {
                    if tokenize(text).is_empty() {
                        return Err(Error::Validation(format!("charge {:?} is missing {field}", charge.name)));
                    }
                }
            }
        }
        if seen.is_empty() {
            return Err(Error::Validation("knowledge tree has no charges".into()));
        }
        Ok(())
    }

    /// `(group, charge)` pairs in file order; this order defines class ids.
    pub fn charges(&self) -> impl Iterator<Item = (&ChargeGroup, &ChargeKnowledge)> {
        self.groups
            .iter()
            .flat_map(|g| g.charges.iter().map(move |c| (g, c)))
    }

    pub fn num_charges(&self) -> usize {
        self.groups.iter().map(|g| g.charges.len()).sum()
    }

    pub fn charge_names(&self) -> Vec<String> {
        self.charges().map(|(_, c)| c.name.clone()).collect()
    }

    pub fn charge_index(&self, name: &str) -> Option<usize> {
        self.charges().position(|(_, c)| c.name == name)
    }

    /// Every text in the tree: group names and schema texts.
    pub fn texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.groups.iter().map(|g| g.name.as_str()).collect();
        for (_, c) in self.charges() {
            out.extend(c.schemas());
        }
        out
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("tree serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Reads line-delimited JSON case records and checks them against `tree`.
pub fn parse_cases<R: BufRead>(reader: R, tree: &KnowledgeTree) -> Result<Vec<CaseRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::Validation(format!("line {lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaseRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("line {lineno}: malformed record: {e}")))?;
        if tokenize(&rec.fact).is_empty() {
            return Err(Error::Validation(format!("line {lineno}: empty fact")));
        }
        if tree.charge_index(&rec.charge).is_none() {
            return Err(Error::Validation(format!(
                "line {lineno}: charge {:?} is not in the knowledge tree",
                rec.charge
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_cases(path: impl AsRef<Path>, tree: &KnowledgeTree) -> Result<Vec<CaseRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_cases(BufReader::new(file), tree).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_cases<W: Write>(mut out: W, records: &[CaseRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<cases>", e))?;
    }
    Ok(())
}

pub fn save_cases(path: impl AsRef<Path>, records: &[CaseRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_cases(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

/// Seeded shuffle, then `floor(ratio · N)` records each for validation and
/// test; the remainder goes to training.
pub fn split_dataset<T: Clone>(records: &[T], ratios: SplitRatios, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if records.len() < 10 {
        return Err(Error::Usage(format!("need at least 10 records to split, got {}", records.len())));
    }
    let r = [ratios.train, ratios.validation, ratios.test];
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {r:?} must be in [0, 1] and sum to 1")));
    }
    let n = records.len();
    let n_val = (ratios.validation * n as f64).floor() as usize;
    let n_test = (ratios.test * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let n_train = n - n_val - n_test;
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_tree() -> KnowledgeTree {
        let charge = |name: &str| ChargeKnowledge {
            name: name.into(),
            object_elements: "property".into(),
            objective_elements: format!("{name} act"),
            subject_elements: "adult".into(),
            subjective_elements: "intent".into(),
        };
        KnowledgeTree {
            groups: vec![ChargeGroup {
                name: "property crimes".into(),
                charges: vec![charge("theft"), charge("fraud")],
            }],
        }
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("A b  c"), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
        let t = tokenize("  Mixed\tCASE\nwords ");
        assert_eq!(tokenize(&t.join(" ")), t);
    }

    #[test]
    fn parse_valid_and_invalid_lines() {
        let tree = tiny_tree();
        let text = "{\"fact\": \"took a bike\", \"charge\": \"theft\"}\n\n{\"id\": \"7\", \"fact\": \"lied\", \"charge\": \"fraud\"}\n";
        let recs = parse_cases(text.as_bytes(), &tree).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].id.as_deref(), Some("7"));

        let bad = "{\"fact\": \"x\", \"charge\": \"theft\"}\n{\"fact\": \"y\", \"charge\": \"arson\"}\n";
        let err = parse_cases(bad.as_bytes(), &tree).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("arson"), "{err}");

        let empty = "{\"fact\": \"   \", \"charge\": \"theft\"}\n";
        assert!(matches!(parse_cases(empty.as_bytes(), &tree), Err(Error::Validation(_))));
        assert!(matches!(parse_cases("not json\n".as_bytes(), &tree), Err(Error::Validation(_))));
    }

    #[test]
    fn tree_validation() {
        let mut tree = tiny_tree();
        assert!(tree.validate().is_ok());
        tree.groups[0].charges[1].name = "theft".into();
        assert!(tree.validate().unwrap_err().to_string().contains("duplicate"));

        let mut tree = tiny_tree();
        tree.groups[0].charges[0].subject_elements.clear();
        assert!(tree.validate().unwrap_err().to_string().contains("subject_elements"));

        let json = r#"{"groups": [{"name": "g", "charges": [{"name": "c", "object_elements": "a", "objective_elements": "b", "subject_elements": "c"}]}]}"#;
        let parsed: KnowledgeTree = serde_json::from_str(json).unwrap();
        assert!(parsed.validate().unwrap_err().to_string().contains("subjective_elements"));
    }

    #[test]
    fn split_sizes() {
        let recs: Vec<usize> = (0..100).collect();
        let (tr, va, te) = split_dataset(&recs, SplitRatios::default(), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));

        let recs: Vec<usize> = (0..11).collect();
        let (tr, va, te) = split_dataset(&recs, SplitRatios::default(), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (9, 1, 1));

        let a = split_dataset(&recs, SplitRatios::default(), 3).unwrap();
        let b = split_dataset(&recs, SplitRatios::default(), 3).unwrap();
        assert_eq!(a, b);

        assert!(matches!(split_dataset(&recs[..9], SplitRatios::default(), 1), Err(Error::Usage(_))));
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = tiny_tree();
        let mut b = tiny_tree();
        assert_eq!(a.content_hash(), b.content_hash());
        b.groups[0].name.push('!');
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
