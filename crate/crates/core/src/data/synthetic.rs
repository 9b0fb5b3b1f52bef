//! Seeded generator for confusable-charge corpora.
//!
//! Charges in one group share a background vocabulary and differ only in a
//! few discriminative tokens, which also appear in their schema texts.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CaseRecord, ChargeGroup, ChargeKnowledge, KnowledgeTree};
use crate::error::{Error, Result};

fn default_max_disc() -> usize {
    3
}

fn default_presence() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub charges_per_group: usize,
    /// Background tokens per group.
    pub background_vocab: usize,
    pub disc_tokens_per_charge: usize,
    /// Upper bound `k` on discriminative tokens drawn per fact.
    #[serde(default = "default_max_disc")]
    pub max_disc_per_fact: usize,
    /// Inclusive `[min, max]` fact length in tokens.
    pub fact_len: (usize, usize),
    pub examples_per_charge: usize,
    pub seed: u64,
    /// Probability that each drawn discriminative token is kept in the fact.
    /// At least one always survives.
    #[serde(default = "default_presence")]
    pub disc_presence: f64,
    /// Explicit discriminative tokens, one list per charge in tree order.
    /// Generated names are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc_tokens: Option<Vec<Vec<String>>>,
}

impl SyntheticSpec {
    pub fn new(groups: usize, charges_per_group: usize, examples_per_charge: usize, seed: u64) -> Self {
        SyntheticSpec {
            groups,
            charges_per_group,
            background_vocab: 40,
            disc_tokens_per_charge: 3,
            max_disc_per_fact: 3,
            fact_len: (20, 40),
            examples_per_charge,
            seed,
            disc_presence: 1.0,
            disc_tokens: None,
        }
    }

    pub fn num_charges(&self) -> usize {
        self.groups * self.charges_per_group
    }

    fn spec_err(msg: impl Into<String>) -> Error {
        Error::Config(format!("synthetic spec: {}", msg.into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.charges_per_group == 0 {
            return Err(Self::spec_err("need at least one group and one charge"));
        }
        if self.background_vocab == 0 || self.examples_per_charge == 0 {
            return Err(Self::spec_err("background vocabulary and examples per charge must be positive"));
        }
        if self.disc_tokens_per_charge == 0 || self.max_disc_per_fact == 0 {
            return Err(Self::spec_err("discriminative token counts must be positive"));
        }
        let (lo, hi) = self.fact_len;
        if lo == 0 || lo > hi || lo < self.max_disc_per_fact.min(self.disc_tokens_per_charge) {
            return Err(Self::spec_err(format!("invalid fact length range {lo}..={hi}")));
        }
        if !(self.disc_presence > 0.0 && self.disc_presence <= 1.0) {
            return Err(Self::spec_err("disc_presence must lie in (0, 1]"));
        }
        if let Some(sets) = &self.disc_tokens {
            if sets.len() != self.num_charges() {
                return Err(Self::spec_err(format!(
                    "{} discriminative token lists for {} charges",
                    sets.len(),
                    self.num_charges()
                )));
            }
            let mut seen = HashSet::new();
            for set in sets {
                if set.is_empty() {
                    return Err(Self::spec_err("empty discriminative token list"));
                }
                for tok in set {
                    if tok.split_whitespace().count() != 1 || tok.to_lowercase() != *tok {
                        return Err(Self::spec_err(format!("{tok:?} is not a single lowercase token")));
                    }
                    if !seen.insert(tok.as_str()) {
                        return Err(Self::spec_err(format!("discriminative token {tok:?} is shared between charges")));
                    }
                }
            }
        }
        Ok(())
    }

    fn disc_sets(&self) -> Vec<Vec<String>> {
        match &self.disc_tokens {
            Some(sets) => sets.clone(),
            None => (0..self.groups)
                .flat_map(|g| {
                    (0..self.charges_per_group).map(move |c| {
                        (0..self.disc_tokens_per_charge)
                            .map(|j| format!("kw{g}x{c}x{j}"))
                            .collect()
                    })
                })
                .collect(),
        }
    }
}

/// Builds a knowledge tree and a balanced case list. Records are grouped by
/// charge in tree order; identical specs give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(KnowledgeTree, Vec<CaseRecord>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let disc = spec.disc_sets();
    let mut groups = Vec::with_capacity(spec.groups);
    let mut records = Vec::with_capacity(spec.num_charges() * spec.examples_per_charge);

    for g in 0..spec.groups {
        let background: Vec<String> = (0..spec.background_vocab).map(|k| format!("bg{g}x{k}")).collect();
        let shared = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
            (0..n).map(|_| background.choose(rng).unwrap().clone()).collect()
        };
        let object = shared(&mut rng, 6).join(" ");
        let subject = shared(&mut rng, 6).join(" ");
        let mut charges = Vec::with_capacity(spec.charges_per_group);

        for c in 0..spec.charges_per_group {
            let name = format!("charge{g}x{c}");
            let own = &disc[g * spec.charges_per_group + c];
            let half = own.len().div_ceil(2);
            let mut objective = shared(&mut rng, 3);
            objective.extend(own[..half].iter().cloned());
            let mut subjective = shared(&mut rng, 3);
            subjective.extend(own[half..].iter().cloned());
            charges.push(ChargeKnowledge {
                name: name.clone(),
                object_elements: object.clone(),
                objective_elements: objective.join(" "),
                subject_elements: subject.clone(),
                subjective_elements: subjective.join(" "),
            });

            let k_max = spec.max_disc_per_fact.min(own.len());
            for e in 0..spec.examples_per_charge {
                let len = rng.gen_range(spec.fact_len.0..=spec.fact_len.1);
                let drawn = rng.gen_range(1..=k_max);
                let mut picks: Vec<&String> = own.choose_multiple(&mut rng, drawn).collect();
                let keep_first = rng.gen_range(0..picks.len());
                let mut idx = 0;
                picks.retain(|_| {
                    let keep = idx == keep_first || rng.gen_bool(spec.disc_presence);
                    idx += 1;
                    keep
                });
                let mut tokens: Vec<String> = picks.into_iter().cloned().collect();
                let fill = len.saturating_sub(tokens.len());
                tokens.extend(shared(&mut rng, fill));
                tokens.shuffle(&mut rng);
                records.push(CaseRecord {
                    id: Some(format!("{name}-{e}")),
                    fact: tokens.join(" "),
                    charge: name.clone(),
                });
            }
        }
        groups.push(ChargeGroup {
            name: format!("group{g}"),
            charges,
        });
    }
    let tree = KnowledgeTree { groups };
    tree.validate()?;
    Ok((tree, records))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::data::tokenize;

    #[test]
    fn facts_carry_only_their_own_markers() {
        let mut spec = SyntheticSpec::new(1, 2, 30, 5);
        spec.disc_tokens_per_charge = 3;
        let (tree, recs) = generate_synthetic(&spec).unwrap();
        let sets = spec.disc_sets();
        for r in &recs {
            let gold = tree.charge_index(&r.charge).unwrap();
            let toks = tokenize(&r.fact);
            assert!(toks.iter().any(|t| sets[gold].contains(t)));
            assert!(!toks.iter().any(|t| sets[1 - gold].contains(t)));
            assert!((20..=40).contains(&toks.len()));
        }
        for ((_, charge), set) in tree.charges().zip(&sets) {
            let schema_tokens: Vec<String> = tokenize(&charge.objective_elements)
                .into_iter()
                .chain(tokenize(&charge.subjective_elements))
                .collect();
            assert!(set.iter().all(|t| schema_tokens.contains(t)));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SyntheticSpec::new(2, 2, 10, 9);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().1, generate_synthetic(&other).unwrap().1);
    }

    #[test]
    fn majority_class_is_chance() {
        let (_, recs) = generate_synthetic(&SyntheticSpec::new(1, 4, 25, 1)).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &recs {
            *counts.entry(&r.charge).or_default() += 1;
        }
        let majority = counts.values().max().unwrap();
        assert_eq!(*majority as f64 / recs.len() as f64, 0.25);
    }

    #[test]
    fn overlapping_markers_rejected() {
        let mut spec = SyntheticSpec::new(1, 2, 5, 0);
        spec.disc_tokens = Some(vec![vec!["a".into(), "b".into()], vec!["b".into()]]);
        let err = generate_synthetic(&spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)) && err.to_string().contains("shared"));
    }

    #[test]
    fn low_presence_keeps_at_least_one_marker() {
        let mut spec = SyntheticSpec::new(1, 3, 40, 2);
        spec.disc_tokens_per_charge = 8;
        spec.max_disc_per_fact = 8;
        spec.disc_presence = 0.3;
        let (tree, recs) = generate_synthetic(&spec).unwrap();
        let sets = spec.disc_sets();
        let mut total = 0;
        for r in &recs {
            let gold = tree.charge_index(&r.charge).unwrap();
            let n = tokenize(&r.fact).iter().filter(|t| sets[gold].contains(t)).count();
            assert!(n >= 1);
            total += n;
        }
        assert!((total as f64 / recs.len() as f64) < 4.0);
    }
}
