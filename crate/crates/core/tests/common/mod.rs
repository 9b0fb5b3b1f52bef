//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chargenet::data::{CaseRecord, ChargeGroup, ChargeKnowledge, KnowledgeTree};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    let mut m = a.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// `D^{-1/2} (A + I) D^{-1/2}` computed densely.
pub fn dense_normalize(n: usize, a: &[f64]) -> Vec<f64> {
    let mut at = a.to_vec();
    for i in 0..n {
        at[i * n + i] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| at[i * n + j]).sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = at[i * n + j] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    out
}

/// Window counts by explicit enumeration of every window of every document.
pub struct NaiveCounts {
    pub total: u64,
    pub words: BTreeMap<usize, u64>,
    pub pairs: BTreeMap<(usize, usize), u64>,
}

pub fn naive_counts(corpus: &[Vec<usize>], w: usize) -> NaiveCounts {
    let mut out = NaiveCounts {
        total: 0,
        words: BTreeMap::new(),
        pairs: BTreeMap::new(),
    };
    for doc in corpus.iter().filter(|d| !d.is_empty()) {
        let windows: Vec<&[usize]> = if doc.len() <= w { vec![&doc[..]] } else { doc.windows(w).collect() };
        for win in windows {
            out.total += 1;
            let set: BTreeSet<usize> = win.iter().copied().collect();
            for &i in &set {
                *out.words.entry(i).or_default() += 1;
                for &j in &set {
                    if i < j {
                        *out.pairs.entry((i, j)).or_default() += 1;
                    }
                }
            }
        }
    }
    out
}

pub fn naive_pmi(c: &NaiveCounts, i: usize, j: usize) -> f64 {
    let key = (i.min(j), i.max(j));
    let nij = *c.pairs.get(&key).unwrap_or(&0) as f64;
    if nij == 0.0 {
        return 0.0;
    }
    let t = c.total as f64;
    let pi = c.words[&i] as f64 / t;
    let pj = c.words[&j] as f64 / t;
    ((nij / t) / (pi * pj)).ln().max(0.0)
}

/// Accuracy, macro recall, macro F1, micro F1 from a per-class tally.
pub fn tally_metrics(golds: &[usize], preds: &[usize], m: usize) -> [f64; 4] {
    let n = golds.len();
    let correct = golds.iter().zip(preds).filter(|(g, p)| g == p).count();
    let (mut rec_sum, mut f1_sum, mut active) = (0.0, 0.0, 0usize);
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for c in 0..m {
        let mut tp = 0;
        let mut fp = 0;
        let mut fneg = 0;
        for k in 0..n {
            match (golds[k] == c, preds[k] == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        if tp + fp + fneg == 0 {
            continue;
        }
        active += 1;
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        rec_sum += r;
        f1_sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let mp = tp_all as f64 / (tp_all + fp_all) as f64;
    let mr = tp_all as f64 / (tp_all + fn_all) as f64;
    let micro = if mp + mr == 0.0 { 0.0 } else { 2.0 * mp * mr / (mp + mr) };
    [correct as f64 / n as f64, rec_sum / active as f64, f1_sum / active as f64, micro]
}

/// A knowledge tree with `m` charges in one group, marker word `mark{k}`.
pub fn small_tree(m: usize) -> KnowledgeTree {
    let charges = (0..m)
        .map(|k| ChargeKnowledge {
            name: format!("charge{k}"),
            object_elements: "public order and property".into(),
            objective_elements: format!("an act of mark{k} against another"),
            subject_elements: "a responsible adult".into(),
            subjective_elements: format!("intent to mark{k}"),
        })
        .collect();
    KnowledgeTree {
        groups: vec![ChargeGroup {
            name: "test group".into(),
            charges,
        }],
    }
}

pub fn small_cases(m: usize, per_charge: usize) -> Vec<CaseRecord> {
    (0..m)
        .flat_map(|k| {
            (0..per_charge).map(move |i| {
                CaseRecord::new(format!("the accused mark{k} someone near place{i} at night"), format!("charge{k}"))
            })
        })
        .collect()
}
