use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

/// Runs as (label, start, end_exclusive), found by scanning for changes.
pub fn naive_runs(x: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for t in 1..=x.len() {
        if t == x.len() || x[t] != x[start] {
            runs.push((x[start], start, t));
            start = t;
        }
    }
    runs
}

pub fn lev_rec(a: &[usize], b: &[usize], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let cost = usize::from(a[a.len() - 1] != b[b.len() - 1]);
    let d = (lev_rec(&a[..a.len() - 1], b, memo) + 1)
        .min(lev_rec(a, &b[..b.len() - 1], memo) + 1)
        .min(lev_rec(&a[..a.len() - 1], &b[..b.len() - 1], memo) + cost);
    memo.insert((a.len(), b.len()), d);
    d
}

pub fn naive_edit(pred: &[usize], gt: &[usize]) -> f64 {
    let p: Vec<usize> = naive_runs(pred).iter().map(|r| r.0).collect();
    let g: Vec<usize> = naive_runs(gt).iter().map(|r| r.0).collect();
    let d = lev_rec(&p, &g, &mut HashMap::new());
    100.0 * (1.0 - d as f64 / p.len().max(g.len()) as f64)
}

pub fn naive_f1(pred: &[usize], gt: &[usize], tau: f64) -> f64 {
    let p = naive_runs(pred);
    let g = naive_runs(gt);
    let frames = |r: &(usize, usize, usize)| (r.1..r.2).collect::<BTreeSet<usize>>();
    let mut used = vec![false; g.len()];
    let mut tp = 0usize;
    for pr in &p {
        let mut best: Option<(usize, f64)> = None;
        for (j, gr) in g.iter().enumerate() {
            if used[j] || gr.0 != pr.0 {
                continue;
            }
            let (a, b) = (frames(pr), frames(gr));
            let iou = a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
            if best.map_or(true, |(_, v)| iou > v) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= tau {
                used[j] = true;
                tp += 1;
            }
        }
    }
    let (fp, fn_) = (p.len() - tp, g.len() - tp);
    let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if prec + rec == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * prec * rec / (prec + rec)
    }
}

/// Label sequences built from runs so segments are realistic.
pub fn labels(len: usize) -> impl Strategy<Value = Vec<usize>> {
    (1usize..=6).prop_flat_map(move |classes| {
        prop::collection::vec((0..classes, 1usize..40), 1..30).prop_map(move |runs| {
            let mut out: Vec<usize> = runs.into_iter().flat_map(|(c, n)| std::iter::repeat(c).take(n)).collect();
            out.truncate(len);
            out
        })
    })
}

pub fn pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=200).prop_flat_map(|t| {
        (labels(t), labels(t), any::<u64>()).prop_map(|(mut a, mut b, seed)| {
            let n = a.len().min(b.len());
            a.truncate(n);
            b.truncate(n);
            // Occasionally make pred a light corruption of gt so matches happen.
            if seed % 3 == 0 {
                a = b.clone();
                for i in (0..n).step_by(7 + (seed as usize % 11)) {
                    a[i] = (a[i] + 1) % 6;
                }
            }
            (a, b)
        })
    })
}
