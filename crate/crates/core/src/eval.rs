//! Frame accuracy, segmental edit score and segmental F1 at IoU thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{DestError, Result};

pub const IOU_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub label: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Intersection over union of inclusive frame intervals.
    pub fn iou(&self, other: &Segment) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        let inter = if hi >= lo { hi - lo + 1 } else { 0 };
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

/// Maximal runs of equal labels, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentList(pub Vec<Segment>);

impl SegmentList {
    pub fn from_frames(labels: &[usize]) -> Self {
        let mut segs: Vec<Segment> = Vec::new();
        for (t, &l) in labels.iter().enumerate() {
            match segs.last_mut() {
                Some(s) if s.label == l => s.end = t,
                _ => segs.push(Segment {
                    label: l,
                    start: t,
                    end: t,
                }),
            }
        }
        SegmentList(segs)
    }

    pub fn to_frames(&self) -> Vec<usize> {
        self.0
            .iter()
            .flat_map(|s| std::iter::repeat(s.label).take(s.len()))
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|s| s.label).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.0.iter()
    }
}

pub fn to_segments(labels: &[usize]) -> SegmentList {
    SegmentList::from_frames(labels)
}

pub fn to_frames(segments: &SegmentList) -> Vec<usize> {
    segments.to_frames()
}

fn check_aligned(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(DestError::Data(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_aligned(pred, gt)?;
    if gt.is_empty() {
        return Ok(100.0);
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn edit_score(pred: &SegmentList, gt: &SegmentList) -> f64 {
    let norm = pred.len().max(gt.len());
    if norm == 0 {
        return 100.0;
    }
    let d = levenshtein(&pred.labels(), &gt.labels());
    100.0 * (1.0 - d as f64 / norm as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn f1(&self) -> f64 {
        let p = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let r = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if p + r == 0.0 {
            0.0
        } else {
            100.0 * 2.0 * p * r / (p + r)
        }
    }

    pub fn merge(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Greedy matching in prediction order against unmatched same-class
/// ground-truth segments. Among eligible candidates the highest IoU wins.
pub fn match_segments(pred: &SegmentList, gt: &SegmentList, tau: f64) -> MatchCounts {
    let mut used = vec![false; gt.len()];
    let mut tp = 0;
    for p in pred.iter() {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(j, g)| !used[*j] && g.label == p.label)
            .map(|(j, g)| (j, p.iou(g)))
            .fold(None, |acc: Option<(usize, f64)>, (j, iou)| match acc {
                Some((_, b)) if b >= iou => acc,
                _ => Some((j, iou)),
            });
        if let Some((j, iou)) = best {
            if iou >= tau {
                used[j] = true;
                tp += 1;
            }
        }
    }
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
    }
}

pub fn f1_at_iou(pred: &SegmentList, gt: &SegmentList, tau: f64) -> f64 {
    match_segments(pred, gt, tau).f1()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub edit: f64,
    #[serde(rename = "f1@10")]
    pub f1_10: f64,
    #[serde(rename = "f1@25")]
    pub f1_25: f64,
    #[serde(rename = "f1@50")]
    pub f1_50: f64,
    /// Ground-truth frame count per class id.
    #[serde(skip)]
    pub class_frames: Vec<usize>,
    /// Correctly predicted frame count per class id.
    #[serde(skip)]
    pub class_hits: Vec<usize>,
}

impl EvalReport {
    pub fn f1(&self) -> [(f64, f64); 3] {
        [
            (IOU_THRESHOLDS[0], self.f1_10),
            (IOU_THRESHOLDS[1], self.f1_25),
            (IOU_THRESHOLDS[2], self.f1_50),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Corpus-level aggregation: accuracy over all frames, edit averaged per
/// sequence, F1 from pooled match counts.
#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    frames: usize,
    hits: usize,
    edit_sum: f64,
    sequences: usize,
    counts: [MatchCounts; 3],
    class_frames: Vec<usize>,
    class_hits: Vec<usize>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        check_aligned(pred, gt)?;
        for (&p, &g) in pred.iter().zip(gt) {
            if g >= self.class_frames.len() {
                self.class_frames.resize(g + 1, 0);
                self.class_hits.resize(g + 1, 0);
            }
            self.class_frames[g] += 1;
            if p == g {
                self.class_hits[g] += 1;
                self.hits += 1;
            }
        }
        self.frames += gt.len();
        let ps = to_segments(pred);
        let gs = to_segments(gt);
        self.edit_sum += edit_score(&ps, &gs);
        for (c, &tau) in self.counts.iter_mut().zip(&IOU_THRESHOLDS) {
            c.merge(match_segments(&ps, &gs, tau));
        }
        self.sequences += 1;
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let acc = if self.frames == 0 {
            0.0
        } else {
            100.0 * self.hits as f64 / self.frames as f64
        };
        let edit = if self.sequences == 0 {
            0.0
        } else {
            self.edit_sum / self.sequences as f64
        };
        EvalReport {
            acc,
            edit,
            f1_10: self.counts[0].f1(),
            f1_25: self.counts[1].f1(),
            f1_50: self.counts[2].f1(),
            class_frames: self.class_frames.clone(),
            class_hits: self.class_hits.clone(),
        }
    }
}

/// All metrics for one aligned pair.
pub fn evaluate(pred: &[usize], gt: &[usize]) -> Result<EvalReport> {
    let mut e = Evaluator::new();
    e.add(pred, gt)?;
    Ok(e.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_of_small_sequence() {
        let s = to_segments(&[0, 0, 1]);
        assert_eq!(
            s.0,
            vec![
                Segment { label: 0, start: 0, end: 1 },
                Segment { label: 1, start: 2, end: 2 }
            ]
        );
        assert_eq!(to_segments(&[3; 7]).len(), 1);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(frame_accuracy(&[1, 2], &[1, 2]).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[1, 1], &[2, 2]).unwrap(), 0.0);
        let gt = [0; 10];
        let pred = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert_eq!(frame_accuracy(&pred, &gt).unwrap(), 50.0);
        assert!(matches!(frame_accuracy(&[1], &[1, 2]), Err(DestError::Data(_))));
    }

    #[test]
    fn edit_deletion() {
        let p = to_segments(&[0, 1, 0]);
        let g = to_segments(&[0, 0, 1]);
        assert!((edit_score(&p, &g) - 100.0 * (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn half_overlap_counts_at_half_iou() {
        let g = to_segments(&[0, 0, 0, 0]);
        let p = SegmentList(vec![Segment { label: 0, start: 0, end: 1 }]);
        assert_eq!(p.0[0].iou(&g.0[0]), 0.5);
        assert_eq!(f1_at_iou(&p, &g, 0.5), 100.0);
    }

    #[test]
    fn class_gate() {
        let p = to_segments(&[1, 1, 1]);
        let g = to_segments(&[0, 0, 0]);
        assert_eq!(f1_at_iou(&p, &g, 0.1), 0.0);
    }

    #[test]
    fn wrong_constant_prediction() {
        let gt = [0, 0, 1, 1, 2, 2];
        let r = evaluate(&[3; 6], &gt).unwrap();
        assert_eq!(r.acc, 0.0);
        assert!((r.edit - 0.0).abs() < 1e-12);
        assert_eq!((r.f1_10, r.f1_25, r.f1_50), (0.0, 0.0, 0.0));
    }

    #[test]
    fn report_json_keys() {
        let r = evaluate(&[0, 1], &[0, 1]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["acc", "edit", "f1@10", "f1@25", "f1@50"]);
    }
}
