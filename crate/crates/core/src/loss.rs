//! Training objective: cross entropy plus Gaussian-similarity truncated
//! smoothing on every class stage, weighted boundary regression on every
//! boundary stage.

use crate::config::LossConfig;
use crate::error::{DestError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Clip applied to boundary probabilities before taking logs.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTarget {
    /// 1 at the first frame of every segment after the first.
    pub indicator: Vec<f64>,
    /// `T / Σ P_b`; `None` without boundaries.
    pub positive_weight: Option<f64>,
}

impl BoundaryTarget {
    pub fn from_labels(labels: &[usize]) -> Self {
        let indicator: Vec<f64> = (0..labels.len())
            .map(|t| if t > 0 && labels[t] != labels[t - 1] { 1.0 } else { 0.0 })
            .collect();
        let n: f64 = indicator.iter().sum();
        let positive_weight = (n > 0.0).then(|| labels.len() as f64 / n);
        BoundaryTarget {
            indicator,
            positive_weight,
        }
    }

    pub fn boundary_count(&self) -> usize {
        self.indicator.iter().filter(|&&p| p > 0.0).count()
    }
}

/// Mean over frames of `−log Y_c[label_t, t]`, from log-probabilities `C_o×T`.
pub fn ce_loss(tape: &mut Tape, log_probs: Var, labels: &[usize]) -> Result<Var> {
    let (c, t) = matrix_dims(tape, log_probs, "class log-probabilities")?;
    if labels.len() != t {
        return Err(DestError::Data(format!(
            "{} labels for {t} predicted frames",
            labels.len()
        )));
    }
    let mut onehot = vec![0.0; c * t];
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(DestError::Data(format!(
                "label {l} at frame {i} out of range for {c} classes"
            )));
        }
        onehot[l * t + i] = 1.0;
    }
    let mask = tape.constant(&[c, t], onehot)?;
    let picked = tape.mul(log_probs, mask)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / t as f64))
}

/// `exp(−‖f_t − f_{t−1}‖² / 2σ²)` for `t = 1..T`, from `F×T` features.
pub fn similarity_weights(features: &Tensor, sigma: f64) -> Result<Vec<f64>> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(DestError::Dimension(format!(
            "similarity features must be F×T, got {s:?}"
        )));
    }
    let (f, t) = (s[0], s[1]);
    let d = features.data();
    Ok((1..t)
        .map(|ti| {
            let dist: f64 = (0..f)
                .map(|i| {
                    let x = d[i * t + ti] - d[i * t + ti - 1];
                    x * x
                })
                .sum();
            (-dist / (2.0 * sigma * sigma)).exp()
        })
        .collect())
}

/// Per-frame flattened coordinates of a `C×T×V` sequence as `(C·V)×T`.
pub fn frame_features(coords: &Tensor) -> Result<Tensor> {
    let s = coords.shape();
    if s.len() != 3 {
        return Err(DestError::Dimension(format!(
            "expected C×T×V coordinates, got {s:?}"
        )));
    }
    let (c, t, v) = (s[0], s[1], s[2]);
    let src = coords.data();
    let mut out = vec![0.0; c * v * t];
    for ci in 0..c {
        for ti in 0..t {
            for vi in 0..v {
                out[(ci * v + vi) * t + ti] = src[(ci * t + ti) * v + vi];
            }
        }
    }
    Tensor::new(vec![c * v, t], out)
}

/// `(1/(T·C_o)) Σ_{t>0,c} w_t · min(|Δ|, trunc)²` with
/// `Δ = log Y[c,t] − sg(log Y[c,t−1])`.
pub fn gs_tmse_loss(tape: &mut Tape, log_probs: Var, weights: &[f64], trunc: f64) -> Result<Var> {
    gs_tmse_against(tape, log_probs, log_probs, weights, trunc)
}

/// As [`gs_tmse_loss`], with the `t−1` operand taken from `reference`,
/// which never receives gradient. Passing a frozen copy of the
/// log-probabilities makes the objective an ordinary function for
/// finite-difference checks.
pub fn gs_tmse_against(tape: &mut Tape, log_probs: Var, reference: Var, weights: &[f64], trunc: f64) -> Result<Var> {
    let (c, t) = matrix_dims(tape, log_probs, "class log-probabilities")?;
    if tape.shape(reference) != [c, t] {
        return Err(DestError::Dimension(format!(
            "reference shape {:?} differs from [{c}, {t}]",
            tape.shape(reference)
        )));
    }
    if weights.len() + 1 != t {
        return Err(DestError::Dimension(format!(
            "{} similarity weights for {t} frames",
            weights.len()
        )));
    }
    if t < 2 {
        return tape.constant(&[1], vec![0.0]);
    }
    let cur = tape.slice(log_probs, 1, 1, t - 1)?;
    let prev = tape.slice(reference, 1, 0, t - 1)?;
    let prev = tape.detach(prev);
    let d = tape.sub(cur, prev)?;
    let sq = tape.mul(d, d)?;
    let sq = tape.clamp(sq, -1.0, trunc * trunc);
    let w: Vec<f64> = (0..c).flat_map(|_| weights.iter().copied()).collect();
    let w = tape.constant(&[c, t - 1], w)?;
    let weighted = tape.mul(sq, w)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, 1.0 / (t * c) as f64))
}

/// `−(1/T) Σ_t [w_p P_b log Y_b + (1−P_b) log(1−Y_b)]` on a `1×T` input.
pub fn brb_loss(tape: &mut Tape, y_b: Var, target: &BoundaryTarget) -> Result<Var> {
    let (rows, t) = matrix_dims(tape, y_b, "boundary probabilities")?;
    if rows != 1 || target.indicator.len() != t {
        return Err(DestError::Dimension(format!(
            "boundary target of length {} for prediction shape [{rows}, {t}]",
            target.indicator.len()
        )));
    }
    let wp = target.positive_weight.unwrap_or(0.0);
    let y = tape.clamp(y_b, PROB_CLIP, 1.0 - PROB_CLIP);
    let log_y = tape.log(y);
    let neg = tape.scale(y, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let log_1my = tape.log(one_minus);
    let pos_w = tape.constant(&[1, t], target.indicator.iter().map(|p| wp * p).collect())?;
    let neg_w = tape.constant(&[1, t], target.indicator.iter().map(|p| 1.0 - p).collect())?;
    let a = tape.mul(log_y, pos_w)?;
    let b = tape.mul(log_1my, neg_w)?;
    let ab = tape.add(a, b)?;
    let s = tape.sum(ab);
    Ok(tape.scale(s, -1.0 / t as f64))
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: f64,
    pub gs_tmse: f64,
    pub brb: f64,
}

/// `Σ_stages (ce + gs) + γ Σ_stages brb`.
pub fn total_loss(
    tape: &mut Tape,
    class_log_probs: &[Var],
    boundary_probs: &[Var],
    labels: &[usize],
    similarity: &[f64],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    total_loss_against(tape, class_log_probs, boundary_probs, labels, similarity, cfg, None)
}

/// [`total_loss`] with optional frozen smoothing references, one per class
/// stage (see [`gs_tmse_against`]).
pub fn total_loss_against(
    tape: &mut Tape,
    class_log_probs: &[Var],
    boundary_probs: &[Var],
    labels: &[usize],
    similarity: &[f64],
    cfg: &LossConfig,
    references: Option<&[Tensor]>,
) -> Result<LossTerms> {
    if class_log_probs.is_empty() || boundary_probs.is_empty() {
        return Err(DestError::Config("loss needs at least one stage of each branch".into()));
    }
    if let Some(r) = references {
        if r.len() != class_log_probs.len() {
            return Err(DestError::Dimension(format!(
                "{} smoothing references for {} class stages",
                r.len(),
                class_log_probs.len()
            )));
        }
    }
    let target = BoundaryTarget::from_labels(labels);
    let mut terms = Vec::new();
    let (mut ce_sum, mut gs_sum, mut brb_sum) = (0.0, 0.0, 0.0);
    for (i, &lp) in class_log_probs.iter().enumerate() {
        let ce = ce_loss(tape, lp, labels)?;
        let reference = match references {
            Some(r) => tape.constant(r[i].shape(), r[i].data().to_vec())?,
            None => lp,
        };
        let gs = gs_tmse_against(tape, lp, reference, similarity, cfg.gs_trunc)?;
        ce_sum += tape.scalar(ce);
        gs_sum += tape.scalar(gs);
        terms.push(ce);
        terms.push(gs);
    }
    for &yb in boundary_probs {
        let b = brb_loss(tape, yb, &target)?;
        brb_sum += tape.scalar(b);
        terms.push(tape.scale(b, cfg.gamma));
    }
    let mut total = terms[0];
    for &x in &terms[1..] {
        total = tape.add(total, x)?;
    }
    Ok(LossTerms {
        total,
        ce: ce_sum,
        gs_tmse: gs_sum,
        brb: brb_sum,
    })
}

fn matrix_dims(tape: &Tape, v: Var, what: &str) -> Result<(usize, usize)> {
    match *tape.shape(v) {
        [r, c] => Ok((r, c)),
        ref s => Err(DestError::Dimension(format!("{what} must be 2-D, got {s:?}"))),
    }
}
