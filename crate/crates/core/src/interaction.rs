//! Channel-to-channel cross-attention between a spatial sub-feature and the
//! running temporal features.
//!
//! ```text
//! P = W_C Ŝᵀ + b          (V×T → C_t×T, pointwise over joints)
//! A = softmax_keys(P Hᵀ / τ)   ∈ ℝ^{C_t×C_t}
//! R = A H + H
//! ```
//!
//! Time is the contracted axis. `τ` defaults to `T`, so the logits are
//! time-averaged channel correlations; `√T` saturated the softmax once the
//! residual had grown the features over a few layers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::config::InteractionMode;
use crate::error::{DestError, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct DstiParams {
    pub joints: usize,
    pub channels: usize,
    pub w_c: ParamId,
    pub b_c: ParamId,
    pub mode: InteractionMode,
    /// Fixed temperature; `None` uses `T`.
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct DstiOutput {
    pub r: Var,
    /// `C_t×C_t`, cross-attention mode only.
    pub attention: Option<Var>,
}

impl DstiParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        joints: usize,
        channels: usize,
        mode: InteractionMode,
        tau: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(tau) = tau {
            if !(tau > 0.0) {
                return Err(DestError::Config(format!("tau must be positive, got {tau}")));
            }
        }
        let w_c = store.add(
            format!("{name}.w_c"),
            Tensor::xavier(&[channels, joints], joints, channels, rng),
        );
        let b_c = store.add(format!("{name}.b_c"), Tensor::zeros(&[channels]));
        Ok(DstiParams {
            joints,
            channels,
            w_c,
            b_c,
            mode,
            tau,
        })
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.joints + self.channels
    }

    pub fn macs_per_frame(&self) -> usize {
        let proj = self.channels * self.joints;
        match self.mode {
            InteractionMode::CrossAttention => proj + 2 * self.channels * self.channels,
            InteractionMode::Summation => proj,
        }
    }

    pub fn temperature(&self, frames: usize) -> f64 {
        self.tau.unwrap_or(frames as f64)
    }
}

/// `Ŝ[T×V]`, `H[C_t×T]` → `R[C_t×T]`.
pub fn dsti_forward(tape: &mut Tape, bound: &Bound, params: &DstiParams, s_hat: Var, h: Var) -> Result<DstiOutput> {
    let ss = tape.shape(s_hat).to_vec();
    let hs = tape.shape(h).to_vec();
    if ss.len() != 2 || ss[1] != params.joints {
        return Err(DestError::Dimension(format!(
            "interaction expects a T×{} sub-feature, got {ss:?}",
            params.joints
        )));
    }
    if hs.len() != 2 || hs[0] != params.channels {
        return Err(DestError::Dimension(format!(
            "interaction expects {}×T temporal features, got {hs:?}",
            params.channels
        )));
    }
    if ss[0] != hs[1] {
        return Err(DestError::Dimension(format!(
            "time lengths differ: sub-feature has {} frames, temporal features {}",
            ss[0], hs[1]
        )));
    }
    let st = tape.transpose(s_hat)?;
    let p = tape.matmul(bound.var(params.w_c), st)?;
    let p = tape.add_bias(p, bound.var(params.b_c), 0)?;
    match params.mode {
        InteractionMode::Summation => Ok(DstiOutput {
            r: tape.add(p, h)?,
            attention: None,
        }),
        InteractionMode::CrossAttention => {
            let ht = tape.transpose(h)?;
            let logits = tape.matmul(p, ht)?;
            let logits = tape.scale(logits, 1.0 / params.temperature(hs[1]));
            let a = tape.softmax(logits, 1)?;
            let ah = tape.matmul(a, h)?;
            Ok(DstiOutput {
                r: tape.add(ah, h)?,
                attention: Some(a),
            })
        }
    }
}

pub fn attention_file_name(layer: usize, sequence_id: &str) -> String {
    format!("attn_L{layer}_{sequence_id}.txt")
}

/// Writes a 2-D matrix as space-separated rows (queries). Values use the
/// shortest round-trip decimal form.
pub fn export_attention(dir: &Path, layer: usize, sequence_id: &str, a: &Tensor) -> Result<PathBuf> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(DestError::Dimension(format!(
            "attention export expects a matrix, got {s:?}"
        )));
    }
    fs::create_dir_all(dir).map_err(|e| DestError::io(dir, e))?;
    let path = dir.join(attention_file_name(layer, sequence_id));
    let mut text = String::new();
    for row in a.data().chunks(s[1]) {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| DestError::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| DestError::io(&path, e))?;
    Ok(path)
}
