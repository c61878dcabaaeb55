//! Row-decoupled temporal modeling.
//!
//! Input `J` has `D` rows (joints at the first layer, channels afterwards)
//! and every row owns its own weight bank. For the TCN form the per-row
//! dilated convolutions `W_v ∗ J_v` (each `1×T → C_t×T`) are summed over
//! rows and divided by `D`:
//!
//! ```text
//! H = ReLU( (1/D) Σ_v DConv(W_v, J_v) ) + residual(J)
//! ```
//!
//! Stacking the `D` banks as a `C_t×D×C_f` tensor makes the row sum a
//! single convolution call; bank `v` is the slice `[:, v, :]`.
//!
//! The linear-transformer form replaces each row's convolution with
//! `φ(Q_v)(φ(F_v)ᵀ U_v)`, `φ = ELU + 1`, where `Q_v, F_v, U_v ∈ ℝ^{T×C_t}`
//! come from a per-row embedding of `J_v`.
//!
//! The joint-shared baseline is the same TCN layer applied to
//! joint-collapsed channel rows (see [`jwtm_forward`]).

use rand::Rng;

use crate::error::{DestError, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JtmShape {
    pub rows: usize,
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    /// `D == C_t`: the input passes through unchanged.
    Identity,
    /// `D != C_t`: per-row pointwise lift `(1/D) Σ_v P_v J_v`.
    Projection,
    None,
}

#[derive(Clone, Debug)]
pub enum Residual {
    Identity,
    Projection(ParamId),
    None,
}

#[derive(Clone, Debug)]
pub struct TransformerBanks {
    /// `D×C_t` embedding weights and biases.
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    /// `D×C_t×C_t` projections, `D×C_t` biases.
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub f_w: ParamId,
    pub f_b: ParamId,
    pub u_w: ParamId,
    pub u_b: ParamId,
    pub normalized: bool,
}

#[derive(Clone, Debug)]
pub enum JtmKind {
    /// `C_t×D×C_f` stacked per-row kernels.
    Tcn { weight: ParamId, relu: bool },
    Transformer(TransformerBanks),
}

#[derive(Clone, Debug)]
pub struct JtmLayer {
    pub shape: JtmShape,
    pub kind: JtmKind,
    pub residual: Residual,
}

/// Dilation of the `layer`-th (1-based) stacked TCN layer: `2^(l−1)` capped at `T/4`.
pub fn dilation_for(layer: usize, frames: usize) -> usize {
    let cap = (frames / 4).max(1);
    let d = 1usize.checked_shl(layer.saturating_sub(1) as u32).unwrap_or(usize::MAX);
    d.min(cap)
}

fn default_residual(shape: &JtmShape) -> ResidualKind {
    if shape.rows == shape.channels {
        ResidualKind::Identity
    } else {
        ResidualKind::Projection
    }
}

fn make_residual<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    shape: &JtmShape,
    kind: ResidualKind,
    rng: &mut R,
) -> Result<Residual> {
    Ok(match kind {
        ResidualKind::Identity => {
            if shape.rows != shape.channels {
                return Err(DestError::Config(format!(
                    "identity residual needs D == C_t, got D = {} and C_t = {}",
                    shape.rows, shape.channels
                )));
            }
            Residual::Identity
        }
        ResidualKind::Projection => Residual::Projection(store.add(
            format!("{name}.res"),
            Tensor::xavier(&[shape.channels, shape.rows], shape.rows, shape.channels, rng),
        )),
        ResidualKind::None => Residual::None,
    })
}

impl JtmLayer {
    pub fn tcn<R: Rng>(store: &mut ParamStore, name: &str, shape: JtmShape, rng: &mut R) -> Result<Self> {
        Self::tcn_with(store, name, shape, default_residual(&shape), true, rng)
    }

    pub fn tcn_with<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        shape: JtmShape,
        residual: ResidualKind,
        relu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        check_shape(&shape)?;
        let JtmShape {
            rows: d,
            channels: ct,
            kernel: k,
        } = shape;
        let weight = store.add(
            format!("{name}.w"),
            Tensor::xavier(&[ct, d, k], d * k, ct * k, rng),
        );
        let residual = make_residual(store, name, &shape, residual, rng)?;
        Ok(JtmLayer {
            shape,
            kind: JtmKind::Tcn { weight, relu },
            residual,
        })
    }

    pub fn transformer<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        shape: JtmShape,
        normalized: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::transformer_with(store, name, shape, default_residual(&shape), normalized, rng)
    }

    pub fn transformer_with<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        shape: JtmShape,
        residual: ResidualKind,
        normalized: bool,
        rng: &mut R,
    ) -> Result<Self> {
        check_shape(&shape)?;
        let (d, ct) = (shape.rows, shape.channels);
        let mut proj = |tag: &str, rng: &mut R| {
            (
                store.add(format!("{name}.{tag}_w"), Tensor::xavier(&[d, ct, ct], ct, ct, rng)),
                store.add(format!("{name}.{tag}_b"), Tensor::zeros(&[d, ct])),
            )
        };
        let (q_w, q_b) = proj("q", rng);
        let (f_w, f_b) = proj("f", rng);
        let (u_w, u_b) = proj("u", rng);
        let embed_w = store.add(format!("{name}.embed_w"), Tensor::xavier(&[d, ct], 1, ct, rng));
        let embed_b = store.add(format!("{name}.embed_b"), Tensor::zeros(&[d, ct]));
        let residual = make_residual(store, name, &shape, residual, rng)?;
        Ok(JtmLayer {
            shape,
            kind: JtmKind::Transformer(TransformerBanks {
                embed_w,
                embed_b,
                q_w,
                q_b,
                f_w,
                f_b,
                u_w,
                u_b,
                normalized,
            }),
            residual,
        })
    }

    pub fn param_count(&self) -> usize {
        let JtmShape {
            rows: d,
            channels: ct,
            kernel: k,
        } = self.shape;
        let res = match self.residual {
            Residual::Projection(_) => d * ct,
            _ => 0,
        };
        let body = match self.kind {
            JtmKind::Tcn { .. } => d * ct * k,
            JtmKind::Transformer(_) => 2 * d * ct + 3 * d * (ct * ct + ct),
        };
        body + res
    }

    /// Multiply-adds per frame.
    pub fn macs_per_frame(&self) -> usize {
        let JtmShape {
            rows: d,
            channels: ct,
            kernel: k,
        } = self.shape;
        let res = match self.residual {
            Residual::Projection(_) => d * ct,
            _ => 0,
        };
        let body = match self.kind {
            JtmKind::Tcn { .. } => d * ct * k,
            // embedding, three projections, φ(F)ᵀU and φ(Q)·KV
            JtmKind::Transformer(_) => d * (ct + 3 * ct * ct + 2 * ct * ct),
        };
        body + res
    }
}

fn check_shape(shape: &JtmShape) -> Result<()> {
    if shape.rows == 0 || shape.channels == 0 {
        return Err(DestError::Config("JTM rows and channels must be positive".into()));
    }
    if shape.kernel % 2 == 0 {
        return Err(DestError::Config(format!(
            "temporal kernel size must be odd, got {}",
            shape.kernel
        )));
    }
    Ok(())
}

fn check_rows(tape: &Tape, layer: &JtmLayer, j: Var) -> Result<usize> {
    let s = tape.shape(j);
    if s.len() != 2 || s[0] != layer.shape.rows {
        return Err(DestError::Dimension(format!(
            "temporal layer expects {} rows, got input of shape {s:?}",
            layer.shape.rows
        )));
    }
    Ok(s[1])
}

fn residual(tape: &mut Tape, bound: &Bound, layer: &JtmLayer, j: Var) -> Result<Option<Var>> {
    Ok(match layer.residual {
        Residual::Identity => Some(j),
        Residual::Projection(p) => {
            let lifted = tape.matmul(bound.var(p), j)?;
            Some(tape.scale(lifted, 1.0 / layer.shape.rows as f64))
        }
        Residual::None => None,
    })
}

/// `J[D×T] → H[C_t×T]`. `dilation` applies to the TCN form only.
pub fn jtm_forward(tape: &mut Tape, bound: &Bound, layer: &JtmLayer, j: Var, dilation: usize) -> Result<Var> {
    match &layer.kind {
        JtmKind::Tcn { .. } => jtm_tcn_forward(tape, bound, layer, j, dilation),
        JtmKind::Transformer(_) => jtm_transformer_forward(tape, bound, layer, j),
    }
}

pub fn jtm_tcn_forward(tape: &mut Tape, bound: &Bound, layer: &JtmLayer, j: Var, dilation: usize) -> Result<Var> {
    check_rows(tape, layer, j)?;
    let JtmKind::Tcn { weight, relu } = layer.kind else {
        return Err(DestError::Config("not a TCN layer".into()));
    };
    let conv = tape.conv1d(j, bound.var(weight), dilation)?;
    let conv = tape.scale(conv, 1.0 / layer.shape.rows as f64);
    let body = if relu { tape.relu(conv) } else { conv };
    match residual(tape, bound, layer, j)? {
        Some(r) => tape.add(body, r),
        None => Ok(body),
    }
}

pub fn jtm_transformer_forward(tape: &mut Tape, bound: &Bound, layer: &JtmLayer, j: Var) -> Result<Var> {
    let t = check_rows(tape, layer, j)?;
    let JtmKind::Transformer(banks) = &layer.kind else {
        return Err(DestError::Config("not a transformer layer".into()));
    };
    let JtmShape {
        rows: d,
        channels: ct,
        ..
    } = layer.shape;
    let row_of = |tape: &mut Tape, p: ParamId, v: usize, shape: &[usize]| -> Result<Var> {
        let full = bound.var(p);
        let rank = tape.shape(full).len();
        let s = tape.slice(full, 0, v, 1)?;
        debug_assert!(rank >= 2);
        tape.reshape(s, shape)
    };
    let ones_t = tape.constant(&[1, t], vec![1.0; t])?;
    let ones_c = tape.constant(&[1, ct], vec![1.0; ct])?;
    let mut acc: Option<Var> = None;
    for v in 0..d {
        let jv = tape.slice(j, 0, v, 1)?;
        let jv_col = tape.transpose(jv)?;
        let ew = row_of(tape, banks.embed_w, v, &[1, ct])?;
        let eb = row_of(tape, banks.embed_b, v, &[ct])?;
        let e = tape.matmul(jv_col, ew)?;
        let e = tape.add_bias(e, eb, 1)?;
        let project = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<Var> {
            let w = row_of(tape, w, v, &[ct, ct])?;
            let b = row_of(tape, b, v, &[ct])?;
            let y = tape.matmul(e, w)?;
            tape.add_bias(y, b, 1)
        };
        let q = project(tape, banks.q_w, banks.q_b)?;
        let f = project(tape, banks.f_w, banks.f_b)?;
        let u = project(tape, banks.u_w, banks.u_b)?;
        let phi_q = phi(tape, q);
        let phi_f = phi(tape, f);
        let phi_f_t = tape.transpose(phi_f)?;
        let kv = tape.matmul(phi_f_t, u)?;
        let mut out = tape.matmul(phi_q, kv)?;
        if banks.normalized {
            let f_sum = tape.matmul(ones_t, phi_f)?;
            let f_sum_t = tape.transpose(f_sum)?;
            let z = tape.matmul(phi_q, f_sum_t)?;
            let z = tape.matmul(z, ones_c)?;
            out = tape.div(out, z)?;
        }
        let out_t = tape.transpose(out)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, out_t)?,
            None => out_t,
        });
    }
    let sum = acc.expect("at least one row");
    let body = tape.scale(sum, 1.0 / d as f64);
    match residual(tape, bound, layer, j)? {
        Some(r) => tape.add(body, r),
        None => Ok(body),
    }
}

/// `φ(x) = ELU(x) + 1`, strictly positive.
fn phi(tape: &mut Tape, x: Var) -> Var {
    let e = tape.elu(x);
    tape.add_scalar(e, 1.0)
}

/// Joint-shared baseline over joint-collapsed features `Ŝ'[C'×T]`:
/// `Σ_c W_c ∗ Ŝ'_c`, i.e. the TCN layer with channel rows.
pub fn jwtm_forward(tape: &mut Tape, bound: &Bound, layer: &JtmLayer, collapsed: Var, dilation: usize) -> Result<Var> {
    if !matches!(layer.kind, JtmKind::Tcn { .. }) {
        return Err(DestError::Config(
            "the joint-shared baseline uses the TCN form".into(),
        ));
    }
    jtm_tcn_forward(tape, bound, layer, collapsed, dilation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn dilation_schedule() {
        assert_eq!(dilation_for(1, 400), 1);
        assert_eq!(dilation_for(4, 400), 8);
        assert_eq!(dilation_for(11, 400), 100);
        assert_eq!(dilation_for(3, 3), 1);
    }

    #[test]
    fn identity_kernel_passes_input() {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows: 1,
            channels: 1,
            kernel: 3,
        };
        let layer = JtmLayer::tcn_with(&mut store, "l", shape, ResidualKind::None, false, &mut rng()).unwrap();
        store.set("l.w", Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let j = tape.leaf(&Tensor::new(vec![1, 5], vec![1.0, -2.0, 3.0, 4.0, -5.0]).unwrap());
        let h = jtm_tcn_forward(&mut tape, &bound, &layer, j, 1).unwrap();
        assert_eq!(tape.value(h), &[1.0, -2.0, 3.0, 4.0, -5.0]);
    }

    #[test]
    fn zero_weights_leave_pure_residual() {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows: 3,
            channels: 3,
            kernel: 3,
        };
        let layer = JtmLayer::tcn(&mut store, "l", shape, &mut rng()).unwrap();
        store.set("l.w", Tensor::zeros(&[3, 3, 3])).unwrap();
        let input = Tensor::new(vec![3, 2], vec![1.0, 2.0, -3.0, 4.0, 5.0, -6.0]).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let j = tape.leaf(&input);
        let h = jtm_tcn_forward(&mut tape, &bound, &layer, j, 1).unwrap();
        assert_eq!(tape.value(h), input.data());
    }

    #[test]
    fn row_mismatch_is_dimension_error() {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows: 2,
            channels: 3,
            kernel: 3,
        };
        let layer = JtmLayer::tcn(&mut store, "l", shape, &mut rng()).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let j = tape.leaf(&Tensor::zeros(&[3, 4]));
        assert!(matches!(
            jtm_tcn_forward(&mut tape, &bound, &layer, j, 1),
            Err(DestError::Dimension(_))
        ));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows: 2,
            channels: 3,
            kernel: 4,
        };
        assert!(matches!(
            JtmLayer::tcn(&mut store, "l", shape, &mut rng()),
            Err(DestError::Config(_))
        ));
    }

    #[test]
    fn param_count_matches_registry() {
        for (d, ct) in [(5, 4), (4, 4)] {
            let mut store = ParamStore::new();
            let shape = JtmShape {
                rows: d,
                channels: ct,
                kernel: 3,
            };
            let layer = JtmLayer::tcn(&mut store, "l", shape, &mut rng()).unwrap();
            let want = d * ct * 3 + if d != ct { d * ct } else { 0 };
            assert_eq!(layer.param_count(), want);
            assert_eq!(store.element_count(), want);

            let mut store = ParamStore::new();
            let layer = JtmLayer::transformer(&mut store, "l", shape, false, &mut rng()).unwrap();
            assert_eq!(layer.param_count(), store.element_count());
        }
    }
}
