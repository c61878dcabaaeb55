//! Raw slice kernels shared by the tape's forward and backward passes.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            c_row.iter_mut().zip(b_row).for_each(|(c, &b)| *c += aip * b);
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub(crate) fn matmul_grad_a(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            da[i * k + p] += dot(dc_row, b_row);
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
pub(crate) fn matmul_grad_b(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            db_row.iter_mut().zip(dc_row).for_each(|(d, &g)| *d += aip * g);
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Valid output range `[lo, hi)` for a tap at signed offset `off` over length `t`.
#[inline]
fn tap_range(off: isize, t: usize) -> (usize, usize) {
    let t = t as isize;
    let lo = (-off).max(0);
    let hi = (t - off).min(t);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t: usize,
    pub dilation: usize,
}

impl ConvDims {
    #[inline]
    fn offset(&self, j: usize) -> isize {
        (j as isize - (self.k / 2) as isize) * self.dilation as isize
    }
}

/// Same-padded dilated 1-D convolution, `y[o,t] = Σ_{i,j} w[o,i,j]·x[i, t+(j−k/2)·d]`.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], y: &mut [f64], d: &ConvDims) {
    let t = d.t;
    for o in 0..d.c_out {
        let y_o = &mut y[o * t..(o + 1) * t];
        for i in 0..d.c_in {
            let x_i = &x[i * t..(i + 1) * t];
            for j in 0..d.k {
                let wv = w[(o * d.c_in + i) * d.k + j];
                let off = d.offset(j);
                let (lo, hi) = tap_range(off, t);
                if lo == hi {
                    continue;
                }
                let src = &x_i[(lo as isize + off) as usize..(hi as isize + off) as usize];
                y_o[lo..hi]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(y, &x)| *y += wv * x);
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    d: &ConvDims,
) {
    let t = d.t;
    if let Some(dx) = dx {
        for o in 0..d.c_out {
            let dy_o = &dy[o * t..(o + 1) * t];
            for i in 0..d.c_in {
                let dx_i = &mut dx[i * t..(i + 1) * t];
                for j in 0..d.k {
                    let wv = w[(o * d.c_in + i) * d.k + j];
                    let off = d.offset(j);
                    let (lo, hi) = tap_range(off, t);
                    if lo == hi {
                        continue;
                    }
                    let dst = &mut dx_i[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    dst.iter_mut()
                        .zip(&dy_o[lo..hi])
                        .for_each(|(g, &dy)| *g += wv * dy);
                }
            }
        }
    }
    if let Some(dw) = dw {
        for o in 0..d.c_out {
            let dy_o = &dy[o * t..(o + 1) * t];
            for i in 0..d.c_in {
                let x_i = &x[i * t..(i + 1) * t];
                for j in 0..d.k {
                    let off = d.offset(j);
                    let (lo, hi) = tap_range(off, t);
                    if lo == hi {
                        continue;
                    }
                    let src = &x_i[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    dw[(o * d.c_in + i) * d.k + j] += dot(&dy_o[lo..hi], src);
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let mx = (0..len).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for a in 0..len {
                let e = (x[idx(a)] - mx).exp();
                y[idx(a)] = e;
                s += e;
            }
            if log {
                let ls = s.ln();
                for a in 0..len {
                    y[idx(a)] = x[idx(a)] - mx - ls;
                }
            } else {
                for a in 0..len {
                    y[idx(a)] /= s;
                }
            }
        }
    }
    y
}
