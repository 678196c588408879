//! Elementwise LSTM cell kernels behind the fused tape step.
//!
//! Each kernel is compiled twice, once for the baseline target and once
//! with AVX2 enabled, and dispatched at runtime. No fused multiply-add is
//! introduced, so both variants produce bit-identical results.

use crate::fastmath::{sigmoid, tanh};

/// Shapes and flags shared by the forward and backward kernels.
#[derive(Clone, Copy)]
pub(crate) struct CellDims {
    pub batch: usize,
    pub hidden: usize,
    pub squash: bool,
}

/// In place: `gates` (`B × 4H`, pre-activations on entry) becomes the
/// activated `[i | f | o | g]`. Writes `[h | c]` into `out` (`B × 2H`)
/// and `tanh(c)` into `tanh_c`.
pub(crate) fn forward(
    d: CellDims,
    gates: &mut [f64],
    c_prev: &[f64],
    out: &mut [f64],
    tanh_c: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { forward_avx2(d, gates, c_prev, out, tanh_c) };
    }
    forward_body(d, gates, c_prev, out, tanh_c)
}

/// Gradients of the gate pre-activations and of `c_prev` given the
/// upstream gradient `d_out` of `[h | c]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    d: CellDims,
    gates: &[f64],
    c_prev: &[f64],
    out: &[f64],
    tanh_c: &[f64],
    d_out: &[f64],
    d_pre: &mut [f64],
    d_cp: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { backward_avx2(d, gates, c_prev, out, tanh_c, d_out, d_pre, d_cp) };
    }
    backward_body(d, gates, c_prev, out, tanh_c, d_out, d_pre, d_cp)
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    use std::sync::OnceLock;
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| is_x86_feature_detected!("avx2"))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn forward_avx2(
    d: CellDims,
    gates: &mut [f64],
    c_prev: &[f64],
    out: &mut [f64],
    tanh_c: &mut [f64],
) {
    forward_body(d, gates, c_prev, out, tanh_c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn backward_avx2(
    d: CellDims,
    gates: &[f64],
    c_prev: &[f64],
    out: &[f64],
    tanh_c: &[f64],
    d_out: &[f64],
    d_pre: &mut [f64],
    d_cp: &mut [f64],
) {
    backward_body(d, gates, c_prev, out, tanh_c, d_out, d_pre, d_cp)
}

#[inline(always)]
fn forward_body(
    d: CellDims,
    gates: &mut [f64],
    c_prev: &[f64],
    out: &mut [f64],
    tanh_c: &mut [f64],
) {
    let h = d.hidden;
    for r in 0..d.batch {
        let g = &mut gates[r * 4 * h..(r + 1) * 4 * h];
        let (sig, cand) = g.split_at_mut(3 * h);
        sig.iter_mut().for_each(|v| *v = sigmoid(*v));
        cand.iter_mut().for_each(|v| *v = tanh(*v));
        let (i, rest) = sig.split_at(h);
        let (f, o) = rest.split_at(h);
        let cp = &c_prev[r * h..(r + 1) * h];
        let (ho, co) = out[r * 2 * h..(r + 1) * 2 * h].split_at_mut(h);
        let tr = &mut tanh_c[r * h..(r + 1) * h];
        for j in 0..h {
            co[j] = f[j] * cp[j] + i[j] * cand[j];
        }
        if d.squash {
            co.iter_mut().for_each(|c| *c = sigmoid(*c));
        }
        for j in 0..h {
            tr[j] = tanh(co[j]);
            ho[j] = tr[j] * o[j];
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn backward_body(
    d: CellDims,
    gates: &[f64],
    c_prev: &[f64],
    out: &[f64],
    tanh_c: &[f64],
    d_out: &[f64],
    d_pre: &mut [f64],
    d_cp: &mut [f64],
) {
    let h = d.hidden;
    for r in 0..d.batch {
        let g = &gates[r * 4 * h..(r + 1) * 4 * h];
        let (i, f, o, cand) = (&g[..h], &g[h..2 * h], &g[2 * h..3 * h], &g[3 * h..]);
        let c = &out[r * 2 * h + h..(r + 1) * 2 * h];
        let (dh, dc) = d_out[r * 2 * h..(r + 1) * 2 * h].split_at(h);
        let t = &tanh_c[r * h..(r + 1) * h];
        let cp = &c_prev[r * h..(r + 1) * h];
        let dcp = &mut d_cp[r * h..(r + 1) * h];
        let (dp_i, rest) = d_pre[r * 4 * h..(r + 1) * 4 * h].split_at_mut(h);
        let (dp_f, rest) = rest.split_at_mut(h);
        let (dp_o, dp_g) = rest.split_at_mut(h);
        for j in 0..h {
            let mut ds = dc[j] + dh[j] * o[j] * (1.0 - t[j] * t[j]);
            if d.squash {
                ds *= c[j] * (1.0 - c[j]);
            }
            dp_i[j] = ds * cand[j] * i[j] * (1.0 - i[j]);
            dp_f[j] = ds * cp[j] * f[j] * (1.0 - f[j]);
            dp_o[j] = dh[j] * t[j] * o[j] * (1.0 - o[j]);
            dp_g[j] = ds * i[j] * (1.0 - cand[j] * cand[j]);
            dcp[j] = ds * f[j];
        }
    }
}
