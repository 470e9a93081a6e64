//! Shared test oracles: naive direct-loop references for every structured
//! operation, kept deliberately dumb and independent of the library's
//! optimized loops.

#![allow(dead_code)]

use tan_core::rng::SplitMix64;
use tan_core::tensor::Scalar;

/// Naive 6-loop spatial convolution, one frame at a time.
pub fn naive_conv2d<T: Scalar>(
    x: &[T],
    (t, cin, h, w): (usize, usize, usize, usize),
    wt: &[T],
    (cout, kh, kw): (usize, usize, usize),
    b: &[T],
    stride: usize,
    pad: usize,
) -> (Vec<T>, (usize, usize, usize, usize)) {
    let hp = (h + 2 * pad - kh) / stride + 1;
    let wp = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![T::zero(); t * cout * hp * wp];
    for ti in 0..t {
        for co in 0..cout {
            for ho in 0..hp {
                for wo in 0..wp {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for khi in 0..kh {
                            for kwi in 0..kw {
                                let hi = (ho * stride + khi) as isize - pad as isize;
                                let wi = (wo * stride + kwi) as isize - pad as isize;
                                if hi < 0 || hi >= h as isize || wi < 0 || wi >= w as isize {
                                    continue;
                                }
                                let xv = x[((ti * cin + ci) * h + hi as usize) * w + wi as usize];
                                let wv = wt[((co * cin + ci) * kh + khi) * kw + kwi];
                                acc = acc + wv * xv;
                            }
                        }
                    }
                    out[((ti * cout + co) * hp + ho) * wp + wo] = acc;
                }
            }
        }
    }
    (out, (t, cout, hp, wp))
}

/// Naive dilated temporal convolution over the channel-stacked signal at
/// every spatial site.
pub fn naive_conv1d_temporal<T: Scalar>(
    x: &[T],
    (t, cin, h, w): (usize, usize, usize, usize),
    wt: &[T],
    (cout, k): (usize, usize),
    b: &[T],
    dilation: usize,
) -> Vec<T> {
    let pad = dilation * (k - 1) / 2;
    let hw = h * w;
    let mut out = vec![T::zero(); t * cout * hw];
    for to in 0..t {
        for co in 0..cout {
            for s in 0..hw {
                let mut acc = b[co];
                for ci in 0..cin {
                    for kk in 0..k {
                        let tin = to as isize + (dilation * kk) as isize - pad as isize;
                        if tin < 0 || tin >= t as isize {
                            continue;
                        }
                        let xv = x[(tin as usize * cin + ci) * hw + s];
                        let wv = wt[(co * cin + ci) * k + kk];
                        acc = acc + wv * xv;
                    }
                }
                out[(to * cout + co) * hw + s] = acc;
            }
        }
    }
    out
}

/// Naive spatio-temporal convolution (temporal stride 1, pad (kt-1)/2).
pub fn naive_conv3d<T: Scalar>(
    x: &[T],
    (t, cin, h, w): (usize, usize, usize, usize),
    wt: &[T],
    (cout, kt, kh, kw): (usize, usize, usize, usize),
    b: &[T],
    stride: usize,
    pad: usize,
) -> (Vec<T>, (usize, usize, usize, usize)) {
    let pt = (kt - 1) / 2;
    let hp = (h + 2 * pad - kh) / stride + 1;
    let wp = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![T::zero(); t * cout * hp * wp];
    for to in 0..t {
        for co in 0..cout {
            for ho in 0..hp {
                for wo in 0..wp {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ktt in 0..kt {
                            let tin = to as isize + ktt as isize - pt as isize;
                            if tin < 0 || tin >= t as isize {
                                continue;
                            }
                            for khi in 0..kh {
                                for kwi in 0..kw {
                                    let hi = (ho * stride + khi) as isize - pad as isize;
                                    let wi = (wo * stride + kwi) as isize - pad as isize;
                                    if hi < 0 || hi >= h as isize || wi < 0 || wi >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((tin as usize * cin + ci) * h + hi as usize) * w
                                        + wi as usize];
                                    let wv = wt
                                        [(((co * cin + ci) * kt + ktt) * kh + khi) * kw + kwi];
                                    acc = acc + wv * xv;
                                }
                            }
                        }
                    }
                    out[((to * cout + co) * hp + ho) * wp + wo] = acc;
                }
            }
        }
    }
    (out, (t, cout, hp, wp))
}

/// Per-window max oracle (no padding, per-frame).
pub fn naive_maxpool2d<T: Scalar>(
    x: &[T],
    (t, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
) -> (Vec<T>, (usize, usize, usize, usize)) {
    let hp = (h - k) / stride + 1;
    let wp = (w - k) / stride + 1;
    let mut out = vec![T::neg_infinity(); t * c * hp * wp];
    for ti in 0..t {
        for ci in 0..c {
            for ho in 0..hp {
                for wo in 0..wp {
                    let mut best = T::neg_infinity();
                    for dh in 0..k {
                        for dw in 0..k {
                            let v = x[((ti * c + ci) * h + ho * stride + dh) * w
                                + wo * stride
                                + dw];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((ti * c + ci) * hp + ho) * wp + wo] = best;
                }
            }
        }
    }
    (out, (t, c, hp, wp))
}

/// Triple-loop matrix multiply oracle for the linear layer.
pub fn naive_linear<T: Scalar>(x: &[T], (t, c): (usize, usize), w: &[T], k: usize, b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); t * k];
    for ti in 0..t {
        for ki in 0..k {
            let mut acc = b[ki];
            for ci in 0..c {
                acc = acc + x[ti * c + ci] * w[ki * c + ci];
            }
            out[ti * k + ki] = acc;
        }
    }
    out
}

pub fn rand_vec_f32(rng: &mut SplitMix64, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.next_f32_range(lo, hi)).collect()
}

pub fn rand_vec_f64(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + rng.next_f64() * (hi - lo)).collect()
}

/// Relative agreement check with an absolute floor of the same magnitude
/// for near-zero expected values.
pub fn assert_close_rel(actual: &[f32], expected: &[f32], tol: f32, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (&a, &e)) in actual.iter().zip(expected).enumerate() {
        let denom = a.abs().max(e.abs()).max(1.0);
        assert!(
            (a - e).abs() <= tol * denom,
            "{what}: element {i} differs: {a} vs {e} (tol {tol})"
        );
    }
}
