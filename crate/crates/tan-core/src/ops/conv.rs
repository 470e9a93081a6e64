use rayon::prelude::*;

use crate::error::{Result, TanError};
use crate::graph::{Backward, Graph};
use crate::ops::{dims4, frame_parallel};
use crate::tensor::{Scalar, Tensor};

/// Valid output range along one axis for a kernel tap at `offset` from the
/// input origin: returns (lo, hi) inclusive such that
/// `lo*stride + offset .. hi*stride + offset` stay inside `0..extent`.
#[inline]
fn tap_range(offset: isize, stride: usize, extent: usize, out_extent: usize) -> Option<(usize, usize)> {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize + stride - 1) / stride
    };
    let max_in = extent as isize - 1 - offset;
    if max_in < 0 {
        return None;
    }
    let hi = (max_in as usize / stride).min(out_extent - 1);
    (lo <= hi).then_some((lo, hi))
}

// ---------------------------------------------------------------------------
// conv2d_per_frame
// ---------------------------------------------------------------------------

struct Conv2dBackward {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Backward<T> for Conv2dBackward {
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let (t, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, kh, kw) = (w.dim(0), w.dim(2), w.dim(3));
        let (hp, wp) = (out.dim(2), out.dim(3));
        let (s, p) = (self.stride, self.pad);
        let (in_frame, out_frame) = (cin * h * wd, cout * hp * wp);

        let dx = x.requires_grad().then(|| {
            let ws = w.read();
            let mut dx = vec![T::zero(); t * in_frame];
            let body = |ti: usize, dxf: &mut [T]| {
                let gf = &g[ti * out_frame..(ti + 1) * out_frame];
                for ci in 0..cin {
                    let dxc = &mut dxf[ci * h * wd..(ci + 1) * h * wd];
                    for co in 0..cout {
                        let gc = &gf[co * hp * wp..(co + 1) * hp * wp];
                        for khi in 0..kh {
                            let off_h = khi as isize - p as isize;
                            let Some((ho_lo, ho_hi)) = tap_range(off_h, s, h, hp) else {
                                continue;
                            };
                            for kwi in 0..kw {
                                let off_w = kwi as isize - p as isize;
                                let Some((wo_lo, wo_hi)) = tap_range(off_w, s, wd, wp) else {
                                    continue;
                                };
                                let wv = ws[((co * cin + ci) * kh + khi) * kw + kwi];
                                for ho in ho_lo..=ho_hi {
                                    let hi = (ho * s) as isize + off_h;
                                    let drow = &mut dxc[hi as usize * wd..(hi as usize + 1) * wd];
                                    let grow = &gc[ho * wp..(ho + 1) * wp];
                                    for wo in wo_lo..=wo_hi {
                                        let wi = ((wo * s) as isize + off_w) as usize;
                                        drow[wi] = drow[wi] + wv * grow[wo];
                                    }
                                }
                            }
                        }
                    }
                }
            };
            if frame_parallel(t, (t * out_frame * cin * kh * kw) as u64) {
                dx.par_chunks_mut(in_frame).enumerate().for_each(|(ti, f)| body(ti, f));
            } else {
                dx.chunks_mut(in_frame).enumerate().for_each(|(ti, f)| body(ti, f));
            }
            dx
        });

        let dw = w.requires_grad().then(|| {
            let xs = x.read();
            let mut dw = vec![T::zero(); cout * cin * kh * kw];
            let body = |co: usize, dwc: &mut [T]| {
                for ti in 0..t {
                    let xf = &xs[ti * in_frame..(ti + 1) * in_frame];
                    let gc = &g[ti * out_frame + co * hp * wp..][..hp * wp];
                    for ci in 0..cin {
                        let xc = &xf[ci * h * wd..(ci + 1) * h * wd];
                        for khi in 0..kh {
                            let off_h = khi as isize - p as isize;
                            let Some((ho_lo, ho_hi)) = tap_range(off_h, s, h, hp) else {
                                continue;
                            };
                            for kwi in 0..kw {
                                let off_w = kwi as isize - p as isize;
                                let Some((wo_lo, wo_hi)) = tap_range(off_w, s, wd, wp) else {
                                    continue;
                                };
                                let mut acc = T::zero();
                                for ho in ho_lo..=ho_hi {
                                    let hi = ((ho * s) as isize + off_h) as usize;
                                    let xrow = &xc[hi * wd..(hi + 1) * wd];
                                    let grow = &gc[ho * wp..(ho + 1) * wp];
                                    for wo in wo_lo..=wo_hi {
                                        let wi = ((wo * s) as isize + off_w) as usize;
                                        acc = acc + grow[wo] * xrow[wi];
                                    }
                                }
                                let idx = (ci * kh + khi) * kw + kwi;
                                dwc[idx] = dwc[idx] + acc;
                            }
                        }
                    }
                }
            };
            let per_co = cin * kh * kw;
            if frame_parallel(cout, (t * out_frame * cin * kh * kw) as u64) {
                dw.par_chunks_mut(per_co).enumerate().for_each(|(co, c)| body(co, c));
            } else {
                dw.chunks_mut(per_co).enumerate().for_each(|(co, c)| body(co, c));
            }
            dw
        });

        let db = inputs[2].requires_grad().then(|| {
            let mut db = vec![T::zero(); cout];
            for ti in 0..t {
                for co in 0..cout {
                    let gc = &g[ti * out_frame + co * hp * wp..][..hp * wp];
                    let mut acc = T::zero();
                    for &v in gc {
                        acc = acc + v;
                    }
                    db[co] = db[co] + acc;
                }
            }
            db
        });

        vec![dx, dw, db]
    }
}

/// Spatial convolution applied independently to each frame.
///
/// x: [T,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]; zero padding,
/// cross-correlation semantics. Output [T,Cout,H',W'] with
/// H' = (H + 2*pad - kh)/stride + 1.
pub fn conv2d_per_frame<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (t, c, h, wd) = dims4("conv2d_per_frame", x)?;
    if w.ndim() != 4 {
        return Err(TanError::shape(
            "conv2d_per_frame",
            format!("weight must be [Cout,Cin,kh,kw], got {:?}", w.shape()),
        ));
    }
    let (cout, cin, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if cin != c {
        return Err(TanError::shape(
            "conv2d_per_frame",
            format!("weight expects Cin={cin} but input has {c} channels"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TanError::shape(
            "conv2d_per_frame",
            format!("kernel extents must be odd, got {kh}x{kw}"),
        ));
    }
    if stride == 0 {
        return Err(TanError::shape("conv2d_per_frame", "stride must be >= 1".to_string()));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TanError::shape(
            "conv2d_per_frame",
            format!("padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * pad, wd + 2 * pad),
        ));
    }
    if b.shape() != [cout] {
        return Err(TanError::shape(
            "conv2d_per_frame",
            format!("bias must be [{cout}], got {:?}", b.shape()),
        ));
    }
    let hp = (h + 2 * pad - kh) / stride + 1;
    let wp = (wd + 2 * pad - kw) / stride + 1;
    let (in_frame, out_frame) = (c * h * wd, cout * hp * wp);
    let macs = (t * cout * hp * wp * cin * kh * kw) as u64;

    let out = {
        let xs = x.read();
        let ws = w.read();
        let bs = b.read();
        let mut out = vec![T::zero(); t * out_frame];
        let body = |ti: usize, of: &mut [T]| {
            let xf = &xs[ti * in_frame..(ti + 1) * in_frame];
            for co in 0..cout {
                let oc = &mut of[co * hp * wp..(co + 1) * hp * wp];
                oc.iter_mut().for_each(|v| *v = bs[co]);
                for ci in 0..cin {
                    let xc = &xf[ci * h * wd..(ci + 1) * h * wd];
                    for khi in 0..kh {
                        let off_h = khi as isize - pad as isize;
                        let Some((ho_lo, ho_hi)) = tap_range(off_h, stride, h, hp) else {
                            continue;
                        };
                        for kwi in 0..kw {
                            let off_w = kwi as isize - pad as isize;
                            let Some((wo_lo, wo_hi)) = tap_range(off_w, stride, wd, wp) else {
                                continue;
                            };
                            let wv = ws[((co * cin + ci) * kh + khi) * kw + kwi];
                            for ho in ho_lo..=ho_hi {
                                let hi = ((ho * stride) as isize + off_h) as usize;
                                let xrow = &xc[hi * wd..(hi + 1) * wd];
                                let orow = &mut oc[ho * wp..(ho + 1) * wp];
                                if stride == 1 {
                                    let wi0 = (wo_lo as isize + off_w) as usize;
                                    let n = wo_hi - wo_lo + 1;
                                    let xr = &xrow[wi0..wi0 + n];
                                    let or = &mut orow[wo_lo..wo_lo + n];
                                    for i in 0..n {
                                        or[i] = or[i] + wv * xr[i];
                                    }
                                } else {
                                    for wo in wo_lo..=wo_hi {
                                        let wi = ((wo * stride) as isize + off_w) as usize;
                                        orow[wo] = orow[wo] + wv * xrow[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        if frame_parallel(t, macs) {
            out.par_chunks_mut(out_frame).enumerate().for_each(|(ti, f)| body(ti, f));
        } else {
            out.chunks_mut(out_frame).enumerate().for_each(|(ti, f)| body(ti, f));
        }
        Tensor::new(vec![t, cout, hp, wp], out, g.track(&[x, w, b]))?
    };
    g.add_macs(macs);
    g.record(
        vec![x.clone(), w.clone(), b.clone()],
        out.clone(),
        Box::new(Conv2dBackward { stride, pad }),
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// conv1d_temporal
// ---------------------------------------------------------------------------

struct Conv1dBackward {
    dilation: usize,
}

impl<T: Scalar> Backward<T> for Conv1dBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let (t, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, k) = (w.dim(0), w.dim(2));
        let d = self.dilation;
        let pad = d * (k - 1) / 2;
        let hw = h * wd;
        let in_frame = cin * hw;
        let out_frame = cout * hw;

        let dx = x.requires_grad().then(|| {
            let ws = w.read();
            let mut dx = vec![T::zero(); t * in_frame];
            let body = |ci: usize, dxc: &mut [T]| {
                // dxc is the [T, hw] plane of channel ci (gathered below).
                for to in 0..t {
                    for kk in 0..k {
                        let tin = to as isize + (d * kk) as isize - pad as isize;
                        if tin < 0 || tin >= t as isize {
                            continue;
                        }
                        let drow = &mut dxc[tin as usize * hw..(tin as usize + 1) * hw];
                        for co in 0..cout {
                            let wv = ws[(co * cin + ci) * k + kk];
                            let grow = &g[to * out_frame + co * hw..][..hw];
                            for i in 0..hw {
                                drow[i] = drow[i] + wv * grow[i];
                            }
                        }
                    }
                }
            };
            // Work on per-channel [T, hw] planes so channel tasks are
            // disjoint, then interleave back into [T, C, hw].
            let mut planes = vec![T::zero(); t * in_frame];
            if frame_parallel(cin, (t * out_frame * cin * k) as u64) {
                planes.par_chunks_mut(t * hw).enumerate().for_each(|(ci, pl)| body(ci, pl));
            } else {
                planes.chunks_mut(t * hw).enumerate().for_each(|(ci, pl)| body(ci, pl));
            }
            for ci in 0..cin {
                for ti in 0..t {
                    let src = &planes[ci * t * hw + ti * hw..][..hw];
                    dx[ti * in_frame + ci * hw..][..hw].copy_from_slice(src);
                }
            }
            dx
        });

        let dw = w.requires_grad().then(|| {
            let xs = x.read();
            let mut dw = vec![T::zero(); cout * cin * k];
            let body = |co: usize, dwc: &mut [T]| {
                for to in 0..t {
                    let gc = &g[to * out_frame + co * hw..][..hw];
                    for kk in 0..k {
                        let tin = to as isize + (d * kk) as isize - pad as isize;
                        if tin < 0 || tin >= t as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xrow = &xs[tin as usize * in_frame + ci * hw..][..hw];
                            let mut acc = T::zero();
                            for i in 0..hw {
                                acc = acc + gc[i] * xrow[i];
                            }
                            dwc[ci * k + kk] = dwc[ci * k + kk] + acc;
                        }
                    }
                }
            };
            if frame_parallel(cout, (t * out_frame * cin * k) as u64) {
                dw.par_chunks_mut(cin * k).enumerate().for_each(|(co, c)| body(co, c));
            } else {
                dw.chunks_mut(cin * k).enumerate().for_each(|(co, c)| body(co, c));
            }
            dw
        });

        let db = inputs[2].requires_grad().then(|| {
            let mut db = vec![T::zero(); cout];
            for to in 0..t {
                for co in 0..cout {
                    let gc = &g[to * out_frame + co * hw..][..hw];
                    let mut acc = T::zero();
                    for &v in gc {
                        acc = acc + v;
                    }
                    db[co] = db[co] + acc;
                }
            }
            db
        });

        vec![dx, dw, db]
    }
}

/// Dilated 1-D convolution along the temporal axis, shared over all
/// spatial positions, with full channel mixing.
///
/// x: [T,C,H,W], w: [Cout,Cin,k], b: [Cout]. Zero padding of
/// dilation*(k-1)/2 per side keeps the temporal extent unchanged.
pub fn conv1d_temporal<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dilation: usize,
) -> Result<Tensor<T>> {
    let (t, c, h, wd) = dims4("conv1d_temporal", x)?;
    if w.ndim() != 3 {
        return Err(TanError::shape(
            "conv1d_temporal",
            format!("weight must be [Cout,Cin,k], got {:?}", w.shape()),
        ));
    }
    let (cout, cin, k) = (w.dim(0), w.dim(1), w.dim(2));
    if cin != c {
        return Err(TanError::shape(
            "conv1d_temporal",
            format!("weight expects Cin={cin} but input has {c} channels"),
        ));
    }
    if k % 2 == 0 {
        return Err(TanError::shape(
            "conv1d_temporal",
            format!("kernel must be odd, got {k}"),
        ));
    }
    if dilation == 0 {
        return Err(TanError::shape("conv1d_temporal", "dilation must be >= 1".to_string()));
    }
    if b.shape() != [cout] {
        return Err(TanError::shape(
            "conv1d_temporal",
            format!("bias must be [{cout}], got {:?}", b.shape()),
        ));
    }
    if dilation * (k - 1) >= 2 * t {
        log::warn!(
            "conv1d_temporal: dilation {dilation} with kernel {k} spans {} frames, \
             input has only {t}; padding zeros dominate",
            dilation * (k - 1) + 1
        );
    }
    let pad = dilation * (k - 1) / 2;
    let hw = h * wd;
    let in_frame = c * hw;
    let out_frame = cout * hw;
    let macs = (t * cout * hw * cin * k) as u64;

    let out = {
        let xs = x.read();
        let ws = w.read();
        let bs = b.read();
        let mut out = vec![T::zero(); t * out_frame];
        let body = |to: usize, of: &mut [T]| {
            for co in 0..cout {
                let oc = &mut of[co * hw..(co + 1) * hw];
                oc.iter_mut().for_each(|v| *v = bs[co]);
                for kk in 0..k {
                    let tin = to as isize + (dilation * kk) as isize - pad as isize;
                    if tin < 0 || tin >= t as isize {
                        continue;
                    }
                    let xf = &xs[tin as usize * in_frame..(tin as usize + 1) * in_frame];
                    for ci in 0..cin {
                        let wv = ws[(co * cin + ci) * k + kk];
                        let xrow = &xf[ci * hw..(ci + 1) * hw];
                        for i in 0..hw {
                            oc[i] = oc[i] + wv * xrow[i];
                        }
                    }
                }
            }
        };
        if frame_parallel(t, macs) {
            out.par_chunks_mut(out_frame).enumerate().for_each(|(to, f)| body(to, f));
        } else {
            out.chunks_mut(out_frame).enumerate().for_each(|(to, f)| body(to, f));
        }
        Tensor::new(vec![t, cout, h, wd], out, g.track(&[x, w, b]))?
    };
    g.add_macs(macs);
    g.record(
        vec![x.clone(), w.clone(), b.clone()],
        out.clone(),
        Box::new(Conv1dBackward { dilation }),
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

struct Conv3dBackward {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Backward<T> for Conv3dBackward {
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let (t, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, kt, kh, kw) = (w.dim(0), w.dim(2), w.dim(3), w.dim(4));
        let (hp, wp) = (out.dim(2), out.dim(3));
        let (s, p) = (self.stride, self.pad);
        let pt = (kt - 1) / 2;
        let in_frame = cin * h * wd;
        let out_frame = cout * hp * wp;

        let dx = x.requires_grad().then(|| {
            let ws = w.read();
            let mut planes = vec![T::zero(); t * in_frame];
            let body = |ci: usize, dxc: &mut [T]| {
                for to in 0..t {
                    for ktt in 0..kt {
                        let tin = to as isize + ktt as isize - pt as isize;
                        if tin < 0 || tin >= t as isize {
                            continue;
                        }
                        let dplane = &mut dxc[tin as usize * h * wd..(tin as usize + 1) * h * wd];
                        for co in 0..cout {
                            let gc = &g[to * out_frame + co * hp * wp..][..hp * wp];
                            for khi in 0..kh {
                                let off_h = khi as isize - p as isize;
                                let Some((ho_lo, ho_hi)) = tap_range(off_h, s, h, hp) else {
                                    continue;
                                };
                                for kwi in 0..kw {
                                    let off_w = kwi as isize - p as isize;
                                    let Some((wo_lo, wo_hi)) = tap_range(off_w, s, wd, wp) else {
                                        continue;
                                    };
                                    let wv =
                                        ws[(((co * cin + ci) * kt + ktt) * kh + khi) * kw + kwi];
                                    for ho in ho_lo..=ho_hi {
                                        let hi = ((ho * s) as isize + off_h) as usize;
                                        let drow = &mut dplane[hi * wd..(hi + 1) * wd];
                                        let grow = &gc[ho * wp..(ho + 1) * wp];
                                        for wo in wo_lo..=wo_hi {
                                            let wi = ((wo * s) as isize + off_w) as usize;
                                            drow[wi] = drow[wi] + wv * grow[wo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            };
            if frame_parallel(cin, (t * out_frame * cin * kt * kh * kw) as u64) {
                planes.par_chunks_mut(t * h * wd).enumerate().for_each(|(ci, pl)| body(ci, pl));
            } else {
                planes.chunks_mut(t * h * wd).enumerate().for_each(|(ci, pl)| body(ci, pl));
            }
            let mut dx = vec![T::zero(); t * in_frame];
            for ci in 0..cin {
                for ti in 0..t {
                    let src = &planes[ci * t * h * wd + ti * h * wd..][..h * wd];
                    dx[ti * in_frame + ci * h * wd..][..h * wd].copy_from_slice(src);
                }
            }
            dx
        });

        let dw = w.requires_grad().then(|| {
            let xs = x.read();
            let mut dw = vec![T::zero(); cout * cin * kt * kh * kw];
            let per_co = cin * kt * kh * kw;
            let body = |co: usize, dwc: &mut [T]| {
                for to in 0..t {
                    let gc = &g[to * out_frame + co * hp * wp..][..hp * wp];
                    for ktt in 0..kt {
                        let tin = to as isize + ktt as isize - pt as isize;
                        if tin < 0 || tin >= t as isize {
                            continue;
                        }
                        let xf = &xs[tin as usize * in_frame..(tin as usize + 1) * in_frame];
                        for ci in 0..cin {
                            let xc = &xf[ci * h * wd..(ci + 1) * h * wd];
                            for khi in 0..kh {
                                let off_h = khi as isize - p as isize;
                                let Some((ho_lo, ho_hi)) = tap_range(off_h, s, h, hp) else {
                                    continue;
                                };
                                for kwi in 0..kw {
                                    let off_w = kwi as isize - p as isize;
                                    let Some((wo_lo, wo_hi)) = tap_range(off_w, s, wd, wp) else {
                                        continue;
                                    };
                                    let mut acc = T::zero();
                                    for ho in ho_lo..=ho_hi {
                                        let hi = ((ho * s) as isize + off_h) as usize;
                                        let xrow = &xc[hi * wd..(hi + 1) * wd];
                                        let grow = &gc[ho * wp..(ho + 1) * wp];
                                        for wo in wo_lo..=wo_hi {
                                            let wi = ((wo * s) as isize + off_w) as usize;
                                            acc = acc + grow[wo] * xrow[wi];
                                        }
                                    }
                                    let idx = ((ci * kt + ktt) * kh + khi) * kw + kwi;
                                    dwc[idx] = dwc[idx] + acc;
                                }
                            }
                        }
                    }
                }
            };
            if frame_parallel(cout, (t * out_frame * per_co) as u64) {
                dw.par_chunks_mut(per_co).enumerate().for_each(|(co, c)| body(co, c));
            } else {
                dw.chunks_mut(per_co).enumerate().for_each(|(co, c)| body(co, c));
            }
            dw
        });

        let db = inputs[2].requires_grad().then(|| {
            let mut db = vec![T::zero(); cout];
            for to in 0..t {
                for co in 0..cout {
                    let gc = &g[to * out_frame + co * hp * wp..][..hp * wp];
                    let mut acc = T::zero();
                    for &v in gc {
                        acc = acc + v;
                    }
                    db[co] = db[co] + acc;
                }
            }
            db
        });

        vec![dx, dw, db]
    }
}

/// Spatio-temporal convolution: spatial stride/pad as given, temporal
/// stride 1 with padding (kt-1)/2 so T is preserved.
///
/// x: [T,Cin,H,W], w: [Cout,Cin,kt,kh,kw], b: [Cout].
pub fn conv3d<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (t, c, h, wd) = dims4("conv3d", x)?;
    if w.ndim() != 5 {
        return Err(TanError::shape(
            "conv3d",
            format!("weight must be [Cout,Cin,kt,kh,kw], got {:?}", w.shape()),
        ));
    }
    let (cout, cin, kt, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3), w.dim(4));
    if cin != c {
        return Err(TanError::shape(
            "conv3d",
            format!("weight expects Cin={cin} but input has {c} channels"),
        ));
    }
    if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(TanError::shape(
            "conv3d",
            format!("kernel extents must be odd, got {kt}x{kh}x{kw}"),
        ));
    }
    if stride == 0 {
        return Err(TanError::shape("conv3d", "stride must be >= 1".to_string()));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TanError::shape(
            "conv3d",
            format!("padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * pad, wd + 2 * pad),
        ));
    }
    if b.shape() != [cout] {
        return Err(TanError::shape(
            "conv3d",
            format!("bias must be [{cout}], got {:?}", b.shape()),
        ));
    }
    let pt = (kt - 1) / 2;
    let hp = (h + 2 * pad - kh) / stride + 1;
    let wp = (wd + 2 * pad - kw) / stride + 1;
    let in_frame = c * h * wd;
    let out_frame = cout * hp * wp;
    let macs = (t * cout * hp * wp * cin * kt * kh * kw) as u64;

    let out = {
        let xs = x.read();
        let ws = w.read();
        let bs = b.read();
        let mut out = vec![T::zero(); t * out_frame];
        let body = |to: usize, of: &mut [T]| {
            for co in 0..cout {
                let oc = &mut of[co * hp * wp..(co + 1) * hp * wp];
                oc.iter_mut().for_each(|v| *v = bs[co]);
                for ktt in 0..kt {
                    let tin = to as isize + ktt as isize - pt as isize;
                    if tin < 0 || tin >= t as isize {
                        continue;
                    }
                    let xf = &xs[tin as usize * in_frame..(tin as usize + 1) * in_frame];
                    for ci in 0..cin {
                        let xc = &xf[ci * h * wd..(ci + 1) * h * wd];
                        for khi in 0..kh {
                            let off_h = khi as isize - pad as isize;
                            let Some((ho_lo, ho_hi)) = tap_range(off_h, stride, h, hp) else {
                                continue;
                            };
                            for kwi in 0..kw {
                                let off_w = kwi as isize - pad as isize;
                                let Some((wo_lo, wo_hi)) = tap_range(off_w, stride, wd, wp) else {
                                    continue;
                                };
                                let wv = ws[(((co * cin + ci) * kt + ktt) * kh + khi) * kw + kwi];
                                for ho in ho_lo..=ho_hi {
                                    let hi = ((ho * stride) as isize + off_h) as usize;
                                    let xrow = &xc[hi * wd..(hi + 1) * wd];
                                    let orow = &mut oc[ho * wp..(ho + 1) * wp];
                                    if stride == 1 {
                                        let wi0 = (wo_lo as isize + off_w) as usize;
                                        let n = wo_hi - wo_lo + 1;
                                        let xr = &xrow[wi0..wi0 + n];
                                        let or = &mut orow[wo_lo..wo_lo + n];
                                        for i in 0..n {
                                            or[i] = or[i] + wv * xr[i];
                                        }
                                    } else {
                                        for wo in wo_lo..=wo_hi {
                                            let wi = ((wo * stride) as isize + off_w) as usize;
                                            orow[wo] = orow[wo] + wv * xrow[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        if frame_parallel(t, macs) {
            out.par_chunks_mut(out_frame).enumerate().for_each(|(to, f)| body(to, f));
        } else {
            out.chunks_mut(out_frame).enumerate().for_each(|(to, f)| body(to, f));
        }
        Tensor::new(vec![t, cout, hp, wp], out, g.track(&[x, w, b]))?
    };
    g.add_macs(macs);
    g.record(
        vec![x.clone(), w.clone(), b.clone()],
        out.clone(),
        Box::new(Conv3dBackward { stride, pad }),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_valid_conv_sums_the_window() {
        let mut g = Graph::inference();
        let x = Tensor::<f32>::ones(vec![1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(vec![1, 1, 3, 3]);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d_per_frame(&mut g, &x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn impulse_response_is_the_kernel_footprint() {
        let mut g = Graph::inference();
        let mut data = vec![0.0f32; 25];
        data[2 * 5 + 2] = 1.0;
        let x = Tensor::from_vec(vec![1, 1, 5, 5], data).unwrap();
        let w = Tensor::<f32>::ones(vec![1, 1, 3, 3]);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d_per_frame(&mut g, &x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        let ys = y.to_vec();
        for h in 0..5 {
            for w_ in 0..5 {
                let expected = if (1..=3).contains(&h) && (1..=3).contains(&w_) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(ys[h * 5 + w_], expected, "at ({h},{w_})");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_descriptive_error() {
        let mut g = Graph::<f32>::inference();
        let x = Tensor::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::zeros(vec![2, 4, 3, 3]);
        let b = Tensor::zeros(vec![2]);
        let err = conv2d_per_frame(&mut g, &x, &w, &b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("Cin=4"), "{err}");
    }

    #[test]
    fn dilated_impulse_response() {
        let mut g = Graph::inference();
        let x = Tensor::from_vec(vec![5, 1, 1, 1], vec![0.0f32, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let w = Tensor::<f32>::ones(vec![1, 1, 3]);
        let b = Tensor::zeros(vec![1]);
        let y = conv1d_temporal(&mut g, &x, &w, &b, 2).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        let y1 = conv1d_temporal(&mut g, &x, &w, &b, 1).unwrap();
        assert_eq!(y1.to_vec(), vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn temporal_extent_is_preserved() {
        let mut g = Graph::inference();
        for t in [1usize, 2, 5, 9] {
            for d in [1usize, 2, 3, 5] {
                let x = Tensor::<f32>::ones(vec![t, 2, 2, 2]);
                let w = Tensor::<f32>::ones(vec![3, 2, 3]);
                let b = Tensor::zeros(vec![3]);
                let y = conv1d_temporal(&mut g, &x, &w, &b, d).unwrap();
                assert_eq!(y.dim(0), t, "T changed for t={t}, d={d}");
            }
        }
    }

    #[test]
    fn conv3d_preserves_t_and_matches_2d_when_kt_is_1() {
        let mut g = Graph::inference();
        let x = Tensor::from_vec(
            vec![2, 2, 4, 4],
            (0..64).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let wdata: Vec<f32> = (0..2 * 2 * 9).map(|i| (i as f32 * 0.11).cos()).collect();
        let w2 = Tensor::from_vec(vec![2, 2, 3, 3], wdata.clone()).unwrap();
        let w3 = Tensor::from_vec(vec![2, 2, 1, 3, 3], wdata).unwrap();
        let b = Tensor::from_vec(vec![2], vec![0.3f32, -0.2]).unwrap();
        let y2 = conv2d_per_frame(&mut g, &x, &w2, &b, 1, 1).unwrap();
        let y3 = conv3d(&mut g, &x, &w3, &b, 1, 1).unwrap();
        assert_eq!(y2.shape(), y3.shape());
        for (a, b) in y2.to_vec().iter().zip(y3.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
