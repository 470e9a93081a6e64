use rayon::prelude::*;

use crate::error::{Result, TanError};
use crate::graph::{Backward, Graph};
use crate::ops::{dims4, frame_parallel};
use crate::tensor::{Scalar, Tensor};

/// Pooling geometry shared by max and average pooling. Spatial windows may
/// be zero-padded (`pad_s`); padded cells are ignored, i.e. windows are
/// clipped to the valid input region. No temporal padding.
#[derive(Debug, Clone, Copy)]
pub struct PoolGeom {
    pub kt: usize,
    pub st: usize,
    pub ks: usize,
    pub ss: usize,
    pub pad_s: usize,
}

impl PoolGeom {
    pub fn spatial(k: usize, stride: usize, pad: usize) -> Self {
        PoolGeom {
            kt: 1,
            st: 1,
            ks: k,
            ss: stride,
            pad_s: pad,
        }
    }

    fn validate(&self, op: &'static str, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        if self.kt == 0 || self.st == 0 || self.ks == 0 || self.ss == 0 {
            return Err(TanError::shape(op, "kernel and stride must be >= 1".to_string()));
        }
        if t < self.kt {
            return Err(TanError::shape(
                op,
                format!("temporal extent {t} smaller than pool kernel {}", self.kt),
            ));
        }
        if h + 2 * self.pad_s < self.ks || w + 2 * self.pad_s < self.ks {
            return Err(TanError::shape(
                op,
                format!(
                    "padded spatial extent {}x{} smaller than pool kernel {}",
                    h + 2 * self.pad_s,
                    w + 2 * self.pad_s,
                    self.ks
                ),
            ));
        }
        let tp = (t - self.kt) / self.st + 1;
        let hp = (h + 2 * self.pad_s - self.ks) / self.ss + 1;
        let wp = (w + 2 * self.pad_s - self.ks) / self.ss + 1;
        Ok((tp, hp, wp))
    }

    /// Clipped window bounds for one output position, in input coordinates
    /// (all half-open).
    #[inline]
    fn window(
        &self,
        to: usize,
        ho: usize,
        wo: usize,
        t: usize,
        h: usize,
        w: usize,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let t0 = to * self.st;
        let t1 = (t0 + self.kt).min(t);
        let h0 = (ho * self.ss).saturating_sub(self.pad_s);
        let h1 = ((ho * self.ss + self.ks) as isize - self.pad_s as isize).clamp(0, h as isize) as usize;
        let w0 = (wo * self.ss).saturating_sub(self.pad_s);
        let w1 = ((wo * self.ss + self.ks) as isize - self.pad_s as isize).clamp(0, w as isize) as usize;
        (t0..t1, h0..h1, w0..w1)
    }
}

struct MaxPoolBackward {
    argmax: Vec<u32>,
    in_numel: usize,
}

impl<T: Scalar> Backward<T> for MaxPoolBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0].requires_grad().then(|| {
            let mut dx = vec![T::zero(); self.in_numel];
            for (&idx, &gv) in self.argmax.iter().zip(g.iter()) {
                let i = idx as usize;
                dx[i] = dx[i] + gv;
            }
            dx
        });
        vec![dx]
    }
}

/// Max pooling over temporal and spatial windows; gradient routes to the
/// argmax position, first occurrence in row-major (t, h, w) scan on ties.
pub fn maxpool3d<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, geom: PoolGeom) -> Result<Tensor<T>> {
    let (t, c, h, w) = dims4("maxpool", x)?;
    let (tp, hp, wp) = geom.validate("maxpool", t, h, w)?;
    let in_numel = x.numel();

    let (out, argmax) = {
        let xs = x.read();
        let out_frame = c * hp * wp;
        let mut out = vec![T::zero(); tp * out_frame];
        let mut argmax = vec![0u32; tp * out_frame];
        let body = |to: usize, of: &mut [T], af: &mut [u32]| {
            for ci in 0..c {
                for ho in 0..hp {
                    for wo in 0..wp {
                        let (tr, hr, wr) = geom.window(to, ho, wo, t, h, w);
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0u32;
                        for ti in tr.clone() {
                            for hi in hr.clone() {
                                let base = ((ti * c + ci) * h + hi) * w;
                                for wi in wr.clone() {
                                    let v = xs[base + wi];
                                    if v > best {
                                        best = v;
                                        best_idx = (base + wi) as u32;
                                    }
                                }
                            }
                        }
                        let o = (ci * hp + ho) * wp + wo;
                        of[o] = best;
                        af[o] = best_idx;
                    }
                }
            }
        };
        if frame_parallel(tp, (tp * out_frame * geom.kt * geom.ks * geom.ks) as u64) {
            out.par_chunks_mut(out_frame)
                .zip(argmax.par_chunks_mut(out_frame))
                .enumerate()
                .for_each(|(to, (of, af))| body(to, of, af));
        } else {
            out.chunks_mut(out_frame)
                .zip(argmax.chunks_mut(out_frame))
                .enumerate()
                .for_each(|(to, (of, af))| body(to, of, af));
        }
        (
            Tensor::new(vec![tp, c, hp, wp], out, g.track(&[x]))?,
            argmax,
        )
    };
    g.record(
        vec![x.clone()],
        out.clone(),
        Box::new(MaxPoolBackward { argmax, in_numel }),
    );
    Ok(out)
}

/// Per-frame spatial max pooling with no padding: [T,C,H,W] -> [T,C,H',W'],
/// H' = (H - k)/stride + 1.
pub fn maxpool2d_per_frame<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    maxpool3d(g, x, PoolGeom::spatial(k, stride, 0))
}

struct AvgPoolBackward {
    geom: PoolGeom,
    in_dims: (usize, usize, usize, usize),
}

impl<T: Scalar> Backward<T> for AvgPoolBackward {
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0].requires_grad().then(|| {
            let (t, c, h, w) = self.in_dims;
            let (tp, hp, wp) = (out.dim(0), out.dim(2), out.dim(3));
            let mut dx = vec![T::zero(); inputs[0].numel()];
            for to in 0..tp {
                for ci in 0..c {
                    for ho in 0..hp {
                        for wo in 0..wp {
                            let (tr, hr, wr) = self.geom.window(to, ho, wo, t, h, w);
                            let count = tr.len() * hr.len() * wr.len();
                            let gv = g[((to * c + ci) * hp + ho) * wp + wo]
                                / T::from_count(count);
                            for ti in tr.clone() {
                                for hi in hr.clone() {
                                    let base = ((ti * c + ci) * h + hi) * w;
                                    for wi in wr.clone() {
                                        dx[base + wi] = dx[base + wi] + gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dx
        });
        vec![dx]
    }
}

/// Average pooling with the same geometry rules as [`maxpool3d`]; the mean
/// is over the clipped (valid) window. Used by the linearized probes in
/// place of max pooling.
pub fn avgpool3d<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, geom: PoolGeom) -> Result<Tensor<T>> {
    let (t, c, h, w) = dims4("avgpool", x)?;
    let (tp, hp, wp) = geom.validate("avgpool", t, h, w)?;

    let out = {
        let xs = x.read();
        let mut out = vec![T::zero(); tp * c * hp * wp];
        for to in 0..tp {
            for ci in 0..c {
                for ho in 0..hp {
                    for wo in 0..wp {
                        let (tr, hr, wr) = geom.window(to, ho, wo, t, h, w);
                        let count = tr.len() * hr.len() * wr.len();
                        let mut acc = T::zero();
                        for ti in tr.clone() {
                            for hi in hr.clone() {
                                let base = ((ti * c + ci) * h + hi) * w;
                                for wi in wr.clone() {
                                    acc = acc + xs[base + wi];
                                }
                            }
                        }
                        out[((to * c + ci) * hp + ho) * wp + wo] = acc / T::from_count(count);
                    }
                }
            }
        }
        Tensor::new(vec![tp, c, hp, wp], out, g.track(&[x]))?
    };
    g.record(
        vec![x.clone()],
        out.clone(),
        Box::new(AvgPoolBackward {
            geom,
            in_dims: (t, c, h, w),
        }),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    #[test]
    fn two_by_two_window_takes_the_max() {
        let mut g = Graph::inference();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2d_per_frame(&mut g, &x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 4.0);
    }

    #[test]
    fn tie_routes_gradient_to_first_position() {
        let mut g = Graph::recording();
        let x = Tensor::<f32>::param(vec![1, 1, 2, 2], vec![7.0; 4]).unwrap();
        let y = maxpool2d_per_frame(&mut g, &x, 2, 2).unwrap();
        assert_eq!(y.item(), 7.0);
        let s = sum(&mut g, &y).unwrap();
        g.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn kernel_larger_than_input_is_an_error() {
        let mut g = Graph::<f32>::inference();
        let x = Tensor::zeros(vec![1, 1, 2, 2]);
        assert!(maxpool2d_per_frame(&mut g, &x, 3, 1).is_err());
    }

    #[test]
    fn padded_pool_halves_even_extents() {
        let mut g = Graph::inference();
        let x = Tensor::<f32>::ones(vec![1, 1, 16, 16]);
        let y = maxpool3d(&mut g, &x, PoolGeom::spatial(3, 2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn temporal_pool_halves_t() {
        let mut g = Graph::inference();
        let x = Tensor::<f32>::ones(vec![16, 2, 4, 4]);
        let geom = PoolGeom {
            kt: 2,
            st: 2,
            ks: 2,
            ss: 2,
            pad_s: 0,
        };
        let y = maxpool3d(&mut g, &x, geom).unwrap();
        assert_eq!(y.shape(), &[8, 2, 2, 2]);
    }

    #[test]
    fn avgpool_matches_mean_on_clipped_windows() {
        let mut g = Graph::inference();
        // 3x3 window, stride 2, pad 1 on a 4x4 ramp: corner windows clip to 2x2.
        let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let x = Tensor::from_vec(vec![1, 1, 4, 4], data).unwrap();
        let y = avgpool3d(&mut g, &x, PoolGeom::spatial(3, 2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // top-left clipped window = {0,1,4,5} -> 2.5
        assert_eq!(y.to_vec()[0], 2.5);
    }
}
