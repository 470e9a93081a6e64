//! The two building blocks of the network: the spatial bottleneck
//! (1x1 reduce -> 3x3 -> 1x1 expand, residual) applied per frame, and the
//! temporal aggregation module (parallel dilated temporal convolutions
//! plus an identity path, fused by element-wise sum and ReLU).

use crate::error::{Result, TanError};
use crate::graph::Graph;
use crate::ops;
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub spatial_stride: usize,
}

impl BottleneckSpec {
    /// ResNet convention: mid width is a quarter of the output width.
    pub fn with_default_mid(in_channels: usize, out_channels: usize, spatial_stride: usize) -> Self {
        BottleneckSpec {
            in_channels,
            mid_channels: (out_channels / 4).max(1),
            out_channels,
            spatial_stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.mid_channels == 0 || self.out_channels == 0 {
            return Err(TanError::Config(format!("bottleneck channels must be positive: {self:?}")));
        }
        if self.spatial_stride == 0 {
            return Err(TanError::Config("bottleneck stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Projection shortcut is needed exactly when identity cannot carry
    /// the residual.
    pub fn needs_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.spatial_stride != 1
    }

    /// Analytic parameter count (weights plus biases of all convs,
    /// including the projection when present).
    pub fn param_count(&self) -> usize {
        let reduce = self.in_channels * self.mid_channels + self.mid_channels;
        let conv = self.mid_channels * self.mid_channels * 9 + self.mid_channels;
        let expand = self.mid_channels * self.out_channels + self.out_channels;
        let proj = if self.needs_projection() {
            self.in_channels * self.out_channels + self.out_channels
        } else {
            0
        };
        reduce + conv + expand + proj
    }
}

pub struct BottleneckWeights<T: Scalar> {
    pub reduce_w: Tensor<T>,
    pub reduce_b: Tensor<T>,
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub expand_w: Tensor<T>,
    pub expand_b: Tensor<T>,
    pub proj: Option<(Tensor<T>, Tensor<T>)>,
}

fn he_normal<T: Scalar>(rng: &mut SplitMix64, shape: Vec<usize>, fan_in: usize, scale: f64) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt() * scale;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64c(rng.next_normal() * std)).collect();
    Tensor::param(shape, data).expect("consistent by construction")
}

impl<T: Scalar> BottleneckWeights<T> {
    /// He-normal (fan-in) weights, zero biases.
    pub fn init(spec: &BottleneckSpec, rng: &mut SplitMix64) -> Self {
        let (cin, mid, cout) = (spec.in_channels, spec.mid_channels, spec.out_channels);
        BottleneckWeights {
            reduce_w: he_normal(rng, vec![mid, cin, 1, 1], cin, 1.0),
            reduce_b: Tensor::param(vec![mid], vec![T::zero(); mid]).unwrap(),
            conv_w: he_normal(rng, vec![mid, mid, 3, 3], mid * 9, 1.0),
            conv_b: Tensor::param(vec![mid], vec![T::zero(); mid]).unwrap(),
            expand_w: he_normal(rng, vec![cout, mid, 1, 1], mid, 1.0),
            expand_b: Tensor::param(vec![cout], vec![T::zero(); cout]).unwrap(),
            proj: spec.needs_projection().then(|| {
                (
                    he_normal(rng, vec![cout, cin, 1, 1], cin, 1.0),
                    Tensor::param(vec![cout], vec![T::zero(); cout]).unwrap(),
                )
            }),
        }
    }

    /// Total scalars held, for checking the analytic count.
    pub fn stored_param_count(&self) -> usize {
        let mut n = self.reduce_w.numel()
            + self.reduce_b.numel()
            + self.conv_w.numel()
            + self.conv_b.numel()
            + self.expand_w.numel()
            + self.expand_b.numel();
        if let Some((w, b)) = &self.proj {
            n += w.numel() + b.numel();
        }
        n
    }
}

/// relu(expand(relu(conv3x3(relu(reduce(x))))) + shortcut(x)); per frame,
/// T untouched. When `linearized` is set the activations become identity
/// (used by the receptive-field probes).
pub fn bottleneck_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    spec: &BottleneckSpec,
    w: &BottleneckWeights<T>,
    linearized: bool,
) -> Result<Tensor<T>> {
    spec.validate()?;
    if x.dim(1) != spec.in_channels {
        return Err(TanError::shape(
            "bottleneck_forward",
            format!("spec expects {} input channels, got {}", spec.in_channels, x.dim(1)),
        ));
    }
    let act = |g: &mut Graph<T>, t: &Tensor<T>| -> Result<Tensor<T>> {
        if linearized {
            Ok(t.clone())
        } else {
            ops::relu(g, t)
        }
    };
    let h = ops::conv2d_per_frame(g, x, &w.reduce_w, &w.reduce_b, 1, 0)?;
    let h = act(g, &h)?;
    // The middle conv is 3x3 per frame, or 3x3x3 when the weights carry a
    // temporal extent (the 3-D convolution variant).
    let h = if w.conv_w.ndim() == 5 {
        ops::conv3d(g, &h, &w.conv_w, &w.conv_b, spec.spatial_stride, 1)?
    } else {
        ops::conv2d_per_frame(g, &h, &w.conv_w, &w.conv_b, spec.spatial_stride, 1)?
    };
    let h = act(g, &h)?;
    let h = ops::conv2d_per_frame(g, &h, &w.expand_w, &w.expand_b, 1, 0)?;
    let shortcut = match &w.proj {
        Some((pw, pb)) => ops::conv2d_per_frame(g, x, pw, pb, spec.spatial_stride, 0)?,
        None => x.clone(),
    };
    let sum = ops::add(g, &h, &shortcut)?;
    act(g, &sum)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaModuleSpec {
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
}

impl TaModuleSpec {
    pub fn new(channels: usize, dilations: Vec<usize>) -> Self {
        TaModuleSpec {
            channels,
            kernel: 3,
            dilations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(TanError::Config("temporal aggregation channels must be positive".into()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(TanError::Config(format!("temporal kernel must be odd, got {}", self.kernel)));
        }
        if self.dilations.is_empty() {
            return Err(TanError::Config("dilation set must be non-empty".into()));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(TanError::Config("dilations must be strictly positive".into()));
        }
        let mut seen = self.dilations.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.dilations.len() {
            return Err(TanError::Config(format!("dilations must be distinct: {:?}", self.dilations)));
        }
        Ok(())
    }

    /// |dilations| * (C^2 k + C): one full-channel-mixing temporal conv
    /// plus bias per branch.
    pub fn param_count(&self) -> usize {
        self.dilations.len() * (self.channels * self.channels * self.kernel + self.channels)
    }
}

pub struct TaWeights<T: Scalar> {
    /// One (weight [C,C,k], bias [C]) pair per dilation, in spec order.
    pub branches: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> TaWeights<T> {
    /// He-normal scaled by 1/|dilations| so the initial branch sum has
    /// unit-order variance; zero biases.
    pub fn init(spec: &TaModuleSpec, rng: &mut SplitMix64) -> Self {
        let c = spec.channels;
        let scale = 1.0 / spec.dilations.len() as f64;
        let branches = spec
            .dilations
            .iter()
            .map(|_| {
                (
                    he_normal(rng, vec![c, c, spec.kernel], c * spec.kernel, scale),
                    Tensor::param(vec![c], vec![T::zero(); c]).unwrap(),
                )
            })
            .collect();
        TaWeights { branches }
    }

    pub fn stored_param_count(&self) -> usize {
        self.branches.iter().map(|(w, b)| w.numel() + b.numel()).sum()
    }
}

/// relu(x + sum over branches of conv1d_temporal(x, dilation_i)); output
/// shape identical to the input in all four dimensions.
pub fn ta_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    spec: &TaModuleSpec,
    w: &TaWeights<T>,
    linearized: bool,
) -> Result<Tensor<T>> {
    spec.validate()?;
    if x.dim(1) != spec.channels {
        return Err(TanError::shape(
            "ta_forward",
            format!("spec expects {} channels, got {}", spec.channels, x.dim(1)),
        ));
    }
    if w.branches.len() != spec.dilations.len() {
        return Err(TanError::shape(
            "ta_forward",
            format!(
                "{} weight branches for {} dilations",
                w.branches.len(),
                spec.dilations.len()
            ),
        ));
    }
    let mut acc = x.clone();
    for (&d, (bw, bb)) in spec.dilations.iter().zip(&w.branches) {
        let branch = ops::conv1d_temporal(g, x, bw, bb, d)?;
        acc = ops::add(g, &acc, &branch)?;
    }
    if linearized {
        Ok(acc)
    } else {
        ops::relu(g, &acc)
    }
}

/// Union of branch footprints plus the identity path: 1 + max(d)*(k-1)
/// frames.
pub fn ta_receptive_field(spec: &TaModuleSpec) -> usize {
    let dmax = spec.dilations.iter().copied().max().unwrap_or(0);
    1 + dmax * (spec.kernel - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_weights(spec: &BottleneckSpec) -> BottleneckWeights<f32> {
        let (cin, mid, cout) = (spec.in_channels, spec.mid_channels, spec.out_channels);
        BottleneckWeights {
            reduce_w: Tensor::zeros(vec![mid, cin, 1, 1]),
            reduce_b: Tensor::zeros(vec![mid]),
            conv_w: Tensor::zeros(vec![mid, mid, 3, 3]),
            conv_b: Tensor::zeros(vec![mid]),
            expand_w: Tensor::zeros(vec![cout, mid, 1, 1]),
            expand_b: Tensor::zeros(vec![cout]),
            proj: None,
        }
    }

    #[test]
    fn zero_weight_bottleneck_is_relu_of_input() {
        let spec = BottleneckSpec::with_default_mid(4, 4, 1);
        let w = zero_weights(&spec);
        let mut g = Graph::inference();
        let data: Vec<f32> = (0..4 * 4 * 9).map(|i| (i as f32 * 0.7).sin()).collect();
        let x = Tensor::from_vec(vec![4, 4, 3, 3], data.clone()).unwrap();
        let y = bottleneck_forward(&mut g, &x, &spec, &w, false).unwrap();
        let expected: Vec<f32> = data.iter().map(|&v| v.max(0.0)).collect();
        assert_eq!(y.to_vec(), expected);
    }

    #[test]
    fn shape_preserved_when_cin_equals_cout() {
        let spec = BottleneckSpec::with_default_mid(8, 8, 1);
        let mut rng = SplitMix64::new(3);
        let w = BottleneckWeights::<f32>::init(&spec, &mut rng);
        let mut g = Graph::inference();
        let x = Tensor::ones(vec![5, 8, 6, 6]);
        let y = bottleneck_forward(&mut g, &x, &spec, &w, false).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn bottleneck_param_count_matches_enumeration() {
        // Cin=Cout=64, mid=16, no projection:
        // (64*16+16) + (16*16*9+16) + (16*64+64) = 4448
        let spec = BottleneckSpec::with_default_mid(64, 64, 1);
        assert_eq!(spec.mid_channels, 16);
        assert!(!spec.needs_projection());
        assert_eq!(spec.param_count(), 4448);
        let mut rng = SplitMix64::new(1);
        let w = BottleneckWeights::<f32>::init(&spec, &mut rng);
        assert_eq!(w.stored_param_count(), spec.param_count());
    }

    #[test]
    fn projection_appears_exactly_when_needed() {
        assert!(!BottleneckSpec::with_default_mid(32, 32, 1).needs_projection());
        assert!(BottleneckSpec::with_default_mid(16, 32, 1).needs_projection());
        assert!(BottleneckSpec::with_default_mid(32, 32, 2).needs_projection());
    }

    #[test]
    fn bottleneck_never_changes_t() {
        let mut rng = SplitMix64::new(5);
        for t in [1usize, 3, 16] {
            let spec = BottleneckSpec::with_default_mid(4, 8, 2);
            let w = BottleneckWeights::<f32>::init(&spec, &mut rng);
            let mut g = Graph::inference();
            let x = Tensor::ones(vec![t, 4, 8, 8]);
            let y = bottleneck_forward(&mut g, &x, &spec, &w, false).unwrap();
            assert_eq!(y.dim(0), t);
        }
    }

    #[test]
    fn zero_weight_ta_is_relu_of_input() {
        let spec = TaModuleSpec::new(4, vec![1, 2, 3]);
        let w = TaWeights {
            branches: (0..3)
                .map(|_| (Tensor::<f32>::zeros(vec![4, 4, 3]), Tensor::zeros(vec![4])))
                .collect(),
        };
        let mut g = Graph::inference();
        let data: Vec<f32> = (0..6 * 4 * 4).map(|i| (i as f32 * 0.3).cos()).collect();
        let x = Tensor::from_vec(vec![6, 4, 2, 2], data.clone()).unwrap();
        let y = ta_forward(&mut g, &x, &spec, &w, false).unwrap();
        let expected: Vec<f32> = data.iter().map(|&v| v.max(0.0)).collect();
        assert_eq!(y.to_vec(), expected);
    }

    #[test]
    fn ta_preserves_shape_on_default_spec() {
        let spec = TaModuleSpec::new(8, vec![1, 2, 3]);
        let mut rng = SplitMix64::new(7);
        let w = TaWeights::<f32>::init(&spec, &mut rng);
        let mut g = Graph::inference();
        let x = Tensor::ones(vec![16, 8, 4, 4]);
        let y = ta_forward(&mut g, &x, &spec, &w, false).unwrap();
        assert_eq!(y.shape(), &[16, 8, 4, 4]);
    }

    #[test]
    fn ta_param_count_matches_enumeration() {
        // C=16, k=3, dilations [1,2,3]: 3*(16*16*3+16) = 2352
        let spec = TaModuleSpec::new(16, vec![1, 2, 3]);
        assert_eq!(spec.param_count(), 2352);
        let mut rng = SplitMix64::new(11);
        let w = TaWeights::<f32>::init(&spec, &mut rng);
        assert_eq!(w.stored_param_count(), 2352);
    }

    #[test]
    fn ta_is_cheaper_than_one_full_3d_conv_at_equal_width() {
        // 3*(3C^2+C) < 27C^2+C for the default spec across desk widths.
        for c in [8usize, 16, 32, 64] {
            let ta = TaModuleSpec::new(c, vec![1, 2, 3]).param_count();
            let conv3d_full = 27 * c * c + c;
            assert!(ta < conv3d_full, "C={c}: TA {ta} vs 3D conv {conv3d_full}");
        }
    }

    #[test]
    fn ta_receptive_field_formula() {
        assert_eq!(ta_receptive_field(&TaModuleSpec::new(8, vec![1, 2, 3])), 7);
        assert_eq!(ta_receptive_field(&TaModuleSpec::new(8, vec![1])), 3);
        let pointwise = TaModuleSpec {
            channels: 8,
            kernel: 1,
            dilations: vec![1],
        };
        assert_eq!(ta_receptive_field(&pointwise), 1);
    }

    #[test]
    fn invalid_dilation_sets_are_rejected() {
        assert!(TaModuleSpec::new(8, vec![]).validate().is_err());
        assert!(TaModuleSpec::new(8, vec![0, 1]).validate().is_err());
        assert!(TaModuleSpec::new(8, vec![1, 1]).validate().is_err());
        assert!(TaModuleSpec::new(8, vec![1, 2, 3]).validate().is_ok());
    }
}
