use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward, deconv_backward, deconv_forward};
use super::tensor::{FeatureMap, Scalar};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Feature-map width of every hidden layer.
pub const HIDDEN_CHANNELS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkKind {
    /// Feature description network, in front of the codec.
    Fdnn,
    /// Post-processing network, after the codec.
    Ppnn,
    /// Virtual codec network, training-time proxy for codec + post-processing.
    Vcnn,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::Fdnn, NetworkKind::Ppnn, NetworkKind::Vcnn];

    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Fdnn => "fdnn",
            NetworkKind::Ppnn => "ppnn",
            NetworkKind::Vcnn => "vcnn",
        }
    }

    pub fn spec(self) -> Vec<LayerSpec> {
        match self {
            NetworkKind::Fdnn => fdnn_spec(),
            NetworkKind::Ppnn => ppnn_spec(),
            NetworkKind::Vcnn => vcnn_spec(),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            NetworkKind::Fdnn => 0,
            NetworkKind::Ppnn => 1,
            NetworkKind::Vcnn => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        NetworkKind::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetworkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NetworkKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown network `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    const fn conv(kernel: usize, in_channels: usize, out_channels: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            in_channels,
            out_channels,
            stride,
            activation,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }

    /// Number of inputs feeding one output sample, used to scale the
    /// initializer. A stride-`s` transposed convolution reaches each output
    /// through `k²/s²` taps per input channel.
    pub fn fan_in(&self) -> usize {
        let taps = self.in_channels * self.kernel * self.kernel;
        match self.kind {
            LayerKind::Conv => taps,
            LayerKind::Deconv => taps / (self.stride * self.stride),
        }
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.kernel, 3 | 9) || !matches!(self.stride, 1 | 2) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(format!("unsupported layer {self:?}")));
        }
        Ok(())
    }
}

/// Eight convolutions: 9×9 in, a stride-2 3×3 second layer, five 3×3 layers
/// and a linear 9×9 single-channel output. Halves the spatial size.
pub fn fdnn_spec() -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::conv(9, 1, HIDDEN_CHANNELS, 1, Activation::Relu),
        LayerSpec::conv(3, HIDDEN_CHANNELS, HIDDEN_CHANNELS, 2, Activation::Relu),
    ];
    layers.extend((0..5).map(|_| LayerSpec::conv(3, HIDDEN_CHANNELS, HIDDEN_CHANNELS, 1, Activation::Relu)));
    layers.push(LayerSpec::conv(9, HIDDEN_CHANNELS, 1, 1, Activation::None));
    layers
}

/// Seven ReLU convolutions (9×9 then six 3×3) followed by a linear 9×9
/// stride-2 transposed convolution. Doubles the spatial size.
pub fn ppnn_spec() -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::conv(9, 1, HIDDEN_CHANNELS, 1, Activation::Relu)];
    layers.extend((0..6).map(|_| LayerSpec::conv(3, HIDDEN_CHANNELS, HIDDEN_CHANNELS, 1, Activation::Relu)));
    layers.push(LayerSpec {
        kind: LayerKind::Deconv,
        kernel: 9,
        in_channels: HIDDEN_CHANNELS,
        out_channels: 1,
        stride: 2,
        activation: Activation::None,
    });
    layers
}

/// Same architecture as the post-processing network.
pub fn vcnn_spec() -> Vec<LayerSpec> {
    ppnn_spec()
}

/// Weights and biases of one layer. Convolution weights are laid out
/// `[out][in][k][k]`, transposed-convolution weights `[in][out][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Intermediate activations of one forward pass, kept for back-propagation.
/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
pub struct Trace<T> {
    pub activations: Vec<FeatureMap<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &FeatureMap<T> {
        self.activations.last().expect("trace holds the input")
    }
}

/// Parameter gradients, shaped like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn scale(&mut self, factor: T) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().chain(layer.biases.iter_mut()).for_each(|v| *v = *v * factor);
        }
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x = *x + *y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x = *x + *y);
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
    }
}

/// The parameter set of one network together with its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T = f32> {
    kind: NetworkKind,
    specs: Vec<LayerSpec>,
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    /// He-initialized weights (Gaussian, variance 2/fan-in), zero biases.
    /// Identical seeds give bit-identical parameters.
    pub fn init(kind: NetworkKind, seed: u64) -> Self {
        let specs = kind.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(kind.code()) << 56));
        let layers = specs
            .iter()
            .map(|spec| {
                let std = (2.0 / spec.fan_in() as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                LayerParams {
                    weights: (0..spec.weight_len()).map(|_| T::of_f64(normal.sample(&mut rng))).collect(),
                    biases: vec![T::zero(); spec.out_channels],
                }
            })
            .collect();
        NetworkParams { kind, specs, layers }
    }

    /// All-zero parameters.
    pub fn zeros(kind: NetworkKind) -> Self {
        let specs = kind.spec();
        let layers = specs
            .iter()
            .map(|s| LayerParams {
                weights: vec![T::zero(); s.weight_len()],
                biases: vec![T::zero(); s.out_channels],
            })
            .collect();
        NetworkParams { kind, specs, layers }
    }

    pub(crate) fn from_parts(kind: NetworkKind, specs: Vec<LayerSpec>, layers: Vec<LayerParams<T>>) -> Result<Self> {
        if specs.len() != layers.len() {
            return Err(Error::InvalidArgument("layer count does not match the spec list".into()));
        }
        for (spec, layer) in specs.iter().zip(&layers) {
            spec.validate()?;
            if layer.weights.len() != spec.weight_len() || layer.biases.len() != spec.out_channels {
                return Err(Error::InvalidArgument(format!("tensor shapes do not match {spec:?}")));
            }
        }
        Ok(NetworkParams { kind, specs, layers })
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .all(|v| v.is_finite())
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: vec![T::zero(); l.weights.len()],
                    biases: vec![T::zero(); l.biases.len()],
                })
                .collect(),
        }
    }

    /// Flat views of every tensor, weights before biases, layer by layer.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            kind: self.kind,
            specs: self.specs.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                    biases: l.biases.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for v in self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases)) {
            for b in v.as_f64().to_bits().to_le_bytes() {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }

    /// Output `(height, width)` for a given input size.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        self.specs.iter().fold((h, w), |(h, w), s| match s.kind {
            LayerKind::Conv => (h.div_ceil(s.stride), w.div_ceil(s.stride)),
            LayerKind::Deconv => (h * s.stride, w * s.stride),
        })
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if self.kind == NetworkKind::Fdnn && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::OddDimensions { height: h, width: w });
        }
        if !self.is_finite() {
            return Err(Error::NonFinite(format!("{} parameters", self.kind)));
        }
        Ok(())
    }

    /// Runs the network on an image.
    pub fn forward(&self, input: &Image) -> Result<Image> {
        self.check_input(input.height(), input.width())?;
        let mut scratch = Vec::new();
        let mut x = FeatureMap::from_image(input);
        for (spec, layer) in self.specs.iter().zip(&self.layers) {
            x = self.layer_forward(spec, layer, &x, &mut scratch);
        }
        Ok(x.to_image())
    }

    /// Forward pass retaining every activation.
    pub fn forward_trace(&self, input: &Image) -> Result<Trace<T>> {
        self.check_input(input.height(), input.width())?;
        let mut scratch = Vec::new();
        let mut activations = vec![FeatureMap::from_image(input)];
        for (spec, layer) in self.specs.iter().zip(&self.layers) {
            let next = self.layer_forward(spec, layer, activations.last().unwrap(), &mut scratch);
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    fn layer_forward(&self, spec: &LayerSpec, layer: &LayerParams<T>, x: &FeatureMap<T>, scratch: &mut Vec<T>) -> FeatureMap<T> {
        let mut y = match spec.kind {
            LayerKind::Conv => conv_forward(x, &layer.weights, &layer.biases, spec.out_channels, spec.kernel, spec.stride, scratch),
            LayerKind::Deconv => deconv_forward(x, &layer.weights, &layer.biases, spec.out_channels, spec.kernel, spec.stride, scratch),
        };
        if spec.activation == Activation::Relu {
            y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        y
    }

    /// Back-propagates `grad_output` (gradient of a scalar loss with respect
    /// to the network output) through a recorded trace.
    ///
    /// Parameter gradients are accumulated into `grads` when given; leaving
    /// it `None` skips that work, as for a frozen network. Returns the
    /// gradient with respect to the input when `want_input` is set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_output: &Image,
        mut grads: Option<&mut Gradients<T>>,
        want_input: bool,
    ) -> Result<Option<Image>> {
        let out = trace.output();
        if (out.height, out.width) != grad_output.dims() {
            return Err(Error::DimensionMismatch {
                left: (out.height, out.width),
                right: grad_output.dims(),
            });
        }
        let mut scratch = Vec::new();
        let mut g = FeatureMap::from_image(grad_output);
        for i in (0..self.specs.len()).rev() {
            let spec = &self.specs[i];
            let layer = &self.layers[i];
            if spec.activation == Activation::Relu {
                let post = &trace.activations[i + 1];
                g.data.iter_mut().zip(&post.data).for_each(|(d, &a)| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            let param_grads = grads.as_deref_mut().map(|gr| {
                let lg = &mut gr.layers[i];
                (lg.weights.as_mut_slice(), lg.biases.as_mut_slice())
            });
            let need_input = i > 0 || want_input;
            let input = &trace.activations[i];
            let next = match spec.kind {
                LayerKind::Conv => conv_backward(input, &g, &layer.weights, spec.kernel, spec.stride, param_grads, need_input, &mut scratch),
                LayerKind::Deconv => deconv_backward(input, &g, &layer.weights, spec.kernel, spec.stride, param_grads, need_input, &mut scratch),
            };
            match next {
                Some(n) => g = n,
                None => return Ok(None),
            }
        }
        Ok(Some(g.to_image()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fdnn_layout() {
        let s = fdnn_spec();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|l| l.kind == LayerKind::Conv));
        assert_eq!((s[0].kernel, s[0].in_channels, s[0].stride), (9, 1, 1));
        assert_eq!((s[1].kernel, s[1].stride), (3, 2));
        assert!(s[2..7].iter().all(|l| l.kernel == 3 && l.stride == 1));
        assert!(s[..7].iter().all(|l| l.out_channels == 128 && l.activation == Activation::Relu));
        assert_eq!((s[7].kernel, s[7].out_channels, s[7].activation), (9, 1, Activation::None));
    }

    #[test]
    fn ppnn_layout() {
        let s = ppnn_spec();
        assert_eq!(s.len(), 8);
        assert_eq!(s.iter().filter(|l| l.kind == LayerKind::Conv).count(), 7);
        assert_eq!(s[0].kernel, 9);
        assert!(s[1..7].iter().all(|l| l.kernel == 3));
        assert!(s[..7].iter().all(|l| l.out_channels == 128 && l.stride == 1 && l.activation == Activation::Relu));
        let d = s[7];
        assert_eq!((d.kind, d.kernel, d.stride, d.out_channels, d.activation), (LayerKind::Deconv, 9, 2, 1, Activation::None));
        assert_eq!(vcnn_spec(), s);
    }

    #[test]
    fn init_is_seeded() {
        let a = NetworkParams::<f32>::init(NetworkKind::Ppnn, 1);
        let b = NetworkParams::<f32>::init(NetworkKind::Ppnn, 1);
        let c = NetworkParams::<f32>::init(NetworkKind::Ppnn, 2);
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a, c);
        assert!(a.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn he_variance_on_hidden_layers() {
        let p = NetworkParams::<f64>::init(NetworkKind::Fdnn, 5);
        for (spec, layer) in p.specs().iter().zip(p.layers()).filter(|(s, _)| s.in_channels == 128 && s.out_channels == 128) {
            let n = layer.weights.len() as f64;
            let mean = layer.weights.iter().sum::<f64>() / n;
            let var = layer.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let expected = 2.0 / spec.fan_in() as f64;
            assert!((var / expected - 1.0).abs() < 0.2, "var {var} expected {expected}");
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let img = Image::from_fn(16, 16, |y, x| (y + x) as f64 / 32.0);
        for kind in NetworkKind::ALL {
            let out = NetworkParams::<f32>::zeros(kind).forward(&img).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_input_to_fdnn_rejected() {
        let p = NetworkParams::<f32>::zeros(NetworkKind::Fdnn);
        assert!(matches!(p.forward(&Image::zeros(15, 16)), Err(Error::OddDimensions { .. })));
    }

    #[test]
    fn nan_parameters_rejected() {
        let mut p = NetworkParams::<f32>::zeros(NetworkKind::Ppnn);
        p.layers_mut()[3].weights[7] = f32::NAN;
        assert!(matches!(p.forward(&Image::zeros(8, 8)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn last_layer_is_linear() {
        // a large negative final bias must come through unclipped
        let img = Image::filled(8, 8, 0.5);
        for kind in NetworkKind::ALL {
            let mut p = NetworkParams::<f32>::init(kind, 3);
            let last = p.layers_mut().last_mut().unwrap();
            last.biases[0] = -100.0;
            let trace = p.forward_trace(&img).unwrap();
            assert!(trace.output().data.iter().all(|&v| v < 0.0));
            for act in &trace.activations[1..trace.activations.len() - 1] {
                assert!(act.data.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn output_dims() {
        let f = NetworkParams::<f32>::zeros(NetworkKind::Fdnn);
        let p = NetworkParams::<f32>::zeros(NetworkKind::Ppnn);
        assert_eq!(f.output_dims(160, 160), (80, 80));
        assert_eq!(p.output_dims(80, 80), (160, 160));
        assert_eq!(p.output_dims(f.output_dims(42, 18).0, f.output_dims(42, 18).1), (42, 18));
    }

    #[test]
    fn networks_hold_independent_parameters() {
        let ppnn = NetworkParams::<f32>::init(NetworkKind::Ppnn, 9);
        let mut vcnn = NetworkParams::<f32>::init(NetworkKind::Vcnn, 9);
        let before = ppnn.checksum();
        vcnn.layers_mut()[0].weights[0] += 1.0;
        assert_eq!(ppnn.checksum(), before);
    }
}
