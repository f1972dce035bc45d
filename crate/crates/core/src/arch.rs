//! MobileNetV2 as an ordered layer list with named parameters.
//!
//! Parameter names follow one scheme across the graph:
//!
//! | layer                       | names                                            |
//! |-----------------------------|--------------------------------------------------|
//! | stem 3×3 conv + BN          | `stem.conv.weight`, `stem.bn.*`                  |
//! | block i expansion 1×1 + BN  | `block{i}.expand.weight`, `block{i}.bn1.*`       |
//! | block i depthwise 3×3 + BN  | `block{i}.dw.weight`, `block{i}.bn2.*`           |
//! | block i projection 1×1 + BN | `block{i}.pw.weight`, `block{i}.bn3.*`           |
//! | final 1×1 conv + BN         | `last.conv.weight`, `last.bn.*`                  |
//! | classifier                  | `head.weight`, `head.bias`                       |
//!
//! where `*` is one of `gamma`, `beta`, `running_mean`, `running_var`.
//! Block 0 has expansion factor 1 and therefore no `expand`/`bn1`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeedStream;
use crate::tensor::{
    self, batchnorm_infer_in_place, conv2d, global_avg_pool, linear, relu6_in_place,
    BatchNormParams, ConvParams, Tensor,
};
use crate::{Error, Result};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
pub const INPUT_SHAPE: [usize; 3] = [3, 224, 224];
pub const BN_EPS: f32 = 1e-5;

/// Inverted-residual stages: (expansion, output channels, repeats, first stride).
pub const MOBILENET_V2_STAGES: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvGeometry {
    fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    fn params(&self) -> ConvParams {
        ConvParams {
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Conv(ConvGeometry),
    /// Groups equal input channels equal output channels.
    DepthwiseConv(ConvGeometry),
    BatchNorm {
        channels: usize,
        eps: f32,
    },
    Relu6,
    /// Adds the activation that entered layer `skip_from`.
    Add {
        skip_from: usize,
    },
    GlobalPool,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

/// One layer and the names of the parameter tensors it owns, in a fixed
/// order: conv `[weight, bias?]`, batch norm `[gamma, beta, running_mean,
/// running_var]`, linear `[weight, bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub params: Vec<String>,
}

impl LayerSpec {
    /// Expected shape of each owned parameter, paired with its name.
    pub fn param_shapes(&self) -> Vec<(&str, Vec<usize>)> {
        let shapes: Vec<Vec<usize>> = match self.kind {
            LayerKind::Conv(g) | LayerKind::DepthwiseConv(g) => {
                let mut v = vec![g.weight_dims().to_vec()];
                if g.bias {
                    v.push(vec![g.out_channels]);
                }
                v
            }
            LayerKind::BatchNorm { channels, .. } => vec![vec![channels]; 4],
            LayerKind::Linear {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            LayerKind::Relu6 | LayerKind::Add { .. } | LayerKind::GlobalPool => Vec::new(),
        };
        self.params.iter().map(String::as_str).zip(shapes).collect()
    }

    fn expected_param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) | LayerKind::DepthwiseConv(g) => 1 + g.bias as usize,
            LayerKind::BatchNorm { .. } => 4,
            LayerKind::Linear { .. } => 2,
            _ => 0,
        }
    }
}

/// Parameter totals. `total` counts batch-norm running statistics too.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub trainable: u64,
    pub bn_running_stats: u64,
    pub total: u64,
}

/// Bytes needed to store `count.total` parameters.
pub fn footprint_bytes(count: &ParamCount, bytes_per_param: u64) -> u64 {
    count.total * bytes_per_param
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    num_classes: usize,
    input_shape: [usize; 3],
    bound: bool,
}

impl ModelGraph {
    /// Assembles and validates a graph. The graph starts unbound.
    pub fn new(
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        input_shape: [usize; 3],
    ) -> Result<Self> {
        let num_classes = match layers.last().map(|l| l.kind) {
            Some(LayerKind::Linear { out_features, .. }) => out_features,
            _ => 0,
        };
        let graph = Self {
            layers,
            params,
            num_classes,
            input_shape,
            bound: false,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn is_bound(&self) -> bool {
        self.bound
    }

    /// Parameter names in layer order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter().map(String::as_str))
    }

    /// Treats the current (seeded) parameters as the model's weights.
    pub fn bind_initialized(mut self) -> Self {
        self.bound = true;
        self
    }

    pub(crate) fn set_bound(&mut self, params: BTreeMap<String, Tensor>) {
        self.params = params;
        self.bound = true;
    }

    /// Width of the features fed to the terminal linear layer.
    pub fn feature_width(&self) -> Option<usize> {
        match self.layers.last()?.kind {
            LayerKind::Linear { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    /// Overwrites the terminal linear layer's parameters. Shapes must match.
    pub fn set_head(&mut self, weight: Tensor, bias: Tensor) -> Result<()> {
        for (name, t) in [(HEAD_WEIGHT, &weight), (HEAD_BIAS, &bias)] {
            let current = self
                .params
                .get(name)
                .ok_or_else(|| Error::State(format!("model has no `{name}`")))?;
            if current.dims() != t.dims() {
                return Err(Error::ParamShape {
                    name: name.to_string(),
                    expected: current.dims().to_vec(),
                    found: t.dims().to_vec(),
                });
            }
        }
        self.params.insert(HEAD_WEIGHT.to_string(), weight);
        self.params.insert(HEAD_BIAS.to_string(), bias);
        Ok(())
    }

    /// Re-draws every parameter from `seed`: conv weights uniform in
    /// ±sqrt(3 / fan_in), linear weight and bias uniform in ±1/sqrt(fan_in),
    /// batch norm as the identity (γ=1, β=0, mean 0, var 1).
    pub fn initialize(&mut self, seed: u64) {
        let mut index = 0u64;
        for layer in &self.layers {
            for (slot, (name, dims)) in layer.param_shapes().into_iter().enumerate() {
                let mut rng = SeedStream::derive(seed, index);
                index += 1;
                let tensor = match layer.kind {
                    LayerKind::Conv(g) | LayerKind::DepthwiseConv(g) => {
                        let fan_in = (g.in_channels / g.groups) * g.kernel * g.kernel;
                        let bound = libm::sqrt(3.0 / fan_in as f64);
                        uniform_tensor(&dims, bound, &mut rng)
                    }
                    LayerKind::Linear { in_features, .. } => {
                        uniform_tensor(&dims, 1.0 / libm::sqrt(in_features as f64), &mut rng)
                    }
                    LayerKind::BatchNorm { .. } => {
                        let value = if slot == 0 || slot == 3 { 1.0 } else { 0.0 };
                        Tensor::full(&dims, value).expect("validated dims")
                    }
                    _ => unreachable!("parameterless layer"),
                };
                self.params.insert(name.to_string(), tensor);
            }
        }
    }

    /// Checks parameter coverage and shapes, layer geometry, and that every
    /// residual add joins equal shapes.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for layer in &self.layers {
            if layer.params.len() != layer.expected_param_count() {
                return Err(Error::Shape(format!(
                    "layer `{}` owns {} parameter names, kind needs {}",
                    layer.name,
                    layer.params.len(),
                    layer.expected_param_count()
                )));
            }
            for (name, dims) in layer.param_shapes() {
                if !seen.insert(name) {
                    return Err(Error::Duplicate(name.to_string()));
                }
                let t = self
                    .params
                    .get(name)
                    .ok_or_else(|| Error::MissingParams(vec![name.to_string()]))?;
                if t.dims() != dims.as_slice() {
                    return Err(Error::ParamShape {
                        name: name.to_string(),
                        expected: dims,
                        found: t.dims().to_vec(),
                    });
                }
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(Error::State(format!(
                "parameter `{extra}` is not owned by any layer"
            )));
        }
        self.infer_shapes().map(|_| ())
    }

    /// Activation shape (without the batch axis) entering each layer, plus the
    /// final output shape.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push(cur.clone());
            let err = |msg: String| Error::Shape(format!("layer {i} `{}`: {msg}", layer.name));
            cur = match layer.kind {
                LayerKind::Conv(g) | LayerKind::DepthwiseConv(g) => {
                    if cur.len() != 3 || cur[0] != g.in_channels {
                        return Err(err(format!(
                            "expects {} channels, got {cur:?}",
                            g.in_channels
                        )));
                    }
                    if g.groups == 0
                        || g.stride == 0
                        || g.in_channels % g.groups != 0
                        || g.out_channels % g.groups != 0
                    {
                        return Err(err("inconsistent groups/stride".into()));
                    }
                    if matches!(layer.kind, LayerKind::DepthwiseConv(_))
                        && (g.groups != g.in_channels || g.out_channels != g.in_channels)
                    {
                        return Err(err("depthwise conv needs groups = in = out channels".into()));
                    }
                    let (h, w) = (cur[1] + 2 * g.padding, cur[2] + 2 * g.padding);
                    if h < g.kernel || w < g.kernel {
                        return Err(err("kernel larger than padded input".into()));
                    }
                    vec![
                        g.out_channels,
                        (h - g.kernel) / g.stride + 1,
                        (w - g.kernel) / g.stride + 1,
                    ]
                }
                LayerKind::BatchNorm { channels, .. } => {
                    if cur.len() != 3 || cur[0] != channels {
                        return Err(err(format!("expects {channels} channels, got {cur:?}")));
                    }
                    cur
                }
                LayerKind::Relu6 => cur,
                LayerKind::Add { skip_from } => {
                    if skip_from >= i {
                        return Err(err(format!("skip source {skip_from} is not upstream")));
                    }
                    if shapes[skip_from] != cur {
                        return Err(err(format!(
                            "residual joins {:?} with {cur:?}",
                            shapes[skip_from]
                        )));
                    }
                    cur
                }
                LayerKind::GlobalPool => {
                    if cur.len() != 3 {
                        return Err(err(format!("expects C×H×W, got {cur:?}")));
                    }
                    vec![cur[0]]
                }
                LayerKind::Linear {
                    in_features,
                    out_features,
                } => {
                    if cur != [in_features] {
                        return Err(err(format!("expects [{in_features}], got {cur:?}")));
                    }
                    vec![out_features]
                }
            };
        }
        shapes.push(cur);
        Ok(shapes)
    }

    pub fn count_params(&self) -> ParamCount {
        let mut count = ParamCount::default();
        for layer in &self.layers {
            let sizes = layer
                .param_shapes()
                .into_iter()
                .map(|(_, d)| d.iter().product::<usize>() as u64);
            match layer.kind {
                LayerKind::BatchNorm { channels, .. } => {
                    count.trainable += 2 * channels as u64;
                    count.bn_running_stats += 2 * channels as u64;
                }
                _ => count.trainable += sizes.sum::<u64>(),
            }
        }
        count.total = count.trainable + count.bn_running_stats;
        count
    }

    /// Swaps the terminal linear layer for a freshly initialized one with
    /// `num_classes` outputs (uniform in ±1/sqrt(fan_in), drawn from `seed`).
    /// All other parameters are untouched and the bound state is kept.
    pub fn replace_head(mut self, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Argument("head needs at least one class".into()));
        }
        let last = self
            .layers
            .last_mut()
            .ok_or_else(|| Error::State("empty graph has no head".into()))?;
        let in_features = match last.kind {
            LayerKind::Linear { in_features, .. } => in_features,
            _ => return Err(Error::State("graph does not end in a linear layer".into())),
        };
        last.kind = LayerKind::Linear {
            in_features,
            out_features: num_classes,
        };
        let (weight, bias) = fresh_head(in_features, num_classes, seed);
        let names = last.params.clone();
        self.params.insert(names[0].clone(), weight);
        self.params.insert(names[1].clone(), bias);
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Logits for an N×C×H×W batch. Samples are processed independently, so
    /// row `i` never depends on the other rows.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let feats = self.forward_features(batch)?;
        let (w, b) = self.head()?;
        linear(&feats, w, b)
    }

    /// Activations entering the terminal linear layer, N×F.
    pub fn forward_features(&self, batch: &Tensor) -> Result<Tensor> {
        if !self.bound {
            return Err(Error::State("weights are not bound".into()));
        }
        if self.feature_width().is_none() {
            return Err(Error::State("graph does not end in a linear layer".into()));
        }
        let d = batch.dims();
        if d.len() != 4 || d[1..] != self.input_shape {
            return Err(Error::Shape(format!(
                "forward expects N×{:?}, got {d:?}",
                self.input_shape
            )));
        }
        let body = &self.layers[..self.layers.len() - 1];
        let mut rows = Vec::with_capacity(d[0]);
        for i in 0..d[0] {
            let sample = batch.slice_outer(i)?;
            let mut dims = vec![1];
            dims.extend_from_slice(sample.dims());
            let out = self.run(body, sample.reshape(&dims)?)?;
            rows.push(out.reshape(&[self.feature_width().unwrap_or(0)])?);
        }
        Tensor::stack(&rows)
    }

    fn head(&self) -> Result<(&Tensor, &Tensor)> {
        match (self.params.get(HEAD_WEIGHT), self.params.get(HEAD_BIAS)) {
            (Some(w), Some(b)) => Ok((w, b)),
            _ => Err(Error::State("model has no head parameters".into())),
        }
    }

    fn run(&self, layers: &[LayerSpec], mut x: Tensor) -> Result<Tensor> {
        let skips: BTreeSet<usize> = layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Add { skip_from } => Some(skip_from),
                _ => None,
            })
            .collect();
        let mut stash: BTreeMap<usize, Tensor> = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            if skips.contains(&i) {
                stash.insert(i, x.clone());
            }
            let p = |slot: usize| -> Result<&Tensor> {
                let name = &layer.params[slot];
                self.params
                    .get(name)
                    .ok_or_else(|| Error::MissingParams(vec![name.clone()]))
            };
            x = match layer.kind {
                LayerKind::Conv(g) | LayerKind::DepthwiseConv(g) => {
                    let bias = if g.bias { Some(p(1)?) } else { None };
                    conv2d(&x, p(0)?, bias, g.params())?
                }
                LayerKind::BatchNorm { eps, .. } => {
                    let bn = BatchNormParams {
                        gamma: p(0)?,
                        beta: p(1)?,
                        running_mean: p(2)?,
                        running_var: p(3)?,
                        eps,
                    };
                    batchnorm_infer_in_place(&mut x, bn)?;
                    x
                }
                LayerKind::Relu6 => {
                    relu6_in_place(&mut x);
                    x
                }
                LayerKind::Add { skip_from } => {
                    let skip = stash.remove(&skip_from).ok_or_else(|| {
                        Error::State(format!("no stashed activation for layer {skip_from}"))
                    })?;
                    tensor::add(&x, &skip)?
                }
                LayerKind::GlobalPool => global_avg_pool(&x)?,
                LayerKind::Linear { .. } => {
                    let x2 = if x.rank() == 2 {
                        x
                    } else {
                        let n = x.dims()[0];
                        let f = x.len() / n;
                        x.reshape(&[n, f])?
                    };
                    linear(&x2, p(0)?, p(1)?)?
                }
            };
        }
        Ok(x)
    }
}

fn uniform_tensor(dims: &[usize], bound: f64, rng: &mut SeedStream) -> Tensor {
    Tensor::from_fn(dims, |_| rng.uniform(-bound, bound) as f32).expect("validated dims")
}

fn fresh_head(in_features: usize, num_classes: usize, seed: u64) -> (Tensor, Tensor) {
    let bound = 1.0 / libm::sqrt(in_features as f64);
    let mut rng = SeedStream::derive(seed, 0);
    let w = uniform_tensor(&[num_classes, in_features], bound, &mut rng);
    let b = uniform_tensor(&[num_classes], bound, &mut rng);
    (w, b)
}

/// Channel rounding used by width multipliers: nearest multiple of 8, never
/// below 8 and never more than 10% under the unrounded value.
pub fn make_divisible(value: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut v = libm::floor((value + d / 2.0) / d) as usize * divisor;
    v = v.max(divisor);
    if (v as f64) < 0.9 * value {
        v += divisor;
    }
    v
}

/// MobileNetV2 for 3×224×224 inputs, initialized from seed 0 and unbound.
pub fn build_mobilenet_v2(num_classes: usize, width_mult: f64) -> Result<ModelGraph> {
    build_mobilenet_v2_seeded(num_classes, width_mult, 0)
}

pub fn build_mobilenet_v2_seeded(
    num_classes: usize,
    width_mult: f64,
    seed: u64,
) -> Result<ModelGraph> {
    if num_classes == 0 {
        return Err(Error::Argument("num_classes must be positive".into()));
    }
    if !width_mult.is_finite() || width_mult <= 0.0 {
        return Err(Error::Argument(format!(
            "width_mult must be positive, got {width_mult}"
        )));
    }
    let mut b = GraphBuilder::default();
    let stem_ch = make_divisible(32.0 * width_mult, 8);
    let last_ch = make_divisible(1280.0 * width_mult.max(1.0), 8);

    b.conv("stem.conv", INPUT_SHAPE[0], stem_ch, 3, 2, 1);
    b.bn("stem.bn", stem_ch);
    b.relu();

    let mut in_ch = stem_ch;
    let mut block = 0;
    for (expand, channels, repeats, first_stride) in MOBILENET_V2_STAGES {
        let out_ch = make_divisible(channels as f64 * width_mult, 8);
        for r in 0..repeats {
            let stride = if r == 0 { first_stride } else { 1 };
            let hidden = in_ch * expand;
            let start = b.layers.len();
            if expand != 1 {
                b.conv(&format!("block{block}.expand"), in_ch, hidden, 1, 1, 0);
                b.bn(&format!("block{block}.bn1"), hidden);
                b.relu();
            }
            b.depthwise(&format!("block{block}.dw"), hidden, stride);
            b.bn(&format!("block{block}.bn2"), hidden);
            b.relu();
            b.conv(&format!("block{block}.pw"), hidden, out_ch, 1, 1, 0);
            b.bn(&format!("block{block}.bn3"), out_ch);
            if stride == 1 && in_ch == out_ch {
                b.layers.push(LayerSpec {
                    name: format!("block{block}.add"),
                    kind: LayerKind::Add { skip_from: start },
                    params: Vec::new(),
                });
            }
            in_ch = out_ch;
            block += 1;
        }
    }

    b.conv("last.conv", in_ch, last_ch, 1, 1, 0);
    b.bn("last.bn", last_ch);
    b.relu();
    b.layers.push(LayerSpec {
        name: "pool".into(),
        kind: LayerKind::GlobalPool,
        params: Vec::new(),
    });
    b.layers.push(LayerSpec {
        name: "head".into(),
        kind: LayerKind::Linear {
            in_features: last_ch,
            out_features: num_classes,
        },
        params: vec![HEAD_WEIGHT.into(), HEAD_BIAS.into()],
    });

    let mut graph = ModelGraph {
        layers: b.layers,
        params: BTreeMap::new(),
        num_classes,
        input_shape: INPUT_SHAPE,
        bound: false,
    };
    graph.initialize(seed);
    graph.validate()?;
    Ok(graph)
}

#[derive(Default)]
struct GraphBuilder {
    layers: Vec<LayerSpec>,
}

impl GraphBuilder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv(ConvGeometry {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride,
                padding: pad,
                groups: 1,
                bias: false,
            }),
            params: vec![format!("{name}.weight")],
        });
    }

    fn depthwise(&mut self, name: &str, ch: usize, stride: usize) {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::DepthwiseConv(ConvGeometry {
                in_channels: ch,
                out_channels: ch,
                kernel: 3,
                stride,
                padding: 1,
                groups: ch,
                bias: false,
            }),
            params: vec![format!("{name}.weight")],
        });
    }

    fn bn(&mut self, name: &str, ch: usize) {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::BatchNorm {
                channels: ch,
                eps: BN_EPS,
            },
            params: ["gamma", "beta", "running_mean", "running_var"]
                .iter()
                .map(|s| format!("{name}.{s}"))
                .collect(),
        });
    }

    fn relu(&mut self) {
        let n = self.layers.len();
        self.layers.push(LayerSpec {
            name: format!("relu{n}"),
            kind: LayerKind::Relu6,
            params: Vec::new(),
        });
    }
}
