use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::ModalitySample;
use crate::error::{Error, Result};
use crate::freq::{crop_bounds, disentangle, high_image, SplitConfig, DEFAULT_THETA};
use crate::nn::{ConvSpec, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::volume::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// UNet on the raw normalized target with a single head.
    Baseline,
    /// Frequency-disentangled backbone input plus low-frequency prior fusion.
    Proposed,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Proposed => "proposed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Spatial dimensionality, 2 or 3.
    pub dims: usize,
    pub base_channels: usize,
    /// Number of resolution levels.
    pub depth: usize,
    pub leaky_slope: f64,
    /// Instance normalization after every backbone convolution.
    pub instance_norm: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            base_channels: 8,
            depth: 3,
            leaky_slope: 0.01,
            instance_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden_channels: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 8,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub kind: ModelKind,
    pub theta: f64,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Proposed,
            theta: DEFAULT_THETA,
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl ArchConfig {
    pub fn split(&self) -> Result<SplitConfig> {
        SplitConfig::new(self.theta)
    }

    fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if !(b.dims == 2 || b.dims == 3) || b.depth == 0 || b.base_channels == 0 {
            return Err(Error::Config(format!("invalid backbone {b:?}")));
        }
        if self.head.hidden_channels == 0 || !(0.0..1.0).contains(&self.head.dropout) {
            return Err(Error::Config(format!("invalid head {:?}", self.head)));
        }
        self.split().map(|_| ())
    }
}

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    kernel: usize,
    /// Instance-norm scale and shift.
    norm: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
struct UpLevel {
    reduce: ConvLayer,
    merge: ConvLayer,
    refine: ConvLayer,
}

#[derive(Clone, Debug)]
struct Layout {
    down: Vec<[ConvLayer; 2]>,
    up: Vec<UpLevel>,
    shared: Option<ConvLayer>,
    head: [ConvLayer; 2],
}

/// Architecture plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    arch: ArchConfig,
    params: ParamStore,
    layout: Layout,
}

/// Network inputs derived from a [`ModalitySample`] for one model kind.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub backbone_input: Tensor,
    pub priors: Vec<Tensor>,
    pub target: Vec<f64>,
    pub spatial: Vec<usize>,
}

/// Node handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub features: NodeId,
    pub low_features: Vec<NodeId>,
    pub fused: Vec<NodeId>,
    pub predictions: Vec<NodeId>,
}

fn add_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    dims: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
) -> ConvLayer {
    let mut shape = vec![cout, cin];
    shape.extend(std::iter::repeat(kernel).take(dims));
    let fan_in = cin * kernel.pow(dims as u32);
    let w = store.add_he_uniform(format!("{name}.weight"), shape, fan_in, rng);
    let b = store.add_zeros(format!("{name}.bias"), vec![cout]);
    ConvLayer {
        w,
        b,
        kernel,
        norm: None,
    }
}

fn add_norm(store: &mut ParamStore, enabled: bool, mut layer: ConvLayer, name: &str) -> ConvLayer {
    if enabled {
        let c = store.get(layer.b).value.len();
        let gamma = store.add(format!("{name}.norm.weight"), vec![c], vec![1.0; c]);
        let beta = store.add_zeros(format!("{name}.norm.bias"), vec![c]);
        layer.norm = Some((gamma, beta));
    }
    layer
}

impl Model {
    /// Fresh model with seeded He-uniform weights and zero biases.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let b = &arch.backbone;
        let ch = |l: usize| b.base_channels << l;
        let mut down = Vec::new();
        for l in 0..b.depth {
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            let mut block = |name: String, cin, cout| {
                let layer = add_conv(&mut store, &mut rng, &name, b.dims, cin, cout, 3);
                add_norm(&mut store, b.instance_norm, layer, &name)
            };
            down.push([
                block(format!("backbone.down{l}.conv0"), cin, ch(l)),
                block(format!("backbone.down{l}.conv1"), ch(l), ch(l)),
            ]);
        }
        let mut up = Vec::new();
        for l in (0..b.depth - 1).rev() {
            let mut block = |name: String, cin, cout| {
                let layer = add_conv(&mut store, &mut rng, &name, b.dims, cin, cout, 3);
                add_norm(&mut store, b.instance_norm, layer, &name)
            };
            up.push(UpLevel {
                reduce: block(format!("backbone.up{l}.reduce"), ch(l + 1), ch(l)),
                merge: block(format!("backbone.up{l}.merge"), 2 * ch(l), ch(l)),
                refine: block(format!("backbone.up{l}.refine"), ch(l), ch(l)),
            });
        }
        let shared = (arch.kind == ModelKind::Proposed).then(|| {
            add_conv(&mut store, &mut rng, "shared", b.dims, 1, b.base_channels, 3)
        });
        let h = arch.head.hidden_channels;
        let head = [
            add_conv(&mut store, &mut rng, "head.conv0", b.dims, b.base_channels, h, 1),
            add_conv(&mut store, &mut rng, "head.conv1", b.dims, h, 1, 1),
        ];
        Ok(Self {
            arch,
            params: store,
            layout: Layout {
                down,
                up,
                shared,
                head,
            },
        })
    }

    /// Rebuilds a model around stored parameters; names and shapes must
    /// match the architecture exactly.
    pub fn from_params(arch: ArchConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        if model.params.len() != params.len()
            || model
                .params
                .iter()
                .zip(params.iter())
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::Config(
                "parameter layout does not match the architecture".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Scalar parameter count of entries whose name starts with `prefix`.
    pub fn parameter_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.len())
            .sum()
    }

    /// Derives the network inputs for `sample`.
    pub fn prepare(&self, sample: &ModalitySample) -> Result<Prepared> {
        let spatial = sample.target_volume.shape().to_vec();
        if spatial.len() != self.arch.backbone.dims {
            return Err(Error::ShapeMismatch(format!(
                "{}-D model given a volume of shape {spatial:?}",
                self.arch.backbone.dims
            )));
        }
        let split = self.arch.split()?;
        let (backbone_input, priors) = match self.arch.kind {
            ModelKind::Baseline => (Tensor::from_volume(&sample.target_volume), Vec::new()),
            ModelKind::Proposed => {
                sample.validate(split)?;
                let high = high_image(&disentangle(&sample.target_volume, split)?);
                let priors = sample
                    .low_priors
                    .iter()
                    .map(|(_, v)| Tensor::from_volume(v))
                    .collect();
                (Tensor::from_volume(&high), priors)
            }
        };
        Ok(Prepared {
            backbone_input,
            priors,
            target: sample.mask.to_f64(),
            spatial,
        })
    }

    fn conv(&self, g: &mut Graph, x: NodeId, layer: ConvLayer) -> Result<NodeId> {
        let w = g.param(&self.params, layer.w);
        let b = g.param(&self.params, layer.b);
        g.conv(x, w, b, ConvSpec::same(layer.kernel))
    }

    fn conv_act(&self, g: &mut Graph, x: NodeId, layer: ConvLayer) -> Result<NodeId> {
        let mut y = self.conv(g, x, layer)?;
        if let Some((gamma, beta)) = layer.norm {
            let gamma = g.param(&self.params, gamma);
            let beta = g.param(&self.params, beta);
            y = g.instance_norm(y, gamma, beta, NORM_EPS)?;
        }
        Ok(g.leaky_relu(y, self.arch.backbone.leaky_slope))
    }

    /// Backbone features at full resolution with `base_channels` channels.
    pub fn backbone(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut skips = Vec::new();
        let mut h = x;
        for (l, [c0, c1]) in self.layout.down.iter().enumerate() {
            if l > 0 {
                skips.push(h);
                h = g.max_pool(h)?;
            }
            h = self.conv_act(g, h, *c0)?;
            h = self.conv_act(g, h, *c1)?;
        }
        for level in &self.layout.up {
            let skip = skips.pop().expect("one skip per up level");
            h = g.upsample(h)?;
            h = self.conv_act(g, h, level.reduce)?;
            h = g.concat(skip, h)?;
            h = self.conv_act(g, h, level.merge)?;
            h = self.conv_act(g, h, level.refine)?;
        }
        Ok(h)
    }

    /// 1x1 conv, activation, dropout, 1x1 conv, sigmoid.
    pub fn head(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let h = self.conv_act(g, x, self.layout.head[0])?;
        let h = g.dropout(h, self.arch.head.dropout)?;
        let y = self.conv(g, h, self.layout.head[1])?;
        Ok(g.sigmoid(y))
    }

    fn fusion_bounds(&self, spatial: &[usize]) -> Result<Vec<Range<usize>>> {
        crop_bounds(spatial, self.arch.theta)
    }

    pub fn forward_graph(&self, g: &mut Graph, input: &Prepared) -> Result<ForwardOutput> {
        let x = g.input(input.backbone_input.clone());
        let features = self.backbone(g, x)?;
        let Some(shared) = self.layout.shared else {
            let pred = self.head(g, features)?;
            return Ok(ForwardOutput {
                features,
                low_features: Vec::new(),
                fused: vec![features],
                predictions: vec![pred],
            });
        };
        if input.priors.is_empty() {
            return Err(Error::ShapeMismatch("fusion model needs at least one prior".into()));
        }
        let bounds = self.fusion_bounds(&input.spatial)?;
        let mut out = ForwardOutput {
            features,
            low_features: Vec::new(),
            fused: Vec::new(),
            predictions: Vec::new(),
        };
        for prior in &input.priors {
            let l = g.input(prior.clone());
            let low = self.conv(g, l, shared)?;
            let fused = g.center_write(features, low, &bounds)?;
            let pred = self.head(g, fused)?;
            out.low_features.push(low);
            out.fused.push(fused);
            out.predictions.push(pred);
        }
        Ok(out)
    }

    /// Sum of per-head soft Dice losses.
    pub fn loss(&self, g: &mut Graph, out: &ForwardOutput, target: &[f64]) -> Result<NodeId> {
        let terms = out
            .predictions
            .iter()
            .map(|&p| g.dice_loss(p, target, 1.0))
            .collect::<Result<Vec<_>>>()?;
        g.sum(&terms)
    }

    /// Inference-mode probability maps, one per head.
    pub fn forward(&self, sample: &ModalitySample) -> Result<Vec<Vec<f64>>> {
        let prepared = self.prepare(sample)?;
        self.forward_prepared(&prepared)
    }

    pub fn forward_prepared(&self, prepared: &Prepared) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::eval();
        let out = self.forward_graph(&mut g, prepared)?;
        Ok(out
            .predictions
            .iter()
            .map(|&p| g.value(p).data().to_vec())
            .collect())
    }

    pub fn predict(&self, sample: &ModalitySample) -> Result<Mask> {
        let maps = self.forward(sample)?;
        predict(sample.mask.shape().to_vec(), &maps)
    }

    pub fn predict_prepared(&self, prepared: &Prepared) -> Result<Mask> {
        let maps = self.forward_prepared(prepared)?;
        predict(prepared.spatial.clone(), &maps)
    }
}

/// Averages the head maps and thresholds at 0.5.
pub fn predict(shape: Vec<usize>, maps: &[Vec<f64>]) -> Result<Mask> {
    let Some(first) = maps.first() else {
        return Err(Error::ShapeMismatch("no prediction maps".into()));
    };
    if maps.iter().any(|m| m.len() != first.len()) {
        return Err(Error::ShapeMismatch("prediction maps differ in size".into()));
    }
    let p = maps.len() as f64;
    let mean: Vec<f64> = (0..first.len())
        .map(|i| maps.iter().map(|m| m[i]).sum::<f64>() / p)
        .collect();
    Mask::threshold(shape, &mean, 0.5)
}
