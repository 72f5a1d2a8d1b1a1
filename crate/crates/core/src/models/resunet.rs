//! Model state, initialization, and the shared forward body.

use std::collections::BTreeMap;

use super::{layout, ConvSite, Layout, ModelError, ModelKind, ModelSpec, PRELU_INIT};
use crate::losses::TverskyParams;
use crate::rng::Rng;
use crate::tensor::{BnMode, NamedTensors, RunningStats, Tape, Tensor, Var};

enum Init {
    /// Normal(0, sqrt(2 / fan_in)).
    Kaiming { fan_in: usize },
    /// Generator dense: Normal(0, sqrt(2 / z) / sqrt(kernel_fan_in)) so the
    /// generated kernels start in the same regime as a Kaiming-initialized
    /// plain convolution.
    Generator { z: usize, kernel_fan_in: usize },
    Zero,
    One,
    Const(f64),
}

struct ParamDef {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Trainable parameters in deterministic (execution) order.
fn trainable_inventory(spec: &ModelSpec) -> Vec<ParamDef> {
    let lay = layout(spec);
    let mut defs = Vec::new();
    for site in lay.conv_sites() {
        match spec.kind {
            ModelKind::Plain => {
                defs.push(ParamDef {
                    name: format!("{}.w", site.name),
                    shape: site.weight_shape(),
                    init: Init::Kaiming {
                        fan_in: site.fan_in(),
                    },
                });
                defs.push(ParamDef {
                    name: format!("{}.b", site.name),
                    shape: vec![site.cout],
                    init: Init::Zero,
                });
            }
            ModelKind::Hyper => {
                let z = spec.hypervector_size.expect("validated");
                defs.push(ParamDef {
                    name: format!("{}.gen_w.w", site.name),
                    shape: vec![site.kernel_count(), z],
                    init: Init::Generator {
                        z,
                        kernel_fan_in: site.fan_in(),
                    },
                });
                defs.push(ParamDef {
                    name: format!("{}.gen_w.b", site.name),
                    shape: vec![site.kernel_count()],
                    init: Init::Zero,
                });
                // Zero-initialized bias generator: generated biases start at
                // zero for every h, like the plain network's biases.
                defs.push(ParamDef {
                    name: format!("{}.gen_b.w", site.name),
                    shape: vec![site.cout, z],
                    init: Init::Zero,
                });
                defs.push(ParamDef {
                    name: format!("{}.gen_b.b", site.name),
                    shape: vec![site.cout],
                    init: Init::Zero,
                });
            }
        }
    }
    if spec.kind == ModelKind::Hyper {
        let z = spec.hypervector_size.expect("validated");
        let m = spec.mapping_layers.expect("validated");
        for i in 0..m {
            let din = if i == 0 { 2 } else { z };
            defs.push(ParamDef {
                name: format!("mapping.{i}.w"),
                shape: vec![z, din],
                init: Init::Kaiming { fan_in: din },
            });
            defs.push(ParamDef {
                name: format!("mapping.{i}.b"),
                shape: vec![z],
                init: Init::Zero,
            });
        }
    }
    for norm in lay.norm_sites() {
        defs.push(ParamDef {
            name: format!("{}.bn.gamma", norm.name),
            shape: vec![norm.channels],
            init: Init::One,
        });
        defs.push(ParamDef {
            name: format!("{}.bn.beta", norm.name),
            shape: vec![norm.channels],
            init: Init::Zero,
        });
        defs.push(ParamDef {
            name: format!("{}.prelu.slope", norm.name),
            shape: vec![norm.channels],
            init: Init::Const(PRELU_INIT),
        });
    }
    defs
}

/// Expected names and shapes of all trainable parameters.
pub(crate) fn expected_trainables(spec: &ModelSpec) -> BTreeMap<String, Vec<usize>> {
    trainable_inventory(spec)
        .into_iter()
        .map(|d| (d.name, d.shape))
        .collect()
}

/// Names of the running-statistic tensors stored alongside the trainables.
pub(crate) fn stat_names(spec: &ModelSpec) -> Vec<(String, usize)> {
    layout(spec)
        .norm_sites()
        .iter()
        .map(|n| (n.name.clone(), n.channels))
        .collect()
}

fn init_params(
    spec: &ModelSpec,
    seed: u64,
) -> (NamedTensors, BTreeMap<String, RunningStats>) {
    let mut rng = Rng::for_stream(seed, "model-init");
    let mut params = NamedTensors::new();
    for def in trainable_inventory(spec) {
        let n: usize = def.shape.iter().product();
        let data: Vec<f64> = match def.init {
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.normal() * std).collect()
            }
            Init::Generator { z, kernel_fan_in } => {
                let std = (2.0 / z as f64).sqrt() / (kernel_fan_in as f64).sqrt();
                (0..n).map(|_| rng.normal() * std).collect()
            }
            Init::Zero => vec![0.0; n],
            Init::One => vec![1.0; n],
            Init::Const(c) => vec![c; n],
        };
        params.insert(def.name, Tensor::new(def.shape, data).expect("inventory shapes"));
    }
    let stats = stat_names(spec)
        .into_iter()
        .map(|(name, channels)| (name, RunningStats::identity(channels)))
        .collect();
    (params, stats)
}

/// Tape leaves for each trainable parameter of one forward pass.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    fn bind(tape: &mut Tape, params: &NamedTensors, requires_grad: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, tensor)| (name.to_string(), tape.leaf(tensor.clone(), requires_grad)))
            .collect();
        BoundParams { vars }
    }

    fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients of every bound parameter that the reverse sweep reached.
    pub fn collect_grads(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .filter_map(|(name, &var)| tape.grad(var).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

fn check_input(spec: &ModelSpec, images: &Tensor) -> Result<(), ModelError> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(ModelError::InvalidSpec(format!(
            "expected [N, C, H, W] input, got {shape:?}"
        )));
    }
    if shape[1] != spec.input_channels {
        return Err(ModelError::ChannelMismatch {
            got: shape[1],
            expected: spec.input_channels,
        });
    }
    let divisor = 1usize << (spec.levels() - 1);
    let (h, w) = (shape[2], shape[3]);
    if h % divisor != 0 || w % divisor != 0 {
        return Err(ModelError::IndivisibleExtent {
            h,
            w,
            divisor,
            levels: spec.levels(),
            ph: h.div_ceil(divisor) * divisor,
            pw: w.div_ceil(divisor) * divisor,
        });
    }
    Ok(())
}

/// The encoder-decoder body, shared by both model kinds. `conv_weights`
/// supplies the (weight, bias) vars for each convolution site: bound leaves
/// for the plain model, generator outputs for the hyper model.
fn body(
    tape: &mut Tape,
    lay: &Layout,
    conv_weights: &mut dyn FnMut(&mut Tape, &ConvSite) -> Result<(Var, Var), ModelError>,
    bound: &BoundParams,
    stats: &mut BTreeMap<String, RunningStats>,
    mode: BnMode,
    images: Var,
    mut dropout: Option<(f64, &mut Rng)>,
) -> Result<Var, ModelError> {
    let mut feats = images;
    let mut skips: Vec<Var> = Vec::new();
    let levels = lay.enc.len();
    for (l, block) in lay.enc.iter().enumerate() {
        let (w, b) = conv_weights(tape, &block.conv)?;
        let main = tape.conv2d(feats, w, b, block.conv.stride, block.conv.padding)?;
        let gamma = bound.get(&format!("{}.bn.gamma", block.norm.name));
        let beta = bound.get(&format!("{}.bn.beta", block.norm.name));
        let slope = bound.get(&format!("{}.prelu.slope", block.norm.name));
        let st = stats.get_mut(&block.norm.name).expect("stats for norm site");
        let main = tape.batch_norm(main, gamma, beta, st, mode)?;
        let main = tape.prelu(main, slope)?;
        let skip = match &block.proj {
            Some(p) => {
                let (pw, pb) = conv_weights(tape, p)?;
                tape.conv2d(feats, pw, pb, p.stride, p.padding)?
            }
            None => feats,
        };
        feats = tape.add(main, skip)?;
        if let Some((rate, rng)) = dropout.as_mut() {
            feats = tape.channel_dropout(feats, *rate, rng)?;
        }
        if l < levels - 1 {
            skips.push(feats);
        }
    }
    for (i, block) in lay.dec.iter().enumerate() {
        let (tw, tb) = conv_weights(tape, &block.convtr)?;
        let up = tape.conv2d_transposed(feats, tw, tb, block.convtr.stride, block.convtr.padding)?;
        let skip = skips[levels - 2 - i];
        let cat = tape.concat_channels(up, skip)?;
        let (w, b) = conv_weights(tape, &block.conv)?;
        let c = tape.conv2d(cat, w, b, block.conv.stride, block.conv.padding)?;
        let gamma = bound.get(&format!("{}.bn.gamma", block.norm.name));
        let beta = bound.get(&format!("{}.bn.beta", block.norm.name));
        let slope = bound.get(&format!("{}.prelu.slope", block.norm.name));
        let st = stats.get_mut(&block.norm.name).expect("stats for norm site");
        let c = tape.batch_norm(c, gamma, beta, st, mode)?;
        feats = tape.prelu(c, slope)?;
    }
    let (hw, hb) = conv_weights(tape, &lay.head)?;
    let logits = tape.conv2d(feats, hw, hb, 1, 0)?;
    Ok(tape.sigmoid(logits))
}

fn plain_weights<'a>(
    bound: &'a BoundParams,
) -> impl FnMut(&mut Tape, &ConvSite) -> Result<(Var, Var), ModelError> + 'a {
    move |_tape, site| {
        Ok((
            bound.get(&format!("{}.w", site.name)),
            bound.get(&format!("{}.b", site.name)),
        ))
    }
}

fn mapping_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    spec: &ModelSpec,
    h: &TverskyParams,
) -> Result<Var, ModelError> {
    let input = tape.constant(
        Tensor::new(vec![1, 2], vec![h.alpha(), h.beta()]).expect("fixed shape"),
    );
    let mut x = input;
    for i in 0..spec.mapping_layers.expect("validated") {
        let w = bound.get(&format!("mapping.{i}.w"));
        let b = bound.get(&format!("mapping.{i}.b"));
        x = tape.dense(x, w, b)?;
        x = tape.relu(x);
    }
    Ok(x)
}

/// Dense generators for one convolution site: z_h -> (weight, bias).
fn generated_weights<'a>(
    bound: &'a BoundParams,
    z: Var,
) -> impl FnMut(&mut Tape, &ConvSite) -> Result<(Var, Var), ModelError> + 'a {
    move |tape, site| {
        let gw_w = bound.get(&format!("{}.gen_w.w", site.name));
        let gw_b = bound.get(&format!("{}.gen_w.b", site.name));
        let flat_w = tape.dense(z, gw_w, gw_b)?;
        let w = tape.reshape(flat_w, site.weight_shape())?;
        let gb_w = bound.get(&format!("{}.gen_b.w", site.name));
        let gb_b = bound.get(&format!("{}.gen_b.b", site.name));
        let flat_b = tape.dense(z, gb_w, gb_b)?;
        let b = tape.reshape(flat_b, vec![site.cout])?;
        Ok((w, b))
    }
}

/// Plain residual encoder-decoder network.
#[derive(Clone, Debug)]
pub struct PlainModel {
    spec: ModelSpec,
    params: NamedTensors,
    stats: BTreeMap<String, RunningStats>,
}

impl PlainModel {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        if spec.kind != ModelKind::Plain {
            return Err(ModelError::KindMismatch {
                stored: spec.kind.as_str(),
                requested: "plain",
            });
        }
        let (params, stats) = init_params(&spec, seed);
        Ok(PlainModel {
            spec,
            params,
            stats,
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: NamedTensors,
        stats: BTreeMap<String, RunningStats>,
    ) -> Self {
        PlainModel {
            spec,
            params,
            stats,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &NamedTensors {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NamedTensors {
        &mut self.params
    }

    pub(crate) fn stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.stats
    }

    /// Training-mode forward: parameters become gradient-carrying leaves on
    /// `tape`, batch-norm uses batch statistics and updates the running ones.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        images: &Tensor,
        dropout: Option<(f64, &mut Rng)>,
    ) -> Result<(Var, BoundParams), ModelError> {
        check_input(&self.spec, images)?;
        let bound = BoundParams::bind(tape, &self.params, true);
        let lay = layout(&self.spec);
        let images = tape.constant(images.clone());
        let mut weights = plain_weights(&bound);
        let out = body(
            tape,
            &lay,
            &mut weights,
            &bound,
            &mut self.stats,
            BnMode::Train,
            images,
            dropout,
        )?;
        drop(weights);
        Ok((out, bound))
    }

    /// Inference forward: no gradients, batch norm on running statistics.
    pub fn forward_eval(&self, images: &Tensor) -> Result<Tensor, ModelError> {
        check_input(&self.spec, images)?;
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params, false);
        let lay = layout(&self.spec);
        let images = tape.constant(images.clone());
        let mut weights = plain_weights(&bound);
        let mut stats = self.stats.clone();
        let out = body(
            &mut tape,
            &lay,
            &mut weights,
            &bound,
            &mut stats,
            BnMode::Eval,
            images,
            None,
        )?;
        Ok(tape.value(out).clone())
    }
}

/// Hypernetwork: mapping network plus per-site weight generators around the
/// same body as [`PlainModel`].
#[derive(Clone, Debug)]
pub struct HyperModel {
    spec: ModelSpec,
    params: NamedTensors,
    stats: BTreeMap<String, RunningStats>,
}

impl HyperModel {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        if spec.kind != ModelKind::Hyper {
            return Err(ModelError::KindMismatch {
                stored: spec.kind.as_str(),
                requested: "hyper",
            });
        }
        let (params, stats) = init_params(&spec, seed);
        Ok(HyperModel {
            spec,
            params,
            stats,
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: NamedTensors,
        stats: BTreeMap<String, RunningStats>,
    ) -> Self {
        HyperModel {
            spec,
            params,
            stats,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &NamedTensors {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NamedTensors {
        &mut self.params
    }

    pub(crate) fn stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.stats
    }

    /// The hypervector z_h for a given h, under the current mapping weights.
    pub fn hypervector(&self, h: &TverskyParams) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params, false);
        let z = mapping_forward(&mut tape, &bound, &self.spec, h)?;
        Ok(tape.value(z).clone())
    }

    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        images: &Tensor,
        h: &TverskyParams,
    ) -> Result<(Var, BoundParams), ModelError> {
        check_input(&self.spec, images)?;
        let bound = BoundParams::bind(tape, &self.params, true);
        let lay = layout(&self.spec);
        let images = tape.constant(images.clone());
        let z = mapping_forward(tape, &bound, &self.spec, h)?;
        let mut weights = generated_weights(&bound, z);
        let out = body(
            tape,
            &lay,
            &mut weights,
            &bound,
            &mut self.stats,
            BnMode::Train,
            images,
            None,
        )?;
        drop(weights);
        Ok((out, bound))
    }

    pub fn forward_eval(&self, images: &Tensor, h: &TverskyParams) -> Result<Tensor, ModelError> {
        check_input(&self.spec, images)?;
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params, false);
        let lay = layout(&self.spec);
        let images = tape.constant(images.clone());
        let z = mapping_forward(&mut tape, &bound, &self.spec, h)?;
        let mut weights = generated_weights(&bound, z);
        let mut stats = self.stats.clone();
        let out = body(
            &mut tape,
            &lay,
            &mut weights,
            &bound,
            &mut stats,
            BnMode::Eval,
            images,
            None,
        )?;
        Ok(tape.value(out).clone())
    }

    /// Materialize the generated weights at a fixed h as a plain network
    /// sharing this model's normalization state. For any image the plain
    /// network reproduces `forward_eval(image, h)` exactly.
    pub fn export_plain(&self, h: &TverskyParams) -> Result<PlainModel, ModelError> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params, false);
        let z = mapping_forward(&mut tape, &bound, &self.spec, h)?;
        let mut gen = generated_weights(&bound, z);
        let lay = layout(&self.spec);
        let mut params = NamedTensors::new();
        for site in lay.conv_sites() {
            let (w, b) = gen(&mut tape, site)?;
            params.insert(format!("{}.w", site.name), tape.value(w).clone());
            params.insert(format!("{}.b", site.name), tape.value(b).clone());
        }
        for norm in lay.norm_sites() {
            for part in ["bn.gamma", "bn.beta", "prelu.slope"] {
                let name = format!("{}.{part}", norm.name);
                let tensor = self
                    .params
                    .get(&name)
                    .expect("norm parameters exist")
                    .clone();
                params.insert(name, tensor);
            }
        }
        let mut spec = ModelSpec::plain(self.spec.kernel_depths.clone(), self.spec.input_channels);
        spec.kernel_size = self.spec.kernel_size;
        Ok(PlainModel {
            spec,
            params,
            stats: self.stats.clone(),
        })
    }
}
