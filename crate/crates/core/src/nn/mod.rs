//! Forward and reverse-mode passes for the two network families.
//!
//! The unconditional net is a plain rectifier MLP over the concatenated base
//! and condition vectors. The conditional net runs the base vector through
//! one branch and the condition vector through another; the condition
//! embedding feeds two affine heads producing per-feature `scale` and `bias`
//! that modulate the base features as `f_in * scale + bias` before the output
//! head.
//!
//! The output head is a sigmoid when `d_out == 1` and a softmax when
//! `d_out == 2`. All arithmetic is `f64`.

pub mod checkpoint;
mod gradcheck;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};

/// Dense affine layer, `y = W x + b`, with `W` stored row-major (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients for upstream `grad` at input `x` and
    /// returns the gradient with respect to `x` when requested.
    fn backward_into(&self, x: &[f64], grad: &[f64], acc: &mut LinearLayer, want_input: bool) -> Vec<f64> {
        let mut grad_in = if want_input { vec![0.0; self.in_dim] } else { Vec::new() };
        for (o, &g) in grad.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            acc.bias[o] += g;
            let range = o * self.in_dim..(o + 1) * self.in_dim;
            for (a, v) in acc.weights[range.clone()].iter_mut().zip(x) {
                *a += g * v;
            }
            if want_input {
                for (gi, w) in grad_in.iter_mut().zip(&self.weights[range]) {
                    *gi += g * w;
                }
            }
        }
        grad_in
    }
}

/// Layer widths of a network. `d_out` is 1 (sigmoid head) or 2 (softmax head).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    Unconditional {
        input: usize,
        hidden: Vec<usize>,
        d_out: usize,
    },
    Conditional {
        base_input: usize,
        cond_input: usize,
        base_hidden: Vec<usize>,
        cond_hidden: Vec<usize>,
        head_hidden: Vec<usize>,
        d_out: usize,
    },
}

impl Architecture {
    /// Default unconditional widths.
    pub fn default_unconditional(input: usize, d_out: usize) -> Self {
        Architecture::Unconditional {
            input,
            hidden: vec![256, 128, 64, 32],
            d_out,
        }
    }

    /// Default conditional widths; the modulated width is 64.
    pub fn default_conditional(base_input: usize, cond_input: usize, d_out: usize) -> Self {
        Architecture::Conditional {
            base_input,
            cond_input,
            base_hidden: vec![128, 64],
            cond_hidden: vec![64, 32],
            head_hidden: vec![32],
            d_out,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Architecture::Unconditional { d_out, .. } | Architecture::Conditional { d_out, .. } => *d_out,
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, Architecture::Conditional { .. })
    }

    /// Width of the modulated feature vector of a conditional net.
    pub fn film_width(&self) -> Option<usize> {
        match self {
            Architecture::Conditional {
                base_input,
                base_hidden,
                ..
            } => Some(*base_hidden.last().unwrap_or(base_input)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d_out = self.d_out();
        if d_out != 1 && d_out != 2 {
            return Err(Error::Config(format!("d_out must be 1 or 2, got {d_out}")));
        }
        match self {
            Architecture::Unconditional { input, hidden, .. } => {
                if *input == 0 {
                    return Err(Error::Config("network input width is zero".into()));
                }
                if hidden.contains(&0) {
                    return Err(Error::Config("hidden width of zero".into()));
                }
                if hidden.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Config(format!(
                        "hidden widths must strictly decrease, got {hidden:?}"
                    )));
                }
            }
            Architecture::Conditional {
                base_input,
                base_hidden,
                cond_hidden,
                head_hidden,
                ..
            } => {
                if *base_input == 0 {
                    return Err(Error::Config("base input width is zero".into()));
                }
                if base_hidden.iter().chain(cond_hidden).chain(head_hidden).any(|&w| w == 0) {
                    return Err(Error::Config("hidden width of zero".into()));
                }
            }
        }
        Ok(())
    }

    /// Parameter count, in the order parameters are declared.
    pub fn n_params(&self) -> usize {
        layer_dims(self).iter().map(|(i, o)| i * o + o).sum()
    }

    /// `key=value` lines describing the architecture.
    pub fn descriptor(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        match self {
            Architecture::Unconditional { input, hidden, d_out } => format!(
                "arch=unconditional\ninput={input}\nhidden={}\nd_out={d_out}\n",
                list(hidden)
            ),
            Architecture::Conditional {
                base_input,
                cond_input,
                base_hidden,
                cond_hidden,
                head_hidden,
                d_out,
            } => format!(
                "arch=conditional\nbase_input={base_input}\ncond_input={cond_input}\nbase_hidden={}\ncond_hidden={}\nhead_hidden={}\nd_out={d_out}\n",
                list(base_hidden),
                list(cond_hidden),
                list(head_hidden)
            ),
        }
    }

    /// Reads the keys written by [`Architecture::descriptor`]; other keys are ignored.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| Error::Config(format!("architecture descriptor lacks {key:?}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key:?}")))
        };
        let list = |key: &str| -> Result<Vec<usize>> { parse_width_list(get(key)?) };
        let arch = match get("arch")? {
            "unconditional" => Architecture::Unconditional {
                input: num("input")?,
                hidden: list("hidden")?,
                d_out: num("d_out")?,
            },
            "conditional" => Architecture::Conditional {
                base_input: num("base_input")?,
                cond_input: num("cond_input")?,
                base_hidden: list("base_hidden")?,
                cond_hidden: list("cond_hidden")?,
                head_hidden: list("head_hidden")?,
                d_out: num("d_out")?,
            },
            other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Parses a comma-separated width list; an empty string is an empty list.
pub fn parse_width_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("bad layer width {s:?}")))
        })
        .collect()
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Unconditional { input, hidden, d_out } => {
                write!(f, "unconditional {input} -> {hidden:?} -> {d_out}")
            }
            Architecture::Conditional {
                base_input,
                cond_input,
                base_hidden,
                cond_hidden,
                head_hidden,
                d_out,
            } => write!(
                f,
                "conditional base {base_input} -> {base_hidden:?}, cond {cond_input} -> {cond_hidden:?}, head {head_hidden:?} -> {d_out}"
            ),
        }
    }
}

/// (in, out) of every layer in declaration order.
fn layer_dims(arch: &Architecture) -> Vec<(usize, usize)> {
    fn chain(input: usize, widths: &[usize], out: &mut Vec<(usize, usize)>) -> usize {
        let mut prev = input;
        for &w in widths {
            out.push((prev, w));
            prev = w;
        }
        prev
    }
    let mut dims = Vec::new();
    match arch {
        Architecture::Unconditional { input, hidden, d_out } => {
            let last = chain(*input, hidden, &mut dims);
            dims.push((last, *d_out));
        }
        Architecture::Conditional {
            base_input,
            cond_input,
            base_hidden,
            cond_hidden,
            head_hidden,
            d_out,
        } => {
            let h = chain(*base_input, base_hidden, &mut dims);
            let e = chain(*cond_input, cond_hidden, &mut dims);
            dims.push((e, h));
            dims.push((e, h));
            let last = chain(h, head_hidden, &mut dims);
            dims.push((last, *d_out));
        }
    }
    dims
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnconditionalNet {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<LinearLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNet {
    pub branch_base: Vec<LinearLayer>,
    pub branch_cond: Vec<LinearLayer>,
    pub scale_head: LinearLayer,
    pub bias_head: LinearLayer,
    /// Hidden layers of the output head followed by its final layer.
    pub output_head: Vec<LinearLayer>,
}

/// All weights and biases of one network.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Unconditional(UnconditionalNet),
    Conditional(ConditionalNet),
}

/// Parameter gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let mut layers = layer_dims(arch).into_iter().map(|(i, o)| LinearLayer::zeros(i, o));
        match arch {
            Architecture::Unconditional { .. } => {
                ModelParams::Unconditional(UnconditionalNet { layers: layers.collect() })
            }
            Architecture::Conditional {
                base_hidden,
                cond_hidden,
                ..
            } => {
                let branch_base = layers.by_ref().take(base_hidden.len()).collect();
                let branch_cond = layers.by_ref().take(cond_hidden.len()).collect();
                let scale_head = layers.next().expect("scale head");
                let bias_head = layers.next().expect("bias head");
                ModelParams::Conditional(ConditionalNet {
                    branch_base,
                    branch_cond,
                    scale_head,
                    bias_head,
                    output_head: layers.collect(),
                })
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn architecture(&self) -> Architecture {
        let widths = |ls: &[LinearLayer]| ls.iter().map(|l| l.out_dim).collect::<Vec<_>>();
        match self {
            ModelParams::Unconditional(n) => {
                let (hidden, out) = n.layers.split_at(n.layers.len() - 1);
                Architecture::Unconditional {
                    input: n.layers[0].in_dim,
                    hidden: widths(hidden),
                    d_out: out[0].out_dim,
                }
            }
            ModelParams::Conditional(n) => {
                let (hidden, out) = n.output_head.split_at(n.output_head.len() - 1);
                Architecture::Conditional {
                    base_input: n.branch_base.first().map_or(n.scale_head.out_dim, |l| l.in_dim),
                    cond_input: n.branch_cond.first().map_or(n.scale_head.in_dim, |l| l.in_dim),
                    base_hidden: widths(&n.branch_base),
                    cond_hidden: widths(&n.branch_cond),
                    head_hidden: widths(hidden),
                    d_out: out[0].out_dim,
                }
            }
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            ModelParams::Unconditional(n) => n.layers.last().map_or(0, |l| l.out_dim),
            ModelParams::Conditional(n) => n.output_head.last().map_or(0, |l| l.out_dim),
        }
    }

    /// Layers in declaration order.
    pub fn layers(&self) -> Vec<&LinearLayer> {
        match self {
            ModelParams::Unconditional(n) => n.layers.iter().collect(),
            ModelParams::Conditional(n) => n
                .branch_base
                .iter()
                .chain(&n.branch_cond)
                .chain([&n.scale_head, &n.bias_head])
                .chain(&n.output_head)
                .collect(),
        }
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        match self {
            ModelParams::Unconditional(n) => n.layers.iter_mut().collect(),
            ModelParams::Conditional(n) => n
                .branch_base
                .iter_mut()
                .chain(n.branch_cond.iter_mut())
                .chain([&mut n.scale_head, &mut n.bias_head])
                .chain(n.output_head.iter_mut())
                .collect(),
        }
    }

    /// Weight and bias buffers in declaration order (weights before bias).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.n_params()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every parameter from a flat buffer in declaration order.
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Runs the network. The unconditional net sees `concat(base, cond)`.
    pub fn forward(&self, base: &[f64], cond: &[f64], cache: Option<&mut ForwardCache>) -> Result<Vec<f64>> {
        match self {
            ModelParams::Unconditional(n) => {
                let mut x = Vec::with_capacity(base.len() + cond.len());
                x.extend_from_slice(base);
                x.extend_from_slice(cond);
                forward_unconditional(n, &x, cache)
            }
            ModelParams::Conditional(n) => forward_conditional(n, base, cond, cache),
        }
    }
}

/// Samples initial parameters: Glorot-uniform weights, zero biases, and a
/// scale head biased to emit ones so modulation starts near the identity.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut params = ModelParams::zeros(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in params.layers_mut() {
        let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    if let ModelParams::Conditional(n) = &mut params {
        n.scale_head.bias.fill(1.0);
    }
    Ok(params)
}

/// Elementwise feature modulation `f_in * scale + bias`.
pub fn film(f_in: &[f64], scale: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if f_in.len() != scale.len() || f_in.len() != bias.len() {
        return Err(Error::Config(format!(
            "modulation length mismatch: features {}, scale {}, bias {}",
            f_in.len(),
            scale.len(),
            bias.len()
        )));
    }
    Ok(f_in
        .iter()
        .zip(scale)
        .zip(bias)
        .map(|((f, s), b)| f * s + b)
        .collect())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn head(logits: &[f64]) -> Vec<f64> {
    if logits.len() == 1 {
        return vec![sigmoid(logits[0])];
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Pulls a gradient on head outputs back to the logits.
pub fn head_backward(output: &[f64], upstream: &[f64]) -> Vec<f64> {
    if output.len() == 1 {
        let p = output[0];
        return vec![upstream[0] * p * (1.0 - p)];
    }
    let dot: f64 = output.iter().zip(upstream).map(|(p, g)| p * g).sum();
    output.iter().zip(upstream).map(|(p, g)| p * (g - dot)).collect()
}

/// Saved layer inputs and pre-activations of one layer stack.
#[derive(Debug, Clone, Default)]
struct StackCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    conditional: bool,
    main: StackCache,
    cond: StackCache,
    head: StackCache,
    f_in: Vec<f64>,
    embed: Vec<f64>,
    scale: Vec<f64>,
    bias: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn check_finite(values: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            location: location(),
            message: "non-finite activation".into(),
        })
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn stack_forward(
    layers: &[LinearLayer],
    x: &[f64],
    relu_last: bool,
    name: &str,
    mut cache: Option<&mut StackCache>,
) -> Result<Vec<f64>> {
    if let Some(c) = cache.as_deref_mut() {
        c.inputs.clear();
        c.pre.clear();
    }
    let mut current = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        if current.len() != layer.in_dim {
            return Err(Error::Config(format!(
                "{name}[{i}] expects input width {}, got {}",
                layer.in_dim,
                current.len()
            )));
        }
        let pre = layer.apply(&current);
        check_finite(&pre, || format!("{name}[{i}]"))?;
        let mut act = pre.clone();
        if relu_last || i + 1 < layers.len() {
            relu_in_place(&mut act);
        }
        if let Some(c) = cache.as_deref_mut() {
            c.inputs.push(std::mem::take(&mut current));
            c.pre.push(pre);
        }
        current = act;
    }
    Ok(current)
}

fn stack_backward(
    layers: &[LinearLayer],
    acc: &mut [LinearLayer],
    cache: &StackCache,
    relu_last: bool,
    mut grad: Vec<f64>,
    want_input: bool,
) -> Vec<f64> {
    for i in (0..layers.len()).rev() {
        if relu_last || i + 1 < layers.len() {
            for (g, z) in grad.iter_mut().zip(&cache.pre[i]) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        grad = layers[i].backward_into(&cache.inputs[i], &grad, &mut acc[i], want_input || i > 0);
    }
    grad
}

pub fn forward_unconditional(
    net: &UnconditionalNet,
    x: &[f64],
    cache: Option<&mut ForwardCache>,
) -> Result<Vec<f64>> {
    match cache {
        Some(c) => {
            c.conditional = false;
            let logits = stack_forward(&net.layers, x, false, "layers", Some(&mut c.main))?;
            c.output = head(&logits);
            Ok(c.output.clone())
        }
        None => Ok(head(&stack_forward(&net.layers, x, false, "layers", None)?)),
    }
}

pub fn forward_conditional(
    net: &ConditionalNet,
    x_base: &[f64],
    x_cond: &[f64],
    cache: Option<&mut ForwardCache>,
) -> Result<Vec<f64>> {
    let mut scratch = ForwardCache::default();
    let store = cache.is_some();
    let c = cache.unwrap_or(&mut scratch);
    c.conditional = true;
    let f_in = stack_forward(&net.branch_base, x_base, true, "branch_base", store.then_some(&mut c.main))?;
    let embed = stack_forward(&net.branch_cond, x_cond, true, "branch_cond", store.then_some(&mut c.cond))?;
    if embed.len() != net.scale_head.in_dim {
        return Err(Error::Config(format!(
            "condition input width {} does not match the network",
            x_cond.len()
        )));
    }
    let scale = net.scale_head.apply(&embed);
    check_finite(&scale, || "scale_head".to_string())?;
    let bias = net.bias_head.apply(&embed);
    check_finite(&bias, || "bias_head".to_string())?;
    let modulated = film(&f_in, &scale, &bias)?;
    let logits = stack_forward(&net.output_head, &modulated, false, "output_head", store.then_some(&mut c.head))?;
    let output = head(&logits);
    if store {
        c.f_in = f_in;
        c.embed = embed;
        c.scale = scale;
        c.bias = bias;
        c.output = output.clone();
    }
    Ok(output)
}

impl ConditionalNet {
    /// `output_head(branch_base(x))`: the network with modulation removed.
    pub fn forward_unmodulated(&self, x_base: &[f64]) -> Result<Vec<f64>> {
        let f_in = stack_forward(&self.branch_base, x_base, true, "branch_base", None)?;
        let logits = stack_forward(&self.output_head, &f_in, false, "output_head", None)?;
        Ok(head(&logits))
    }

    /// The (scale, bias) pair produced for a condition vector.
    pub fn modulation(&self, x_cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let embed = stack_forward(&self.branch_cond, x_cond, true, "branch_cond", None)?;
        Ok((self.scale_head.apply(&embed), self.bias_head.apply(&embed)))
    }
}

/// Exact gradients for an upstream gradient on the head outputs.
pub fn backward(params: &ModelParams, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
    if upstream.len() != cache.output.len() {
        return Err(Error::Config(format!(
            "upstream gradient has {} entries, output has {}",
            upstream.len(),
            cache.output.len()
        )));
    }
    let dlogits = head_backward(&cache.output, upstream);
    let mut grads = params.zeros_like();
    accumulate_backward(params, cache, &dlogits, &mut grads)?;
    Ok(grads)
}

/// Adds the gradients for an upstream gradient on the logits into `grads`.
pub fn accumulate_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    let mismatch = || Error::Config("forward cache does not match the parameters".into());
    match (params, grads) {
        (ModelParams::Unconditional(net), ModelParams::Unconditional(acc)) => {
            if cache.conditional || cache.main.pre.len() != net.layers.len() {
                return Err(mismatch());
            }
            stack_backward(&net.layers, &mut acc.layers, &cache.main, false, dlogits.to_vec(), false);
        }
        (ModelParams::Conditional(net), ModelParams::Conditional(acc)) => {
            if !cache.conditional
                || cache.main.pre.len() != net.branch_base.len()
                || cache.head.pre.len() != net.output_head.len()
                || cache.f_in.len() != net.scale_head.out_dim
            {
                return Err(mismatch());
            }
            let g_mod = stack_backward(
                &net.output_head,
                &mut acc.output_head,
                &cache.head,
                false,
                dlogits.to_vec(),
                true,
            );
            // Product rule through f_in * scale + bias.
            let g_f_in: Vec<f64> = g_mod.iter().zip(&cache.scale).map(|(g, s)| g * s).collect();
            let g_scale: Vec<f64> = g_mod.iter().zip(&cache.f_in).map(|(g, f)| g * f).collect();
            let g_bias = g_mod;
            let mut g_embed =
                net.scale_head
                    .backward_into(&cache.embed, &g_scale, &mut acc.scale_head, true);
            let g_embed_b = net
                .bias_head
                .backward_into(&cache.embed, &g_bias, &mut acc.bias_head, true);
            for (a, b) in g_embed.iter_mut().zip(g_embed_b) {
                *a += b;
            }
            if !net.branch_cond.is_empty() {
                stack_backward(&net.branch_cond, &mut acc.branch_cond, &cache.cond, true, g_embed, false);
            }
            if !net.branch_base.is_empty() {
                stack_backward(&net.branch_base, &mut acc.branch_base, &cache.main, true, g_f_in, false);
            }
        }
        _ => return Err(mismatch()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cond(d_out: usize) -> Architecture {
        Architecture::Conditional {
            base_input: 4,
            cond_input: 3,
            base_hidden: vec![5, 4],
            cond_hidden: vec![3],
            head_hidden: vec![3],
            d_out,
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn film_cases() {
        let f = [1.0, 2.0];
        assert_eq!(film(&f, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), f.to_vec());
        assert_eq!(film(&f, &[2.0, 0.5], &[1.0, -1.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(film(&f, &[0.0, 0.0], &[0.7, -0.2]).unwrap(), vec![0.7, -0.2]);
        assert!(film(&f, &[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_params_give_symmetric_heads() {
        for (d_out, expected) in [(1, vec![0.5]), (2, vec![0.5, 0.5])] {
            let arch = Architecture::Unconditional {
                input: 3,
                hidden: vec![4, 2],
                d_out,
            };
            let p = ModelParams::zeros(&arch);
            assert_eq!(p.forward(&[1.0, -2.0], &[0.5], None).unwrap(), expected);
        }
    }

    #[test]
    fn softmax_and_sigmoid_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let p = init_params(&Architecture::default_unconditional(6, 2), seed).unwrap();
            let out = p.forward(&random_vec(&mut rng, 6), &[], None).unwrap();
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.iter().all(|v| *v > 0.0));
            let p = init_params(&small_cond(1), seed).unwrap();
            let out = p.forward(&random_vec(&mut rng, 4), &random_vec(&mut rng, 3), None).unwrap();
            assert!(out[0] > 0.0 && out[0] < 1.0);
        }
    }

    #[test]
    fn forced_identity_modulation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = init_params(&small_cond(2), 3).unwrap();
        let ModelParams::Conditional(net) = &mut p else { unreachable!() };
        net.scale_head.weights.fill(0.0);
        net.scale_head.bias.fill(1.0);
        net.bias_head.weights.fill(0.0);
        net.bias_head.bias.fill(0.0);
        for _ in 0..20 {
            let (b, c) = (random_vec(&mut rng, 4), random_vec(&mut rng, 3));
            assert_eq!(
                forward_conditional(net, &b, &c, None).unwrap(),
                net.forward_unmodulated(&b).unwrap()
            );
        }
    }

    #[test]
    fn condition_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_params(&small_cond(1), 8).unwrap();
        let b = random_vec(&mut rng, 4);
        let a = p.forward(&b, &[0.9, 0.1, 0.5], None).unwrap();
        let c = p.forward(&b, &[-0.3, 0.8, 0.2], None).unwrap();
        assert_ne!(a, c);
        assert_eq!(a, p.forward(&b, &[0.9, 0.1, 0.5], None).unwrap());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = Architecture::default_conditional(55, 34, 2);
        let a = init_params(&arch, 42).unwrap();
        assert_eq!(a, init_params(&arch, 42).unwrap());
        assert_ne!(a, init_params(&arch, 43).unwrap());
        for l in a.layers() {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
        let ModelParams::Conditional(net) = &a else { unreachable!() };
        assert!(net.scale_head.bias.iter().all(|b| *b == 1.0));
        assert!(net.bias_head.bias.iter().all(|b| *b == 0.0));
        assert_eq!(a.n_params(), arch.n_params());
        assert_eq!(a.architecture(), arch);
    }

    #[test]
    fn fresh_conditional_net_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = Architecture::default_conditional(12, 8, 2);
        let p = init_params(&arch, 1).unwrap();
        let ModelParams::Conditional(net) = &p else { unreachable!() };
        // Lipschitz bound of the output head: product of Frobenius norms,
        // times 1/2 for the softmax Jacobian.
        let lip: f64 = net
            .output_head
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>().sqrt())
            .product::<f64>()
            * 0.5;
        for _ in 0..20 {
            let (b, c) = (random_vec(&mut rng, 12), random_vec(&mut rng, 8).iter().map(|v| v.abs() * 0.1).collect::<Vec<_>>());
            let f_in = stack_forward(&net.branch_base, &b, true, "b", None).unwrap();
            let (scale, bias) = net.modulation(&c).unwrap();
            let deviation: f64 = f_in
                .iter()
                .zip(&scale)
                .zip(&bias)
                .map(|((f, s), bb)| (f * (s - 1.0) + bb).powi(2))
                .sum::<f64>()
                .sqrt();
            let full = p.forward(&b, &c, None).unwrap();
            let plain = net.forward_unmodulated(&b).unwrap();
            let diff = full.iter().zip(&plain).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff <= lip * deviation + 1e-12, "diff {diff} bound {}", lip * deviation);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_params(&small_cond(2), 1).unwrap();
        let mut cache = ForwardCache::default();
        p.forward(&[0.1, 0.2, 0.3, 0.4], &[1.0, 0.0, 0.5], Some(&mut cache)).unwrap();
        let g = backward(&p, &cache, &[0.0, 0.0]).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn single_linear_layer_gradient_is_input() {
        // One layer, d_out = 1: pull the gradient on the logit directly.
        let arch = Architecture::Unconditional {
            input: 3,
            hidden: vec![],
            d_out: 1,
        };
        let p = init_params(&arch, 0).unwrap();
        let x = [0.5, -1.5, 2.0];
        let mut cache = ForwardCache::default();
        p.forward(&x, &[], Some(&mut cache)).unwrap();
        let mut g = p.zeros_like();
        accumulate_backward(&p, &cache, &[1.0], &mut g).unwrap();
        let ModelParams::Unconditional(n) = &g else { unreachable!() };
        assert_eq!(n.layers[0].weights, x.to_vec());
        assert_eq!(n.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn mismatched_cache_rejected() {
        let u = init_params(&Architecture::default_unconditional(4, 2), 0).unwrap();
        let c = init_params(&small_cond(2), 0).unwrap();
        let mut cache = ForwardCache::default();
        u.forward(&[0.0; 4], &[], Some(&mut cache)).unwrap();
        assert!(backward(&c, &cache, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut p = init_params(&Architecture::default_unconditional(2, 1), 0).unwrap();
        p.layers_mut()[1].bias[0] = f64::NAN;
        match p.forward(&[1.0, 1.0], &[], None) {
            Err(Error::Numeric { location, .. }) => assert_eq!(location, "layers[1]"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn architecture_validation_and_descriptor() {
        assert!(Architecture::Unconditional { input: 4, hidden: vec![8, 8], d_out: 1 }
            .validate()
            .is_err());
        assert!(Architecture::Unconditional { input: 4, hidden: vec![8, 4], d_out: 3 }
            .validate()
            .is_err());
        for arch in [
            Architecture::default_unconditional(55, 1),
            Architecture::default_conditional(55, 34, 2),
            Architecture::Conditional {
                base_input: 50,
                cond_input: 0,
                base_hidden: vec![16],
                cond_hidden: vec![],
                head_hidden: vec![],
                d_out: 1,
            },
        ] {
            assert_eq!(Architecture::from_descriptor(&arch.descriptor()).unwrap(), arch);
        }
    }
}
