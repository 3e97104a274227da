//! A small U-Net style encoder–decoder.
//!
//! Topology for `depth = D` and `base_width = B` (widths `c_l = B·2^l`):
//!
//! * encoder level `l` (0..D): two 3×3 conv + ReLU to `c_l` channels, then 2×2 max-pool;
//! * bottleneck: two 3×3 conv + ReLU to `c_D` channels;
//! * decoder level `l` (D-1..=0): nearest 2× upsample, concatenate
//!   `[upsampled, encoder skip l]`, two 3×3 conv + ReLU to `c_l` channels;
//! * head: 1×1 conv to `num_classes` logits.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, format_err, shape_err, Error, Result};
use crate::tensor::{
    concat_channels, conv2d_backward, conv2d_forward, downsample2x, downsample2x_backward,
    relu_backward, relu_forward, split_channels, upsample2x, upsample2x_backward, Tensor,
};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 9,
            base_width: 16,
            depth: 3,
            seed: 0,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return config_err("depth must be at least 1");
        }
        if !(2..=256).contains(&self.num_classes) {
            return config_err(format!("num_classes must lie in 2..=256, got {}", self.num_classes));
        }
        if self.in_channels < 1 || self.base_width < 1 {
            return config_err("in_channels and base_width must be positive");
        }
        if self.depth > 16 {
            return config_err(format!("depth {} is unreasonably large", self.depth));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this.
    pub fn resolution_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_resolution(&self, height: usize, width: usize) -> Result<()> {
        let m = self.resolution_multiple();
        if height == 0 || width == 0 || !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return shape_err(format!(
                "input {height}×{width} is not divisible by 2^depth = {m}"
            ));
        }
        Ok(())
    }

    fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Conv layers in execution order.
    pub fn layers(&self) -> Vec<ConvLayer> {
        let mut layers = Vec::with_capacity(4 * self.depth + 3);
        let mut push = |name: String, cin: usize, cout: usize, kernel: usize| {
            layers.push(ConvLayer {
                name,
                in_channels: cin,
                out_channels: cout,
                kernel,
            })
        };
        for l in 0..self.depth {
            let cin = if l == 0 { self.in_channels } else { self.width_at(l - 1) };
            push(format!("enc{l}.conv1"), cin, self.width_at(l), 3);
            push(format!("enc{l}.conv2"), self.width_at(l), self.width_at(l), 3);
        }
        let mid = self.width_at(self.depth);
        push("mid.conv1".into(), self.width_at(self.depth - 1), mid, 3);
        push("mid.conv2".into(), mid, mid, 3);
        for l in (0..self.depth).rev() {
            let cin = self.width_at(l + 1) + self.width_at(l);
            push(format!("dec{l}.conv1"), cin, self.width_at(l), 3);
            push(format!("dec{l}.conv2"), self.width_at(l), self.width_at(l), 3);
        }
        push("head".into(), self.base_width, self.num_classes, 1);
        layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.out_channels * (l.in_channels * l.kernel * l.kernel + 1))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvLayer {
    fn padding(&self) -> usize {
        self.kernel / 2
    }
}

/// Named parameter tensors in a fixed order: `weight`, `bias` per conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    spec: NetworkSpec,
    tensors: Vec<(String, Tensor)>,
}

impl ParameterSet {
    /// All-zero parameters with the topology of `spec`.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut tensors = Vec::new();
        for layer in spec.layers() {
            tensors.push((
                format!("{}.weight", layer.name),
                Tensor::zeros(&[layer.out_channels, layer.in_channels, layer.kernel, layer.kernel]),
            ));
            tensors.push((format!("{}.bias", layer.name), Tensor::zeros(&[layer.out_channels])));
        }
        Ok(Self {
            spec: *spec,
            tensors,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    fn weight(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer].1
    }

    fn bias(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer + 1].1
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0` and comparing NaN payloads.
    pub fn bit_identical(&self, other: &ParameterSet) -> bool {
        self.spec == other.spec
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Kaiming-normal kernels (`std = sqrt(2 / fan_in)`) and zero biases, drawn in
/// parameter order from a ChaCha8 stream seeded with `spec.seed`.
pub fn build_and_init(spec: &NetworkSpec) -> Result<ParameterSet> {
    let mut params = ParameterSet::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (layer, conv) in spec.layers().iter().enumerate() {
        let fan_in = conv.in_channels * conv.kernel * conv.kernel;
        let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        for v in params.tensors[2 * layer].1.data_mut() {
            *v = normal.sample(&mut rng) as f32;
        }
    }
    Ok(params)
}

/// Activations retained from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    conv_inputs: Vec<Tensor>,
    /// Post-ReLU outputs (the head has none).
    conv_outputs: Vec<Tensor>,
}

fn check_images(params: &ParameterSet, images: &Tensor) -> Result<()> {
    let (_, c, h, w) = images.dims4()?;
    let spec = params.spec();
    if c != spec.in_channels {
        return shape_err(format!(
            "images have {c} channels, network expects {}",
            spec.in_channels
        ));
    }
    spec.check_resolution(h, w)
}

/// Full-resolution `[N, K, H, W]` logits together with the trace needed by [`backward_traced`].
pub fn forward_traced(params: &ParameterSet, images: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    check_images(params, images)?;
    let depth = params.spec.depth;
    let layers = params.spec.layers();
    let mut trace = ForwardTrace {
        conv_inputs: Vec::with_capacity(layers.len()),
        conv_outputs: Vec::with_capacity(layers.len()),
    };
    let run = |trace: &mut ForwardTrace, idx: usize, x: Tensor| -> Result<Tensor> {
        let layer = &layers[idx];
        let y = conv2d_forward(&x, params.weight(idx), params.bias(idx), 1, layer.padding())?;
        trace.conv_inputs.push(x);
        let y = relu_forward(&y);
        trace.conv_outputs.push(y.clone());
        Ok(y)
    };

    let mut x = images.clone();
    let mut skips = Vec::with_capacity(depth);
    for l in 0..depth {
        x = run(&mut trace, 2 * l, x)?;
        x = run(&mut trace, 2 * l + 1, x)?;
        let pooled = downsample2x(&x)?;
        skips.push(x);
        x = pooled;
    }
    x = run(&mut trace, 2 * depth, x)?;
    x = run(&mut trace, 2 * depth + 1, x)?;
    for (j, l) in (0..depth).rev().enumerate() {
        let up = upsample2x(&x)?;
        x = concat_channels(&up, &skips[l])?;
        x = run(&mut trace, 2 * depth + 2 + 2 * j, x)?;
        x = run(&mut trace, 2 * depth + 3 + 2 * j, x)?;
    }
    let head = layers.len() - 1;
    let logits = conv2d_forward(&x, params.weight(head), params.bias(head), 1, 0)?;
    trace.conv_inputs.push(x);
    Ok((logits, trace))
}

pub fn forward(params: &ParameterSet, images: &Tensor) -> Result<Tensor> {
    forward_traced(params, images).map(|(logits, _)| logits)
}

/// Parameter gradients given the trace of the matching forward pass.
pub fn backward_traced(
    params: &ParameterSet,
    trace: &ForwardTrace,
    grad_logits: &Tensor,
) -> Result<ParameterSet> {
    let spec = params.spec;
    let depth = spec.depth;
    let layers = spec.layers();
    if trace.conv_inputs.len() != layers.len() {
        return shape_err("forward trace does not belong to this network");
    }
    let (n, _, h, w) = trace.conv_inputs[0].dims4()?;
    let expected = [n, spec.num_classes, h, w];
    if grad_logits.shape() != expected {
        return shape_err(format!(
            "grad_logits shape {:?} does not match logits {:?}",
            grad_logits.shape(),
            expected
        ));
    }

    let mut grads = ParameterSet::zeros(&spec)?;
    let store = |grads: &mut ParameterSet, idx: usize, kernel: Tensor, bias: Tensor| {
        grads.tensors[2 * idx].1 = kernel;
        grads.tensors[2 * idx + 1].1 = bias;
    };
    // Backward through conv `idx` and its ReLU; returns the gradient wrt the conv input.
    let conv_relu = |grads: &mut ParameterSet, idx: usize, g: Tensor| -> Result<Tensor> {
        let g = relu_backward(&trace.conv_outputs[idx], &g)?;
        let cg = conv2d_backward(
            &trace.conv_inputs[idx],
            params.weight(idx),
            &g,
            1,
            layers[idx].padding(),
        )?;
        grads.tensors[2 * idx].1 = cg.kernel;
        grads.tensors[2 * idx + 1].1 = cg.bias;
        Ok(cg.input)
    };

    let head = layers.len() - 1;
    let cg = conv2d_backward(&trace.conv_inputs[head], params.weight(head), grad_logits, 1, 0)?;
    store(&mut grads, head, cg.kernel, cg.bias);
    let mut g = cg.input;

    let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
    for (j, l) in (0..depth).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
        g = conv_relu(&mut grads, 2 * depth + 3 + 2 * j, g)?;
        g = conv_relu(&mut grads, 2 * depth + 2 + 2 * j, g)?;
        let (g_up, g_skip) = split_channels(&g, spec.width_at(l + 1))?;
        skip_grads[l] = Some(g_skip);
        g = upsample2x_backward(&g_up)?;
    }
    g = conv_relu(&mut grads, 2 * depth + 1, g)?;
    g = conv_relu(&mut grads, 2 * depth, g)?;
    for l in (0..depth).rev() {
        let pre_pool = &trace.conv_outputs[2 * l + 1];
        let mut pooled = downsample2x_backward(pre_pool, &g)?;
        let skip = skip_grads[l].take().expect("every decoder level records its skip gradient");
        for (a, b) in pooled.data_mut().iter_mut().zip(skip.data()) {
            *a += b;
        }
        g = conv_relu(&mut grads, 2 * l + 1, pooled)?;
        g = conv_relu(&mut grads, 2 * l, g)?;
    }
    Ok(grads)
}

/// Exact parameter gradient of `Σ grad_logits ⊙ forward(params, images)`.
pub fn backward(params: &ParameterSet, images: &Tensor, grad_logits: &Tensor) -> Result<ParameterSet> {
    let (_, trace) = forward_traced(params, images)?;
    backward_traced(params, &trace, grad_logits)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialises parameters in the checkpoint format.
pub fn encode_checkpoint(params: &ParameterSet) -> Result<Vec<u8>> {
    let spec = params.spec;
    let mut buf = Vec::with_capacity(64 + 4 * params.element_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut buf, spec.in_channels)?;
    put_u32(&mut buf, spec.num_classes)?;
    put_u32(&mut buf, spec.base_width)?;
    put_u32(&mut buf, spec.depth)?;
    buf.extend_from_slice(&spec.seed.to_le_bytes());
    put_u32(&mut buf, params.tensors.len())?;
    for (name, tensor) in &params.tensors {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, tensor.shape().len())?;
        for &d in tensor.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return format_err(format!("checkpoint truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParameterSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return format_err("not a checkpoint (bad magic)");
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return format_err(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        ));
    }
    let spec = NetworkSpec {
        in_channels: r.u32()?,
        num_classes: r.u32()?,
        base_width: r.u32()?,
        depth: r.u32()?,
        seed: r.u64()?,
    };
    spec.validate()
        .map_err(|e| Error::Format(format!("invalid network spec in checkpoint: {e}")))?;
    let mut params = ParameterSet::zeros(&spec)?;
    let count = r.u32()?;
    if count != params.tensors.len() {
        return format_err(format!(
            "checkpoint holds {count} tensors, spec implies {}",
            params.tensors.len()
        ));
    }
    for (expected_name, tensor) in params.tensors.iter_mut() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != expected_name {
            return format_err(format!("expected tensor `{expected_name}`, found `{name}`"));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != tensor.shape() {
            return format_err(format!(
                "tensor `{name}` has shape {shape:?}, spec implies {:?}",
                tensor.shape()
            ));
        }
        let payload = r.take(4 * tensor.len())?;
        for (v, chunk) in tensor.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return format_err(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParameterSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterSet> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint and rejects it unless it was built from `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<ParameterSet> {
    let params = load_checkpoint(path)?;
    if params.spec() != expected {
        return format_err(format!(
            "checkpoint spec {:?} does not match expected {:?}",
            params.spec(),
            expected
        ));
    }
    Ok(params)
}
