//! Small parameterised networks with explicit reverse passes.
//!
//! Five fixed architectures are supported: affine maps, MLPs, residual MLPs,
//! input-convex networks and per-example lookup tables. Parameters live in a
//! single flat [`ParamVector`] split into named segments, so optimisers and
//! checkpoints treat every architecture the same way.

use std::io::{Read, Write};

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Linear,
    Mlp,
    #[serde(rename = "resnet")]
    ResNet,
    Icnn,
    PerExampleTable,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Linear => "linear",
            NetKind::Mlp => "mlp",
            NetKind::ResNet => "resnet",
            NetKind::Icnn => "icnn",
            NetKind::PerExampleTable => "per_example_table",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Softplus => softplus(z),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
        }
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Architecture description. Serialised as the checkpoint header.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub table_size: usize,
}

impl NetSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        NetSpec {
            kind: NetKind::Linear,
            input_dim,
            output_dim,
            hidden_dims: vec![],
            activation: Activation::Relu,
            table_size: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        NetSpec {
            kind: NetKind::Mlp,
            input_dim,
            output_dim,
            hidden_dims,
            activation,
            table_size: 0,
        }
    }

    /// Residual MLP with `blocks` identity-skip blocks of constant `width`.
    pub fn resnet(input_dim: usize, width: usize, blocks: usize, output_dim: usize, activation: Activation) -> Self {
        NetSpec {
            kind: NetKind::ResNet,
            input_dim,
            output_dim,
            hidden_dims: vec![width; blocks],
            activation,
            table_size: 0,
        }
    }

    pub fn icnn(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        NetSpec {
            kind: NetKind::Icnn,
            input_dim,
            output_dim,
            hidden_dims,
            activation: Activation::Softplus,
            table_size: 0,
        }
    }

    pub fn table(table_size: usize) -> Self {
        NetSpec {
            kind: NetKind::PerExampleTable,
            input_dim: 0,
            output_dim: 1,
            hidden_dims: vec![],
            activation: Activation::Relu,
            table_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{} network: {m}", self.kind.name())));
        if self.output_dim == 0 {
            return bad("output_dim must be positive");
        }
        match self.kind {
            NetKind::PerExampleTable => {
                if self.output_dim != 1 {
                    return bad("output_dim must be 1");
                }
            }
            NetKind::Linear => {}
            NetKind::Mlp => {
                if self.hidden_dims.iter().any(|&h| h == 0) {
                    return bad("hidden widths must be positive");
                }
            }
            NetKind::ResNet => {
                let Some(&w) = self.hidden_dims.first() else {
                    return bad("needs at least one block");
                };
                if w == 0 || self.hidden_dims.iter().any(|&h| h != w) {
                    return bad("blocks must share one positive width");
                }
            }
            NetKind::Icnn => {
                if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&h| h == 0) {
                    return bad("needs at least one positive hidden layer");
                }
            }
        }
        Ok(())
    }

    /// Named parameter segments in storage order.
    pub fn layout(&self) -> Vec<Segment> {
        let mut b = LayoutBuilder::default();
        let d = self.input_dim;
        let out = self.output_dim;
        match self.kind {
            NetKind::Linear => {
                b.push("w", out, d);
                b.push("b", out, 1);
            }
            NetKind::Mlp => {
                let dims = self.mlp_dims();
                for l in 0..dims.len() - 1 {
                    b.push(&format!("w{l}"), dims[l + 1], dims[l]);
                    b.push(&format!("b{l}"), dims[l + 1], 1);
                }
            }
            NetKind::ResNet => {
                let h = self.hidden_dims[0];
                b.push("w_in", h, d);
                b.push("b_in", h, 1);
                for l in 0..self.hidden_dims.len() {
                    b.push(&format!("w_block{l}"), h, h);
                    b.push(&format!("b_block{l}"), h, 1);
                }
                b.push("w_out", out, h);
                b.push("b_out", out, 1);
            }
            NetKind::Icnn => {
                let hs = &self.hidden_dims;
                b.push("wx0", hs[0], d);
                b.push("b0", hs[0], 1);
                for l in 1..hs.len() {
                    b.push(&format!("wz{l}"), hs[l], hs[l - 1]);
                    b.push(&format!("wx{l}"), hs[l], d);
                    b.push(&format!("b{l}"), hs[l], 1);
                }
                b.push("wz_out", out, hs[hs.len() - 1]);
                b.push("wx_out", out, d);
                b.push("b_out", out, 1);
            }
            NetKind::PerExampleTable => {
                b.push("v", self.table_size, 1);
            }
        }
        b.segments
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(Segment::len).sum()
    }

    fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }
}

#[derive(Default)]
struct LayoutBuilder {
    segments: Vec<Segment>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: &str, rows: usize, cols: usize) {
        self.segments.push(Segment {
            name: name.to_string(),
            offset: self.offset,
            rows,
            cols,
        });
        self.offset += rows * cols;
    }
}

/// A contiguous row-major block of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter (or gradient) storage with a named segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        let segments = spec.layout();
        let n = segments.iter().map(Segment::len).sum();
        ParamVector {
            values: vec![0.0; n],
            segments,
        }
    }

    pub fn from_values(spec: &NetSpec, values: Vec<f64>) -> Result<Self> {
        let segments = spec.layout();
        let n: usize = segments.iter().map(Segment::len).sum();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.len(),
            });
        }
        Ok(ParamVector { values, segments })
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            segments: self.segments.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.name == name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.segments.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[r])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.values {
            *a *= alpha;
        }
    }

    fn seg(&self, idx: usize) -> &[f64] {
        &self.values[self.segments[idx].range()]
    }
}

/// Network input: a feature vector, or an example id for lookup tables.
#[derive(Clone, Copy, Debug)]
pub enum NetInput<'a> {
    Features(&'a [f64]),
    Example(usize),
}

#[derive(Clone, Debug, PartialEq)]
enum TapeInput {
    Features(Vec<f64>),
    Example(usize),
}

/// Cached activations from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTape {
    kind: NetKind,
    num_params: usize,
    input: TapeInput,
    /// Pre-activations per hidden layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation hidden states (residual stream for ResNet).
    hidden: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl EvalTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Network specification plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl Net {
    pub fn new(spec: NetSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.num_params() {
            return Err(Error::DimensionMismatch {
                expected: spec.num_params(),
                got: params.len(),
            });
        }
        Ok(Net { spec, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let params = init(&spec, rng)?;
        Ok(Net { spec, params })
    }

    pub fn forward(&self, x: NetInput<'_>) -> Result<(Vec<f64>, EvalTape)> {
        forward(&self.spec, &self.params, x)
    }

    pub fn backward(&self, tape: &EvalTape, cotangent: &[f64]) -> Result<ParamVector> {
        backward(&self.spec, &self.params, tape, cotangent)
    }

    /// Pick the input variant this architecture consumes.
    pub fn input<'a>(&self, x: &'a [f64], id: usize) -> NetInput<'a> {
        if self.spec.kind == NetKind::PerExampleTable {
            NetInput::Example(id)
        } else {
            NetInput::Features(x)
        }
    }
}

/// Glorot-uniform weights, zero biases; tables start at zero and ICNN
/// hidden-path weights are folded to their absolute value.
pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<ParamVector> {
    spec.validate()?;
    let mut p = ParamVector::zeros(spec);
    if spec.kind == NetKind::PerExampleTable {
        return Ok(p);
    }
    for seg in p.segments.clone() {
        if seg.cols == 1 && seg.name.starts_with('b') {
            continue;
        }
        let a = (6.0 / (seg.rows + seg.cols) as f64).sqrt();
        let nonneg = spec.kind == NetKind::Icnn && seg.name.starts_with("wz");
        for v in &mut p.values[seg.range()] {
            let w = rng.gen_range(-a..=a);
            *v = if nonneg { w.abs() } else { w };
        }
    }
    Ok(p)
}

/// Clamp the hidden-path weights of an ICNN at zero from below.
pub fn project_icnn(spec: &NetSpec, params: &ParamVector) -> Result<ParamVector> {
    let mut p = params.clone();
    project_icnn_in_place(spec, &mut p)?;
    Ok(p)
}

pub fn project_icnn_in_place(spec: &NetSpec, params: &mut ParamVector) -> Result<()> {
    if spec.kind != NetKind::Icnn {
        return Err(Error::WrongKind {
            expected: "icnn",
            got: spec.kind.name().into(),
        });
    }
    for seg in params.segments.clone() {
        if seg.name.starts_with("wz") {
            for v in &mut params.values[seg.range()] {
                *v = v.max(0.0);
            }
        }
    }
    Ok(())
}

// out = W x + b, W row-major (rows x cols)
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, &bias)| {
        let row = &w[r * cols..(r + 1) * cols];
        bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

// out += W x
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// out += Wᵀ d
fn matvec_t_add(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * dr;
        }
    }
}

// G += d xᵀ
fn outer_add(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (gv, &xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *gv += dr * xv;
        }
    }
}

fn check_params(spec: &NetSpec, params: &ParamVector) -> Result<()> {
    let n = spec.num_params();
    if params.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.len(),
        });
    }
    Ok(())
}

/// Evaluate the network and record what the reverse pass needs.
pub fn forward(spec: &NetSpec, params: &ParamVector, x: NetInput<'_>) -> Result<(Vec<f64>, EvalTape)> {
    check_params(spec, params)?;
    let act = spec.activation;
    let mut pre = Vec::new();
    let mut hidden = Vec::new();

    let (input, output) = match (spec.kind, x) {
        (NetKind::PerExampleTable, NetInput::Example(id)) => {
            if id >= spec.table_size {
                return Err(Error::UnknownExampleId {
                    id,
                    size: spec.table_size,
                });
            }
            (TapeInput::Example(id), vec![params.values[id]])
        }
        (NetKind::PerExampleTable, NetInput::Features(_)) => {
            return Err(Error::Config("lookup table needs an example id".into()))
        }
        (_, NetInput::Example(_)) => {
            return Err(Error::Config(format!("{} network needs features", spec.kind.name())))
        }
        (kind, NetInput::Features(x)) => {
            if x.len() != spec.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.input_dim,
                    got: x.len(),
                });
            }
            let mut out = Vec::new();
            match kind {
                NetKind::Linear => affine(params.seg(0), params.seg(1), x, &mut out),
                NetKind::Mlp => {
                    let layers = spec.hidden_dims.len() + 1;
                    let mut a = x.to_vec();
                    for l in 0..layers {
                        let mut z = Vec::new();
                        affine(params.seg(2 * l), params.seg(2 * l + 1), &a, &mut z);
                        if l + 1 == layers {
                            out = z;
                        } else {
                            a = z.iter().map(|&v| act.apply(v)).collect();
                            pre.push(z);
                            hidden.push(a.clone());
                        }
                    }
                }
                NetKind::ResNet => {
                    let blocks = spec.hidden_dims.len();
                    let mut z = Vec::new();
                    affine(params.seg(0), params.seg(1), x, &mut z);
                    let mut s: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
                    pre.push(z);
                    hidden.push(s.clone());
                    for l in 0..blocks {
                        let mut p = Vec::new();
                        affine(params.seg(2 + 2 * l), params.seg(3 + 2 * l), &s, &mut p);
                        for (sv, &pv) in s.iter_mut().zip(&p) {
                            *sv += act.apply(pv);
                        }
                        pre.push(p);
                        hidden.push(s.clone());
                    }
                    let o = 2 + 2 * blocks;
                    affine(params.seg(o), params.seg(o + 1), &s, &mut out);
                }
                NetKind::Icnn => {
                    let layers = spec.hidden_dims.len();
                    let mut z = Vec::new();
                    affine(params.seg(0), params.seg(1), x, &mut z);
                    let mut h: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
                    pre.push(z);
                    hidden.push(h.clone());
                    for l in 1..layers {
                        let base = 2 + 3 * (l - 1);
                        let mut p = Vec::new();
                        affine(params.seg(base + 1), params.seg(base + 2), x, &mut p);
                        matvec_add(params.seg(base), &h, &mut p);
                        h = p.iter().map(|&v| act.apply(v)).collect();
                        pre.push(p);
                        hidden.push(h.clone());
                    }
                    let base = 2 + 3 * (layers - 1);
                    affine(params.seg(base + 1), params.seg(base + 2), x, &mut out);
                    matvec_add(params.seg(base), &h, &mut out);
                }
                NetKind::PerExampleTable => unreachable!(),
            }
            (TapeInput::Features(x.to_vec()), out)
        }
    };

    let tape = EvalTape {
        kind: spec.kind,
        num_params: params.len(),
        input,
        pre,
        hidden,
        output: output.clone(),
    };
    Ok((output, tape))
}

/// Gradient of `⟨output, cotangent⟩` with respect to the parameters.
pub fn backward(spec: &NetSpec, params: &ParamVector, tape: &EvalTape, cotangent: &[f64]) -> Result<ParamVector> {
    if tape.kind != spec.kind || tape.num_params != params.len() {
        return Err(Error::TapeMismatch);
    }
    if cotangent.len() != spec.output_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.output_dim,
            got: cotangent.len(),
        });
    }
    let act = spec.activation;
    let mut grad = params.zeros_like();
    let segs = grad.segments.clone();
    let g = &mut grad.values;

    let x = match &tape.input {
        TapeInput::Example(id) => {
            g[*id] += cotangent[0];
            return Ok(grad);
        }
        TapeInput::Features(x) => x.as_slice(),
    };

    match spec.kind {
        NetKind::Linear => {
            outer_add(&mut g[segs[0].range()], cotangent, x);
            add(&mut g[segs[1].range()], cotangent);
        }
        NetKind::Mlp => {
            let layers = spec.hidden_dims.len() + 1;
            let mut delta = cotangent.to_vec();
            for l in (0..layers).rev() {
                let a_in = if l == 0 { x } else { tape.hidden[l - 1].as_slice() };
                outer_add(&mut g[segs[2 * l].range()], &delta, a_in);
                add(&mut g[segs[2 * l + 1].range()], &delta);
                if l > 0 {
                    let mut back = vec![0.0; a_in.len()];
                    matvec_t_add(params.seg(2 * l), &delta, &mut back);
                    for (b, &z) in back.iter_mut().zip(&tape.pre[l - 1]) {
                        *b *= act.derivative(z);
                    }
                    delta = back;
                }
            }
        }
        NetKind::ResNet => {
            let blocks = spec.hidden_dims.len();
            let o = 2 + 2 * blocks;
            outer_add(&mut g[segs[o].range()], cotangent, &tape.hidden[blocks]);
            add(&mut g[segs[o + 1].range()], cotangent);
            let mut delta = vec![0.0; spec.hidden_dims[0]];
            matvec_t_add(params.seg(o), cotangent, &mut delta);
            for l in (0..blocks).rev() {
                let e: Vec<f64> = delta
                    .iter()
                    .zip(&tape.pre[l + 1])
                    .map(|(&d, &p)| d * act.derivative(p))
                    .collect();
                outer_add(&mut g[segs[2 + 2 * l].range()], &e, &tape.hidden[l]);
                add(&mut g[segs[3 + 2 * l].range()], &e);
                matvec_t_add(params.seg(2 + 2 * l), &e, &mut delta);
            }
            let e: Vec<f64> = delta.iter().zip(&tape.pre[0]).map(|(&d, &p)| d * act.derivative(p)).collect();
            outer_add(&mut g[segs[0].range()], &e, x);
            add(&mut g[segs[1].range()], &e);
        }
        NetKind::Icnn => {
            let layers = spec.hidden_dims.len();
            let base = 2 + 3 * (layers - 1);
            outer_add(&mut g[segs[base].range()], cotangent, &tape.hidden[layers - 1]);
            outer_add(&mut g[segs[base + 1].range()], cotangent, x);
            add(&mut g[segs[base + 2].range()], cotangent);
            let mut delta = vec![0.0; spec.hidden_dims[layers - 1]];
            matvec_t_add(params.seg(base), cotangent, &mut delta);
            for l in (1..layers).rev() {
                let b = 2 + 3 * (l - 1);
                let e: Vec<f64> = delta.iter().zip(&tape.pre[l]).map(|(&d, &p)| d * act.derivative(p)).collect();
                outer_add(&mut g[segs[b].range()], &e, &tape.hidden[l - 1]);
                outer_add(&mut g[segs[b + 1].range()], &e, x);
                add(&mut g[segs[b + 2].range()], &e);
                delta = vec![0.0; spec.hidden_dims[l - 1]];
                matvec_t_add(params.seg(b), &e, &mut delta);
            }
            let e: Vec<f64> = delta.iter().zip(&tape.pre[0]).map(|(&d, &p)| d * act.derivative(p)).collect();
            outer_add(&mut g[segs[0].range()], &e, x);
            add(&mut g[segs[1].range()], &e);
        }
        NetKind::PerExampleTable => unreachable!("table tapes hold an example id"),
    }
    Ok(grad)
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MMNETCK1";

/// Write `magic | u64 header_len | header JSON | u64 count | f64 values`,
/// all integers and floats little-endian.
pub fn write_checkpoint<W: Write, H: Serialize>(mut w: W, header: &H, values: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read, H: DeserializeOwned>(mut r: R) -> Result<(H, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: "not a network checkpoint".into(),
        });
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((header, values))
}

/// Checkpoint a single network with its spec as the header.
pub fn save_net<W: Write>(w: W, net: &Net) -> Result<()> {
    write_checkpoint(w, &net.spec, &net.params.values)
}

pub fn load_net<R: Read>(r: R) -> Result<Net> {
    let (spec, values): (NetSpec, Vec<f64>) = read_checkpoint(r)?;
    let params = ParamVector::from_values(&spec, values)?;
    Net::new(spec, params)
}
