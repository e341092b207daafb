//! Dense networks and the five-field ensemble.
//!
//! Each flow variable (u, v, p, k, ε) gets its own small tanh MLP taking
//! the normalized (x̂, ŷ, R̂) triple. The five nets share one architecture
//! and live side by side in a single flat parameter vector, so one tape
//! over that vector differentiates any combination of their outputs.
//!
//! Forward evaluation exists in two exactly-matching flavours: a plain
//! pass generic over [`Scalar`] (used for checkpoint evaluation and jet
//! probes) and a taped pass built from fused affine nodes (used during
//! training). Both accumulate each neuron as bias + Σ wᵢ·xᵢ in ascending
//! input order, which makes their results bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar, Tape, TapeScalar, Var};

/// A fully connected tanh network with a linear output layer.
///
/// Parameters are stored flat, layer by layer: first the weight matrix in
/// row-major `[out][in]` order, then the biases of that layer. This
/// layout is part of the checkpoint format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
}

impl DenseNet {
    /// `sizes` lists layer widths from input to output, e.g. `[3, 8, 1]`.
    pub fn new(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least input and output layers");
        assert!(sizes.iter().all(|&n| n > 0), "layer widths must be positive");
        DenseNet { sizes: sizes.to_vec() }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Σᵢ (nᵢ·nᵢ₊₁ + nᵢ₊₁) over consecutive layer pairs.
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights in ±√(6/(nᵢ + nᵢ₊₁)), zero biases. The
    /// generator is a counter-based stream cipher, so `(seed, stream)`
    /// fully determines the draw; the ensemble gives each field its own
    /// stream of the shared seed.
    pub fn init_params(&self, seed: u64, stream: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let (nin, nout) = (w[0], w[1]);
            let limit = (6.0 / (nin + nout) as f64).sqrt();
            for _ in 0..nin * nout {
                let u: f64 = rng.gen();
                params.push(limit * (2.0 * u - 1.0));
            }
            params.extend(std::iter::repeat(0.0).take(nout));
        }
        params
    }

    /// Plain forward pass over any scalar. `params` is this network's
    /// slice only. Hidden layers apply tanh; the last layer is linear.
    pub fn forward<S: Scalar>(&self, params: &[f64], input: &[S]) -> Vec<S> {
        assert_eq!(params.len(), self.param_count(), "parameter slice length");
        assert_eq!(input.len(), self.input_dim(), "input width");
        let mut current: Vec<S> = input.to_vec();
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (nin, nout) = (w[0], w[1]);
            let bias_base = off + nin * nout;
            let mut next = Vec::with_capacity(nout);
            for j in 0..nout {
                let w_base = off + j * nin;
                let mut acc = S::constant(params[bias_base + j]);
                for (i, x) in current.iter().enumerate() {
                    acc = acc + x.scale(params[w_base + i]);
                }
                next.push(acc);
            }
            if l + 2 < self.sizes.len() {
                for z in &mut next {
                    *z = z.tanh();
                }
            }
            current = next;
            off = bias_base + nout;
        }
        current
    }

    /// Taped forward pass. The caller must have recorded the
    /// `input_dim()` input nodes consecutively, starting at
    /// `first_input`; `param_offset` locates this network's slice inside
    /// the tape's parameter vector. Matches [`forward`](Self::forward)
    /// bit for bit because the fused affine node uses the same
    /// accumulation order.
    pub fn forward_on_tape<'a, T: TapeScalar>(
        &self,
        tape: &'a Tape<'a, T>,
        first_input: Var<'a, T>,
        param_offset: usize,
    ) -> Vec<Var<'a, T>> {
        let mut layer_first = first_input;
        let mut off = param_offset;
        let mut outputs: Vec<Var<'a, T>> = Vec::new();
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (nin, nout) = (w[0], w[1]);
            let bias_base = off + nin * nout;
            // Record all affine nodes of the layer first, then all
            // activations, so each block is contiguous and can serve as
            // the next layer's fused input run.
            let zs: Vec<Var<'a, T>> = (0..nout)
                .map(|j| tape.dot_affine(layer_first, nin, off + j * nin, bias_base + j))
                .collect();
            if l + 2 < self.sizes.len() {
                let acts: Vec<Var<'a, T>> = zs.iter().map(|z| z.tanh()).collect();
                layer_first = acts[0];
            } else {
                outputs = zs;
            }
            off = bias_base + nout;
        }
        outputs
    }
}

/// Output-side link functions tying raw network outputs to physical
/// ranges: turbulence kinetic energy must stay positive (softplus) and
/// dissipation spans decades (exp of a log-scale latent).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldTransform {
    Identity,
    Softplus,
    Exp,
}

impl FieldTransform {
    pub fn apply<S: Scalar>(self, raw: S) -> S {
        match self {
            FieldTransform::Identity => raw,
            FieldTransform::Softplus => raw.softplus(),
            FieldTransform::Exp => raw.exp(),
        }
    }
}

/// The five predicted variables, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowField {
    U,
    V,
    P,
    K,
    Eps,
}

impl FlowField {
    pub const ALL: [FlowField; 5] = [
        FlowField::U,
        FlowField::V,
        FlowField::P,
        FlowField::K,
        FlowField::Eps,
    ];

    pub fn index(self) -> usize {
        match self {
            FlowField::U => 0,
            FlowField::V => 1,
            FlowField::P => 2,
            FlowField::K => 3,
            FlowField::Eps => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowField::U => "u",
            FlowField::V => "v",
            FlowField::P => "p",
            FlowField::K => "k",
            FlowField::Eps => "eps",
        }
    }

    pub fn transform(self) -> FieldTransform {
        match self {
            FlowField::K => FieldTransform::Softplus,
            FlowField::Eps => FieldTransform::Exp,
            _ => FieldTransform::Identity,
        }
    }
}

/// Affine maps taking physical (x, y, Re) into the [−1, 1] cube the
/// networks were trained on. Stored with checkpoints so evaluation
/// reproduces training-time inputs exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub x_center: f64,
    pub x_half: f64,
    pub y_center: f64,
    pub y_half: f64,
    pub re_center: f64,
    pub re_half: f64,
}

fn half_span(lo: f64, hi: f64) -> f64 {
    let h = (hi - lo) / 2.0;
    // A degenerate range (single x-line, single Re) normalizes to the
    // center with unit slope rather than dividing by zero.
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

impl InputNorm {
    pub fn from_ranges(x: (f64, f64), y: (f64, f64), re: (f64, f64)) -> Self {
        assert!(x.1 >= x.0 && y.1 >= y.0 && re.1 >= re.0, "ranges must be ordered");
        InputNorm {
            x_center: (x.0 + x.1) / 2.0,
            x_half: half_span(x.0, x.1),
            y_center: (y.0 + y.1) / 2.0,
            y_half: half_span(y.0, y.1),
            re_center: (re.0 + re.1) / 2.0,
            re_half: half_span(re.0, re.1),
        }
    }

    pub fn normalize(&self, x: f64, y: f64, re: f64) -> [f64; 3] {
        [
            (x - self.x_center) / self.x_half,
            (y - self.y_center) / self.y_half,
            (re - self.re_center) / self.re_half,
        ]
    }

    /// Seeded jet inputs: x̂ and ŷ carry d/dx = 1/x_half, d/dy = 1/y_half
    /// (the maps are affine, so no second-order seed terms), while R̂ is
    /// passive — jets differentiate in space only.
    pub fn jet_inputs(&self, x: f64, y: f64, re: f64) -> [Jet2; 3] {
        let [xh, yh, rh] = self.normalize(x, y, re);
        [
            Jet2::seed_affine_x(xh, 1.0 / self.x_half),
            Jet2::seed_affine_y(yh, 1.0 / self.y_half),
            Jet2::constant(rh),
        ]
    }
}

/// Five identically shaped networks over a shared normalized input,
/// one per flow variable, with per-field output transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEnsemble {
    net: DenseNet,
    pub norm: InputNorm,
}

impl NetworkEnsemble {
    /// `hidden` lists hidden-layer widths; input is always the
    /// (x̂, ŷ, R̂) triple and each field net has one output.
    pub fn new(hidden: &[usize], norm: InputNorm) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(3);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        NetworkEnsemble { net: DenseNet::new(&sizes), norm }
    }

    pub fn from_parts(net: DenseNet, norm: InputNorm) -> Self {
        assert_eq!(net.input_dim(), 3, "field networks take (x̂, ŷ, R̂)");
        assert_eq!(net.output_dim(), 1, "field networks are scalar-valued");
        NetworkEnsemble { net, norm }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn params_per_net(&self) -> usize {
        self.net.param_count()
    }

    pub fn total_params(&self) -> usize {
        5 * self.net.param_count()
    }

    pub fn param_offset(&self, field: FlowField) -> usize {
        field.index() * self.net.param_count()
    }

    pub fn param_range(&self, field: FlowField) -> std::ops::Range<usize> {
        let off = self.param_offset(field);
        off..off + self.net.param_count()
    }

    /// One flat vector for all five nets; field `i` draws from stream `i`
    /// of the seed, so adding or reordering fields cannot silently shift
    /// another field's initialization.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.total_params());
        for field in FlowField::ALL {
            params.extend(self.net.init_params(seed, field.index() as u64));
        }
        params
    }

    /// Plain evaluation at physical coordinates, transforms applied.
    /// Returns [u, v, p, k, eps] over any scalar; pass jets through
    /// [`eval_jets`](Self::eval_jets) to also get spatial derivatives.
    pub fn eval_plain(&self, params: &[f64], x: f64, y: f64, re: f64) -> [f64; 5] {
        assert_eq!(params.len(), self.total_params(), "flat parameter vector length");
        let input = self.norm.normalize(x, y, re);
        let mut out = [0.0; 5];
        for field in FlowField::ALL {
            let slice = &params[self.param_range(field)];
            let raw = self.net.forward(slice, &input)[0];
            out[field.index()] = field.transform().apply(raw);
        }
        out
    }

    /// Jet evaluation: values plus first and second spatial derivatives
    /// of all five fields at one physical point.
    pub fn eval_jets(&self, params: &[f64], x: f64, y: f64, re: f64) -> [Jet2; 5] {
        assert_eq!(params.len(), self.total_params(), "flat parameter vector length");
        let input = self.norm.jet_inputs(x, y, re);
        let mut out = [Jet2::constant(0.0); 5];
        for field in FlowField::ALL {
            let slice = &params[self.param_range(field)];
            let raw = self.net.forward(slice, &input)[0];
            out[field.index()] = field.transform().apply(raw);
        }
        out
    }

    /// Taped evaluation of all five fields at one (already normalized)
    /// input triple. Records the three input leaves once; the five
    /// subgraphs share them but touch disjoint parameter slices.
    pub fn forward_on_tape<'a, T: TapeScalar>(
        &self,
        tape: &'a Tape<'a, T>,
        inputs: [T; 3],
    ) -> [Var<'a, T>; 5] {
        let first = tape.leaf(inputs[0]);
        tape.leaf(inputs[1]);
        tape.leaf(inputs[2]);
        let mut out = [Var::constant(0.0); 5];
        for field in FlowField::ALL {
            let raw = self.net.forward_on_tape(tape, first, self.param_offset(field))[0];
            out[field.index()] = field.transform().apply(raw);
        }
        out
    }
}
