//! Network building blocks and the two ODE right-hand sides.
//!
//! [`OnsagerNet`] evaluates
//!
//! ```text
//! ḣ = −(L(h)L(h)ᵀ + αI + W̃(h)) ∇V(h) + f(h)
//! V(h) = ½ Σᵢ (Uᵢ(h) + Σⱼ γᵢⱼ hⱼ)² + β‖h‖²
//! ```
//!
//! where `U`, `L` and `W̃` are affine read-outs of one shared MLP. `∇V` is
//! assembled as an explicit graph (a vector–Jacobian product through the
//! shared MLP built from activation-derivative ops), so parameter gradients
//! of the right-hand side need only one reverse sweep.
//!
//! [`MlpOden`] is the unstructured baseline: an MLP with residual shortcuts
//! and a linear read-out of the same dimension as its input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::integrate::VectorField;
use crate::tensor::{triangle_masks, Activation, Tape, Tensor, TensorError, Var};

/// Affine layer `y = x W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform initialisation in `[−s, s]`, `s = fan_in^{-1/2}`.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let s = if input > 0 { (input as f64).powf(-0.5) } else { 0.0 };
        let mut draw = || if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
        let weight = Tensor::from_fn(input, output, |_, _| draw());
        let bias = Tensor::from_fn(1, output, |_, _| draw());
        Self { weight, bias }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }

    fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl DenseVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_row(xw, self.bias)
    }

    fn params(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Stack of activated affine layers. With `shortcut` set, every layer after
/// the first whose input and output widths agree adds its input back
/// (`x ↦ σ(xW + b) + x`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub shortcut: bool,
}

impl Mlp {
    /// `widths[0]` is the input width, `widths[k]` the output of layer `k`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, shortcut: bool, rng: &mut R) -> Self {
        let layers = widths.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Self {
            layers,
            activation,
            shortcut,
        }
    }

    pub fn zeros(widths: &[usize], activation: Activation, shortcut: bool) -> Self {
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            layers,
            activation,
            shortcut,
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(Dense::input_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Dense::output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn residual(&self, k: usize) -> bool {
        let l = &self.layers[k];
        self.shortcut && k > 0 && l.input_dim() == l.output_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            residual: (0..self.layers.len()).map(|k| self.residual(k)).collect(),
            activation: self.activation,
        }
    }

    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Dense::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Dense::tensors_mut).collect()
    }
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<DenseVars>,
    residual: Vec<bool>,
    activation: Activation,
}

/// Forward pass record needed to differentiate an MLP by hand.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub output: Var,
    pre_activations: Vec<Var>,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<MlpTrace, TensorError> {
        let mut cur = x;
        let mut pre = Vec::with_capacity(self.layers.len());
        for (layer, &res) in self.layers.iter().zip(&self.residual) {
            let z = layer.forward(tape, cur)?;
            pre.push(z);
            let a = tape.activation(z, self.activation)?;
            cur = if res { tape.add(a, cur)? } else { a };
        }
        Ok(MlpTrace {
            output: cur,
            pre_activations: pre,
        })
    }

    /// Row-wise vector–Jacobian product `(∂φ/∂x)ᵀ g`, built from graph ops.
    pub fn input_vjp(&self, tape: &mut Tape, trace: &MlpTrace, upstream: Var) -> Result<Var, TensorError> {
        let mut g = upstream;
        for k in (0..self.layers.len()).rev() {
            let dz = tape.activation_deriv(trace.pre_activations[k], self.activation)?;
            let gz = tape.mul(g, dz)?;
            let wt = tape.transpose(self.layers[k].weight)?;
            let gin = tape.matmul(gz, wt)?;
            g = if self.residual[k] { tape.add(gin, g)? } else { gin };
        }
        Ok(g)
    }

    fn params(&self) -> Vec<Var> {
        self.layers.iter().flat_map(DenseVars::params).collect()
    }
}

/// Hyper-parameters for constructing an [`OnsagerNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnsagerConfig {
    pub dim: usize,
    /// Number of shared layers `l` (`l ≥ 1`; shortcuts when `l > 1`).
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    pub hidden_width: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    /// Adds the affine forcing `f(h) = hW + b`.
    #[serde(default)]
    pub forced: bool,
    /// Multiplier on the initial `A`-head weights. A small value starts
    /// `M̃` and `W̃` near zero, so the rotation sense of `W̃` is picked by
    /// the data instead of by the random draw.
    #[serde(default = "default_a_init_scale")]
    pub a_init_scale: f64,
}

fn default_a_init_scale() -> f64 {
    0.01
}

fn default_layers() -> usize {
    1
}

fn default_activation() -> Activation {
    Activation::ReQUr
}

impl OnsagerConfig {
    /// Unforced configuration used for the 2-D benchmarks (118 parameters).
    pub fn small_unforced(dim: usize) -> Self {
        Self {
            dim,
            hidden_layers: 1,
            hidden_width: 12,
            activation: Activation::ReQUr,
            alpha: 0.0,
            beta: 0.0,
            forced: false,
            a_init_scale: default_a_init_scale(),
        }
    }

    /// Default for learned reduced models: three shared layers of width
    /// `(m+1)(m+2)`.
    pub fn reduced(dim: usize) -> Self {
        Self {
            dim,
            hidden_layers: 3,
            hidden_width: (dim + 1) * (dim + 2),
            activation: Activation::ReQUr,
            alpha: 0.0,
            beta: 0.0,
            forced: false,
            a_init_scale: default_a_init_scale(),
        }
    }

    fn shared_widths(&self) -> Vec<usize> {
        let mut w = vec![self.dim];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w
    }
}

/// All trainable weights of an OnsagerNet plus its fixed `α`, `β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsagerNet {
    pub dim: usize,
    pub shared: Mlp,
    /// `n_H → m`, yields `Uᵢ`.
    pub u_head: Dense,
    /// `n_H → m²`, yields the row-major matrix `A`.
    pub a_head: Dense,
    /// `γ`, `m×m`.
    pub gamma: Tensor,
    pub forcing: Option<Dense>,
    pub alpha: f64,
    pub beta: f64,
}

impl OnsagerNet {
    pub fn new<R: Rng + ?Sized>(cfg: &OnsagerConfig, rng: &mut R) -> Self {
        let m = cfg.dim;
        let shared = Mlp::new(&cfg.shared_widths(), cfg.activation, true, rng);
        let nh = shared.output_dim().unwrap_or(m);
        let u_head = Dense::new(nh, m, rng);
        let mut a_head = Dense::new(nh, m * m, rng);
        for x in a_head.weight.data_mut().iter_mut().chain(a_head.bias.data_mut()) {
            *x *= cfg.a_init_scale;
        }
        let forcing = cfg.forced.then(|| Dense::new(m, m, rng));
        let gamma = Tensor::from_fn(m, m, |i, j| if i == j { 0.1 } else { 0.0 });
        Self {
            dim: m,
            shared,
            u_head,
            a_head,
            gamma,
            forcing,
            alpha: cfg.alpha,
            beta: cfg.beta,
        }
    }

    /// Every weight, `γ` included, set to zero.
    pub fn zeros(cfg: &OnsagerConfig) -> Self {
        let m = cfg.dim;
        let shared = Mlp::zeros(&cfg.shared_widths(), cfg.activation, true);
        let nh = shared.output_dim().unwrap_or(m);
        Self {
            dim: m,
            shared,
            u_head: Dense::zeros(nh, m),
            a_head: Dense::zeros(nh, m * m),
            gamma: Tensor::zeros(m, m),
            forcing: cfg.forced.then(|| Dense::zeros(m, m)),
            alpha: cfg.alpha,
            beta: cfg.beta,
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors in binding order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.shared.tensors();
        out.extend(self.u_head.tensors());
        out.extend(self.a_head.tensors());
        out.push(&self.gamma);
        if let Some(f) = &self.forcing {
            out.extend(f.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.shared.tensors_mut();
        out.extend(self.u_head.tensors_mut());
        out.extend(self.a_head.tensors_mut());
        out.push(&mut self.gamma);
        if let Some(f) = &mut self.forcing {
            out.extend(f.tensors_mut());
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> OnsagerVars {
        let shared = self.shared.bind(tape);
        let u_head = self.u_head.bind(tape);
        let a_head = self.a_head.bind(tape);
        let gamma = tape.param(self.gamma.clone());
        let forcing = self.forcing.as_ref().map(|f| f.bind(tape));
        let (lo, up) = triangle_masks(self.dim);
        OnsagerVars {
            dim: self.dim,
            shared,
            u_head,
            a_head,
            gamma,
            forcing,
            alpha: self.alpha,
            beta: self.beta,
            lower_mask: tape.constant(lo),
            upper_mask: tape.constant(up),
        }
    }

    fn eval_point(&self, h: &[f64]) -> (Tape, OnsagerEval) {
        assert_eq!(h.len(), self.dim, "state dimension");
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.input(Tensor::row(h));
        let ev = vars
            .evaluate(&mut tape, x)
            .expect("shapes are consistent by construction");
        (tape, ev)
    }

    pub fn potential(&self, h: &[f64]) -> f64 {
        let (tape, ev) = self.eval_point(h);
        tape.value(ev.potential).item()
    }

    pub fn potential_grad(&self, h: &[f64]) -> Vec<f64> {
        let (tape, ev) = self.eval_point(h);
        tape.value(ev.grad).data().to_vec()
    }

    pub fn rhs(&self, h: &[f64]) -> Vec<f64> {
        let (tape, ev) = self.eval_point(h);
        tape.value(ev.rhs).data().to_vec()
    }

    /// External force `f(h)`; zero when unforced.
    pub fn force(&self, h: &[f64]) -> Vec<f64> {
        match &self.forcing {
            Some(f) => {
                let x = Tensor::row(h);
                let mut y = x.matmul(&f.weight).expect("forcing shape");
                for (yi, b) in y.data_mut().iter_mut().zip(f.bias.data()) {
                    *yi += b;
                }
                y.into_data()
            }
            None => vec![0.0; self.dim],
        }
    }

    /// `(M̃(h), W̃(h))` as explicit `m×m` matrices.
    pub fn assemble_mw(&self, h: &[f64]) -> (Tensor, Tensor) {
        let (tape, ev) = self.eval_point(h);
        mw_from_flat(tape.value(ev.a).data(), self.dim, self.alpha)
    }
}

/// Builds `M̃ = LLᵀ + αI` and skew `W̃` from a row-major `m×m` matrix `A`:
/// `L` is the lower triangle of `A` with its diagonal, `W̃` takes the strict
/// upper triangle and mirrors it with opposite sign.
pub fn mw_from_flat(a: &[f64], m: usize, alpha: f64) -> (Tensor, Tensor) {
    let l = Tensor::from_fn(m, m, |i, j| if j <= i { a[i * m + j] } else { 0.0 });
    let mut mt = l.matmul(&l.transpose()).expect("square");
    for i in 0..m {
        let v = mt.get(i, i) + alpha;
        mt.set(i, i, v);
    }
    let w = Tensor::from_fn(m, m, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => a[i * m + j],
        std::cmp::Ordering::Greater => -a[j * m + i],
        std::cmp::Ordering::Equal => 0.0,
    });
    (mt, w)
}

/// An [`OnsagerNet`] registered on a tape.
#[derive(Clone, Debug)]
pub struct OnsagerVars {
    dim: usize,
    shared: MlpVars,
    u_head: DenseVars,
    a_head: DenseVars,
    gamma: Var,
    forcing: Option<DenseVars>,
    alpha: f64,
    beta: f64,
    lower_mask: Var,
    upper_mask: Var,
}

/// Graph nodes produced by one OnsagerNet evaluation on a `B×m` batch.
#[derive(Clone, Copy, Debug)]
pub struct OnsagerEval {
    /// `B×1`
    pub potential: Var,
    /// `B×m`
    pub grad: Var,
    /// `B×m²`, row-major `A` per sample.
    pub a: Var,
    /// `B×m`
    pub rhs: Var,
}

impl OnsagerVars {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trainable leaves in the same order as [`OnsagerNet::tensors`].
    pub fn params(&self) -> Vec<Var> {
        let mut out = self.shared.params();
        out.extend(self.u_head.params());
        out.extend(self.a_head.params());
        out.push(self.gamma);
        if let Some(f) = &self.forcing {
            out.extend(f.params());
        }
        out
    }

    pub fn evaluate(&self, tape: &mut Tape, h: Var) -> Result<OnsagerEval, TensorError> {
        let trace = self.shared.forward(tape, h)?;
        let phi = trace.output;

        // r = U(h) + h γᵀ
        let u = self.u_head.forward(tape, phi)?;
        let gt = tape.transpose(self.gamma)?;
        let hg = tape.matmul(h, gt)?;
        let r = tape.add(u, hg)?;

        let rr = tape.row_sum_sq(r)?;
        let mut potential = tape.scale(rr, 0.5)?;
        if self.beta != 0.0 {
            let hh = tape.row_sum_sq(h)?;
            let bh = tape.scale(hh, self.beta)?;
            potential = tape.add(potential, bh)?;
        }

        // ∇V = (∂U/∂h)ᵀ r + γᵀ r + 2βh
        let wu_t = tape.transpose(self.u_head.weight)?;
        let g_phi = tape.matmul(r, wu_t)?;
        let g_net = self.shared.input_vjp(tape, &trace, g_phi)?;
        let g_gamma = tape.matmul(r, self.gamma)?;
        let mut grad = tape.add(g_net, g_gamma)?;
        if self.beta != 0.0 {
            let bh = tape.scale(h, 2.0 * self.beta)?;
            grad = tape.add(grad, bh)?;
        }

        let a = self.a_head.forward(tape, phi)?;
        let lower = tape.mul_row(a, self.lower_mask)?;
        let upper = tape.mul_row(a, self.upper_mask)?;

        // M̃g = L(Lᵀg) + αg
        let ltg = tape.batch_matvec(lower, grad, true)?;
        let mut mg = tape.batch_matvec(lower, ltg, false)?;
        if self.alpha != 0.0 {
            let ag = tape.scale(grad, self.alpha)?;
            mg = tape.add(mg, ag)?;
        }
        // W̃g = (U − Uᵀ)g
        let ug = tape.batch_matvec(upper, grad, false)?;
        let utg = tape.batch_matvec(upper, grad, true)?;
        let wg = tape.sub(ug, utg)?;

        let total = tape.add(mg, wg)?;
        let mut rhs = tape.scale(total, -1.0)?;
        if let Some(f) = &self.forcing {
            let fh = f.forward(tape, h)?;
            rhs = tape.add(rhs, fh)?;
        }
        Ok(OnsagerEval {
            potential,
            grad,
            a,
            rhs,
        })
    }

    pub fn rhs(&self, tape: &mut Tape, h: Var) -> Result<Var, TensorError> {
        Ok(self.evaluate(tape, h)?.rhs)
    }
}

impl VectorField for OnsagerNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        self.rhs(h)
    }
}

/// Hidden MLP followed by a linear read-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub hidden: Mlp,
    pub output: Dense,
}

impl FeedForward {
    /// `widths = [input, hidden…, output]`; hidden layers are activated.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, shortcut: bool, rng: &mut R) -> Self {
        let n = widths.len();
        assert!(n >= 2, "need at least input and output widths");
        let hidden = Mlp::new(&widths[..n - 1], activation, shortcut, rng);
        let output = Dense::new(widths[n - 2], widths[n - 1], rng);
        Self { hidden, output }
    }

    pub fn zeros(widths: &[usize], activation: Activation, shortcut: bool) -> Self {
        let n = widths.len();
        assert!(n >= 2, "need at least input and output widths");
        Self {
            hidden: Mlp::zeros(&widths[..n - 1], activation, shortcut),
            output: Dense::zeros(widths[n - 2], widths[n - 1]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim().unwrap_or_else(|| self.output.input_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.output.param_count()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.hidden.tensors();
        out.extend(self.output.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.hidden.tensors_mut();
        out.extend(self.output.tensors_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> FeedForwardVars {
        FeedForwardVars {
            hidden: self.hidden.bind(tape),
            output: self.output.bind(tape),
        }
    }

    /// Plain evaluation of one input vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.input(Tensor::row(x));
        let y = vars.forward(&mut tape, xv).expect("input dimension");
        tape.value(y).data().to_vec()
    }
}

#[derive(Clone, Debug)]
pub struct FeedForwardVars {
    hidden: MlpVars,
    output: DenseVars,
}

impl FeedForwardVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let phi = self.hidden.forward(tape, x)?.output;
        self.output.forward(tape, phi)
    }

    pub fn params(&self) -> Vec<Var> {
        let mut out = self.hidden.params();
        out.extend(self.output.params());
        out
    }
}

/// Baseline ODE net: `ḣ = MLP(h)` with residual shortcuts and a linear
/// read-out back to `m` dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpOden {
    pub net: FeedForward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpOdenConfig {
    pub dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl MlpOdenConfig {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.dim];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(self.dim);
        w
    }
}

impl MlpOden {
    pub fn new<R: Rng + ?Sized>(cfg: &MlpOdenConfig, rng: &mut R) -> Self {
        Self {
            net: FeedForward::new(&cfg.widths(), cfg.activation, true, rng),
        }
    }

    pub fn zeros(cfg: &MlpOdenConfig) -> Self {
        Self {
            net: FeedForward::zeros(&cfg.widths(), cfg.activation, true),
        }
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

impl VectorField for MlpOden {
    fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        self.net.apply(h)
    }
}

/// Either ODE right-hand side, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OdeNet {
    Onsager(OnsagerNet),
    MlpOden(MlpOden),
}

impl OdeNet {
    pub fn dim(&self) -> usize {
        match self {
            OdeNet::Onsager(n) => n.dim,
            OdeNet::MlpOden(n) => n.dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            OdeNet::Onsager(n) => n.param_count(),
            OdeNet::MlpOden(n) => n.param_count(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            OdeNet::Onsager(n) => n.tensors(),
            OdeNet::MlpOden(n) => n.net.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            OdeNet::Onsager(n) => n.tensors_mut(),
            OdeNet::MlpOden(n) => n.net.tensors_mut(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNet {
        match self {
            OdeNet::Onsager(n) => BoundNet::Onsager(n.bind(tape)),
            OdeNet::MlpOden(n) => BoundNet::MlpOden(n.net.bind(tape)),
        }
    }

    pub fn as_onsager(&self) -> Option<&OnsagerNet> {
        match self {
            OdeNet::Onsager(n) => Some(n),
            OdeNet::MlpOden(_) => None,
        }
    }
}

impl VectorField for OdeNet {
    fn dim(&self) -> usize {
        OdeNet::dim(self)
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        match self {
            OdeNet::Onsager(n) => n.rhs(h),
            OdeNet::MlpOden(n) => n.eval(h),
        }
    }
}

pub enum BoundNet {
    Onsager(OnsagerVars),
    MlpOden(FeedForwardVars),
}

impl BoundNet {
    pub fn rhs(&self, tape: &mut Tape, h: Var) -> Result<Var, TensorError> {
        match self {
            BoundNet::Onsager(v) => v.rhs(tape, h),
            BoundNet::MlpOden(v) => v.forward(tape, h),
        }
    }

    pub fn params(&self) -> Vec<Var> {
        match self {
            BoundNet::Onsager(v) => v.params(),
            BoundNet::MlpOden(v) => v.params(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    /// `U ≡ 0`, `γ = I`, `A = 0`.
    fn quadratic(m: usize, alpha: f64, beta: f64) -> OnsagerNet {
        let mut cfg = OnsagerConfig::small_unforced(m);
        cfg.alpha = alpha;
        cfg.beta = beta;
        let mut net = OnsagerNet::zeros(&cfg);
        net.gamma = Tensor::identity(m);
        net
    }

    #[test]
    fn zero_net_is_flat() {
        let cfg = OnsagerConfig::small_unforced(2);
        let net = OnsagerNet::zeros(&cfg);
        assert_eq!(net.potential(&[0.3, -0.7]), 0.0);
        assert_eq!(net.rhs(&[0.3, -0.7]), vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_potential_examples() {
        let net = quadratic(2, 1.0, 0.0);
        assert_eq!(net.potential(&[3.0, 4.0]), 12.5);
        assert_eq!(net.potential_grad(&[3.0, 4.0]), vec![3.0, 4.0]);
        assert_eq!(net.rhs(&[3.0, 4.0]), vec![-3.0, -4.0]);

        let mut net = quadratic(2, 0.0, 0.1);
        net.gamma = Tensor::zeros(2, 2);
        let g = net.potential_grad(&[1.0, 0.0]);
        assert!((g[0] - 0.2).abs() < 1e-15 && g[1] == 0.0);
    }

    #[test]
    fn mw_assembly_examples() {
        let (m, w) = mw_from_flat(&[0.0; 4], 2, 0.1);
        assert_eq!(m.data(), &[0.1, 0.0, 0.0, 0.1]);
        assert_eq!(w.data(), &[0.0; 4]);

        let (m, w) = mw_from_flat(&[1.0, 2.0, 3.0, 4.0], 2, 0.5);
        // L = [[1,0],[3,4]], LLᵀ = [[1,3],[3,25]]
        assert_eq!(m.data(), &[1.5, 3.0, 3.0, 25.5]);
        assert_eq!(w.data(), &[0.0, 2.0, -2.0, 0.0]);
    }

    #[test]
    fn mlp_zero_weights_give_activation_of_zero() {
        let mlp = Mlp::zeros(&[2, 5, 5], Activation::ReQUr, true);
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let x = tape.input(Tensor::row(&[1.0, -1.0]));
        let out = vars.forward(&mut tape, x).unwrap().output;
        assert_eq!(tape.value(out).data(), &[0.0; 5]);

        let mlp = Mlp::zeros(&[2, 3], Activation::Sigmoid, true);
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let x = tape.input(Tensor::row(&[1.0, -1.0]));
        let out = vars.forward(&mut tape, x).unwrap().output;
        assert_eq!(tape.value(out).data(), &[0.5; 3]);
    }

    #[test]
    fn identity_layer_applies_activation_elementwise() {
        let mut mlp = Mlp::zeros(&[2, 2], Activation::ReQU, false);
        mlp.layers[0].weight = Tensor::identity(2);
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let x = tape.input(Tensor::row(&[1.0, -1.0]));
        let out = vars.forward(&mut tape, x).unwrap().output;
        assert_eq!(tape.value(out).data(), &[1.0, 0.0]);
    }

    #[test]
    fn param_counts() {
        let net = OnsagerNet::new(&OnsagerConfig::small_unforced(2), &mut rng());
        assert_eq!(net.param_count(), 118);
        let cfg = OnsagerConfig {
            dim: 0,
            hidden_layers: 1,
            hidden_width: 0,
            activation: Activation::ReQUr,
            alpha: 0.0,
            beta: 0.0,
            forced: false,
            a_init_scale: default_a_init_scale(),
        };
        assert_eq!(OnsagerNet::zeros(&cfg).param_count(), 0);
        let cfg = OnsagerConfig {
            dim: 3,
            hidden_layers: 1,
            hidden_width: 20,
            activation: Activation::ReQUr,
            alpha: 0.1,
            beta: 0.1,
            forced: true,
            a_init_scale: 1.0,
        };
        // (3·20+20) + (20·3+3) + (20·9+9) + 9 + (3·3+3)
        assert_eq!(OnsagerNet::new(&cfg, &mut rng()).param_count(), 80 + 63 + 189 + 9 + 12);
        let oden = MlpOden::new(
            &MlpOdenConfig {
                dim: 3,
                hidden_layers: 2,
                hidden_width: 16,
                activation: Activation::ReQUr,
            },
            &mut rng(),
        );
        assert_eq!(oden.param_count(), 387);
    }

    #[test]
    fn mlp_oden_linear_and_zero() {
        let cfg = MlpOdenConfig {
            dim: 2,
            hidden_layers: 1,
            hidden_width: 4,
            activation: Activation::Tanh,
        };
        assert_eq!(MlpOden::zeros(&cfg).eval(&[0.4, 0.2]), vec![0.0, 0.0]);
        let lin = MlpOden {
            net: FeedForward {
                hidden: Mlp::zeros(&[2], Activation::Tanh, true),
                output: Dense {
                    weight: Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                    bias: Tensor::row(&[0.5, -0.5]),
                },
            },
        };
        // h W + b with h = [1, 1]
        assert_eq!(lin.eval(&[1.0, 1.0]), vec![4.5, 5.5]);
    }

    #[test]
    fn forced_rhs_adds_affine_force() {
        let mut cfg = OnsagerConfig::small_unforced(2);
        cfg.forced = true;
        let mut net = OnsagerNet::zeros(&cfg);
        net.forcing.as_mut().unwrap().bias = Tensor::row(&[1.0, -2.0]);
        assert_eq!(net.rhs(&[0.3, 0.1]), vec![1.0, -2.0]);
    }
}
