//! Two-layer GCN baseline and the multiresolution MOB-GCN.
//!
//! MOB-GCN forward pass on `n` superpixels:
//!
//! ```text
//! L        = ReLU(Â X W₀ + b₀)                     bottom encoder
//! latents  = [L]
//! for each resolution r_ℓ:
//!     S    = GumbelSoftmax(L Wₚ + bₚ)              n_ℓ x r_ℓ soft assignment
//!     P    = P · S                                  cumulative n x r_ℓ map
//!     X'   = rownorm(Sᵀ L)
//!     A    = symnorm(Sᵀ A S)
//!     L    = ReLU((A X') Wₑ + bₑ)
//!     latents += P · L                              back on the n fine nodes
//! logits   = concat(latents) W_fc + b_fc
//! ```
//!
//! `Â` is the self-looped, symmetrically normalized superpixel adjacency;
//! the coarsening recursion starts from the raw weighted adjacency.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Var, NORM_EPS};
use crate::SeededRng;

/// Whether stochastic parts of the forward pass are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph and node features shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub features: Matrix,
    /// Raw symmetric weighted adjacency, zero diagonal.
    pub adjacency: Matrix,
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
    pub normalized: Matrix,
}

impl GraphInput {
    pub fn new(features: Matrix, adjacency: Matrix) -> Result<Self> {
        let n = features.rows();
        if adjacency.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "{n} feature rows but adjacency is {:?}",
                adjacency.shape()
            )));
        }
        let normalized = gcn_normalize(&adjacency);
        Ok(Self { features, adjacency, normalized })
    }

    pub fn nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Renormalized GCN propagation matrix `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn gcn_normalize(adjacency: &Matrix) -> Matrix {
    let n = adjacency.rows();
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum::<f64>() + 1.0).collect();
    Matrix::from_fn(n, n, |i, j| {
        let a = adjacency.get(i, j) + if i == j { 1.0 } else { 0.0 };
        a / (degree[i] * degree[j]).sqrt()
    })
}

/// A trainable model over a fixed superpixel graph.
pub trait GraphModel {
    fn parameters(&self) -> &[Matrix];
    fn parameters_mut(&mut self) -> &mut [Matrix];
    fn parameter_names(&self) -> Vec<String>;
    /// Hyperparameters recorded in checkpoints.
    fn describe(&self) -> serde_json::Value;
    /// Records the forward pass on `tape` and returns the `n x c` logits.
    /// `params` are the tape handles of [`GraphModel::parameters`], in order.
    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &GraphInput,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Var>;
}

/// Registers every parameter on `tape` and runs the forward pass.
pub fn record_forward<M: GraphModel + ?Sized>(
    model: &M,
    tape: &mut Tape,
    input: &GraphInput,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Var> {
    let vars: Vec<Var> = model.parameters().iter().map(|p| tape.parameter(p.clone())).collect();
    model.forward(tape, &vars, input, mode, rng)
}

/// Evaluates the logits without keeping the tape.
pub fn predict_logits<M: GraphModel + ?Sized>(
    model: &M,
    input: &GraphInput,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let out = record_forward(model, &mut tape, input, mode, rng)?;
    Ok(tape.value(out).clone())
}

fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// `x W + b`.
fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self { hidden: 32 }
    }
}

/// `logits = Â · ReLU(Â X W₁ + b₁) · W₂ + b₂`.
#[derive(Debug, Clone)]
pub struct GcnBaseline {
    config: GcnConfig,
    params: Vec<Matrix>,
}

impl GcnBaseline {
    pub fn new(in_dim: usize, classes: usize, config: GcnConfig, rng: &mut SeededRng) -> Self {
        let h = config.hidden;
        let params = vec![
            glorot(in_dim, h, rng),
            Matrix::zeros(1, h),
            glorot(h, classes, rng),
            Matrix::zeros(1, classes),
        ];
        Self { config, params }
    }

    pub fn from_parameters(config: GcnConfig, params: Vec<Matrix>) -> Result<Self> {
        if params.len() != 4 {
            return Err(Error::Shape(format!("GCN needs 4 parameters, got {}", params.len())));
        }
        Ok(Self { config, params })
    }
}

impl GraphModel for GcnBaseline {
    fn parameters(&self) -> &[Matrix] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    fn parameter_names(&self) -> Vec<String> {
        ["w1", "b1", "w2", "b2"].map(String::from).to_vec()
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "gcn", "hidden": self.config.hidden })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &GraphInput,
        _mode: Mode,
        _rng: &mut SeededRng,
    ) -> Result<Var> {
        let [w1, b1, w2, b2] = params[..] else {
            return Err(Error::Shape("GCN expects 4 parameter handles".into()));
        };
        let a_hat = tape.constant(input.normalized.clone());
        let x = tape.constant(input.features.clone());
        let xw = tape.matmul(x, w1)?;
        let h = tape.matmul(a_hat, xw)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h);
        let hw = tape.matmul(h, w2)?;
        let out = tape.matmul(a_hat, hw)?;
        tape.add(out, b2)
    }
}

/// Row-wise Gumbel-softmax relaxation of a categorical assignment.
///
/// Train mode draws i.i.d. Gumbel(0, 1) noise from `rng` and treats it as a
/// constant; eval mode uses no noise.
pub fn gumbel_softmax(tape: &mut Tape, logits: Var, tau: f64, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let perturbed = match mode {
        Mode::Eval => logits,
        Mode::Train => {
            let (r, c) = tape.value(logits).shape();
            let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
            let noise = Matrix::from_fn(r, c, |_, _| gumbel.sample(rng));
            let noise = tape.constant(noise);
            tape.add(logits, noise)?
        }
    };
    let scaled = tape.scalar_mul(perturbed, 1.0 / tau);
    Ok(tape.row_softmax(scaled))
}

/// Pools node features and adjacency through a soft assignment:
/// `X' = rownorm(Sᵀ L)` and `A' = symnorm(Sᵀ A S)`.
pub fn coarsen(tape: &mut Tape, assign: Var, latent: Var, adjacency: Var) -> Result<(Var, Var)> {
    let assign_t = tape.transpose(assign);
    let pooled = tape.matmul(assign_t, latent)?;
    let features = tape.row_l2_normalize(pooled);
    let sa = tape.matmul(assign_t, adjacency)?;
    let sas = tape.matmul(sa, assign)?;
    let adjacency = tape.sym_normalize(sas)?;
    Ok((features, adjacency))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobGcnConfig {
    pub hidden: usize,
    /// Cluster count of each coarsening level.
    pub resolutions: Vec<usize>,
    pub tau: f64,
    /// Row-normalize every latent before concatenation.
    pub use_norm: bool,
}

impl Default for MobGcnConfig {
    fn default() -> Self {
        Self { hidden: 32, resolutions: Vec::new(), tau: 1.0, use_norm: true }
    }
}

impl MobGcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if let Some(bad) = self.resolutions.iter().find(|&&r| r < 2) {
            return Err(Error::Config(format!("resolution {bad} is below 2")));
        }
        Ok(())
    }
}

/// Intermediate values of one MOB-GCN forward pass.
#[derive(Debug, Clone)]
pub struct MobGcnTrace {
    pub logits: Var,
    pub assignments: Vec<Var>,
    pub products: Vec<Var>,
    pub coarse_features: Vec<Var>,
    pub coarse_adjacency: Vec<Var>,
    /// Bottom latent followed by one extended latent per level.
    pub latents: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct MobGcnModel {
    config: MobGcnConfig,
    params: Vec<Matrix>,
}

impl MobGcnModel {
    pub fn new(in_dim: usize, classes: usize, config: MobGcnConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut params = vec![glorot(in_dim, h, rng), Matrix::zeros(1, h)];
        for &r in &config.resolutions {
            params.push(glorot(h, r, rng));
            params.push(Matrix::zeros(1, r));
            params.push(glorot(h, h, rng));
            params.push(Matrix::zeros(1, h));
        }
        let width = h * (config.resolutions.len() + 1);
        params.push(glorot(width, classes, rng));
        params.push(Matrix::zeros(1, classes));
        Ok(Self { config, params })
    }

    pub fn from_parameters(config: MobGcnConfig, params: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let expected = 4 + 4 * config.resolutions.len();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "MOB-GCN with {} levels needs {expected} parameters, got {}",
                config.resolutions.len(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MobGcnConfig {
        &self.config
    }

    /// Width of the concatenated representation.
    pub fn representation_width(&self) -> usize {
        self.config.hidden * (self.config.resolutions.len() + 1)
    }

    pub fn forward_trace(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &GraphInput,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<MobGcnTrace> {
        let levels = self.config.resolutions.len();
        if params.len() != 4 + 4 * levels {
            return Err(Error::Shape("parameter handle count does not match levels".into()));
        }
        let a_hat = tape.constant(input.normalized.clone());
        let x = tape.constant(input.features.clone());

        let xw = tape.matmul(x, params[0])?;
        let bottom = tape.matmul(a_hat, xw)?;
        let bottom = tape.add(bottom, params[1])?;
        let mut latent = tape.relu(bottom);
        let mut latents = vec![latent];

        let mut adjacency = tape.constant(input.adjacency.clone());
        let mut product: Option<Var> = None;
        let mut nodes = input.nodes();
        let mut trace_assign = Vec::with_capacity(levels);
        let mut trace_products = Vec::with_capacity(levels);
        let mut trace_x = Vec::with_capacity(levels);
        let mut trace_a = Vec::with_capacity(levels);

        for (level, &r) in self.config.resolutions.iter().enumerate() {
            if r > nodes {
                return Err(Error::Config(format!(
                    "level {} asks for {r} clusters of {nodes} nodes",
                    level + 1
                )));
            }
            let p = &params[2 + 4 * level..6 + 4 * level];
            let pool_logits = linear(tape, latent, p[0], p[1])?;
            let assign = gumbel_softmax(tape, pool_logits, self.config.tau, mode, rng)?;
            let cumulative = match product {
                None => assign,
                Some(prev) => tape.matmul(prev, assign)?,
            };
            product = Some(cumulative);

            let (coarse_x, coarse_a) = coarsen(tape, assign, latent, adjacency)?;
            adjacency = coarse_a;
            let propagated = tape.matmul(coarse_a, coarse_x)?;
            let encoded = linear(tape, propagated, p[2], p[3])?;
            latent = tape.relu(encoded);
            latents.push(tape.matmul(cumulative, latent)?);

            trace_assign.push(assign);
            trace_products.push(cumulative);
            trace_x.push(coarse_x);
            trace_a.push(coarse_a);
            nodes = r;
        }

        let parts: Vec<Var> = if self.config.use_norm {
            latents.iter().map(|&l| tape.row_l2_normalize(l)).collect()
        } else {
            latents.clone()
        };
        let representation = tape.concat_cols(&parts)?;
        let logits = linear(tape, representation, params[2 + 4 * levels], params[3 + 4 * levels])?;
        Ok(MobGcnTrace {
            logits,
            assignments: trace_assign,
            products: trace_products,
            coarse_features: trace_x,
            coarse_adjacency: trace_a,
            latents,
        })
    }
}

impl GraphModel for MobGcnModel {
    fn parameters(&self) -> &[Matrix] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["bottom_w".to_string(), "bottom_b".to_string()];
        for level in 1..=self.config.resolutions.len() {
            for part in ["pool_w", "pool_b", "encoder_w", "encoder_b"] {
                names.push(format!("level{level}_{part}"));
            }
        }
        names.push("fc_w".into());
        names.push("fc_b".into());
        names
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "mobgcn",
            "hidden": self.config.hidden,
            "resolutions": self.config.resolutions,
            "tau": self.config.tau,
            "use_norm": self.config.use_norm,
        })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &GraphInput,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        Ok(self.forward_trace(tape, params, input, mode, rng)?.logits)
    }
}

/// Either model kind behind one type.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Gcn(GcnBaseline),
    MobGcn(MobGcnModel),
}

impl GraphModel for AnyModel {
    fn parameters(&self) -> &[Matrix] {
        match self {
            AnyModel::Gcn(m) => m.parameters(),
            AnyModel::MobGcn(m) => m.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> &mut [Matrix] {
        match self {
            AnyModel::Gcn(m) => m.parameters_mut(),
            AnyModel::MobGcn(m) => m.parameters_mut(),
        }
    }

    fn parameter_names(&self) -> Vec<String> {
        match self {
            AnyModel::Gcn(m) => m.parameter_names(),
            AnyModel::MobGcn(m) => m.parameter_names(),
        }
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            AnyModel::Gcn(m) => m.describe(),
            AnyModel::MobGcn(m) => m.describe(),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &GraphInput,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        match self {
            AnyModel::Gcn(m) => m.forward(tape, params, input, mode, rng),
            AnyModel::MobGcn(m) => m.forward(tape, params, input, mode, rng),
        }
    }
}

/// Plain-matrix Gumbel-softmax, for callers that do not need gradients.
pub fn gumbel_softmax_matrix(logits: &Matrix, tau: f64, mode: Mode, rng: &mut SeededRng) -> Result<Matrix> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = gumbel_softmax(&mut tape, l, tau, mode, rng)?;
    Ok(tape.value(out).clone())
}

/// Plain-matrix coarsening, see [`coarsen`].
pub fn coarsen_matrix(assign: &Matrix, latent: &Matrix, adjacency: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let s = tape.constant(assign.clone());
    let l = tape.constant(latent.clone());
    let a = tape.constant(adjacency.clone());
    let (x, a) = coarsen(&mut tape, s, l, a)?;
    Ok((tape.value(x).clone(), tape.value(a).clone()))
}

/// Degree guard shared with the tape's symmetric normalization.
pub const DEGREE_EPS: f64 = NORM_EPS;
