//! Amortized variational posterior over the latent vector `z`, its linear
//! map to translational parameters, the maximum mean discrepancy penalty and
//! the Monte Carlo training objective.
//!
//! Network, per event pair `x = [e_h; e_t]`:
//!
//! ```text
//! a     = tanh(W_hid x + b_hid)            (dropout on a while training)
//! mu    = W_mu a + b_mu
//! sigma = softplus(W_sigma a + b_sigma) + 1e-6
//! z     = mu + sigma * eps,  eps ~ N(0, I)
//! Lambda = P z + b_P                        (W_r slices carry a +1 offset)
//! ```
//!
//! Head and tail vectors reach the scorer through one shared affine
//! projection `d -> d_r`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::encoder::{pair_representation, EventPairInstance, Projection};
use crate::error::{config_err, invalid};
use crate::numerics::{
    add_outer, add_transpose_matvec, affine, axpy, log_sum_exp, sigmoid, softmax, softplus, ProbVector, SeededRng,
};
use crate::prior::{sample_prior, PriorSpec};
use crate::scorers::{
    relation_scores, score_vjp, ParamLayout, RelationSet, ScorerKind, ScoringSpacePair, TranslationalParams,
};
use crate::Result;

/// Lower bound added to every posterior standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian over the latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// How posterior standard deviations are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorMode {
    /// `softplus(W_sigma a + b_sigma) + 1e-6`
    Learned,
    /// A constant standard deviation; the sigma head is unused.
    Pinned(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub relset: RelationSet,
    pub scorer: ScorerKind,
    /// Encoder (trigger embedding) dimension `d`.
    pub input_dim: usize,
    /// Relation transformation dimension `d_r`.
    pub relation_dim: usize,
    /// Latent dimension `D_z`.
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub posterior: PosteriorMode,
    /// Inverse multiquadric kernel constant; `2 D_z` when unset.
    pub kernel_scale: Option<f64>,
    /// Posterior standard deviation at initialization.
    pub init_sigma: f64,
}

impl ModelConfig {
    pub fn new(
        relset: RelationSet,
        scorer: ScorerKind,
        input_dim: usize,
        relation_dim: usize,
        latent_dim: usize,
    ) -> Self {
        Self {
            relset,
            scorer,
            input_dim,
            relation_dim,
            latent_dim,
            hidden_dim: 2 * input_dim,
            dropout: 0.0,
            posterior: PosteriorMode::Learned,
            kernel_scale: None,
            init_sigma: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.relation_dim == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(config_err!("model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let PosteriorMode::Pinned(s) = self.posterior {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err!("pinned posterior std must be positive"));
            }
        }
        if let Some(c) = self.kernel_scale {
            if !(c > 0.0 && c.is_finite()) {
                return Err(config_err!("kernel constant must be positive"));
            }
        }
        if self.init_sigma.is_nan() || self.init_sigma <= SIGMA_FLOOR {
            return Err(config_err!("initial posterior std must exceed {SIGMA_FLOOR}"));
        }
        self.param_layout().map(|_| ())
    }

    pub fn param_layout(&self) -> Result<ParamLayout> {
        ParamLayout::new(self.scorer, self.relset.len(), self.relation_dim)
    }

    pub fn kernel_constant(&self) -> f64 {
        self.kernel_scale.unwrap_or(2.0 * self.latent_dim as f64)
    }
}

/// Named parameter tensors of the model, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Projection,
    ProjectionBias,
    Hidden,
    HiddenBias,
    Mean,
    MeanBias,
    Scale,
    ScaleBias,
    ToParams,
    ToParamsBias,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::Projection,
        Block::ProjectionBias,
        Block::Hidden,
        Block::HiddenBias,
        Block::Mean,
        Block::MeanBias,
        Block::Scale,
        Block::ScaleBias,
        Block::ToParams,
        Block::ToParamsBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Projection => "projection.weight",
            Block::ProjectionBias => "projection.bias",
            Block::Hidden => "hidden.weight",
            Block::HiddenBias => "hidden.bias",
            Block::Mean => "mean.weight",
            Block::MeanBias => "mean.bias",
            Block::Scale => "scale.weight",
            Block::ScaleBias => "scale.bias",
            Block::ToParams => "to_params.weight",
            Block::ToParamsBias => "to_params.bias",
        }
    }

    /// Encoder-side tensors, trained at the encoder learning rate.
    pub fn is_encoder(self) -> bool {
        matches!(self, Block::Projection | Block::ProjectionBias)
    }

    /// (rows, cols)
    fn shape(self, c: &ModelConfig, lambda_len: usize) -> (usize, usize) {
        let (d, dr, h, dz) = (c.input_dim, c.relation_dim, c.hidden_dim, c.latent_dim);
        match self {
            Block::Projection => (dr, d),
            Block::ProjectionBias => (dr, 1),
            Block::Hidden => (h, 2 * d),
            Block::HiddenBias => (h, 1),
            Block::Mean | Block::Scale => (dz, h),
            Block::MeanBias | Block::ScaleBias => (dz, 1),
            Block::ToParams => (lambda_len, dz),
            Block::ToParamsBias => (lambda_len, 1),
        }
    }
}

/// Offsets of every [`Block`] in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetLayout {
    ranges: [Range<usize>; 10],
    lambda: ParamLayout,
}

impl NetLayout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let lambda = config.param_layout()?;
        let mut offset = 0;
        let ranges = Block::ALL.map(|b| {
            let (r, c) = b.shape(config, lambda.len());
            let range = offset..offset + r * c;
            offset += r * c;
            range
        });
        Ok(Self { ranges, lambda })
    }

    pub fn range(&self, b: Block) -> Range<usize> {
        self.ranges[b as usize].clone()
    }

    pub fn len(&self) -> usize {
        self.ranges[9].end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lambda(&self) -> ParamLayout {
        self.lambda
    }
}

/// Posterior network, parameter map and scoring-space projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: NetLayout,
    params: Vec<f64>,
}

impl Model {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let layout = NetLayout::new(&config)?;
        let params = vec![0.0; layout.len()];
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.params.len() {
            return Err(invalid!(
                "expected {} model parameters, got {}",
                model.params.len(),
                params.len()
            ));
        }
        model.params = params;
        Ok(model)
    }

    /// Seeded initialization.
    ///
    /// The projection starts as the identity when `d = d_r`. `P` starts as
    /// the segment-aligned selection map: the `j`-th coordinate of relation
    /// `r`'s z-segment feeds the `j`-th entry of `[W_r; t_r; extras_r]`, so
    /// prior means assembled per segment land on their relation's
    /// parameters.
    pub fn init(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let c = m.config.clone();
        let (d, dr, h, dz) = (c.input_dim, c.relation_dim, c.hidden_dim, c.latent_dim);
        {
            let w = m.block_mut(Block::Projection);
            if d == dr {
                for i in 0..d {
                    w[i * d + i] = 1.0;
                }
            } else {
                let s = 1.0 / libm::sqrt(d as f64);
                w.iter_mut().for_each(|v| *v = s * rng.standard_normal());
            }
        }
        let s = 1.0 / libm::sqrt((2 * d) as f64);
        m.block_mut(Block::Hidden)
            .iter_mut()
            .for_each(|v| *v = s * rng.standard_normal());
        let s = 0.1 / libm::sqrt(h as f64);
        m.block_mut(Block::Mean)
            .iter_mut()
            .for_each(|v| *v = s * rng.standard_normal());
        let raw = inverse_softplus(c.init_sigma - SIGMA_FLOOR);
        m.block_mut(Block::ScaleBias).iter_mut().for_each(|v| *v = raw);

        let lambda = m.layout.lambda;
        let to_params = m.block_mut(Block::ToParams);
        to_params.iter_mut().for_each(|v| *v = 0.01 * rng.standard_normal());
        let seg = dz / lambda.relations;
        for r in 0..lambda.relations {
            for j in 0..seg.min(lambda.block_len()) {
                to_params[lambda.block_index(r, j) * dz + r * seg + j] += 1.0;
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &NetLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.params[self.layout.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b);
        &mut self.params[r]
    }

    pub fn projection(&self) -> Projection<'_> {
        Projection {
            weight: self.block(Block::Projection),
            bias: self.block(Block::ProjectionBias),
        }
    }

    fn check_instance(&self, inst: &EventPairInstance) -> Result<()> {
        if inst.head.len() != self.config.input_dim || inst.tail.len() != self.config.input_dim {
            return Err(invalid!(
                "instance {} has {}-dimensional embeddings, model expects {}",
                inst.id,
                inst.head.len(),
                self.config.input_dim
            ));
        }
        if inst.label >= self.config.relset.len() {
            return Err(invalid!("instance {} has label index {}", inst.id, inst.label));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        affine(self.block(Block::Hidden), self.block(Block::HiddenBias), x)
            .into_iter()
            .map(libm::tanh)
            .collect()
    }

    fn heads(&self, hidden: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mean = affine(self.block(Block::Mean), self.block(Block::MeanBias), hidden);
        let raw = affine(self.block(Block::Scale), self.block(Block::ScaleBias), hidden);
        let std = match self.config.posterior {
            PosteriorMode::Learned => raw.iter().map(|r| softplus(*r) + SIGMA_FLOOR).collect(),
            PosteriorMode::Pinned(s) => vec![s; raw.len()],
        };
        (mean, std, raw)
    }

    /// Posterior parameters for a concatenated pair representation.
    pub fn encode_posterior(&self, pair_repr: &[f64]) -> Result<LatentGaussian> {
        if pair_repr.len() != 2 * self.config.input_dim {
            return Err(invalid!(
                "pair representation has {} entries, expected {}",
                pair_repr.len(),
                2 * self.config.input_dim
            ));
        }
        let (mean, std, _) = self.heads(&self.hidden(pair_repr));
        Ok(LatentGaussian { mean, std })
    }

    /// `Lambda = P z + b_P`, sliced per relation.
    pub fn project_to_params(&self, z: &[f64]) -> Result<TranslationalParams> {
        project_to_params(
            z,
            self.block(Block::ToParams),
            self.block(Block::ToParamsBias),
            self.layout.lambda,
        )
    }

    pub fn scoring_pair(&self, inst: &EventPairInstance) -> Result<ScoringSpacePair> {
        self.check_instance(inst)?;
        let p = self.projection();
        ScoringSpacePair::new(
            affine(p.weight, p.bias, &inst.head),
            affine(p.weight, p.bias, &inst.tail),
        )
    }

    /// Translational parameters at the posterior mean (`z = mu`).
    pub fn posterior_mean_params(&self, inst: &EventPairInstance) -> Result<TranslationalParams> {
        self.check_instance(inst)?;
        let g = self.encode_posterior(&pair_representation(inst))?;
        self.project_to_params(&g.mean)
    }

    /// Predictive distribution at the posterior mean.
    pub fn predict_mean(&self, inst: &EventPairInstance) -> Result<ProbVector> {
        let params = self.posterior_mean_params(inst)?;
        let pair = self.scoring_pair(inst)?;
        softmax(&relation_scores(&pair.h, &pair.t, &params))
    }

    /// Predictive distribution for one posterior draw.
    pub fn predict_sampled(&self, inst: &EventPairInstance, rng: &mut SeededRng) -> Result<ProbVector> {
        self.check_instance(inst)?;
        let g = self.encode_posterior(&pair_representation(inst))?;
        let z = sample_latent(&g, rng);
        let params = self.project_to_params(&z)?;
        let pair = self.scoring_pair(inst)?;
        softmax(&relation_scores(&pair.h, &pair.t, &params))
    }

    /// Average of `samples` posterior-draw predictive distributions.
    pub fn predict_averaged(
        &self,
        inst: &EventPairInstance,
        samples: usize,
        rng: &mut SeededRng,
    ) -> Result<ProbVector> {
        if samples == 0 {
            return Err(invalid!("need at least one Monte Carlo sample"));
        }
        let mut acc = vec![0.0; self.config.relset.len()];
        for _ in 0..samples {
            axpy(1.0 / samples as f64, &self.predict_sampled(inst, rng)?, &mut acc);
        }
        let total: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|p| *p /= total);
        ProbVector::new(acc)
    }
}

impl Model {
    /// Accumulates parameter gradients of the posterior network for upstream
    /// gradients on `mu` and `sigma`; returns the gradient on the pair
    /// representation.
    fn posterior_backward(&self, cache: &PosteriorCache, g_mean: &[f64], g_std: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let cfg = &self.config;
        let layout = &self.layout;
        let g_raw: Vec<f64> = match cfg.posterior {
            PosteriorMode::Learned => g_std.iter().zip(&cache.raw).map(|(g, r)| g * sigmoid(*r)).collect(),
            PosteriorMode::Pinned(_) => vec![0.0; cfg.latent_dim],
        };
        add_outer(g_mean, &cache.hidden_out, &mut grad[layout.range(Block::Mean)]);
        axpy(1.0, g_mean, &mut grad[layout.range(Block::MeanBias)]);
        add_outer(&g_raw, &cache.hidden_out, &mut grad[layout.range(Block::Scale)]);
        axpy(1.0, &g_raw, &mut grad[layout.range(Block::ScaleBias)]);

        let mut g_hidden = vec![0.0; cfg.hidden_dim];
        add_transpose_matvec(self.block(Block::Mean), g_mean, &mut g_hidden);
        add_transpose_matvec(self.block(Block::Scale), &g_raw, &mut g_hidden);
        if let Some(mask) = &cache.mask {
            g_hidden.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let g_pre: Vec<f64> = g_hidden
            .iter()
            .zip(&cache.hidden)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        add_outer(&g_pre, &cache.x, &mut grad[layout.range(Block::Hidden)]);
        axpy(1.0, &g_pre, &mut grad[layout.range(Block::HiddenBias)]);
        let mut g_x = vec![0.0; cache.x.len()];
        add_transpose_matvec(self.block(Block::Hidden), &g_pre, &mut g_x);
        g_x
    }

    /// Vector-Jacobian product of [`Model::encode_posterior`]: gradients of
    /// `<g_mean, mu> + <g_std, sigma>` with respect to the flat parameters
    /// and the pair representation.
    pub fn encode_posterior_vjp(
        &self,
        pair_repr: &[f64],
        g_mean: &[f64],
        g_std: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let dz = self.config.latent_dim;
        if pair_repr.len() != 2 * self.config.input_dim || g_mean.len() != dz || g_std.len() != dz {
            return Err(invalid!("posterior gradient dimensions do not match the model"));
        }
        let hidden = self.hidden(pair_repr);
        let (_, _, raw) = self.heads(&hidden);
        let cache = PosteriorCache {
            x: pair_repr.to_vec(),
            hidden_out: hidden.clone(),
            hidden,
            mask: None,
            raw,
        };
        let mut grad = vec![0.0; self.params.len()];
        let g_x = self.posterior_backward(&cache, g_mean, g_std, &mut grad);
        Ok((grad, g_x))
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        libm::log(libm::expm1(y))
    }
}

/// Reparameterized draw `z = mu + sigma * eps`.
pub fn sample_latent(g: &LatentGaussian, rng: &mut SeededRng) -> Vec<f64> {
    sample_latent_with_noise(g, rng).0
}

/// Reparameterized draw returning the noise too (`dz/dsigma = eps`).
pub fn sample_latent_with_noise(g: &LatentGaussian, rng: &mut SeededRng) -> (Vec<f64>, Vec<f64>) {
    let eps: Vec<f64> = (0..g.dim()).map(|_| rng.standard_normal()).collect();
    let z = g
        .mean
        .iter()
        .zip(&g.std)
        .zip(&eps)
        .map(|((m, s), e)| m + s * e)
        .collect();
    (z, eps)
}

/// `P z + b`, sliced into per-relation blocks in `layout` order.
pub fn project_to_params(z: &[f64], weight: &[f64], bias: &[f64], layout: ParamLayout) -> Result<TranslationalParams> {
    if bias.len() != layout.len() || weight.len() != layout.len() * z.len() || z.is_empty() {
        return Err(invalid!(
            "parameter map of shape {}x{} does not fit z of length {} and {} relation parameters",
            bias.len(),
            weight.len() / bias.len().max(1),
            z.len(),
            layout.len()
        ));
    }
    TranslationalParams::from_raw(layout, affine(weight, bias, z))
}

/// Inverse multiquadric kernel `C / (C + |x - y|^2)`.
pub fn imq_kernel(x: &[f64], y: &[f64], c: f64) -> f64 {
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    c / (c + r2)
}

fn check_mmd_inputs(x: &[Vec<f64>], y: &[Vec<f64>], c: f64) -> Result<()> {
    if x.len() < 2 || y.len() < 2 {
        return Err(invalid!(
            "MMD needs at least two samples per set, got {} and {}",
            x.len(),
            y.len()
        ));
    }
    if c.is_nan() || c <= 0.0 {
        return Err(invalid!("kernel constant must be positive"));
    }
    let dim = x[0].len();
    if x.iter().chain(y).any(|v| v.len() != dim) {
        return Err(invalid!("MMD samples must share one dimension"));
    }
    Ok(())
}

fn within_mean(x: &[Vec<f64>], c: f64) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += imq_kernel(&x[i], &x[j], c);
        }
    }
    2.0 * s / (n * (n - 1)) as f64
}

/// Unbiased MMD estimate between sample sets `x` and `y` with the inverse
/// multiquadric kernel.
pub fn mmd(x: &[Vec<f64>], y: &[Vec<f64>], c: f64) -> Result<f64> {
    check_mmd_inputs(x, y, c)?;
    let cross: f64 = x
        .iter()
        .map(|a| y.iter().map(|b| imq_kernel(a, b, c)).sum::<f64>())
        .sum();
    Ok(within_mean(x, c) + within_mean(y, c) - 2.0 * cross / (x.len() * y.len()) as f64)
}

/// Gradient of [`mmd`] with respect to every sample of `x`.
pub fn mmd_grad_x(x: &[Vec<f64>], y: &[Vec<f64>], c: f64) -> Result<Vec<Vec<f64>>> {
    check_mmd_inputs(x, y, c)?;
    let (n, m) = (x.len(), y.len());
    let within = 2.0 / (n * (n - 1)) as f64;
    let cross = -2.0 / (n * m) as f64;
    // d k(a, b) / d a = -2 C (a - b) / (C + |a - b|^2)^2
    let kernel_grad = |a: &[f64], b: &[f64], scale: f64, out: &mut [f64]| {
        let r2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        let k = -2.0 * c / ((c + r2) * (c + r2)) * scale;
        for ((o, p), q) in out.iter_mut().zip(a).zip(b) {
            *o += k * (p - q);
        }
    };
    Ok((0..n)
        .map(|i| {
            let mut g = vec![0.0; x[i].len()];
            for j in (0..n).filter(|&j| j != i) {
                kernel_grad(&x[i], &x[j], within, &mut g);
            }
            for b in y {
                kernel_grad(&x[i], b, cross, &mut g);
            }
            g
        })
        .collect())
}

/// Linear warm-up of the regularizer weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            start: 1e-2,
            end: 2.0,
            epochs: 60,
        }
    }
}

/// `start + (end - start) * epoch / (epochs - 1)`; epochs at or past the
/// final one get `end`.
pub fn anneal_weight(epoch: usize, sched: &AnnealSchedule) -> Result<f64> {
    if sched.epochs == 0 || sched.start.is_nan() || sched.end.is_nan() || sched.start > sched.end {
        return Err(config_err!("invalid anneal schedule {sched:?}"));
    }
    if epoch > sched.epochs {
        return Err(invalid!("epoch {epoch} outside schedule of {} epochs", sched.epochs));
    }
    if sched.epochs == 1 || epoch + 1 >= sched.epochs {
        return Ok(sched.end);
    }
    Ok(sched.start + (sched.end - sched.start) * epoch as f64 / (sched.epochs - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    /// Regularizer weight `lambda >= 0`.
    pub lambda: f64,
    /// Monte Carlo samples per instance.
    pub samples: usize,
    /// Enables dropout.
    pub train: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    /// Mean negative log-likelihood over instances and samples.
    pub nll: f64,
    /// Unweighted MMD estimate (0 when skipped).
    pub mmd: f64,
    /// Gradient with respect to the flat model parameters.
    pub grad: Vec<f64>,
    /// Gradients with respect to each instance's (head, tail) embeddings.
    pub input_grads: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Intermediate values of one posterior-network forward pass.
struct PosteriorCache {
    x: Vec<f64>,
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
    hidden_out: Vec<f64>,
    raw: Vec<f64>,
}

struct Cache {
    posterior: PosteriorCache,
    g_mean: Vec<f64>,
    g_std: Vec<f64>,
    z0: Vec<f64>,
    eps0: Vec<f64>,
}

/// Monte Carlo negative ELBO for a batch and its gradient:
/// `mean_{i,n} -log p(y_i | Lambda_i^(n)) + lambda * MMD(z, z_prior)`.
///
/// The MMD term compares the first posterior draw of every instance with an
/// equal number of prior draws; it is skipped for batches of one instance or
/// when `lambda = 0`.
pub fn batch_objective(
    model: &Model,
    batch: &[EventPairInstance],
    prior: &PriorSpec,
    opts: &ObjectiveOptions,
    rng: &mut SeededRng,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if opts.samples == 0 {
        return Err(invalid!("need at least one Monte Carlo sample"));
    }
    if opts.lambda.is_nan() || opts.lambda < 0.0 {
        return Err(invalid!("regularizer weight must be non-negative"));
    }
    let cfg = &model.config;
    if prior.dim() != cfg.latent_dim {
        return Err(invalid!(
            "prior has dimension {}, latent dimension is {}",
            prior.dim(),
            cfg.latent_dim
        ));
    }
    let layout = &model.layout;
    let lambda_layout = layout.lambda;
    let d = cfg.input_dim;
    let scale = 1.0 / (batch.len() * opts.samples) as f64;
    let keep = 1.0 - cfg.dropout;
    let projection = model.projection();
    let to_params = model.block(Block::ToParams);

    let mut grad = vec![0.0; layout.len()];
    let mut input_grads = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    let mut nll = 0.0;

    for inst in batch {
        model.check_instance(inst)?;
        let x = pair_representation(inst);
        let hidden = model.hidden(&x);
        let mask = (opts.train && cfg.dropout > 0.0).then(|| {
            (0..hidden.len())
                .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                .collect::<Vec<f64>>()
        });
        let hidden_out: Vec<f64> = match &mask {
            Some(m) => hidden.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => hidden.clone(),
        };
        let (mean, std, raw) = model.heads(&hidden_out);
        let h = affine(projection.weight, projection.bias, &inst.head);
        let t = affine(projection.weight, projection.bias, &inst.tail);
        let gauss = LatentGaussian { mean, std };

        let mut g_mean = vec![0.0; cfg.latent_dim];
        let mut g_std = vec![0.0; cfg.latent_dim];
        let mut g_h = vec![0.0; cfg.relation_dim];
        let mut g_t = vec![0.0; cfg.relation_dim];
        let mut first = None;
        for n in 0..opts.samples {
            let (z, eps) = sample_latent_with_noise(&gauss, rng);
            let params =
                TranslationalParams::from_raw(lambda_layout, affine(to_params, model.block(Block::ToParamsBias), &z))?;
            let scores = relation_scores(&h, &t, &params);
            let lse = log_sum_exp(&scores);
            nll += scale * (lse - scores[inst.label]);

            let mut g_lambda = vec![0.0; lambda_layout.len()];
            for (r, s) in scores.iter().enumerate() {
                let p = libm::exp(s - lse);
                let g_score = scale * (p - if r == inst.label { 1.0 } else { 0.0 });
                let sg = score_vjp(lambda_layout.kind, &h, &t, &params.relation(r), g_score);
                axpy(1.0, &sg.w, &mut g_lambda[lambda_layout.w_range(r)]);
                axpy(1.0, &sg.t_r, &mut g_lambda[lambda_layout.t_range(r)]);
                if !sg.extras.is_empty() {
                    axpy(1.0, &sg.extras, &mut g_lambda[lambda_layout.extras_range(r)]);
                }
                axpy(1.0, &sg.h, &mut g_h);
                axpy(1.0, &sg.t, &mut g_t);
            }
            add_outer(&g_lambda, &z, &mut grad[layout.range(Block::ToParams)]);
            axpy(1.0, &g_lambda, &mut grad[layout.range(Block::ToParamsBias)]);
            let mut g_z = vec![0.0; cfg.latent_dim];
            add_transpose_matvec(to_params, &g_lambda, &mut g_z);
            axpy(1.0, &g_z, &mut g_mean);
            for ((gs, gz), e) in g_std.iter_mut().zip(&g_z).zip(&eps) {
                *gs += gz * e;
            }
            if n == 0 {
                first = Some((z, eps));
            }
        }

        let mut g_head = vec![0.0; d];
        let mut g_tail = vec![0.0; d];
        {
            let (pw, pb) = grad[layout.range(Block::Projection).start..layout.range(Block::ProjectionBias).end]
                .split_at_mut(layout.range(Block::Projection).len());
            projection.backward(&inst.head, &g_h, pw, pb, &mut g_head);
            projection.backward(&inst.tail, &g_t, pw, pb, &mut g_tail);
        }
        input_grads.push((g_head, g_tail));
        let (z0, eps0) = first.expect("at least one sample");
        caches.push(Cache {
            posterior: PosteriorCache {
                x,
                hidden,
                mask,
                hidden_out,
                raw,
            },
            g_mean,
            g_std,
            z0,
            eps0,
        });
    }

    let mut mmd_value = 0.0;
    if opts.lambda > 0.0 && batch.len() >= 2 {
        let xs: Vec<Vec<f64>> = caches.iter().map(|c| c.z0.clone()).collect();
        let ys = sample_prior(prior, batch.len(), rng)?;
        let kc = cfg.kernel_constant();
        mmd_value = mmd(&xs, &ys, kc)?;
        for (cache, g) in caches.iter_mut().zip(mmd_grad_x(&xs, &ys, kc)?) {
            axpy(opts.lambda, &g, &mut cache.g_mean);
            for ((gs, gi), e) in cache.g_std.iter_mut().zip(&g).zip(&cache.eps0) {
                *gs += opts.lambda * gi * e;
            }
        }
    }

    for (cache, (g_head, g_tail)) in caches.iter().zip(input_grads.iter_mut()) {
        let g_x = model.posterior_backward(&cache.posterior, &cache.g_mean, &cache.g_std, &mut grad);
        axpy(1.0, &g_x[..d], g_head);
        axpy(1.0, &g_x[d..], g_tail);
    }

    Ok(Objective {
        loss: nll + opts.lambda * mmd_value,
        nll,
        mmd: mmd_value,
        grad,
        input_grads,
    })
}
