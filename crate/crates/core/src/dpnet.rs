//! Coarse-to-fine regressor from (ranking matrix, 2D pose) to 3D pose.
//!
//! A depth subnet turns the flattened ranking matrix into one coarse depth
//! value per joint. Two pose stages then regress the root-centered 3D pose
//! from the coarse depths plus the 2D joints; the second stage predicts a
//! residual on top of the first. All three heads are supervised with MSE.
//!
//! Gradients are hand-written reverse mode over batched `ndarray` matrices.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Sample;
use crate::error::{Error, Result};
use crate::skeleton::{
    depth_order, flatten_ranking, root_center, JointId, Pose2D, Pose3D, RankingMatrix, NUM_ENTRIES,
    NUM_JOINTS,
};

pub const DEPTH_DIM: usize = NUM_JOINTS;
pub const POSE2D_DIM: usize = 2 * NUM_JOINTS;
pub const POSE3D_DIM: usize = 3 * NUM_JOINTS;
pub const RANK_DIM: usize = NUM_ENTRIES;
const RESIDUAL_BLOCKS: usize = 2;
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_width: usize,
    /// When false the flattened ranking matrix is fed to the pose stages
    /// directly and there is no coarse-depth head.
    pub use_depthnet: bool,
    /// Hidden layers in the ranking-to-coarse-depth subnet.
    pub depthnet_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_width: 256,
            use_depthnet: true,
            depthnet_layers: 1,
        }
    }
}

impl ModelConfig {
    fn stage1_inputs(&self) -> usize {
        if self.use_depthnet {
            DEPTH_DIM + POSE2D_DIM
        } else {
            RANK_DIM + POSE2D_DIM
        }
    }

    fn stage2_inputs(&self) -> usize {
        self.stage1_inputs() + POSE3D_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        LinearLayer {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        LinearLayer {
            weight: Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &ArrayView2<f64>, dy: &Array2<f64>, grad: &mut LinearLayer) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    fn zeros_like(&self) -> Self {
        LinearLayer::zeros(self.inputs(), self.outputs())
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: LinearLayer,
    pub second: LinearLayer,
}

/// Input projection, residual blocks, output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStage {
    pub input: LinearLayer,
    pub blocks: Vec<ResidualBlock>,
    pub output: LinearLayer,
}

impl PoseStage {
    fn init(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        PoseStage {
            input: LinearLayer::init(inputs, hidden, rng),
            blocks: (0..RESIDUAL_BLOCKS)
                .map(|_| ResidualBlock {
                    first: LinearLayer::init(hidden, hidden, rng),
                    second: LinearLayer::init(hidden, hidden, rng),
                })
                .collect(),
            output: LinearLayer::init(hidden, POSE3D_DIM, rng),
        }
    }

    fn layers(&self) -> Vec<&LinearLayer> {
        let mut out = vec![&self.input];
        for b in &self.blocks {
            out.push(&b.first);
            out.push(&b.second);
        }
        out.push(&self.output);
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut out = vec![&mut self.input];
        for b in &mut self.blocks {
            out.push(&mut b.first);
            out.push(&mut b.second);
        }
        out.push(&mut self.output);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthNet {
    pub hidden: Vec<LinearLayer>,
    pub output: LinearLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DPNetParams {
    pub depthnet: Option<DepthNet>,
    pub stage1: PoseStage,
    pub stage2: PoseStage,
}

impl DPNetParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.hidden_width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if cfg.use_depthnet && cfg.depthnet_layers == 0 {
            return Err(Error::Config("the depth subnet needs at least one hidden layer".into()));
        }
        let h = cfg.hidden_width;
        let depthnet = cfg.use_depthnet.then(|| DepthNet {
            hidden: (0..cfg.depthnet_layers)
                .map(|k| LinearLayer::init(if k == 0 { RANK_DIM } else { h }, h, rng))
                .collect(),
            output: LinearLayer::init(h, DEPTH_DIM, rng),
        });
        Ok(DPNetParams {
            depthnet,
            stage1: PoseStage::init(cfg.stage1_inputs(), h, rng),
            stage2: PoseStage::init(cfg.stage2_inputs(), h, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for l in out.layers_mut() {
            *l = l.zeros_like();
        }
        out
    }

    /// Every layer in a fixed order (depth subnet, stage 1, stage 2).
    pub fn layers(&self) -> Vec<&LinearLayer> {
        let mut out = Vec::new();
        if let Some(d) = &self.depthnet {
            out.extend(&d.hidden);
            out.push(&d.output);
        }
        out.extend(self.stage1.layers());
        out.extend(self.stage2.layers());
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut out = Vec::new();
        if let Some(d) = &mut self.depthnet {
            out.extend(&mut d.hidden);
            out.push(&mut d.output);
        }
        out.extend(self.stage1.layers_mut());
        out.extend(self.stage2.layers_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden_width: self.stage1.input.outputs(),
            use_depthnet: self.depthnet.is_some(),
            depthnet_layers: self.depthnet.as_ref().map_or(1, |d| d.hidden.len()),
        }
    }

    /// Checks that layer dimensions chain correctly.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.config();
        let h = cfg.hidden_width;
        let mut expected = Vec::new();
        if let Some(d) = &self.depthnet {
            expected.push((RANK_DIM, h));
            expected.extend(std::iter::repeat((h, h)).take(d.hidden.len().saturating_sub(1)));
            expected.push((h, DEPTH_DIM));
        }
        for inputs in [cfg.stage1_inputs(), cfg.stage2_inputs()] {
            expected.push((inputs, h));
            expected.extend(std::iter::repeat((h, h)).take(2 * RESIDUAL_BLOCKS));
            expected.push((h, POSE3D_DIM));
        }
        let layers = self.layers();
        if layers.len() != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                expected.len(),
                layers.len()
            )));
        }
        for (k, (l, &(i, o))) in layers.iter().zip(&expected).enumerate() {
            if l.inputs() != i || l.outputs() != o || l.bias.len() != o {
                return Err(Error::Shape(format!(
                    "layer {k} is {}x{}, expected {o}x{i}",
                    l.outputs(),
                    l.inputs()
                )));
            }
        }
        if !layers.iter().all(|l| l.is_finite()) {
            return Err(Error::Input("non-finite parameters".into()));
        }
        Ok(())
    }

    /// Visits every scalar parameter mutably in a fixed order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for l in self.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                f(k, v);
                k += 1;
            }
        }
    }

    pub fn param(&self, index: usize) -> f64 {
        let mut k = index;
        for l in self.layers() {
            let n = l.weight.len();
            if k < n {
                return l.weight.as_slice().expect("standard layout")[k];
            }
            k -= n;
            if k < l.bias.len() {
                return l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        self.for_each_param_mut(|k, v| {
            if k == index {
                *v = value;
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network inputs and targets for a batch, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Flattened ranking matrices, centered to `m - 0.5`.
    pub ranking: Array2<f64>,
    /// Normalized 2D joints.
    pub s2d: Array2<f64>,
    /// Normalized depth-order targets.
    pub order: Array2<f64>,
    /// Normalized root-centered 3D targets.
    pub s3d: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ranking.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            ranking: self.ranking.select(Axis(0), rows),
            s2d: self.s2d.select(Axis(0), rows),
            order: self.order.select(Axis(0), rows),
            s3d: self.s3d.select(Axis(0), rows),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        let dims = [
            (self.ranking.dim(), RANK_DIM),
            (self.s2d.dim(), POSE2D_DIM),
            (self.order.dim(), DEPTH_DIM),
            (self.s3d.dim(), POSE3D_DIM),
        ];
        for ((rows, cols), want) in dims {
            if rows != n || cols != want {
                return Err(Error::Shape(format!(
                    "batch block is {rows}x{cols}, expected {n}x{want}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// Coarse depth, absent without the depth subnet.
    pub order: Option<Array2<f64>>,
    pub stage1: Array2<f64>,
    pub stage2: Array2<f64>,
}

struct ActCache {
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(Array2::from_shape_fn((rows, cols), |_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    }
}

fn activate(pre: Array2<f64>, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> (Array2<f64>, ActCache) {
    let mut out = pre.mapv(|v| v.max(0.0));
    let mask = dropout_mask(pre.nrows(), pre.ncols(), p, rng.as_deref_mut());
    if let Some(m) = &mask {
        out *= m;
    }
    (out, ActCache { pre, mask })
}

fn activate_backward(cache: &ActCache, dout: &Array2<f64>) -> Array2<f64> {
    let mut d = dout.clone();
    ndarray::Zip::from(&mut d).and(&cache.pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    if let Some(m) = &cache.mask {
        d *= m;
    }
    d
}

struct BlockCache {
    h_in: Array2<f64>,
    first: ActCache,
    mid: Array2<f64>,
    second: ActCache,
}

struct StageCache {
    x: Array2<f64>,
    input: ActCache,
    blocks: Vec<BlockCache>,
    h_out: Array2<f64>,
}

fn stage_forward(
    stage: &PoseStage,
    x: Array2<f64>,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, StageCache) {
    let (mut h, input) = activate(stage.input.forward(&x.view()), p, rng);
    let mut blocks = Vec::with_capacity(stage.blocks.len());
    for b in &stage.blocks {
        let (mid, first) = activate(b.first.forward(&h.view()), p, rng);
        let (v, second) = activate(b.second.forward(&mid.view()), p, rng);
        let h_next = &h + &v;
        blocks.push(BlockCache {
            h_in: h,
            first,
            mid,
            second,
        });
        h = h_next;
    }
    let out = stage.output.forward(&h.view());
    (
        out,
        StageCache {
            x,
            input,
            blocks,
            h_out: h,
        },
    )
}

/// Returns `dL/dx` for the stage input.
fn stage_backward(stage: &PoseStage, cache: &StageCache, dout: &Array2<f64>, grad: &mut PoseStage) -> Array2<f64> {
    let mut dh = stage.output.backward(&cache.h_out.view(), dout, &mut grad.output);
    for (k, (b, bc)) in stage.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gb = &mut grad.blocks[k];
        let d_second = activate_backward(&bc.second, &dh);
        let d_mid = b.second.backward(&bc.mid.view(), &d_second, &mut gb.second);
        let d_first = activate_backward(&bc.first, &d_mid);
        dh += &b.first.backward(&bc.h_in.view(), &d_first, &mut gb.first);
    }
    let d_in = activate_backward(&cache.input, &dh);
    stage.input.backward(&cache.x.view(), &d_in, &mut grad.input)
}

/// Everything the backward pass needs, including dropout masks.
pub struct ForwardCache {
    /// Per hidden layer its activation cache and input, then the last
    /// hidden output.
    depth: Option<(Vec<(ActCache, Array2<f64>)>, Array2<f64>)>,
    stage1: StageCache,
    stage2: StageCache,
    outputs: Outputs,
}

impl ForwardCache {
    pub fn outputs(&self) -> &Outputs {
        &self.outputs
    }
}

/// Forward pass. Train mode needs a generator for dropout masks; eval mode
/// is a plain pass (dropout uses inverted scaling during training).
pub fn dpnet_forward_cached(
    params: &DPNetParams,
    ranking: &ArrayView2<f64>,
    s2d: &ArrayView2<f64>,
    mode: Mode,
    dropout_p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache> {
    if ranking.ncols() != RANK_DIM || s2d.ncols() != POSE2D_DIM || ranking.nrows() != s2d.nrows() {
        return Err(Error::Shape(format!(
            "inputs are {:?} and {:?}, expected nx{RANK_DIM} and nx{POSE2D_DIM}",
            ranking.dim(),
            s2d.dim()
        )));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::Config(format!("dropout must lie in [0, 1), got {dropout_p}")));
    }
    let mut rng = match mode {
        Mode::Train if dropout_p > 0.0 => Some(
            rng.ok_or_else(|| Error::Config("training-mode forward needs a generator".into()))?,
        ),
        _ => None,
    };
    let p = if mode == Mode::Train { dropout_p } else { 0.0 };

    let (x1, depth, order) = match &params.depthnet {
        Some(d) => {
            let mut caches = Vec::with_capacity(d.hidden.len());
            let mut x = ranking.to_owned();
            for layer in &d.hidden {
                let (h, act) = activate(layer.forward(&x.view()), p, &mut rng);
                caches.push((act, std::mem::replace(&mut x, h)));
            }
            let order = d.output.forward(&x.view());
            let x1 = concatenate![Axis(1), order.view(), *s2d];
            (x1, Some((caches, x)), Some(order))
        }
        None => (concatenate![Axis(1), *ranking, *s2d], None, None),
    };
    let (stage1, c1) = stage_forward(&params.stage1, x1.clone(), p, &mut rng);
    let x2 = concatenate![Axis(1), x1.view(), stage1.view()];
    let (residual, c2) = stage_forward(&params.stage2, x2, p, &mut rng);
    let stage2 = &stage1 + &residual;
    Ok(ForwardCache {
        depth,
        stage1: c1,
        stage2: c2,
        outputs: Outputs {
            order,
            stage1,
            stage2,
        },
    })
}

pub fn dpnet_forward(
    params: &DPNetParams,
    ranking: &ArrayView2<f64>,
    s2d: &ArrayView2<f64>,
    mode: Mode,
    dropout_p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Outputs> {
    Ok(dpnet_forward_cached(params, ranking, s2d, mode, dropout_p, rng)?.outputs)
}

fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let n = pred.nrows().max(1) as f64;
    let per_sample = pred.ncols().max(1) as f64;
    (pred - target).mapv(|v| v * v).sum() / (n * per_sample)
}

/// Which supervised heads contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub order: bool,
    pub stage1: bool,
    pub stage2: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        order: true,
        stage1: true,
        stage2: true,
    };
}

/// `MSE(O, O*) + MSE(S1, S*) + MSE(S2, S*)`, each averaged over entries and
/// samples. The coarse-depth term is skipped when the network has none.
pub fn dpnet_loss(outputs: &Outputs, order_target: &Array2<f64>, s3d_target: &Array2<f64>) -> f64 {
    dpnet_loss_terms(outputs, order_target, s3d_target, LossTerms::ALL)
}

pub fn dpnet_loss_terms(
    outputs: &Outputs,
    order_target: &Array2<f64>,
    s3d_target: &Array2<f64>,
    terms: LossTerms,
) -> f64 {
    let mut loss = 0.0;
    if terms.order {
        if let Some(o) = &outputs.order {
            loss += mse(o, order_target);
        }
    }
    if terms.stage1 {
        loss += mse(&outputs.stage1, s3d_target);
    }
    if terms.stage2 {
        loss += mse(&outputs.stage2, s3d_target);
    }
    loss
}

fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    let scale = 2.0 / (pred.nrows().max(1) * pred.ncols().max(1)) as f64;
    (pred - target) * scale
}

/// Exact gradient of the selected loss terms for a cached forward pass.
pub fn dpnet_backward(
    params: &DPNetParams,
    cache: &ForwardCache,
    order_target: &Array2<f64>,
    s3d_target: &Array2<f64>,
    terms: LossTerms,
) -> DPNetParams {
    let mut grad = params.zeros_like();
    let out = &cache.outputs;
    let zeros48 = || Array2::zeros(out.stage1.dim());

    let d_stage2 = if terms.stage2 { mse_grad(&out.stage2, s3d_target) } else { zeros48() };
    let mut d_stage1 = if terms.stage1 { mse_grad(&out.stage1, s3d_target) } else { zeros48() };
    // stage2 = stage1 + residual(x1, stage1)
    d_stage1 += &d_stage2;
    let dx2 = stage_backward(&params.stage2, &cache.stage2, &d_stage2, &mut grad.stage2);
    let split = dx2.ncols() - POSE3D_DIM;
    let mut dx1 = dx2.slice(s![.., ..split]).to_owned();
    d_stage1 += &dx2.slice(s![.., split..]);
    dx1 += &stage_backward(&params.stage1, &cache.stage1, &d_stage1, &mut grad.stage1);

    if let (Some(d), Some((layers, h)), Some(order)) = (&params.depthnet, &cache.depth, &out.order) {
        let gd = grad.depthnet.as_mut().expect("gradient mirrors params");
        let mut d_order = dx1.slice(s![.., ..DEPTH_DIM]).to_owned();
        if terms.order {
            d_order += &mse_grad(order, order_target);
        }
        let mut dh = d.output.backward(&h.view(), &d_order, &mut gd.output);
        for (k, (act, x)) in layers.iter().enumerate().rev() {
            let d_pre = activate_backward(act, &dh);
            dh = d.hidden[k].backward(&x.view(), &d_pre, &mut gd.hidden[k]);
        }
    }
    grad
}

/// Loss and gradient on one batch.
pub fn loss_and_gradient(
    params: &DPNetParams,
    batch: &Batch,
    mode: Mode,
    dropout_p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, DPNetParams)> {
    batch.check()?;
    let cache = dpnet_forward_cached(params, &batch.ranking.view(), &batch.s2d.view(), mode, dropout_p, rng)?;
    let loss = dpnet_loss(cache.outputs(), &batch.order, &batch.s3d);
    let grad = dpnet_backward(params, &cache, &batch.order, &batch.s3d, LossTerms::ALL);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: DPNetParams,
    v: DPNetParams,
}

impl AdamState {
    pub fn new(params: &DPNetParams) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut DPNetParams, grads: &DPNetParams, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let layers = params.layers_mut();
    let g = grads.layers();
    let m = state.m.layers_mut();
    let v = state.v.layers_mut();
    for (((p, g), m), v) in layers.into_iter().zip(g).zip(m).zip(v) {
        update(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight, lr, c1, c2, cfg);
        update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, lr, c1, c2, cfg);
    }
}

#[allow(clippy::too_many_arguments)]
fn update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    c1: f64,
    c2: f64,
    cfg: &AdamConfig,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    });
}

/// Per-dimension statistics used to normalize network inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub s2d_mean: Vec<f64>,
    pub s2d_std: Vec<f64>,
    pub s3d_mean: Vec<f64>,
    pub s3d_std: Vec<f64>,
}

/// Dimensions with less spread than this (e.g. the root after centering)
/// are left unscaled.
const MIN_STD: f64 = 1e-8;

fn column_stats(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std = std.into_iter().map(|v| if v.sqrt() < MIN_STD { 1.0 } else { v.sqrt() }).collect();
    (mean, std)
}

impl NormStats {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("cannot compute statistics of an empty dataset".into()));
        }
        let s2d: Vec<_> = samples.iter().map(|s| s.s2d.to_flat()).collect();
        let s3d: Vec<_> = samples.iter().map(|s| root_center(&s.s3d).to_flat()).collect();
        let (s2d_mean, s2d_std) = column_stats(&s2d, POSE2D_DIM);
        let (s3d_mean, s3d_std) = column_stats(&s3d, POSE3D_DIM);
        Ok(NormStats {
            s2d_mean,
            s2d_std,
            s3d_mean,
            s3d_std,
        })
    }

    fn check(&self) -> Result<()> {
        if self.s2d_mean.len() != POSE2D_DIM
            || self.s2d_std.len() != POSE2D_DIM
            || self.s3d_mean.len() != POSE3D_DIM
            || self.s3d_std.len() != POSE3D_DIM
        {
            return Err(Error::Shape("normalization statistics have wrong lengths".into()));
        }
        if self.s2d_std.iter().chain(&self.s3d_std).any(|s| !(*s > 0.0)) {
            return Err(Error::Input("normalization std must be positive".into()));
        }
        Ok(())
    }

    pub fn normalize_2d(&self, p: &Pose2D) -> Vec<f64> {
        p.to_flat()
            .iter()
            .zip(self.s2d_mean.iter().zip(&self.s2d_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_3d(&self, p: &Pose3D) -> Vec<f64> {
        p.to_flat()
            .iter()
            .zip(self.s3d_mean.iter().zip(&self.s3d_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_3d(&self, values: &[f64]) -> Result<Pose3D> {
        let raw: Vec<f64> = values
            .iter()
            .zip(self.s3d_mean.iter().zip(&self.s3d_std))
            .map(|(v, (m, s))| v * s + m)
            .collect();
        Pose3D::from_flat(&raw)
    }
}

fn ranking_input(m: &RankingMatrix) -> Vec<f64> {
    flatten_ranking(m).into_iter().map(|v| v - 0.5).collect()
}

/// Normalizes samples into network-ready matrices.
pub fn prepare_batch(samples: &[Sample], stats: &NormStats) -> Result<Batch> {
    stats.check()?;
    let n = samples.len();
    let mut ranking = Array2::zeros((n, RANK_DIM));
    let mut s2d = Array2::zeros((n, POSE2D_DIM));
    let mut order = Array2::zeros((n, DEPTH_DIM));
    let mut s3d = Array2::zeros((n, POSE3D_DIM));
    for (i, s) in samples.iter().enumerate() {
        ranking.row_mut(i).assign(&Array1::from(ranking_input(&s.ranking)));
        s2d.row_mut(i).assign(&Array1::from(stats.normalize_2d(&s.s2d)));
        order.row_mut(i).assign(&Array1::from(depth_order(&s.s3d).normalized().to_vec()));
        s3d.row_mut(i).assign(&Array1::from(stats.normalize_3d(&root_center(&s.s3d))));
    }
    Ok(Batch {
        ranking,
        s2d,
        order,
        s3d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            decay: 0.96,
            epochs: 400,
            batch_size: 64,
            dropout_p: 0.3,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("decay must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean mini-batch loss during the epoch (dropout active).
    pub batch_loss: f64,
    /// Eval-mode loss on the training set after the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: DPNetParams,
    pub best_epoch: usize,
    /// Eval-mode training loss before the first update.
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
}

/// Eval-mode loss over a batch, evaluated in chunks.
pub fn evaluate_loss(params: &DPNetParams, data: &Batch) -> Result<f64> {
    data.check()?;
    if data.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    let chunk = 1024;
    let mut total = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let rows: Vec<usize> = (start..end).collect();
        let b = data.select(&rows);
        let out = dpnet_forward(params, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None)?;
        total += dpnet_loss(&out, &b.order, &b.s3d) * (end - start) as f64;
        start = end;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch Adam with per-epoch exponential learning-rate decay.
pub fn train(train_set: &Batch, val_set: &Batch, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_set.check()?;
    val_set.check()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DPNetParams::init(model, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let initial_loss = evaluate_loss(&params, train_set)?;
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, params.clone());

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = train_set.select(rows);
            let (loss, grad) = loss_and_gradient(&params, &batch, Mode::Train, cfg.dropout_p, Some(&mut rng))?;
            adam_step(&mut params, &grad, &mut state, lr, &cfg.adam);
            sum += loss;
            batches += 1;
        }
        let val_loss = evaluate_loss(&params, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Degenerate(format!("validation loss diverged at epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            batch_loss: sum / batches as f64,
            train_loss: evaluate_loss(&params, train_set)?,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
        lr *= cfg.decay;
    }
    Ok(TrainOutcome {
        params: best.2,
        best_epoch: best.1,
        initial_loss,
        history,
    })
}

/// Normalizes the inputs, runs an eval-mode pass, denormalizes the refined
/// pose and root-centers it.
pub fn predict_pose(m: &RankingMatrix, s2d: &Pose2D, params: &DPNetParams, stats: Option<&NormStats>) -> Result<Pose3D> {
    let stats = stats.ok_or(Error::MissingStats)?;
    stats.check()?;
    let ranking = Array2::from_shape_vec((1, RANK_DIM), ranking_input(m)).expect("fixed shape");
    let pose2d = Array2::from_shape_vec((1, POSE2D_DIM), stats.normalize_2d(s2d)).expect("fixed shape");
    let out = dpnet_forward(params, &ranking.view(), &pose2d.view(), Mode::Eval, 0.0, None)?;
    let pose = stats.denormalize_3d(out.stage2.row(0).as_slice().expect("contiguous row"))?;
    Ok(root_center(&pose))
}

/// Batched [`predict_pose`] over samples (their targets are ignored).
pub fn predict_samples(samples: &[Sample], params: &DPNetParams, stats: &NormStats) -> Result<Vec<Pose3D>> {
    let batch = prepare_batch(samples, stats)?;
    let mut out = Vec::with_capacity(samples.len());
    let chunk = 1024;
    let mut start = 0;
    while start < batch.len() {
        let end = (start + chunk).min(batch.len());
        let rows: Vec<usize> = (start..end).collect();
        let b = batch.select(&rows);
        let o = dpnet_forward(params, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None)?;
        for row in o.stage2.rows() {
            let pose = stats.denormalize_3d(&row.to_vec())?;
            out.push(root_center(&pose));
        }
        start = end;
    }
    Ok(out)
}

/// Serialized layer: shape plus row-major weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    outputs: usize,
    inputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelRecord {
    format_version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    stats: Option<NormStats>,
    layers: Vec<LayerRecord>,
}

/// Parameters plus everything needed to run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: DPNetParams,
    pub stats: NormStats,
    pub train: Option<TrainConfig>,
}

impl TrainedModel {
    pub fn predict(&self, m: &RankingMatrix, s2d: &Pose2D) -> Result<Pose3D> {
        predict_pose(m, s2d, &self.params, Some(&self.stats))
    }

    pub fn to_json(&self) -> Result<String> {
        let record = ModelRecord {
            format_version: MODEL_FORMAT_VERSION,
            model: self.params.config(),
            train: self.train.clone(),
            stats: Some(self.stats.clone()),
            layers: self
                .params
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    outputs: l.outputs(),
                    inputs: l.inputs(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    /// Rejects unknown versions, missing statistics and any layer whose
    /// shape disagrees with the recorded architecture.
    pub fn from_json(text: &str) -> Result<Self> {
        let record: ModelRecord = serde_json::from_str(text)?;
        if record.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Shape(format!(
                "unsupported model format version {}",
                record.format_version
            )));
        }
        let stats = record.stats.ok_or(Error::MissingStats)?;
        stats.check()?;
        let mut params = DPNetParams::init(&record.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        let layers = params.layers_mut();
        if layers.len() != record.layers.len() {
            return Err(Error::Shape(format!(
                "model file has {} layers, architecture needs {}",
                record.layers.len(),
                layers.len()
            )));
        }
        for (k, (dst, src)) in layers.into_iter().zip(record.layers).enumerate() {
            if src.outputs != dst.outputs()
                || src.inputs != dst.inputs()
                || src.weight.len() != src.outputs * src.inputs
                || src.bias.len() != src.outputs
            {
                return Err(Error::Shape(format!(
                    "layer {k} is {}x{} in the file, architecture needs {}x{}",
                    src.outputs,
                    src.inputs,
                    dst.outputs(),
                    dst.inputs()
                )));
            }
            dst.weight = Array2::from_shape_vec((src.outputs, src.inputs), src.weight)
                .map_err(|e| Error::Shape(e.to_string()))?;
            dst.bias = Array1::from(src.bias);
        }
        params.validate()?;
        Ok(TrainedModel {
            params,
            stats,
            train: record.train,
        })
    }
}

/// Root joint of a predicted pose, exposed for callers checking the
/// root-centering contract.
pub fn root_of(pose: &Pose3D) -> nalgebra::Vector3<f64> {
    pose.joints[JointId::ROOT.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Provenance;
    use crate::skeleton::ranking_matrix_from_pose;
    use nalgebra::{Vector2, Vector3};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            hidden_width: 12,
            use_depthnet: true,
            depthnet_layers: 1,
        }
    }

    fn random_batch(n: usize, rng: &mut impl Rng) -> Batch {
        Batch {
            ranking: Array2::from_shape_fn((n, RANK_DIM), |_| [-0.5, 0.0, 0.5][rng.random_range(0..3)]),
            s2d: Array2::from_shape_fn((n, POSE2D_DIM), |_| rng.random_range(-1.5..1.5)),
            order: Array2::from_shape_fn((n, DEPTH_DIM), |_| rng.random_range(-1.5..1.5)),
            s3d: Array2::from_shape_fn((n, POSE3D_DIM), |_| rng.random_range(-1.5..1.5)),
        }
    }

    fn random_sample(rng: &mut impl Rng) -> Sample {
        let s3d = Pose3D::new(std::array::from_fn(|_| {
            Vector3::new(rng.random_range(-500.0..500.0), rng.random_range(-800.0..800.0), rng.random_range(4000.0..6000.0))
        }));
        Sample {
            s2d: Pose2D::new(s3d.joints.map(|v| Vector2::new(1000.0 * v.x / v.z, 1000.0 * v.y / v.z))),
            ranking: ranking_matrix_from_pose(&s3d, 0.0).unwrap(),
            s3d,
            provenance: Provenance { subject: 0, camera: Some(0), augmented: false },
        }
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = DPNetParams::init(&small_cfg(), &mut rng).unwrap().zeros_like();
        let b = random_batch(5, &mut rng);
        let out = dpnet_forward(&params, &b.ranking.view(), &b.s2d.view(), Mode::Train, 0.3, Some(&mut rng)).unwrap();
        assert!(out.order.unwrap().iter().all(|&v| v == 0.0));
        assert!(out.stage1.iter().chain(out.stage2.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        let b = random_batch(7, &mut rng);
        let a = dpnet_forward(&params, &b.ranking.view(), &b.s2d.view(), Mode::Train, 0.0, Some(&mut rng)).unwrap();
        let e = dpnet_forward(&params, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None).unwrap();
        assert_eq!(a, e);
    }

    #[test]
    fn zero_stage2_is_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        params.stage2 = PoseStage {
            input: params.stage2.input.zeros_like(),
            blocks: params
                .stage2
                .blocks
                .iter()
                .map(|b| ResidualBlock { first: b.first.zeros_like(), second: b.second.zeros_like() })
                .collect(),
            output: params.stage2.output.zeros_like(),
        };
        for _ in 0..10 {
            let b = random_batch(4, &mut rng);
            let out = dpnet_forward(&params, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None).unwrap();
            assert_eq!(out.stage1, out.stage2);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        let r = Array2::zeros((2, 255));
        let s = Array2::zeros((2, 32));
        assert!(matches!(
            dpnet_forward(&params, &r.view(), &s.view(), Mode::Eval, 0.0, None),
            Err(Error::Shape(_))
        ));
        let r = Array2::zeros((2, 256));
        assert!(dpnet_forward(&params, &r.view(), &s.view(), Mode::Train, 0.3, None).is_err());
    }

    #[test]
    fn loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_batch(3, &mut rng);
        let exact = Outputs { order: Some(b.order.clone()), stage1: b.s3d.clone(), stage2: b.s3d.clone() };
        assert_eq!(dpnet_loss(&exact, &b.order, &b.s3d), 0.0);

        let shifted = Outputs { order: Some(&b.order + 1.0), ..exact.clone() };
        assert!((dpnet_loss(&shifted, &b.order, &b.s3d) - 1.0).abs() < 1e-12);

        let e = Array2::from_shape_fn(b.s3d.dim(), |_| rng.random_range(-1.0..1.0));
        let a = Outputs { order: Some(b.order.clone()), stage1: &b.s3d + &e, stage2: b.s3d.clone() };
        let c = Outputs { order: Some(b.order.clone()), stage1: b.s3d.clone(), stage2: &b.s3d - &e };
        assert_eq!(dpnet_loss(&a, &b.order, &b.s3d), dpnet_loss(&c, &b.order, &b.s3d));
    }

    fn fd_check(cfg: &ModelConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = DPNetParams::init(cfg, &mut rng).unwrap();
        let b = random_batch(4, &mut rng);
        let (_, grad) = loss_and_gradient(&params, &b, Mode::Eval, 0.0, None).unwrap();
        let loss_at = |p: &DPNetParams| {
            let out = dpnet_forward(p, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None).unwrap();
            dpnet_loss(&out, &b.order, &b.s3d)
        };
        let h = 1e-4;
        let n = params.num_parameters();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let k = rng.random_range(0..n);
            let mut p = params.clone();
            let x = params.param(k);
            p.set_param(k, x + h);
            let up = loss_at(&p);
            p.set_param(k, x - h);
            let down = loss_at(&p);
            let fd = (up - down) / (2.0 * h);
            let an = grad.param(k);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(&small_cfg(), 6);
        fd_check(&ModelConfig { hidden_width: 9, use_depthnet: false, ..Default::default() }, 7);
        fd_check(&ModelConfig { hidden_width: 10, depthnet_layers: 3, ..Default::default() }, 20);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        // a silent refinement stage makes both pose heads agree
        for l in params.stage2.layers_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let mut b = random_batch(3, &mut rng);
        let out = dpnet_forward(&params, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None).unwrap();
        b.order = out.order.unwrap();
        b.s3d = out.stage1;
        let (loss, grad) = loss_and_gradient(&params, &b, Mode::Eval, 0.0, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.layers().iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|&v| v == 0.0)));
    }

    #[test]
    fn stage2_is_dead_when_its_output_is_zeroed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        params.stage2.output.weight.fill(0.0);
        let b = random_batch(5, &mut rng);
        let cache = dpnet_forward_cached(&params, &b.ranking.view(), &b.s2d.view(), Mode::Eval, 0.0, None).unwrap();
        let terms = LossTerms { order: false, stage1: true, stage2: false };
        let g = dpnet_backward(&params, &cache, &b.order, &b.s3d, terms);
        for l in [&g.stage2.input, &g.stage2.blocks[0].first, &g.stage2.blocks[1].second] {
            assert!(l.weight.iter().all(|&v| v == 0.0));
        }
        assert!(g.stage1.output.weight.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        let mut grad = params.zeros_like();
        grad.for_each_param_mut(|k, v| *v = if k % 2 == 0 { 0.5 + k as f64 * 1e-3 } else { -2.0 });
        let lr = 1e-3;
        let mut p = params.clone();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grad, &mut state, lr, &AdamConfig::default());
        for k in (0..params.num_parameters()).step_by(97) {
            let step = p.param(k) - params.param(k);
            let expected = -lr * grad.param(k).signum();
            assert!((step - expected).abs() <= lr * 1e-4, "{step} vs {expected}");
        }

        let mut p = params.clone();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &params.zeros_like(), &mut state, lr, &AdamConfig::default());
        assert_eq!(p, params);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
            let mut state = AdamState::new(&params);
            for _ in 0..5 {
                let b = random_batch(8, &mut rng);
                let (_, g) = loss_and_gradient(&params, &b, Mode::Train, 0.3, Some(&mut rng)).unwrap();
                adam_step(&mut params, &g, &mut state, 1e-3, &AdamConfig::default());
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn normalization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<_> = (0..50).map(|_| random_sample(&mut rng)).collect();
        let stats = NormStats::from_samples(&samples).unwrap();
        for s in &samples {
            let p = root_center(&s.s3d);
            let back = stats.denormalize_3d(&stats.normalize_3d(&p)).unwrap();
            for (a, b) in back.to_flat().iter().zip(p.to_flat()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(NormStats::from_samples(&[]).is_err());
    }

    #[test]
    fn predict_requires_stats_and_root_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples: Vec<_> = (0..20).map(|_| random_sample(&mut rng)).collect();
        let stats = NormStats::from_samples(&samples).unwrap();
        let params = DPNetParams::init(&small_cfg(), &mut rng).unwrap();
        let s = &samples[0];
        assert!(matches!(predict_pose(&s.ranking, &s.s2d, &params, None), Err(Error::MissingStats)));
        let pose = predict_pose(&s.ranking, &s.s2d, &params, Some(&stats)).unwrap();
        assert_eq!(root_of(&pose), Vector3::zeros());
        let batch = predict_samples(&samples[..1], &params, &stats).unwrap();
        for (a, b) in batch[0].to_flat().iter().zip(pose.to_flat()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn learnable_sets(rng: &mut impl Rng) -> (Vec<Sample>, Batch, Batch) {
        let samples: Vec<_> = (0..160).map(|_| random_sample(rng)).collect();
        let stats = NormStats::from_samples(&samples[..128]).unwrap();
        let train = prepare_batch(&samples[..128], &stats).unwrap();
        let val = prepare_batch(&samples[128..], &stats).unwrap();
        (samples, train, val)
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (_, train_set, val_set) = learnable_sets(&mut rng);
        let cfg = TrainConfig { epochs: 4, batch_size: 16, seed: 3, ..Default::default() };
        let model = ModelConfig { hidden_width: 32, ..Default::default() };
        let a = train(&train_set, &val_set, &model, &cfg).unwrap();
        assert!(a.history[0].train_loss < a.initial_loss);
        let b = train(&train_set, &val_set, &model, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);

        let flat = TrainConfig { decay: 1.0, ..cfg.clone() };
        let c = train(&train_set, &val_set, &model, &flat).unwrap();
        assert!(c.history.iter().all(|h| h.learning_rate == flat.learning_rate));
        let decayed = a.history.iter().map(|h| h.learning_rate).collect::<Vec<_>>();
        assert!(decayed.windows(2).all(|w| (w[1] - w[0] * cfg.decay).abs() < 1e-18));

        let empty = train_set.select(&[]);
        assert!(train(&empty, &val_set, &model, &cfg).is_err());
    }

    #[test]
    fn memorizes_a_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let sample = random_sample(&mut rng);
        let samples = vec![sample.clone(); 8];
        // single-sample statistics have zero spread; give them a real scale
        let mut stats = NormStats::from_samples(&samples).unwrap();
        stats.s2d_std = vec![100.0; POSE2D_DIM];
        stats.s3d_std = vec![300.0; POSE3D_DIM];
        let set = prepare_batch(&samples, &stats).unwrap();
        let cfg = TrainConfig { epochs: 300, batch_size: 8, dropout_p: 0.0, decay: 0.99, learning_rate: 1e-3, seed: 1, ..Default::default() };
        let out = train(&set, &set, &ModelConfig { hidden_width: 32, ..Default::default() }, &cfg).unwrap();
        let pred = predict_pose(&sample.ranking, &sample.s2d, &out.params, Some(&stats)).unwrap();
        let err = crate::geometry::mpjpe(&pred, &root_center(&sample.s3d));
        assert!(err < 1.0, "memorization error {err} mm");
    }

    #[test]
    fn model_file_round_trip_and_shape_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let samples: Vec<_> = (0..10).map(|_| random_sample(&mut rng)).collect();
        let model = TrainedModel {
            params: DPNetParams::init(&small_cfg(), &mut rng).unwrap(),
            stats: NormStats::from_samples(&samples).unwrap(),
            train: Some(TrainConfig::default()),
        };
        let text = model.to_json().unwrap();
        let back = TrainedModel::from_json(&text).unwrap();
        assert_eq!(back, model);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["layers"][3]["inputs"] = serde_json::json!(11);
        assert!(matches!(TrainedModel::from_json(&v.to_string()), Err(Error::Shape(_))));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["hidden_width"] = serde_json::json!(13);
        assert!(matches!(TrainedModel::from_json(&v.to_string()), Err(Error::Shape(_))));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["depthnet_layers"] = serde_json::json!(2);
        assert!(matches!(TrainedModel::from_json(&v.to_string()), Err(Error::Shape(_))));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["stats"] = serde_json::Value::Null;
        assert!(matches!(TrainedModel::from_json(&v.to_string()), Err(Error::MissingStats)));
    }
}
