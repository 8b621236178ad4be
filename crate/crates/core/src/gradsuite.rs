//! The finite-difference gradient suite: every differentiable primitive and
//! layer wrapped as a [`GradOp`], checked in 64-bit against central
//! differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{
    AttentionBlock, BlockConfig, FusionMode, MaskBranch, NetworkConfig, NonLocalBlock, Param,
    ParamLayout, ParamStore, ResBlock, Rnan,
};
use crate::error::Result;
use crate::tensor::{self, grad_check, grad_check_sampled, ConvSpec, GradCheckReport, GradOp, Matrix, Tensor4};
use crate::train::l2_loss;

/// Relative-error threshold every op must stay under.
pub const TOLERANCE: f64 = 1e-4;
/// Finite-difference step.
pub const EPS: f64 = 1e-5;
/// Coordinates sampled per parameter tensor for layer-level checks.
pub const LAYER_SAMPLES: usize = 48;

fn random(dims: [usize; 4], rng: &mut ChaCha8Rng, scale: f64) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| rng.gen_range(-scale..scale))
}

fn as_matrix(t: &Tensor4<f64>) -> Matrix<f64> {
    Matrix { rows: t.h(), cols: t.w(), data: t.data().to_vec() }
}

fn as_tensor(m: Matrix<f64>) -> Tensor4<f64> {
    Tensor4::from_vec([1, 1, m.rows, m.cols], m.data).expect("matrix shape")
}

struct Conv2dOp(ConvSpec);

impl GradOp for Conv2dOp {
    fn name(&self) -> String {
        format!("conv2d {}x{} s{}", self.0.kernel.0, self.0.kernel.1, self.0.stride)
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        tensor::conv2d(&x[0], &x[1], x[2].data(), &self.0)
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let r = tensor::conv2d_backward(&x[0], &x[1], &self.0, g)?;
        Ok(vec![r.dx, r.dw, Tensor4::from_vec(x[2].dims(), r.db)?])
    }
}

struct ConvTransposeOp(ConvSpec, (usize, usize));

impl GradOp for ConvTransposeOp {
    fn name(&self) -> String {
        format!("conv2d_transpose s{} -> {}x{}", self.0.stride, self.1 .0, self.1 .1)
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        tensor::conv2d_transpose(&x[0], &x[1], x[2].data(), &self.0, self.1)
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let r = tensor::conv2d_transpose_backward(&x[0], &x[1], &self.0, g)?;
        Ok(vec![r.dx, r.dw, Tensor4::from_vec(x[2].dims(), r.db)?])
    }
}

struct ReluOp;

impl GradOp for ReluOp {
    fn name(&self) -> String {
        "relu".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        Ok(tensor::relu(&x[0]))
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        Ok(vec![tensor::relu_backward(&x[0], g)?])
    }
}

struct SigmoidOp;

impl GradOp for SigmoidOp {
    fn name(&self) -> String {
        "sigmoid".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        Ok(tensor::sigmoid(&x[0]))
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        Ok(vec![tensor::sigmoid_backward(&tensor::sigmoid(&x[0]), g)?])
    }
}

struct AddOp;

impl GradOp for AddOp {
    fn name(&self) -> String {
        "add".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        tensor::add(&x[0], &x[1])
    }
    fn backward(&self, _: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (a, b) = tensor::add_backward(g);
        Ok(vec![a, b])
    }
}

struct MulOp;

impl GradOp for MulOp {
    fn name(&self) -> String {
        "mul".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        tensor::mul(&x[0], &x[1])
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (a, b) = tensor::mul_backward(&x[0], &x[1], g)?;
        Ok(vec![a, b])
    }
}

struct SoftmaxOp;

impl GradOp for SoftmaxOp {
    fn name(&self) -> String {
        "softmax_rows".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        Ok(as_tensor(tensor::softmax_rows(&as_matrix(&x[0]))))
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let y = tensor::softmax_rows(&as_matrix(&x[0]));
        Ok(vec![as_tensor(tensor::softmax_rows_backward(&y, &as_matrix(g))?)])
    }
}

struct MatmulOp;

impl GradOp for MatmulOp {
    fn name(&self) -> String {
        "matmul".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        Ok(as_tensor(tensor::matmul(&as_matrix(&x[0]), &as_matrix(&x[1]))?))
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (da, db) = tensor::matmul_backward(&as_matrix(&x[0]), &as_matrix(&x[1]), &as_matrix(g))?;
        Ok(vec![as_tensor(da), as_tensor(db)])
    }
}

struct L2LossOp;

impl GradOp for L2LossOp {
    fn name(&self) -> String {
        "l2_loss".into()
    }
    fn forward(&self, x: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        let (loss, _) = l2_loss(&x[0], &x[1])?;
        Ok(Tensor4::filled([1, 1, 1, 1], loss))
    }
    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (_, grad) = l2_loss(&x[0], &x[1])?;
        let scaled = grad.scale(g.data()[0]);
        Ok(vec![scaled.clone(), scaled.scale(-1.0)])
    }
}

/// A network module under test.
pub enum Module {
    Res(ResBlock),
    NonLocal(NonLocalBlock),
    Mask(MaskBranch),
    Attention(AttentionBlock),
    Network(Box<Rnan>),
    /// Network followed by the L2 loss against a fixed target.
    NetworkLoss(Box<Rnan>, Tensor4<f64>),
}

/// Wraps a module as a [`GradOp`] whose inputs are `[x, param_0, param_1, ...]`.
pub struct ModuleOp {
    name: String,
    module: Module,
    layout: ParamLayout,
}

impl ModuleOp {
    pub fn new(name: impl Into<String>, module: Module, layout: ParamLayout) -> Self {
        Self { name: name.into(), module, layout }
    }

    /// Random input plus random values for every parameter (zero-initialised
    /// ones included, so every path carries gradient).
    pub fn random_inputs(&self, x_dims: [usize; 4], seed: u64) -> Vec<Tensor4<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![random(x_dims, &mut rng, 1.0)];
        for spec in self.layout.specs() {
            let fan_in = spec.dims[1] * spec.dims[2] * spec.dims[3];
            let bound = if spec.name.ends_with("bias") { 0.1 } else { (3.0 / fan_in.max(1) as f64).sqrt() };
            inputs.push(random(spec.dims, &mut rng, bound));
        }
        inputs
    }

    fn store(&self, inputs: &[Tensor4<f64>]) -> ParamStore<f64> {
        let params = self
            .layout
            .specs()
            .iter()
            .zip(&inputs[1..])
            .map(|(s, v)| Param {
                name: s.name.clone(),
                value: v.clone(),
                m: Tensor4::zeros(s.dims),
                v: Tensor4::zeros(s.dims),
            })
            .collect();
        ParamStore::from_params(params, 0).expect("layout names are unique")
    }
}

impl GradOp for ModuleOp {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn forward(&self, inputs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        let ps = self.store(inputs);
        let x = &inputs[0];
        Ok(match &self.module {
            Module::Res(m) => m.forward(&ps, x)?.0,
            Module::NonLocal(m) => m.forward(&ps, x)?.0,
            Module::Mask(m) => m.forward(&ps, x)?.0,
            Module::Attention(m) => m.forward(&ps, x)?.0,
            Module::Network(m) => m.forward(&ps, x)?.0,
            Module::NetworkLoss(m, target) => {
                let (loss, _) = l2_loss(&m.forward(&ps, x)?.0, target)?;
                Tensor4::filled([1, 1, 1, 1], loss)
            }
        })
    }

    fn backward(&self, inputs: &[Tensor4<f64>], g: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let ps = self.store(inputs);
        let x = &inputs[0];
        let mut grads = ps.zero_grads();
        let dx = match &self.module {
            Module::Res(m) => {
                let (_, c) = m.forward(&ps, x)?;
                m.backward(&ps, x, &c, g, &mut grads)?
            }
            Module::NonLocal(m) => {
                let (_, c) = m.forward(&ps, x)?;
                m.backward(&ps, x, &c, g, &mut grads)?
            }
            Module::Mask(m) => {
                let (_, c) = m.forward(&ps, x)?;
                m.backward(&ps, x, &c, g, &mut grads)?
            }
            Module::Attention(m) => {
                let (_, c) = m.forward(&ps, x)?;
                m.backward(&ps, x, &c, g, &mut grads)?
            }
            Module::Network(m) => {
                let (_, c) = m.forward(&ps, x)?;
                m.backward(&ps, x, &c, g, &mut grads)?
            }
            Module::NetworkLoss(m, target) => {
                let (y, c) = m.forward(&ps, x)?;
                let (_, dy) = l2_loss(&y, target)?;
                m.backward(&ps, x, &c, &dy.scale(g.data()[0]), &mut grads)?
            }
        };
        let mut out = vec![dx];
        out.extend(grads.0);
        Ok(out)
    }
}

fn small_block(features: usize, non_local: bool, fusion: FusionMode) -> BlockConfig {
    BlockConfig {
        q: 1,
        t: 1,
        m: 1,
        features,
        nlb_channels: (features / 2).max(1),
        downscale_stride: 2,
        fusion,
        non_local,
    }
}

/// The tiny end-to-end network used for gradient verification: one
/// non-local attention block, 8 features.
pub fn gradcheck_network() -> NetworkConfig {
    let block = BlockConfig { features: 8, nlb_channels: 4, ..BlockConfig::default() };
    NetworkConfig::with_blocks(0, 1, block, 3)
}

/// Runs every check of the suite for one seed.
pub fn run_seed(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    for spec in [ConvSpec::same3x3(3, 4), ConvSpec::strided3x3(3, 2, 2), ConvSpec::pointwise(4, 3)] {
        let x = random([2, spec.in_channels, 5, 5], &mut rng, 1.0);
        let w = random(spec.weight_dims(), &mut rng, 1.0);
        let b = random([1, spec.out_channels, 1, 1], &mut rng, 1.0);
        reports.push(grad_check(&Conv2dOp(spec), &[x, w, b], EPS)?);
    }
    {
        let spec = ConvSpec::strided3x3(3, 2, 2);
        for target in [(8, 8), (7, 5)] {
            let (h, w) = ConvSpec::strided3x3(2, 3, 2).output_hw(target.0, target.1)?;
            let x = random([2, 3, h, w], &mut rng, 1.0);
            let wt = random(spec.transpose_weight_dims(), &mut rng, 1.0);
            let b = random([1, 2, 1, 1], &mut rng, 1.0);
            reports.push(grad_check(&ConvTransposeOp(spec, target), &[x, wt, b], EPS)?);
        }
    }
    let dims = [2, 4, 8, 8];
    // Keep relu inputs away from the kink.
    let relu_in = random(dims, &mut rng, 1.0).map(|v| if v.abs() < 1e-3 { v + 2e-3 } else { v });
    reports.push(grad_check(&ReluOp, &[relu_in], EPS)?);
    reports.push(grad_check(&SigmoidOp, &[random(dims, &mut rng, 3.0)], EPS)?);
    reports.push(grad_check(&AddOp, &[random(dims, &mut rng, 1.0), random(dims, &mut rng, 1.0)], EPS)?);
    reports.push(grad_check(&MulOp, &[random(dims, &mut rng, 1.0), random(dims, &mut rng, 1.0)], EPS)?);
    reports.push(grad_check(&SoftmaxOp, &[random([1, 1, 6, 9], &mut rng, 2.0)], EPS)?);
    reports.push(grad_check(
        &MatmulOp,
        &[random([1, 1, 4, 5], &mut rng, 1.0), random([1, 1, 5, 3], &mut rng, 1.0)],
        EPS,
    )?);
    reports.push(grad_check(&L2LossOp, &[random(dims, &mut rng, 1.0), random(dims, &mut rng, 1.0)], EPS)?);

    let module_seed = rng.gen::<u64>();
    for (op, x_dims) in layer_ops() {
        let inputs = op.random_inputs(x_dims, module_seed);
        reports.push(grad_check_sampled(&op, &inputs, EPS, LAYER_SAMPLES, module_seed)?);
    }
    Ok(reports)
}

/// Layer-level ops paired with the input shape they are checked on.
pub fn layer_ops() -> Vec<(ModuleOp, [usize; 4])> {
    let mut ops = Vec::new();

    let mut layout = ParamLayout::default();
    let rb = ResBlock::new(&mut layout, "rb", 4);
    ops.push((ModuleOp::new("residual_block", Module::Res(rb), layout), [2, 4, 8, 8]));

    let mut layout = ParamLayout::default();
    let nl = NonLocalBlock::new(&mut layout, "nl", 4, 2);
    ops.push((ModuleOp::new("non_local_block", Module::NonLocal(nl), layout), [2, 4, 4, 4]));

    let mut layout = ParamLayout::default();
    let mask = MaskBranch::new(&mut layout, "mask", &small_block(4, true, FusionMode::ResidualAttention));
    ops.push((ModuleOp::new("mask_branch", Module::Mask(mask), layout), [2, 4, 7, 8]));

    for (name, fusion, non_local) in [
        ("attention_block residual", FusionMode::ResidualAttention, true),
        ("attention_block mask+1", FusionMode::MaskPlusOne, false),
        ("attention_block trunk-only", FusionMode::TrunkOnly, true),
    ] {
        let mut layout = ParamLayout::default();
        let block = AttentionBlock::new(&mut layout, "block", &small_block(4, non_local, fusion));
        ops.push((ModuleOp::new(name, Module::Attention(block), layout), [1, 4, 8, 8]));
    }

    let net = Rnan::new(&gradcheck_network()).expect("valid gradcheck network");
    let layout = net.layout().clone();
    ops.push((ModuleOp::new("rnan end-to-end", Module::Network(Box::new(net.clone())), layout.clone()), [1, 3, 8, 8]));

    let mut rng = ChaCha8Rng::seed_from_u64(0x7a79);
    let target = Tensor4::from_fn([1, 3, 8, 8], |_| rng.gen_range(0.0..1.0));
    ops.push((ModuleOp::new("rnan + l2 loss", Module::NetworkLoss(Box::new(net), target), layout), [1, 3, 8, 8]));
    ops
}
