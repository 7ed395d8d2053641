use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward_in_place, relu_in_place};
use super::{
    dense_backward, dense_logits, global_avg_pool, global_avg_pool_backward, softmax_rows,
    BatchNormCache, BatchNormLayer, ConvCache, ConvLayer, DenseLayer, Matrix, Mode, NnError,
    Tensor3,
};
use crate::trajectory::{CHANNELS, DEFAULT_WINDOW_LEN};
use crate::NUM_SCORE_CLASSES;

pub const NUM_BLOCKS: usize = 4;
pub const DEFAULT_BLOCK_CHANNELS: [usize; NUM_BLOCKS] = [16, 32, 64, 128];
pub const DEFAULT_KERNEL_SIZE: usize = 3;

/// Shape metadata that fully determines the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub input_channels: usize,
    pub block_channels: [usize; NUM_BLOCKS],
    pub kernel_size: usize,
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_len: DEFAULT_WINDOW_LEN,
            input_channels: CHANNELS,
            block_channels: DEFAULT_BLOCK_CHANNELS,
            kernel_size: DEFAULT_KERNEL_SIZE,
            num_classes: NUM_SCORE_CLASSES,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidArchitecture(m));
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if self.input_len == 0 || self.input_channels == 0 {
            return bad("input length and channels must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.block_channels[0] == 0 || self.block_channels.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "block channels {:?} must be positive and strictly increasing",
                self.block_channels
            ));
        }
        Ok(())
    }

    /// Conv and batch-norm layers plus pooling, flatten and dense. ReLUs are
    /// activations, not counted.
    pub const fn layer_count(&self) -> usize {
        NUM_BLOCKS * 3 + 3
    }
}

/// `conv -> ReLU -> conv -> ReLU -> batch norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub bn: BatchNormLayer,
}

/// Name, shape and owning block of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero-based block index, `None` for the classifier head.
    pub block: Option<usize>,
}

/// The four-block convolutional classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    arch: Architecture,
    blocks: Vec<ConvBlock>,
    head: DenseLayer,
    generation: u64,
}

struct BlockCache {
    conv1: ConvCache,
    relu1: Tensor3,
    conv2: ConvCache,
    relu2: Tensor3,
    bn: BatchNormCache,
}

/// Intermediates of a training-mode forward pass.
pub struct ForwardCache {
    generation: u64,
    frozen_blocks: usize,
    len: usize,
    /// Caches of the trainable blocks, starting at block `frozen_blocks`.
    blocks: Vec<BlockCache>,
    pooled: Matrix,
}

/// One gradient tensor per trainable parameter, in [`CnnModel::param_infos`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.tensors.iter().map(Vec::as_slice).collect()
    }
}

impl CnnModel {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases 0,
    /// batch norm at identity.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        let mut cin = arch.input_channels;
        for &cout in &arch.block_channels {
            blocks.push(ConvBlock {
                conv1: ConvLayer::new(arch.kernel_size, cin, cout, &mut rng)?,
                conv2: ConvLayer::new(arch.kernel_size, cout, cout, &mut rng)?,
                bn: BatchNormLayer::new(cout),
            });
            cin = cout;
        }
        let head = DenseLayer::new(cin, arch.num_classes, &mut rng);
        Ok(Self {
            arch,
            blocks,
            head,
            generation: 0,
        })
    }

    /// Reassembles a model from loaded layers, checking every shape.
    pub fn from_parts(arch: Architecture, blocks: Vec<ConvBlock>, head: DenseLayer) -> Result<Self, NnError> {
        arch.validate()?;
        if blocks.len() != NUM_BLOCKS {
            return Err(NnError::InvalidArchitecture(format!("{} blocks", blocks.len())));
        }
        let mut cin = arch.input_channels;
        for (b, (block, &cout)) in blocks.iter().zip(&arch.block_channels).enumerate() {
            let conv_ok = |c: &ConvLayer, i: usize| {
                c.kernel_size == arch.kernel_size
                    && c.in_channels == i
                    && c.out_channels == cout
                    && c.weight.len() == arch.kernel_size * i * cout
                    && c.bias.len() == cout
            };
            let bn = &block.bn;
            let bn_ok = [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                .iter()
                .all(|v| v.len() == cout)
                && bn.running_var.iter().all(|&v| v >= 0.0);
            if !conv_ok(&block.conv1, cin) || !conv_ok(&block.conv2, cout) || !bn_ok {
                return Err(NnError::ShapeMismatch(format!("block{}", b + 1)));
            }
            cin = cout;
        }
        if head.in_features != cin
            || head.out_features != arch.num_classes
            || head.weight.len() != cin * arch.num_classes
            || head.bias.len() != arch.num_classes
        {
            return Err(NnError::ShapeMismatch("head".into()));
        }
        Ok(Self {
            arch,
            blocks,
            head,
            generation: 0,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    /// Mutable access to the layers. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> (&mut [ConvBlock], &mut DenseLayer) {
        self.generation += 1;
        (&mut self.blocks, &mut self.head)
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::with_capacity(NUM_BLOCKS * 6 + 2);
        for (b, block) in self.blocks.iter().enumerate() {
            let p = |name: &str, shape: Vec<usize>| ParamInfo {
                name: format!("block{}.{name}", b + 1),
                shape,
                block: Some(b),
            };
            for (tag, conv) in [("conv1", &block.conv1), ("conv2", &block.conv2)] {
                out.push(p(
                    &format!("{tag}.kernel"),
                    vec![conv.kernel_size, conv.in_channels, conv.out_channels],
                ));
                out.push(p(&format!("{tag}.bias"), vec![conv.out_channels]));
            }
            out.push(p("bn.gamma", vec![block.bn.channels()]));
            out.push(p("bn.beta", vec![block.bn.channels()]));
        }
        for (name, shape) in [
            ("head.weight", vec![self.head.in_features, self.head.out_features]),
            ("head.bias", vec![self.head.out_features]),
        ] {
            out.push(ParamInfo {
                name: name.into(),
                shape,
                block: None,
            });
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(NUM_BLOCKS * 6 + 2);
        for block in &self.blocks {
            out.extend([
                block.conv1.weight.as_slice(),
                &block.conv1.bias,
                &block.conv2.weight,
                &block.conv2.bias,
                &block.bn.gamma,
                &block.bn.beta,
            ]);
        }
        out.extend([self.head.weight.as_slice(), &self.head.bias]);
        out
    }

    /// Trainable tensors in [`Self::param_infos`] order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(NUM_BLOCKS * 6 + 2);
        for block in &mut self.blocks {
            out.extend([
                block.conv1.weight.as_mut_slice(),
                &mut block.conv1.bias,
                &mut block.conv2.weight,
                &mut block.conv2.bias,
                &mut block.bn.gamma,
                &mut block.bn.beta,
            ]);
        }
        out.extend([self.head.weight.as_mut_slice(), &mut self.head.bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), NnError> {
        let (_, len, ch) = x.dims();
        if len != self.arch.input_len || ch != self.arch.input_channels {
            return Err(NnError::ShapeMismatch(format!(
                "input is (., {len}, {ch}), model expects (., {}, {})",
                self.arch.input_len, self.arch.input_channels
            )));
        }
        Ok(())
    }

    fn block_inference(block: &ConvBlock, x: &Tensor3) -> Result<Tensor3, NnError> {
        let mut h = block.conv1.forward(x)?.0;
        relu_in_place(&mut h);
        let mut h = block.conv2.forward(&h)?.0;
        relu_in_place(&mut h);
        block.bn.forward_inference(&h)
    }

    /// Inference-mode class probabilities, one row per batch entry.
    pub fn predict(&self, x: &Tensor3) -> Result<Matrix, NnError> {
        self.check_input(x)?;
        if x.batch() == 0 {
            return Ok(Matrix::zeros(0, self.arch.num_classes));
        }
        let mut h = x.clone();
        for block in &self.blocks {
            h = Self::block_inference(block, &h)?;
        }
        dense_logits(&global_avg_pool(&h), &self.head).map(|l| softmax_rows(&l))
    }

    /// Training-mode pass over all blocks.
    pub fn forward_train(&mut self, x: &Tensor3) -> Result<(Matrix, ForwardCache), NnError> {
        self.forward_train_frozen(x, 0)
    }

    /// Training-mode pass where the first `frozen_blocks` blocks run in
    /// inference mode and keep their running statistics.
    pub fn forward_train_frozen(
        &mut self,
        x: &Tensor3,
        frozen_blocks: usize,
    ) -> Result<(Matrix, ForwardCache), NnError> {
        self.check_input(x)?;
        if frozen_blocks > NUM_BLOCKS {
            return Err(NnError::InvalidArchitecture(format!(
                "cannot freeze {frozen_blocks} of {NUM_BLOCKS} blocks"
            )));
        }
        let mut h = x.clone();
        for block in &self.blocks[..frozen_blocks] {
            h = Self::block_inference(block, &h)?;
        }
        let mut caches = Vec::with_capacity(NUM_BLOCKS - frozen_blocks);
        for block in &mut self.blocks[frozen_blocks..] {
            let (mut a, conv1) = block.conv1.forward(&h)?;
            relu_in_place(&mut a);
            let (mut b, conv2) = block.conv2.forward(&a)?;
            relu_in_place(&mut b);
            let (out, bn) = block.bn.forward_train(&b)?;
            caches.push(BlockCache {
                conv1,
                relu1: a,
                conv2,
                relu2: b,
                bn,
            });
            h = out;
        }
        let pooled = global_avg_pool(&h);
        let probs = softmax_rows(&dense_logits(&pooled, &self.head)?);
        Ok((
            probs,
            ForwardCache {
                generation: self.generation,
                frozen_blocks,
                len: x.len(),
                blocks: caches,
                pooled,
            },
        ))
    }

    /// Spec-shaped entry point: training mode returns a cache, inference does not.
    pub fn forward(&mut self, x: &Tensor3, mode: Mode) -> Result<(Matrix, Option<ForwardCache>), NnError> {
        match mode {
            Mode::Training => self.forward_train(x).map(|(p, c)| (p, Some(c))),
            Mode::Inference => self.predict(x).map(|p| (p, None)),
        }
    }

    /// Backpropagates a gradient with respect to the head's logits.
    ///
    /// Tensors of frozen blocks get all-zero gradients.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients, NnError> {
        if cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        let (head_grads, dh) = dense_backward(&cache.pooled, &self.head, dlogits)?;
        let mut dy = global_avg_pool_backward(&dh, cache.len);

        let mut per_block: Vec<[Vec<f64>; 6]> = Vec::with_capacity(NUM_BLOCKS);
        let frozen = cache.frozen_blocks;
        for (i, (block, bc)) in self.blocks[frozen..].iter().zip(&cache.blocks).enumerate().rev() {
            let (bn_grads, mut d) = block.bn.backward(&bc.bn, &dy)?;
            relu_backward_in_place(&bc.relu2, &mut d);
            let (c2, d) = block.conv2.backward(&bc.conv2, &d, true)?;
            let mut d = d.expect("requested");
            relu_backward_in_place(&bc.relu1, &mut d);
            let needs_input = i > 0;
            let (c1, d) = block.conv1.backward(&bc.conv1, &d, needs_input)?;
            per_block.push([c1.weight, c1.bias, c2.weight, c2.bias, bn_grads.gamma, bn_grads.beta]);
            if let Some(d) = d {
                dy = d;
            }
        }
        per_block.reverse();

        let mut tensors = Vec::with_capacity(NUM_BLOCKS * 6 + 2);
        for block in &self.blocks[..frozen] {
            tensors.extend([
                vec![0.0; block.conv1.weight.len()],
                vec![0.0; block.conv1.bias.len()],
                vec![0.0; block.conv2.weight.len()],
                vec![0.0; block.conv2.bias.len()],
                vec![0.0; block.bn.channels()],
                vec![0.0; block.bn.channels()],
            ]);
        }
        for grads in per_block {
            tensors.extend(grads);
        }
        tensors.extend([head_grads.weight, head_grads.bias]);
        Ok(Gradients { tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_arch() -> Architecture {
        Architecture {
            input_len: 16,
            input_channels: 3,
            block_channels: [4, 8, 12, 16],
            kernel_size: 3,
            num_classes: 6,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, b: usize, arch: &Architecture) -> Tensor3 {
        let n = b * arch.input_len * arch.input_channels;
        Tensor3::from_vec(b, arch.input_len, arch.input_channels, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn fifteen_layers_and_param_listing() {
        let m = CnnModel::new(Architecture::default(), 0).unwrap();
        assert_eq!(m.arch().layer_count(), 15);
        let infos = m.param_infos();
        assert_eq!(infos.len(), 26);
        for (info, p) in infos.iter().zip(m.params()) {
            assert_eq!(info.shape.iter().product::<usize>(), p.len(), "{}", info.name);
        }
        assert_eq!(m.head().in_features, 128);
        // independent of input length
        let long = CnnModel::new(Architecture { input_len: 200, ..Default::default() }, 0).unwrap();
        assert_eq!(long.param_count(), m.param_count());
    }

    #[test]
    fn invalid_architectures() {
        let mut a = tiny_arch();
        a.block_channels = [4, 4, 8, 16];
        assert!(CnnModel::new(a, 0).is_err());
        let mut a = tiny_arch();
        a.kernel_size = 4;
        assert!(CnnModel::new(a, 0).is_err());
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = CnnModel::new(tiny_arch(), 1).unwrap();
        let x = random_input(&mut rng, 5, &tiny_arch());
        for p in [m.predict(&x).unwrap(), m.forward_train(&x).unwrap().0] {
            for row in p.iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn empty_batch_inference() {
        let m = CnnModel::new(tiny_arch(), 1).unwrap();
        let p = m.predict(&Tensor3::zeros(0, 16, 3)).unwrap();
        assert_eq!((p.rows, p.cols), (0, 6));
    }

    #[test]
    fn wrong_input_shape() {
        let m = CnnModel::new(tiny_arch(), 1).unwrap();
        assert!(matches!(m.predict(&Tensor3::zeros(1, 15, 3)), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn inference_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = tiny_arch();
        let mut m = CnnModel::new(arch, 4).unwrap();
        // move running statistics away from identity
        m.forward_train(&random_input(&mut rng, 4, &arch)).unwrap();
        let x = random_input(&mut rng, 3, &arch);
        let p = m.predict(&x).unwrap();
        let dup = m.predict(&x.select(&[2, 0, 1, 0])).unwrap();
        assert_eq!(dup.row(0), p.row(2));
        assert_eq!(dup.row(1), p.row(0));
        assert_eq!(dup.row(2), p.row(1));
        assert_eq!(dup.row(3), p.row(0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = tiny_arch();
        let mut m = CnnModel::new(arch, 4).unwrap();
        let (p, cache) = m.forward_train(&random_input(&mut rng, 2, &arch)).unwrap();
        m.params_mut()[0][0] += 1.0;
        assert!(matches!(m.backward(&cache, &p), Err(NnError::StaleCache)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let arch = tiny_arch();
        let mut m = CnnModel::new(arch, 4).unwrap();
        let (p, cache) = m.forward_train(&random_input(&mut rng, 4, &arch)).unwrap();
        let zero = Matrix::zeros(p.rows, p.cols);
        let g = m.backward(&cache, &zero).unwrap();
        assert!(g.tensors.iter().flatten().all(|&v| v == 0.0));
    }
}
