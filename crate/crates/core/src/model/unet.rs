//! Encoder-decoder segmentation network with skip connections.
//!
//! Stage `i` of the encoder runs a [`DoubleConv`] with `base · 2^i` channels
//! and then max-pools. The decoder reduces the deeper feature map with a
//! 1×1 convolution, upsamples it by nearest neighbour, concatenates the
//! matching skip connection and runs another [`DoubleConv`]. A 1×1 head
//! maps to two logit channels (background, nodule).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::{
    max_pool2, max_pool2_backward, upsample2, upsample2_backward, Conv2d, DoubleConv,
    DoubleConvCache, Param,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const IN_CHANNELS: usize = 1;
pub const OUT_CHANNELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Number of down/up-sampling stages.
    pub depth: usize,
    /// Channels of the first stage; doubled at every level.
    pub base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 4,
            base_channels: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth {} not in 1..=8", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dimensions must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"unet");
        h.update((self.depth as u64).to_le_bytes());
        h.update((self.base_channels as u64).to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    config: ModelConfig,
    encoders: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    /// `reducers[i]` maps level `i+1` channels to level `i` channels.
    reducers: Vec<Conv2d>,
    decoders: Vec<DoubleConv>,
    head: Conv2d,
}

/// Activations recorded by [`SegModel::forward`] for the backward pass.
pub struct ForwardCache {
    encoders: Vec<DoubleConvCache>,
    pool_args: Vec<(Vec<u32>, [usize; 4])>,
    bottleneck: DoubleConvCache,
    reducer_inputs: Vec<Tensor>,
    decoders: Vec<DoubleConvCache>,
    head_input: Tensor,
}

impl SegModel {
    /// He-initialised network drawn from a seeded RNG.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = |i: usize| config.base_channels << i;
        let mut encoders = Vec::with_capacity(config.depth);
        let mut cin = IN_CHANNELS;
        for i in 0..config.depth {
            encoders.push(DoubleConv::new(cin, ch(i), &mut rng));
            cin = ch(i);
        }
        // nothing upstream of the image needs a gradient
        encoders[0].conv1.input_grad = false;
        let bottleneck = DoubleConv::new(cin, ch(config.depth), &mut rng);
        let mut reducers = Vec::with_capacity(config.depth);
        let mut decoders = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            reducers.push(Conv2d::new(ch(i + 1), ch(i), 1, false, &mut rng));
            decoders.push(DoubleConv::new(2 * ch(i), ch(i), &mut rng));
        }
        let head = Conv2d::new(ch(0), OUT_CHANNELS, 1, true, &mut rng);
        Ok(SegModel {
            config,
            encoders,
            bottleneck,
            reducers,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != IN_CHANNELS {
            return Err(Error::Shape(format!("expected 1 input channel, got {c}")));
        }
        let div = self.config.divisor();
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be divisible by {div} (2^depth, depth {})",
                self.config.depth
            )));
        }
        Ok(())
    }

    /// Runs the network, returning `B×2×H×W` logits and the recorded activations.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut enc_caches = Vec::with_capacity(self.config.depth);
        let mut pool_args = Vec::with_capacity(self.config.depth);
        let mut cur = x.clone();
        for enc in &self.encoders {
            let cache = enc.forward(cur);
            let (pooled, arg) = max_pool2(cache.output());
            pool_args.push((arg, cache.output().shape()));
            enc_caches.push(cache);
            cur = pooled;
        }
        let bottleneck = self.bottleneck.forward(cur);
        let mut deep = bottleneck.output().clone();
        let mut reducer_inputs = vec![Tensor::zeros([0; 4]); self.config.depth];
        let mut dec_caches: Vec<Option<DoubleConvCache>> =
            (0..self.config.depth).map(|_| None).collect();
        for i in (0..self.config.depth).rev() {
            let reduced = self.reducers[i].forward(&deep);
            let up = upsample2(&reduced);
            let cat = Tensor::concat_channels(enc_caches[i].output(), &up);
            reducer_inputs[i] = deep;
            let cache = self.decoders[i].forward(cat);
            deep = cache.output().clone();
            dec_caches[i] = Some(cache);
        }
        let logits = self.head.forward(&deep);
        let cache = ForwardCache {
            encoders: enc_caches,
            pool_args,
            bottleneck,
            reducer_inputs,
            decoders: dec_caches.into_iter().map(|c| c.expect("filled")).collect(),
            head_input: deep,
        };
        Ok((logits, cache))
    }

    /// Logits only.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|(l, _)| l)
    }

    /// Accumulates parameter gradients for `dlogits` into every [`Param::grad`].
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Tensor) {
        let mut d = self.head.backward(&cache.head_input, dlogits);
        // gradient flowing into each encoder output through its skip connection
        let mut skip_grads: Vec<Option<Tensor>> = (0..self.config.depth).map(|_| None).collect();
        for i in 0..self.config.depth {
            let dcat = self.decoders[i].backward(&cache.decoders[i], &d);
            let skip_c = self.config.base_channels << i;
            let (dskip, dup) = dcat.split_channels(skip_c);
            skip_grads[i] = Some(dskip);
            let dreduced = upsample2_backward(&dup);
            d = self.reducers[i].backward(&cache.reducer_inputs[i], &dreduced);
        }
        d = self.bottleneck.backward(&cache.bottleneck, &d);
        for i in (0..self.config.depth).rev() {
            let (arg, shape) = &cache.pool_args[i];
            let mut denc = max_pool2_backward(&d, arg, *shape);
            let skip = skip_grads[i].take().expect("filled");
            for (a, b) in denc.data_mut().iter_mut().zip(skip.data()) {
                *a += b;
            }
            d = self.encoders[i].backward(&cache.encoders[i], &denc);
        }
    }

    /// Parameters in a fixed traversal order (encoders, bottleneck, reducers,
    /// decoders, head). Optimizer state and checkpoints rely on this order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for e in &mut self.encoders {
            v.extend(e.params_mut());
        }
        v.extend(self.bottleneck.params_mut());
        for r in &mut self.reducers {
            v.extend(r.params_mut());
        }
        for d in &mut self.decoders {
            v.extend(d.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for e in &self.encoders {
            v.extend(e.params());
        }
        v.extend(self.bottleneck.params());
        for r in &self.reducers {
            v.extend(r.params());
        }
        for d in &self.decoders {
            v.extend(d.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Sets every weight and bias to zero (normalization scales included).
    pub fn zero_weights(&mut self) {
        for p in self.params_mut() {
            p.value.fill(0.0);
        }
    }
}

/// Foreground probabilities and hard labels for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub height: usize,
    pub width: usize,
    pub prob: Vec<f32>,
    pub label: Vec<u8>,
}

/// Softmax foreground probability of a two-channel logit pair.
#[inline]
pub fn foreground_prob(background: f32, foreground: f32) -> f32 {
    // softmax over two classes is a logistic of the logit gap
    1.0 / (1.0 + (background - foreground).exp())
}

/// Argmax over the two channels; exact ties go to background.
#[inline]
pub fn argmax_label(background: f32, foreground: f32) -> u8 {
    u8::from(foreground > background)
}

/// Per-pixel probabilities and argmax labels for every sample of a logits batch.
pub fn predictions_from_logits(logits: &Tensor) -> Vec<Prediction> {
    let [n, c, h, w] = logits.shape();
    assert_eq!(c, OUT_CHANNELS);
    let hw = h * w;
    (0..n)
        .map(|i| {
            let s = logits.sample(i);
            let (bg, fg) = s.split_at(hw);
            Prediction {
                height: h,
                width: w,
                prob: bg.iter().zip(fg).map(|(&b, &f)| foreground_prob(b, f)).collect(),
                label: bg.iter().zip(fg).map(|(&b, &f)| argmax_label(b, f)).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            depth: 2,
            base_channels: 4,
        }
    }

    fn random_input(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * h * w).map(|_| rng.random_range(0.0f32..1.0)).collect();
        Tensor::from_vec([n, 1, h, w], data).unwrap()
    }

    #[test]
    fn output_shape_matches_input() {
        for depth in 1..=3 {
            let m = SegModel::new(
                ModelConfig {
                    depth,
                    base_channels: 4,
                },
                1,
            )
            .unwrap();
            let x = random_input(2, 16, 24, 2);
            let y = m.logits(&x).unwrap();
            assert_eq!(y.shape(), [2, 2, 16, 24]);
            assert!(y.is_finite());
        }
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let m = SegModel::new(small(), 1).unwrap();
        let x = random_input(1, 18, 16, 2);
        let err = m.logits(&x).unwrap_err();
        assert!(matches!(err, Error::Shape(ref s) if s.contains("divisible by 4")));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut m = SegModel::new(small(), 1).unwrap();
        m.zero_weights();
        let y = m.logits(&random_input(1, 16, 16, 3)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let p = predictions_from_logits(&y);
        assert!(p[0].prob.iter().all(|v| *v == 0.5));
        assert!(p[0].label.iter().all(|v| *v == 0));
    }

    #[test]
    fn seeded_init_is_deterministic_and_seeds_differ() {
        let a = SegModel::new(small(), 7).unwrap();
        let b = SegModel::new(small(), 7).unwrap();
        let c = SegModel::new(small(), 8).unwrap();
        let x = random_input(1, 16, 16, 4);
        assert_eq!(a.logits(&x).unwrap(), b.logits(&x).unwrap());
        assert_ne!(a.logits(&x).unwrap(), c.logits(&x).unwrap());
    }

    #[test]
    fn batch_equals_concatenated_singles() {
        let m = SegModel::new(small(), 9).unwrap();
        let x1 = random_input(1, 16, 16, 5);
        let x2 = random_input(1, 16, 16, 6);
        let both = m.logits(&Tensor::concat_batch(&[x1.clone(), x2.clone()]).unwrap()).unwrap();
        let sep = Tensor::concat_batch(&[m.logits(&x1).unwrap(), m.logits(&x2).unwrap()]).unwrap();
        for (a, b) in both.data().iter().zip(sep.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn tie_breaks_to_background() {
        assert_eq!(argmax_label(1.0, 3.0), 1);
        assert_eq!(argmax_label(2.0, 2.0), 0);
        assert_eq!(foreground_prob(2.0, 2.0), 0.5);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut m = SegModel::new(small(), 11).unwrap();
        let x = random_input(2, 16, 16, 12);
        let (logits, cache) = m.forward(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d: Vec<f32> = (0..logits.data().len())
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        m.backward(&cache, &Tensor::from_vec(logits.shape(), d).unwrap());
        for (i, p) in m.params().iter().enumerate() {
            assert!(p.grad.iter().any(|g| *g != 0.0), "param {i} has zero gradient");
        }
    }

    /// Spot-check parameter gradients against central differences of a
    /// linear probe of the logits (single precision, so loose tolerance).
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut m = SegModel::new(small(), 21).unwrap();
        let x = random_input(1, 8, 8, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let probe: Vec<f32> = (0..2 * 64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let objective = |m: &SegModel| -> f64 {
            m.logits(&x)
                .unwrap()
                .data()
                .iter()
                .zip(&probe)
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let (logits, cache) = m.forward(&x).unwrap();
        m.backward(&cache, &Tensor::from_vec(logits.shape(), probe.clone()).unwrap());
        let analytic: Vec<Vec<f32>> = m.params().iter().map(|p| p.grad.clone()).collect();
        let n_params = analytic.len();
        let h = 1e-3f32;
        let mut checked = 0;
        for pi in 0..n_params {
            let len = analytic[pi].len();
            for &j in &[0, len / 2, len - 1] {
                let orig = m.params()[pi].value[j];
                m.params_mut()[pi].value[j] = orig + h;
                let fp = objective(&m);
                m.params_mut()[pi].value[j] = orig - h;
                let fm = objective(&m);
                m.params_mut()[pi].value[j] = orig;
                let fd = (fp - fm) / (2.0 * h as f64);
                let an = analytic[pi][j] as f64;
                let scale = fd.abs().max(an.abs()).max(1e-1);
                assert!(
                    (fd - an).abs() / scale < 5e-2,
                    "param {pi}[{j}]: fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }
}
