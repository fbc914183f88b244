//! Text-conditioned mapping network: a text adapter MLP whose output is
//! concatenated with the noise vector and fed through the trunk MLP.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::digest::ContentHasher;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 512;
pub const HIDDEN_WIDTH: usize = 512;
pub const ADAPTER_DEPTH: usize = 2;
pub const TRUNK_DEPTH: usize = 8;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Geometry,
    Texture,
}

impl Branch {
    pub fn tag(self) -> u8 {
        match self {
            Branch::Geometry => 0,
            Branch::Texture => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Branch::Geometry),
            1 => Some(Branch::Texture),
            _ => None,
        }
    }
}

/// Layer widths of a mapping network.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingConfig {
    pub text_dim: usize,
    pub noise_dim: usize,
    pub adapter_widths: Vec<usize>,
    pub trunk_widths: Vec<usize>,
    pub slope: f64,
}

impl MappingConfig {
    /// Two 512-wide adapter layers and eight 512-wide trunk layers.
    pub fn standard(text_dim: usize) -> Self {
        Self {
            text_dim,
            noise_dim: LATENT_DIM,
            adapter_widths: vec![HIDDEN_WIDTH; ADAPTER_DEPTH],
            trunk_widths: vec![HIDDEN_WIDTH; TRUNK_DEPTH - 1]
                .into_iter()
                .chain([LATENT_DIM])
                .collect(),
            slope: LEAKY_SLOPE,
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.trunk_widths.last().expect("trunk has layers")
    }

    /// `(fan_in, fan_out)` of every layer, adapter first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.text_dim;
        for &w in &self.adapter_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        fan_in += self.noise_dim;
        for &w in &self.trunk_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.adapter_widths.iter().chain(&self.trunk_widths);
        if self.text_dim == 0
            || self.adapter_widths.is_empty()
            || self.trunk_widths.is_empty()
            || all.clone().any(|&w| w == 0)
        {
            return Err(Error::InvalidConfig(
                "mapping network needs a positive text dim and non-empty, positive widths".into(),
            ));
        }
        if !self.slope.is_finite() {
            return Err(Error::InvalidConfig("activation slope must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// fan_in × fan_out
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork {
    pub branch: Branch,
    pub noise_dim: usize,
    pub slope: f64,
    pub adapter: Vec<Dense>,
    pub trunk: Vec<Dense>,
}

/// Forward intermediates for one batch.
#[derive(Debug, Clone)]
pub struct MappingTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MappingTrace {
    /// Hash of the sign of every activated pre-activation. Two traces with
    /// equal signatures lie on the same linear piece of the network.
    pub fn activation_signature(&self) -> u64 {
        let activated = self.pre.len().saturating_sub(1);
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for z in &self.pre[..activated] {
            for &v in z.iter() {
                h = (h ^ u64::from(v > 0.0)).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Gradient with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingGrads {
    pub layers: Vec<Dense>,
}

impl MappingGrads {
    pub fn zeros_like(net: &MappingNetwork) -> Self {
        Self {
            layers: net
                .layers()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        flat_get(self.layers.iter(), index)
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
    }

    pub fn add_assign(&mut self, other: &MappingGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum()
    }
}

fn flat_get<'a>(layers: impl Iterator<Item = &'a Dense>, mut index: usize) -> f64 {
    for l in layers {
        if index < l.weight.len() {
            let cols = l.weight.ncols();
            return l.weight[[index / cols, index % cols]];
        }
        index -= l.weight.len();
        if index < l.bias.len() {
            return l.bias[index];
        }
        index -= l.bias.len();
    }
    panic!("parameter index out of range");
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl MappingNetwork {
    /// Weights ~ N(0, 1/fan_in) from a seeded stream, biases zero.
    pub fn init(config: &MappingConfig, branch: Branch, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Dense> = config
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let scale = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        rng.sample::<f64, _>(StandardNormal) * scale
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let trunk = layers.split_off(config.adapter_widths.len());
        Ok(Self {
            branch,
            noise_dim: config.noise_dim,
            slope: config.slope,
            adapter: layers,
            trunk,
        })
    }

    pub fn text_dim(&self) -> usize {
        self.adapter[0].weight.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.last().expect("trunk has layers").weight.ncols()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.adapter.iter().chain(&self.trunk)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.adapter.iter_mut().chain(self.trunk.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    pub fn param(&self, index: usize) -> f64 {
        flat_get(self.layers(), index)
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for l in self.layers_mut() {
            if index < l.weight.len() {
                let cols = l.weight.ncols();
                l.weight[[index / cols, index % cols]] = value;
                return;
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                l.bias[index] = value;
                return;
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update_u64(self.branch.tag() as u64)
            .update_f64s(&[self.slope]);
        for l in self.layers() {
            h.update_u64(l.weight.nrows() as u64)
                .update_u64(l.weight.ncols() as u64);
            h.update_f64s(l.weight.as_slice().expect("standard layout"));
            h.update_f64s(l.bias.as_slice().expect("standard layout"));
        }
        h.finish_hex()
    }

    fn check_batch(&self, noise: &ArrayView2<f64>, text: &ArrayView2<f64>) -> Result<()> {
        if noise.nrows() != text.nrows() {
            return Err(Error::InvalidInput("noise and text batches differ in size".into()));
        }
        if noise.ncols() != self.noise_dim || text.ncols() != self.text_dim() {
            return Err(Error::InvalidInput(format!(
                "expected noise dim {} and text dim {}, got {} and {}",
                self.noise_dim,
                self.text_dim(),
                noise.ncols(),
                text.ncols()
            )));
        }
        if noise.iter().chain(text.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network input".into()));
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples. Returns latents and the trace
    /// needed by [`MappingNetwork::backward`].
    pub fn forward(&self, noise: ArrayView2<f64>, text: ArrayView2<f64>) -> Result<(Array2<f64>, MappingTrace)> {
        self.check_batch(&noise, &text)?;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut h = text.to_owned();
        for l in &self.adapter {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            h = z.mapv(|v| leaky(v, self.slope));
            pre.push(z);
        }
        h = concatenate(Axis(1), &[noise, h.view()]).expect("batch rows agree");
        let last = self.trunk.len() - 1;
        for (i, l) in self.trunk.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            h = if i == last { z.clone() } else { z.mapv(|v| leaky(v, self.slope)) };
            pre.push(z);
        }
        Ok((h, MappingTrace { inputs, pre }))
    }

    /// Parameter gradient given the gradient on the batch of latents.
    pub fn backward(&self, trace: &MappingTrace, grad_out: &Array2<f64>) -> MappingGrads {
        let slope = self.slope;
        let n_adapter = self.adapter.len();
        let last = self.trunk.len() - 1;
        let mut grads: Vec<Dense> = Vec::with_capacity(n_adapter + self.trunk.len());
        let mut g = grad_out.clone();
        for (i, l) in self.trunk.iter().enumerate().rev() {
            let k = n_adapter + i;
            if i != last {
                g.zip_mut_with(&trace.pre[k], |gv, &z| {
                    if z <= 0.0 {
                        *gv *= slope
                    }
                });
            }
            grads.push(Dense {
                weight: trace.inputs[k].t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            g = g.dot(&l.weight.t());
        }
        let mut g = g.slice(s![.., self.noise_dim..]).to_owned();
        for (i, l) in self.adapter.iter().enumerate().rev() {
            g.zip_mut_with(&trace.pre[i], |gv, &z| {
                if z <= 0.0 {
                    *gv *= slope
                }
            });
            grads.push(Dense {
                weight: trace.inputs[i].t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            if i > 0 {
                g = g.dot(&l.weight.t());
            }
        }
        grads.reverse();
        MappingGrads { layers: grads }
    }

    /// `params -= lr * grads`.
    pub fn apply_sgd(&mut self, grads: &MappingGrads, lr: f64) {
        for (l, g) in self.layers_mut().zip(&grads.layers) {
            l.weight.scaled_add(-lr, &g.weight);
            l.bias.scaled_add(-lr, &g.bias);
        }
    }
}

/// Standard-normal input noise `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise(pub Vec<f64>);

impl LatentNoise {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }
}

/// Mapping-network output `w` for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub w: Vec<f64>,
    pub branch: Branch,
}

/// `w = trunk(concat(z, adapter(e)))` for a single sample.
pub fn map(network: &MappingNetwork, z: &LatentNoise, text: &EmbeddingVector) -> Result<LatentCode> {
    let zr = ArrayView2::from_shape((1, z.0.len()), &z.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let er = ArrayView2::from_shape((1, text.dim()), text.values())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let (w, _) = network.forward(zr, er)?;
    Ok(LatentCode {
        w: w.row(0).to_vec(),
        branch: network.branch,
    })
}

/// `(1−α)·source + α·target`; the endpoints are returned exactly.
pub fn interpolate(source: &LatentCode, target: &LatentCode, alpha: f64) -> Result<LatentCode> {
    if source.branch != target.branch {
        return Err(Error::InvalidInput("cannot interpolate latents of different branches".into()));
    }
    if source.w.len() != target.w.len() {
        return Err(Error::InvalidInput("latent dimensions differ".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside [0,1]")));
    }
    if alpha == 0.0 {
        return Ok(source.clone());
    }
    if alpha == 1.0 {
        return Ok(target.clone());
    }
    Ok(LatentCode {
        w: source
            .w
            .iter()
            .zip(&target.w)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect(),
        branch: source.branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> MappingConfig {
        MappingConfig {
            text_dim: 3,
            noise_dim: 2,
            adapter_widths: vec![4, 3],
            trunk_widths: vec![5, 4, 2],
            slope: 0.2,
        }
    }

    #[test]
    fn standard_param_count() {
        let cfg = MappingConfig::standard(64);
        let adapter = (64 * 512 + 512) + (512 * 512 + 512);
        let trunk = (1024 * 512 + 512) + 7 * (512 * 512 + 512);
        assert_eq!(cfg.param_count(), adapter + trunk);
        assert_eq!(cfg.layer_shapes().len(), 10);
        assert_eq!(cfg.latent_dim(), 512);
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let a = MappingNetwork::init(&tiny(), Branch::Geometry, 4).unwrap();
        let b = MappingNetwork::init(&tiny(), Branch::Geometry, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        let c = MappingNetwork::init(&tiny(), Branch::Geometry, 5).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.param_count(), tiny().param_count());
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut net = MappingNetwork::init(&tiny(), Branch::Texture, 1).unwrap();
        let last = net.trunk.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias = array![0.25, -1.5];
        for s in 0..3 {
            let z = LatentNoise::sample(2, &mut ChaCha8Rng::seed_from_u64(s));
            let e = EmbeddingVector::normalize(vec![1.0, s as f64, -2.0]).unwrap();
            assert_eq!(map(&net, &z, &e).unwrap().w, vec![0.25, -1.5]);
        }
    }

    #[test]
    fn single_unit_forward_by_hand() {
        let cfg = MappingConfig {
            text_dim: 1,
            noise_dim: 1,
            adapter_widths: vec![1, 1],
            trunk_widths: vec![1, 1],
            slope: 0.2,
        };
        let mut net = MappingNetwork::init(&cfg, Branch::Geometry, 0).unwrap();
        net.adapter[0].weight = array![[2.0]];
        net.adapter[0].bias = array![-0.5];
        net.adapter[1].weight = array![[-3.0]];
        net.adapter[1].bias = array![0.1];
        net.trunk[0].weight = array![[0.5], [1.5]];
        net.trunk[0].bias = array![0.2];
        net.trunk[1].weight = array![[-4.0]];
        net.trunk[1].bias = array![1.0];
        let e = 1.0;
        let z = 0.3;
        // adapter: 2*1 - 0.5 = 1.5 -> 1.5; -3*1.5 + 0.1 = -4.4 -> -0.88
        // trunk: 0.5*0.3 + 1.5*(-0.88) + 0.2 = -0.97 -> -0.194; -4*(-0.194) + 1 = 1.776
        let h1: f64 = 2.0 * e - 0.5;
        let h2 = 0.2 * (-3.0 * h1 + 0.1);
        let t1 = 0.2 * (0.5 * z + 1.5 * h2 + 0.2);
        let want = -4.0 * t1 + 1.0;
        let w = map(&net, &LatentNoise(vec![z]), &EmbeddingVector::new(vec![e]).unwrap()).unwrap();
        assert!((w.w[0] - want).abs() < 1e-12);
        assert!((w.w[0] - 1.776).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = MappingNetwork::init(&tiny(), Branch::Geometry, 1).unwrap();
        let e = EmbeddingVector::normalize(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(map(&net, &LatentNoise(vec![0.0; 3]), &e).is_err());
        assert!(map(&net, &LatentNoise(vec![f64::NAN, 0.0]), &e).is_err());
        let e2 = EmbeddingVector::normalize(vec![1.0, 0.0]).unwrap();
        assert!(map(&net, &LatentNoise(vec![0.0; 2]), &e2).is_err());
    }

    #[test]
    fn batch_equals_rows() {
        let net = MappingNetwork::init(&tiny(), Branch::Geometry, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Array2::from_shape_simple_fn((5, 2), || rng.sample(StandardNormal));
        let text = Array2::from_shape_simple_fn((5, 3), || rng.sample(StandardNormal));
        let (batch, _) = net.forward(noise.view(), text.view()).unwrap();
        for r in 0..5 {
            let (row, _) = net
                .forward(noise.slice(s![r..r + 1, ..]), text.slice(s![r..r + 1, ..]))
                .unwrap();
            for (a, b) in row.row(0).iter().zip(batch.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = MappingNetwork::init(&tiny(), Branch::Geometry, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Array2::from_shape_simple_fn((3, 2), || rng.sample(StandardNormal));
        let text = Array2::from_shape_simple_fn((3, 3), || rng.sample(StandardNormal));
        let weights = Array2::from_shape_simple_fn((3, 2), || rng.sample(StandardNormal));
        let loss = |n: &MappingNetwork| -> f64 {
            let (w, _) = n.forward(noise.view(), text.view()).unwrap();
            (&w * &weights).sum()
        };
        let (_, trace) = net.forward(noise.view(), text.view()).unwrap();
        let grads = net.backward(&trace, &weights);
        let h = 1e-6;
        for i in 0..net.param_count() {
            let mut p = net.clone();
            p.set_param(i, net.param(i) + h);
            let mut m = net.clone();
            m.set_param(i, net.param(i) - h);
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - grads.get(i)).abs() < 1e-6, "param {i}: {fd} vs {}", grads.get(i));
        }
    }

    #[test]
    fn interpolation() {
        let a = LatentCode { w: vec![0.0, -0.0, 1e-300], branch: Branch::Texture };
        let b = LatentCode { w: vec![2.0, 2.0, 2.0], branch: Branch::Texture };
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let zero = LatentCode { w: vec![0.0; 3], branch: Branch::Texture };
        assert_eq!(interpolate(&zero, &b, 0.5).unwrap().w, vec![1.0; 3]);
        let g = LatentCode { w: vec![0.0; 3], branch: Branch::Geometry };
        assert!(interpolate(&a, &g, 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }
}
