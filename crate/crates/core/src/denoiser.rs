//! Untrained U-Net denoiser `D_θ` for `[C, L]` signals and `[C, H, W]` images.
//!
//! Every level runs two `conv → norm → leaky-ReLU` blocks, downsamples with a
//! stride-2 conv and keeps its activation as a skip. The decoder upsamples
//! (nearest), convolves, concatenates the skip and runs two more blocks. A
//! 1×1 conv head (optionally followed by a sigmoid) maps back to the output
//! channels. Convs followed by a normalization carry no bias since the norm
//! offset subsumes it.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    Instance,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Spatial extent: `[L]` for 1D, `[H, W]` for 2D.
    pub spatial: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub slope: f64,
    pub norm: NormKind,
    pub norm_eps: f64,
    pub head: Head,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            spatial: vec![128],
            in_channels: 1,
            out_channels: 1,
            depth: 3,
            base_channels: 32,
            kernel_size: 3,
            slope: 0.1,
            norm: NormKind::Instance,
            norm_eps: 1e-5,
            head: Head::Linear,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn one_d(length: usize) -> Self {
        DenoiserConfig {
            spatial: vec![length],
            ..Default::default()
        }
    }

    pub fn two_d(h: usize, w: usize, channels: usize) -> Self {
        DenoiserConfig {
            spatial: vec![h, w],
            in_channels: channels,
            out_channels: channels,
            ..Default::default()
        }
    }

    /// Full input/output tensor shape `[C, ..spatial]`.
    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = vec![self.in_channels];
        s.extend_from_slice(&self.spatial);
        s
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels];
        s.extend_from_slice(&self.spatial);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial.is_empty() || self.spatial.len() > 2 {
            return Err(Error::invalid(format!("denoiser supports 1D or 2D inputs, got spatial {:?}", self.spatial)));
        }
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("depth, base_channels and channel counts must be at least 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::invalid(format!("init_std must be positive, got {}", self.init_std)));
        }
        let divisor = 1usize << self.depth;
        if self.spatial.iter().any(|&n| n == 0 || n % divisor != 0) {
            return Err(Error::IndivisibleSpatial {
                size: self.spatial.clone(),
                divisor,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    weight: usize,
    bias: Option<usize>,
    norm: Option<(usize, usize)>,
    stride: usize,
    pad: usize,
    act: bool,
}

#[derive(Clone, Debug)]
pub struct UNet<S> {
    config: DenoiserConfig,
    params: Vec<Tensor<S>>,
    names: Vec<String>,
    encoders: Vec<[Block; 2]>,
    downs: Vec<Block>,
    bottleneck: [Block; 2],
    ups: Vec<Block>,
    decoders: Vec<[Block; 2]>,
    head: Block,
}

struct Builder<'r, S> {
    cfg: &'r DenoiserConfig,
    rng: Rng,
    params: Vec<Tensor<S>>,
    names: Vec<String>,
}

impl<S: Scalar> Builder<'_, S> {
    fn push(&mut self, name: String, t: Tensor<S>) -> usize {
        self.params.push(t);
        self.names.push(name);
        self.params.len() - 1
    }

    fn block(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, with_norm: bool) -> Block {
        let mut wshape = vec![c_out, c_in];
        wshape.extend(std::iter::repeat(k).take(self.cfg.spatial.len()));
        let std = self.cfg.init_std;
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&wshape, |_| S::lit(std * rng.normal()));
        let weight = self.push(format!("{name}.weight"), w);
        let norm = (with_norm && self.cfg.norm == NormKind::Instance).then(|| {
            let g = self.push(format!("{name}.gain"), Tensor::ones(&[c_out]));
            let o = self.push(format!("{name}.offset"), Tensor::zeros(&[c_out]));
            (g, o)
        });
        let bias = norm.is_none().then(|| self.push(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Block {
            weight,
            bias,
            norm,
            stride,
            pad: k / 2,
            act: with_norm,
        }
    }
}

impl<S: Scalar> UNet<S> {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            cfg: &config,
            rng: Rng::new(config.seed),
            params: Vec::new(),
            names: Vec::new(),
        };
        let k = config.kernel_size;
        let width = |l: usize| config.base_channels << l;
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        let mut c = config.in_channels;
        for l in 0..config.depth {
            let e0 = b.block(&format!("enc{l}.0"), c, width(l), k, 1, true);
            let e1 = b.block(&format!("enc{l}.1"), width(l), width(l), k, 1, true);
            encoders.push([e0, e1]);
            downs.push(b.block(&format!("down{l}"), width(l), width(l), k, 2, true));
            c = width(l);
        }
        let bottom = width(config.depth);
        let bottleneck = [
            b.block("mid.0", c, bottom, k, 1, true),
            b.block("mid.1", bottom, bottom, k, 1, true),
        ];
        c = bottom;
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for l in (0..config.depth).rev() {
            ups.push(b.block(&format!("up{l}"), c, width(l), k, 1, true));
            let d0 = b.block(&format!("dec{l}.0"), 2 * width(l), width(l), k, 1, true);
            let d1 = b.block(&format!("dec{l}.1"), width(l), width(l), k, 1, true);
            decoders.push([d0, d1]);
            c = width(l);
        }
        let head = b.block("head", c, config.out_channels, 1, 1, false);
        let (params, names) = (b.params, b.names);
        Ok(UNet {
            config,
            params,
            names,
            encoders,
            downs,
            bottleneck,
            ups,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Indices of conv weight tensors (the Gaussian-initialized parameters).
    pub fn weight_indices(&self) -> Vec<usize> {
        self.names.iter().enumerate().filter(|(_, n)| n.ends_with(".weight")).map(|(i, _)| i).collect()
    }

    pub fn bias_indices(&self) -> Vec<usize> {
        self.names.iter().enumerate().filter(|(_, n)| n.ends_with(".bias")).map(|(i, _)| i).collect()
    }

    /// All parameters flattened in construction order.
    pub fn flatten(&self) -> Tensor<S> {
        let data: Vec<S> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        let n = data.len();
        Tensor::new(&[n], data).expect("length matches")
    }

    /// Inverse of [`UNet::flatten`].
    pub fn load_flat(&mut self, flat: &Tensor<S>) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("load parameters", flat.shape(), &[self.param_count()]));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Register every parameter as a leaf of `g`, in construction order.
    pub fn register<'g>(&self, g: &mut Graph<'g, S>) -> Result<Vec<Var>> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Register the parameters as constants (no gradients).
    pub fn register_frozen<'g>(&self, g: &mut Graph<'g, S>) -> Result<Vec<Var>> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    fn apply_block<'g>(&self, g: &mut Graph<'g, S>, p: &[Var], b: &Block, x: Var) -> Result<Var> {
        let mut h = g.conv(x, p[b.weight], b.bias.map(|i| p[i]), b.stride, b.pad)?;
        if let Some((gain, offset)) = b.norm {
            h = g.instance_norm(h, p[gain], p[offset], self.config.norm_eps)?;
        }
        if b.act {
            h = g.leaky_relu(h, self.config.slope)?;
        }
        Ok(h)
    }

    /// Record the forward pass on `g` with parameter handles `p`.
    pub fn forward<'g>(&self, g: &mut Graph<'g, S>, p: &[Var], x: Var) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::invalid(format!("expected {} parameter handles, got {}", self.params.len(), p.len())));
        }
        let want = self.config.input_shape();
        if g.shape(x) != want.as_slice() {
            return Err(Error::shape("denoiser input", g.shape(x), &want));
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for (enc, down) in self.encoders.iter().zip(&self.downs) {
            h = self.apply_block(g, p, &enc[0], h)?;
            h = self.apply_block(g, p, &enc[1], h)?;
            skips.push(h);
            h = self.apply_block(g, p, down, h)?;
        }
        h = self.apply_block(g, p, &self.bottleneck[0], h)?;
        h = self.apply_block(g, p, &self.bottleneck[1], h)?;
        for (up, dec) in self.ups.iter().zip(&self.decoders) {
            h = g.upsample(h, 2)?;
            h = self.apply_block(g, p, up, h)?;
            let skip = skips.pop().expect("one skip per level");
            h = g.concat(&[h, skip])?;
            h = self.apply_block(g, p, &dec[0], h)?;
            h = self.apply_block(g, p, &dec[1], h)?;
        }
        h = self.apply_block(g, p, &self.head, h)?;
        if self.config.head == Head::Sigmoid {
            h = g.sigmoid(h)?;
        }
        Ok(h)
    }

    /// Evaluate `D_θ(x)` without recording gradients.
    pub fn denoise(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.ensure_shape("denoise", &self.config.input_shape())?;
        let mut g = Graph::new();
        let p = self.register_frozen(&mut g)?;
        let xv = g.constant(x.clone())?;
        let out = self.forward(&mut g, &p, xv)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_1d() -> DenoiserConfig {
        DenoiserConfig {
            spatial: vec![16],
            depth: 2,
            base_channels: 4,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn shape_preserved_1d_and_2d() {
        let net = UNet::<f64>::new(small_1d()).unwrap();
        let mut rng = Rng::new(0);
        let x = Tensor::randn(&[1, 16], &mut rng);
        assert_eq!(net.denoise(&x).unwrap().shape(), &[1, 16]);

        let cfg = DenoiserConfig {
            depth: 2,
            base_channels: 4,
            ..DenoiserConfig::two_d(8, 12, 2)
        };
        let net = UNet::<f64>::new(cfg).unwrap();
        let x = Tensor::randn(&[2, 8, 12], &mut rng);
        assert_eq!(net.denoise(&x).unwrap().shape(), &[2, 8, 12]);
    }

    #[test]
    fn indivisible_size_reports_padding() {
        let cfg = DenoiserConfig {
            spatial: vec![30],
            ..Default::default()
        };
        let err = UNet::<f64>::new(cfg).unwrap_err();
        assert!(matches!(err, Error::IndivisibleSpatial { divisor: 8, .. }));
        assert!(err.to_string().contains("pad"), "{err}");
    }

    #[test]
    fn init_statistics() {
        let net = UNet::<f64>::new(DenoiserConfig {
            seed: 1,
            ..DenoiserConfig::one_d(128)
        })
        .unwrap();
        let w: Vec<f64> = net.weight_indices().iter().flat_map(|&i| net.params()[i].to_f64_vec()).collect();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.001, "{std}");
        for i in net.bias_indices() {
            assert!(net.params()[i].data().iter().all(|&b| b == 0.0));
        }
        let again = UNet::<f64>::new(net.config().clone()).unwrap();
        assert_eq!(net.flatten(), again.flatten());
    }

    #[test]
    fn zero_input_finite_and_sigmoid_range() {
        let net = UNet::<f64>::new(DenoiserConfig {
            head: Head::Sigmoid,
            ..small_1d()
        })
        .unwrap();
        let z = net.denoise(&Tensor::zeros(&[1, 16])).unwrap();
        assert!(z.is_finite());
        let mut rng = Rng::new(9);
        let y = net.denoise(&Tensor::randn(&[1, 16], &mut rng).scale(5.0)).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = UNet::<f64>::new(small_1d()).unwrap();
        assert!(net.denoise(&Tensor::zeros(&[1, 32])).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let mut net = UNet::<f64>::new(small_1d()).unwrap();
        let flat = net.flatten().scale(2.0);
        net.load_flat(&flat).unwrap();
        assert_eq!(net.flatten(), flat);
        assert!(net.load_flat(&Tensor::zeros(&[3])).is_err());
    }
}
