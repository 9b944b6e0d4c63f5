use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Activation, NormCache, NormKind, PaddingMode};
use super::tensor::{Real, Tensor};
use crate::boundary::{apply_dirichlet, NodeMask};
use crate::grid::ScalarField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    Bilinear,
    Transpose,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channels at the top level; level `l` has `base_width << l`.
    pub base_width: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub norm: NormKind,
    pub groups: usize,
    pub activation: Activation,
    pub upsample: Upsample,
    pub conv_padding_mode: PaddingMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 1,
            out_channels: 1,
            base_width: 32,
            depth: 4,
            norm: NormKind::Group,
            groups: 8,
            activation: Activation::Gelu,
            upsample: Upsample::Bilinear,
            conv_padding_mode: PaddingMode::Reflect,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Config(format!("depth {} outside 1..=16", self.depth)));
        }
        if self.groups == 0 || self.base_width % self.groups != 0 {
            return Err(Error::Config(format!(
                "base_width {} not divisible by groups {}",
                self.base_width, self.groups
            )));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Smallest multiple of `2^depth` not below `n`.
    pub fn padded_len(&self, n: usize) -> usize {
        let m = 1usize << self.depth;
        n.div_ceil(m) * m
    }
}

/// Maps raw network output to Kelvin: `offset + scale * raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionHead {
    pub output_offset_k: f64,
    pub output_scale_k: f64,
}

impl Default for PredictionHead {
    fn default() -> Self {
        PredictionHead {
            output_offset_k: 298.0,
            output_scale_k: 50.0,
        }
    }
}

impl PredictionHead {
    pub fn validate(&self) -> Result<()> {
        if !(self.output_scale_k > 0.0 && self.output_scale_k.is_finite() && self.output_offset_k.is_finite()) {
            return Err(Error::Config(format!("invalid prediction head {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Named parameter tensors in a fixed architectural order. Gradients use
/// the same type, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<F = f32> {
    tensors: Vec<ParamTensor<F>>,
}

impl<F: Real> ParameterSet<F> {
    pub fn new(tensors: Vec<ParamTensor<F>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Shape(format!("duplicate parameter {}", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("parameter {} data does not match shape", t.name)));
            }
        }
        Ok(ParameterSet { tensors })
    }

    pub fn tensors(&self) -> &[ParamTensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<F>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<F>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![F::ZERO; t.data.len()],
                })
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> ParameterSet<G> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// True when names and shapes agree tensor by tensor.
    pub fn same_layout<G>(&self, other: &ParameterSet<G>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in ±1/sqrt(fan_in).
    FanIn(usize),
    Ones,
    Zeros,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    conv: usize,
    gamma: usize,
    beta: usize,
    cout: usize,
}

#[derive(Debug, Clone, Copy)]
struct LevelIds {
    a: BlockIds,
    b: BlockIds,
}

/// Parameter layout derived from a config.
#[derive(Debug, Clone)]
struct Plan {
    specs: Vec<(String, Vec<usize>, Init)>,
    enc: Vec<LevelIds>,
    /// Transpose-conv (weight, bias) per decoder level.
    up: Vec<Option<(usize, usize)>>,
    dec: Vec<LevelIds>,
    head_w: usize,
    head_b: usize,
}

impl Plan {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            specs.push((name, shape, init));
            specs.len() - 1
        };
        let block = |prefix: &str, cin: usize, cout: usize, push: &mut dyn FnMut(String, Vec<usize>, Init) -> usize| BlockIds {
            conv: push(format!("{prefix}.conv.weight"), vec![cout, cin, 3, 3], Init::FanIn(cin * 9)),
            gamma: push(format!("{prefix}.norm.weight"), vec![cout], Init::Ones),
            beta: push(format!("{prefix}.norm.bias"), vec![cout], Init::Zeros),
            cout,
        };
        let d = cfg.depth;
        let mut enc = Vec::with_capacity(d + 1);
        for l in 0..=d {
            let cin = if l == 0 { cfg.in_channels } else { cfg.width(l - 1) };
            let w = cfg.width(l);
            let a = block(&format!("enc{l}.0"), cin, w, &mut push);
            let b = block(&format!("enc{l}.1"), w, w, &mut push);
            enc.push(LevelIds { a, b });
        }
        let mut up = vec![None; d];
        let mut dec = vec![None; d];
        for l in (0..d).rev() {
            let below = cfg.width(l + 1);
            if cfg.upsample == Upsample::Transpose {
                let w = push(format!("up{l}.weight"), vec![below, below, 2, 2], Init::FanIn(below * 4));
                let b = push(format!("up{l}.bias"), vec![below], Init::FanIn(below * 4));
                up[l] = Some((w, b));
            }
            let w = cfg.width(l);
            let a = block(&format!("dec{l}.0"), below + w, w, &mut push);
            let b = block(&format!("dec{l}.1"), w, w, &mut push);
            dec[l] = Some(LevelIds { a, b });
        }
        let w0 = cfg.width(0);
        let head_w = push("head.weight".into(), vec![cfg.out_channels, w0], Init::FanIn(w0));
        let head_b = push("head.bias".into(), vec![cfg.out_channels], Init::FanIn(w0));
        Plan {
            specs,
            enc,
            up,
            dec: dec.into_iter().map(|x| x.expect("every level planned")).collect(),
            head_w,
            head_b,
        }
    }
}

struct BlockTape<F> {
    conv_in: Tensor<F>,
    norm: NormCache<F>,
    act_deriv: Tensor<F>,
}

struct LevelTape<F> {
    a: BlockTape<F>,
    b: BlockTape<F>,
}

/// Everything the reverse pass needs from one recorded forward pass.
/// Consumed by [`UNet::backward`], so each recording backs exactly one
/// gradient evaluation.
pub struct Recording<F> {
    enc: Vec<LevelTape<F>>,
    /// Decoder tapes indexed by level.
    dec: Vec<LevelTape<F>>,
    /// Transpose-conv inputs per decoder level.
    up_in: Vec<Option<Tensor<F>>>,
    head_in: Tensor<F>,
    fields: Vec<FieldMeta>,
}

#[derive(Clone)]
struct FieldMeta {
    mask: NodeMask,
}

/// A configured UNet surrogate. Parameters live outside so optimizers own
/// them; the network only checks their layout.
#[derive(Debug, Clone)]
pub struct UNet {
    config: NetworkConfig,
    head: PredictionHead,
    plan: Plan,
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i < j);
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

impl UNet {
    pub fn new(config: NetworkConfig, head: PredictionHead) -> Result<Self> {
        config.validate()?;
        head.validate()?;
        let plan = Plan::new(&config);
        Ok(UNet { config, head, plan })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn head(&self) -> &PredictionHead {
        &self.head
    }

    /// Deterministic fan-in uniform initialization.
    pub fn init_parameters<F: Real>(&self, seed: u64) -> ParameterSet<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .plan
            .specs
            .iter()
            .map(|(name, shape, init)| {
                let len = shape.iter().product();
                let data = match *init {
                    Init::Ones => vec![F::ONE; len],
                    Init::Zeros => vec![F::ZERO; len],
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..len).map(|_| F::from_f64(rng.gen_range(-bound..bound))).collect()
                    }
                };
                ParamTensor {
                    name: name.clone(),
                    shape: shape.clone(),
                    data,
                }
            })
            .collect();
        ParameterSet { tensors }
    }

    pub fn check_parameters<F: Real>(&self, params: &ParameterSet<F>) -> Result<()> {
        let ok = params.tensors.len() == self.plan.specs.len()
            && params
                .tensors
                .iter()
                .zip(&self.plan.specs)
                .all(|(t, (name, shape, _))| &t.name == name && &t.shape == shape);
        if !ok {
            return Err(Error::Shape("parameter set does not match network config".into()));
        }
        if !params.all_finite() {
            return Err(Error::Shape("parameter set contains non-finite values".into()));
        }
        Ok(())
    }

    fn block_forward<F: Real>(&self, p: &ParameterSet<F>, ids: BlockIds, x: Tensor<F>) -> (Tensor<F>, BlockTape<F>) {
        let t = &p.tensors;
        let z = ops::conv3x3_forward(&x, &t[ids.conv].data, ids.cout, self.config.conv_padding_mode);
        let (n, norm) = ops::norm_forward(&z, self.config.norm, self.config.groups, &t[ids.gamma].data, &t[ids.beta].data);
        let (y, act_deriv) = ops::activation_forward(&n, self.config.activation);
        (
            y,
            BlockTape {
                conv_in: x,
                norm,
                act_deriv,
            },
        )
    }

    fn block_backward<F: Real>(
        &self,
        p: &ParameterSet<F>,
        ids: BlockIds,
        tape: BlockTape<F>,
        dy: &Tensor<F>,
        g: &mut ParameterSet<F>,
    ) -> Tensor<F> {
        let dn = ops::activation_backward(&tape.act_deriv, dy);
        let (dgamma, dbeta) = pair_mut(&mut g.tensors, ids.gamma, ids.beta);
        let dz = ops::norm_backward(
            &tape.norm,
            self.config.norm,
            self.config.groups,
            &p.tensors[ids.gamma].data,
            &dn,
            &mut dgamma.data,
            &mut dbeta.data,
        );
        ops::conv3x3_backward(
            &tape.conv_in,
            &p.tensors[ids.conv].data,
            &dz,
            self.config.conv_padding_mode,
            &mut g.tensors[ids.conv].data,
        )
    }

    fn check_spatial<F>(&self, x: &Tensor<F>) -> Result<()> {
        let m = 1usize << self.config.depth;
        if x.h % m != 0 || x.w % m != 0 || x.h == 0 || x.w == 0 {
            return Err(Error::Shape(format!(
                "spatial size {}x{} not divisible by {m}",
                x.h, x.w
            )));
        }
        if x.c != self.config.in_channels {
            return Err(Error::Shape(format!("expected {} input channels, got {}", self.config.in_channels, x.c)));
        }
        Ok(())
    }

    /// Raw network on an already padded tensor. Returns the output tensor
    /// and the tape of the pass.
    fn run<F: Real>(&self, p: &ParameterSet<F>, x: Tensor<F>) -> (Tensor<F>, Recording<F>) {
        let d = self.config.depth;
        let t = &p.tensors;
        let mut enc = Vec::with_capacity(d + 1);
        let mut skips = Vec::with_capacity(d);
        let mut h = x;
        for (l, ids) in self.plan.enc.iter().enumerate() {
            if l > 0 {
                h = ops::avgpool_forward(&h);
            }
            let (a, ta) = self.block_forward(p, ids.a, h);
            let (b, tb) = self.block_forward(p, ids.b, a);
            enc.push(LevelTape { a: ta, b: tb });
            if l < d {
                skips.push(b.clone());
            }
            h = b;
        }
        let mut dec: Vec<Option<LevelTape<F>>> = (0..d).map(|_| None).collect();
        let mut up_in: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
        for l in (0..d).rev() {
            let u = match self.plan.up[l] {
                None => ops::upsample_forward(&h),
                Some((w, b)) => {
                    let u = ops::transpose_conv_forward(&h, &t[w].data, &t[b].data);
                    up_in[l] = Some(h);
                    u
                }
            };
            let cat = ops::concat(&u, &skips[l]);
            let ids = self.plan.dec[l];
            let (a, ta) = self.block_forward(p, ids.a, cat);
            let (b, tb) = self.block_forward(p, ids.b, a);
            dec[l] = Some(LevelTape { a: ta, b: tb });
            h = b;
        }
        let out = ops::conv1x1_forward(&h, &t[self.plan.head_w].data, &t[self.plan.head_b].data);
        let rec = Recording {
            enc,
            dec: dec.into_iter().map(|x| x.expect("decoder level ran")).collect(),
            up_in,
            head_in: h,
            fields: Vec::new(),
        };
        (out, rec)
    }

    /// Raw network on a tensor whose spatial size is divisible by `2^depth`.
    pub fn forward_tensor<F: Real>(&self, params: &ParameterSet<F>, x: Tensor<F>) -> Result<Tensor<F>> {
        self.check_parameters(params)?;
        self.check_spatial(&x)?;
        Ok(self.run(params, x).0)
    }

    /// Reverse pass through the raw network. Returns parameter gradients
    /// and the gradient with respect to the padded input.
    fn reverse<F: Real>(&self, p: &ParameterSet<F>, rec: Recording<F>, d_out: &Tensor<F>) -> (ParameterSet<F>, Tensor<F>) {
        let mut g = p.zeros_like();
        let (hw, hb) = pair_mut(&mut g.tensors, self.plan.head_w, self.plan.head_b);
        let mut dh = ops::conv1x1_backward(&rec.head_in, &p.tensors[self.plan.head_w].data, d_out, &mut hw.data, &mut hb.data);
        let d = self.config.depth;
        let mut dskips: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
        let mut up_in = rec.up_in;
        for (l, tape) in rec.dec.into_iter().enumerate() {
            let ids = self.plan.dec[l];
            dh = self.block_backward(p, ids.b, tape.b, &dh, &mut g);
            dh = self.block_backward(p, ids.a, tape.a, &dh, &mut g);
            let (du, ds) = ops::split(&dh, self.config.width(l + 1));
            dskips[l] = Some(ds);
            dh = match self.plan.up[l] {
                None => ops::upsample_backward(&du),
                Some((w, b)) => {
                    let x = up_in[l].take().expect("transpose input recorded");
                    let (dw, db) = pair_mut(&mut g.tensors, w, b);
                    ops::transpose_conv_backward(&x, &p.tensors[w].data, &du, &mut dw.data, &mut db.data)
                }
            };
        }
        for (l, tape) in rec.enc.into_iter().enumerate().rev() {
            if let Some(ds) = dskips.get_mut(l).and_then(Option::take) {
                dh.data.iter_mut().zip(&ds.data).for_each(|(a, &b)| *a += b);
            }
            let ids = self.plan.enc[l];
            dh = self.block_backward(p, ids.b, tape.b, &dh, &mut g);
            dh = self.block_backward(p, ids.a, tape.a, &dh, &mut g);
            if l > 0 {
                dh = ops::avgpool_backward(&dh);
            }
        }
        (g, dh)
    }

    /// Zero-pad a batch of node fields into one input tensor.
    fn pack<F: Real>(&self, inputs: &[&ScalarField]) -> Result<Tensor<F>> {
        let first = inputs.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let grid = first.grid();
        let (rows, cols) = grid.shape();
        let (ph, pw) = (self.config.padded_len(rows), self.config.padded_len(cols));
        if self.config.in_channels != 1 {
            return Err(Error::Shape("field inputs need a single input channel".into()));
        }
        let mut x = Tensor::zeros(inputs.len(), 1, ph, pw);
        for (s, f) in inputs.iter().enumerate() {
            f.check_same_grid(first)?;
            let dst = x.sample_mut(s);
            for r in 0..rows {
                for c in 0..cols {
                    dst[r * pw + c] = F::from_f64(f.values()[r * cols + c]);
                }
            }
        }
        Ok(x)
    }

    fn unpack<F: Real>(&self, out: &Tensor<F>, like: &ScalarField, s: usize, mask: &NodeMask, t0: f64) -> Result<ScalarField> {
        let (rows, cols) = like.grid().shape();
        let src = &out.sample(s)[..out.plane()];
        let (a, b) = (self.head.output_offset_k, self.head.output_scale_k);
        let f = ScalarField::from_fn(*like.grid(), |r, c| a + b * src[r * out.w + c].to_f64());
        debug_assert_eq!(f.values().len(), rows * cols);
        apply_dirichlet(&f, mask, t0)
    }

    /// Predicted temperature field for one normalized intensity field.
    pub fn forward<F: Real>(&self, params: &ParameterSet<F>, input: &ScalarField, mask: &NodeMask, t0: f64) -> Result<ScalarField> {
        let (mut fields, _) = self.forward_recorded(params, &[input], mask, t0)?;
        Ok(fields.pop().expect("one field per input"))
    }

    /// Batched forward that keeps the tape for [`UNet::backward`].
    pub fn forward_recorded<F: Real>(
        &self,
        params: &ParameterSet<F>,
        inputs: &[&ScalarField],
        mask: &NodeMask,
        t0: f64,
    ) -> Result<(Vec<ScalarField>, Recording<F>)> {
        self.check_parameters(params)?;
        let x = self.pack::<F>(inputs)?;
        mask.check_field(inputs[0])?;
        let (out, mut rec) = self.run(params, x);
        let fields = (0..inputs.len())
            .map(|s| self.unpack(&out, inputs[s], s, mask, t0))
            .collect::<Result<Vec<_>>>()?;
        rec.fields = vec![FieldMeta { mask: mask.clone() }; inputs.len()];
        Ok((fields, rec))
    }

    /// Parameter gradients given dL/dT for each predicted field of the
    /// recorded batch. Dirichlet nodes carry no gradient since the forward
    /// pass overwrites them.
    pub fn backward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        rec: Recording<F>,
        d_fields: &[ScalarField],
    ) -> Result<ParameterSet<F>> {
        self.check_parameters(params)?;
        if d_fields.len() != rec.fields.len() {
            return Err(Error::Shape(format!(
                "{} gradient fields for a batch of {}",
                d_fields.len(),
                rec.fields.len()
            )));
        }
        let (ph, pw) = (rec.head_in.h, rec.head_in.w);
        let mut d_out = Tensor::zeros(d_fields.len(), self.config.out_channels, ph, pw);
        let scale = self.head.output_scale_k;
        for (s, (df, meta)) in d_fields.iter().zip(&rec.fields).enumerate() {
            meta.mask.check_field(df)?;
            let (rows, cols) = df.grid().shape();
            if rows > ph || cols > pw {
                return Err(Error::Shape("gradient field larger than recorded input".into()));
            }
            let dst = d_out.sample_mut(s);
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    if !meta.mask.is_dirichlet(i) {
                        dst[r * pw + c] = F::from_f64(scale * df.values()[i]);
                    }
                }
            }
        }
        Ok(self.reverse(params, rec, &d_out).0)
    }
}

/// Free-function form of [`UNet::init_parameters`] at training precision.
pub fn init_parameters(config: &NetworkConfig, seed: u64) -> Result<ParameterSet<f32>> {
    Ok(UNet::new(config.clone(), PredictionHead::default())?.init_parameters(seed))
}
