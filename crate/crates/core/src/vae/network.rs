use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{sigma, LOGVAR_MAX, LOGVAR_MIN};
use super::ops::{self, Act, BnCache, Geom};
use super::{LatentCode, ModelConfig, VaeError};
use crate::voxcore::{DensityGrid, VoxelGrid};

/// Name, shape and position of one tensor in the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const KERNEL: usize = 4;
/// Initial output bias: a sigmoid of about 0.05, close to typical occupancy.
const OUTPUT_BIAS: f64 = -3.0;

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    geom: Geom,
}

impl Conv {
    fn w_len(&self) -> usize {
        self.cin * self.cout * self.geom.k.pow(3)
    }
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
    c: usize,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal(f64),
    Const(f64),
}

#[derive(Clone, Debug)]
struct Layout {
    enc: Vec<(Conv, Bn)>,
    head: Conv,
    fc_w: usize,
    fc_b: usize,
    fc_out: usize,
    fc_bn: Bn,
    dec: Vec<Conv>,
    dec_bn: Vec<Bn>,
    specs: Vec<TensorSpec>,
    inits: Vec<(usize, usize, Init)>,
    len: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let mut l = Layout {
            enc: vec![],
            head: Conv {
                w: 0,
                b: 0,
                cin: 0,
                cout: 0,
                geom: Geom::new(1, 1, 0, 1),
            },
            fc_w: 0,
            fc_b: 0,
            fc_out: 0,
            fc_bn: Bn {
                gamma: 0,
                beta: 0,
                mean: 0,
                var: 0,
                c: 0,
            },
            dec: vec![],
            dec_bn: vec![],
            specs: vec![],
            inits: vec![],
            len: 0,
        };
        let widths = &cfg.channel_widths;
        let depth = widths.len();
        let j = cfg.latent_dim;
        let stacked = |chans: &[usize]| {
            if cfg.stack_dense {
                chans.iter().sum()
            } else {
                *chans.last().unwrap()
            }
        };

        let mut res = cfg.input_dim;
        let mut feat_ch = vec![1usize];
        for (i, &w) in widths.iter().enumerate() {
            let geom = Geom::new(KERNEL, 2, 1, res);
            let cin = stacked(&feat_ch);
            let conv = l.conv(&format!("encoder.{i}.conv"), cin, w, geom, false, None);
            let bn = l.bn(&format!("encoder.{i}.bn"), w);
            l.enc.push((conv, bn));
            res = geom.s_out;
            feat_ch.push(w);
        }
        let head_in = stacked(&feat_ch);
        let head_std = 0.1 / (head_in as f64).sqrt();
        l.head = l.conv("encoder.head", head_in, 2 * j, Geom::new(1, 1, 0, res), false, Some(head_std));

        let top = widths[depth - 1];
        l.fc_out = top * res.pow(3);
        l.fc_w = l.add("decoder.fc.weight", vec![l.fc_out, j], true, Init::Normal((2.0 / j as f64).sqrt()));
        l.fc_b = l.add("decoder.fc.bias", vec![l.fc_out], true, Init::Const(0.0));
        l.fc_bn = l.bn("decoder.fc.bn", top);

        let mut gen_ch = vec![top];
        for i in 0..depth {
            let last = i + 1 == depth;
            let cout = if last { 1 } else { widths[depth - 2 - i] };
            let geom = Geom::new(KERNEL, 2, 1, res * 2);
            let cin = stacked(&gen_ch);
            let name = format!("decoder.{i}.deconv");
            let conv = if last {
                l.conv(&name, cin, cout, geom, true, Some(0.01))
            } else {
                l.conv(&name, cin, cout, geom, true, None)
            };
            if last {
                l.inits.push((conv.b, 1, Init::Const(OUTPUT_BIAS)));
            } else {
                let bn = l.bn(&format!("decoder.{i}.bn"), cout);
                l.dec_bn.push(bn);
                gen_ch.push(cout);
            }
            l.dec.push(conv);
            res *= 2;
        }
        l
    }

    fn add(&mut self, name: &str, shape: Vec<usize>, trainable: bool, init: Init) -> usize {
        let offset = self.len;
        let len: usize = shape.iter().product();
        self.specs.push(TensorSpec {
            name: name.into(),
            shape,
            offset,
            trainable,
        });
        self.inits.push((offset, len, init));
        self.len += len;
        offset
    }

    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        geom: Geom,
        transposed: bool,
        std: Option<f64>,
    ) -> Conv {
        let k3 = geom.k.pow(3);
        let (shape, fan_in) = if transposed {
            (vec![cin, cout, geom.k, geom.k, geom.k], cin * k3 / geom.stride.pow(3))
        } else {
            (vec![cout, cin, geom.k, geom.k, geom.k], cin * k3)
        };
        let std = std.unwrap_or_else(|| (2.0 / fan_in as f64).sqrt());
        let w = self.add(&format!("{name}.weight"), shape, true, Init::Normal(std));
        let b = self.add(&format!("{name}.bias"), vec![cout], true, Init::Const(0.0));
        Conv {
            w,
            b,
            cin,
            cout,
            geom,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.add(&format!("{name}.scale"), vec![c], true, Init::Const(1.0)),
            beta: self.add(&format!("{name}.shift"), vec![c], true, Init::Const(0.0)),
            mean: self.add(&format!("{name}.running_mean"), vec![c], false, Init::Const(0.0)),
            var: self.add(&format!("{name}.running_var"), vec![c], false, Init::Const(1.0)),
            c,
        }
    }

    /// Every batch-norm layer in forward order.
    fn all_bn(&self) -> Vec<Bn> {
        let mut v: Vec<Bn> = self.enc.iter().map(|(_, b)| *b).collect();
        v.push(self.fc_bn);
        v.extend(&self.dec_bn);
        v
    }
}

/// Batch-norm behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Normalize with batch statistics and keep caches for backward.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

#[derive(Debug)]
pub(crate) struct EncTape {
    feats: Vec<Act>,
    inputs: Vec<Act>,
    pools: Vec<Vec<Option<Vec<u32>>>>,
    relu: Vec<Act>,
    bn: Vec<Option<BnCache>>,
    head_in: Act,
    head_pools: Vec<Option<Vec<u32>>>,
    head_arg: Vec<usize>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct DecTape {
    z: Vec<f64>,
    fc_relu: Act,
    fc_bn: Option<BnCache>,
    feats: Vec<Act>,
    inputs: Vec<Act>,
    relu: Vec<Act>,
    bn: Vec<Option<BnCache>>,
    pub logits: Act,
}

impl DecTape {
    /// Activation of the last hidden decoder layer.
    pub fn penultimate(&self) -> &Act {
        self.feats.last().expect("decoder has at least one feature block")
    }
}

/// Encoder and decoder parameters plus the per-component regularizer weights.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    pub(crate) params: Vec<f64>,
    pub(crate) gamma: Vec<f64>,
    pub(crate) rng_seed: u64,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.gamma == other.gamma
            && self.rng_seed == other.rng_seed
    }
}

impl Model {
    /// Fresh model with seeded initialization; `gamma` starts at `gamma_init`.
    pub fn new(config: ModelConfig, seed: u64, gamma_init: f64) -> Result<Model, VaeError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(off, len, init) in &layout.inits {
            match init {
                Init::Const(v) => params[off..off + len].fill(v),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    params[off..off + len]
                        .iter_mut()
                        .for_each(|p| *p = dist.sample(&mut rng));
                }
            }
        }
        let gamma = vec![gamma_init; config.latent_dim];
        Ok(Model {
            config,
            layout,
            params,
            gamma,
            rng_seed: seed,
        })
    }

    /// Rebuilds a model from stored tensors (checkpoint loading).
    pub(crate) fn from_parts(
        config: ModelConfig,
        specs: &[TensorSpec],
        params: Vec<f64>,
        gamma: Vec<f64>,
        rng_seed: u64,
    ) -> Result<Model, VaeError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if layout.specs != specs || params.len() != layout.len {
            return Err(VaeError::Checkpoint("tensor layout does not match the configuration".into()));
        }
        if gamma.len() != config.latent_dim {
            return Err(VaeError::Checkpoint("gamma length does not match latent_dim".into()));
        }
        Ok(Model {
            config,
            layout,
            params,
            gamma,
            rng_seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn tensor_specs(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Raw parameter buffer, including running statistics.
    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Mask of entries updated by the optimizer.
    pub(crate) fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for s in &self.layout.specs {
            if s.trainable {
                mask[s.offset..s.offset + s.len()].fill(true);
            }
        }
        mask
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.layout.specs.iter().find(|s| s.name == name)
    }

    pub(crate) fn grid_batch(&self, grids: &[&VoxelGrid]) -> Result<Act, VaeError> {
        let d = self.config.input_dim;
        let mut x = Act::zeros(grids.len(), 1, d);
        for (i, g) in grids.iter().enumerate() {
            if g.dim() != d {
                return Err(VaeError::DimensionMismatch {
                    expected: d,
                    got: g.dim(),
                });
            }
            for (dst, &o) in x.sample_mut(i).iter_mut().zip(g.occupancy()) {
                *dst = o as u8 as f64;
            }
        }
        Ok(x)
    }

    /// Posterior of one grid (inference mode).
    pub fn encode(&self, grid: &VoxelGrid) -> Result<LatentCode, VaeError> {
        Ok(self.encode_many(&[grid])?.pop().unwrap())
    }

    pub fn encode_many(&self, grids: &[&VoxelGrid]) -> Result<Vec<LatentCode>, VaeError> {
        let j = self.config.latent_dim;
        let mut out = Vec::with_capacity(grids.len());
        for chunk in grids.chunks(16) {
            let x = self.grid_batch(chunk)?;
            let tape = self.encode_forward(&x, Mode::Eval);
            for i in 0..chunk.len() {
                out.push(LatentCode {
                    means: tape.mu[i * j..(i + 1) * j].to_vec(),
                    log_variances: tape.logvar[i * j..(i + 1) * j].to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// Occupancy probabilities for a latent sample (inference mode).
    pub fn decode(&self, z: &[f64]) -> Result<DensityGrid, VaeError> {
        let tape = self.decode_checked(z)?;
        let values = tape.logits.data.iter().map(|&v| sigmoid(v)).collect();
        Ok(DensityGrid::new(self.config.input_dim, values))
    }

    /// Flattened activation of the decoder's last hidden layer for `z`.
    pub fn decoder_features(&self, z: &[f64]) -> Result<Vec<f64>, VaeError> {
        Ok(self.decode_checked(z)?.penultimate().data.clone())
    }

    fn decode_checked(&self, z: &[f64]) -> Result<DecTape, VaeError> {
        if z.len() != self.config.latent_dim {
            return Err(VaeError::LengthMismatch {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(VaeError::NonFinite("latent sample".into()));
        }
        Ok(self.decode_forward(z, 1, Mode::Eval))
    }

    fn slice(&self, off: usize, len: usize) -> &[f64] {
        &self.params[off..off + len]
    }

    fn batch_norm(&self, x: &Act, bn: &Bn, mode: Mode) -> (Act, Option<BnCache>) {
        let g = self.slice(bn.gamma, bn.c);
        let b = self.slice(bn.beta, bn.c);
        match mode {
            Mode::Train => {
                let (y, cache) = ops::bn_forward_train(x, g, b);
                (y, Some(cache))
            }
            Mode::Eval => (
                ops::bn_forward_eval(x, g, b, self.slice(bn.mean, bn.c), self.slice(bn.var, bn.c)),
                None,
            ),
        }
    }

    pub(crate) fn encode_forward(&self, x: &Act, mode: Mode) -> EncTape {
        let dense = self.config.stack_dense;
        let mut feats = vec![x.clone()];
        let (mut inputs, mut pools, mut relu, mut bns) = (vec![], vec![], vec![], vec![]);
        for (conv, bn) in &self.layout.enc {
            let (input, args) = pool_stack(&feats, dense);
            let mut y = ops::conv_forward(
                &input,
                self.slice(conv.w, conv.w_len()),
                self.slice(conv.b, conv.cout),
                conv.cout,
                &conv.geom,
            );
            ops::relu_in_place(&mut y);
            let (h, cache) = self.batch_norm(&y, bn, mode);
            inputs.push(input);
            pools.push(args);
            relu.push(y);
            bns.push(cache);
            feats.push(h);
        }
        let (head_in, head_pools) = pool_stack(&feats, dense);
        let head = &self.layout.head;
        let out = ops::conv_forward(
            &head_in,
            self.slice(head.w, head.w_len()),
            self.slice(head.b, head.cout),
            head.cout,
            &head.geom,
        );
        let j = self.config.latent_dim;
        let n = x.n;
        let v = out.vol();
        let mut head_arg = vec![0; n * 2 * j];
        let (mut mu, mut logvar) = (vec![0.0; n * j], vec![0.0; n * j]);
        for i in 0..n {
            for (ch, chunk) in out.sample(i).chunks(v).enumerate() {
                let (arg, &best) = chunk
                    .iter()
                    .enumerate()
                    .fold((0, &f64::NEG_INFINITY), |acc, (p, val)| if *val > *acc.1 { (p, val) } else { acc });
                head_arg[i * 2 * j + ch] = arg;
                if ch < j {
                    mu[i * j + ch] = best;
                } else {
                    logvar[i * j + ch - j] = best;
                }
            }
        }
        EncTape {
            feats,
            inputs,
            pools,
            relu,
            bn: bns,
            head_in,
            head_pools,
            head_arg,
            mu,
            logvar,
        }
    }

    pub(crate) fn decode_forward(&self, z: &[f64], n: usize, mode: Mode) -> DecTape {
        let l = &self.layout;
        let j = self.config.latent_dim;
        let dense = self.config.stack_dense;
        let b = self.config.bottleneck_dim();
        let top = l.fc_bn.c;
        let mut fc = Act::zeros(n, top, b);
        for i in 0..n {
            fc.sample_mut(i).copy_from_slice(self.slice(l.fc_b, l.fc_out));
        }
        ops::gemm(n, j, l.fc_out, z, false, self.slice(l.fc_w, l.fc_out * j), true, 1.0, &mut fc.data);
        ops::relu_in_place(&mut fc);
        let (g0, fc_bn) = self.batch_norm(&fc, &l.fc_bn, mode);

        let mut feats = vec![g0];
        let (mut inputs, mut relu, mut bns) = (vec![], vec![], vec![]);
        let mut logits = None;
        for (i, conv) in l.dec.iter().enumerate() {
            let input = upsample_stack(&feats, dense);
            let mut y = ops::deconv_forward(
                &input,
                self.slice(conv.w, conv.w_len()),
                self.slice(conv.b, conv.cout),
                conv.cout,
                &conv.geom,
            );
            inputs.push(input);
            if i + 1 == l.dec.len() {
                logits = Some(y);
            } else {
                ops::relu_in_place(&mut y);
                let (h, cache) = self.batch_norm(&y, &l.dec_bn[i], mode);
                relu.push(y);
                bns.push(cache);
                feats.push(h);
            }
        }
        DecTape {
            z: z.to_vec(),
            fc_relu: fc,
            fc_bn,
            feats,
            inputs,
            relu,
            bn: bns,
            logits: logits.expect("decoder has an output layer"),
        }
    }

    /// Gradient of the loss w.r.t. the decoder given `d loss / d logits`;
    /// accumulates parameter gradients and returns `d loss / d z`.
    pub(crate) fn decode_backward(&self, tape: &DecTape, dlogits: Act, grads: &mut [f64]) -> Vec<f64> {
        let l = &self.layout;
        let dense = self.config.stack_dense;
        let n = dlogits.n;
        let mut dfeats: Vec<Act> = tape.feats.iter().map(|f| f.same_shape()).collect();
        let mut dy = dlogits;
        for i in (0..l.dec.len()).rev() {
            let conv = &l.dec[i];
            if i + 1 < l.dec.len() {
                // dy currently holds the gradient of feats[i + 1]
                let bn = &l.dec_bn[i];
                let mut d = self.bn_backward(&dy, tape.bn[i].as_ref(), bn, grads);
                ops::relu_backward(&tape.relu[i], &mut d);
                dy = d;
            }
            let (dw, rest) = split_grads(grads, conv);
            let dinput = ops::deconv_backward(
                &tape.inputs[i],
                self.slice(conv.w, conv.w_len()),
                &dy,
                &conv.geom,
                dw,
                rest,
                true,
            )
            .unwrap();
            upsample_unstack(&dinput, &tape.feats[..=i], dense, &mut dfeats);
            if i > 0 {
                dy = std::mem::replace(&mut dfeats[i], Act::zeros(0, 0, 0));
            }
        }
        let dg0 = std::mem::replace(&mut dfeats[0], Act::zeros(0, 0, 0));
        let mut dfc = self.bn_backward(&dg0, tape.fc_bn.as_ref(), &l.fc_bn, grads);
        ops::relu_backward(&tape.fc_relu, &mut dfc);

        let j = self.config.latent_dim;
        // fc: out = z W^T + b
        for i in 0..n {
            for (g, d) in grads[l.fc_b..l.fc_b + l.fc_out].iter_mut().zip(dfc.sample(i)) {
                *g += d;
            }
        }
        ops::gemm(l.fc_out, n, j, &dfc.data, true, &tape.z, false, 1.0, &mut grads[l.fc_w..l.fc_w + l.fc_out * j]);
        let mut dz = vec![0.0; n * j];
        ops::gemm(n, l.fc_out, j, &dfc.data, false, self.slice(l.fc_w, l.fc_out * j), false, 0.0, &mut dz);
        dz
    }

    /// Backward through the encoder from gradients on the means and log-variances.
    pub(crate) fn encode_backward(&self, tape: &EncTape, dmu: &[f64], dlogvar: &[f64], grads: &mut [f64]) {
        let l = &self.layout;
        let dense = self.config.stack_dense;
        let j = self.config.latent_dim;
        let n = tape.feats[0].n;
        let head = &l.head;
        let mut dhead = Act::zeros(n, 2 * j, head.geom.s_out);
        let v = dhead.vol();
        for i in 0..n {
            let ds = dhead.sample_mut(i);
            for ch in 0..2 * j {
                let g = if ch < j { dmu[i * j + ch] } else { dlogvar[i * j + ch - j] };
                ds[ch * v + tape.head_arg[i * 2 * j + ch]] = g;
            }
        }
        let mut dfeats: Vec<Act> = tape.feats.iter().map(|f| f.same_shape()).collect();
        let (dw, db) = split_grads(grads, head);
        let dhead_in = ops::conv_backward(&tape.head_in, self.slice(head.w, head.w_len()), &dhead, &head.geom, dw, db, true)
            .unwrap();
        pool_unstack(&dhead_in, &tape.feats, &tape.head_pools, dense, &mut dfeats);

        for i in (0..l.enc.len()).rev() {
            let (conv, bn) = &l.enc[i];
            let dh = std::mem::replace(&mut dfeats[i + 1], Act::zeros(0, 0, 0));
            let mut d = self.bn_backward(&dh, tape.bn[i].as_ref(), bn, grads);
            ops::relu_backward(&tape.relu[i], &mut d);
            let (dw, db) = split_grads(grads, conv);
            // the first layer only sees the input grid
            let dinput = ops::conv_backward(&tape.inputs[i], self.slice(conv.w, conv.w_len()), &d, &conv.geom, dw, db, i > 0);
            if let Some(dinput) = dinput {
                pool_unstack(&dinput, &tape.feats[..=i], &tape.pools[i], dense, &mut dfeats);
            }
        }
    }

    fn bn_backward(&self, dy: &Act, cache: Option<&BnCache>, bn: &Bn, grads: &mut [f64]) -> Act {
        let cache = cache.expect("backward requires a training-mode forward pass");
        let (dg, db) = disjoint(grads, bn.gamma, bn.c, bn.beta, bn.c);
        ops::bn_backward(dy, cache, self.slice(bn.gamma, bn.c), dg, db)
    }

    /// Batch statistics `(mean, var)` of every batch-norm layer for one
    /// training-mode pass (decoding the posterior means).
    pub(crate) fn bn_batch_stats(&self, x: &Act) -> Vec<(Vec<f64>, Vec<f64>)> {
        let enc = self.encode_forward(x, Mode::Train);
        let dec = self.decode_forward(&enc.mu, x.n, Mode::Train);
        enc.bn
            .iter()
            .chain(std::iter::once(&dec.fc_bn))
            .chain(&dec.bn)
            .map(|c| {
                let c = c.as_ref().unwrap();
                (c.mean.clone(), c.var.clone())
            })
            .collect()
    }

    pub(crate) fn set_running_stats(&mut self, stats: &[(Vec<f64>, Vec<f64>)]) {
        for (bn, (mean, var)) in self.layout.all_bn().iter().zip(stats) {
            self.params[bn.mean..bn.mean + bn.c].copy_from_slice(mean);
            self.params[bn.var..bn.var + bn.c].copy_from_slice(var);
        }
    }

    /// Latent samples for a batch with the log-variance clamp applied.
    pub(crate) fn sample_latent(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(logvar)
            .zip(noise)
            .map(|((&m, &lv), &e)| m + sigma(lv) * e)
            .collect()
    }

    /// Adds the reparameterization path of `dz` onto `dmu` and `dlogvar`.
    pub(crate) fn latent_backward(logvar: &[f64], noise: &[f64], dz: &[f64], dmu: &mut [f64], dlogvar: &mut [f64]) {
        for k in 0..dz.len() {
            dmu[k] += dz[k];
            let lv = logvar[k];
            if lv > LOGVAR_MIN && lv < LOGVAR_MAX {
                dlogvar[k] += dz[k] * noise[k] * 0.5 * sigma(lv);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn split_grads<'a>(grads: &'a mut [f64], conv: &Conv) -> (&'a mut [f64], &'a mut [f64]) {
    disjoint(grads, conv.w, conv.w_len(), conv.b, conv.cout)
}

/// Mutable windows `[a, a + la)` and `[b, b + lb)` of `buf`, with `a + la <= b`.
fn disjoint(buf: &mut [f64], a: usize, la: usize, b: usize, lb: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a + la <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + la], &mut hi[..lb])
}

/// Channel-concatenates all feature blocks max-pooled to the resolution of the
/// last one (or passes the last one through when stacking is off).
fn pool_stack(feats: &[Act], dense: bool) -> (Act, Vec<Option<Vec<u32>>>) {
    let last = feats.last().unwrap();
    if !dense {
        return (last.clone(), vec![None]);
    }
    let mut parts = Vec::with_capacity(feats.len());
    let mut args = Vec::with_capacity(feats.len());
    for f in feats {
        let factor = f.s / last.s;
        if factor == 1 {
            parts.push(f.clone());
            args.push(None);
        } else {
            let (p, a) = ops::maxpool(f, factor);
            parts.push(p);
            args.push(Some(a));
        }
    }
    let refs: Vec<&Act> = parts.iter().collect();
    (ops::concat(&refs), args)
}

/// Routes a gradient on a [`pool_stack`] output back to its sources. The
/// first block is the network input and receives nothing.
fn pool_unstack(d: &Act, feats: &[Act], args: &[Option<Vec<u32>>], dense: bool, dfeats: &mut [Act]) {
    let last = feats.len() - 1;
    if !dense {
        if last > 0 {
            ops::add_assign(&mut dfeats[last], d);
        }
        return;
    }
    let chans: Vec<usize> = feats.iter().map(|f| f.c).collect();
    for (m, part) in ops::split(d, &chans).into_iter().enumerate().skip(1) {
        match &args[m] {
            None => ops::add_assign(&mut dfeats[m], &part),
            Some(a) => ops::add_assign(&mut dfeats[m], &ops::maxpool_backward(&part, a, feats[m].s)),
        }
    }
}

/// Channel-concatenates all feature blocks upsampled to the resolution of the
/// last one.
fn upsample_stack(feats: &[Act], dense: bool) -> Act {
    let last = feats.last().unwrap();
    if !dense {
        return last.clone();
    }
    let parts: Vec<Act> = feats
        .iter()
        .map(|f| {
            let factor = last.s / f.s;
            if factor == 1 {
                f.clone()
            } else {
                ops::upsample(f, factor)
            }
        })
        .collect();
    let refs: Vec<&Act> = parts.iter().collect();
    ops::concat(&refs)
}

fn upsample_unstack(d: &Act, feats: &[Act], dense: bool, dfeats: &mut [Act]) {
    let last = feats.len() - 1;
    if !dense {
        ops::add_assign(&mut dfeats[last], d);
        return;
    }
    let chans: Vec<usize> = feats.iter().map(|f| f.c).collect();
    let s = d.s;
    for (m, part) in ops::split(d, &chans).into_iter().enumerate() {
        let factor = s / feats[m].s;
        if factor == 1 {
            ops::add_assign(&mut dfeats[m], &part);
        } else {
            ops::add_assign(&mut dfeats[m], &ops::upsample_backward(&part, factor));
        }
    }
}
