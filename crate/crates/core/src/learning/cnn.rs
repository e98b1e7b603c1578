//! One-dimensional AlexNet-style CNN over tri-axial acceleration windows.
//!
//! Everything runs in `f64` on a single flat parameter vector, which keeps the
//! optimiser and the finite-difference checks simple.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::ingest::AccelWindow;

const MAGIC: &[u8; 4] = b"ACNN";
const FORMAT_VERSION: u32 = 1;
const POOL_K: usize = 3;
const POOL_S: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub input_len: usize,
    pub channels: [usize; 5],
    pub kernels: [usize; 5],
    pub pool_after: [bool; 5],
    pub hidden: [usize; 2],
    pub dropout: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub zero_output_init: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            input_len: 60,
            channels: [16, 48, 96, 64, 64],
            kernels: [5, 3, 3, 3, 3],
            pool_after: [true, true, false, false, true],
            hidden: [256, 256],
            dropout: 0.5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            zero_output_init: true,
        }
    }
}

/// Per-axis standardisation. Axes whose std is below 1e-8 are only centred.
pub fn normalize_window(w: &AccelWindow) -> AccelWindow {
    let axes = w.axes.clone().map(|mut a| {
        let n = a.len().max(1) as f64;
        let m = a.iter().sum::<f64>() / n;
        let sd = (a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd < 1e-8 { 1.0 } else { 1.0 / sd };
        a.iter_mut().for_each(|v| *v = (*v - m) * scale);
        a
    });
    AccelWindow { axes }
}

/// Flattens a window into the network's channel-major input.
pub fn window_input(w: &AccelWindow) -> Vec<f64> {
    w.axes.iter().flat_map(|a| a.iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
    len_in: usize,
    len_out: usize,
    pool: bool,
    len_pooled: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct FcSpec {
    nin: usize,
    nout: usize,
    w_off: usize,
    b_off: usize,
    hidden: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    convs: Vec<ConvSpec>,
    fcs: Vec<FcSpec>,
    n_params: usize,
}

impl Layout {
    fn new(cfg: &CnnConfig) -> Result<Self> {
        let mut off = 0;
        let mut convs = Vec::new();
        let (mut cin, mut len) = (3, cfg.input_len);
        for i in 0..5 {
            let (cout, k) = (cfg.channels[i], cfg.kernels[i]);
            if cout == 0 || k == 0 || len + 2 < k {
                return Err(Error::Config(format!(
                    "conv layer {} does not fit its input",
                    i + 1
                )));
            }
            let len_out = len + 2 - k + 1;
            let pool = cfg.pool_after[i];
            let len_pooled = if pool {
                if len_out < POOL_K {
                    return Err(Error::Config(format!(
                        "nothing left to pool after conv layer {}",
                        i + 1
                    )));
                }
                (len_out - POOL_K) / POOL_S + 1
            } else {
                len_out
            };
            let w_off = off;
            off += cout * cin * k;
            let b_off = off;
            off += cout;
            convs.push(ConvSpec {
                cin,
                cout,
                k,
                len_in: len,
                len_out,
                pool,
                len_pooled,
                w_off,
                b_off,
            });
            cin = cout;
            len = len_pooled;
        }
        let mut fcs = Vec::new();
        let mut nin = cin * len;
        for (j, nout) in cfg.hidden.iter().copied().chain([1]).enumerate() {
            let w_off = off;
            off += nout * nin;
            let b_off = off;
            off += nout;
            fcs.push(FcSpec {
                nin,
                nout,
                w_off,
                b_off,
                hidden: j < 2,
            });
            nin = nout;
        }
        Ok(Layout {
            convs,
            fcs,
            n_params: off,
        })
    }

    fn input_size(&self) -> usize {
        3 * self.convs[0].len_in
    }

    fn tensors(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push(TensorInfo {
                name: format!("conv{}.weight", i + 1),
                shape: vec![c.cout, c.cin, c.k],
            });
            out.push(TensorInfo {
                name: format!("conv{}.bias", i + 1),
                shape: vec![c.cout],
            });
        }
        for (i, f) in self.fcs.iter().enumerate() {
            out.push(TensorInfo {
                name: format!("fc{}.weight", i + 1),
                shape: vec![f.nout, f.nin],
            });
            out.push(TensorInfo {
                name: format!("fc{}.bias", i + 1),
                shape: vec![f.nout],
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: CnnConfig,
    tensors: Vec<TensorInfo>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Default)]
struct Cache {
    /// Input to each conv layer.
    conv_in: Vec<Vec<f64>>,
    /// Post-ReLU conv outputs.
    conv_act: Vec<Vec<f64>>,
    /// Flat argmax positions of each pooled unit.
    pool_arg: Vec<Vec<usize>>,
    fc_in: Vec<Vec<f64>>,
    /// Post-ReLU hidden activations (before dropout).
    fc_act: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccelCnn {
    pub config: CnnConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    /// Validation AUC per epoch (negated loss when the split has one class).
    pub val_score: Vec<f64>,
    pub best_epoch: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit.
pub fn bce_with_logit(z: f64, y: bool) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - if y { z } else { 0.0 }
}

impl AccelCnn {
    /// He-initialised network; the output layer starts at zero unless the
    /// config says otherwise.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.n_params];
        for c in &layout.convs {
            let sd = (2.0 / (c.cin * c.k) as f64).sqrt();
            for p in &mut params[c.w_off..c.b_off] {
                *p = sd * {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                };
            }
        }
        for f in &layout.fcs {
            if !f.hidden && config.zero_output_init {
                continue;
            }
            let sd = (2.0 / f.nin as f64).sqrt();
            for p in &mut params[f.w_off..f.b_off] {
                *p = sd * {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                };
            }
        }
        Ok(AccelCnn {
            config,
            params,
            layout,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn input_size(&self) -> usize {
        self.layout.input_size()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::Shape(format!(
                "CNN input has {} values, expected {}",
                x.len(),
                self.input_size()
            )));
        }
        Ok(())
    }

    /// Eval-mode logit.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.run(&self.params, x, None, &mut Cache::default()))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.forward(x)?))
    }

    fn run(&self, p: &[f64], x: &[f64], masks: Option<&[Vec<f64>]>, cache: &mut Cache) -> f64 {
        let mut cur = x.to_vec();
        for c in &self.layout.convs {
            let mut out = vec![0.0; c.cout * c.len_out];
            for o in 0..c.cout {
                let b = p[c.b_off + o];
                let row = &mut out[o * c.len_out..(o + 1) * c.len_out];
                row.iter_mut().for_each(|v| *v = b);
                for ci in 0..c.cin {
                    let inp = &cur[ci * c.len_in..(ci + 1) * c.len_in];
                    let w = &p[c.w_off + (o * c.cin + ci) * c.k..][..c.k];
                    for (kk, &wk) in w.iter().enumerate() {
                        // input index t + kk − 1
                        let t0 = 1usize.saturating_sub(kk);
                        let t1 = (c.len_in + 1 - kk).min(c.len_out);
                        for t in t0..t1 {
                            row[t] += wk * inp[t + kk - 1];
                        }
                    }
                }
            }
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            let next = if c.pool {
                let mut pooled = vec![0.0; c.cout * c.len_pooled];
                let mut arg = vec![0usize; c.cout * c.len_pooled];
                for o in 0..c.cout {
                    for i in 0..c.len_pooled {
                        let base = o * c.len_out + i * POOL_S;
                        let mut best = base;
                        for j in 1..POOL_K {
                            if out[base + j] > out[best] {
                                best = base + j;
                            }
                        }
                        pooled[o * c.len_pooled + i] = out[best];
                        arg[o * c.len_pooled + i] = best;
                    }
                }
                cache.pool_arg.push(arg);
                pooled
            } else {
                cache.pool_arg.push(Vec::new());
                out.clone()
            };
            cache.conv_in.push(std::mem::replace(&mut cur, next));
            cache.conv_act.push(out);
        }
        for (j, f) in self.layout.fcs.iter().enumerate() {
            let mut out = p[f.b_off..f.b_off + f.nout].to_vec();
            for (o, v) in out.iter_mut().enumerate() {
                let w = &p[f.w_off + o * f.nin..][..f.nin];
                *v += w.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
            }
            if f.hidden {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                cache.fc_act.push(out.clone());
                if let Some(m) = masks {
                    out.iter_mut().zip(&m[j]).for_each(|(v, s)| *v *= s);
                }
            }
            cache.fc_in.push(std::mem::replace(&mut cur, out));
        }
        cur[0]
    }

    /// Adds `dlogit · ∂logit/∂params` into `grad`.
    fn backward(
        &self,
        p: &[f64],
        cache: &Cache,
        masks: Option<&[Vec<f64>]>,
        dlogit: f64,
        grad: &mut [f64],
    ) {
        let mut d = vec![dlogit];
        for (j, f) in self.layout.fcs.iter().enumerate().rev() {
            if f.hidden {
                if let Some(m) = masks {
                    d.iter_mut().zip(&m[j]).for_each(|(g, s)| *g *= s);
                }
                d.iter_mut().zip(&cache.fc_act[j]).for_each(|(g, a)| {
                    if *a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let x = &cache.fc_in[j];
            let mut dx = vec![0.0; f.nin];
            for (o, &g) in d.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[f.b_off + o] += g;
                let w = &p[f.w_off + o * f.nin..][..f.nin];
                let gw = &mut grad[f.w_off + o * f.nin..][..f.nin];
                for i in 0..f.nin {
                    gw[i] += g * x[i];
                    dx[i] += g * w[i];
                }
            }
            d = dx;
        }
        for (li, c) in self.layout.convs.iter().enumerate().rev() {
            let act = &cache.conv_act[li];
            let mut dout = if c.pool {
                let mut u = vec![0.0; c.cout * c.len_out];
                for (g, &a) in d.iter().zip(&cache.pool_arg[li]) {
                    u[a] += g;
                }
                u
            } else {
                d
            };
            dout.iter_mut().zip(act).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            });
            let inp = &cache.conv_in[li];
            let need_dx = li > 0;
            let mut dx = vec![0.0; if need_dx { c.cin * c.len_in } else { 0 }];
            for o in 0..c.cout {
                let drow = &dout[o * c.len_out..(o + 1) * c.len_out];
                grad[c.b_off + o] += drow.iter().sum::<f64>();
                for ci in 0..c.cin {
                    let xin = &inp[ci * c.len_in..(ci + 1) * c.len_in];
                    let widx = c.w_off + (o * c.cin + ci) * c.k;
                    for kk in 0..c.k {
                        let t0 = 1usize.saturating_sub(kk);
                        let t1 = (c.len_in + 1 - kk).min(c.len_out);
                        let mut gw = 0.0;
                        for t in t0..t1 {
                            gw += drow[t] * xin[t + kk - 1];
                        }
                        grad[widx + kk] += gw;
                        if need_dx {
                            let wk = p[widx + kk];
                            let dxr = &mut dx[ci * c.len_in..(ci + 1) * c.len_in];
                            for t in t0..t1 {
                                dxr[t + kk - 1] += wk * drow[t];
                            }
                        }
                    }
                }
            }
            d = dx;
        }
    }

    fn draw_masks(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let keep = 1.0 - self.config.dropout;
        self.layout
            .fcs
            .iter()
            .map(|f| {
                if !f.hidden {
                    return Vec::new();
                }
                (0..f.nout)
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Loss and its gradient for one example, optionally under a dropout mask
    /// drawn from `mask_seed`. Exposed for gradient checking.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        x: &[f64],
        y: bool,
        mask_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        if params.len() != self.layout.n_params {
            return Err(Error::Shape("parameter vector has the wrong length".into()));
        }
        let masks = mask_seed.map(|s| self.draw_masks(&mut ChaCha8Rng::seed_from_u64(s)));
        let mut cache = Cache::default();
        let z = self.run(params, x, masks.as_deref(), &mut cache);
        let mut grad = vec![0.0; params.len()];
        self.backward(
            params,
            &cache,
            masks.as_deref(),
            sigmoid(z) - f64::from(u8::from(y)),
            &mut grad,
        );
        Ok((bce_with_logit(z, y), grad))
    }

    /// Loss only, same conventions as [`AccelCnn::loss_and_grad`].
    pub fn loss(&self, params: &[f64], x: &[f64], y: bool, mask_seed: Option<u64>) -> Result<f64> {
        self.check_input(x)?;
        let masks = mask_seed.map(|s| self.draw_masks(&mut ChaCha8Rng::seed_from_u64(s)));
        Ok(bce_with_logit(
            self.run(params, x, masks.as_deref(), &mut Cache::default()),
            y,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            tensors: self.layout.tensors(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(4 * self.params.len());
        for &p in &self.params {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut bytes.as_slice(), &path.display().to_string())
    }

    pub fn read<R: Read>(r: &mut R, name: &str) -> Result<Self> {
        let fmt = |offset: u64, msg: &str| Error::Format {
            path: name.into(),
            offset,
            msg: msg.into(),
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io(Path::new(name), e))?;
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fmt(0, "not a CNN model file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(fmt(4, &format!("unsupported model version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| fmt(12, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| fmt(12, &e.to_string()))?;
        let layout = Layout::new(&header.config)?;
        if layout.tensors() != header.tensors {
            return Err(fmt(12, "tensor table does not match the architecture"));
        }
        let data = &bytes[12 + hlen..];
        if data.len() != 4 * layout.n_params {
            return Err(fmt(
                (12 + hlen) as u64,
                "parameter block has the wrong size",
            ));
        }
        let params: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(fmt((12 + hlen) as u64, "non-finite parameter"));
        }
        Ok(AccelCnn {
            config: header.config,
            params,
            layout,
        })
    }
}

fn val_score(model: &AccelCnn, val: &[(Vec<f64>, bool)]) -> f64 {
    let scores: Vec<f64> = val
        .iter()
        .map(|(x, _)| model.run(&model.params, x, None, &mut Cache::default()))
        .collect();
    let labels: Vec<bool> = val.iter().map(|e| e.1).collect();
    roc_auc(&scores, &labels).unwrap_or_else(|_| {
        -scores
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| bce_with_logit(z, y))
            .sum::<f64>()
            / val.len().max(1) as f64
    })
}

/// Trains with Adam on mini-batches, keeping the parameters of the epoch with
/// the best validation AUC and stopping after `patience` epochs without gain.
/// Inputs are flattened normalised windows.
pub fn cnn_train(
    train: &[(Vec<f64>, bool)],
    val: &[(Vec<f64>, bool)],
    cfg: &CnnConfig,
    seed: u64,
) -> Result<(AccelCnn, TrainTrace)> {
    if !train.iter().any(|e| e.1) || train.iter().all(|e| e.1) {
        return Err(Error::Fit("CNN training needs both classes".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config("bad batch size or dropout rate".into()));
    }
    let mut model = AccelCnn::new(cfg.clone(), seed)?;
    for (x, _) in train.iter().chain(val) {
        model.check_input(x)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66);
    let n = model.num_params();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, model.params.clone(), 0usize);
    let mut trace = TrainTrace {
        train_loss: Vec::new(),
        val_score: Vec::new(),
        best_epoch: 0,
    };
    let mut grad = vec![0.0; n];
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &train[i];
                let masks = model.draw_masks(&mut rng);
                let mut cache = Cache::default();
                let z = model.run(&model.params, x, Some(&masks), &mut cache);
                let loss = bce_with_logit(z, *y);
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "CNN loss became {loss} at epoch {epoch}, batch {b} (logit {z})"
                    )));
                }
                total += loss;
                model.backward(
                    &model.params,
                    &cache,
                    Some(&masks),
                    (sigmoid(z) - f64::from(u8::from(*y))) * inv,
                    &mut grad,
                );
            }
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..n {
                let g = grad[i];
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
                model.params[i] -= cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + 1e-8);
            }
        }
        trace.train_loss.push(total / train.len() as f64);
        let score = if val.is_empty() {
            -trace.train_loss[epoch]
        } else {
            val_score(&model, val)
        };
        trace.val_score.push(score);
        if score > best.0 {
            best = (score, model.params.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    model.params = best.1;
    trace.best_epoch = best.2;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn architecture_sizes() {
        let l = Layout::new(&CnnConfig::default()).unwrap();
        let lens: Vec<usize> = l.convs.iter().map(|c| c.len_pooled).collect();
        assert_eq!(lens, vec![28, 13, 13, 13, 6]);
        assert_eq!(l.fcs[0].nin, 384);
        let expected = 3 * 16 * 5
            + 16
            + 16 * 48 * 3
            + 48
            + 48 * 96 * 3
            + 96
            + 96 * 64 * 3
            + 64
            + 64 * 64 * 3
            + 64
            + 384 * 256
            + 256
            + 256 * 256
            + 256
            + 256
            + 1;
        assert_eq!(l.n_params, expected);
    }

    #[test]
    fn zero_output_layer_gives_even_odds() {
        let m = AccelCnn::new(CnnConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            assert_eq!(m.predict_proba(&random_input(&mut rng, 180)).unwrap(), 0.5);
        }
        assert!(m.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = CnnConfig {
            zero_output_init: false,
            ..Default::default()
        };
        let m = AccelCnn::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for case in 0..5 {
            let x = random_input(&mut rng, 180);
            let y = case % 2 == 0;
            let mask = if case >= 3 { Some(case as u64) } else { None };
            let (_, grad) = m.loss_and_grad(&m.params, &x, y, mask).unwrap();
            for _ in 0..20 {
                // Bias toward parameters that actually carry gradient.
                let i = loop {
                    let i = rng.random_range(0..m.num_params());
                    if grad[i].abs() > 1e-7 {
                        break i;
                    }
                };
                let mut p = m.params.clone();
                p[i] += eps;
                let up = m.loss(&p, &x, y, mask).unwrap();
                p[i] -= 2.0 * eps;
                let down = m.loss(&p, &x, y, mask).unwrap();
                let num = (up - down) / (2.0 * eps);
                let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn normalization() {
        let base: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = AccelWindow {
            axes: [base.clone(), vec![2.0; 60], base.clone()],
        };
        let shifted = AccelWindow {
            axes: [
                base.clone(),
                vec![2.0; 60],
                base.iter().map(|v| v + 9.8).collect(),
            ],
        };
        let n = normalize_window(&w);
        assert!(n.axes[1].iter().all(|&v| v == 0.0));
        let mean: f64 = n.axes[0].iter().sum::<f64>() / 60.0;
        let sd = (n.axes[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        let ns = normalize_window(&shifted);
        for (a, b) in n.axes[2].iter().zip(&ns.axes[2]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn learns_variance_bursts_and_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut make = |n: usize| -> Vec<(Vec<f64>, bool)> {
            (0..n)
                .map(|i| {
                    let y = i % 2 == 0;
                    let mut axes = [vec![0.0; 60], vec![0.0; 60], vec![0.0; 60]];
                    let burst = rng.random_range(10..40);
                    for a in axes.iter_mut() {
                        for (t, v) in a.iter_mut().enumerate() {
                            let amp = if y && (burst..burst + 15).contains(&t) {
                                4.0
                            } else {
                                1.0
                            };
                            *v = amp * {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                z
                            };
                        }
                    }
                    (window_input(&normalize_window(&AccelWindow { axes })), y)
                })
                .collect()
        };
        let train = make(400);
        let val = make(100);
        let cfg = CnnConfig {
            max_epochs: 15,
            patience: 5,
            ..Default::default()
        };
        let (model, trace) = cnn_train(&train, &val, &cfg, 1).unwrap();
        let best = trace.val_score[trace.best_epoch];
        assert!(best > 0.85, "val AUC {best}");
        let (again, _) = cnn_train(&train, &val, &cfg, 1).unwrap();
        assert_eq!(again.params, model.params);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cnn_model.bin");
        model.save(&p).unwrap();
        let back = AccelCnn::load(&p).unwrap();
        assert_eq!(back.num_params(), model.num_params());
        let z0 = model.forward(&val[0].0).unwrap();
        let z1 = back.forward(&val[0].0).unwrap();
        assert!((z0 - z1).abs() < 1e-3);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            AccelCnn::read(&mut bytes.as_slice(), "x"),
            Err(Error::Format { .. })
        ));
    }
}
