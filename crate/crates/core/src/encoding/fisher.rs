//! Fisher-vector gradients with respect to GMM means and standard deviations,
//! and their power/L2 normalisation.

use serde::{Deserialize, Serialize};

use super::gmm::{GmmEval, GmmModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    #[default]
    PowerThenL2,
    L2ThenPower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    /// `K·D′` mean gradients followed by `K·D′` deviation gradients.
    pub values: Vec<f64>,
    pub normalized: bool,
}

/// Accumulates the normalised gradient statistics of a descriptor set.
#[derive(Debug, Clone)]
pub struct FisherAccumulator<'a> {
    ev: &'a GmmEval,
    gamma: Vec<f64>,
    g_mu: Vec<f64>,
    g_sigma: Vec<f64>,
    count: usize,
}

impl<'a> FisherAccumulator<'a> {
    pub fn new(ev: &'a GmmEval) -> Self {
        FisherAccumulator {
            ev,
            gamma: vec![0.0; ev.k],
            g_mu: vec![0.0; ev.k * ev.d],
            g_sigma: vec![0.0; ev.k * ev.d],
            count: 0,
        }
    }

    /// Adds one whitened descriptor.
    pub fn push(&mut self, x: &[f64]) {
        let (k, d) = (self.ev.k, self.ev.d);
        self.ev.posteriors_into(x, &mut self.gamma);
        for i in 0..k {
            let g = self.gamma[i];
            if g < 1e-300 {
                continue;
            }
            let mu = &self.ev.means[i * d..(i + 1) * d];
            let isd = &self.ev.inv_sd[i * d..(i + 1) * d];
            let gm = &mut self.g_mu[i * d..(i + 1) * d];
            let gs = &mut self.g_sigma[i * d..(i + 1) * d];
            for j in 0..d {
                let z = (x[j] - mu[j]) * isd[j];
                gm[j] += g * z;
                gs[j] += g * (z * z - 1.0);
            }
        }
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Unnormalised gradient vector.
    pub fn finish(self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyInput(
                "Fisher vector of an empty descriptor set".into(),
            ));
        }
        let (k, d) = (self.ev.k, self.ev.d);
        let t = self.count as f64;
        let mut out = self.g_mu;
        out.extend(self.g_sigma);
        for i in 0..k {
            let a = 1.0 / (t * self.ev.sqrt_w[i]);
            let b = 1.0 / (t * self.ev.sqrt_w[i] * std::f64::consts::SQRT_2);
            for j in 0..d {
                out[i * d + j] *= a;
                out[k * d + i * d + j] *= b;
            }
        }
        Ok(out)
    }
}

/// Raw (unnormalised) Fisher vector of already-whitened descriptors.
pub fn fisher_gradients(gmm: &GmmModel, whitened: &[Vec<f64>]) -> Result<Vec<f64>> {
    let ev = gmm.evaluator();
    let mut acc = FisherAccumulator::new(&ev);
    for x in whitened {
        if x.len() != gmm.dims() {
            return Err(Error::Shape(format!(
                "descriptor has {} dims, GMM {}",
                x.len(),
                gmm.dims()
            )));
        }
        acc.push(x);
    }
    acc.finish()
}

fn power(v: &mut [f64], alpha: f64) {
    if alpha != 1.0 {
        for z in v.iter_mut() {
            *z = z.signum() * z.abs().powf(alpha);
        }
    }
}

fn l2(v: &mut [f64]) -> Result<()> {
    let n = v.iter().map(|z| z * z).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalise a zero vector".into()));
    }
    v.iter_mut().for_each(|z| *z /= n);
    Ok(())
}

/// Signed power then L2 by default. With [`NormOrder::L2ThenPower`] the result
/// is generally not unit length and is flagged as such.
pub fn normalize_fv(mut v: Vec<f64>, alpha: f64, order: NormOrder) -> Result<FisherVector> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!(
            "power exponent {alpha} outside (0, 1]"
        )));
    }
    match order {
        NormOrder::PowerThenL2 => {
            power(&mut v, alpha);
            l2(&mut v)?;
            Ok(FisherVector {
                values: v,
                normalized: true,
            })
        }
        NormOrder::L2ThenPower => {
            l2(&mut v)?;
            power(&mut v, alpha);
            Ok(FisherVector {
                values: v,
                normalized: alpha == 1.0,
            })
        }
    }
}
