//! Fisher-vector encoding of trajectory descriptor sets: PCA whitening, a
//! diagonal GMM codebook, gradient statistics and normalisation.

pub mod fisher;
pub mod gmm;
pub mod pca;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fisher::{fisher_gradients, normalize_fv, FisherAccumulator, FisherVector, NormOrder};
pub use gmm::{fit_gmm, FitTrace, GmmConfig, GmmEval, GmmModel};
pub use pca::{fit_pca, PcaModel, Projector};

use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub variance_keep: f64,
    pub gmm: GmmConfig,
    /// Descriptors drawn for the codebook fit.
    pub sample_size: usize,
    /// Rows of that sample used for PCA (covariance cost grows with it).
    pub pca_sample_size: usize,
    pub alpha: f64,
    pub norm_order: NormOrder,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variance_keep: 0.95,
            gmm: GmmConfig::default(),
            sample_size: 100_000,
            pca_sample_size: 20_000,
            alpha: 0.5,
            norm_order: NormOrder::PowerThenL2,
        }
    }
}

/// Everything needed to encode a descriptor set; stored as `fisher_model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherModel {
    pub version: u32,
    pub pca: PcaModel,
    pub gmm: GmmModel,
    pub norm_order: NormOrder,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "D_prime")]
    pub d_prime: usize,
    pub seed: u64,
}

/// `m` distinct indices out of `n`, sorted, reproducible from `seed`.
pub fn sample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

impl FisherModel {
    /// Fits PCA and the GMM on (a seeded subsample of) `descriptors`.
    pub fn fit(descriptors: &[&[f32]], cfg: &EncoderConfig) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::EmptyInput("no descriptors to fit a codebook".into()));
        }
        let picked = sample_indices(descriptors.len(), cfg.sample_size, cfg.gmm.seed);
        let pca_rows = sample_indices(
            picked.len(),
            cfg.pca_sample_size,
            cfg.gmm.seed ^ 0x9E37_79B9,
        );
        let pca_data: Vec<Vec<f64>> = pca_rows
            .iter()
            .map(|&i| descriptors[picked[i]].iter().map(|&v| v as f64).collect())
            .collect();
        let pca = fit_pca(&pca_data, cfg.variance_keep)?;
        drop(pca_data);
        let proj = pca.projector();
        let whitened: Vec<Vec<f64>> = picked.iter().map(|&i| proj.apply(descriptors[i])).collect();
        let (gmm, trace) = fit_gmm(&whitened, &cfg.gmm)?;
        if !trace.converged {
            log::debug!(
                "GMM stopped after {} iterations without converging",
                trace.log_likelihood.len()
            );
        }
        Ok(FisherModel {
            version: MODEL_VERSION,
            k: gmm.components(),
            d: pca.input_dims(),
            d_prime: pca.output_dims(),
            pca,
            gmm,
            norm_order: cfg.norm_order,
            alpha: cfg.alpha,
            seed: cfg.gmm.seed,
        })
    }

    pub fn fv_dims(&self) -> usize {
        2 * self.k * self.d_prime
    }

    pub fn encoder(&self) -> Encoder {
        Encoder {
            projector: self.pca.projector(),
            eval: self.gmm.evaluator(),
            alpha: self.alpha,
            order: self.norm_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "unsupported Fisher model version {}",
                self.version
            )));
        }
        self.gmm.validate()?;
        if self.pca.output_dims() != self.gmm.dims()
            || self.k != self.gmm.components()
            || self.d != self.pca.input_dims()
            || self.d_prime != self.pca.output_dims()
        {
            return Err(Error::Schema(
                "Fisher model dimensions are inconsistent".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: FisherModel = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Ready-to-use encoder with precomputed projection and densities.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub projector: Projector,
    pub eval: GmmEval,
    pub alpha: f64,
    pub order: NormOrder,
}

impl Encoder {
    pub fn encode<'a>(
        &self,
        descriptors: impl IntoIterator<Item = &'a [f32]>,
    ) -> Result<FisherVector> {
        let mut acc = FisherAccumulator::new(&self.eval);
        let mut y = vec![0.0; self.projector.output_dims()];
        for x in descriptors {
            self.projector.apply_f32(x, &mut y);
            acc.push(&y);
        }
        normalize_fv(acc.finish()?, self.alpha, self.order)
    }

    /// Same as [`Encoder::encode`] for descriptors that are already whitened.
    pub fn encode_whitened<'a>(
        &self,
        rows: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<FisherVector> {
        let mut acc = FisherAccumulator::new(&self.eval);
        for y in rows {
            acc.push(y);
        }
        normalize_fv(acc.finish()?, self.alpha, self.order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_descriptors(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (0..d)
                    .map(|j| {
                        (z * (j as f64 + 1.0) + (i % 3) as f64 * 2.0 + 0.1 * rng.random::<f64>())
                            as f32
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn fit_encode_and_json_roundtrip() {
        let data = toy_descriptors(600, 5, 1);
        let refs: Vec<&[f32]> = data.iter().map(|v| v.as_slice()).collect();
        let cfg = EncoderConfig {
            gmm: GmmConfig {
                components: 3,
                seed: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = FisherModel::fit(&refs, &cfg).unwrap();
        model.validate().unwrap();
        let enc = model.encoder();
        let fv = enc.encode(refs[..20].iter().copied()).unwrap();
        assert_eq!(fv.values.len(), model.fv_dims());
        assert!((fv.values.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fisher_model.json");
        model.save(&p).unwrap();
        let back = FisherModel::load(&p).unwrap();
        assert_eq!(back, model);
        let text = std::fs::read_to_string(&p).unwrap();
        for key in [
            "\"pca\"",
            "\"gmm\"",
            "\"norm_order\"",
            "\"alpha\"",
            "\"K\"",
            "\"D\"",
            "\"D_prime\"",
            "\"seed\"",
            "\"version\"",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn order_and_duplication_invariance() {
        let data = toy_descriptors(500, 4, 2);
        let refs: Vec<&[f32]> = data.iter().map(|v| v.as_slice()).collect();
        let cfg = EncoderConfig {
            gmm: GmmConfig {
                components: 4,
                seed: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let enc = FisherModel::fit(&refs, &cfg).unwrap().encoder();
        let set: Vec<&[f32]> = refs[..15].to_vec();
        let a = enc.encode(set.iter().copied()).unwrap();
        let mut rev = set.clone();
        rev.reverse();
        let b = enc.encode(rev.iter().copied()).unwrap();
        let tripled: Vec<&[f32]> = set.iter().flat_map(|&r| [r, r, r]).collect();
        let c = enc.encode(tripled.iter().copied()).unwrap();
        for ((x, y), z) in a.values.iter().zip(&b.values).zip(&c.values) {
            assert!((x - y).abs() < 1e-9 && (x - z).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        let data = toy_descriptors(100, 3, 3);
        let refs: Vec<&[f32]> = data.iter().map(|v| v.as_slice()).collect();
        let cfg = EncoderConfig {
            gmm: GmmConfig {
                components: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let enc = FisherModel::fit(&refs, &cfg).unwrap().encoder();
        assert!(matches!(
            enc.encode(std::iter::empty()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn full_dimension_count() {
        // K=256 with the unreduced 426-dim descriptor.
        assert_eq!(2 * 256 * 426, 218_112);
    }
}
