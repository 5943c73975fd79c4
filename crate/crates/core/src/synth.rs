//! Synthetic cohort generation with known ground truth.
//!
//! Covariates, a hidden per-patient factor z, Weibull event times with rate
//! exp(βᵀx + signal·z), independent censoring tuned to a target rate, patch
//! bags drawn from a two-cluster mixture whose mixing proportion is
//! logistic(z), and a cell-fraction table whose inflammatory share decreases
//! with risk. The image modality carries signal exactly when `image_signal`
//! is positive, because only then does z enter the hazard.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{EmbeddingBag, Patch};
use crate::cox::FeatureVector;
use crate::error::{Error, Result};
use crate::io::CohortBundle;
use crate::stats::SurvivalRecord;

/// Ground-truth parameters of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p_binary: usize,
    pub p_continuous: usize,
    /// True coefficients, binary features first then continuous.
    pub beta: Vec<f64>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Target fraction of censored patients, in [0, 0.9].
    pub censoring_target: f64,
    /// Strength of the hidden factor z in the hazard; 0 removes all image
    /// signal.
    pub image_signal: f64,
    pub patches_min: usize,
    pub patches_max: usize,
    pub d_in: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Small three-covariate cohort used throughout tests: β = (1, −0.5, 0)
    /// over one binary and two continuous features.
    pub fn default_cohort(n: usize, seed: u64) -> Self {
        Self {
            n,
            p_binary: 1,
            p_continuous: 2,
            beta: vec![1.0, -0.5, 0.0],
            weibull_shape: 1.5,
            weibull_scale: 12.0,
            censoring_target: 0.3,
            image_signal: 1.0,
            patches_min: 8,
            patches_max: 16,
            d_in: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput("synthetic cohort needs n ≥ 2".into()));
        }
        if self.beta.len() != self.p_binary + self.p_continuous {
            return Err(Error::InvalidInput(format!(
                "beta has {} entries for {} features",
                self.beta.len(),
                self.p_binary + self.p_continuous
            )));
        }
        if !(0.0..=0.9).contains(&self.censoring_target) {
            return Err(Error::InvalidInput(format!(
                "censoring target {} outside [0, 0.9]",
                self.censoring_target
            )));
        }
        if self.image_signal < 0.0 {
            return Err(Error::InvalidInput("image_signal must be ≥ 0".into()));
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return Err(Error::InvalidInput(format!(
                "invalid patch range {}..{}",
                self.patches_min, self.patches_max
            )));
        }
        if self.d_in == 0 || self.weibull_shape <= 0.0 || self.weibull_scale <= 0.0 {
            return Err(Error::InvalidInput("degenerate synthetic spec".into()));
        }
        Ok(())
    }
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generate a cohort bundle; a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<CohortBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.p_binary + spec.p_continuous;

    let names: Arc<Vec<String>> = Arc::new(
        (0..spec.p_binary)
            .map(|j| format!("mut_{:02}", j + 1))
            .chain((0..spec.p_continuous).map(|j| format!("cov_{:02}", j + 1)))
            .collect(),
    );
    let id_width = spec.n.to_string().len().max(3);

    // Direction of the "risk" patch cluster, fixed per cohort.
    let risk_direction: Vec<f64> = {
        let raw: Vec<f64> = (0..spec.d_in).map(|_| std_normal(&mut rng)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        raw.iter().map(|v| 2.0 * v / norm).collect()
    };

    let mut features = Vec::with_capacity(spec.n);
    let mut zs = Vec::with_capacity(spec.n);
    let mut risks = Vec::with_capacity(spec.n);
    let mut event_times = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut x = Vec::with_capacity(p);
        for _ in 0..spec.p_binary {
            x.push(f64::from(rng.gen_bool(0.3)));
        }
        for _ in 0..spec.p_continuous {
            x.push(std_normal(&mut rng));
        }
        let z = std_normal(&mut rng);
        let r: f64 = x.iter().zip(&spec.beta).map(|(v, b)| v * b).sum::<f64>()
            + spec.image_signal * z;
        // Weibull with hazard scaled by exp(r): T = λ·(E/exp(r))^(1/k).
        let e: f64 = -rng.gen_range(f64::EPSILON..1.0_f64).ln();
        let t = spec.weibull_scale * (e / r.exp()).powf(1.0 / spec.weibull_shape);
        features.push(FeatureVector::new(x, names.clone())?);
        zs.push(z);
        risks.push(r);
        event_times.push(t.max(1e-6));
    }

    // Censoring: scale a fixed exponential draw so the realized censored
    // fraction matches the target; bisection over the scale.
    let censor_base: Vec<f64> = (0..spec.n)
        .map(|_| -rng.gen_range(f64::EPSILON..1.0_f64).ln())
        .collect();
    let records: Vec<SurvivalRecord> = if spec.censoring_target == 0.0 {
        event_times
            .iter()
            .enumerate()
            .map(|(i, &t)| SurvivalRecord::new(format!("p{:0id_width$}", i + 1), t, true))
            .collect::<Result<_>>()?
    } else {
        let censored_fraction = |q: f64| -> f64 {
            censor_base
                .iter()
                .zip(&event_times)
                .filter(|(c, t)| q * **c < **t)
                .count() as f64
                / spec.n as f64
        };
        let mut lo = 1e-9_f64;
        let mut hi = 1e9_f64;
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if censored_fraction(mid) > spec.censoring_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = (lo * hi).sqrt();
        event_times
            .iter()
            .zip(&censor_base)
            .enumerate()
            .map(|(i, (&t, &c))| {
                let censor_time = q * c;
                let (time, event) = if censor_time < t {
                    (censor_time, false)
                } else {
                    (t, true)
                };
                SurvivalRecord::new(format!("p{:0id_width$}", i + 1), time.max(1e-6), event)
            })
            .collect::<Result<_>>()?
    };

    // Patch bags: mixture of a background cluster at the origin and a risk
    // cluster along `risk_direction`, mixing proportion logistic(z).
    let mut bags = Vec::with_capacity(spec.n);
    for (i, &z) in zs.iter().enumerate() {
        let n_patches = rng.gen_range(spec.patches_min..=spec.patches_max);
        let pi = logistic(z);
        let patches = (0..n_patches)
            .map(|k| {
                let in_risk_cluster = rng.gen_bool(pi);
                let vector: Vec<f64> = (0..spec.d_in)
                    .map(|dim| {
                        let center = if in_risk_cluster {
                            risk_direction[dim]
                        } else {
                            0.0
                        };
                        center + std_normal(&mut rng)
                    })
                    .collect();
                Patch {
                    patch_id: format!("{}_{k:03}", records[i].patient_id),
                    vector,
                    slide_coords: Some((
                        rng.gen_range(0..50_000i64),
                        rng.gen_range(0..50_000i64),
                    )),
                }
            })
            .collect();
        bags.push(EmbeddingBag::new(records[i].patient_id.clone(), patches)?);
    }

    // Cell fractions: softmax over per-category logits; the inflammatory
    // share decreases with standardized risk, the normal share rises.
    let risk_mean = risks.iter().sum::<f64>() / spec.n as f64;
    let risk_sd = (risks.iter().map(|r| (r - risk_mean).powi(2)).sum::<f64>() / spec.n as f64)
        .sqrt()
        .max(1e-9);
    let base_logits = [1.0, 0.3, 0.8, 0.2, -0.5, -1.0];
    let cell_fractions: Vec<[f64; 6]> = risks
        .iter()
        .map(|r| {
            let r_std = (r - risk_mean) / risk_sd;
            let mut logits = base_logits;
            logits[2] -= 0.8 * r_std; // inflammatory
            logits[1] += 0.4 * r_std; // normal
            for l in logits.iter_mut() {
                *l += 0.15 * std_normal(&mut rng);
            }
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps = logits.map(|l| (l - max).exp());
            let sum: f64 = exps.iter().sum();
            exps.map(|e| e / sum)
        })
        .collect();

    let site: Vec<String> = (0..spec.n)
        .map(|_| {
            if rng.gen_bool(0.45) {
                "site_b".to_string()
            } else {
                "site_a".to_string()
            }
        })
        .collect();

    let bundle = CohortBundle {
        records,
        features,
        bags,
        site: Some(site),
        cell_fractions: Some(cell_fractions),
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt().max(1e-12)
}
