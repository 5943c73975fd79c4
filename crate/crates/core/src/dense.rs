//! Compact dense survival networks: a ReLU multilayer perceptron and a
//! self-normalizing network (SELU + alpha-dropout), both with two hidden
//! layers of eight units, trained on the Cox loss with manual
//! forward/backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cox::{
    apply_feature_stats, compute_feature_stats, cox_partial_likelihood_loss, FeatureStat,
    FeatureVector,
};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::stats::SurvivalRecord;

/// Fixed SELU constants from the self-normalizing network construction.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Scaled exponential linear unit.
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseKind {
    MlpRelu,
    SnnSelu,
}

/// Weights of a two-hidden-layer network with a scalar risk head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetParams {
    pub kind: DenseKind,
    /// h1 × p
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// h2 × h1
    pub w2: Mat,
    pub b2: Vec<f64>,
    /// Output head over the last hidden layer.
    pub w3: Vec<f64>,
    pub b3: f64,
    pub dropout_rate: f64,
    pub l1: f64,
    pub l2: f64,
    pub selu_lambda: f64,
    pub selu_alpha: f64,
    pub feature_stats: Vec<FeatureStat>,
}

impl DenseNetParams {
    pub fn hidden_width(&self) -> usize {
        self.w2.rows()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_stats.iter().map(|s| s.name.clone()).collect()
    }

    fn check_schema(&self, x: &FeatureVector) -> Result<()> {
        if self.feature_stats.len() != x.names.len()
            || self
                .feature_stats
                .iter()
                .zip(x.names.iter())
                .any(|(s, n)| &s.name != n)
        {
            return Err(Error::SchemaMismatch(
                "dense model schema does not match input features".into(),
            ));
        }
        Ok(())
    }
}

/// Execution mode for [`forward`]: inference is deterministic; training draws
/// dropout masks from the supplied seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Infer,
    Train { seed: u64 },
}

fn activate(kind: DenseKind, x: f64) -> f64 {
    match kind {
        DenseKind::MlpRelu => relu(x),
        DenseKind::SnnSelu => selu(x),
    }
}

fn activate_grad(kind: DenseKind, x: f64) -> f64 {
    match kind {
        DenseKind::MlpRelu => relu_grad(x),
        DenseKind::SnnSelu => selu_grad(x),
    }
}

/// Dropout behaviour per unit: kept units are scaled by `keep_scale`, dropped
/// units set to `drop_value`, then the whole layer goes through the affine
/// (`affine_scale`, `affine_shift`) — identity for standard dropout, the
/// variance-restoring correction for alpha-dropout.
#[derive(Debug, Clone, Copy)]
struct DropoutSpec {
    keep_scale: f64,
    drop_value: f64,
    affine_scale: f64,
    affine_shift: f64,
}

impl DropoutSpec {
    fn new(kind: DenseKind, rate: f64) -> Self {
        match kind {
            DenseKind::MlpRelu => Self {
                keep_scale: 1.0 / (1.0 - rate),
                drop_value: 0.0,
                affine_scale: 1.0,
                affine_shift: 0.0,
            },
            DenseKind::SnnSelu => {
                // Alpha dropout: dropped units pin to −λα, then an affine
                // correction restores zero mean / unit variance.
                let q = 1.0 - rate;
                let alpha_prime = -SELU_LAMBDA * SELU_ALPHA;
                let a = (q + alpha_prime * alpha_prime * q * rate).powf(-0.5);
                let b = -a * rate * alpha_prime;
                Self {
                    keep_scale: 1.0,
                    drop_value: alpha_prime,
                    affine_scale: a,
                    affine_shift: b,
                }
            }
        }
    }

    /// Output value of a dropped unit after the affine correction.
    #[cfg(test)]
    fn dropped_output(&self) -> f64 {
        self.affine_scale * self.drop_value + self.affine_shift
    }
}

struct ForwardCache {
    x: Vec<f64>,
    z1: Vec<f64>,
    d1: Vec<f64>,
    z2: Vec<f64>,
    d2: Vec<f64>,
    risk: f64,
    /// Keep masks per hidden layer; `None` in inference mode.
    masks: Option<(Vec<bool>, Vec<bool>)>,
}

fn forward_cached(
    params: &DenseNetParams,
    x: &[f64],
    masks: Option<(Vec<bool>, Vec<bool>)>,
) -> ForwardCache {
    let spec = DropoutSpec::new(params.kind, params.dropout_rate);
    let apply = |a: &[f64], mask: Option<&[bool]>| -> Vec<f64> {
        match mask {
            None => a.to_vec(),
            Some(mask) => a
                .iter()
                .zip(mask)
                .map(|(&v, &keep)| {
                    let pre = if keep { v * spec.keep_scale } else { spec.drop_value };
                    spec.affine_scale * pre + spec.affine_shift
                })
                .collect(),
        }
    };

    let mut z1 = params.w1.matvec(x);
    for (z, b) in z1.iter_mut().zip(&params.b1) {
        *z += b;
    }
    let a1: Vec<f64> = z1.iter().map(|&z| activate(params.kind, z)).collect();
    let d1 = apply(&a1, masks.as_ref().map(|m| m.0.as_slice()));

    let mut z2 = params.w2.matvec(&d1);
    for (z, b) in z2.iter_mut().zip(&params.b2) {
        *z += b;
    }
    let a2: Vec<f64> = z2.iter().map(|&z| activate(params.kind, z)).collect();
    let d2 = apply(&a2, masks.as_ref().map(|m| m.1.as_slice()));

    let risk = params.w3.iter().zip(&d2).map(|(w, h)| w * h).sum::<f64>() + params.b3;
    ForwardCache {
        x: x.to_vec(),
        z1,
        d1,
        z2,
        d2,
        risk,
        masks,
    }
}

fn draw_masks(rng: &mut ChaCha8Rng, rate: f64, h1: usize, h2: usize) -> (Vec<bool>, Vec<bool>) {
    let mut draw = |n: usize| -> Vec<bool> { (0..n).map(|_| rng.gen::<f64>() >= rate).collect() };
    (draw(h1), draw(h2))
}

/// Risk score and last-hidden-layer output for one patient.
///
/// Inference mode is deterministic; train mode draws dropout masks from the
/// given seed (standard dropout for the MLP, alpha-dropout for the SNN).
pub fn forward(
    params: &DenseNetParams,
    features: &FeatureVector,
    mode: ForwardMode,
) -> Result<(f64, Vec<f64>)> {
    params.check_schema(features)?;
    let x = apply_feature_stats(&params.feature_stats, &features.values);
    let masks = match mode {
        ForwardMode::Infer => None,
        ForwardMode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(draw_masks(
                &mut rng,
                params.dropout_rate,
                params.w1.rows(),
                params.w2.rows(),
            ))
        }
    };
    let cache = forward_cached(params, &x, masks);
    Ok((cache.risk, cache.d2))
}

/// Parameter gradients, same shapes as the corresponding fields.
struct Grads {
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
}

impl Grads {
    fn zeros(params: &DenseNetParams) -> Self {
        Self {
            w1: Mat::zeros(params.w1.rows(), params.w1.cols()),
            b1: vec![0.0; params.b1.len()],
            w2: Mat::zeros(params.w2.rows(), params.w2.cols()),
            b2: vec![0.0; params.b2.len()],
            w3: vec![0.0; params.w3.len()],
            b3: 0.0,
        }
    }
}

/// Reverse-mode pass for one patient; accumulates into `grads`.
fn backward(params: &DenseNetParams, cache: &ForwardCache, upstream: f64, grads: &mut Grads) {
    let spec = DropoutSpec::new(params.kind, params.dropout_rate);
    let h2 = params.w2.rows();
    let h1 = params.w1.rows();

    for j in 0..h2 {
        grads.w3[j] += upstream * cache.d2[j];
    }
    grads.b3 += upstream;
    let dd2: Vec<f64> = params.w3.iter().map(|w| upstream * w).collect();

    let dz2: Vec<f64> = (0..h2)
        .map(|j| {
            let pass = match &cache.masks {
                None => 1.0,
                Some((_, m2)) => {
                    if m2[j] {
                        spec.affine_scale * spec.keep_scale
                    } else {
                        0.0
                    }
                }
            };
            dd2[j] * pass * activate_grad(params.kind, cache.z2[j])
        })
        .collect();

    for j in 0..h2 {
        grads.b2[j] += dz2[j];
        for i in 0..h1 {
            *grads.w2.at_mut(j, i) += dz2[j] * cache.d1[i];
        }
    }
    let dd1: Vec<f64> = (0..h1)
        .map(|i| (0..h2).map(|j| dz2[j] * params.w2.at(j, i)).sum())
        .collect();

    let dz1: Vec<f64> = (0..h1)
        .map(|i| {
            let pass = match &cache.masks {
                None => 1.0,
                Some((m1, _)) => {
                    if m1[i] {
                        spec.affine_scale * spec.keep_scale
                    } else {
                        0.0
                    }
                }
            };
            dd1[i] * pass * activate_grad(params.kind, cache.z1[i])
        })
        .collect();

    for i in 0..h1 {
        grads.b1[i] += dz1[i];
        for (k, &xk) in cache.x.iter().enumerate() {
            *grads.w1.at_mut(i, k) += dz1[i] * xk;
        }
    }
}

/// Full training objective (Cox loss + L1/L2 penalties on weights) and its
/// parameter gradients over a standardized design matrix.
fn objective_and_gradients(
    params: &DenseNetParams,
    design: &[Vec<f64>],
    records: &[SurvivalRecord],
    masks: &[Option<(Vec<bool>, Vec<bool>)>],
) -> Result<(f64, Grads)> {
    let caches: Vec<ForwardCache> = design
        .iter()
        .zip(masks)
        .map(|(x, m)| forward_cached(params, x, m.clone()))
        .collect();
    let risks: Vec<f64> = caches.iter().map(|c| c.risk).collect();
    let lv = cox_partial_likelihood_loss(&risks, records, true)?;
    let g_risk = lv.gradient.expect("gradient requested");

    let mut grads = Grads::zeros(params);
    for (cache, &g) in caches.iter().zip(&g_risk) {
        backward(params, cache, g, &mut grads);
    }

    // Penalties over weight matrices; biases stay unpenalized.
    let mut penalty = 0.0;
    let mut add_penalty = |w: &[f64], g: &mut [f64]| {
        for (wi, gi) in w.iter().zip(g.iter_mut()) {
            penalty += params.l1 * wi.abs() + 0.5 * params.l2 * wi * wi;
            *gi += params.l1 * wi.signum() + params.l2 * wi;
        }
    };
    let w1 = params.w1.data().to_vec();
    let w2 = params.w2.data().to_vec();
    add_penalty(&w1, grads.w1.data_mut());
    add_penalty(&w2, grads.w2.data_mut());
    add_penalty(&params.w3, &mut grads.w3);

    Ok((lv.value + penalty, grads))
}

/// Options for [`fit_dense`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseFitConfig {
    pub kind: DenseKind,
    pub hidden: (usize, usize),
    pub dropout_rate: f64,
    pub l1: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Cohort indices held out for best-loss snapshotting.
    pub validation: Option<Vec<usize>>,
}

impl DenseFitConfig {
    pub fn new(kind: DenseKind) -> Self {
        Self {
            kind,
            hidden: (8, 8),
            dropout_rate: match kind {
                DenseKind::MlpRelu => 0.25,
                DenseKind::SnnSelu => 0.10,
            },
            l1: 0.0,
            l2: 0.0,
            learning_rate: 0.01,
            epochs: 500,
            seed: 0,
            validation: None,
        }
    }
}

/// Initialize weights: He normal for the ReLU MLP, LeCun normal for the SNN
/// (self-normalization requires sd = 1/√fan_in).
pub(crate) fn init_params(
    config: &DenseFitConfig,
    feature_stats: Vec<FeatureStat>,
) -> DenseNetParams {
    let p = feature_stats.len();
    let (h1, h2) = config.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut normal = |sd: f64| -> f64 {
        // Box-Muller.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let sd_of = |fan_in: usize| match config.kind {
        DenseKind::MlpRelu => (2.0 / fan_in as f64).sqrt(),
        DenseKind::SnnSelu => (1.0 / fan_in as f64).sqrt(),
    };
    let sd1 = sd_of(p.max(1));
    let w1 = Mat::from_fn(h1, p, |_, _| normal(sd1));
    let sd2 = sd_of(h1);
    let w2 = Mat::from_fn(h2, h1, |_, _| normal(sd2));
    let sd3 = sd_of(h2);
    let w3 = (0..h2).map(|_| normal(sd3)).collect();
    DenseNetParams {
        kind: config.kind,
        w1,
        b1: vec![0.0; h1],
        w2,
        b2: vec![0.0; h2],
        w3,
        b3: 0.0,
        dropout_rate: config.dropout_rate,
        l1: config.l1,
        l2: config.l2,
        selu_lambda: SELU_LAMBDA,
        selu_alpha: SELU_ALPHA,
        feature_stats,
    }
}

/// Train a dense survival network by full-batch gradient descent on the Cox
/// loss plus penalties. When `config.validation` names cohort indices, the
/// epoch with the best validation loss is returned instead of the last one.
pub fn fit_dense(
    features: &[FeatureVector],
    records: &[SurvivalRecord],
    config: &DenseFitConfig,
) -> Result<DenseNetParams> {
    if features.len() != records.len() || records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "fit_dense: {} feature vectors for {} records",
            features.len(),
            records.len()
        )));
    }
    let val_set: Vec<usize> = config.validation.clone().unwrap_or_default();
    if let Some(bad) = val_set.iter().find(|&&i| i >= records.len()) {
        return Err(Error::InvalidInput(format!(
            "fit_dense: validation index {bad} out of range"
        )));
    }
    let train_idx: Vec<usize> = (0..records.len()).filter(|i| !val_set.contains(i)).collect();
    let train_records: Vec<SurvivalRecord> =
        train_idx.iter().map(|&i| records[i].clone()).collect();
    if !train_records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    let train_features: Vec<FeatureVector> =
        train_idx.iter().map(|&i| features[i].clone()).collect();

    let names: Vec<String> = features[0].names.as_ref().clone();
    let stats = compute_feature_stats(&train_features, &names);
    let design: Vec<Vec<f64>> = train_features
        .iter()
        .map(|x| apply_feature_stats(&stats, &x.values))
        .collect();
    let val_design: Vec<Vec<f64>> = val_set
        .iter()
        .map(|&i| apply_feature_stats(&stats, &features[i].values))
        .collect();
    let val_records: Vec<SurvivalRecord> = val_set.iter().map(|&i| records[i].clone()).collect();
    let validate = !val_records.is_empty() && val_records.iter().any(|r| r.event);

    let mut params = init_params(config, stats);
    let mut best: Option<(f64, DenseNetParams)> = None;
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e3779b97f4a7c15));
    let (h1, h2) = (params.w1.rows(), params.w2.rows());

    for _epoch in 0..config.epochs {
        let masks: Vec<Option<(Vec<bool>, Vec<bool>)>> = design
            .iter()
            .map(|_| {
                if params.dropout_rate > 0.0 {
                    Some(draw_masks(&mut mask_rng, params.dropout_rate, h1, h2))
                } else {
                    None
                }
            })
            .collect();
        let (objective, grads) = objective_and_gradients(&params, &design, &train_records, &masks)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("fit_dense objective".into()));
        }

        let lr = config.learning_rate;
        params.w1.add_scaled(&grads.w1, -lr);
        params.w2.add_scaled(&grads.w2, -lr);
        for (w, g) in params.b1.iter_mut().zip(&grads.b1) {
            *w -= lr * g;
        }
        for (w, g) in params.b2.iter_mut().zip(&grads.b2) {
            *w -= lr * g;
        }
        for (w, g) in params.w3.iter_mut().zip(&grads.w3) {
            *w -= lr * g;
        }
        params.b3 -= lr * grads.b3;

        if validate {
            let risks: Vec<f64> = val_design
                .iter()
                .map(|x| forward_cached(&params, x, None).risk)
                .collect();
            let val_loss = cox_partial_likelihood_loss(&risks, &val_records, false)?.value;
            if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
                best = Some((val_loss, params.clone()));
            }
        }
    }

    Ok(best.map_or(params, |(_, p)| p))
}
