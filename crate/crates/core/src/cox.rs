//! Negative log partial likelihood loss and the L1/L2-regularized linear Cox
//! proportional hazards model.
//!
//! The loss is shared by every risk model in the crate (linear, dense,
//! transformer, fusion head): for risk scores h and the Breslow risk sets
//! R(T_i),
//!
//! ```text
//! loss = −(1/N_event) Σ_{i: event} ( h_i − log Σ_{j ∈ R(T_i)} exp(h_j) )
//! ```
//!
//! computed with max-subtraction so large scores stay finite. The linear
//! model is fitted by full-batch proximal gradient descent with backtracking,
//! which produces exact zeros under L1 and is robust on p > n fold slices.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{fold_ci, t_test_one_sample, RiskSetIndex, SurvivalRecord};

/// Dense covariate vector plus its cohort-wide feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Arc<Vec<String>>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, names: Arc<Vec<String>>) -> Result<Self> {
        if values.len() != names.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} values for {} feature names",
                values.len(),
                names.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite feature value {v}")));
        }
        Ok(Self { values, names })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// All training values in {0, 1}; left untouched by standardization.
    Binary,
    /// z-scored with training-fold mean and sd.
    Continuous,
    /// Passed through untouched (fusion heads take risk scores raw).
    Raw,
}

/// Per-feature standardization statistics from the training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    pub kind: FeatureKind,
    pub mean: f64,
    pub sd: f64,
    /// Constant in the training fold; excluded from the fit (beta pinned 0).
    pub dropped: bool,
}

/// Fitted linear Cox model: coefficients plus the standardization that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxParams {
    pub beta: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
    pub feature_stats: Vec<FeatureStat>,
}

impl CoxParams {
    pub fn feature_names(&self) -> Vec<String> {
        self.feature_stats.iter().map(|s| s.name.clone()).collect()
    }

    pub fn dropped_features(&self) -> Vec<&str> {
        self.feature_stats
            .iter()
            .filter(|s| s.dropped)
            .map(|s| s.name.as_str())
            .collect()
    }

    fn check_schema(&self, x: &FeatureVector) -> Result<()> {
        if self.feature_stats.len() != x.names.len()
            || self
                .feature_stats
                .iter()
                .zip(x.names.iter())
                .any(|(s, n)| &s.name != n)
        {
            return Err(Error::SchemaMismatch(format!(
                "model fitted on [{}] but given [{}]",
                self.feature_names().join(","),
                x.names.join(",")
            )));
        }
        Ok(())
    }

    /// Apply the training-fold standardization to a raw covariate vector.
    /// Dropped features map to 0.
    pub fn standardize(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_schema(x)?;
        Ok(apply_feature_stats(&self.feature_stats, &x.values))
    }
}

/// Standardize one raw covariate vector under the given per-feature stats.
pub(crate) fn apply_feature_stats(stats: &[FeatureStat], values: &[f64]) -> Vec<f64> {
    stats
        .iter()
        .zip(values)
        .map(|(s, &v)| match (s.dropped, s.kind) {
            (true, _) => 0.0,
            (false, FeatureKind::Binary) | (false, FeatureKind::Raw) => v,
            (false, FeatureKind::Continuous) => (v - s.mean) / s.sd,
        })
        .collect()
}

/// Loss value with an optional gradient with respect to the risk scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Cox negative log partial likelihood of `risks` under `records`.
///
/// Breslow ties: events at the same time share the risk set
/// R(T) = { j : T_j ≥ T }. Errors with [`Error::NoEvents`] when every record
/// is censored.
pub fn cox_partial_likelihood_loss(
    risks: &[f64],
    records: &[SurvivalRecord],
    want_gradient: bool,
) -> Result<LossValue> {
    if records.is_empty() || risks.len() != records.len() {
        return Err(Error::InvalidInput(format!(
            "loss: {} risks for {} records",
            risks.len(),
            records.len()
        )));
    }
    if risks.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("risk score in Cox loss".into()));
    }
    let index = RiskSetIndex::build(records);
    let n_event = index.n_events();
    if n_event == 0 {
        return Err(Error::NoEvents);
    }

    let m = risks.iter().cloned().fold(f64::MIN, f64::max);
    let order = index.order_desc();
    let times = index.event_times();

    // Scaled risk-set denominators Σ exp(h_j − m), one per distinct event
    // time, built by extending a pointer down the time-descending order.
    let mut denom = vec![0.0; times.len()];
    let mut ptr = 0usize;
    let mut running = 0.0;
    for k in (0..times.len()).rev() {
        let need = index.at_risk(k).len();
        while ptr < need {
            running += (risks[order[ptr]] - m).exp();
            ptr += 1;
        }
        denom[k] = running;
    }

    let mut event_score_sum = 0.0;
    let mut log_denom_sum = 0.0;
    for k in 0..times.len() {
        let d = index.events_at(k).len() as f64;
        for &i in index.events_at(k) {
            event_score_sum += risks[i];
        }
        log_denom_sum += d * (m + denom[k].ln());
    }
    let value = -(event_score_sum - log_denom_sum) / n_event as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("Cox loss value".into()));
    }

    let gradient = if want_gradient {
        // prefix[k] = Σ_{t ≤ event_times[k]} d_t / denom_t (scaled by e^m
        // consistently with exp(h_j − m) below).
        let mut prefix = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        for k in 0..times.len() {
            acc += index.events_at(k).len() as f64 / denom[k];
            prefix.push(acc);
        }
        let inv_n = 1.0 / n_event as f64;
        let grad = records
            .iter()
            .zip(risks)
            .map(|(r, &h)| {
                let k = times.partition_point(|&t| t <= r.time);
                let cum = if k == 0 { 0.0 } else { prefix[k - 1] };
                -inv_n * ((r.event as u8 as f64) - (h - m).exp() * cum)
            })
            .collect();
        Some(grad)
    } else {
        None
    };

    Ok(LossValue { value, gradient })
}

/// Options for [`fit_cox`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitConfig {
    pub l1: f64,
    pub l2: f64,
    pub max_iter: usize,
    /// Relative objective-change convergence threshold.
    pub tol: f64,
    /// z-score continuous features with training statistics. Disabled for
    /// fusion heads, whose inputs are risk scores or already-standardized
    /// covariates.
    pub standardize: bool,
}

impl Default for CoxFitConfig {
    fn default() -> Self {
        Self {
            l1: 0.0,
            l2: 0.0,
            max_iter: 10_000,
            tol: 1e-7,
            standardize: true,
        }
    }
}

impl CoxFitConfig {
    pub fn with_penalties(l1: f64, l2: f64) -> Self {
        Self {
            l1,
            l2,
            ..Self::default()
        }
    }
}

/// Fit the linear Cox model by proximal gradient descent with backtracking
/// line search (Armijo, halving). Continuous features are z-scored with
/// training statistics; binary features stay 0/1; constant columns are
/// dropped and flagged in the returned parameters.
pub fn fit_cox(
    features: &[FeatureVector],
    records: &[SurvivalRecord],
    config: &CoxFitConfig,
) -> Result<CoxParams> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "fit_cox: needs at least 2 records, got {}",
            records.len()
        )));
    }
    if features.len() != records.len() {
        return Err(Error::InvalidInput(format!(
            "fit_cox: {} feature vectors for {} records",
            features.len(),
            records.len()
        )));
    }
    if config.l1 < 0.0 || config.l2 < 0.0 {
        return Err(Error::InvalidInput("fit_cox: negative penalty".into()));
    }
    let names = features[0].names.clone();
    for x in features {
        if x.names != names {
            return Err(Error::SchemaMismatch(
                "fit_cox: inconsistent feature schemas in cohort".into(),
            ));
        }
    }
    if !records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }

    let n = records.len();
    let p = names.len();
    let feature_stats = if config.standardize {
        compute_feature_stats(features, &names)
    } else {
        raw_feature_stats(features, &names)
    };

    // Standardized design matrix restricted to non-dropped columns.
    let active: Vec<usize> = (0..p).filter(|&j| !feature_stats[j].dropped).collect();
    let design: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            active
                .iter()
                .map(|&j| match feature_stats[j].kind {
                    FeatureKind::Binary | FeatureKind::Raw => x.values[j],
                    FeatureKind::Continuous => {
                        (x.values[j] - feature_stats[j].mean) / feature_stats[j].sd
                    }
                })
                .collect()
        })
        .collect();

    let beta_active = proximal_descent(&design, records, n, active.len(), config)?;

    let mut beta = vec![0.0; p];
    for (slot, &j) in active.iter().enumerate() {
        beta[j] = beta_active[slot];
    }
    Ok(CoxParams {
        beta,
        l1: config.l1,
        l2: config.l2,
        feature_stats,
    })
}

/// Identity transform stats: constants still dropped, everything else raw.
pub(crate) fn raw_feature_stats(features: &[FeatureVector], names: &[String]) -> Vec<FeatureStat> {
    (0..names.len())
        .map(|j| {
            let lo = features.iter().map(|x| x.values[j]).fold(f64::MAX, f64::min);
            let hi = features.iter().map(|x| x.values[j]).fold(f64::MIN, f64::max);
            FeatureStat {
                name: names[j].clone(),
                kind: FeatureKind::Raw,
                mean: 0.0,
                sd: 1.0,
                dropped: lo == hi,
            }
        })
        .collect()
}

pub(crate) fn compute_feature_stats(
    features: &[FeatureVector],
    names: &[String],
) -> Vec<FeatureStat> {
    let n = features.len() as f64;
    (0..names.len())
        .map(|j| {
            let col: Vec<f64> = features.iter().map(|x| x.values[j]).collect();
            let lo = col.iter().cloned().fold(f64::MAX, f64::min);
            let hi = col.iter().cloned().fold(f64::MIN, f64::max);
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            FeatureStat {
                name: names[j].clone(),
                kind: if binary {
                    FeatureKind::Binary
                } else {
                    FeatureKind::Continuous
                },
                mean,
                sd: if sd > 0.0 { sd } else { 1.0 },
                dropped: lo == hi,
            }
        })
        .collect()
}

fn proximal_descent(
    design: &[Vec<f64>],
    records: &[SurvivalRecord],
    n: usize,
    p: usize,
    config: &CoxFitConfig,
) -> Result<Vec<f64>> {
    let mut beta = vec![0.0; p];
    if p == 0 || config.max_iter == 0 {
        return Ok(beta);
    }

    let risks_of = |b: &[f64]| -> Vec<f64> {
        design
            .iter()
            .map(|row| row.iter().zip(b).map(|(x, w)| x * w).sum())
            .collect()
    };
    let smooth = |b: &[f64]| -> Result<f64> {
        let loss = cox_partial_likelihood_loss(&risks_of(b), records, false)?.value;
        Ok(loss + 0.5 * config.l2 * b.iter().map(|w| w * w).sum::<f64>())
    };
    let objective = |b: &[f64], f: f64| f + config.l1 * b.iter().map(|w| w.abs()).sum::<f64>();

    let mut f_cur = smooth(&beta)?;
    let mut obj_cur = objective(&beta, f_cur);
    let mut step = 1.0;

    for _ in 0..config.max_iter {
        // ∇f(β) = Xᵀ (dloss/dh) + l2 β
        let lv = cox_partial_likelihood_loss(&risks_of(&beta), records, true)?;
        let g_h = lv.gradient.expect("gradient requested");
        let mut grad = vec![0.0; p];
        for i in 0..n {
            let gi = g_h[i];
            for (gj, &xij) in grad.iter_mut().zip(&design[i]) {
                *gj += gi * xij;
            }
        }
        for (gj, &bj) in grad.iter_mut().zip(&beta) {
            *gj += config.l2 * bj;
        }

        // Backtracking on the proximal step.
        let mut next;
        let mut f_next;
        loop {
            next = soft_threshold_step(&beta, &grad, step, config.l1);
            f_next = smooth(&next)?;
            let mut quad = f_cur;
            let mut dist2 = 0.0;
            for j in 0..p {
                let d = next[j] - beta[j];
                quad += grad[j] * d;
                dist2 += d * d;
            }
            quad += dist2 / (2.0 * step);
            if f_next <= quad + 1e-12 || step < 1e-12 {
                break;
            }
            step *= 0.5;
        }

        let obj_next = objective(&next, f_next);
        if !obj_next.is_finite() {
            return Err(Error::NonFinite("fit_cox objective diverged".into()));
        }
        let rel_change = (obj_cur - obj_next).abs() / obj_cur.abs().max(1.0);
        beta = next;
        f_cur = f_next;
        obj_cur = obj_next;
        step = (step * 1.25).min(1e6);
        if rel_change < config.tol {
            break;
        }
    }
    Ok(beta)
}

fn soft_threshold_step(beta: &[f64], grad: &[f64], step: f64, l1: f64) -> Vec<f64> {
    beta.iter()
        .zip(grad)
        .map(|(&b, &g)| {
            let z = b - step * g;
            let thr = step * l1;
            if z > thr {
                z - thr
            } else if z < -thr {
                z + thr
            } else {
                0.0
            }
        })
        .collect()
}

/// Linear risk score βᵀ·standardize(x).
pub fn predict_risk(params: &CoxParams, features: &FeatureVector) -> Result<f64> {
    let z = params.standardize(features)?;
    Ok(z.iter().zip(&params.beta).map(|(v, b)| v * b).sum())
}

/// One row of the per-feature importance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStat {
    pub feature: String,
    pub mean_coefficient: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// Per-feature mean coefficient across folds with a 95% t-interval and a
/// one-sample t-test against zero, sorted by |mean| descending.
pub fn coefficient_importance(per_fold: &[CoxParams]) -> Result<Vec<CoefficientStat>> {
    if per_fold.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "coefficient_importance: needs at least 2 folds, got {}",
            per_fold.len()
        )));
    }
    let names = per_fold[0].feature_names();
    for params in per_fold {
        if params.feature_names() != names {
            return Err(Error::SchemaMismatch(
                "coefficient_importance: folds have different schemas".into(),
            ));
        }
    }
    let mut rows = Vec::with_capacity(names.len());
    for (j, feature) in names.into_iter().enumerate() {
        let values: Vec<f64> = per_fold.iter().map(|p| p.beta[j]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (ci_low, ci_high) = fold_ci(&values, 0.95)?;
        let p_value = t_test_one_sample(&values, 0.0)?.p_value;
        rows.push(CoefficientStat {
            feature,
            mean_coefficient: mean,
            ci_low,
            ci_high,
            p_value,
        });
    }
    rows.sort_by(|a, b| {
        b.mean_coefficient
            .abs()
            .partial_cmp(&a.mean_coefficient.abs())
            .unwrap()
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema(names: &[&str]) -> Arc<Vec<String>> {
        Arc::new(names.iter().map(|s| s.to_string()).collect())
    }

    fn fv(values: &[f64], names: &Arc<Vec<String>>) -> FeatureVector {
        FeatureVector::new(values.to_vec(), names.clone()).unwrap()
    }

    #[test]
    fn loss_single_event_is_zero() {
        let records = vec![rec("a", 3.0, true)];
        for h in [-2.0, 0.0, 5.5] {
            let lv = cox_partial_likelihood_loss(&[h], &records, false).unwrap();
            assert!(lv.value.abs() < 1e-12);
        }
    }

    #[test]
    fn loss_two_event_hand_example() {
        let records = vec![rec("a", 1.0, true), rec("b", 2.0, true)];
        let lv = cox_partial_likelihood_loss(&[0.0, 0.0], &records, true).unwrap();
        assert!((lv.value - 0.5 * 2.0_f64.ln()).abs() < 1e-12);
        let g = lv.gradient.unwrap();
        assert!((g[0] + 0.25).abs() < 1e-9);
        assert!((g[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn loss_requires_events() {
        let records = vec![rec("a", 1.0, false), rec("b", 2.0, false)];
        assert!(matches!(
            cox_partial_likelihood_loss(&[0.1, 0.2], &records, false),
            Err(Error::NoEvents)
        ));
    }

    #[test]
    fn loss_shift_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let records: Vec<_> = (0..12)
            .map(|i| rec(&format!("p{i}"), rng.gen_range(0.1..10.0), rng.gen_bool(0.6)))
            .collect();
        let risks: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = cox_partial_likelihood_loss(&risks, &records, false).unwrap().value;

        let shifted: Vec<f64> = risks.iter().map(|h| h + 13.7).collect();
        let s = cox_partial_likelihood_loss(&shifted, &records, false).unwrap().value;
        assert!((base - s).abs() < 1e-10, "shift changed loss by {}", (base - s).abs());

        let mut perm: Vec<usize> = (0..12).collect();
        for i in (1..12).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let rec_p: Vec<_> = perm.iter().map(|&i| records[i].clone()).collect();
        let risk_p: Vec<f64> = perm.iter().map(|&i| risks[i]).collect();
        let p = cox_partial_likelihood_loss(&risk_p, &rec_p, false).unwrap().value;
        assert!((base - p).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let n = rng.gen_range(2..=20);
            let records: Vec<_> = (0..n)
                .map(|i| rec(&format!("p{i}"), rng.gen_range(0.1..8.0), rng.gen_bool(0.5)))
                .collect();
            if !records.iter().any(|r| r.event) {
                continue;
            }
            let risks: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let lv = cox_partial_likelihood_loss(&risks, &records, true).unwrap();
            let grad = lv.gradient.unwrap();
            let eps = 1e-6;
            for k in 0..n {
                let mut plus = risks.clone();
                plus[k] += eps;
                let mut minus = risks.clone();
                minus[k] -= eps;
                let fd = (cox_partial_likelihood_loss(&plus, &records, false).unwrap().value
                    - cox_partial_likelihood_loss(&minus, &records, false).unwrap().value)
                    / (2.0 * eps);
                let denom = fd.abs().max(1e-8);
                assert!(
                    (grad[k] - fd).abs() / denom < 1e-5,
                    "n={n} k={k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn fit_zero_iterations_gives_zero_beta() {
        let names = schema(&["x", "y"]);
        let features = vec![fv(&[1.0, 0.3], &names), fv(&[0.0, -0.5], &names), fv(&[1.0, 2.0], &names)];
        let records = vec![rec("a", 1.0, true), rec("b", 2.0, true), rec("c", 3.0, false)];
        let cfg = CoxFitConfig {
            max_iter: 0,
            ..Default::default()
        };
        let params = fit_cox(&features, &records, &cfg).unwrap();
        assert!(params.beta.iter().all(|&b| b == 0.0));
        let r0 = predict_risk(&params, &features[0]).unwrap();
        let r1 = predict_risk(&params, &features[1]).unwrap();
        assert_eq!(r0, r1);
    }

    /// Small reproducible cohort with a real signal in the first column.
    fn toy_cohort(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<SurvivalRecord>, Arc<Vec<String>>) {
        let names = schema(&["x1", "x2", "mut_a"]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let x1: f64 = rng.gen_range(-1.5..1.5);
            let x2: f64 = rng.gen_range(-1.5..1.5);
            let m = f64::from(rng.gen_bool(0.4));
            let risk = 1.2 * x1 - 0.4 * m;
            let u: f64 = rng.gen_range(0.0001..1.0);
            let t = (-u.ln() / risk.exp()).max(1e-3);
            let event = rng.gen_bool(0.75);
            features.push(fv(&[x1, x2, m], &names));
            records.push(rec(&format!("p{i}"), t, event));
        }
        (features, records, names)
    }

    #[test]
    fn ridge_never_grows_norm() {
        let (features, records, _) = toy_cohort(60, 3);
        let mut prev_norm = f64::MAX;
        for l2 in [0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64] {
            let params = fit_cox(
                &features,
                &records,
                &CoxFitConfig::with_penalties(0.0, l2),
            )
            .unwrap();
            let norm = params.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(
                norm <= prev_norm + 1e-6,
                "l2={l2}: norm {norm} grew past {prev_norm}"
            );
            prev_norm = norm;
        }
    }

    #[test]
    fn large_l1_zeroes_everything_exactly() {
        let (features, records, _) = toy_cohort(50, 11);
        let params = fit_cox(
            &features,
            &records,
            &CoxFitConfig::with_penalties(50.0, 0.0),
        )
        .unwrap();
        assert!(params.beta.iter().all(|&b| b == 0.0), "beta = {:?}", params.beta);
    }

    #[test]
    fn constant_column_dropped_with_flag() {
        let names = schema(&["x", "const_col"]);
        let features = vec![
            fv(&[0.1, 3.0], &names),
            fv(&[-0.7, 3.0], &names),
            fv(&[1.3, 3.0], &names),
            fv(&[0.4, 3.0], &names),
        ];
        let records = vec![
            rec("a", 1.0, true),
            rec("b", 2.0, false),
            rec("c", 3.0, true),
            rec("d", 4.0, true),
        ];
        let params = fit_cox(&features, &records, &CoxFitConfig::default()).unwrap();
        assert_eq!(params.dropped_features(), vec!["const_col"]);
        assert_eq!(params.beta[1], 0.0);
    }

    #[test]
    fn predict_unit_coefficient_passthrough() {
        let params = CoxParams {
            beta: vec![0.0, 1.0],
            l1: 0.0,
            l2: 0.0,
            feature_stats: vec![
                FeatureStat {
                    name: "a".into(),
                    kind: FeatureKind::Binary,
                    mean: 0.0,
                    sd: 1.0,
                    dropped: false,
                },
                FeatureStat {
                    name: "b".into(),
                    kind: FeatureKind::Continuous,
                    mean: 2.0,
                    sd: 2.0,
                    dropped: false,
                },
            ],
        };
        let names = schema(&["a", "b"]);
        // Standardized b = (5.4 − 2)/2 = 1.7.
        let risk = predict_risk(&params, &fv(&[1.0, 5.4], &names)).unwrap();
        assert!((risk - 1.7).abs() < 1e-12);

        let wrong = schema(&["a", "z"]);
        assert!(matches!(
            predict_risk(&params, &fv(&[1.0, 5.4], &wrong)),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn risk_ordering_invariant_to_affine_feature_rescaling() {
        let (features, records, names) = toy_cohort(10, 5);
        let fitted = fit_cox(&features, &records, &CoxFitConfig::default()).unwrap();
        let base: Vec<f64> = features
            .iter()
            .map(|x| predict_risk(&fitted, x).unwrap())
            .collect();

        // Rescale the first (continuous) raw feature affinely and refit.
        let rescaled: Vec<FeatureVector> = features
            .iter()
            .map(|x| {
                let mut v = x.values.clone();
                v[0] = 37.0 * v[0] - 4.2;
                FeatureVector::new(v, names.clone()).unwrap()
            })
            .collect();
        let refit = fit_cox(&rescaled, &records, &CoxFitConfig::default()).unwrap();
        let again: Vec<f64> = rescaled
            .iter()
            .map(|x| predict_risk(&refit, x).unwrap())
            .collect();

        let argsort = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(argsort(&base), argsort(&again));
    }

    #[test]
    fn importance_degenerate_and_signal() {
        let stats = |name: &str| FeatureStat {
            name: name.into(),
            kind: FeatureKind::Continuous,
            mean: 0.0,
            sd: 1.0,
            dropped: false,
        };
        let zero_fold = CoxParams {
            beta: vec![0.0, 0.0],
            l1: 0.0,
            l2: 0.0,
            feature_stats: vec![stats("f1"), stats("f2")],
        };
        let rows = coefficient_importance(&vec![zero_fold.clone(); 5]).unwrap();
        assert!(rows.iter().all(|r| r.p_value == 1.0));

        let folds: Vec<CoxParams> = [2.5, 2.9, 2.7, 3.1, 2.65]
            .iter()
            .map(|&b| CoxParams {
                beta: vec![b, 0.01],
                l1: 0.0,
                l2: 0.0,
                feature_stats: vec![stats("f1"), stats("f2")],
            })
            .collect();
        let rows = coefficient_importance(&folds).unwrap();
        assert_eq!(rows[0].feature, "f1");
        assert!(rows[0].p_value < 0.05);
        assert!(rows[0].ci_low > 0.0, "CI should exclude 0: {:?}", rows[0]);
        assert!(rows[0].mean_coefficient.abs() >= rows[1].mean_coefficient.abs());
    }
}
