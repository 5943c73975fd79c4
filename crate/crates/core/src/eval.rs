//! Nested cross-validation without leakage, hazard stratification, and model
//! comparison.
//!
//! Outer folds estimate generalization; inner folds, within each outer
//! training set, select hyperparameters — the selected point is refitted on
//! the full outer-training set and scored once on the untouched outer test
//! set. Folds are event-stratified and everything is deterministic in the
//! master seed; outer folds run in parallel with per-fold RNG streams.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{aggregate, fit_aggregator, AggregatorFitConfig, TransformerParams};
use crate::cox::{fit_cox, predict_risk, CoxFitConfig, CoxParams};
use crate::dense::{fit_dense, forward, DenseFitConfig, DenseNetParams, ForwardMode};
use crate::error::{Error, Result};
use crate::fusion::{
    predict_multimodal, train_branches, train_fusion_head, train_multimodal, MultimodalModel,
    MultimodalTrainConfig,
};
use crate::io::CohortBundle;
use crate::stats::{
    concordance_index, fold_ci_unit, kaplan_meier, log_rank_test, t_test_paired, KmCurve,
    SurvivalRecord, TestResult,
};

/// Outer/inner fold assignment, event-stratified and deterministic in `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k_outer: usize,
    pub k_inner: usize,
    /// False when the cohort had too few events and assignment fell back to
    /// an unstratified shuffle.
    pub stratified: bool,
    /// Disjoint test index sets covering the cohort.
    pub outer_test: Vec<Vec<usize>>,
    /// Per outer fold: disjoint validation sets partitioning the outer
    /// training set.
    pub inner_val: Vec<Vec<Vec<usize>>>,
}

fn deal_round_robin(
    rng: &mut ChaCha8Rng,
    groups: &mut [Vec<usize>],
    mut items: Vec<usize>,
    start: usize,
) -> usize {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.gen_range(0..=i));
    }
    let k = groups.len();
    let mut slot = start;
    for item in items {
        groups[slot % k].push(item);
        slot += 1;
    }
    slot % k
}

/// Build a `k_outer`-fold plan with `k_inner` inner validation splits per
/// outer fold, stratified on the event flag. With fewer than `k_outer`
/// events the assignment falls back to unstratified and flags the plan.
pub fn make_fold_plan(
    records: &[SurvivalRecord],
    k_outer: usize,
    k_inner: usize,
    seed: u64,
) -> Result<FoldPlan> {
    let n = records.len();
    if k_outer < 2 || n < k_outer {
        return Err(Error::InvalidInput(format!(
            "fold plan: {n} patients cannot fill {k_outer} outer folds"
        )));
    }
    if k_inner < 2 {
        return Err(Error::InvalidInput("fold plan: k_inner must be ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events: Vec<usize> = (0..n).filter(|&i| records[i].event).collect();
    let censored: Vec<usize> = (0..n).filter(|&i| !records[i].event).collect();
    let stratified = events.len() >= k_outer;

    let mut outer_test: Vec<Vec<usize>> = vec![Vec::new(); k_outer];
    if stratified {
        let next = deal_round_robin(&mut rng, &mut outer_test, events, 0);
        deal_round_robin(&mut rng, &mut outer_test, censored, next);
    } else {
        deal_round_robin(&mut rng, &mut outer_test, (0..n).collect(), 0);
    }
    for fold in outer_test.iter_mut() {
        fold.sort_unstable();
    }

    let mut inner_val = Vec::with_capacity(k_outer);
    for test in &outer_test {
        let test_set: HashSet<usize> = test.iter().copied().collect();
        let train: Vec<usize> = (0..n).filter(|i| !test_set.contains(i)).collect();
        let train_events: Vec<usize> =
            train.iter().copied().filter(|&i| records[i].event).collect();
        let train_censored: Vec<usize> =
            train.iter().copied().filter(|&i| !records[i].event).collect();
        let mut vals: Vec<Vec<usize>> = vec![Vec::new(); k_inner];
        if stratified && train_events.len() >= k_inner {
            let next = deal_round_robin(&mut rng, &mut vals, train_events, 0);
            deal_round_robin(&mut rng, &mut vals, train_censored, next);
        } else {
            deal_round_robin(&mut rng, &mut vals, train, 0);
        }
        for v in vals.iter_mut() {
            v.sort_unstable();
        }
        inner_val.push(vals);
    }

    Ok(FoldPlan {
        seed,
        k_outer,
        k_inner,
        stratified,
        outer_test,
        inner_val,
    })
}

/// One point of the hyperparameter grid, applied to whichever penalty the
/// model family tunes (Cox penalties, dense penalties, fusion-head
/// penalties, aggregator weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub l1: f64,
    pub l2: f64,
}

impl HyperPoint {
    fn magnitude(&self) -> f64 {
        self.l1 + self.l2
    }
}

/// Default grid: l2 ∈ {0.01, 0.1, 1.0} × l1 ∈ {0, 0.1}.
pub fn default_grid() -> Vec<HyperPoint> {
    let mut grid = Vec::new();
    for &l1 in &[0.0, 0.1] {
        for &l2 in &[0.01, 0.1, 1.0] {
            grid.push(HyperPoint { l1, l2 });
        }
    }
    grid
}

/// Model family under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Seeded uniform risks — the null model.
    RandomRisk,
    Cox { config: CoxFitConfig },
    Dense { config: DenseFitConfig },
    Image { config: AggregatorFitConfig },
    Multimodal { config: MultimodalTrainConfig },
}

impl ModelSpec {
    fn with_hyper(&self, hp: HyperPoint) -> ModelSpec {
        let mut spec = self.clone();
        match &mut spec {
            ModelSpec::RandomRisk => {}
            ModelSpec::Cox { config } => {
                config.l1 = hp.l1;
                config.l2 = hp.l2;
            }
            ModelSpec::Dense { config } => {
                config.l1 = hp.l1;
                config.l2 = hp.l2;
            }
            ModelSpec::Image { config } => {
                config.weight_decay = hp.l2;
            }
            ModelSpec::Multimodal { config } => {
                config.fusion.fusion_l1 = hp.l1;
                config.fusion.fusion_l2 = hp.l2;
            }
        }
        spec
    }

    fn fit(&self, bundle: &CohortBundle, train_idx: &[usize], seed: u64) -> Result<FittedModel> {
        let (features, bags, records) = bundle.select(train_idx);
        match self {
            ModelSpec::RandomRisk => Ok(FittedModel::Random { seed }),
            ModelSpec::Cox { config } => Ok(FittedModel::Cox(fit_cox(
                &features, &records, config,
            )?)),
            ModelSpec::Dense { config } => {
                let mut cfg = config.clone();
                cfg.seed = seed;
                Ok(FittedModel::Dense(fit_dense(&features, &records, &cfg)?))
            }
            ModelSpec::Image { config } => {
                let mut cfg = config.clone();
                cfg.seed = seed;
                Ok(FittedModel::Image(fit_aggregator(&bags, &records, &cfg)?))
            }
            ModelSpec::Multimodal { config } => {
                let mut cfg = config.clone();
                cfg.seed = seed;
                Ok(FittedModel::Multimodal(Box::new(train_multimodal(
                    &features, &bags, &records, &cfg,
                )?)))
            }
        }
    }
}

/// A trained model of any family, ready to score patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
pub enum FittedModel {
    Random { seed: u64 },
    Cox(CoxParams),
    Dense(DenseNetParams),
    Image(TransformerParams),
    Multimodal(Box<MultimodalModel>),
}

impl FittedModel {
    /// Risk score for cohort patient `idx`; deterministic.
    pub fn predict(&self, bundle: &CohortBundle, idx: usize) -> Result<f64> {
        match self {
            FittedModel::Random { seed } => {
                // Independent of training data: a per-patient stream keyed by
                // the patient's position in the cohort.
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed.wrapping_add((idx as u64) << 17));
                Ok(rng.gen_range(0.0..1.0))
            }
            FittedModel::Cox(p) => predict_risk(p, &bundle.features[idx]),
            FittedModel::Dense(p) => {
                Ok(forward(p, &bundle.features[idx], ForwardMode::Infer)?.0)
            }
            FittedModel::Image(p) => Ok(aggregate(p, &bundle.bags[idx])?.1),
            FittedModel::Multimodal(m) => {
                predict_multimodal(m, &bundle.features[idx], &bundle.bags[idx])
            }
        }
    }
}

/// One patient's pooled out-of-fold prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRisk {
    pub patient_id: String,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub chosen: HyperPoint,
    pub test_c_index: Option<f64>,
    pub predictions: Vec<PatientRisk>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_folds: usize,
}

/// Machine-readable evaluation outcome: per-fold c-indices and predictions,
/// aggregate statistics, optional per-site c-indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelSpec,
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub aggregate: AggregateStats,
    pub site_c_indices: Option<BTreeMap<String, f64>>,
    pub warnings: Vec<String>,
}

impl CvReport {
    /// Per-fold c-indices of the successful folds, in fold order.
    pub fn fold_c_indices(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.test_c_index).collect()
    }

    /// Pooled out-of-fold predictions across all successful folds.
    pub fn pooled_predictions(&self) -> Vec<PatientRisk> {
        self.folds
            .iter()
            .flat_map(|f| f.predictions.iter().cloned())
            .collect()
    }
}

/// A finished nested-CV run: the report plus the per-fold refitted models
/// (for checkpointing); failed folds hold `None`.
#[derive(Debug)]
pub struct NestedCvRun {
    pub report: CvReport,
    pub fold_models: Vec<Option<FittedModel>>,
}

fn fold_seed(master: u64, fold: usize) -> u64 {
    master
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(0xd1b54a32d192ed03_u64.wrapping_mul(fold as u64 + 1))
}

/// Run nested cross-validation for one model family.
///
/// For each outer fold, inner CV picks the grid point with the best mean
/// inner-validation c-index (ties: smallest l1+l2, then grid order), refits
/// it on the full outer-training set and scores the outer test set. The
/// report is emitted as long as at least three folds succeed.
pub fn run_nested_cv(
    bundle: &CohortBundle,
    spec: &ModelSpec,
    grid: &[HyperPoint],
    plan: &FoldPlan,
) -> Result<NestedCvRun> {
    bundle.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let n = bundle.len();
    for test in &plan.outer_test {
        if test.iter().any(|&i| i >= n) {
            return Err(Error::PlanMismatch(
                "fold plan indexes beyond the cohort".into(),
            ));
        }
    }

    let fold_outputs: Vec<(FoldResult, Option<FittedModel>)> = (0..plan.k_outer)
        .into_par_iter()
        .map(|fold| run_outer_fold(bundle, spec, grid, plan, fold))
        .collect();

    let mut folds = Vec::with_capacity(plan.k_outer);
    let mut fold_models = Vec::with_capacity(plan.k_outer);
    let mut warnings = Vec::new();
    if !plan.stratified {
        warnings.push("fold plan is unstratified (too few events)".to_string());
    }
    for (result, model) in fold_outputs {
        if let Some(err) = &result.error {
            warnings.push(format!("fold {} failed: {err}", result.fold));
        }
        folds.push(result);
        fold_models.push(model);
    }

    let scores: Vec<f64> = folds.iter().filter_map(|f| f.test_c_index).collect();
    if scores.len() < 3 {
        return Err(Error::DegenerateTest(format!(
            "only {} of {} folds produced a c-index",
            scores.len(),
            plan.k_outer
        )));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
        / (scores.len() as f64 - 1.0))
        .sqrt();
    let (ci_low, ci_high) = fold_ci_unit(&scores, 0.95)?;
    let aggregate = AggregateStats {
        mean,
        sd,
        ci_low,
        ci_high,
        n_folds: scores.len(),
    };

    let site_c_indices = site_stratified_c_indices(bundle, &folds, &mut warnings);

    Ok(NestedCvRun {
        report: CvReport {
            model: spec.clone(),
            plan: plan.clone(),
            folds,
            aggregate,
            site_c_indices,
            warnings,
        },
        fold_models,
    })
}

fn run_outer_fold(
    bundle: &CohortBundle,
    spec: &ModelSpec,
    grid: &[HyperPoint],
    plan: &FoldPlan,
    fold: usize,
) -> (FoldResult, Option<FittedModel>) {
    let n = bundle.len();
    let test_idx = &plan.outer_test[fold];
    let test_set: HashSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..n).filter(|i| !test_set.contains(i)).collect();

    // Leakage guard: the ids touched during training/selection must be
    // disjoint from the outer test ids.
    let train_ids: HashSet<&str> = train_idx
        .iter()
        .map(|&i| bundle.records[i].patient_id.as_str())
        .collect();
    for &i in test_idx {
        assert!(
            !train_ids.contains(bundle.records[i].patient_id.as_str()),
            "leakage: test patient {} appears in training",
            bundle.records[i].patient_id
        );
    }

    let seed = fold_seed(plan.seed, fold);
    let failed = |msg: String| {
        (
            FoldResult {
                fold,
                chosen: grid[0],
                test_c_index: None,
                predictions: Vec::new(),
                error: Some(msg),
            },
            None,
        )
    };

    // Inner selection (skipped for a single-point grid).
    let chosen = if grid.len() == 1 {
        grid[0]
    } else {
        // scores[gi] collects one inner-validation c-index per inner fold.
        let mut scores: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
        for (inner, val_idx) in plan.inner_val[fold].iter().enumerate() {
            let val_set: HashSet<usize> = val_idx.iter().copied().collect();
            let fit_idx: Vec<usize> = train_idx
                .iter()
                .copied()
                .filter(|i| !val_set.contains(i))
                .collect();
            if fit_idx.is_empty() || val_idx.len() < 2 {
                continue;
            }
            let inner_seed = seed.wrapping_add(1 + inner as u64);

            let score_of = |fitted: &FittedModel| -> Option<f64> {
                let mut risks = Vec::with_capacity(val_idx.len());
                let mut records = Vec::with_capacity(val_idx.len());
                for &i in val_idx {
                    risks.push(fitted.predict(bundle, i).ok()?);
                    records.push(bundle.records[i].clone());
                }
                concordance_index(&records, &risks).ok()
            };

            match spec {
                // The grid only touches the fusion head, so the expensive
                // branch stages are fitted once per inner fold and shared.
                ModelSpec::Multimodal { config } => {
                    let (features, bags, records) = bundle.select(&fit_idx);
                    let mut cfg = config.clone();
                    cfg.seed = inner_seed;
                    let branches = match train_branches(&features, &bags, &records, &cfg) {
                        Ok(b) => b,
                        Err(_) => continue,
                    };
                    for (gi, &hp) in grid.iter().enumerate() {
                        let mut head_cfg = cfg.clone();
                        head_cfg.fusion.fusion_l1 = hp.l1;
                        head_cfg.fusion.fusion_l2 = hp.l2;
                        let model = match train_fusion_head(
                            &branches, &features, &bags, &records, &head_cfg,
                        ) {
                            Ok(m) => FittedModel::Multimodal(Box::new(m)),
                            Err(_) => continue,
                        };
                        if let Some(c) = score_of(&model) {
                            scores[gi].push(c);
                        }
                    }
                }
                _ => {
                    for (gi, &hp) in grid.iter().enumerate() {
                        let fitted =
                            match spec.with_hyper(hp).fit(bundle, &fit_idx, inner_seed) {
                                Ok(m) => m,
                                Err(_) => continue,
                            };
                        if let Some(c) = score_of(&fitted) {
                            scores[gi].push(c);
                        }
                    }
                }
            }
        }

        let mut best: Option<(f64, HyperPoint)> = None;
        for (gi, &hp) in grid.iter().enumerate() {
            if scores[gi].is_empty() {
                continue;
            }
            let mean = scores[gi].iter().sum::<f64>() / scores[gi].len() as f64;
            let better = match &best {
                None => true,
                Some((best_mean, best_hp)) => {
                    mean > best_mean + 1e-12
                        || ((mean - best_mean).abs() <= 1e-12
                            && (hp.magnitude() < best_hp.magnitude() - 1e-12
                                || ((hp.magnitude() - best_hp.magnitude()).abs() <= 1e-12
                                    && gi
                                        < grid
                                            .iter()
                                            .position(|g| g == best_hp)
                                            .unwrap_or(usize::MAX))))
                }
            };
            if better {
                best = Some((mean, hp));
            }
        }
        match best {
            Some((_, hp)) => hp,
            None => return failed("no grid point survived inner validation".to_string()),
        }
    };

    // Refit on the full outer-training set, score the untouched test set.
    let refit = match spec.with_hyper(chosen).fit(bundle, &train_idx, seed) {
        Ok(m) => m,
        Err(e) => return failed(format!("refit failed: {e}")),
    };
    let mut predictions = Vec::with_capacity(test_idx.len());
    let mut test_records = Vec::with_capacity(test_idx.len());
    let mut risks = Vec::with_capacity(test_idx.len());
    for &i in test_idx {
        match refit.predict(bundle, i) {
            Ok(r) => {
                predictions.push(PatientRisk {
                    patient_id: bundle.records[i].patient_id.clone(),
                    risk: r,
                });
                risks.push(r);
                test_records.push(bundle.records[i].clone());
            }
            Err(e) => return failed(format!("prediction failed: {e}")),
        }
    }
    match concordance_index(&test_records, &risks) {
        Ok(c) => (
            FoldResult {
                fold,
                chosen,
                test_c_index: Some(c),
                predictions,
                error: None,
            },
            Some(refit),
        ),
        Err(e) => failed(format!("test c-index undefined: {e}")),
    }
}

/// Within-site c-indices over pooled out-of-fold predictions.
fn site_stratified_c_indices(
    bundle: &CohortBundle,
    folds: &[FoldResult],
    warnings: &mut Vec<String>,
) -> Option<BTreeMap<String, f64>> {
    let site = bundle.site.as_ref()?;
    let by_id: std::collections::HashMap<&str, f64> = folds
        .iter()
        .flat_map(|f| f.predictions.iter().map(|p| (p.patient_id.as_str(), p.risk)))
        .collect();
    let mut out = BTreeMap::new();
    let mut sites: Vec<&String> = site.iter().collect();
    sites.sort();
    sites.dedup();
    for s in sites {
        let mut records = Vec::new();
        let mut risks = Vec::new();
        for (i, r) in bundle.records.iter().enumerate() {
            if &site[i] == s {
                if let Some(&risk) = by_id.get(r.patient_id.as_str()) {
                    records.push(r.clone());
                    risks.push(risk);
                }
            }
        }
        match concordance_index(&records, &risks) {
            Ok(c) => {
                out.insert(s.clone(), c);
            }
            Err(_) => warnings.push(format!("site {s}: c-index undefined, skipped")),
        }
    }
    Some(out)
}

// ── Hazard stratification ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientQuartile {
    pub patient_id: String,
    /// 1 = lowest predicted risk, 4 = highest.
    pub quartile: u8,
    pub risk: f64,
}

/// Quartile assignment over pooled out-of-fold predictions, per-quartile KM
/// curves, and the 4-group log-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationResult {
    pub assignments: Vec<PatientQuartile>,
    /// Curves indexed by quartile − 1.
    pub curves: Vec<KmCurve>,
    pub log_rank: TestResult,
}

/// Cut the cohort into four hazard strata by predicted risk rank (ties broken
/// by patient_id) and compare their survival.
pub fn stratify_hazard(
    report: &CvReport,
    records: &[SurvivalRecord],
) -> Result<StratificationResult> {
    let pooled = report.pooled_predictions();
    let mut by_id: std::collections::HashMap<&str, f64> = std::collections::HashMap::new();
    for p in &pooled {
        if by_id.insert(p.patient_id.as_str(), p.risk).is_some() {
            return Err(Error::InvalidInput(format!(
                "patient {} predicted in more than one fold",
                p.patient_id
            )));
        }
    }
    let mut indexed: Vec<(usize, f64)> = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        match by_id.get(r.patient_id.as_str()) {
            Some(&risk) => indexed.push((i, risk)),
            None => {
                return Err(Error::InvalidInput(format!(
                    "pooled predictions do not cover patient {}",
                    r.patient_id
                )))
            }
        }
    }

    indexed.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then_with(|| records[a.0].patient_id.cmp(&records[b.0].patient_id))
    });

    let n = indexed.len();
    let base = n / 4;
    let extra = n % 4;
    let mut assignments = vec![
        PatientQuartile {
            patient_id: String::new(),
            quartile: 0,
            risk: 0.0,
        };
        n
    ];
    let mut groups: Vec<Vec<SurvivalRecord>> = vec![Vec::new(); 4];
    let mut cursor = 0usize;
    for q in 0..4 {
        let size = base + usize::from(q < extra);
        for _ in 0..size {
            let (idx, risk) = indexed[cursor];
            assignments[idx] = PatientQuartile {
                patient_id: records[idx].patient_id.clone(),
                quartile: q as u8 + 1,
                risk,
            };
            groups[q].push(records[idx].clone());
            cursor += 1;
        }
    }

    let curves: Vec<KmCurve> = groups
        .iter()
        .map(|g| kaplan_meier(g))
        .collect::<Result<_>>()?;
    let log_rank = log_rank_test(&groups)?;

    Ok(StratificationResult {
        assignments,
        curves,
        log_rank,
    })
}

/// Paired t-test of per-fold c-indices between two reports sharing a plan.
pub fn compare_models(a: &CvReport, b: &CvReport) -> Result<TestResult> {
    if a.plan != b.plan {
        return Err(Error::PlanMismatch(
            "reports were built from different fold plans".into(),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (fa, fb) in a.folds.iter().zip(&b.folds) {
        if let (Some(ca), Some(cb)) = (fa.test_c_index, fb.test_c_index) {
            xs.push(ca);
            ys.push(cb);
        }
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateTest(
            "fewer than 2 folds succeeded in both reports".into(),
        ));
    }
    t_test_paired(&xs, &ys)
}
