//! Construction-controlled learning experiments on synthetic cohorts with
//! known ground truth.

use concord_core::attention::{fit_aggregator, AggregatorFitConfig, TransformerConfig};
use concord_core::cox::{fit_cox, predict_risk, CoxFitConfig};
use concord_core::dense::{fit_dense, forward, DenseFitConfig, DenseKind, ForwardMode};
use concord_core::eval::FittedModel;
use concord_core::fusion::{
    predict_multimodal, train_multimodal, FusionConfig, FusionMode, MultimodalTrainConfig,
    NonImageModel,
};
use concord_core::stats::concordance_index;
use concord_core::synth::{generate_synthetic, SyntheticSpec};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn cox_recovers_true_coefficients() {
    // n = 500, β* = (1.0, −0.5, 0.0), unregularized; median componentwise
    // error over 5 seeds within ±0.15. No hidden factor, so the linear
    // model's target is exactly β*.
    let mut errors: Vec<[f64; 3]> = Vec::new();
    for seed in 0..5u64 {
        let mut spec = SyntheticSpec::default_cohort(500, 600 + seed);
        spec.image_signal = 0.0;
        spec.censoring_target = 0.3;
        let bundle = generate_synthetic(&spec).unwrap();
        let params = fit_cox(&bundle.features, &bundle.records, &CoxFitConfig::default()).unwrap();
        errors.push([
            (params.beta[0] - 1.0).abs(),
            (params.beta[1] + 0.5).abs(),
            params.beta[2].abs(),
        ]);
    }
    for k in 0..3 {
        let med = median(errors.iter().map(|e| e[k]).collect());
        assert!(med <= 0.15, "component {k}: median error {med}");
    }
}

#[test]
fn dense_nets_match_cox_on_separable_data() {
    // Linear signal only: the networks should reach the linear model's
    // training concordance within 0.02.
    for seed in 0..3u64 {
        let mut spec = SyntheticSpec::default_cohort(150, 300 + seed);
        spec.beta = vec![1.5, -1.0, 0.8];
        spec.image_signal = 0.0;
        spec.censoring_target = 0.2;
        spec.patches_min = 2;
        spec.patches_max = 3;
        spec.d_in = 4;
        let bundle = generate_synthetic(&spec).unwrap();

        let cox = fit_cox(&bundle.features, &bundle.records, &CoxFitConfig::default()).unwrap();
        let cox_risks: Vec<f64> = bundle
            .features
            .iter()
            .map(|x| predict_risk(&cox, x).unwrap())
            .collect();
        let c_cox = concordance_index(&bundle.records, &cox_risks).unwrap();

        for kind in [DenseKind::MlpRelu, DenseKind::SnnSelu] {
            let mut cfg = DenseFitConfig::new(kind);
            cfg.seed = seed;
            cfg.epochs = 1500;
            cfg.learning_rate = 0.02;
            let net = fit_dense(&bundle.features, &bundle.records, &cfg).unwrap();
            let risks: Vec<f64> = bundle
                .features
                .iter()
                .map(|x| forward(&net, x, ForwardMode::Infer).unwrap().0)
                .collect();
            let c_net = concordance_index(&bundle.records, &risks).unwrap();
            assert!(
                c_net >= c_cox - 0.02,
                "seed {seed} {kind:?}: dense {c_net:.3} vs cox {c_cox:.3}"
            );
        }
    }
}

#[test]
fn aggregator_learns_planted_cluster() {
    // Image-only signal: a risk cluster whose prevalence drives the hazard.
    // Training c-index ≥ 0.75 as the 5-seed median.
    let mut scores = Vec::new();
    for seed in 0..5u64 {
        let mut spec = SyntheticSpec::default_cohort(120, 100 + seed);
        spec.beta = vec![0.0, 0.0, 0.0];
        spec.image_signal = 1.5;
        spec.censoring_target = 0.2;
        let bundle = generate_synthetic(&spec).unwrap();

        let mut cfg = AggregatorFitConfig::new(TransformerConfig::desk_scale(16));
        cfg.epochs = 60;
        cfg.seed = seed * 13 + 1;
        let params = fit_aggregator(&bundle.bags, &bundle.records, &cfg).unwrap();
        let fitted = FittedModel::Image(params);
        let risks: Vec<f64> = (0..bundle.len())
            .map(|i| fitted.predict(&bundle, i).unwrap())
            .collect();
        scores.push(concordance_index(&bundle.records, &risks).unwrap());
    }
    let med = median(scores.clone());
    assert!(med >= 0.75, "median training c-index {med} ({scores:?})");
}

#[test]
fn aggregator_stays_at_chance_without_signal() {
    // image_signal = 0 makes the bag mixture independent of outcomes; the
    // held-out c-index sits in the null band.
    let mut scores = Vec::new();
    for seed in 0..5u64 {
        let mut spec = SyntheticSpec::default_cohort(120, 200 + seed);
        spec.beta = vec![0.0, 0.0, 0.0];
        spec.image_signal = 0.0;
        spec.censoring_target = 0.2;
        let bundle = generate_synthetic(&spec).unwrap();

        let train_idx: Vec<usize> = (0..60).collect();
        let test_idx: Vec<usize> = (60..120).collect();
        let (_, train_bags, train_recs) = bundle.select(&train_idx);
        let mut cfg = AggregatorFitConfig::new(TransformerConfig::desk_scale(16));
        cfg.epochs = 60;
        cfg.seed = seed;
        let params = fit_aggregator(&train_bags, &train_recs, &cfg).unwrap();
        let fitted = FittedModel::Image(params);
        let risks: Vec<f64> = test_idx
            .iter()
            .map(|&i| fitted.predict(&bundle, i).unwrap())
            .collect();
        let (_, _, test_recs) = bundle.select(&test_idx);
        scores.push(concordance_index(&test_recs, &risks).unwrap());
    }
    let med = median(scores.clone());
    assert!(
        (0.35..=0.65).contains(&med),
        "null-band median {med} ({scores:?})"
    );
}

#[test]
fn fused_training_concordance_dominates_unimodal() {
    // Independent signal in each modality: the fused model's training
    // c-index should not fall below the better unimodal branch (5-seed
    // median of the margin).
    let mut margins = Vec::new();
    for seed in 0..5u64 {
        let mut spec = SyntheticSpec::default_cohort(120, 800 + seed);
        spec.image_signal = 1.2;
        spec.patches_min = 24;
        spec.patches_max = 40;
        let bundle = generate_synthetic(&spec).unwrap();

        let arch = TransformerConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 16,
            d_in: 16,
        };
        let mut agg = AggregatorFitConfig::new(arch);
        agg.epochs = 40;
        agg.weight_decay = 1e-3;
        let cfg = MultimodalTrainConfig::new(
            FusionConfig::new(FusionMode::Late, FusionMode::Late),
            agg,
            seed,
        );
        let model =
            train_multimodal(&bundle.features, &bundle.bags, &bundle.records, &cfg).unwrap();

        let fused: Vec<f64> = (0..bundle.len())
            .map(|i| predict_multimodal(&model, &bundle.features[i], &bundle.bags[i]).unwrap())
            .collect();
        let ni: Vec<f64> = (0..bundle.len())
            .map(|i| match &model.nonimage {
                NonImageModel::Cox(p) => predict_risk(p, &bundle.features[i]).unwrap(),
                NonImageModel::Dense(_) => unreachable!("config uses the linear model"),
            })
            .collect();
        let img: Vec<f64> = (0..bundle.len())
            .map(|i| {
                concord_core::attention::aggregate(&model.image, &bundle.bags[i])
                    .unwrap()
                    .1
            })
            .collect();
        let c_f = concordance_index(&bundle.records, &fused).unwrap();
        let c_n = concordance_index(&bundle.records, &ni).unwrap();
        let c_i = concordance_index(&bundle.records, &img).unwrap();
        margins.push(c_f - c_n.max(c_i));
    }
    let med = median(margins.clone());
    assert!(med >= 0.0, "median fused margin {med} ({margins:?})");
}
