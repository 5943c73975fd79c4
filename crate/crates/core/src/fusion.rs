//! Three-stage multimodal training and the four early/late fusion
//! configurations.
//!
//! Stage 1 fits the non-image model (Cox, MLP, or SNN), stage 2 fits the
//! transformer aggregator, stage 3 freezes both, extracts fusion features
//! for every training patient and fits a Cox head over them. Early fusion
//! passes pre-output representations (standardized covariates for the linear
//! model, the 8-unit hidden layer for dense nets, the 32-d patient embedding
//! for the image branch); late fusion passes the scalar unimodal risks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::{
    aggregate, fit_aggregator, AggregatorFitConfig, EmbeddingBag, TransformerParams,
    PATIENT_EMBEDDING_DIM,
};
use crate::cox::{
    fit_cox, predict_risk, CoxFitConfig, CoxParams, FeatureVector,
};
use crate::dense::{fit_dense, forward, DenseFitConfig, DenseKind, DenseNetParams, ForwardMode};
use crate::error::{Error, Result};
use crate::stats::SurvivalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonImageKind {
    Cox,
    MlpRelu,
    SnnSelu,
}

/// One of the four fusion scenarios plus the non-image architecture choice
/// and the fusion-head penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub nonimage_mode: FusionMode,
    pub image_mode: FusionMode,
    pub nonimage_kind: NonImageKind,
    pub fusion_l1: f64,
    pub fusion_l2: f64,
}

impl FusionConfig {
    pub fn new(nonimage_mode: FusionMode, image_mode: FusionMode) -> Self {
        Self {
            nonimage_mode,
            image_mode,
            nonimage_kind: NonImageKind::Cox,
            fusion_l1: 0.0,
            fusion_l2: 0.1,
        }
    }

    /// The four (nonimage_mode × image_mode) scenarios, late/late first.
    pub fn four_scenarios(kind: NonImageKind) -> [Self; 4] {
        let mk = |ni, img| Self {
            nonimage_mode: ni,
            image_mode: img,
            nonimage_kind: kind,
            fusion_l1: 0.0,
            fusion_l2: 0.1,
        };
        [
            mk(FusionMode::Late, FusionMode::Late),
            mk(FusionMode::Late, FusionMode::Early),
            mk(FusionMode::Early, FusionMode::Late),
            mk(FusionMode::Early, FusionMode::Early),
        ]
    }
}

/// The frozen stage-1 model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NonImageModel {
    Cox(CoxParams),
    Dense(DenseNetParams),
}

impl NonImageModel {
    fn risk(&self, features: &FeatureVector) -> Result<f64> {
        match self {
            NonImageModel::Cox(p) => predict_risk(p, features),
            NonImageModel::Dense(p) => Ok(forward(p, features, ForwardMode::Infer)?.0),
        }
    }

    /// Pre-output representation for early fusion: standardized covariates
    /// for the linear model (it has no hidden layer), the last hidden layer
    /// for dense nets.
    fn early_features(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        match self {
            NonImageModel::Cox(p) => p.standardize(features),
            NonImageModel::Dense(p) => Ok(forward(p, features, ForwardMode::Infer)?.1),
        }
    }

    fn early_names(&self) -> Vec<String> {
        match self {
            NonImageModel::Cox(p) => p
                .feature_names()
                .iter()
                .map(|n| format!("ni_{n}"))
                .collect(),
            NonImageModel::Dense(p) => (0..p.hidden_width())
                .map(|i| format!("ni_hidden_{i:02}"))
                .collect(),
        }
    }
}

/// A fully trained multimodal model: both unimodal branches plus the Cox
/// fusion head over the extracted fusion features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalModel {
    pub nonimage: NonImageModel,
    pub image: TransformerParams,
    pub fusion: CoxParams,
    pub config: FusionConfig,
    pub fusion_schema: Vec<String>,
}

/// Everything needed to train the three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalTrainConfig {
    pub fusion: FusionConfig,
    /// Stage-1 options when the non-image model is linear Cox.
    pub cox: CoxFitConfig,
    /// Stage-1 options when the non-image model is a dense net; `kind` and
    /// `seed` are overridden from the fusion config and master seed.
    pub dense: DenseFitConfig,
    /// Stage-2 options; `seed` is overridden from the master seed.
    pub aggregator: AggregatorFitConfig,
    /// Master seed; stages run with master+1, +2, +3.
    pub seed: u64,
}

impl MultimodalTrainConfig {
    pub fn new(fusion: FusionConfig, aggregator: AggregatorFitConfig, seed: u64) -> Self {
        Self {
            fusion,
            cox: CoxFitConfig::default(),
            dense: DenseFitConfig::new(DenseKind::MlpRelu),
            aggregator,
            seed,
        }
    }
}

/// Names of the concatenated fusion features for a given trained non-image
/// model and fusion config.
pub fn fusion_schema(nonimage: &NonImageModel, config: &FusionConfig) -> Vec<String> {
    let mut names = match config.nonimage_mode {
        FusionMode::Late => vec!["ni_risk".to_string()],
        FusionMode::Early => nonimage.early_names(),
    };
    match config.image_mode {
        FusionMode::Late => names.push("img_risk".to_string()),
        FusionMode::Early => {
            names.extend((0..PATIENT_EMBEDDING_DIM).map(|i| format!("img_emb_{i:02}")))
        }
    }
    names
}

/// Concatenated fusion features for one patient, per the config. Both
/// unimodal models run in inference mode, so this is deterministic.
pub fn extract_fusion_features(
    nonimage: &NonImageModel,
    image: &TransformerParams,
    config: &FusionConfig,
    schema: &Arc<Vec<String>>,
    features: &FeatureVector,
    bag: &EmbeddingBag,
) -> Result<FeatureVector> {
    let mut values = match config.nonimage_mode {
        FusionMode::Late => vec![nonimage.risk(features)?],
        FusionMode::Early => nonimage.early_features(features)?,
    };
    let (embedding, risk, _) = aggregate(image, bag)?;
    match config.image_mode {
        FusionMode::Late => values.push(risk),
        FusionMode::Early => values.extend(embedding),
    }
    FeatureVector::new(values, schema.clone())
}

/// The frozen stage-1 and stage-2 models, before the fusion head exists.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBranches {
    pub nonimage: NonImageModel,
    pub image: TransformerParams,
}

/// Stages 1 and 2: fit the non-image model and the aggregator. Neither
/// depends on the fusion penalties, so the result can be shared across a
/// fusion-head hyperparameter grid.
pub fn train_branches(
    features: &[FeatureVector],
    bags: &[EmbeddingBag],
    records: &[SurvivalRecord],
    config: &MultimodalTrainConfig,
) -> Result<FrozenBranches> {
    if features.len() != records.len() || bags.len() != records.len() {
        return Err(Error::InvalidInput(format!(
            "train_multimodal: misaligned inputs ({} features, {} bags, {} records)",
            features.len(),
            bags.len(),
            records.len()
        )));
    }
    for (bag, record) in bags.iter().zip(records) {
        if bag.patient_id != record.patient_id {
            return Err(Error::Alignment(format!(
                "bag patient {} does not match record patient {}",
                bag.patient_id, record.patient_id
            )));
        }
    }

    // Stage 1: non-image branch.
    let stage1_seed = config.seed.wrapping_add(1);
    let nonimage = match config.fusion.nonimage_kind {
        NonImageKind::Cox => NonImageModel::Cox(fit_cox(features, records, &config.cox)?),
        kind @ (NonImageKind::MlpRelu | NonImageKind::SnnSelu) => {
            let mut dense_cfg = config.dense.clone();
            dense_cfg.kind = match kind {
                NonImageKind::MlpRelu => DenseKind::MlpRelu,
                _ => DenseKind::SnnSelu,
            };
            dense_cfg.seed = stage1_seed;
            NonImageModel::Dense(fit_dense(features, records, &dense_cfg)?)
        }
    };

    // Stage 2: image branch.
    let mut agg_cfg = config.aggregator.clone();
    agg_cfg.seed = config.seed.wrapping_add(2);
    let image = fit_aggregator(bags, records, &agg_cfg)?;

    Ok(FrozenBranches { nonimage, image })
}

/// Stage 3: extract fusion features with both branches frozen and fit the
/// Cox fusion head. Risk scores enter raw (no re-standardization).
pub fn train_fusion_head(
    branches: &FrozenBranches,
    features: &[FeatureVector],
    bags: &[EmbeddingBag],
    records: &[SurvivalRecord],
    config: &MultimodalTrainConfig,
) -> Result<MultimodalModel> {
    let schema = Arc::new(fusion_schema(&branches.nonimage, &config.fusion));
    let fusion_inputs: Vec<FeatureVector> = features
        .iter()
        .zip(bags)
        .map(|(x, bag)| {
            extract_fusion_features(
                &branches.nonimage,
                &branches.image,
                &config.fusion,
                &schema,
                x,
                bag,
            )
        })
        .collect::<Result<_>>()?;
    let fusion_cfg = CoxFitConfig {
        l1: config.fusion.fusion_l1,
        l2: config.fusion.fusion_l2,
        standardize: false,
        ..CoxFitConfig::default()
    };
    let fusion = fit_cox(&fusion_inputs, records, &fusion_cfg)?;

    Ok(MultimodalModel {
        nonimage: branches.nonimage.clone(),
        image: branches.image.clone(),
        fusion,
        config: config.fusion,
        fusion_schema: schema.as_ref().clone(),
    })
}

/// Three-stage training: fit the non-image model, fit the aggregator, then
/// freeze both and fit the Cox fusion head over extracted features.
pub fn train_multimodal(
    features: &[FeatureVector],
    bags: &[EmbeddingBag],
    records: &[SurvivalRecord],
    config: &MultimodalTrainConfig,
) -> Result<MultimodalModel> {
    let branches = train_branches(features, bags, records, config)?;
    train_fusion_head(&branches, features, bags, records, config)
}

/// Fused risk: the fusion head applied to the extracted fusion features.
pub fn predict_multimodal(
    model: &MultimodalModel,
    features: &FeatureVector,
    bag: &EmbeddingBag,
) -> Result<f64> {
    let schema = Arc::new(model.fusion_schema.clone());
    let fused = extract_fusion_features(
        &model.nonimage,
        &model.image,
        &model.config,
        &schema,
        features,
        bag,
    )?;
    predict_risk(&model.fusion, &fused)
}
