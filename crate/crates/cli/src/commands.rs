//! Subcommand implementations. Stdout tables are always derived from the
//! JSON documents written to disk, never computed separately.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use concord_core::attention::{aggregate, attention_rollout, AggregatorFitConfig, TransformerConfig};
use concord_core::cox::{coefficient_importance, CoxFitConfig, CoxParams};
use concord_core::dense::{DenseFitConfig, DenseKind};
use concord_core::eval::{
    default_grid, make_fold_plan, run_nested_cv, CvReport, FittedModel, HyperPoint, ModelSpec,
    StratificationResult,
};
use concord_core::fusion::{FusionConfig, FusionMode, MultimodalTrainConfig, NonImageKind, NonImageModel};
use concord_core::io::{
    attention_svg, km_curves_to_csv, km_curves_to_svg, load_model, load_report,
    load_stratification, read_bags_file, read_cells_file, read_cohort, save_model, save_report,
    save_stratification, write_cohort, CohortBundle, CELL_CATEGORIES, FORMAT_VERSION,
};
use concord_core::stats::mann_whitney_u;
use concord_core::synth::{generate_synthetic, SyntheticSpec};

use crate::{
    resolve_seed, AttentionArgs, CompareGroupsArgs, EvaluateArgs, FileConfig, GenerateArgs,
    ImportanceArgs, StratifyArgs,
};

// ── generate ────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct Manifest {
    format_version: u32,
    tool: String,
    spec: SyntheticSpec,
}

pub fn generate(args: GenerateArgs) -> Result<i32> {
    let file = FileConfig::load(args.config.as_ref())?;
    let seed = resolve_seed(args.seed, &file);
    let p = args.p_binary + args.p_continuous;
    let beta = match args.beta {
        Some(beta) => {
            if beta.len() != p {
                bail!("--beta has {} entries for {p} features", beta.len());
            }
            beta
        }
        None => {
            let mut beta = vec![0.0; p];
            if args.p_binary > 0 {
                beta[0] = 1.0;
            }
            if args.p_continuous > 0 {
                beta[args.p_binary] = -0.5;
            }
            beta
        }
    };
    let spec = SyntheticSpec {
        n: args.n,
        p_binary: args.p_binary,
        p_continuous: args.p_continuous,
        beta,
        weibull_shape: args.weibull_shape,
        weibull_scale: args.weibull_scale,
        censoring_target: args.censoring,
        image_signal: args.image_signal,
        patches_min: args.patches_min,
        patches_max: args.patches_max,
        d_in: args.d_in,
        seed,
    };
    let bundle = generate_synthetic(&spec)?;
    write_cohort(&args.out, &bundle)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool: format!("concord {}", env!("CARGO_PKG_VERSION")),
        spec,
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let events = bundle.records.iter().filter(|r| r.event).count();
    println!(
        "wrote cohort of {} patients ({events} events) to {}",
        bundle.len(),
        args.out.display()
    );
    for f in ["records.csv", "features.csv", "bags.ndjson", "cells.csv", "manifest.json"] {
        println!("  {}", args.out.join(f).display());
    }
    Ok(0)
}

// ── evaluate ────────────────────────────────────────────────────────────────

fn parse_fusion_mode(s: &str) -> Result<FusionMode> {
    match s.trim() {
        "early" => Ok(FusionMode::Early),
        "late" => Ok(FusionMode::Late),
        other => bail!("bad fusion mode '{other}' (expected early|late)"),
    }
}

fn parse_nonimage_kind(s: &str) -> Result<NonImageKind> {
    match s.trim() {
        "cox" => Ok(NonImageKind::Cox),
        "mlp" => Ok(NonImageKind::MlpRelu),
        "snn" => Ok(NonImageKind::SnnSelu),
        other => bail!("bad non-image kind '{other}' (expected cox|mlp|snn)"),
    }
}

struct EvalSettings {
    model: String,
    fusion: (FusionMode, FusionMode),
    nonimage_kind: NonImageKind,
    l1_grid: Option<Vec<f64>>,
    l2_grid: Option<Vec<f64>>,
    outer_folds: usize,
    inner_folds: usize,
    dense_epochs: usize,
    dense_lr: f64,
    image_epochs: usize,
    image_lr: f64,
    image_layers: usize,
    image_heads: usize,
    image_dim: usize,
    max_patches: usize,
    weight_decay: f64,
    seed: u64,
}

fn merge_eval(args: &EvaluateArgs, file: &FileConfig) -> Result<EvalSettings> {
    let fusion_text = args
        .fusion
        .clone()
        .or_else(|| file.fusion.clone())
        .unwrap_or_else(|| "late,late".to_string());
    let parts: Vec<&str> = fusion_text.split(',').collect();
    if parts.len() != 2 {
        bail!("--fusion expects '<nonimage>,<image>', got '{fusion_text}'");
    }
    Ok(EvalSettings {
        model: args
            .model
            .clone()
            .or_else(|| file.model.clone())
            .unwrap_or_else(|| "cox".to_string()),
        fusion: (parse_fusion_mode(parts[0])?, parse_fusion_mode(parts[1])?),
        nonimage_kind: parse_nonimage_kind(
            args.nonimage_kind
                .as_deref()
                .or(file.nonimage_kind.as_deref())
                .unwrap_or("cox"),
        )?,
        l1_grid: args.l1_grid.clone().or_else(|| file.l1_grid.clone()),
        l2_grid: args.l2_grid.clone().or_else(|| file.l2_grid.clone()),
        outer_folds: args.outer_folds.or(file.outer_folds).unwrap_or(5),
        inner_folds: args.inner_folds.or(file.inner_folds).unwrap_or(3),
        dense_epochs: args.dense_epochs.or(file.dense_epochs).unwrap_or(500),
        dense_lr: args.dense_lr.or(file.dense_lr).unwrap_or(0.01),
        image_epochs: args.image_epochs.or(file.image_epochs).unwrap_or(40),
        image_lr: args.image_lr.or(file.image_lr).unwrap_or(3e-3),
        image_layers: args.image_layers.or(file.image_layers).unwrap_or(2),
        image_heads: args.image_heads.or(file.image_heads).unwrap_or(4),
        image_dim: args.image_dim.or(file.image_dim).unwrap_or(32),
        max_patches: args.max_patches.or(file.max_patches).unwrap_or(64),
        weight_decay: args.weight_decay.or(file.weight_decay).unwrap_or(1e-3),
        seed: resolve_seed(args.seed, file),
    })
}

fn build_spec(s: &EvalSettings, d_in: usize) -> Result<ModelSpec> {
    let arch = TransformerConfig {
        n_layers: s.image_layers,
        n_heads: s.image_heads,
        model_dim: s.image_dim,
        d_in,
    };
    let mut agg = AggregatorFitConfig::new(arch);
    agg.epochs = s.image_epochs;
    agg.learning_rate = s.image_lr;
    agg.max_patches = s.max_patches;
    agg.weight_decay = s.weight_decay;

    let dense = |kind: DenseKind| {
        let mut cfg = DenseFitConfig::new(kind);
        cfg.epochs = s.dense_epochs;
        cfg.learning_rate = s.dense_lr;
        cfg
    };

    Ok(match s.model.as_str() {
        "random" => ModelSpec::RandomRisk,
        "cox" => ModelSpec::Cox {
            config: CoxFitConfig::default(),
        },
        "mlp" => ModelSpec::Dense {
            config: dense(DenseKind::MlpRelu),
        },
        "snn" => ModelSpec::Dense {
            config: dense(DenseKind::SnnSelu),
        },
        "image" => ModelSpec::Image { config: agg },
        "multimodal" => {
            let mut fusion = FusionConfig::new(s.fusion.0, s.fusion.1);
            fusion.nonimage_kind = s.nonimage_kind;
            let mut cfg = MultimodalTrainConfig::new(fusion, agg, s.seed);
            cfg.dense = dense(DenseKind::MlpRelu);
            ModelSpec::Multimodal { config: cfg }
        }
        other => bail!("unknown model family '{other}' (expected cox|mlp|snn|image|multimodal|random)"),
    })
}

fn build_grid(s: &EvalSettings) -> Vec<HyperPoint> {
    match (&s.l1_grid, &s.l2_grid) {
        (None, None) => match s.model.as_str() {
            // No natural penalty grid for the transformer or the null model.
            "image" | "random" => vec![HyperPoint { l1: 0.0, l2: 0.0 }],
            _ => default_grid(),
        },
        (l1, l2) => {
            let l1 = l1.clone().unwrap_or_else(|| vec![0.0]);
            let l2 = l2.clone().unwrap_or_else(|| vec![0.1]);
            let mut grid = Vec::new();
            for &a in &l1 {
                for &b in &l2 {
                    grid.push(HyperPoint { l1: a, l2: b });
                }
            }
            grid
        }
    }
}

fn print_report_summary(report: &CvReport, bundle: &CohortBundle) {
    let events = bundle.records.iter().filter(|r| r.event).count();
    println!(
        "cohort       : {} patients, {} events",
        bundle.len(),
        events
    );
    println!(
        "mean c-index : {:.3} (sd {:.3}) over {} folds",
        report.aggregate.mean, report.aggregate.sd, report.aggregate.n_folds
    );
    println!(
        "95% CI       : {:.3} - {:.3}",
        report.aggregate.ci_low, report.aggregate.ci_high
    );
    println!("fold  c-index   l1      l2");
    for f in &report.folds {
        match (f.test_c_index, &f.error) {
            (Some(c), _) => println!(
                "  {}   {:.3}     {:<7} {:<7}",
                f.fold, c, f.chosen.l1, f.chosen.l2
            ),
            (None, Some(e)) => println!("  {}   failed: {e}", f.fold),
            (None, None) => {}
        }
    }
    if let Some(sites) = &report.site_c_indices {
        let parts: Vec<String> = sites.iter().map(|(s, c)| format!("{s} {c:.3}")).collect();
        println!("site c-index : {}", parts.join(", "));
    }
    for w in &report.warnings {
        println!("warning      : {w}");
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<i32> {
    let file = FileConfig::load(args.config.as_ref())?;
    let settings = merge_eval(&args, &file)?;
    let bundle = read_cohort(&args.cohort)
        .with_context(|| format!("reading cohort {}", args.cohort.display()))?;
    let d_in = bundle.bags[0].dim();
    let spec = build_spec(&settings, d_in)?;
    let grid = build_grid(&settings);
    let plan = make_fold_plan(
        &bundle.records,
        settings.outer_folds,
        settings.inner_folds,
        settings.seed,
    )?;
    let run = run_nested_cv(&bundle, &spec, &grid, &plan)?;
    save_report(&args.out, &run.report)?;

    if let Some(dir) = &args.save_models {
        std::fs::create_dir_all(dir)?;
        for (k, model) in run.fold_models.iter().enumerate() {
            if let Some(model) = model {
                save_model(&dir.join(format!("fold_{k}.json")), model)?;
            }
        }
    }

    println!("model family : {}", settings.model);
    print_report_summary(&run.report, &bundle);
    println!("report       : {}", args.out.display());

    let failed = run.report.folds.iter().any(|f| f.error.is_some());
    Ok(if failed { 2 } else { 0 })
}

// ── stratify ────────────────────────────────────────────────────────────────

pub fn stratify(args: StratifyArgs) -> Result<i32> {
    let report = load_report(&args.report)
        .with_context(|| format!("loading report {}", args.report.display()))?;
    let bundle = read_cohort(&args.cohort)?;
    let strat = concord_core::eval::stratify_hazard(&report, &bundle.records)?;

    std::fs::create_dir_all(&args.out)?;
    save_stratification(&args.out.join("stratification.json"), &strat)?;

    let groups: Vec<(String, concord_core::stats::KmCurve)> = strat
        .curves
        .iter()
        .enumerate()
        .map(|(q, c)| (format!("quartile_{}", q + 1), c.clone()))
        .collect();
    std::fs::write(args.out.join("km.csv"), km_curves_to_csv(&groups))?;
    std::fs::write(
        args.out.join("km.svg"),
        km_curves_to_svg(&groups, "hazard stratification"),
    )?;

    let mut sizes = [0usize; 4];
    for a in &strat.assignments {
        sizes[(a.quartile - 1) as usize] += 1;
    }
    println!("quartile sizes : {sizes:?}");
    println!(
        "log-rank       : chi2 {:.3}, df {}, p {:.4}",
        strat.log_rank.statistic,
        strat.log_rank.degrees_of_freedom.unwrap_or(f64::NAN),
        strat.log_rank.p_value
    );
    for f in ["stratification.json", "km.csv", "km.svg"] {
        println!("  {}", args.out.join(f).display());
    }
    Ok(0)
}

// ── importance ──────────────────────────────────────────────────────────────

fn cox_branch_of(model: FittedModel, path: &Path) -> Result<CoxParams> {
    match model {
        FittedModel::Cox(p) => Ok(p),
        FittedModel::Multimodal(m) => match m.nonimage {
            NonImageModel::Cox(p) => Ok(p),
            NonImageModel::Dense(_) => bail!(
                "{}: multimodal checkpoint has a dense non-image branch, no linear coefficients",
                path.display()
            ),
        },
        _ => bail!(
            "{}: checkpoint has no Cox coefficients to summarize",
            path.display()
        ),
    }
}

pub fn importance(args: ImportanceArgs) -> Result<i32> {
    let mut folds = Vec::new();
    for path in &args.checkpoints {
        let model =
            load_model(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        folds.push(cox_branch_of(model, path)?);
    }
    let rows = coefficient_importance(&folds)?;

    let mut csv = String::from("feature,avg_coef,ci_low,ci_high,p\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.feature, r.mean_coefficient, r.ci_low, r.ci_high, r.p_value
        ));
    }
    std::fs::write(&args.out, &csv)?;
    if let Some(json_path) = &args.json {
        std::fs::write(json_path, serde_json::to_string_pretty(&rows)? + "\n")?;
    }

    println!("feature            avg_coef   95% CI              p");
    for r in &rows {
        println!(
            "{:<18} {:>8.3}   {:>7.3}, {:>7.3}   {:.4}",
            r.feature, r.mean_coefficient, r.ci_low, r.ci_high, r.p_value
        );
    }
    println!("table: {}", args.out.display());
    Ok(0)
}

// ── attention ───────────────────────────────────────────────────────────────

pub fn attention(args: AttentionArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let params = match model {
        FittedModel::Image(p) => p,
        FittedModel::Multimodal(m) => m.image,
        _ => bail!(
            "{}: checkpoint is not an image or multimodal model",
            args.model.display()
        ),
    };
    let mut bags = read_bags_file(&args.bags)?;
    if let Some(patient) = &args.patient {
        bags.retain(|b| &b.patient_id == patient);
        if bags.is_empty() {
            bail!("patient '{patient}' not present in {}", args.bags.display());
        }
    }
    if args.svg.is_some() && bags.len() != 1 {
        bail!("--svg needs a single patient; pass --patient");
    }

    let mut csv = String::from("patient_id,patch_id,weight,x,y\n");
    let mut svg_rows = Vec::new();
    for bag in &bags {
        let (_, _, trace) = aggregate(&params, bag)?;
        let weights = attention_rollout(&trace);
        let sum: f64 = weights.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            bail!("rollout weights for {} sum to {sum}", bag.patient_id);
        }
        for row in weights.with_bag(bag)? {
            let (x, y) = match row.slide_coords {
                Some((x, y)) => (x.to_string(), y.to_string()),
                None => (String::new(), String::new()),
            };
            csv.push_str(&format!(
                "{},{},{},{x},{y}\n",
                bag.patient_id, row.patch_id, row.weight
            ));
            svg_rows.push((row.patch_id, row.weight, row.slide_coords));
        }
    }
    std::fs::write(&args.out, &csv)?;
    if let Some(svg_path) = &args.svg {
        std::fs::write(svg_path, attention_svg(&svg_rows))?;
    }
    println!(
        "wrote rollout weights for {} patient(s) to {}",
        bags.len(),
        args.out.display()
    );
    Ok(0)
}

// ── compare-groups ──────────────────────────────────────────────────────────

fn quartile_members<'a>(
    strat: &'a StratificationResult,
    quartile: u8,
) -> Vec<&'a str> {
    strat
        .assignments
        .iter()
        .filter(|a| a.quartile == quartile)
        .map(|a| a.patient_id.as_str())
        .collect()
}

pub fn compare_groups(args: CompareGroupsArgs) -> Result<i32> {
    if !(1..=4).contains(&args.high) || !(1..=4).contains(&args.low) || args.high == args.low {
        bail!("--high and --low must be distinct quartiles in 1..=4");
    }
    let cells = read_cells_file(&args.cells)?;
    let strat = load_stratification(&args.stratification)?;
    let by_id: std::collections::HashMap<&str, &[f64; 6]> =
        cells.iter().map(|(id, row)| (id.as_str(), row)).collect();

    let collect = |ids: &[&str], category: usize| -> Result<Vec<f64>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|row| row[category])
                    .ok_or_else(|| anyhow::anyhow!("patient '{id}' missing from cell table"))
            })
            .collect()
    };
    let high_ids = quartile_members(&strat, args.high);
    let low_ids = quartile_members(&strat, args.low);
    if high_ids.is_empty() || low_ids.is_empty() {
        bail!("empty risk group (high {} low {})", args.high, args.low);
    }

    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };

    let mut csv = String::from("category,low_median,high_median,u_statistic,p_value\n");
    let mut lines = Vec::new();
    for (k, category) in CELL_CATEGORIES.iter().enumerate() {
        let mut low = collect(&low_ids, k)?;
        let mut high = collect(&high_ids, k)?;
        let test = mann_whitney_u(&low, &high)?;
        let (lo_med, hi_med) = (median(&mut low), median(&mut high));
        csv.push_str(&format!(
            "{category},{lo_med},{hi_med},{},{}\n",
            test.statistic, test.p_value
        ));
        lines.push(format!(
            "{category:<15} low {lo_med:.3}  high {hi_med:.3}  U {:>7.1}  p {:.4}",
            test.statistic, test.p_value
        ));
    }
    std::fs::write(&args.out, &csv)?;
    println!(
        "cell composition, quartile {} (low) vs {} (high):",
        args.low, args.high
    );
    for line in lines {
        println!("  {line}");
    }
    println!("table: {}", args.out.display());
    Ok(0)
}
