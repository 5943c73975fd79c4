//! Cohort file formats, checkpoint/report persistence, and KM exports.
//!
//! A cohort on disk is a directory of four files:
//!
//! - `records.csv` — `patient_id,time,event[,site]`; event is 0/1
//! - `features.csv` — `patient_id` plus named covariate columns; columns
//!   prefixed `mut_` are binary mutation flags and must be 0/1
//! - `bags.ndjson` — one JSON object per patch per line:
//!   `{"patient_id":…,"patch_id":…,"x":…,"y":…,"vector":[…]}` (x/y optional)
//! - `cells.csv` — optional per-patient cell fractions over the six
//!   categories, each row summing to 1
//!
//! Checkpoints and reports are canonical JSON documents carrying a top-level
//! `format_version` and an embedded SHA-256 checksum; identical inputs write
//! identical bytes.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{EmbeddingBag, Patch};
use crate::cox::FeatureVector;
use crate::error::{Error, Result};
use crate::eval::{CvReport, FittedModel, StratificationResult};
use crate::stats::{KmCurve, SurvivalRecord};

/// Fixed order of the six nuclear cell categories.
pub const CELL_CATEGORIES: [&str; 6] = [
    "tumor",
    "normal",
    "inflammatory",
    "connective",
    "dead",
    "unclassifiable",
];

pub const FORMAT_VERSION: u32 = 1;

/// One patient cohort: aligned survival records, covariates, patch bags,
/// plus optional site labels and cell fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortBundle {
    pub records: Vec<SurvivalRecord>,
    pub features: Vec<FeatureVector>,
    pub bags: Vec<EmbeddingBag>,
    pub site: Option<Vec<String>>,
    pub cell_fractions: Option<Vec<[f64; 6]>>,
}

impl CohortBundle {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_names(&self) -> Arc<Vec<String>> {
        self.features
            .first()
            .map(|f| f.names.clone())
            .unwrap_or_default()
    }

    /// Clone the rows at `idx`, in that order.
    pub fn select(
        &self,
        idx: &[usize],
    ) -> (Vec<FeatureVector>, Vec<EmbeddingBag>, Vec<SurvivalRecord>) {
        (
            idx.iter().map(|&i| self.features[i].clone()).collect(),
            idx.iter().map(|&i| self.bags[i].clone()).collect(),
            idx.iter().map(|&i| self.records[i].clone()).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.records.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty cohort".into()));
        }
        if self.features.len() != n || self.bags.len() != n {
            return Err(Error::Alignment(format!(
                "{} records, {} feature rows, {} bags",
                n,
                self.features.len(),
                self.bags.len()
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.patient_id.as_str()) {
                return Err(Error::Alignment(format!(
                    "duplicate patient_id {}",
                    r.patient_id
                )));
            }
        }
        for (r, bag) in self.records.iter().zip(&self.bags) {
            if r.patient_id != bag.patient_id {
                return Err(Error::Alignment(format!(
                    "bag order mismatch at patient {}",
                    r.patient_id
                )));
            }
        }
        let schema = self.feature_names();
        for f in &self.features {
            if f.names != schema {
                return Err(Error::SchemaMismatch(
                    "inconsistent feature schema across cohort".into(),
                ));
            }
        }
        if let Some(site) = &self.site {
            if site.len() != n {
                return Err(Error::Alignment("site labels misaligned".into()));
            }
        }
        if let Some(cells) = &self.cell_fractions {
            if cells.len() != n {
                return Err(Error::Alignment("cell fractions misaligned".into()));
            }
            for (r, row) in self.records.iter().zip(cells) {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "cell fractions for {} sum to {sum}",
                        r.patient_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

// ── Cohort files ────────────────────────────────────────────────────────────

/// Write `records.csv`, `features.csv`, `bags.ndjson`, and (when present)
/// `cells.csv` into `dir`.
pub fn write_cohort(dir: &Path, bundle: &CohortBundle) -> Result<()> {
    bundle.validate()?;
    std::fs::create_dir_all(dir)?;

    let mut records = String::new();
    let has_site = bundle.site.is_some();
    records.push_str(if has_site {
        "patient_id,time,event,site\n"
    } else {
        "patient_id,time,event\n"
    });
    for (i, r) in bundle.records.iter().enumerate() {
        let event = u8::from(r.event);
        match &bundle.site {
            Some(site) => {
                records.push_str(&format!("{},{},{},{}\n", r.patient_id, r.time, event, site[i]))
            }
            None => records.push_str(&format!("{},{},{}\n", r.patient_id, r.time, event)),
        }
    }
    std::fs::write(dir.join("records.csv"), records)?;

    let names = bundle.feature_names();
    let mut features = String::from("patient_id");
    for n in names.iter() {
        features.push(',');
        features.push_str(n);
    }
    features.push('\n');
    for (r, f) in bundle.records.iter().zip(&bundle.features) {
        features.push_str(&r.patient_id);
        for v in &f.values {
            features.push(',');
            features.push_str(&v.to_string());
        }
        features.push('\n');
    }
    std::fs::write(dir.join("features.csv"), features)?;

    let mut bags = String::new();
    for bag in &bundle.bags {
        for p in &bag.patches {
            let row = BagLine {
                patient_id: bag.patient_id.clone(),
                patch_id: p.patch_id.clone(),
                x: p.slide_coords.map(|c| c.0),
                y: p.slide_coords.map(|c| c.1),
                vector: p.vector.clone(),
            };
            bags.push_str(&serde_json::to_string(&row).expect("bag line serializes"));
            bags.push('\n');
        }
    }
    std::fs::write(dir.join("bags.ndjson"), bags)?;

    if let Some(cells) = &bundle.cell_fractions {
        let mut out = String::from("patient_id");
        for c in CELL_CATEGORIES {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, row) in bundle.records.iter().zip(cells) {
            out.push_str(&r.patient_id);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        std::fs::write(dir.join("cells.csv"), out)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BagLine {
    patient_id: String,
    patch_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<i64>,
    vector: Vec<f64>,
}

/// Read a cohort directory written by [`write_cohort`] (or assembled by
/// hand). Features, bags, and cells are aligned to the order of
/// `records.csv`; ids that do not match exactly raise [`Error::Alignment`].
pub fn read_cohort(dir: &Path) -> Result<CohortBundle> {
    let records_path = dir.join("records.csv");
    let (records, site) = read_records(&records_path)?;
    let id_order: HashMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.patient_id.as_str(), i))
        .collect();

    let features_path = dir.join("features.csv");
    let features = read_features(&features_path, &records, &id_order)?;

    let bags_path = dir.join("bags.ndjson");
    let bags = read_bags(&bags_path, &records, &id_order)?;

    let cells_path = dir.join("cells.csv");
    let cell_fractions = if cells_path.exists() {
        Some(read_cells(&cells_path, &records, &id_order)?)
    } else {
        None
    };

    let bundle = CohortBundle {
        records,
        features,
        bags,
        site,
        cell_fractions,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn read_records(path: &Path) -> Result<(Vec<SurvivalRecord>, Option<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "patient_id" || cols[1] != "time" || cols[2] != "event" {
        return Err(parse_err(
            path,
            1,
            format!("expected header patient_id,time,event[,site], got '{header}'"),
        ));
    }
    let has_site = cols.len() > 3 && cols[3] == "site";
    let mut records = Vec::new();
    let mut site = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let time: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad time '{}'", fields[1])))?;
        let event = match fields[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(parse_err(path, lineno, format!("bad event flag '{other}'")));
            }
        };
        let record = SurvivalRecord::new(fields[0], time, event)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        records.push(record);
        if has_site {
            site.push(fields[3].to_string());
        }
    }
    if records.is_empty() {
        return Err(parse_err(path, 1, "no records"));
    }
    Ok((records, has_site.then_some(site)))
}

fn read_features(
    path: &Path,
    records: &[SurvivalRecord],
    id_order: &HashMap<&str, usize>,
) -> Result<Vec<FeatureVector>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"patient_id") || cols.len() < 2 {
        return Err(parse_err(
            path,
            1,
            "expected header patient_id,<feature columns>",
        ));
    }
    let names: Arc<Vec<String>> = Arc::new(cols[1..].iter().map(|s| s.to_string()).collect());

    let mut rows: Vec<Option<FeatureVector>> = vec![None; records.len()];
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let slot = *id_order.get(fields[0]).ok_or_else(|| {
            Error::Alignment(format!(
                "features.csv names unknown patient_id '{}'",
                fields[0]
            ))
        })?;
        let mut values = Vec::with_capacity(names.len());
        for (name, raw) in names.iter().zip(&fields[1..]) {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value '{raw}' in {name}")))?;
            if name.starts_with("mut_") && v != 0.0 && v != 1.0 {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("mutation column {name} must be 0/1, got {raw}"),
                ));
            }
            values.push(v);
        }
        if rows[slot].is_some() {
            return Err(Error::Alignment(format!(
                "features.csv repeats patient_id '{}'",
                fields[0]
            )));
        }
        rows[slot] = Some(FeatureVector::new(values, names.clone())?);
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.ok_or_else(|| {
                Error::Alignment(format!(
                    "features.csv missing patient_id '{}'",
                    records[i].patient_id
                ))
            })
        })
        .collect()
}

fn read_bags(
    path: &Path,
    records: &[SurvivalRecord],
    id_order: &HashMap<&str, usize>,
) -> Result<Vec<EmbeddingBag>> {
    let text = std::fs::read_to_string(path)?;
    let mut patches: Vec<Vec<Patch>> = vec![Vec::new(); records.len()];
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let row: BagLine = serde_json::from_str(line)
            .map_err(|e| parse_err(path, lineno, format!("bad patch line: {e}")))?;
        let slot = *id_order.get(row.patient_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!(
                "bags.ndjson names unknown patient_id '{}'",
                row.patient_id
            ))
        })?;
        let coords = match (row.x, row.y) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => {
                return Err(parse_err(path, lineno, "patch has only one of x/y"));
            }
        };
        patches[slot].push(Patch {
            patch_id: row.patch_id,
            vector: row.vector,
            slide_coords: coords,
        });
    }
    patches
        .into_iter()
        .enumerate()
        .map(|(i, ps)| {
            if ps.is_empty() {
                return Err(Error::Alignment(format!(
                    "bags.ndjson missing patient_id '{}'",
                    records[i].patient_id
                )));
            }
            EmbeddingBag::new(records[i].patient_id.clone(), ps)
        })
        .collect()
}

/// Read a bags file on its own; bags are ordered by each patient's first
/// appearance in the file.
pub fn read_bags_file(path: &Path) -> Result<Vec<EmbeddingBag>> {
    let text = std::fs::read_to_string(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut patches: HashMap<String, Vec<Patch>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let row: BagLine = serde_json::from_str(line)
            .map_err(|e| parse_err(path, lineno, format!("bad patch line: {e}")))?;
        let coords = match (row.x, row.y) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => return Err(parse_err(path, lineno, "patch has only one of x/y")),
        };
        if !patches.contains_key(&row.patient_id) {
            order.push(row.patient_id.clone());
        }
        patches.entry(row.patient_id).or_default().push(Patch {
            patch_id: row.patch_id,
            vector: row.vector,
            slide_coords: coords,
        });
    }
    if order.is_empty() {
        return Err(parse_err(path, 1, "no patches"));
    }
    order
        .into_iter()
        .map(|id| {
            let ps = patches.remove(&id).expect("grouped above");
            EmbeddingBag::new(id, ps)
        })
        .collect()
}

/// Read a cell-fraction table on its own, in file order.
pub fn read_cells_file(path: &Path) -> Result<Vec<(String, [f64; 6])>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let expected = format!("patient_id,{}", CELL_CATEGORIES.join(","));
    if header != expected {
        return Err(parse_err(path, 1, format!("expected header '{expected}'")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(path, lineno, "expected 7 fields"));
        }
        let mut row = [0.0; 6];
        for (k, raw) in fields[1..].iter().enumerate() {
            row[k] = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad fraction '{raw}'")))?;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(parse_err(
                path,
                lineno,
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        out.push((fields[0].to_string(), row));
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no rows"));
    }
    Ok(out)
}

fn read_cells(
    path: &Path,
    records: &[SurvivalRecord],
    id_order: &HashMap<&str, usize>,
) -> Result<Vec<[f64; 6]>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let expected = format!("patient_id,{}", CELL_CATEGORIES.join(","));
    if header != expected {
        return Err(parse_err(path, 1, format!("expected header '{expected}'")));
    }
    let mut rows: Vec<Option<[f64; 6]>> = vec![None; records.len()];
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(path, lineno, "expected 7 fields"));
        }
        let slot = *id_order.get(fields[0]).ok_or_else(|| {
            Error::Alignment(format!("cells.csv names unknown patient_id '{}'", fields[0]))
        })?;
        let mut row = [0.0; 6];
        for (k, raw) in fields[1..].iter().enumerate() {
            row[k] = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad fraction '{raw}'")))?;
        }
        rows[slot] = Some(row);
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.ok_or_else(|| {
                Error::Alignment(format!(
                    "cells.csv missing patient_id '{}'",
                    records[i].patient_id
                ))
            })
        })
        .collect()
}

// ── Checkpoints and reports ─────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    kind: String,
    checksum: String,
    payload: serde_json::Value,
}

fn checksum_of(version: u32, kind: &str, payload: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(version.to_le_bytes());
    hasher.update(kind.as_bytes());
    hasher.update(serde_json::to_string(payload).expect("payload serializes"));
    hex::encode(hasher.finalize())
}

fn save_document<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    let payload = serde_json::to_value(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        checksum: checksum_of(FORMAT_VERSION, kind, &payload),
        payload,
    };
    let text = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn load_document<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let envelope: Envelope = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: envelope.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if envelope.kind != kind {
        return Err(Error::InvalidInput(format!(
            "expected a {kind} document, found {}",
            envelope.kind
        )));
    }
    let expect = checksum_of(envelope.format_version, &envelope.kind, &envelope.payload);
    if expect != envelope.checksum {
        return Err(Error::CorruptCheckpoint(format!(
            "{}: checksum mismatch",
            path.display()
        )));
    }
    serde_json::from_value(envelope.payload)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: bad payload: {e}", path.display())))
}

/// Persist any fitted model as a versioned, checksummed JSON checkpoint.
pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    save_document(path, "model", model)
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    load_document(path, "model")
}

pub fn save_report(path: &Path, report: &CvReport) -> Result<()> {
    save_document(path, "cv_report", report)
}

pub fn load_report(path: &Path) -> Result<CvReport> {
    load_document(path, "cv_report")
}

pub fn save_stratification(path: &Path, strat: &StratificationResult) -> Result<()> {
    save_document(path, "stratification", strat)
}

pub fn load_stratification(path: &Path) -> Result<StratificationResult> {
    load_document(path, "stratification")
}

// ── Kaplan-Meier exports ────────────────────────────────────────────────────

/// `time,survival,group` CSV of one or more KM curves.
pub fn km_curves_to_csv(groups: &[(String, KmCurve)]) -> String {
    let mut out = String::from("time,survival,group\n");
    for (name, curve) in groups {
        out.push_str(&format!("0,1,{name}\n"));
        for p in &curve.points {
            out.push_str(&format!("{},{},{name}\n", p.time, p.survival));
        }
    }
    out
}

const SVG_COLORS: [&str; 6] = [
    "#1b6ca8", "#c0392b", "#27852e", "#8e44ad", "#b7770d", "#16727a",
];

/// Dependency-free SVG step plot of one or more KM curves.
pub fn km_curves_to_svg(groups: &[(String, KmCurve)], title: &str) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let t_max = groups
        .iter()
        .flat_map(|(_, c)| c.points.last().map(|p| p.time))
        .fold(1.0_f64, f64::max);

    let x_of = |t: f64| left + plot_w * (t / t_max).min(1.0);
    let y_of = |s: f64| top + plot_h * (1.0 - s);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>\n",
        left + plot_w / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        top + plot_h
    ));
    for k in 0..=5 {
        let s = k as f64 / 5.0;
        let y = y_of(s);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{s:.1}</text>\n",
            left - 6.0,
            y + 4.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{left}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            left - 4.0
        ));
        let t = t_max * s;
        let x = x_of(t);
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{t:.1}</text>\n",
            top + plot_h + 16.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            top + plot_h,
            top + plot_h + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">time (months)</text>\n",
        left + plot_w / 2.0,
        h - 12.0
    ));

    for (gi, (name, curve)) in groups.iter().enumerate() {
        let color = SVG_COLORS[gi % SVG_COLORS.len()];
        let mut d = format!("M {:.2} {:.2}", x_of(0.0), y_of(1.0));
        let mut s_prev = 1.0;
        for p in &curve.points {
            d.push_str(&format!(" H {:.2}", x_of(p.time)));
            d.push_str(&format!(" V {:.2}", y_of(p.survival)));
            s_prev = p.survival;
        }
        d.push_str(&format!(" H {:.2}", x_of(t_max)));
        let _ = s_prev;
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            left + plot_w - 150.0,
            top + 8.0 + 18.0 * gi as f64
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            left + plot_w - 132.0,
            top + 18.0 + 18.0 * gi as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Attention heatmap export: a coordinate-tagged SVG scatter where marker
/// area tracks the rollout weight.
pub fn attention_svg(rows: &[(String, f64, Option<(i64, i64)>)]) -> String {
    let coords: Vec<(f64, f64, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, (_, w, c))| match c {
            Some((x, y)) => (*x as f64, *y as f64, *w),
            None => ((i % 16) as f64, (i / 16) as f64, *w),
        })
        .collect();
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y, _) in &coords {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let span_x = (x_max - x_min).max(1.0);
    let span_y = (y_max - y_min).max(1.0);
    let w_max = coords.iter().map(|c| c.2).fold(1e-12_f64, f64::max);

    let mut svg = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"520\" viewBox=\"0 0 520 520\">\n",
    );
    for &(x, y, wgt) in &coords {
        let px = 20.0 + 480.0 * (x - x_min) / span_x;
        let py = 20.0 + 480.0 * (y - y_min) / span_y;
        let r = 2.0 + 10.0 * (wgt / w_max).sqrt();
        let alpha = 0.25 + 0.75 * wgt / w_max;
        svg.push_str(&format!(
            "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"{r:.2}\" fill=\"#c0392b\" fill-opacity=\"{alpha:.3}\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::KmPoint;
    use crate::synth::{generate_synthetic, SyntheticSpec};

    #[test]
    fn cohort_round_trip_is_identity() {
        let spec = SyntheticSpec::default_cohort(15, 8);
        let bundle = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort(dir.path(), &bundle).unwrap();
        for file in ["records.csv", "features.csv", "bags.ndjson", "cells.csv"] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        let back = read_cohort(dir.path()).unwrap();
        assert_eq!(bundle, back);

        // Writing the same bundle twice is byte-identical.
        let dir2 = tempfile::tempdir().unwrap();
        write_cohort(dir2.path(), &bundle).unwrap();
        for file in ["records.csv", "features.csv", "bags.ndjson", "cells.csv"] {
            let a = std::fs::read(dir.path().join(file)).unwrap();
            let b = std::fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between writes");
        }
    }

    #[test]
    fn unknown_patient_id_names_the_id() {
        let spec = SyntheticSpec::default_cohort(5, 2);
        let bundle = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort(dir.path(), &bundle).unwrap();

        let features_path = dir.path().join("features.csv");
        let text = std::fs::read_to_string(&features_path).unwrap();
        std::fs::write(&features_path, text.replace("p001", "p999")).unwrap();
        match read_cohort(dir.path()) {
            Err(Error::Alignment(message)) => assert!(message.contains("p999"), "{message}"),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn mutation_column_must_be_binary() {
        let spec = SyntheticSpec::default_cohort(5, 3);
        let bundle = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort(dir.path(), &bundle).unwrap();

        let features_path = dir.path().join("features.csv");
        let text = std::fs::read_to_string(&features_path).unwrap();
        // First feature column is mut_01; corrupt the first data row's value.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
        fields[1] = "2".into();
        lines[1] = fields.join(",");
        std::fs::write(&features_path, lines.join("\n") + "\n").unwrap();
        match read_cohort(dir.path()) {
            Err(Error::Parse { message, line, .. }) => {
                assert!(message.contains("mut_01"), "{message}");
                assert_eq!(line, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn km_csv_has_group_rows() {
        let curve = KmCurve {
            points: vec![
                KmPoint { time: 1.0, survival: 0.75, at_risk: 4, events: 1 },
                KmPoint { time: 2.5, survival: 0.5, at_risk: 3, events: 1 },
            ],
        };
        let csv = km_curves_to_csv(&[("q1".into(), curve.clone()), ("q2".into(), curve)]);
        assert!(csv.starts_with("time,survival,group\n"));
        assert_eq!(csv.matches(",q1\n").count(), 3);
        assert_eq!(csv.matches(",q2\n").count(), 3);
    }

    #[test]
    fn km_svg_is_deterministic_and_wellformed() {
        let curve = KmCurve {
            points: vec![KmPoint { time: 3.0, survival: 0.6, at_risk: 5, events: 2 }],
        };
        let groups = vec![("q1".to_string(), curve)];
        let a = km_curves_to_svg(&groups, "hazard strata");
        let b = km_curves_to_svg(&groups, "hazard strata");
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("hazard strata"));
    }
}
