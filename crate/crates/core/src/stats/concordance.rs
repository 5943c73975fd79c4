//! Harrell's concordance index for right-censored data.

use crate::error::{Error, Result};
use crate::stats::{require_non_empty, SurvivalRecord};

/// Fraction of comparable patient pairs ranked correctly by the risk scores.
///
/// A pair (i, j) is comparable iff `time_i < time_j` and patient i had the
/// event (or symmetrically). The patient with the earlier event should carry
/// the strictly higher risk; ties in risk score 0.5 credit.
///
/// Returns [`Error::NoComparablePairs`] when no pair is comparable (single
/// record, or all records censored) — the metric is undefined there, not 0.5.
pub fn concordance_index(records: &[SurvivalRecord], risks: &[f64]) -> Result<f64> {
    require_non_empty(records, "concordance_index")?;
    if records.len() != risks.len() {
        return Err(Error::InvalidInput(format!(
            "concordance_index: {} records but {} risk scores",
            records.len(),
            risks.len()
        )));
    }
    let mut concordant = 0.0;
    let mut comparable = 0u64;
    for i in 0..records.len() {
        if !records[i].event {
            continue;
        }
        for j in 0..records.len() {
            if i == j || records[i].time >= records[j].time {
                continue;
            }
            comparable += 1;
            if risks[i] > risks[j] {
                concordant += 1.0;
            } else if risks[i] == risks[j] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(concordant / comparable as f64)
}
