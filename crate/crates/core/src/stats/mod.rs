//! Censored time-to-event estimators and hypothesis tests.
//!
//! Provides the concordance index, Kaplan-Meier product-limit curves, the
//! k-group log-rank test, Mann-Whitney U, one-sample and paired t-tests, and
//! Student-t fold confidence intervals. Everything in this module is pure and
//! deterministic; ties are handled by the Breslow convention (tied events
//! share a risk set, censoring at an event time counts as still at risk).

mod concordance;
mod kaplan_meier;
mod log_rank;
mod rank_tests;

pub use concordance::concordance_index;
pub use kaplan_meier::kaplan_meier;
pub use log_rank::log_rank_test;
pub use rank_tests::mann_whitney_u;
pub use t_tests::{fold_ci, fold_ci_unit, t_test_one_sample, t_test_paired};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient's follow-up: observed time in months and whether the event
/// (resistance) was observed (`true`) or the record is censored (`false`).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub patient_id: String,
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(patient_id: impl Into<String>, time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "follow-up time must be a positive real, got {time}"
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            time,
            event,
        })
    }
}

/// Risk sets over a cohort: for each distinct event time `t`, the records with
/// `time >= t` (Breslow convention — tied events share the same risk set).
#[derive(Debug, Clone)]
pub struct RiskSetIndex {
    /// Distinct event times, ascending.
    event_times: Vec<f64>,
    /// All record indices ordered by time descending (stable by index).
    order_desc: Vec<usize>,
    /// Per event time: how many entries of `order_desc` are at risk.
    at_risk_len: Vec<usize>,
    /// Per event time: indices of the records with an event at that time.
    events_at: Vec<Vec<usize>>,
    n_events: usize,
}

impl RiskSetIndex {
    pub fn build(records: &[SurvivalRecord]) -> Self {
        let mut order_desc: Vec<usize> = (0..records.len()).collect();
        order_desc.sort_by(|&a, &b| {
            records[b]
                .time
                .partial_cmp(&records[a].time)
                .unwrap()
                .then(a.cmp(&b))
        });

        let mut event_times: Vec<f64> = records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.time)
            .collect();
        event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        event_times.dedup();

        let mut at_risk_len = Vec::with_capacity(event_times.len());
        let mut events_at = Vec::with_capacity(event_times.len());
        for &t in &event_times {
            let len = order_desc.partition_point(|&i| records[i].time >= t);
            at_risk_len.push(len);
            let evts: Vec<usize> = (0..records.len())
                .filter(|&i| records[i].event && records[i].time == t)
                .collect();
            events_at.push(evts);
        }
        let n_events = records.iter().filter(|r| r.event).count();
        Self {
            event_times,
            order_desc,
            at_risk_len,
            events_at,
            n_events,
        }
    }

    /// Distinct event times, ascending.
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Record indices at risk at event time `k` (time ≥ event_times[k]).
    pub fn at_risk(&self, k: usize) -> &[usize] {
        &self.order_desc[..self.at_risk_len[k]]
    }

    /// Record indices with an event at event time `k`.
    pub fn events_at(&self, k: usize) -> &[usize] {
        &self.events_at[k]
    }

    /// All record indices sorted by time descending.
    pub fn order_desc(&self) -> &[usize] {
        &self.order_desc
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }
}

/// One step of a Kaplan-Meier curve at an event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmPoint {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

/// Product-limit survival estimate: a right-continuous step function with
/// steps only at event times; S = 1 before the first point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct KmCurve {
    pub points: Vec<KmPoint>,
}

impl KmCurve {
    /// Survival probability at time `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.time <= t)
            .last()
            .map_or(1.0, |p| p.survival)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    LogRank,
    MannWhitneyU,
    TOneSample,
    TPaired,
}

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: Option<f64>,
    pub method: TestMethod,
}

pub(crate) fn require_non_empty(records: &[SurvivalRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: records are empty")));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn rec(id: &str, time: f64, event: bool) -> SurvivalRecord {
    SurvivalRecord::new(id, time, event).unwrap()
}
