//! k-group log-rank test with hypergeometric variance.

use crate::error::{Error, Result};
use crate::numeric::{chi_square_sf, solve_linear};
use crate::stats::{SurvivalRecord, TestMethod, TestResult};

/// Compare survival across `k ≥ 2` groups.
///
/// At each distinct event time the observed events per group are compared to
/// their hypergeometric expectation; the statistic is the quadratic form
/// (O−E)ᵀ V⁻¹ (O−E) over the first k−1 groups, chi-square with k−1 degrees
/// of freedom under the null.
pub fn log_rank_test(groups: &[Vec<SurvivalRecord>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "log_rank_test: needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidInput(format!(
                "log_rank_test: group {g} is empty"
            )));
        }
    }
    let k = groups.len();
    let total_events: usize = groups
        .iter()
        .map(|g| g.iter().filter(|r| r.event).count())
        .sum();
    if total_events == 0 {
        return Err(Error::DegenerateTest(
            "log-rank with zero events overall".into(),
        ));
    }

    // Pool (time, event, group) sorted by time ascending.
    let mut pooled: Vec<(f64, bool, usize)> = Vec::new();
    for (g, members) in groups.iter().enumerate() {
        for r in members {
            pooled.push((r.time, r.event, g));
        }
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut at_risk: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    // Covariance of (O−E) over the first k−1 groups, row-major.
    let mut cov = vec![0.0; (k - 1) * (k - 1)];

    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let mut d_total = 0.0;
        let mut d_group = vec![0.0; k];
        let mut leaving = vec![0.0; k];
        while i < pooled.len() && pooled[i].0 == t {
            let (_, event, g) = pooled[i];
            if event {
                d_total += 1.0;
                d_group[g] += 1.0;
            }
            leaving[g] += 1.0;
            i += 1;
        }
        let n: f64 = at_risk.iter().sum();
        if d_total > 0.0 && n > 0.0 {
            for g in 0..k {
                observed[g] += d_group[g];
                expected[g] += d_total * at_risk[g] / n;
            }
            if n > 1.0 {
                let scale = d_total * (n - d_total) / (n - 1.0);
                for g in 0..k - 1 {
                    for l in 0..k - 1 {
                        let delta = if g == l { at_risk[g] / n } else { 0.0 };
                        cov[g * (k - 1) + l] +=
                            scale * (delta - at_risk[g] * at_risk[l] / (n * n));
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
    }

    let diff: Vec<f64> = (0..k - 1).map(|g| observed[g] - expected[g]).collect();
    let statistic = if diff.iter().all(|d| d.abs() < 1e-10) {
        0.0
    } else {
        match solve_linear(&cov, &diff, k - 1) {
            Some(x) => diff.iter().zip(&x).map(|(d, v)| d * v).sum::<f64>().max(0.0),
            None => {
                // Near-singular covariance: ridge it enough to invert.
                let ridge = 1e-8
                    * (0..k - 1)
                        .map(|g| cov[g * (k - 1) + g])
                        .fold(f64::MIN, f64::max)
                        .max(1e-8);
                let mut reg = cov.clone();
                for g in 0..k - 1 {
                    reg[g * (k - 1) + g] += ridge;
                }
                let x = solve_linear(&reg, &diff, k - 1).ok_or_else(|| {
                    Error::DegenerateTest("log-rank covariance is singular".into())
                })?;
                diff.iter().zip(&x).map(|(d, v)| d * v).sum::<f64>().max(0.0)
            }
        }
    };

    let df = (k - 1) as f64;
    Ok(TestResult {
        statistic,
        p_value: chi_square_sf(statistic, df),
        degrees_of_freedom: Some(df),
        method: TestMethod::LogRank,
    })
}
