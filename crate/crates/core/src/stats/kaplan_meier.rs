//! Kaplan-Meier product-limit estimator.

use crate::error::Result;
use crate::stats::{require_non_empty, KmCurve, KmPoint, SurvivalRecord};

/// Product-limit survival estimate.
///
/// Steps occur only at event times. A record censored exactly at an event
/// time still counts as at risk for that time's events (censoring happens
/// "just after" the event).
pub fn kaplan_meier(records: &[SurvivalRecord]) -> Result<KmCurve> {
    require_non_empty(records, "kaplan_meier")?;

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].time.partial_cmp(&records[b].time).unwrap());

    let mut points = Vec::new();
    let mut survival = 1.0;
    let mut at_risk = records.len();
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut events = 0usize;
        let mut leaving = 0usize;
        while i < order.len() && records[order[i]].time == t {
            if records[order[i]].event {
                events += 1;
            }
            leaving += 1;
            i += 1;
        }
        if events > 0 {
            survival *= 1.0 - events as f64 / at_risk as f64;
            points.push(KmPoint {
                time: t,
                survival,
                at_risk,
                events,
            });
        }
        at_risk -= leaving;
    }
    Ok(KmCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rec;

    #[test]
    fn no_events_flat_curve() {
        let records = vec![rec("a", 1.0, false), rec("b", 2.0, false), rec("c", 3.0, false)];
        let km = kaplan_meier(&records).unwrap();
        assert!(km.points.is_empty());
        assert_eq!(km.survival_at(100.0), 1.0);
    }

    #[test]
    fn censoring_tied_at_event_time_stays_at_risk() {
        // Risk sets 4 then 3: S(1) = 3/4, S(2) = 3/4 · 2/3 = 1/2.
        let records = vec![
            rec("a", 1.0, true),
            rec("b", 2.0, true),
            rec("c", 2.0, false),
            rec("d", 3.0, false),
        ];
        let km = kaplan_meier(&records).unwrap();
        assert_eq!(km.points.len(), 2);
        assert!((km.points[0].survival - 0.75).abs() < 1e-12);
        assert_eq!(km.points[0].at_risk, 4);
        assert!((km.points[1].survival - 0.5).abs() < 1e-12);
        assert_eq!(km.points[1].at_risk, 3);
        assert_eq!(km.survival_at(10.0), km.points[1].survival);
    }

    #[test]
    fn all_events_steps_to_zero() {
        let records = vec![rec("a", 1.0, true), rec("b", 2.0, true), rec("c", 3.0, true)];
        let km = kaplan_meier(&records).unwrap();
        let s: Vec<f64> = km.points.iter().map(|p| p.survival).collect();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(s[2].abs() < 1e-12);
    }

    #[test]
    fn matches_empirical_survival_without_censoring() {
        let times = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.3, 5.3];
        let records: Vec<_> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| rec(&format!("p{i}"), t, true))
            .collect();
        let km = kaplan_meier(&records).unwrap();
        for p in &km.points {
            let still_alive = times.iter().filter(|&&t| t > p.time).count();
            assert!((p.survival - still_alive as f64 / times.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn survival_is_monotone_non_increasing() {
        let records = vec![
            rec("a", 1.0, true),
            rec("b", 1.0, false),
            rec("c", 2.5, true),
            rec("d", 2.5, true),
            rec("e", 4.0, false),
            rec("f", 6.0, true),
        ];
        let km = kaplan_meier(&records).unwrap();
        let mut prev = 1.0;
        for p in &km.points {
            assert!(p.survival <= prev + 1e-12);
            assert!((0.0..=1.0).contains(&p.survival));
            prev = p.survival;
        }
    }
}
