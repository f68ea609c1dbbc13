use super::{RateSeries, Selector};
use crate::error::{Error, Result};

pub const MIN_RUNS: usize = 10;

/// Linear interpolation between order statistics: position `(n−1)·p` of the sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct PercentileSeries {
    pub times: Vec<f64>,
    pub p10: Vec<f64>,
    pub p50: Vec<f64>,
    pub p90: Vec<f64>,
}

impl PercentileSeries {
    /// `√Σ_t (Δp10² + Δp50² + Δp90²)` against another series on the same times.
    pub fn l2_distance(&self, other: &PercentileSeries) -> Result<f64> {
        if self.times != other.times {
            return Err(Error::invalid("percentile series have different report times"));
        }
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        Ok((sq(&self.p10, &other.p10) + sq(&self.p50, &other.p50) + sq(&self.p90, &other.p90)).sqrt())
    }
}

fn aligned(runs: &[RateSeries]) -> Result<&[f64]> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs"))?;
    if runs.iter().any(|r| r.times != first.times) {
        return Err(Error::invalid("runs have misaligned report times"));
    }
    Ok(&first.times)
}

/// Per-time P10/P50/P90 of `sel` across at least ten runs.
pub fn ensemble_stats(runs: &[RateSeries], sel: Selector) -> Result<PercentileSeries> {
    if runs.len() < MIN_RUNS {
        return Err(Error::invalid(format!("need at least {MIN_RUNS} runs, got {}", runs.len())));
    }
    let times = aligned(runs)?.to_vec();
    let series = runs.iter().map(|r| r.series(sel)).collect::<Result<Vec<_>>>()?;
    let mut out = PercentileSeries {
        times,
        p10: Vec::new(),
        p50: Vec::new(),
        p90: Vec::new(),
    };
    for k in 0..out.times.len() {
        let mut v: Vec<f64> = series.iter().map(|s| s[k]).collect();
        v.sort_by(f64::total_cmp);
        out.p10.push(percentile(&v, 0.1));
        out.p50.push(percentile(&v, 0.5));
        out.p90.push(percentile(&v, 0.9));
    }
    Ok(out)
}

/// Empirical CDF of `sel` at `day` as sorted `(value, fraction ≤ value)` pairs.
/// Values between report times are interpolated linearly from zero at day 0.
pub fn cumulative_cdf(runs: &[RateSeries], sel: Selector, day: f64) -> Result<Vec<(f64, f64)>> {
    let times = aligned(runs)?;
    let horizon = *times.last().ok_or_else(|| Error::invalid("runs have no report times"))?;
    if !(day >= 0.0 && day <= horizon + 1e-9) {
        return Err(Error::invalid(format!("day {day} is outside [0, {horizon}]")));
    }
    let mut vals = Vec::with_capacity(runs.len());
    for r in runs {
        let s = r.series(sel)?;
        let k = times.iter().position(|&t| t >= day - 1e-9).unwrap_or(times.len() - 1);
        let (t0, v0) = if k == 0 { (0.0, 0.0) } else { (times[k - 1], s[k - 1]) };
        let w = if times[k] > t0 { (day - t0) / (times[k] - t0) } else { 1.0 };
        vals.push(v0 + w.clamp(0.0, 1.0) * (s[k] - v0));
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in vals.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = (i + 1) as f64 / n,
            _ => out.push((*v, (i + 1) as f64 / n)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{Quantity, SimDiagnostics, WellRole, WellSpec};
    use super::*;
    use proptest::prelude::*;

    fn run(rate: f64, times: &[f64]) -> RateSeries {
        let k = times.len();
        let cum: Vec<f64> = times.iter().map(|t| rate * t).collect();
        RateSeries {
            times: times.to_vec(),
            wells: vec![WellSpec::new("P", 0, 0, WellRole::Producer, 300.0)],
            water_rate: vec![vec![rate; k]],
            oil_rate: vec![vec![0.0; k]],
            injection_rate: vec![vec![0.0; k]],
            cum_water: vec![cum],
            cum_oil: vec![vec![0.0; k]],
            cum_injection: vec![vec![0.0; k]],
            diagnostics: SimDiagnostics::default(),
        }
    }

    const T: [f64; 3] = [100.0, 200.0, 300.0];

    #[test]
    fn identical_runs_collapse() {
        let runs: Vec<_> = (0..12).map(|_| run(7.0, &T)).collect();
        let s = ensemble_stats(&runs, Selector::field(Quantity::WaterRate)).unwrap();
        assert_eq!(s.p10, vec![7.0; 3]);
        assert_eq!(s.p50, s.p90);
    }

    #[test]
    fn median_of_one_to_hundred() {
        let runs: Vec<_> = (1..=100).map(|v| run(v as f64, &T)).collect();
        let s = ensemble_stats(&runs, Selector::well(Quantity::WaterRate, 0)).unwrap();
        assert_eq!(s.p50, vec![50.5; 3]);
        assert!((s.p10[0] - 10.9).abs() < 1e-12);
        assert!((s.p90[0] - 90.1).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let few: Vec<_> = (0..5).map(|v| run(v as f64, &T)).collect();
        assert!(ensemble_stats(&few, Selector::field(Quantity::WaterRate)).is_err());
        let mut many: Vec<_> = (0..10).map(|v| run(v as f64, &T)).collect();
        many.push(run(1.0, &[100.0, 200.0, 301.0]));
        assert!(ensemble_stats(&many, Selector::field(Quantity::WaterRate)).is_err());
    }

    #[test]
    fn cdf_examples() {
        let runs: Vec<_> = [0.0, 0.0, 2.0, 4.0].iter().map(|&v| run(v, &T)).collect();
        let c = cumulative_cdf(&runs, Selector::field(Quantity::WaterRate), 300.0).unwrap();
        assert_eq!(c, vec![(0.0, 0.5), (2.0, 0.75), (4.0, 1.0)]);
        let one = cumulative_cdf(&runs[2..3], Selector::field(Quantity::CumWater), 150.0).unwrap();
        assert_eq!(one, vec![(300.0, 1.0)]);
        assert!(cumulative_cdf(&runs, Selector::field(Quantity::CumWater), 301.0).is_err());
    }

    proptest! {
        #[test]
        fn percentiles_are_ordered(rates in proptest::collection::vec(0.0f64..1e4, 10..40)) {
            let runs: Vec<_> = rates.iter().map(|&v| run(v, &T)).collect();
            let s = ensemble_stats(&runs, Selector::field(Quantity::WaterRate)).unwrap();
            for k in 0..3 {
                prop_assert!(s.p10[k] <= s.p50[k] && s.p50[k] <= s.p90[k]);
            }
            let c = cumulative_cdf(&runs, Selector::field(Quantity::CumWater), 250.0).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
        }
    }
}
