//! Post-processing of round histories: smoothing, time-to-accuracy and
//! strategy comparison.

use serde::{Deserialize, Serialize};

/// Trailing mean; the first `window - 1` entries average what exists so far.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let n = (i + 1).min(window);
            xs[i + 1 - n..=i].iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// Cumulative time of the first point whose smoothed accuracy reaches `target`.
/// Points are `(cumulative seconds, smoothed accuracy)`.
pub fn time_to_accuracy(points: &[(f64, f64)], target: f64) -> Option<f64> {
    points.iter().find(|(_, a)| *a >= target).map(|(t, _)| *t)
}

/// One round of one run, aggregated over clients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub acc: f64,
    pub acc_ma5: f64,
    pub cum_s: f64,
    /// Phase times are the slowest client's.
    pub pull_ms: f64,
    pub train_ms: f64,
    pub push_ms: f64,
    pub agg_ms: f64,
    pub emb_pulled: usize,
    pub emb_pushed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub name: String,
    pub rounds: Vec<RoundSummary>,
}

impl RunSeries {
    pub fn peak_smoothed(&self) -> f64 {
        self.rounds.iter().map(|r| r.acc_ma5).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn tta(&self, target: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.rounds.iter().map(|r| (r.cum_s, r.acc_ma5)).collect();
        time_to_accuracy(&pts, target)
    }

    /// Median of `f` over rounds after the first.
    pub fn median_after_warmup(&self, f: impl Fn(&RoundSummary, f64) -> f64) -> f64 {
        let mut prev = 0.0;
        let mut vals = Vec::new();
        for r in &self.rounds {
            if r.round >= 2 {
                vals.push(f(r, prev));
            }
            prev = r.cum_s;
        }
        median(&mut vals)
    }
}

/// NaN for an empty slice.
pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// How the shared target is derived from the lowest peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetRule {
    /// `factor * min peak`
    Relative(f64),
    /// `min peak - points`
    Absolute(f64),
}

impl Default for TargetRule {
    fn default() -> Self {
        TargetRule::Relative(0.99)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub peak_acc: f64,
    pub max_acc: f64,
    pub target: f64,
    pub tta_s: Option<f64>,
    pub median_round_s: f64,
    pub median_pull_ms: f64,
    pub median_train_ms: f64,
    pub median_push_ms: f64,
    pub median_agg_ms: f64,
}

pub fn compare_strategies(runs: &[RunSeries], rule: TargetRule) -> Vec<ComparisonRow> {
    let min_peak = runs.iter().map(RunSeries::peak_smoothed).fold(f64::INFINITY, f64::min);
    let target = match rule {
        TargetRule::Relative(f) => f * min_peak,
        TargetRule::Absolute(p) => min_peak - p,
    };
    runs.iter()
        .map(|run| ComparisonRow {
            name: run.name.clone(),
            peak_acc: run.peak_smoothed(),
            max_acc: run.rounds.iter().map(|r| r.acc).fold(f64::NEG_INFINITY, f64::max),
            target,
            tta_s: run.tta(target),
            median_round_s: run.median_after_warmup(|r, prev| r.cum_s - prev),
            median_pull_ms: run.median_after_warmup(|r, _| r.pull_ms),
            median_train_ms: run.median_after_warmup(|r, _| r.train_ms),
            median_push_ms: run.median_after_warmup(|r, _| r.push_ms),
            median_agg_ms: run.median_after_warmup(|r, _| r.agg_ms),
        })
        .collect()
}

/// Aligned text version of a comparison.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "strategy", "peak", "target", "tta_s", "round_s", "pull_ms", "train_ms", "push_ms", "agg_ms"
    );
    for r in rows {
        let tta = r.tta_s.map_or("-".to_string(), |t| format!("{t:.3}"));
        out.push_str(&format!(
            "{:<8} {:>8.4} {:>8.4} {:>10} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}\n",
            r.name,
            r.peak_acc,
            r.target,
            tta,
            r.median_round_s,
            r.median_pull_ms,
            r.median_train_ms,
            r.median_push_ms,
            r.median_agg_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[2.0; 7], 5), vec![2.0; 7]);
        let xs = [1.0, 4.0, 2.0];
        assert_eq!(moving_average(&xs, 1), xs.to_vec());
        assert!(moving_average(&[], 5).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let got = moving_average(&xs, 5);
        for i in 0..xs.len() {
            let lo = i.saturating_sub(4);
            let want = xs[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64;
            assert!((got[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn tta_cases() {
        let pts = [(1.0, 0.5), (2.0, 0.7), (4.0, 0.7), (5.0, 0.9)];
        assert_eq!(time_to_accuracy(&pts, 0.4), Some(1.0));
        assert_eq!(time_to_accuracy(&pts, 0.7), Some(2.0));
        assert_eq!(time_to_accuracy(&pts, 0.8), Some(5.0));
        assert_eq!(time_to_accuracy(&pts, 0.95), None);
        let mut last = 0.0;
        for t in [0.1, 0.5, 0.7, 0.8, 0.9] {
            let v = time_to_accuracy(&pts, t).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    fn run(name: &str, accs: &[f64], step_s: f64) -> RunSeries {
        let ma = moving_average(accs, 5);
        RunSeries {
            name: name.into(),
            rounds: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| RoundSummary {
                    round: i + 1,
                    acc: a,
                    acc_ma5: ma[i],
                    cum_s: 10.0 + step_s * (i + 1) as f64,
                    pull_ms: (i + 1) as f64,
                    ..Default::default()
                })
                .collect(),
        }
    }

    #[test]
    fn compare_against_hand_values() {
        let a = run("A", &[0.5, 0.5, 0.5, 0.5, 0.5], 1.0);
        let b = run("B", &[0.2, 0.4, 0.6, 0.8, 1.0], 2.0);
        let rows = compare_strategies(&[a.clone(), b], TargetRule::default());
        // B's smoothed series: .2 .3 .4 .5 .6
        assert_eq!(rows[0].peak_acc, 0.5);
        assert!((rows[1].peak_acc - 0.6).abs() < 1e-12);
        assert!((rows[0].target - 0.495).abs() < 1e-12);
        assert_eq!(rows[0].tta_s, Some(11.0));
        assert_eq!(rows[1].tta_s, Some(18.0));
        assert_eq!(rows[0].median_round_s, 1.0);
        assert_eq!(rows[1].median_round_s, 2.0);
        // pull_ms over rounds 2..=5 is 2,3,4,5
        assert_eq!(rows[0].median_pull_ms, 3.5);
        assert!(rows.iter().all(|r| r.peak_acc <= r.max_acc));

        let single = compare_strategies(std::slice::from_ref(&a), TargetRule::default());
        assert!((single[0].target - 0.99 * 0.5).abs() < 1e-15);
        let twice = compare_strategies(&[a.clone(), a], TargetRule::Absolute(0.01));
        assert_eq!(twice[0], twice[1]);
        assert!((twice[0].target - 0.49).abs() < 1e-12);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
