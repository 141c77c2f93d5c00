//! Per-method summaries and the stability/efficiency trade-off score.

use serde::{Deserialize, Serialize};

use crate::planner::Outcome;

/// One row of the per-run results file. Wall-clock timing is kept out of
/// the serialized row so that identical runs give identical rows; it lives
/// in a separate timings file and is joined back in by the batch reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub method: String,
    pub repeat: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub traveled: f64,
    pub straight_line: f64,
    pub delta_l: f64,
    pub phi_max_deg: f64,
    pub tipover: bool,
    pub iterations: usize,
    pub fallbacks: usize,
    pub message: String,
    #[serde(skip)]
    pub mean_plan_ms: f64,
}

impl RunRecord {
    pub fn key(&self) -> (String, String, usize) {
        (self.scenario.clone(), self.method.clone(), self.repeat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TradeoffNormalization {
    /// Min-max across the methods being compared.
    BatchMinMax,
    /// Divide by fixed references and clamp to `[0, 1]`.
    FixedReference { phi_ref_deg: f64, delta_ref: f64 },
}

impl Default for TradeoffNormalization {
    fn default() -> Self {
        TradeoffNormalization::BatchMinMax
    }
}

pub const DEFAULT_PHI_REF_DEG: f64 = 45.0;
pub const DEFAULT_DELTA_REF: f64 = 20.0;

pub fn fixed_reference() -> TradeoffNormalization {
    TradeoffNormalization::FixedReference {
        phi_ref_deg: DEFAULT_PHI_REF_DEG,
        delta_ref: DEFAULT_DELTA_REF,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub method: String,
    /// Runs counted, infeasible scenarios excluded.
    pub runs: usize,
    pub infeasible: usize,
    pub success_rate: f64,
    /// Over successful runs; NaN when there are none.
    pub mean_delta_l: f64,
    pub mean_phi_max_deg: f64,
    pub tradeoff: f64,
    pub mean_plan_ms: f64,
    pub tipovers: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Sum in a canonical order so the result does not depend on input order.
fn sorted_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    mean(v.into_iter())
}

fn summarize(method: &str, runs: &[&RunRecord]) -> MetricsSummary {
    let counted: Vec<&&RunRecord> = runs.iter().filter(|r| r.outcome != Outcome::Infeasible).collect();
    let n = counted.len();
    let successes: Vec<&&&RunRecord> = counted.iter().filter(|r| r.outcome == Outcome::Success).collect();
    let success_rate = if n == 0 {
        f64::NAN
    } else {
        100.0 * successes.len() as f64 / n as f64
    };
    MetricsSummary {
        method: method.to_string(),
        runs: n,
        infeasible: runs.len() - n,
        success_rate,
        mean_delta_l: sorted_mean(successes.iter().map(|r| r.delta_l).collect()),
        mean_phi_max_deg: sorted_mean(counted.iter().map(|r| r.phi_max_deg).collect()),
        tradeoff: f64::NAN,
        mean_plan_ms: sorted_mean(counted.iter().map(|r| r.mean_plan_ms).collect()),
        tipovers: counted.iter().filter(|r| r.tipover).count(),
    }
}

/// `0.5 phi_norm + 0.5 delta_norm` for each summary, in place.
pub fn apply_tradeoff(summaries: &mut [MetricsSummary], norm: TradeoffNormalization) {
    let norm = if summaries.len() < 2 {
        fixed_reference_or(norm)
    } else {
        norm
    };
    match norm {
        TradeoffNormalization::FixedReference { phi_ref_deg, delta_ref } => {
            for s in summaries.iter_mut() {
                let p = (s.mean_phi_max_deg / phi_ref_deg).clamp(0.0, 1.0);
                let d = (s.mean_delta_l / delta_ref).clamp(0.0, 1.0);
                s.tradeoff = 0.5 * p + 0.5 * d;
            }
        }
        TradeoffNormalization::BatchMinMax => {
            let range = |f: &dyn Fn(&MetricsSummary) -> f64| {
                let vals: Vec<f64> = summaries.iter().map(f).filter(|v| v.is_finite()).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            };
            let (plo, phi) = range(&|s| s.mean_phi_max_deg);
            let (dlo, dhi) = range(&|s| s.mean_delta_l);
            let scale = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            for s in summaries.iter_mut() {
                s.tradeoff = 0.5 * scale(s.mean_phi_max_deg, plo, phi) + 0.5 * scale(s.mean_delta_l, dlo, dhi);
            }
        }
    }
}

fn fixed_reference_or(norm: TradeoffNormalization) -> TradeoffNormalization {
    match norm {
        TradeoffNormalization::BatchMinMax => fixed_reference(),
        other => other,
    }
}

/// One summary per method, sorted by method name.
pub fn compute_metrics(results: &[RunRecord], norm: TradeoffNormalization) -> Vec<MetricsSummary> {
    let mut methods: Vec<&str> = results.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut out: Vec<MetricsSummary> = methods
        .iter()
        .map(|m| {
            let runs: Vec<&RunRecord> = results.iter().filter(|r| r.method == *m).collect();
            summarize(m, &runs)
        })
        .collect();
    apply_tradeoff(&mut out, norm);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(method: &str, outcome: Outcome, traveled: f64, phi: f64) -> RunRecord {
        RunRecord {
            scenario: "s".into(),
            method: method.into(),
            repeat: 0,
            seed: 0,
            outcome,
            traveled,
            straight_line: 10.0,
            delta_l: traveled - 10.0,
            phi_max_deg: phi,
            tipover: outcome == Outcome::FailureTipover,
            iterations: 1,
            fallbacks: 0,
            message: String::new(),
            mean_plan_ms: 1.0,
        }
    }

    #[test]
    fn straight_run_has_zero_deviation() {
        let m = compute_metrics(
            &[rec("a", Outcome::Success, 10.0, 5.0)],
            TradeoffNormalization::BatchMinMax,
        );
        assert_eq!(m[0].mean_delta_l, 0.0);
        assert_eq!(m[0].success_rate, 100.0);
        // Single method falls back to fixed references.
        assert_abs_diff_eq!(m[0].tradeoff, 0.5 * 5.0 / 45.0, epsilon = 1e-12);
    }

    #[test]
    fn min_max_endpoints() {
        let runs = vec![
            rec("a", Outcome::Success, 11.0, 10.0),
            rec("b", Outcome::Success, 13.0, 20.0),
        ];
        let m = compute_metrics(&runs, TradeoffNormalization::BatchMinMax);
        assert_eq!((m[0].tradeoff, m[1].tradeoff), (0.0, 1.0));
    }

    #[test]
    fn balanced_three_methods() {
        let runs = vec![
            rec("a", Outcome::Success, 12.0, 0.0),
            rec("b", Outcome::Success, 10.0, 10.0),
            rec("c", Outcome::Success, 11.0, 5.0),
        ];
        let m = compute_metrics(&runs, TradeoffNormalization::BatchMinMax);
        for s in &m {
            assert_abs_diff_eq!(s.tradeoff, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn infeasible_excluded() {
        let runs = vec![
            rec("a", Outcome::Success, 10.0, 1.0),
            rec("a", Outcome::Infeasible, 0.0, 0.0),
            rec("a", Outcome::Timeout, 30.0, 3.0),
        ];
        let m = compute_metrics(&runs, TradeoffNormalization::BatchMinMax);
        assert_eq!(m[0].runs, 2);
        assert_eq!(m[0].infeasible, 1);
        assert_eq!(m[0].success_rate, 50.0);
        assert_eq!(m[0].mean_phi_max_deg, 2.0);
    }
}
