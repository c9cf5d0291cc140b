//! Aggregated bench metrics as a text table and as JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::tasks::{Method, TaskFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallStats {
    pub trials: usize,
    /// Programs that raised an evaluation error; they count as misses.
    pub failures: usize,
    /// Fraction of trials with horizontal error strictly below each threshold.
    pub recall: Vec<f64>,
    /// Mean horizontal error over trials that produced a goal.
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub sigma: f64,
    pub family: TaskFamily,
    pub method: Method,
    pub stats: RecallStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavRow {
    pub sigma: f64,
    /// Tasks whose true goal can be reached from the start.
    pub reachable_goals: usize,
    pub single_goal_success: f64,
    pub episodes: usize,
    pub subgoals: usize,
    /// Entry `k - 1`: fraction of episodes whose first `k` subgoals all succeeded.
    pub chained_success: Vec<f64>,
    /// Fraction of all subgoals that succeeded.
    pub independent_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub scenes: usize,
    pub thresholds_m: Vec<f64>,
    pub indexing: Vec<IndexRow>,
    pub navigation: Vec<NavRow>,
}

impl MetricReport {
    pub fn row(&self, sigma: f64, family: TaskFamily, method: Method) -> Option<&IndexRow> {
        self.indexing
            .iter()
            .find(|r| r.sigma == sigma && r.family == family && r.method == method)
    }

    /// Invariant-level checks, one line per violation: recall is a rate that
    /// grows with the threshold, noiseless runs are exact, fusing a second
    /// cue never loses recall, chained success never grows with more
    /// subgoals, and noiseless single goals are always reached.
    pub fn check(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for r in &self.indexing {
            let tag = format!("sigma {} {} {}", r.sigma, r.family.name(), r.method.name());
            if r.stats.recall.iter().any(|v| !(0.0..=1.0).contains(v)) {
                bad.push(format!("{tag}: recall outside [0, 1]"));
            }
            if r.stats.recall.windows(2).any(|w| w[1] < w[0]) {
                bad.push(format!("{tag}: recall decreases with the threshold"));
            }
            if r.sigma == 0.0 && r.method == Method::Fused && r.stats.recall.first() != Some(&1.0) {
                bad.push(format!("{tag}: noiseless recall below 100%"));
            }
            if r.method == Method::Fused {
                if let Some(single) = self.row(r.sigma, r.family, Method::Single) {
                    for (i, (f, s)) in r.stats.recall.iter().zip(&single.stats.recall).enumerate() {
                        if f < s {
                            bad.push(format!(
                                "{tag}: fused recall {:.1}% below single {:.1}% at {} m",
                                100.0 * f,
                                100.0 * s,
                                self.thresholds_m[i]
                            ));
                        }
                    }
                }
            }
        }
        for n in &self.navigation {
            let rates = n.chained_success.iter().chain([&n.single_goal_success, &n.independent_success]);
            if rates.into_iter().any(|v| !(0.0..=1.0).contains(v)) {
                bad.push(format!("sigma {}: navigation rate outside [0, 1]", n.sigma));
            }
            if n.chained_success.windows(2).any(|w| w[1] > w[0]) {
                bad.push(format!("sigma {}: chained success grows with more subgoals", n.sigma));
            }
            if n.sigma == 0.0 && n.single_goal_success != 1.0 {
                bad.push(format!(
                    "sigma 0: {:.1}% single-goal navigation success",
                    100.0 * n.single_goal_success
                ));
            }
        }
        bad
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "modalmap bench  seed {}  scenes per noise level {}", self.seed, self.scenes);
        let _ = writeln!(out);
        let _ = writeln!(out, "Indexing recall (horizontal error below threshold)");
        let mut header = format!("{:>6}  {:<14} {:<7} {:>6} {:>5}", "sigma", "task", "method", "trials", "err");
        for t in &self.thresholds_m {
            let _ = write!(header, " {:>7}", format!("R@{t:.1}"));
        }
        let _ = write!(header, " {:>9}", "mean m");
        let _ = writeln!(out, "{header}");
        for r in &self.indexing {
            let _ = write!(
                out,
                "{:>6.2}  {:<14} {:<7} {:>6} {:>5}",
                r.sigma,
                r.family.name(),
                r.method.name(),
                r.stats.trials,
                r.stats.failures
            );
            for v in &r.stats.recall {
                let _ = write!(out, " {:>6.1}%", 100.0 * v);
            }
            match r.stats.mean_distance {
                Some(d) => {
                    let _ = writeln!(out, " {d:>9.3}");
                }
                None => {
                    let _ = writeln!(out, " {:>9}", "-");
                }
            }
        }
        if !self.navigation.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Navigation (success: stop within 1 m of the true goal)");
            let _ = writeln!(
                out,
                "{:>6}  {:>9} {:>7} {:>8}  {:<24} {:>11}",
                "sigma", "reachable", "single", "episodes", "chained (k = 1..)", "independent"
            );
            for r in &self.navigation {
                let chained: Vec<String> = r.chained_success.iter().map(|v| format!("{:.1}%", 100.0 * v)).collect();
                let _ = writeln!(
                    out,
                    "{:>6.2}  {:>9} {:>6.1}% {:>8}  {:<24} {:>10.1}%",
                    r.sigma,
                    r.reachable_goals,
                    100.0 * r.single_goal_success,
                    r.episodes,
                    chained.join(" "),
                    100.0 * r.independent_success
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Synthetic scenes with planted embeddings; numbers measure the fusion and \
             planning logic, not a learned model."
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricReport {
        MetricReport {
            seed: 1,
            scenes: 2,
            thresholds_m: vec![0.5, 1.0],
            indexing: vec![IndexRow {
                sigma: 0.1,
                family: TaskFamily::ObjectSound,
                method: Method::Fused,
                stats: RecallStats {
                    trials: 16,
                    failures: 0,
                    recall: vec![0.75, 1.0],
                    mean_distance: Some(0.25),
                },
            }],
            navigation: vec![NavRow {
                sigma: 0.1,
                reachable_goals: 16,
                single_goal_success: 1.0,
                episodes: 8,
                subgoals: 2,
                chained_success: vec![1.0, 0.5],
                independent_success: 0.75,
            }],
        }
    }

    #[test]
    fn checks_flag_violations() {
        let mut r = report();
        assert!(r.check().is_empty());
        let mut single = r.indexing[0].clone();
        single.method = Method::Single;
        single.stats.recall = vec![0.8, 0.9];
        r.indexing.push(single);
        r.navigation[0].chained_success = vec![0.5, 0.6];
        let bad = r.check();
        assert_eq!(bad.len(), 2, "{bad:?}");
        assert!(bad[0].contains("below single"));
        assert!(bad[1].contains("chained"));
    }

    #[test]
    fn json_round_trips() {
        let r = report();
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn text_lists_rows() {
        let t = report().to_text();
        assert!(t.contains("object-sound"));
        assert!(t.contains("75.0%"));
        assert!(t.contains("100.0% 50.0%"));
        assert!(report().row(0.1, TaskFamily::ObjectSound, Method::Fused).is_some());
        assert!(report().row(0.3, TaskFamily::ObjectSound, Method::Fused).is_none());
    }
}
