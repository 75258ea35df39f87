//! Threshold-driven exit selection and the experiments built on it.

mod stats;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cost_model::{CostReport, ExitId};
use crate::error::{Error, Result};
use crate::predictor::ScorePredictor;
use crate::sim::QualityOracle;

pub use stats::{kde, mean, rank_average, spearman, trapezoid};

impl ScorePredictor for QualityOracle {
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.true_scores(input)
    }
}

/// Cost of every route. Branch `i` (1-based) costs `branch[i - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitCosts {
    branch: Vec<f64>,
    backbone: f64,
    /// Branch indices (0-based) by ascending cost, ties by id.
    order: Vec<usize>,
}

impl ExitCosts {
    pub fn new(branch: Vec<f64>, backbone: f64) -> Result<Self> {
        if branch
            .iter()
            .chain([&backbone])
            .any(|c| !(c.is_finite() && *c > 0.0))
        {
            return Err(Error::Argument("route costs must be positive".into()));
        }
        if let Some(max) = branch.iter().copied().reduce(f64::max) {
            if backbone < max {
                return Err(Error::Argument(format!(
                    "backbone cost {backbone} is below branch cost {max}"
                )));
            }
        }
        let mut order: Vec<usize> = (0..branch.len()).collect();
        order.sort_by(|&a, &b| branch[a].total_cmp(&branch[b]).then(a.cmp(&b)));
        Ok(Self {
            branch,
            backbone,
            order,
        })
    }

    /// Costs from a cost report, divided by `unit` (e.g. 1e9 for GFLOPs).
    pub fn from_report(report: &CostReport, unit: f64) -> Result<Self> {
        Self::new(
            report
                .per_exit_flops
                .iter()
                .map(|&(_, f)| f as f64 / unit)
                .collect(),
            report.backbone_flops as f64 / unit,
        )
    }

    pub fn branch_count(&self) -> usize {
        self.branch.len()
    }

    pub fn cost(&self, exit: ExitId) -> Option<f64> {
        match exit {
            ExitId::Backbone => Some(self.backbone),
            ExitId::Branch(id) => (id as usize)
                .checked_sub(1)
                .and_then(|i| self.branch.get(i))
                .copied(),
        }
    }

    pub fn branch_costs(&self) -> &[f64] {
        &self.branch
    }

    pub fn backbone_cost(&self) -> f64 {
        self.backbone
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub threshold: f64,
    pub costs: ExitCosts,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub chosen_exit: ExitId,
    pub predicted_score: f64,
    pub cost: f64,
}

/// Cheapest exit whose predicted score is within the threshold; the backbone
/// (score 0 by definition) when none is.
pub fn select_exit(scores: &[f64], policy: &RoutingPolicy) -> Result<RoutingOutcome> {
    let costs = &policy.costs;
    if scores.len() != costs.branch.len() {
        return Err(Error::shape(format!(
            "{} scores for {} branches",
            scores.len(),
            costs.branch.len()
        )));
    }
    Ok(costs
        .order
        .iter()
        .find(|&&i| scores[i] <= policy.threshold)
        .map(|&i| RoutingOutcome {
            chosen_exit: ExitId::Branch(i as u32 + 1),
            predicted_score: scores[i],
            cost: costs.branch[i],
        })
        .unwrap_or(RoutingOutcome {
            chosen_exit: ExitId::Backbone,
            predicted_score: 0.0,
            cost: costs.backbone,
        }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Per exit, branches first and the backbone last.
    pub exit_counts: Vec<usize>,
    pub total_cost: f64,
    pub mean_cost: f64,
    /// Fraction of inputs whose true score at the chosen exit exceeds the
    /// threshold. Backbone choices never count.
    pub violation_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub branch_count: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `threshold,exit_1..exit_B,backbone,total_flops,mean_flops,violation_rate`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold");
        for b in 1..=self.branch_count {
            let _ = write!(out, ",exit_{b}");
        }
        out.push_str(",backbone,total_flops,mean_flops,violation_rate\n");
        for r in &self.rows {
            let _ = write!(out, "{}", r.threshold);
            for c in &r.exit_counts {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(
                out,
                ",{},{},{}",
                r.total_cost, r.mean_cost, r.violation_rate
            );
        }
        out
    }

    /// `(threshold, mean cost)` pairs.
    pub fn cost_curve(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .map(|r| (r.threshold, r.mean_cost))
            .collect()
    }

    pub fn mean_violation_rate(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.violation_rate))
    }
}

fn predict_all<I, P>(inputs: &[I], model: &P, branches: usize) -> Result<Vec<Vec<f64>>>
where
    I: AsRef<[f64]>,
    P: ScorePredictor + ?Sized,
{
    inputs
        .iter()
        .map(|x| {
            let s = model.predict(x.as_ref())?;
            if s.len() != branches {
                return Err(Error::shape(format!(
                    "predictor emits {} scores for {branches} branches",
                    s.len()
                )));
            }
            Ok(s)
        })
        .collect()
}

fn score_at(scores: &[f64], exit: ExitId) -> f64 {
    match exit {
        ExitId::Backbone => 0.0,
        ExitId::Branch(id) => scores[id as usize - 1],
    }
}

/// Route every input at every threshold using `model`'s predictions, and
/// account violations against `truth`.
pub fn sweep<I, P, T>(
    inputs: &[I],
    model: &P,
    truth: &T,
    costs: &ExitCosts,
    thresholds: &[f64],
) -> Result<SweepReport>
where
    I: AsRef<[f64]>,
    P: ScorePredictor + ?Sized,
    T: ScorePredictor + ?Sized,
{
    let b = costs.branch_count();
    let predicted = predict_all(inputs, model, b)?;
    let actual = predict_all(inputs, truth, b)?;
    sweep_scores(&predicted, &actual, costs, thresholds)
}

/// [`sweep`] over precomputed predicted and true score vectors.
pub fn sweep_scores(
    predicted: &[Vec<f64>],
    actual: &[Vec<f64>],
    costs: &ExitCosts,
    thresholds: &[f64],
) -> Result<SweepReport> {
    if predicted.is_empty() || thresholds.is_empty() {
        return Err(Error::Argument("sweep needs inputs and thresholds".into()));
    }
    let b = costs.branch_count();
    if predicted.len() != actual.len() || actual.iter().any(|t| t.len() != b) {
        return Err(Error::shape("true scores do not match the predictions"));
    }
    let n = predicted.len() as f64;

    let rows = thresholds
        .iter()
        .map(|&threshold| {
            let policy = RoutingPolicy {
                threshold,
                costs: costs.clone(),
            };
            let mut exit_counts = vec![0usize; b + 1];
            let mut total_cost = 0.0;
            let mut violations = 0usize;
            for (p, t) in predicted.iter().zip(actual) {
                let out = select_exit(p, &policy)?;
                exit_counts[out.chosen_exit.ordinal(b) - 1] += 1;
                total_cost += out.cost;
                if score_at(t, out.chosen_exit) > threshold {
                    violations += 1;
                }
            }
            Ok(SweepRow {
                threshold,
                exit_counts,
                total_cost,
                mean_cost: total_cost / n,
                violation_rate: violations as f64 / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        branch_count: b,
        rows,
    })
}

/// Single-branch versus predictor-routed score distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub exit: u32,
    /// Mean of the single-branch distribution, used as the routing threshold.
    pub threshold: f64,
    pub single_branch: Vec<f64>,
    pub routed: Vec<f64>,
    pub single_exceedance: f64,
    pub routed_exceedance: f64,
}

impl Ablation {
    /// `source,score` rows for both distributions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,score\n");
        for s in &self.single_branch {
            let _ = writeln!(out, "branch_{},{s}", self.exit);
        }
        for s in &self.routed {
            let _ = writeln!(out, "predictor,{s}");
        }
        out
    }
}

fn exceedance(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

/// Compare true scores when every input goes through `exit` against true
/// scores at the exits the predictor picks when asked to enforce the mean of
/// the first distribution.
pub fn branch_vs_predictor<I, P, T>(
    inputs: &[I],
    model: &P,
    truth: &T,
    costs: &ExitCosts,
    exit: u32,
) -> Result<Ablation>
where
    I: AsRef<[f64]>,
    P: ScorePredictor + ?Sized,
    T: ScorePredictor + ?Sized,
{
    let b = costs.branch_count();
    if exit == 0 || exit as usize > b {
        return Err(Error::Lookup(format!("exit id {exit}")));
    }
    if inputs.is_empty() {
        return Err(Error::Argument("no inputs".into()));
    }
    let actual = predict_all(inputs, truth, b)?;
    let predicted = predict_all(inputs, model, b)?;
    let single_branch: Vec<f64> = actual.iter().map(|t| t[exit as usize - 1]).collect();
    let threshold = mean(single_branch.iter().copied());
    let policy = RoutingPolicy {
        threshold,
        costs: costs.clone(),
    };
    let routed = predicted
        .iter()
        .zip(&actual)
        .map(|(p, t)| Ok(score_at(t, select_exit(p, &policy)?.chosen_exit)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ablation {
        exit,
        threshold,
        single_exceedance: exceedance(&single_branch, threshold),
        routed_exceedance: exceedance(&routed, threshold),
        single_branch,
        routed,
    })
}

/// Spearman correlation between a per-input attribute and the position
/// (1..=B+1, backbone last) of the exit chosen at `threshold`.
pub fn difficulty_correlation<I, P>(
    inputs: &[I],
    model: &P,
    costs: &ExitCosts,
    threshold: f64,
    attributes: &[f64],
) -> Result<f64>
where
    I: AsRef<[f64]>,
    P: ScorePredictor + ?Sized,
{
    if attributes.len() != inputs.len() {
        return Err(Error::shape(format!(
            "{} attributes for {} inputs",
            attributes.len(),
            inputs.len()
        )));
    }
    let b = costs.branch_count();
    let policy = RoutingPolicy {
        threshold,
        costs: costs.clone(),
    };
    let chosen = predict_all(inputs, model, b)?
        .iter()
        .map(|p| Ok(select_exit(p, &policy)?.chosen_exit.ordinal(b) as f64))
        .collect::<Result<Vec<_>>>()?;
    spearman(attributes, &chosen)
}

/// Parse `start:stop:step` (inclusive of `stop` up to rounding) or a comma
/// list into a strictly increasing threshold list.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Argument(format!("threshold spec `{spec}`: {m}"));
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad("not a number"))
    };
    let list = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // trim accumulated binary error so 0.2:1:0.2 yields 0.6, not 0.6000000000000001
        (0..count)
            .map(|i| {
                let v = start + i as f64 * step;
                format!("{v:.12e}").parse().unwrap_or(v)
            })
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if list.is_empty() {
        return Err(bad("empty"));
    }
    if list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("thresholds must be strictly increasing"));
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_costs() -> ExitCosts {
        ExitCosts::new(vec![120.0, 138.0, 168.0, 227.0], 319.0).unwrap()
    }

    fn policy(threshold: f64) -> RoutingPolicy {
        RoutingPolicy {
            threshold,
            costs: reference_costs(),
        }
    }

    #[test]
    fn cheapest_satisfying_exit() {
        let out = select_exit(&[0.15, 0.12, 0.08, 0.05], &policy(0.1)).unwrap();
        assert_eq!(out.chosen_exit, ExitId::Branch(3));
        assert_eq!(out.cost, 168.0);
        assert_eq!(out.predicted_score, 0.08);
    }

    #[test]
    fn infinite_threshold_takes_cheapest() {
        let out = select_exit(&[9.0, 9.0, 9.0, 9.0], &policy(f64::INFINITY)).unwrap();
        assert_eq!(out.chosen_exit, ExitId::Branch(1));
    }

    #[test]
    fn falls_back_to_backbone() {
        let out = select_exit(&[0.5, 0.4, 0.3, 0.2], &policy(0.1)).unwrap();
        assert_eq!(out.chosen_exit, ExitId::Backbone);
        assert_eq!(out.cost, 319.0);
        assert_eq!(out.predicted_score, 0.0);
    }

    #[test]
    fn equal_costs_tie_to_lowest_id() {
        let p = RoutingPolicy {
            threshold: 1.0,
            costs: ExitCosts::new(vec![5.0, 3.0, 3.0], 10.0).unwrap(),
        };
        let out = select_exit(&[0.0, 0.5, 0.5], &p).unwrap();
        assert_eq!(out.chosen_exit, ExitId::Branch(2));
    }

    #[test]
    fn shape_and_cost_validation() {
        assert!(matches!(
            select_exit(&[0.1], &policy(0.1)),
            Err(Error::Shape(_))
        ));
        assert!(ExitCosts::new(vec![1.0, 0.0], 2.0).is_err());
        assert!(ExitCosts::new(vec![1.0, 3.0], 2.0).is_err());
    }

    fn table(x: &[f64]) -> Result<Vec<f64>> {
        // input x[0] in [0, 1] maps to scores falling across exits
        let d = x[0];
        Ok((1..=4)
            .map(|e| (d * 0.3 - 0.05 * e as f64).max(0.001))
            .collect())
    }

    #[test]
    fn perfect_predictor_never_violates() {
        let inputs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 49.0]).collect();
        let ts = parse_thresholds("0.02:0.2:0.02").unwrap();
        let rep = sweep(&inputs, &table, &table, &reference_costs(), &ts).unwrap();
        assert_eq!(rep.rows.len(), 10);
        for r in &rep.rows {
            assert_eq!(r.violation_rate, 0.0);
            assert_eq!(r.exit_counts.iter().sum::<usize>(), 50);
        }
    }

    #[test]
    fn looser_threshold_never_costs_more() {
        let inputs = vec![vec![0.7]];
        let rep = sweep(&inputs, &table, &table, &reference_costs(), &[0.05, 0.15]).unwrap();
        assert!(rep.rows[1].total_cost <= rep.rows[0].total_cost);
    }

    #[test]
    fn sweep_csv_layout() {
        let inputs = vec![vec![0.2], vec![0.9]];
        let rep = sweep(&inputs, &table, &table, &reference_costs(), &[0.1]).unwrap();
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "threshold,exit_1,exit_2,exit_3,exit_4,backbone,total_flops,mean_flops,violation_rate"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 9);
        assert!(sweep(&inputs, &table, &table, &reference_costs(), &[]).is_err());
    }

    #[test]
    fn ablation_with_perfect_predictor() {
        let inputs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 39.0]).collect();
        let a = branch_vs_predictor(&inputs, &table, &table, &reference_costs(), 1).unwrap();
        assert_eq!(a.routed_exceedance, 0.0);
        assert!(a.single_exceedance > 0.0);
        assert!(branch_vs_predictor(&inputs, &table, &table, &reference_costs(), 5).is_err());
    }

    #[test]
    fn ablation_degenerates_when_predictor_always_accepts() {
        let inputs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let optimist = |_: &[f64]| Ok(vec![0.0; 4]);
        let a = branch_vs_predictor(&inputs, &optimist, &table, &reference_costs(), 1).unwrap();
        assert_eq!(a.single_branch, a.routed);
    }

    #[test]
    fn two_point_correlation() {
        let inputs = vec![vec![0.1], vec![0.9]];
        let rho =
            difficulty_correlation(&inputs, &table, &reference_costs(), 0.1, &[1.0, 2.0]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert!(matches!(
            difficulty_correlation(&inputs, &table, &reference_costs(), 0.1, &[3.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn threshold_parsing() {
        let t = parse_thresholds("0.02:0.2:0.02").unwrap();
        assert_eq!(t.len(), 10);
        assert!((t[9] - 0.2).abs() < 1e-12);
        assert_eq!(parse_thresholds("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        for bad in ["", "0.3,0.1", "1:0:0.1", "0:1:0", "a:b:c", "0:1"] {
            assert!(parse_thresholds(bad).is_err(), "{bad}");
        }
    }
}
