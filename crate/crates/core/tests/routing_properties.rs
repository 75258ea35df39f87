use proptest::prelude::*;

use earlyexit::cost_model::ExitId;
use earlyexit::router::{select_exit, sweep_scores, ExitCosts, RoutingPolicy};

fn costs_strategy() -> impl Strategy<Value = ExitCosts> {
    prop::collection::vec(1.0f64..500.0, 1..6).prop_flat_map(|branch| {
        let max = branch.iter().copied().fold(0.0, f64::max);
        (Just(branch), max..max + 500.0)
            .prop_map(|(b, backbone)| ExitCosts::new(b, backbone).unwrap())
    })
}

fn scenario() -> impl Strategy<Value = (ExitCosts, Vec<f64>, f64)> {
    costs_strategy().prop_flat_map(|c| {
        let b = c.branch_count();
        (Just(c), prop::collection::vec(0.0f64..1.0, b), 0.0f64..1.0)
    })
}

proptest! {
    #[test]
    fn chosen_exit_is_feasible_and_cheapest((costs, scores, threshold) in scenario()) {
        let policy = RoutingPolicy { threshold, costs: costs.clone() };
        let out = select_exit(&scores, &policy).unwrap();
        match out.chosen_exit {
            ExitId::Branch(id) => prop_assert!(scores[id as usize - 1] <= threshold),
            ExitId::Backbone => prop_assert_eq!(out.predicted_score, 0.0),
        }
        // exhaustive scan: nothing feasible is cheaper, and equal costs
        // resolve to the lowest id
        for (i, (&s, &c)) in scores.iter().zip(costs.branch_costs()).enumerate() {
            let id = i as u32 + 1;
            if s <= threshold {
                prop_assert!(c >= out.cost);
                if c == out.cost {
                    prop_assert!(matches!(out.chosen_exit, ExitId::Branch(j) if j <= id));
                }
            }
        }
        prop_assert_eq!(Some(out.cost), costs.cost(out.chosen_exit));
    }

    #[test]
    fn sweep_cost_never_rises_with_threshold(
        (costs, rows) in costs_strategy().prop_flat_map(|c| {
            let b = c.branch_count();
            (Just(c), prop::collection::vec(prop::collection::vec(0.0f64..1.0, b), 1..40))
        }),
        mut thresholds in prop::collection::btree_set(0u32..1000, 2..12),
    ) {
        let ts: Vec<f64> = std::mem::take(&mut thresholds).into_iter().map(|t| f64::from(t) / 1000.0).collect();
        let report = sweep_scores(&rows, &rows, &costs, &ts).unwrap();
        for w in report.rows.windows(2) {
            prop_assert!(w[1].mean_cost <= w[0].mean_cost + 1e-9);
        }
        for r in &report.rows {
            prop_assert_eq!(r.exit_counts.iter().sum::<usize>(), rows.len());
            // predictions equal the truth, so nothing can violate
            prop_assert_eq!(r.violation_rate, 0.0);
        }
    }
}

#[test]
fn published_cost_row_examples() {
    let costs = ExitCosts::new(vec![120.0, 138.0, 168.0, 227.0], 319.0).unwrap();
    let at = |threshold: f64, scores: &[f64]| {
        select_exit(
            scores,
            &RoutingPolicy {
                threshold,
                costs: costs.clone(),
            },
        )
        .unwrap()
    };
    let out = at(0.1, &[0.15, 0.12, 0.08, 0.05]);
    assert_eq!((out.chosen_exit, out.cost), (ExitId::Branch(3), 168.0));
    assert_eq!(
        at(f64::INFINITY, &[0.15, 0.12, 0.08, 0.05]).chosen_exit,
        ExitId::Branch(1)
    );
    let out = at(0.01, &[0.15, 0.12, 0.08, 0.05]);
    assert_eq!((out.chosen_exit, out.cost), (ExitId::Backbone, 319.0));
    assert!(select_exit(
        &[0.1],
        &RoutingPolicy {
            threshold: 0.1,
            costs
        }
    )
    .is_err());
}
