mod common;

use common::*;
use declist::costmin::{min_cost_equivalent, MinCostOptions};
use declist::data::bin;
use declist::regime::{parse, render, sample_equivalent, RegimeDoc};
use declist::search::{find_list, NoVariance, SearchConfig, SearchInput};
use declist::value::RegimeValue;
use declist::{value, DecisionList};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn best_clause_matches_enumeration(seed in any::<u64>()) {
        let inst = clause_instance(seed);
        prop_assert_eq!(check_best_clause(&inst), Ok(()));
    }

    #[test]
    fn min_cost_matches_enumeration(seed in any::<u64>()) {
        let inst = mincost_instance(seed);
        prop_assert_eq!(check_min_cost(&inst), Ok(()));
    }

    #[test]
    fn pruning_never_changes_the_optimum(seed in any::<u64>()) {
        let inst = mincost_instance(seed);
        let pruned = min_cost_equivalent(&inst.pi, &inst.covariates, &inst.costs, MinCostOptions::new(2));
        let full = min_cost_equivalent(&inst.pi, &inst.covariates, &inst.costs, MinCostOptions { prune: false, ..MinCostOptions::new(2) });
        prop_assert!((pruned.cost - full.cost).abs() < 1e-12);
        prop_assert!(pruned.nodes_visited <= full.nodes_visited);
        prop_assert!(pruned.cost <= pruned.original_cost + 1e-12);
    }

    #[test]
    fn negation_is_pointwise_complement(seed in any::<u64>()) {
        prop_assert_eq!(check_negation(seed, 50), Ok(()));
    }

    #[test]
    fn binning_round_trips(seed in any::<u64>()) {
        prop_assert_eq!(check_binning(seed), Ok(()));
    }

    #[test]
    fn search_dominates_best_constant(seed in any::<u64>(), l_max in 0usize..4) {
        let inst = clause_instance(seed);
        let bins = bin(&inst.covariates, &inst.grid).unwrap();
        let input = SearchInput {
            covariates: &inst.covariates,
            xi: &inst.xi,
            bins: &bins,
            grid: &inst.grid,
            variance: &NoVariance,
        };
        let cfg = SearchConfig { l_max, ..SearchConfig::default() };
        let (list, trace) = find_list(&input, &cfg).unwrap();
        let best_constant = (0..inst.xi.m()).map(|a| inst.xi.constant_value(a)).fold(f64::MIN, f64::max);
        let v = inst.xi.value_of(&list.recommend(&inst.covariates));
        prop_assert!(v >= best_constant - 1e-12);
        prop_assert!(list.len() <= l_max);
        prop_assert_eq!(&trace.nodes[trace.selected].list, &list);
        for &k in &trace.finals {
            prop_assert!(trace.nodes[k].value <= v + 1e-12);
        }
    }

    #[test]
    fn render_parse_and_json_round_trip(seed in any::<u64>()) {
        let inst = mincost_instance(seed);
        let names = inst.covariates.names().to_vec();
        let labels: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let text = render(&inst.pi, &names, &labels);
        let back: DecisionList = parse(&text, &names, &labels).unwrap();
        prop_assert_eq!(&back, &inst.pi);
        let doc = RegimeDoc::from_list(&inst.pi, &names, &labels);
        let json = serde_json::to_string(&doc).unwrap();
        let doc2: RegimeDoc = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(doc2.to_list(&names).unwrap(), inst.pi.clone());
    }

    #[test]
    fn min_cost_result_is_sample_equivalent(seed in any::<u64>()) {
        let inst = mincost_instance(seed);
        let r = min_cost_equivalent(&inst.pi, &inst.covariates, &inst.costs, MinCostOptions::new(3));
        prop_assert!(sample_equivalent(&r.list, &inst.pi, &inst.covariates));
        prop_assert!(r.incumbents.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn list_value_is_mean_of_selected_pseudo_outcomes(seed in any::<u64>()) {
        let inst = clause_instance(seed);
        let list = DecisionList::constant(inst.xi.m() - 1);
        let got = value::value(&inst.xi, &list, &inst.covariates);
        prop_assert_eq!(got, RegimeValue::Finite(inst.xi.constant_value(inst.xi.m() - 1)));
    }
}

#[test]
fn best_clause_with_real_valued_pseudo_outcomes() {
    use rand::{Rng, SeedableRng};
    for seed in 0..50u64 {
        let mut inst = clause_instance(seed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let rows: Vec<Vec<f64>> = (0..inst.xi.n())
            .map(|_| (0..inst.xi.m()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        inst.xi = declist::PseudoOutcomeMatrix::from_rows(rows);
        let bins = bin(&inst.covariates, &inst.grid).unwrap();
        let got = declist::search::best_clause(&inst.active, &inst.xi, &bins, &inst.grid, inst.min_region);
        let want = exhaustive_best_score(&inst);
        match (got, want) {
            (None, None) => {}
            (Some(c), Some(w)) => assert!((c.score - w).abs() < 1e-9, "seed {seed}: {} vs {w}", c.score),
            (g, w) => panic!("seed {seed}: {g:?} vs {w:?}"),
        }
    }
}
