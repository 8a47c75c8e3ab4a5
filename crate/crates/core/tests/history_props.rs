use ibn_core::history::{AttemptFields, AttemptKey, HistoryStore, KpiPoint, Outcome, StrategyAttempt};
use ibn_core::prompt::{ConfigChange, StrategyDecision, Verdict};
use proptest::prelude::*;

fn key(cell: &str) -> AttemptKey {
    AttemptKey {
        target_name: "RANEnergyEfficiency".into(),
        cell_id: cell.into(),
    }
}

fn attempt(id: String, cell: &str, iteration: u32, before: f64, after: Option<f64>) -> StrategyAttempt {
    StrategyAttempt::new(AttemptFields {
        attempt_id: id,
        intent_id: "intent-x".into(),
        key: key(cell),
        iteration_index: iteration,
        timestamp_tick: u64::from(iteration) * 5,
        observed_before: KpiPoint {
            tx_power_dbm: 30.0,
            ee_bits_per_joule: before,
        },
        decision: StrategyDecision::new(
            vec![ConfigChange {
                object_path: format!("SubNetwork_1/{cell}"),
                parameter: "txPower".into(),
                value: 20.0,
            }],
            "",
            Verdict::Continue,
        )
        .unwrap(),
        observed_after: after.map(|ee| KpiPoint {
            tx_power_dbm: 20.0,
            ee_bits_per_joule: ee,
        }),
    })
}

/// Selection sort driven by explicit pairwise preference.
fn oracle_rank(store: &[StrategyAttempt], key: &AttemptKey, k: usize) -> Vec<StrategyAttempt> {
    let mut pool: Vec<(usize, &StrategyAttempt)> = store.iter().enumerate().filter(|(_, a)| &a.key() == key).collect();
    let better = |x: &(usize, &StrategyAttempt), y: &(usize, &StrategyAttempt)| -> bool {
        let xi = x.1.outcome() == Outcome::Improved;
        let yi = y.1.outcome() == Outcome::Improved;
        if xi != yi {
            return xi;
        }
        let xe = x.1.observed_after().map(|p| p.ee_bits_per_joule);
        let ye = y.1.observed_after().map(|p| p.ee_bits_per_joule);
        match (xe, ye) {
            (Some(a), Some(b)) if a != b => return a > b,
            (Some(_), None) => return true,
            (None, Some(_)) => return false,
            _ => {}
        }
        if x.0 != y.0 {
            return x.0 > y.0;
        }
        x.1.attempt_id() < y.1.attempt_id()
    };
    let mut out = Vec::new();
    while !pool.is_empty() && out.len() < k {
        let mut best = 0;
        for i in 1..pool.len() {
            if better(&pool[i], &pool[best]) {
                best = i;
            }
        }
        out.push(pool.remove(best).1.clone());
    }
    out
}

#[test]
fn best_of_three_reached_values() {
    let mut s = HistoryStore::in_memory();
    for (i, ee) in [765_000.0, 799_000.0, 802_000.0].into_iter().enumerate() {
        s.append(attempt(format!("a{i}"), "Cell_1", i as u32 + 1, 700_000.0, Some(ee))).unwrap();
    }
    let top = s.query_top_k(&key("Cell_1"), 1);
    assert_eq!(top.len(), 1);
    assert_eq!(top[0].observed_after().unwrap().ee_bits_per_joule, 802_000.0);
    assert_eq!(top, oracle_rank(s.attempts(), &key("Cell_1"), 1));
    assert_eq!(s.query_top_k(&key("Cell_1"), 10).len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ranking_matches_oracle(
        rows in prop::collection::vec(
            (prop::sample::select(vec!["Cell_1", "Cell_2"]), 1u32..8, 0u8..4, prop::option::of(0u8..6)),
            0..25,
        ),
        k in 1usize..8,
    ) {
        let mut s = HistoryStore::in_memory();
        for (i, (cell, iteration, before, after)) in rows.into_iter().enumerate() {
            let before = 700_000.0 + f64::from(before) * 20_000.0;
            let after = after.map(|a| 700_000.0 + f64::from(a) * 15_000.0);
            s.append(attempt(format!("id{:03}", 99 - i), cell, iteration, before, after)).unwrap();
        }
        for cell in ["Cell_1", "Cell_2"] {
            let got = s.query_top_k(&key(cell), k);
            prop_assert_eq!(&got, &oracle_rank(s.attempts(), &key(cell), k));
            prop_assert!(got.iter().all(|a| a.key() == key(cell)));
            let by_iter = s.attempts_for(&key(cell));
            prop_assert!(by_iter.windows(2).all(|w| w[0].iteration_index() <= w[1].iteration_index()));
        }
    }

    #[test]
    fn outcome_label_follows_observations(before in 1.0f64..1e7, after in prop::option::of(1.0f64..1e7)) {
        let a = attempt("x".into(), "Cell_1", 1, before, after);
        let expected = match after {
            None => Outcome::Error,
            Some(x) if x > before * (1.0 + 1e-6) => Outcome::Improved,
            Some(x) if x < before * (1.0 - 1e-6) => Outcome::Worsened,
            Some(_) => Outcome::NoChange,
        };
        prop_assert_eq!(a.outcome(), expected);
        let text = serde_json::to_string(&a).unwrap();
        let back: StrategyAttempt = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, a);
    }
}

#[test]
fn tampered_outcome_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attempts.jsonl");
    let a = attempt("x".into(), "Cell_1", 1, 765_493.0, Some(799_756.0));
    let line = serde_json::to_string(&a).unwrap().replace("\"Improved\"", "\"Worsened\"");
    std::fs::write(&path, format!("{line}\n")).unwrap();
    assert!(HistoryStore::open(&path).is_err());
}
