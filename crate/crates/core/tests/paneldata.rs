// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use causal_panel::paneldata::{
    aggregate_telemetry, extract_treatment_events, parse_policy_csv, write_policy_csv, EventKind, GroupField,
    PanelDataset, PolicyTimeline, Statistic,
};
use causal_panel::simgen::{generate, ScenarioConfig, UnitConfig};
use common::{date, streaming_means};
use proptest::prelude::*;

fn three_units(seed: u64) -> ScenarioConfig {
    let mut units = vec![
        UnitConfig::new("USA", 5.0, 11.0),
        UnitConfig::new("CAN", 6.0, 12.0),
        UnitConfig::new("MEX", 4.5, 9.0),
    ];
    for u in &mut units {
        u.devices_per_day = 50;
    }
    let mut c = ScenarioConfig::new(date(2020, 3, 1), 10, units, seed);
    c.noise_sigma = 0.3;
    c
}

#[test]
fn panel_cells_match_streaming_means() {
    let s = generate(&three_units(4)).unwrap();
    let oracle = streaming_means(&s, true);
    let panel = aggregate_telemetry(&s.telemetry, &[GroupField::UnitId], "usage_hours", Statistic::Mean).unwrap();
    assert_eq!(panel.n_units(), 3);
    assert_eq!(panel.n_dates(), 10);
    for ((unit, d), m) in &oracle {
        let u = panel.unit_index(unit).unwrap();
        let t = panel.date_index(*d).unwrap();
        let v = panel.value(u, t).unwrap();
        assert!((v - m).abs() < 1e-12, "{unit} {d}: {v} vs {m}");
    }
    let watts = aggregate_telemetry(&s.telemetry, &[GroupField::UnitId], "cpu_watts", Statistic::Mean).unwrap();
    for ((unit, d), m) in streaming_means(&s, false) {
        let v = watts
            .value(watts.unit_index(&unit).unwrap(), watts.date_index(d).unwrap())
            .unwrap();
        assert!((v - m).abs() < 1e-12);
    }
}

#[test]
fn panel_text_round_trip_of_generated_data() {
    let s = generate(&three_units(9)).unwrap();
    let panel = common::unit_panel(&s, "usage_hours");
    let back = PanelDataset::from_text(&panel.to_text()).unwrap();
    assert_eq!(back, panel);
}

fn naive_events(codes: &[u8]) -> (Option<usize>, Option<usize>) {
    let mut act = None;
    let mut deact = None;
    for (i, &c) in codes.iter().enumerate() {
        if act.is_none() {
            if c == 3 {
                act = Some(i);
            }
        } else if c == 2 {
            deact = Some(i);
            break;
        }
    }
    (act, deact)
}

proptest! {
    #[test]
    fn policy_csv_round_trip(
        codes in prop::collection::vec(prop::collection::vec(0u8..=3, 1..40), 1..4),
        offset in 0u64..300,
    ) {
        let start = date(2020, 1, 1) + chrono::Days::new(offset);
        let names = ["USA", "Canada", "United States/California"];
        let timelines: Vec<PolicyTimeline> = codes
            .iter()
            .zip(names)
            .map(|(c, n)| PolicyTimeline::from_start(n, start, c.clone()).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_policy_csv(&timelines, "C2_Workplace closing", &mut buf).unwrap();
        let back = parse_policy_csv(buf.as_slice(), "C2").unwrap();
        prop_assert_eq!(back, timelines);
    }

    #[test]
    fn events_match_naive_scan(codes in prop::collection::vec(0u8..=3, 1..60)) {
        let tl = PolicyTimeline::from_start("X", date(2020, 1, 1), codes.clone()).unwrap();
        let events = extract_treatment_events(&tl);
        let (act, deact) = naive_events(&codes);
        let got_act = events.iter().find(|e| e.kind == EventKind::Activation).map(|e| e.date);
        let got_deact = events.iter().find(|e| e.kind == EventKind::Deactivation).map(|e| e.date);
        prop_assert_eq!(got_act, act.map(|i| tl.dates()[i]));
        prop_assert_eq!(got_deact, deact.map(|i| tl.dates()[i]));
    }

    #[test]
    fn aggregation_ignores_record_order(seed in 0u64..1000, perm_seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut c = three_units(seed);
        c.days = 4;
        for u in &mut c.units {
            u.devices_per_day = 7;
        }
        let s = generate(&c).unwrap();
        let groups = [GroupField::UnitId, GroupField::Chassis];
        let a = aggregate_telemetry(&s.telemetry, &groups, "usage_hours", Statistic::Mean).unwrap();
        let mut shuffled = s.telemetry.clone();
        shuffled.shuffle(&mut common::rng(perm_seed));
        let b = aggregate_telemetry(&shuffled, &groups, "usage_hours", Statistic::Mean).unwrap();
        prop_assert_eq!(a.to_text(), b.to_text());
    }
}
