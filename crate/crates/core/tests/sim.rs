use fisst_core::sim::{simulate, track, MeasurementScan, Mode, Scenario};

fn two_targets() -> Scenario {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/two_targets_1d.toml");
    Scenario::load(std::path::Path::new(path)).unwrap()
}

fn without_births(mut text: String) -> Scenario {
    text = text.replace("alpha = 0.0005", "alpha = 0.0").replace("beta = 0.995", "beta = 1.0");
    Scenario::from_toml_str(&text).unwrap()
}

fn scenario_text() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/two_targets_1d.toml")).unwrap()
}

#[test]
fn map_cardinality_is_right_on_most_scans() {
    let mut scenario = two_targets();
    let (mut right, mut total) = (0usize, 0usize);
    for seed in 0..100 {
        scenario.seed = seed;
        let sim = simulate(&scenario);
        let (records, _) = track(&sim.measurements, &scenario).unwrap();
        for (r, t) in records.iter().zip(&sim.truth) {
            right += usize::from(r.map_cardinality == t.targets.len());
            total += 1;
        }
    }
    let rate = right as f64 / total as f64;
    assert!(rate > 0.95, "MAP cardinality right on {rate:.4} of {total} scans");
}

#[test]
fn empty_scans_decay_by_missed_detection_and_survival() {
    let text = scenario_text().replace("alpha = 0.0005", "alpha = 0.0").replace("max_hypotheses = 50", "max_hypotheses = 1000");
    let mut scenario = Scenario::from_toml_str(&text).unwrap();
    scenario.run.pruning = fisst_core::PruningPolicy::none();
    let beta: f64 = 0.995;
    let p_d = 0.98;
    let scans: Vec<MeasurementScan> = (1..=3).map(|scan| MeasurementScan { scan, z: vec![] }).collect();
    let (records, _) = track(&scans, &scenario).unwrap();
    for r in &records {
        let q = {
            let a = beta * (1.0 - p_d);
            let b = 1.0 - beta;
            // each target survives undetected with odds β(1-p_D) : (1-β)
            let mut prev = [0.0, 0.0, 1.0];
            for _ in 0..r.scan {
                let mut next = [0.0; 3];
                for (n, w) in prev.iter().enumerate() {
                    for (s, slot) in next.iter_mut().enumerate().take(n + 1) {
                        let c = if n == 2 && s == 1 { 2.0 } else { 1.0 };
                        *slot += w * c * a.powi(s as i32) * b.powi((n - s) as i32);
                    }
                }
                let z: f64 = next.iter().sum();
                prev = next.map(|x| x / z);
            }
            prev
        };
        for (n, expected) in q.iter().enumerate() {
            let got = r.cardinality.get(&n).copied().unwrap_or(0.0);
            assert!((got - expected).abs() < 1e-10, "scan {} n={n}: {got} vs {expected}", r.scan);
        }
    }
}

#[test]
fn fixed_cardinality_traces_agree_between_modes() {
    let mut fisst = without_births(scenario_text());
    fisst.run.top_k = 1000;
    fisst.run.pruning = fisst_core::PruningPolicy::new(1000, 0.0, false).unwrap();
    let mut homht = fisst.clone();
    homht.run.mode = Mode::Homht;
    for seed in [3, 4] {
        fisst.seed = seed;
        homht.seed = seed;
        let sim = simulate(&fisst);
        let (a, _) = track(&sim.measurements, &fisst).unwrap();
        let (b, _) = track(&sim.measurements, &homht).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.hypotheses.len(), y.hypotheses.len());
            for (h, g) in x.hypotheses.iter().zip(&y.hypotheses) {
                assert_eq!(h.labels, g.labels);
                assert!((h.weight - g.weight).abs() < 1e-10, "scan {}: {} vs {}", x.scan, h.weight, g.weight);
            }
        }
    }
}
