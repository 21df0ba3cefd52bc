//! Upload-gate statistics on a small classification federation.

use safl::data::ClassificationTask;
use safl::{Algorithm, Federation, GateConfig, GateReference, LrSchedule, Objective, PartitionSpec, SimConfig, Simulation};

fn federation(seed: u64) -> Federation {
    let population = ClassificationTask {
        samples_per_class: 200,
        dim: 4,
        classes: 3,
        separation: 1.0,
        noise_std: 1.0,
    }
    .generate(seed)
    .unwrap();
    let obj = Objective::logistic(4, 3, 0.01).unwrap();
    let specs = [
        PartitionSpec::new(8, 30.0, 4.0, 3, seed),
        PartitionSpec::new(4, 30.0, 4.0, 1, seed + 1),
    ];
    Federation::partitioned(obj, population, &specs).unwrap()
}

fn extended(seed: u64, rounds: usize, alpha: f64) -> SimConfig {
    SimConfig {
        seed,
        gate: GateConfig { nu: 0.05, ..Default::default() },
        ..SimConfig::new(12, rounds, Algorithm::SaflExtended, LrSchedule::Constant { alpha })
    }
}

#[test]
fn upload_count_matches_expected_within_four_sigma() {
    let mut uploads = 0usize;
    let mut expected = 0.0;
    let mut variance = 0.0;
    for seed in 0..5 {
        let fed = federation(seed);
        let mut sim = Simulation::new(extended(seed, 200, 0.2), &fed).unwrap();
        for _ in 0..200 {
            for dev in sim.devices() {
                let q = dev.gate.q();
                expected += q;
                variance += q * (1.0 - q);
            }
            uploads += sim.run_round().unwrap().uploads;
        }
    }
    assert!(expected <= (5 * 200 * 12) as f64);
    let dev = (uploads as f64 - expected).abs();
    assert!(dev <= 4.0 * variance.sqrt(), "uploads {uploads}, expected {expected:.1}, sd {:.1}", variance.sqrt());
}

#[test]
fn upload_probability_tracks_last_gap() {
    let fed = federation(7);
    let cfg = extended(7, 50, 0.2);
    let nu = cfg.gate.nu;
    let mut sim = Simulation::new(cfg, &fed).unwrap();
    let mut rates = Vec::new();
    for _ in 0..50 {
        let q: Vec<f64> = sim.devices().iter().map(|d| d.gate.q()).collect();
        let rec = sim.run_round().unwrap();
        rates.push((rec.uploads as f64, q.iter().sum::<f64>(), q.iter().map(|q| q * (1.0 - q)).sum::<f64>()));
        for dev in sim.devices() {
            if let Some(gap) = dev.last_gap {
                assert_eq!(dev.gate.q(), (-gap / nu).exp());
            }
        }
    }
    let (hits, mean, var) = rates.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
    assert!((hits - mean).abs() <= 3.0 * var.sqrt() + 1e-9);
}

#[test]
fn unchanged_models_always_upload() {
    // A lone device's aggregate is its own update, so against the current
    // global model the gap is always zero.
    let fed = federation(3);
    let one = Federation::new(fed.objective, fed.population.clone(), vec![fed.shards[0].clone()]);
    let cfg = SimConfig {
        gate: GateConfig { nu: 0.05, reference: GateReference::Current, ..Default::default() },
        ..SimConfig::new(1, 30, Algorithm::SaflExtended, LrSchedule::Constant { alpha: 0.3 })
    };
    let mut sim = Simulation::new(cfg, &one).unwrap();
    for _ in 0..30 {
        let rec = sim.run_round().unwrap();
        assert_eq!(rec.uploads, 1);
        assert_eq!(sim.devices()[0].last_gap, Some(0.0));
        assert_eq!(sim.devices()[0].gate.q(), 1.0);
    }
}

#[test]
fn first_round_uploads_everything() {
    let fed = federation(5);
    let mut sim = Simulation::new(extended(5, 1, 0.5), &fed).unwrap();
    let rec = sim.run_round().unwrap();
    assert_eq!(rec.uploads, 12);
}
