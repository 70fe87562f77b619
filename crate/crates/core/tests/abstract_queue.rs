use tetra_aoi_core::analytic::{paoi, paoi_npr, paoi_pr, paoi_prrt};
use tetra_aoi_core::queue::{simulate_abstract, AbstractRunConfig};
use tetra_aoi_core::{Discipline, ModelParams};

const N: u64 = 400_000;
// Each test makes several comparisons; 4 sigma keeps the joint false alarm rate low.
const K: f64 = 4.0;

fn sim(lambda: f64, mu: f64, alpha: f64, d: Discipline, seed: u64) -> tetra_aoi_core::queue::AbstractRun {
    let p = ModelParams::new(lambda, mu, alpha, d).unwrap();
    simulate_abstract(&p, &AbstractRunConfig::new(N, seed)).unwrap()
}

/// M/D/1 FCFS: mean interdeparture 1/lambda plus Pollaczek-Khinchine sojourn.
fn md1_paoi(lambda: f64, mu: f64) -> f64 {
    let rho = lambda * mu;
    1.0 / lambda + mu + lambda * mu * mu / (2.0 * (1.0 - rho))
}

/// Error-free preemptive single buffer as a renewal process: after the first
/// arrival, each arrival restarts service until an interarrival exceeds mu.
fn preemptive_renewal_paoi(lambda: f64, mu: f64) -> f64 {
    let p = (-lambda * mu).exp();
    let short_gap = (1.0 / lambda - (mu + 1.0 / lambda) * p) / (1.0 - p);
    let interdeparture = 1.0 / lambda + (1.0 / p - 1.0) * short_gap + mu;
    interdeparture + mu
}

#[test]
fn fcfs_matches_md1() {
    for (lambda, seed) in [(0.2, 1), (0.5, 2), (0.8, 3)] {
        let r = sim(lambda, 1.0, 0.0, Discipline::Fcfs, seed);
        let m = &r.result.mean_paoi;
        let want = md1_paoi(lambda, 1.0);
        assert!(m.covers(want, K), "lambda {lambda}: {} vs {want} (se {})", m.mean, m.std_error);
        assert_eq!(r.out_of_order, 0);
        assert_eq!(r.result.losses.total(), 0);
    }
}

#[test]
fn blocking_buffer_without_errors() {
    for (lambda, mu) in [(0.1, 1.0), (1.0, 0.5), (3.0, 0.2)] {
        let r = sim(lambda, mu, 0.0, Discipline::Npr, 7);
        // Idle wait, one service, plus the previous service.
        let want = 1.0 / lambda + 2.0 * mu;
        assert!(r.result.mean_paoi.covers(want, K), "{} vs {want}", r.result.mean_paoi.mean);
        let closed = paoi_npr(&ModelParams::new(lambda, mu, 0.0, Discipline::Npr).unwrap()).unwrap();
        assert!((closed.paoi - want).abs() < 1e-12);
    }
}

#[test]
fn preemptive_buffer_without_errors() {
    for (lambda, mu) in [(0.3, 1.0), (1.5, 1.0), (4.0, 0.25)] {
        let want = preemptive_renewal_paoi(lambda, mu);
        for d in [Discipline::Pr, Discipline::Prrt] {
            let params = ModelParams::new(lambda, mu, 0.0, d).unwrap();
            let closed = paoi(&params).unwrap().unwrap().paoi;
            assert!((closed / want - 1.0).abs() < 1e-12, "{d}: {closed} vs {want}");
            let r = sim(lambda, mu, 0.0, d, 11);
            assert!(r.result.mean_paoi.covers(want, K), "{d}: {} vs {want}", r.result.mean_paoi.mean);
        }
    }
}

#[test]
fn closed_forms_track_simulation_with_errors() {
    for d in [Discipline::Pr, Discipline::Prrt, Discipline::Npr] {
        for (lambda, alpha) in [(0.2, 0.2), (0.9, 0.3)] {
            let params = ModelParams::new(lambda, 1.0, alpha, d).unwrap();
            let closed = paoi(&params).unwrap().unwrap().paoi;
            let r = simulate_abstract(&params, &AbstractRunConfig::new(N, 5)).unwrap();
            let m = &r.result.mean_paoi;
            assert!(m.covers(closed, K), "{d} {lambda} {alpha}: {} vs {closed}", m.mean);
            // Only PRRT retransmits a failed update.
            assert_eq!(r.mean_attempts > 1.0, d == Discipline::Prrt);
        }
    }
}

#[test]
fn retransmission_beats_dropping_when_updates_are_rare() {
    let p = |d| ModelParams::new(0.05, 1.0, 0.4, d).unwrap();
    let pr = paoi_pr(&p(Discipline::Pr)).unwrap().paoi;
    let prrt = paoi_prrt(&p(Discipline::Prrt)).unwrap().paoi;
    assert!(prrt < pr);
}

#[test]
fn every_update_is_accounted_for() {
    for d in Discipline::ALL {
        let r = sim(0.7, 1.0, 0.25, d, 13).result;
        assert_eq!(r.generated, r.delivered + r.losses.total() + r.in_flight, "{d}");
        assert!(r.delivered >= N);
        r.check_conservation().unwrap();
        assert!((r.plr_breakdown().sum() - r.plr()).abs() < 1e-15);
    }
}

#[test]
fn same_seed_same_result() {
    let a = sim(0.4, 1.0, 0.1, Discipline::Replace2, 99);
    let b = sim(0.4, 1.0, 0.1, Discipline::Replace2, 99);
    assert_eq!(a.result.mean_paoi.mean.to_bits(), b.result.mean_paoi.mean.to_bits());
    assert_eq!(a.events, b.events);
    let c = sim(0.4, 1.0, 0.1, Discipline::Replace2, 100);
    assert_ne!(a.result.mean_paoi.mean, c.result.mean_paoi.mean);
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(ModelParams::new(0.0, 1.0, 0.1, Discipline::Pr).is_err());
    assert!(ModelParams::new(0.5, -1.0, 0.1, Discipline::Pr).is_err());
    assert!(ModelParams::new(0.5, 1.0, 1.0, Discipline::Pr).is_err());
    let fcfs = ModelParams::new(0.5, 1.0, 0.1, Discipline::Fcfs).unwrap();
    assert!(paoi(&fcfs).is_none());
}
