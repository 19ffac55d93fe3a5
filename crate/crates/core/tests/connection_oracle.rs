use cft_core::connection::{predict_connection_time, time_until_in_range};
use cft_core::mobility::{distance, Heading, VehicleId, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{exit_time_by_bisection, random_vehicle};

const RANGE: f64 = 250.0;

#[test]
fn closed_form_matches_bisection_on_ten_thousand_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 10_000 {
        let a = random_vehicle(&mut rng, 0);
        let b = random_vehicle(&mut rng, 1);
        if distance(&a, &b) > RANGE || (a.heading == b.heading && a.speed == b.speed) {
            continue;
        }
        let closed = predict_connection_time(&a, &b, RANGE)
            .unwrap()
            .finite()
            .unwrap();
        let oracle = exit_time_by_bisection(&a, &b, RANGE);
        worst = worst.max((closed - oracle).abs());
        checked += 1;
    }
    assert!(worst < 1e-6, "worst deviation {worst}");
}

#[test]
fn entry_time_lands_on_the_range_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 2_000 {
        let mut a = random_vehicle(&mut rng, 0);
        let b = random_vehicle(&mut rng, 1);
        a.x += rng.random_range(-2_000.0..2_000.0);
        if distance(&a, &b) <= RANGE {
            continue;
        }
        match time_until_in_range(&a, &b, RANGE) {
            Some(t) => {
                let d = distance(&a.advanced(t), &b.advanced(t));
                assert!((d - RANGE).abs() < 1e-6, "entry at {t} s is {d} m apart");
                let before = distance(&a.advanced(t * (1.0 - 1e-6)), &b.advanced(t * (1.0 - 1e-6)));
                assert!(before >= RANGE - 1e-6);
            }
            None => {
                // never closer than the range along the whole trajectory
                for k in 0..200 {
                    let t = k as f64 * 5.0;
                    assert!(distance(&a.advanced(t), &b.advanced(t)) > RANGE - 1e-9);
                }
            }
        }
        checked += 1;
    }
}

#[test]
fn same_velocity_pairs_are_unbounded() {
    let a = VehicleState {
        id: VehicleId(0),
        lane: 0,
        heading: Heading::East,
        x: 0.0,
        y: 2.5,
        speed: 25.0,
    };
    let b = VehicleState {
        id: VehicleId(1),
        lane: 1,
        x: 120.0,
        y: 7.5,
        ..a
    };
    assert!(predict_connection_time(&a, &b, RANGE)
        .unwrap()
        .is_unbounded());
}
