mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rampflow::control::{alinea_ideal_rate, saturate_rate, ControlMode, LocalControllerState};
use rampflow::coordination::{delta_t_ml_bound, delta_t_ramp_bound, tradeoff, TradeoffInputs};
use rampflow::ctm::step_with_arrivals;

use common::oracle::{self, rel_err};

const TOL: f64 = 1e-12;

fn tradeoff_inputs(rng: &mut impl Rng) -> TradeoffInputs {
    TradeoffInputs {
        p_event: rng.random_range(0.0..=1.0),
        horizon: rng.random_range(0.01..1.0),
        cell_length: rng.random_range(0.1..1.0),
        rho_c_ds: rng.random_range(20.0..60.0),
        rho_ds: rng.random_range(0.0..120.0),
        q_bar_us: rng.random_range(5.0..100.0),
        q_bar_ds: rng.random_range(5.0..100.0),
        q_ds: rng.random_range(0.0..100.0),
        delta_phi: rng.random_range(0.0..1500.0),
        t_con: rng.random_range(0.0..2.0),
    }
}

fn ml(i: &TradeoffInputs) -> Option<f64> {
    oracle::ml_bound(
        i.horizon, i.cell_length, i.rho_c_ds, i.rho_ds, i.q_bar_us, i.q_bar_ds, i.q_ds,
        i.delta_phi, i.t_con,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ramp_bound_matches(seed in any::<u64>()) {
        let i = tradeoff_inputs(&mut ChaCha8Rng::seed_from_u64(seed));
        let want = oracle::ramp_bound(i.horizon, i.q_bar_us, i.q_bar_ds);
        prop_assert!(rel_err(delta_t_ramp_bound(&i), want) <= TOL);
    }

    #[test]
    fn ml_bound_matches(seed in any::<u64>()) {
        let i = tradeoff_inputs(&mut ChaCha8Rng::seed_from_u64(seed));
        match (delta_t_ml_bound(&i), ml(&i)) {
            (Ok(got), Some(want)) => prop_assert!(rel_err(got, want) <= TOL, "{got} vs {want}"),
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
    }

    #[test]
    fn tradeoff_matches(seed in any::<u64>()) {
        let i = tradeoff_inputs(&mut ChaCha8Rng::seed_from_u64(seed));
        let ramp = oracle::ramp_bound(i.horizon, i.q_bar_us, i.q_bar_ds);
        let want = match ml(&i) {
            Some(m) => i.p_event * m - (1.0 - i.p_event) * ramp > 0.0,
            None => true,
        };
        prop_assert_eq!(tradeoff(&i), want);
    }

    #[test]
    fn alinea_matches(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = LocalControllerState::new(
            rng.random_range(1.0..100.0),
            rng.random_range(20.0..60.0),
            0.0,
            2000.0,
            50.0,
        ).unwrap();
        c.last_ramp_flow = rng.random_range(0.0..2000.0);
        let rho = rng.random_range(0.0..150.0);
        let want = oracle::alinea(c.last_ramp_flow, c.gain, c.target_density, rho);
        prop_assert!(rel_err(alinea_ideal_rate(&c, rho), want) <= TOL);
    }

    #[test]
    fn saturation_matches(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let min_flow = rng.random_range(0.0..400.0);
        let max_flow = rng.random_range(min_flow..2500.0);
        let q_bar = rng.random_range(5.0..100.0);
        let mut c = LocalControllerState::new(20.0, 40.0, min_flow, max_flow, q_bar).unwrap();
        c.mode = [ControlMode::Inactive, ControlMode::DensityControl, ControlMode::DensityAndQueueControl]
            [rng.random_range(0..3)];
        c.desired_queue = rng.random_range(0.0..=q_bar);
        let q_star = if c.mode == ControlMode::DensityAndQueueControl { c.desired_queue } else { 0.0 };
        let ideal = rng.random_range(-500.0..3000.0);
        let q = rng.random_range(0.0..=q_bar);
        let demand = rng.random_range(0.0..3000.0);
        let dt = 15.0 / 3600.0 * rng.random_range(1..=8) as f64;
        let got = saturate_rate(ideal, &c, q, demand, dt);
        let (rate, lower, upper, conflict) =
            oracle::saturate(ideal, min_flow, max_flow, q_bar, q_star, q, demand, dt);
        prop_assert!(rel_err(got.rate, rate) <= TOL, "{} vs {}", got.rate, rate);
        prop_assert!(rel_err(got.lower, lower) <= TOL);
        prop_assert!(rel_err(got.upper, upper) <= TOL);
        prop_assert_eq!(got.queue_conflict, conflict);
    }

    #[test]
    fn ctm_step_matches(seed in any::<u64>(), nonmono in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = common::random_network(&mut rng, nonmono);
        let s = common::random_state(&mut rng, &net);
        let rates: Vec<f64> = net.ramps.iter().map(|r| rng.random_range(0.0..=r.max_flow)).collect();
        let arrivals: Vec<f64> = net.ramps.iter().map(|_| rng.random_range(0.0..3000.0)).collect();
        let next = step_with_arrivals(&net, &s, &rates, &arrivals).unwrap();
        let (rho, q) = oracle::ctm_step(&net, &s.densities, &s.queues, &rates, &arrivals);
        for (a, b) in next.densities.iter().zip(&rho) {
            prop_assert!(rel_err(*a, *b) <= TOL || (a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        for (a, b) in next.queues.iter().zip(&q) {
            prop_assert!(rel_err(*a, *b) <= TOL || (a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}
