//! Target-network staleness, sync cadence and replay warm-up, observed
//! through the public training API.

use rand::Rng;
use rssloc_core::dqn::{compute_targets, init_pair, train, train_step, DqnConfig, ReplayMemory, TrainingSeeds};
use rssloc_core::env::{generate_trajectories, EnvConfig, ExperienceTuple, StateVector, Trajectory};
use rssloc_core::grid::gateway_grid_layout;
use rssloc_core::neural::SgdConfig;
use rssloc_core::radio::{ChannelModel, NoiseModel, Simulator};
use rssloc_core::{seed, Action, ActionSet, Gateway, GridMap, PathLossParams, Position};

fn setup(trajectories: usize, length: usize) -> (GridMap, Vec<Gateway>, Vec<Trajectory>) {
    let map = GridMap::new(4, 4, 5.0, Position::new(0.0, 0.0)).unwrap();
    let gws = gateway_grid_layout(2, 2, 10.0, 10.0, Position::new(5.0, 5.0));
    let channel = ChannelModel::uniform(PathLossParams::default(), gws.len(), NoiseModel::new(4.0).unwrap());
    let sim = Simulator { gateways: &gws, channel: &channel };
    let data = generate_trajectories(&map, &sim, trajectories, length, 99).unwrap();
    (map, gws, data)
}

fn random_tuples(n: usize, width: usize, seed: u64) -> Vec<ExperienceTuple> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| ExperienceTuple {
            phi_prev: StateVector((0..width).map(|_| rng.random::<f64>()).collect()),
            action: Action::from_index(rng.random_range(0..Action::COUNT)).unwrap(),
            reward: rng.random_range(-5.0..1.0),
            phi_next: StateVector((0..width).map(|_| rng.random::<f64>()).collect()),
            next_available: ActionSet::from_bits(rng.random_range(1..512)),
        })
        .collect()
}

#[test]
fn targets_frozen_between_syncs() {
    let cfg = DqnConfig { hidden: vec![16, 16], target_sync: 100, ..Default::default() };
    let mut pair = init_pair(&cfg, 4, 1).unwrap();
    let tuples = random_tuples(64, 6, 2);
    let mut memory = ReplayMemory::new(1000, 32).unwrap();
    for t in tuples.clone() {
        memory.push(t);
    }
    let probe: Vec<&ExperienceTuple> = tuples.iter().take(20).collect();
    let frozen = compute_targets(&probe, &pair.target_net, cfg.gamma).unwrap();
    let start = pair.q_net.clone();
    let sgd = SgdConfig::new(0.01).unwrap();
    let mut rng = seed::rng(3);

    for k in 1..=250u64 {
        let batch = memory.sample_minibatch(32, &mut rng).unwrap();
        train_step(&mut pair, &batch, cfg.gamma, &sgd).unwrap();
        let synced = pair.record_update(cfg.target_sync);
        assert_eq!(synced, k % 100 == 0, "update {k}");
        if k % 100 == 0 {
            assert_eq!(pair.target_net, pair.q_net, "bitwise agreement after sync at {k}");
        } else if k < 100 {
            assert_ne!(pair.q_net, start);
            let again = compute_targets(&probe, &pair.target_net, cfg.gamma).unwrap();
            assert!(again.iter().zip(&frozen).all(|(a, b)| a.to_bits() == b.to_bits()));
        } else {
            assert_ne!(pair.target_net, pair.q_net);
        }
    }
}

#[test]
fn training_syncs_on_multiples_of_g() {
    let (map, gws, data) = setup(4, 50);
    let base = DqnConfig {
        hidden: vec![8, 8],
        replay_capacity: 500,
        replay_start: 20,
        minibatch: 8,
        target_sync: 10,
        ..Default::default()
    };
    let seeds = TrainingSeeds { init: 5, exploration: 6 };
    // 2 episodes of 50 steps: tuples reach 20 at global step 20, so
    // updates = max_steps - 20.
    for (max_steps, expect_synced) in [(60, true), (63, false), (100, true)] {
        let cfg = DqnConfig { max_steps: Some(max_steps), ..base.clone() };
        let (pair, log) = train(&data, &map, &gws, &EnvConfig::default(), &cfg, seeds).unwrap();
        assert_eq!(log.updates.len() as u64, max_steps - 20);
        assert_eq!(pair.target_net == pair.q_net, expect_synced, "max_steps {max_steps}");
    }
}

#[test]
fn no_update_before_replay_warm() {
    let (map, gws, data) = setup(27, 100);
    // Table III replay settings; small network to keep the test quick.
    let cfg = DqnConfig { hidden: vec![8], ..Default::default() };
    assert_eq!((cfg.replay_capacity, cfg.replay_start), (10_000, 2_500));
    let (_, log) = train(&data, &map, &gws, &EnvConfig::default(), &cfg, TrainingSeeds { init: 1, exploration: 2 }).unwrap();
    // Each 100-step episode adds 99 tuples: 25 episodes give 2475, and the
    // 2500th arrives at step 25 of episode 26, global step 2525.
    assert_eq!(log.updates[0].step, 2525);
    assert_eq!(log.updates.len(), 2700 - 2525);
    assert_eq!(log.env_steps, 2700);
    assert!(log.updates.windows(2).all(|w| w[1].step == w[0].step + 1));
    assert_eq!(log.updates[0].epsilon, cfg.schedule(2700).unwrap().at(2525));
}
