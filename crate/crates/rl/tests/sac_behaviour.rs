use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlbus_core::dynamics::{AdmissibleBox, Vector};
use rlbus_rl::buffer::{ReplayBuffer, Transition};
use rlbus_rl::sac::{EntropyCoef, SacAgent, SacConfig};

#[test]
fn critic_reaches_geometric_series_on_a_one_state_mdp() {
    let (reward, discount) = (0.5, 0.9);
    let cfg = SacConfig {
        actor_hidden: vec![8],
        critic_hidden: vec![16],
        critic_lr: 3e-3,
        actor_lr: 1e-3,
        tau: 0.05,
        entropy: EntropyCoef::Fixed(0.0),
        batch_size: 32,
        seed: 7,
        ..Default::default()
    };
    let bx = AdmissibleBox::symmetric(1.5).unwrap();
    let mut agent: SacAgent<1, 1> = SacAgent::new(cfg, discount, &bx).unwrap();
    let mut buf = ReplayBuffer::new(1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Vector::<1>::new(0.0);
    for _ in 0..1000 {
        let u = Vector::<1>::new(rng.random_range(-1.5..=1.5));
        buf.push(Transition { x, u, r: reward, x_next: x }).unwrap();
    }
    for _ in 0..5000 {
        agent.update(&buf).unwrap();
    }
    let expected = reward / (1.0 - discount);
    for u in [-1.0, 0.0, 1.0] {
        for q in agent.critic_values(&x, &Vector::<1>::new(u)) {
            assert!((q - expected).abs() <= 0.01 * expected, "Q(0, {u}) = {q}, expected {expected}");
        }
    }
}

proptest! {
    #[test]
    fn actions_stay_in_the_box(x0 in -50.0f64..50.0, x1 in -50.0f64..50.0, seed in 0u64..1000) {
        let bx = AdmissibleBox::new(Vector::<1>::new(-0.5), Vector::<1>::new(2.0)).unwrap();
        let mut agent: SacAgent<2, 1> =
            SacAgent::new(SacConfig { actor_hidden: vec![8], critic_hidden: vec![8], seed, ..Default::default() }, 0.99, &bx)
                .unwrap();
        let x = Vector::<2>::new(x0, x1);
        prop_assert!(bx.contains(&agent.act(&x)));
        prop_assert!(bx.contains(&agent.act_mean(&x)));
    }
}
