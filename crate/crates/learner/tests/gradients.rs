use mavic_core::envs::build_env;
use mavic_core::{seeded_rng, with_env, SimRng};
use mavic_learner::update::{actor_gradient, critic_gradient, ActorSample};
use mavic_learner::{Encoder, EncoderSpec, Policy, PolicyShape};
use rand::Rng;
use serde_json::Value;

const STEP: f64 = 1e-5;

fn policy(env: &str, hidden: &[usize], seed: u64) -> Policy {
    let built = build_env(env, &Value::Null).unwrap();
    let shape = with_env!(&built.env, env => PolicyShape::of(env, 2, true));
    let encoder = Encoder::new(EncoderSpec::default(), &built.registry).unwrap();
    let mut p = Policy::new(shape, encoder, hidden, seed);
    // Random, non-zero parameters everywhere (the output layer starts at 0).
    let mut rng = seeded_rng(seed ^ 0xABCD);
    for nets in &mut p.nets {
        for w in nets.actor.params.iter_mut().chain(nets.critic.params.iter_mut()) {
            *w = rng.random_range(-0.8..0.8);
        }
    }
    p
}

fn random_sample(p: &Policy, agent: usize, rng: &mut SimRng) -> ActorSample {
    let n_in = p.nets[agent].actor.input_dim();
    let n_out = p.nets[agent].actor.output_dim();
    let mut mask: Vec<bool> = (0..n_out).map(|_| rng.random_bool(0.7)).collect();
    let macro_id = rng.random_range(0..n_out);
    mask[macro_id] = true;
    ActorSample {
        input: (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
        mask,
        macro_id,
        advantage: rng.random_range(-5.0..5.0),
    }
}

/// Independent surrogate: mean of A log pi(m|x) + coef H(pi(.|x)), with a
/// softmax written out here rather than borrowed from the crate.
fn surrogate(p: &Policy, agent: usize, samples: &[ActorSample], coef: f64) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let logits = p.nets[agent].actor.predict(&s.input);
        let live: Vec<usize> = (0..logits.len()).filter(|&i| s.mask[i]).collect();
        let max = live.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = live.iter().map(|&i| (logits[i] - max).exp()).sum();
        let logp = |i: usize| logits[i] - max - z.ln();
        let entropy: f64 = -live.iter().map(|&i| logp(i).exp() * logp(i)).sum::<f64>();
        total += s.advantage * logp(s.macro_id) + coef * entropy;
    }
    total / samples.len() as f64
}

fn finite_difference(p: &Policy, agent: usize, samples: &[ActorSample], coef: f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.nets[agent].actor.param_count())
        .map(|k| {
            let w = p.nets[agent].actor.params[k];
            q.nets[agent].actor.params[k] = w + STEP;
            let up = surrogate(&q, agent, samples, coef);
            q.nets[agent].actor.params[k] = w - STEP;
            let down = surrogate(&q, agent, samples, coef);
            q.nets[agent].actor.params[k] = w;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn probe(env: &str, hidden: &[usize], probes: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..probes {
        let p = policy(env, hidden, i);
        let mut rng = seeded_rng(1000 + i);
        let agent = rng.random_range(0..p.agent_count());
        let n = rng.random_range(1..4);
        let samples: Vec<_> = (0..n).map(|_| random_sample(&p, agent, &mut rng)).collect();
        let coef = if i % 2 == 0 { 0.0 } else { 0.05 };
        let (g, objective) = actor_gradient(&p, agent, &samples, coef).unwrap();
        assert!((objective - surrogate(&p, agent, &samples, coef)).abs() <= 1e-10);
        worst = worst.max(rel_err(&g, &finite_difference(&p, agent, &samples, coef)));
    }
    worst
}

#[test]
fn tabular_softmax_matches_finite_differences() {
    let worst = probe("chain", &[], 50);
    assert!(worst <= 1e-4, "relative error {worst}");
}

#[test]
fn small_network_matches_finite_differences() {
    let worst = probe("chain", &[6, 5], 30).max(probe("box_pushing", &[8], 20));
    assert!(worst <= 1e-4, "relative error {worst}");
}

#[test]
fn zero_advantage_gives_zero_gradient() {
    let p = policy("chain", &[6], 3);
    let mut rng = seeded_rng(9);
    let mut s = random_sample(&p, 0, &mut rng);
    s.advantage = 0.0;
    let (g, _) = actor_gradient(&p, 0, &[s], 0.0).unwrap();
    assert!(g.iter().all(|x| *x == 0.0));
}

#[test]
fn duplicated_batch_gives_the_single_transition_gradient() {
    let p = policy("chain", &[6], 4);
    let mut rng = seeded_rng(10);
    let s = random_sample(&p, 0, &mut rng);
    let (one, _) = actor_gradient(&p, 0, std::slice::from_ref(&s), 0.01).unwrap();
    for k in [2, 5, 16] {
        let (many, _) = actor_gradient(&p, 0, &vec![s.clone(); k], 0.01).unwrap();
        for (a, b) in one.iter().zip(&many) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn masked_selection_is_an_error() {
    let p = policy("chain", &[], 5);
    let mut rng = seeded_rng(11);
    let mut s = random_sample(&p, 0, &mut rng);
    let n = s.mask.len();
    s.mask = vec![false; n];
    s.mask[(s.macro_id + 1) % n] = true;
    assert!(actor_gradient(&p, 0, &[s], 0.0).is_err());
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let p = policy("chain", &[5], 6);
    let mut rng = seeded_rng(12);
    let n_in = p.nets[0].critic.input_dim();
    let samples: Vec<(Vec<f64>, f64)> = (0..4)
        .map(|_| ((0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(-3.0..3.0)))
        .collect();
    let loss = |q: &Policy| {
        samples
            .iter()
            .map(|(x, y)| 0.5 * (q.nets[0].critic.predict(x)[0] - y).powi(2))
            .sum::<f64>()
            / samples.len() as f64
    };
    let (g, _) = critic_gradient(&p, 0, &samples);
    let mut q = p.clone();
    let fd: Vec<f64> = (0..g.len())
        .map(|k| {
            let w = p.nets[0].critic.params[k];
            q.nets[0].critic.params[k] = w + STEP;
            let up = loss(&q);
            q.nets[0].critic.params[k] = w - STEP;
            let down = loss(&q);
            q.nets[0].critic.params[k] = w;
            (up - down) / (2.0 * STEP)
        })
        .collect();
    assert!(rel_err(&g, &fd) <= 1e-6);
}
