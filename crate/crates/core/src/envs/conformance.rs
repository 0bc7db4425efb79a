//! Generic checks every environment must pass.

use rand::Rng;

use crate::engine::RunningMacro;
use crate::error::Result;
use crate::instructions::{ArrivalProcess, InstructionRegistry, SampledArrivals, NULL_CLASS};
use crate::model::{AgentHistory, EnvModel, TerminationContext};
use crate::rollout::{uniform_selector, Rollout, RolloutOptions};
use crate::seeded_rng;

#[derive(Clone, Debug, Default)]
pub struct ConformanceReport {
    pub episodes: usize,
    pub steps: usize,
    pub failures: Vec<String>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Random walks plus paired seeded rollouts. Checks determinism, reward
/// finiteness, horizon, initiation totality, termination ranges, primitive
/// wrappers, observation sizes, and null-class reward identity.
pub fn check<E: EnvModel>(env: &E, registry: &InstructionRegistry, seeds: &[u64]) -> Result<ConformanceReport> {
    let mut failures: Vec<String> = Vec::new();
    let mut episodes = 0;

    for agent in 0..env.agent_count() {
        for p in 0..env.primitive_action_count(agent) {
            let wrapped = env
                .macro_actions(agent)
                .iter()
                .find(|m| m.primitive == Some(p));
            if wrapped.is_none() {
                failures.push(format!("agent {agent}: primitive {p} has no one-step macro"));
            }
        }
        for (i, m) in env.macro_actions(agent).iter().enumerate() {
            if m.id != i {
                failures.push(format!("agent {agent}: macro {} stored at index {i}", m.id));
            }
        }
    }

    let mut steps = 0;
    for &seed in seeds {
        let mut rng = seeded_rng(seed);
        let mut state = env.initial_state(&mut rng);
        let histories: Vec<AgentHistory> = (0..env.agent_count())
            .map(|a| AgentHistory::new(a, 4, env.observe(a, &state)))
            .collect();
        for t in 0..env.horizon() {
            if env.is_terminal(&state) {
                break;
            }
            let mut joint = Vec::with_capacity(env.agent_count());
            for (agent, history) in histories.iter().enumerate() {
                let obs = env.observe(agent, &state);
                if obs.len() != env.observation_dim() {
                    failures.push(format!("agent {agent}: observation has {} entries", obs.len()));
                }
                let mask = env.initiation_mask(agent, &state, history);
                if !mask.iter().any(|&b| b) {
                    failures.push(format!("seed {seed} t {t}: agent {agent} has no initiable macro"));
                    joint.push(0);
                    continue;
                }
                for (m, ok) in mask.iter().enumerate() {
                    if !ok {
                        continue;
                    }
                    RunningMacro::start(env, agent, m, &state, history, t)?;
                    let a = env.low_level(agent, m, &state, history);
                    if a >= env.primitive_action_count(agent) {
                        failures.push(format!("agent {agent}: macro {m} emitted primitive {a}"));
                    }
                    if let Some(p) = env.macro_actions(agent)[m].primitive {
                        if a != p {
                            failures.push(format!("agent {agent}: wrapper {m} emitted {a} instead of {p}"));
                        }
                    }
                }
                joint.push(rng.random_range(0..env.primitive_action_count(agent)));
            }
            let next = env.transition(&state, &joint, &mut rng);
            let base = env.reward(&state, &joint, &next);
            if !base.is_finite() {
                failures.push(format!("seed {seed} t {t}: non-finite reward {base}"));
            }
            for class in registry.classes() {
                let r = registry.reward_for(env, class.class_id, &state, &joint, &next)?;
                if !r.is_finite() {
                    failures.push(format!("class {}: non-finite reward", class.class_id));
                }
                if class.class_id == NULL_CLASS && r.to_bits() != base.to_bits() {
                    failures.push(format!("seed {seed} t {t}: null-class reward {r} != base {base}"));
                }
            }
            for (agent, history) in histories.iter().enumerate() {
                for m in 0..env.macro_count(agent) {
                    let ctx = TerminationContext {
                        previous: &state,
                        next: &next,
                        elapsed: 1,
                        history,
                    };
                    let beta = env.termination(agent, m, &ctx);
                    if !(0.0..=1.0).contains(&beta) {
                        failures.push(format!("agent {agent} macro {m}: termination {beta}"));
                    }
                }
            }
            state = next;
            steps += 1;
        }
    }

    let process = ArrivalProcess::new(registry, 0.2, None)?;
    for &seed in seeds {
        let run = || -> Result<_> {
            let options = RolloutOptions {
                seed,
                ..Default::default()
            };
            let mut rollout = Rollout::new(env, registry, Box::new(SampledArrivals(process.clone())), &options)?;
            let mut selector = uniform_selector;
            let summary = rollout.run_episode(&mut selector)?;
            Ok((rollout.trace().to_vec(), summary))
        };
        let (a, sa) = run()?;
        let (b, sb) = run()?;
        if a != b || sa != sb {
            failures.push(format!("seed {seed}: rollouts differ under the same seed"));
        }
        if sa.steps > env.horizon() || a.len() != sa.steps {
            failures.push(format!("seed {seed}: {} steps for horizon {}", sa.steps, env.horizon()));
        }
        if a.iter().any(|r| !r.reward.is_finite()) {
            failures.push(format!("seed {seed}: non-finite reward in rollout"));
        }
        episodes += 1;
    }
    Ok(ConformanceReport {
        episodes,
        steps,
        failures,
    })
}
