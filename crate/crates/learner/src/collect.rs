//! Running a policy through episodes: training data and evaluation.

use std::collections::BTreeMap;

use mavic_core::compliance::Outcome;
use mavic_core::instructions::{
    ArrivalProcess, ClassId, FixedInstruction, InstructionRegistry, InstructionSource, SampledArrivals, ScriptedSchedule,
    NULL_CLASS,
};
use mavic_core::model::EnvModel;
use mavic_core::rollout::{EpisodeSummary, Rollout, RolloutOptions};
use mavic_core::trace::StepRecord;
use serde::{Deserialize, Serialize};

use crate::buffer::MacroTransition;
use crate::error::{LearnerError, Result};
use crate::policy::Policy;

/// Where instructions come from during an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InstructionPlan {
    /// Bernoulli arrivals from the null class with probability `beta`;
    /// `weights[k]` is the relative weight of class `k + 1` (uniform when
    /// absent).
    Arrivals {
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// One instruction in force for the whole episode.
    Fixed { class: ClassId, phrase: String },
    /// Instruction switches at given primitive steps (an entry keyed `k` is
    /// in force during step `k`).
    Scripted { entries: BTreeMap<usize, (ClassId, String)> },
}

impl InstructionPlan {
    fn build<'a>(&self, registry: &InstructionRegistry) -> Result<(Box<dyn InstructionSource + 'a>, Option<(ClassId, String)>)> {
        Ok(match self {
            InstructionPlan::Arrivals { beta, weights } => {
                let process = ArrivalProcess::new(registry, *beta, weights.as_deref())?;
                (Box::new(SampledArrivals(process)), None)
            }
            InstructionPlan::Fixed { class, phrase } => {
                let initial = (*class != NULL_CLASS || !phrase.is_empty()).then(|| (*class, phrase.clone()));
                (Box::new(FixedInstruction), initial)
            }
            InstructionPlan::Scripted { entries } => {
                let initial = entries.get(&0).cloned();
                let schedule = ScriptedSchedule {
                    entries: entries.clone(),
                };
                (Box::new(schedule), initial)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub summary: EpisodeSummary,
    /// `histogram[agent][macro]` of macro selections.
    pub histogram: Vec<Vec<u64>>,
    pub transitions: Vec<MacroTransition>,
    /// Per-step trace; empty unless requested through [`trace_episode`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StepRecord>,
}

/// Runs one episode. `greedy` switches from sampling to the most probable
/// macro. Transitions are recorded per agent at its own macro boundaries.
pub fn run_episode<E: EnvModel>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    plan: &InstructionPlan,
    seed: u64,
    greedy: bool,
    record_transitions: bool,
) -> Result<EpisodeOutcome> {
    run(env, registry, policy, plan, seed, greedy, record_transitions, false)
}

/// [`run_episode`] that also keeps the per-step trace.
pub fn trace_episode<E: EnvModel>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    plan: &InstructionPlan,
    seed: u64,
    greedy: bool,
) -> Result<EpisodeOutcome> {
    run(env, registry, policy, plan, seed, greedy, true, true)
}

#[allow(clippy::too_many_arguments)]
fn run<E: EnvModel>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    plan: &InstructionPlan,
    seed: u64,
    greedy: bool,
    record_transitions: bool,
    record_trace: bool,
) -> Result<EpisodeOutcome> {
    if policy.shape.env != env.name() {
        return Err(LearnerError::Checkpoint(format!(
            "policy was built for `{}`, environment is `{}`",
            policy.shape.env,
            env.name()
        )));
    }
    let (source, initial_instruction) = plan.build(registry)?;
    let options = RolloutOptions {
        seed,
        history_window: policy.shape.history_window,
        record_trace,
        initial_instruction,
    };
    let mut rollout = Rollout::new(env, registry, source, &options)?;
    let mut selector = policy.selector(greedy);
    let mut transitions = Vec::new();
    while !rollout.is_done() {
        rollout.step(&mut selector)?;
        let finished = rollout.drain_completed();
        if !record_transitions {
            continue;
        }
        let at_terminal = rollout.is_done() && env.is_terminal(rollout.state());
        for m in finished {
            transitions.push(MacroTransition {
                agent: m.agent,
                history: policy.history_features(m.agent, &m.history_before),
                history_next: policy.history_features(m.agent, &m.history_after),
                mask: m.mask_before,
                macro_id: m.macro_id,
                joint_macros: m.joint_macros,
                class: m.class_before,
                class_next: m.class_after,
                phrase: m.phrase_before,
                phrase_next: m.phrase_after,
                reward: m.reward,
                duration: m.duration,
                terminal: m.terminal && at_terminal,
                interrupted: m.interrupted,
            });
        }
    }
    let mut histogram = selector.take_counts();
    if histogram.is_empty() {
        histogram = policy.shape.macro_counts.iter().map(|&n| vec![0; n]).collect();
    }
    Ok(EpisodeOutcome {
        summary: rollout.summary(),
        histogram,
        transitions,
        trace: if record_trace { rollout.trace().to_vec() } else { Vec::new() },
    })
}

/// Sample mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseStats {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub discounted_mean: f64,
    pub discounted_std: f64,
}

/// Base task performance: no instruction ever arrives and the policy sees
/// the null instruction. Episode `i` uses seed `seed + i`.
pub fn eval_base<E: EnvModel>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<BaseStats> {
    if episodes == 0 {
        return Err(LearnerError::Config("evaluation needs at least one episode".into()));
    }
    let plan = InstructionPlan::Arrivals {
        beta: 0.0,
        weights: None,
    };
    let mut undiscounted = Vec::with_capacity(episodes);
    let mut discounted = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let out = run_episode(env, registry, policy, &plan, seed.wrapping_add(i as u64), greedy, false)?;
        undiscounted.push(out.summary.base_return);
        discounted.push(out.summary.base_discounted);
    }
    let (mean, std) = mean_std(&undiscounted);
    let (discounted_mean, discounted_std) = mean_std(&discounted);
    Ok(BaseStats {
        episodes,
        mean,
        std,
        discounted_mean,
        discounted_std,
    })
}

/// Issued instructions of one class and how they resolved.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub class_id: ClassId,
    pub issued: usize,
    pub followed: usize,
    pub violated: usize,
    pub pending: usize,
}

impl ComplianceRecord {
    pub fn rate(&self) -> Option<f64> {
        (self.issued > 0).then(|| self.followed as f64 / self.issued as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplianceStats {
    pub episodes: usize,
    pub records: Vec<ComplianceRecord>,
    /// Followed over issued across all classes; `None` when nothing was
    /// issued. Pending-at-episode-end counts as not followed.
    pub compliance: Option<f64>,
    /// Undiscounted base reward earned during the live run.
    pub live_base_mean: f64,
    /// Undiscounted instruction-conditioned reward during the live run.
    pub live_reward_mean: f64,
}

/// Tallies resolved instructions into per-class records.
pub fn tally<'a>(instructions: impl IntoIterator<Item = &'a mavic_core::compliance::IssuedInstruction>) -> Vec<ComplianceRecord> {
    let mut by_class: BTreeMap<ClassId, ComplianceRecord> = BTreeMap::new();
    for i in instructions {
        let r = by_class.entry(i.class_id).or_insert_with(|| ComplianceRecord {
            class_id: i.class_id,
            ..Default::default()
        });
        r.issued += 1;
        match i.outcome {
            Outcome::Followed => r.followed += 1,
            Outcome::Violated => r.violated += 1,
            Outcome::Pending => r.pending += 1,
        }
    }
    by_class.into_values().collect()
}

pub fn overall_compliance(records: &[ComplianceRecord]) -> Option<f64> {
    let issued: usize = records.iter().map(|r| r.issued).sum();
    let followed: usize = records.iter().map(|r| r.followed).sum();
    (issued > 0).then(|| followed as f64 / issued as f64)
}

/// Compliance under live arrivals with probability `beta`.
#[allow(clippy::too_many_arguments)]
pub fn eval_compliance<E: EnvModel>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    beta: f64,
    weights: Option<&[f64]>,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<ComplianceStats> {
    if episodes == 0 {
        return Err(LearnerError::Config("evaluation needs at least one episode".into()));
    }
    let plan = InstructionPlan::Arrivals {
        beta,
        weights: weights.map(<[f64]>::to_vec),
    };
    let mut issued = Vec::new();
    let mut base = Vec::with_capacity(episodes);
    let mut reward = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let out = run_episode(env, registry, policy, &plan, seed.wrapping_add(i as u64), greedy, false)?;
        base.push(out.summary.base_return);
        reward.push(out.summary.total_reward);
        issued.extend(out.summary.instructions);
    }
    let records = tally(&issued);
    Ok(ComplianceStats {
        episodes,
        compliance: overall_compliance(&records),
        records,
        live_base_mean: mean_std(&base).0,
        live_reward_mean: mean_std(&reward).0,
    })
}

/// Macro-selection frequencies with one phrase in force for the whole
/// episode. The phrase need not be registered; it is run under the null
/// class, so only the policy input changes.
pub fn action_histogram<E: EnvModel>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    phrase: &str,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<Vec<Vec<u64>>> {
    let class = registry.classify(phrase).unwrap_or(NULL_CLASS);
    let plan = InstructionPlan::Fixed {
        class,
        phrase: phrase.to_string(),
    };
    let mut total: Vec<Vec<u64>> = policy.shape.macro_counts.iter().map(|&n| vec![0; n]).collect();
    for i in 0..episodes {
        let out = run_episode(env, registry, policy, &plan, seed.wrapping_add(i as u64), greedy, false)?;
        for (t, h) in total.iter_mut().zip(&out.histogram) {
            for (a, b) in t.iter_mut().zip(h) {
                *a += b;
            }
        }
    }
    Ok(total)
}
