//! Instruction classes, their arrival dynamics, and the value-corrected
//! reward applied at instruction boundaries.
//!
//! The instruction process only leaves the null class by an arrival (with
//! probability `arrival_prob` per primitive step) and returns to it after a
//! geometric active period. Any change of class forces every running macro
//! to terminate; that includes reverting to the null class.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compliance::ComplianceRule;
use crate::error::{CoreError, Result};
use crate::model::{EnvModel, PrimitiveAction};
use crate::SimRng;

pub type ClassId = usize;

/// The null class: no instruction active.
pub const NULL_CLASS: ClassId = 0;

/// How an instruction class rewrites the base reward into `R_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// `R_c = R`.
    Base,
    /// `R_c = R + amount` per occurrence of `event` (amount is negative).
    PenaltyOnEvent { event: String, amount: f64 },
    /// `R_c = R + amount` per occurrence of `event`.
    BonusOnEvent { event: String, amount: f64 },
    /// Removes the base reward credited to `suppress` and pays `amount` per
    /// occurrence of `event` instead.
    Redirect {
        suppress: String,
        event: String,
        amount: f64,
    },
}

impl RewardSpec {
    pub fn apply(&self, base: f64, events: &[String], event_reward: impl Fn(&str) -> f64) -> f64 {
        let count = |name: &str| events.iter().filter(|e| e.as_str() == name).count() as f64;
        match self {
            RewardSpec::Base => base,
            RewardSpec::PenaltyOnEvent { event, amount } | RewardSpec::BonusOnEvent { event, amount } => {
                base + amount * count(event)
            }
            RewardSpec::Redirect {
                suppress,
                event,
                amount,
            } => base - event_reward(suppress) * count(suppress) + amount * count(event),
        }
    }

    /// Compliance rule implied by the reward when none is given explicitly.
    pub fn implied_rule(&self) -> ComplianceRule {
        match self {
            RewardSpec::Base => ComplianceRule::Unconstrained,
            RewardSpec::PenaltyOnEvent { event, .. } => ComplianceRule::Avoid {
                event: event.clone(),
            },
            RewardSpec::BonusOnEvent { event, .. } | RewardSpec::Redirect { event, .. } => {
                ComplianceRule::Achieve {
                    event: event.clone(),
                }
            }
        }
    }
}

/// One entry of an instruction registry file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionClass {
    pub class_id: ClassId,
    pub name: String,
    pub phrases: Vec<String>,
    pub reward_spec: RewardSpec,
    pub mean_duration: u32,
    #[serde(default)]
    pub gating: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compliance: Option<ComplianceRule>,
}

impl InstructionClass {
    pub fn null() -> Self {
        Self {
            class_id: NULL_CLASS,
            name: "none".into(),
            phrases: vec![String::new()],
            reward_spec: RewardSpec::Base,
            mean_duration: 1,
            gating: None,
            compliance: None,
        }
    }

    pub fn rule(&self) -> ComplianceRule {
        self.compliance
            .clone()
            .unwrap_or_else(|| self.reward_spec.implied_rule())
    }
}

/// Canonical form used to match phrases: lower case, single spaces.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Validated set of instruction classes; class ids are `0..len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<InstructionClass>", into = "Vec<InstructionClass>")]
pub struct InstructionRegistry {
    classes: Vec<InstructionClass>,
}

impl TryFrom<Vec<InstructionClass>> for InstructionRegistry {
    type Error = CoreError;

    fn try_from(classes: Vec<InstructionClass>) -> Result<Self> {
        Self::new(classes)
    }
}

impl From<InstructionRegistry> for Vec<InstructionClass> {
    fn from(r: InstructionRegistry) -> Self {
        r.classes
    }
}

impl InstructionRegistry {
    pub fn new(mut classes: Vec<InstructionClass>) -> Result<Self> {
        classes.sort_by_key(|c| c.class_id);
        for (i, class) in classes.iter().enumerate() {
            if class.class_id != i {
                return Err(CoreError::Config(format!(
                    "class ids must be contiguous from 0; found {} at position {i}",
                    class.class_id
                )));
            }
            if class.mean_duration == 0 {
                return Err(CoreError::Config(format!(
                    "class {} has mean_duration 0",
                    class.name
                )));
            }
            if class.phrases.is_empty() {
                return Err(CoreError::Config(format!("class {} has no phrases", class.name)));
            }
        }
        let null = classes
            .first()
            .ok_or_else(|| CoreError::Config("registry is empty".into()))?;
        if null.phrases.len() != 1 || !null.phrases[0].is_empty() || null.reward_spec != RewardSpec::Base {
            return Err(CoreError::Config(
                "class 0 must be the null class with the single phrase \"\" and the base reward".into(),
            ));
        }
        let mut seen = HashSet::new();
        for class in &classes {
            for phrase in &class.phrases {
                let key = normalize_phrase(phrase);
                if class.class_id != NULL_CLASS && key.is_empty() {
                    return Err(CoreError::Config(format!(
                        "class {} has an empty phrase; only the null class may",
                        class.name
                    )));
                }
                if !seen.insert(key) {
                    return Err(CoreError::Config(format!("phrase {phrase:?} appears twice")));
                }
            }
        }
        Ok(Self { classes })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.classes)?)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[InstructionClass] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> Result<&InstructionClass> {
        self.classes.get(id).ok_or(CoreError::UnknownClass(id))
    }

    /// Class whose phrase set contains `phrase` (after normalisation).
    pub fn classify(&self, phrase: &str) -> Option<ClassId> {
        let key = normalize_phrase(phrase);
        self.classes
            .iter()
            .find(|c| c.phrases.iter().any(|p| normalize_phrase(p) == key))
            .map(|c| c.class_id)
    }

    /// Every registered phrase with its class.
    pub fn phrases(&self) -> impl Iterator<Item = (ClassId, &str)> {
        self.classes
            .iter()
            .flat_map(|c| c.phrases.iter().map(move |p| (c.class_id, p.as_str())))
    }

    /// `R_c` given the base reward and the step's events.
    pub fn instruction_reward(
        &self,
        class: ClassId,
        base: f64,
        events: &[String],
        event_reward: impl Fn(&str) -> f64,
    ) -> Result<f64> {
        Ok(self.class(class)?.reward_spec.apply(base, events, event_reward))
    }

    /// `R_c(s, a, s')`; for the null class this is exactly the base reward.
    pub fn reward_for<E: EnvModel>(
        &self,
        env: &E,
        class: ClassId,
        state: &E::State,
        joint: &[PrimitiveAction],
        next: &E::State,
    ) -> Result<f64> {
        let spec = &self.class(class)?.reward_spec;
        let base = env.reward(state, joint, next);
        if *spec == RewardSpec::Base {
            return Ok(base);
        }
        let events = env.events(state, joint, next);
        Ok(spec.apply(base, &events, |e| env.event_reward(e)))
    }
}

/// Instruction currently in force.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveInstruction {
    pub class_id: ClassId,
    pub phrase: String,
    pub steps_active: usize,
}

impl ActiveInstruction {
    pub fn null() -> Self {
        Self {
            class_id: NULL_CLASS,
            phrase: String::new(),
            steps_active: 0,
        }
    }

    pub fn new(class_id: ClassId, phrase: impl Into<String>) -> Self {
        Self {
            class_id,
            phrase: phrase.into(),
            steps_active: 0,
        }
    }
}

/// Environment state paired with the active instruction, `(s, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState<S> {
    pub base: S,
    pub instruction: ClassId,
    pub active_phrase: String,
    pub steps_active: usize,
}

impl<S> AugmentedState<S> {
    pub fn active(&self) -> ActiveInstruction {
        ActiveInstruction {
            class_id: self.instruction,
            phrase: self.active_phrase.clone(),
            steps_active: self.steps_active,
        }
    }
}

/// Arrival and duration parameters of one non-null class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalClass {
    pub class_id: ClassId,
    pub weight: f64,
    pub mean_duration: u32,
    pub phrases: Vec<String>,
    pub gating: Option<String>,
}

/// `P(c' | c, h, a)`: arrivals only from the null class, geometric durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub arrival_prob: f64,
    pub classes: Vec<ArrivalClass>,
}

impl ArrivalProcess {
    /// `class_weights[i]` is the weight of class `i + 1`; `None` means uniform.
    pub fn new(
        registry: &InstructionRegistry,
        arrival_prob: f64,
        class_weights: Option<&[f64]>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&arrival_prob) {
            return Err(CoreError::Config(format!(
                "arrival_prob {arrival_prob} outside [0, 1]"
            )));
        }
        let active = &registry.classes()[1..];
        let weights: Vec<f64> = match class_weights {
            Some(w) => {
                if w.len() != active.len() {
                    return Err(CoreError::Config(format!(
                        "expected {} class weights, got {}",
                        active.len(),
                        w.len()
                    )));
                }
                w.to_vec()
            }
            None if active.is_empty() => Vec::new(),
            None => vec![1.0 / active.len() as f64; active.len()],
        };
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::Config("class weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 && (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::Config(format!("class weights sum to {total}, expected 1")));
        }
        Ok(Self {
            arrival_prob,
            classes: active
                .iter()
                .zip(weights)
                .map(|(c, weight)| ArrivalClass {
                    class_id: c.class_id,
                    weight,
                    mean_duration: c.mean_duration,
                    phrases: c.phrases.clone(),
                    gating: c.gating.clone(),
                })
                .collect(),
        })
    }

    /// A process that never issues instructions.
    pub fn silent(registry: &InstructionRegistry) -> Self {
        Self::new(registry, 0.0, None).expect("uniform weights are valid")
    }

    pub fn revert_prob(&self, class: ClassId) -> Option<f64> {
        self.classes
            .iter()
            .find(|c| c.class_id == class)
            .map(|c| 1.0 / c.mean_duration as f64)
    }
}

/// Result of one instruction-process step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionStep {
    pub class_id: ClassId,
    pub phrase: String,
    pub transitioned: bool,
}

impl InstructionStep {
    fn stay(current: &ActiveInstruction) -> Self {
        Self {
            class_id: current.class_id,
            phrase: current.phrase.clone(),
            transitioned: false,
        }
    }

    fn to(current: &ActiveInstruction, class_id: ClassId, phrase: String) -> Self {
        Self {
            transitioned: class_id != current.class_id,
            class_id,
            phrase,
        }
    }
}

/// Samples the next instruction. `gate` evaluates named state predicates for
/// gated classes. A transition obliges the caller to force-terminate every
/// running macro.
pub fn step_instruction(
    current: &ActiveInstruction,
    process: &ArrivalProcess,
    gate: &dyn Fn(&str) -> bool,
    rng: &mut SimRng,
) -> Result<InstructionStep> {
    if current.class_id == NULL_CLASS {
        if process.arrival_prob <= 0.0 || !rng.random_bool(process.arrival_prob) {
            return Ok(InstructionStep::stay(current));
        }
        let total: f64 = process.classes.iter().map(|c| c.weight).sum();
        if total <= 0.0 {
            return Err(CoreError::Config(
                "an instruction arrived but every class weight is zero".into(),
            ));
        }
        let eligible: Vec<&ArrivalClass> = process
            .classes
            .iter()
            .filter(|c| c.weight > 0.0 && c.gating.as_deref().is_none_or(gate))
            .collect();
        let eligible_total: f64 = eligible.iter().map(|c| c.weight).sum();
        if eligible.is_empty() || eligible_total <= 0.0 {
            return Ok(InstructionStep::stay(current));
        }
        let mut u = rng.random::<f64>() * eligible_total;
        let mut chosen = eligible[eligible.len() - 1];
        for c in &eligible {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        let phrase = chosen.phrases[rng.random_range(0..chosen.phrases.len())].clone();
        Ok(InstructionStep::to(current, chosen.class_id, phrase))
    } else {
        let revert = process
            .revert_prob(current.class_id)
            .ok_or(CoreError::UnknownClass(current.class_id))?;
        if revert >= 1.0 || rng.random_bool(revert) {
            Ok(InstructionStep::to(current, NULL_CLASS, String::new()))
        } else {
            Ok(InstructionStep::stay(current))
        }
    }
}

/// Anything that decides the instruction for the next primitive step.
pub trait InstructionSource: Send {
    /// Called after primitive step `step`; decides `c_{step+1}`.
    fn next(
        &mut self,
        current: &ActiveInstruction,
        step: usize,
        gate: &dyn Fn(&str) -> bool,
        rng: &mut SimRng,
    ) -> Result<InstructionStep>;

    /// Queues a human-issued instruction; sources that cannot accept one
    /// return false.
    fn queue(&mut self, _class_id: ClassId, _phrase: String) -> bool {
        false
    }
}

/// Samples from an [`ArrivalProcess`].
#[derive(Clone, Debug)]
pub struct SampledArrivals(pub ArrivalProcess);

impl InstructionSource for SampledArrivals {
    fn next(
        &mut self,
        current: &ActiveInstruction,
        _step: usize,
        gate: &dyn Fn(&str) -> bool,
        rng: &mut SimRng,
    ) -> Result<InstructionStep> {
        step_instruction(current, &self.0, gate, rng)
    }
}

/// Keeps whatever instruction the episode started with.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedInstruction;

impl InstructionSource for FixedInstruction {
    fn next(
        &mut self,
        current: &ActiveInstruction,
        _: usize,
        _: &dyn Fn(&str) -> bool,
        _: &mut SimRng,
    ) -> Result<InstructionStep> {
        Ok(InstructionStep::stay(current))
    }
}

/// Switches to a given instruction at given steps. An entry keyed `k` makes
/// the instruction in force during primitive step `k`.
#[derive(Clone, Debug, Default)]
pub struct ScriptedSchedule {
    pub entries: BTreeMap<usize, (ClassId, String)>,
}

impl InstructionSource for ScriptedSchedule {
    fn next(
        &mut self,
        current: &ActiveInstruction,
        step: usize,
        _: &dyn Fn(&str) -> bool,
        _: &mut SimRng,
    ) -> Result<InstructionStep> {
        match self.entries.get(&(step + 1)) {
            Some((class, phrase)) => Ok(InstructionStep::to(current, *class, phrase.clone())),
            None => Ok(InstructionStep::stay(current)),
        }
    }
}

/// Human-driven source: queued instructions take effect at the next step
/// boundary; otherwise the current instruction persists.
#[derive(Clone, Debug, Default)]
pub struct ManualQueue {
    pending: Option<(ClassId, String)>,
}

impl InstructionSource for ManualQueue {
    fn next(
        &mut self,
        current: &ActiveInstruction,
        _: usize,
        _: &dyn Fn(&str) -> bool,
        _: &mut SimRng,
    ) -> Result<InstructionStep> {
        match self.pending.take() {
            Some((class, phrase)) => Ok(InstructionStep {
                // A new phrase replaces the current one even within a class.
                transitioned: class != current.class_id || phrase != current.phrase,
                class_id: class,
                phrase,
            }),
            None => Ok(InstructionStep::stay(current)),
        }
    }

    fn queue(&mut self, class_id: ClassId, phrase: String) -> bool {
        self.pending = Some((class_id, phrase));
        true
    }
}

/// Table-2 reward at an instruction boundary:
/// `rbar + gamma^tau (v_continue - v_incoming)` when the class changed,
/// `rbar` otherwise. Both values are constants to any gradient computation.
pub fn corrected_reward(
    rbar: f64,
    gamma: f64,
    duration: usize,
    v_continue: f64,
    v_incoming: f64,
    same_class: bool,
) -> Result<f64> {
    if !v_continue.is_finite() || !v_incoming.is_finite() {
        return Err(CoreError::NonFinite("value estimate"));
    }
    if !rbar.is_finite() {
        return Err(CoreError::NonFinite("segment reward"));
    }
    if duration == 0 {
        return Err(CoreError::Config("macro duration must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::Config(format!("discount {gamma} outside [0, 1]")));
    }
    if same_class {
        return Ok(rbar);
    }
    Ok(rbar + gamma.powi(duration as i32) * (v_continue - v_incoming))
}

/// Appends the instruction embedding to a base observation.
pub fn augment_observation(observation: &[f64], embedding: &[f64], embedding_dim: usize) -> Result<Vec<f64>> {
    if embedding.len() != embedding_dim {
        return Err(CoreError::DimensionMismatch {
            expected: embedding_dim,
            got: embedding.len(),
        });
    }
    let mut out = Vec::with_capacity(observation.len() + embedding.len());
    out.extend_from_slice(observation);
    out.extend_from_slice(embedding);
    Ok(out)
}
