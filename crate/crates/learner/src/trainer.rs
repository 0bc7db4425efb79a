//! Collection/update loop for the four training modes.

use std::io::Write;
use std::path::{Path, PathBuf};

use mavic_core::config::parse_section;
use mavic_core::envs::build_env;
use mavic_core::instructions::InstructionRegistry;
use mavic_core::model::EnvModel;
use mavic_core::{seeded_rng, with_env, SimRng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::buffer::{MacroTransition, ReplayBuffer};
use crate::checkpoint::{config_hash, Checkpoint};
use crate::collect::{eval_base, eval_compliance, run_episode, InstructionPlan};
use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{LearnerError, Result};
use crate::policy::{Policy, PolicyShape};
use crate::update::{
    actor_gradient, compute_target, critic_gradient, ActorSample, AdvantageForm, BootstrapTarget, EmbeddingCache,
    Mode, TargetOptions,
};

/// Which critic supplies the bootstrap and correction values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticSource {
    /// The critic being trained, read without gradient.
    #[default]
    Live,
    /// A copy refreshed at the start of every epoch.
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: String,
    pub env_config: Value,
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Drop the buffer after each epoch's updates.
    pub on_policy: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip_norm: Option<f64>,
    pub entropy_coef: f64,
    pub hidden: Vec<usize>,
    pub history_window: usize,
    pub encoder: EncoderSpec,
    /// Arrival probability while collecting (ignored by switch and vanilla).
    pub arrival_prob: f64,
    /// Relative arrival weight of each non-null class, in class order.
    pub arrival_weights: Option<Vec<f64>>,
    /// Arrival probability for compliance evaluation; defaults to
    /// `arrival_prob`.
    pub eval_arrival_prob: Option<f64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_greedy: bool,
    pub bootstrap_target: BootstrapTarget,
    pub advantage_form: AdvantageForm,
    pub critic_source: CriticSource,
    /// Collection threads. Results are merged in episode order, so the
    /// outcome does not depend on this.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "chain".into(),
            env_config: Value::Null,
            mode: Mode::Mavic,
            seed: 0,
            epochs: 200,
            episodes_per_epoch: 16,
            updates_per_epoch: 4,
            batch_size: 128,
            buffer_capacity: 10_000,
            on_policy: true,
            actor_lr: 0.05,
            critic_lr: 0.05,
            clip_norm: Some(10.0),
            entropy_coef: 0.01,
            hidden: vec![64, 64],
            history_window: 1,
            encoder: EncoderSpec::default(),
            arrival_prob: 0.1,
            arrival_weights: None,
            eval_arrival_prob: None,
            eval_every: 20,
            eval_episodes: 50,
            eval_greedy: true,
            bootstrap_target: BootstrapTarget::default(),
            advantage_form: AdvantageForm::default(),
            critic_source: CriticSource::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Parses a JSON configuration; unknown keys are rejected by name.
    pub fn from_value(value: &Value) -> Result<Self> {
        let config: TrainConfig = parse_section(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LearnerError::Config(m.to_string()));
        if self.epochs == 0 || self.episodes_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, episodes_per_epoch and batch_size must be positive");
        }
        if self.history_window == 0 {
            return bad("history_window must be positive");
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) || self.eval_arrival_prob.is_some_and(|b| !(0.0..=1.0).contains(&b)) {
            return bad("arrival probabilities must lie in [0, 1]");
        }
        if !(self.actor_lr.is_finite() && self.critic_lr.is_finite() && self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be finite and non-negative");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    pub fn eval_beta(&self) -> f64 {
        self.eval_arrival_prob.unwrap_or(self.arrival_prob)
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// One evaluation window of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub epoch: usize,
    pub mode: Mode,
    pub seed: u64,
    pub base_return: f64,
    pub compliance: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Fraction of sampled transitions skipped for non-finite critic values.
    pub quarantined: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub policy: Policy,
    pub metrics: Vec<MetricsLine>,
    pub checkpoint: Checkpoint,
}

/// SplitMix64 finalizer; spreads `(seed, a, b)` into one episode seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const EVAL_STREAM: u64 = u64::MAX;

/// Trains from a configuration, writing `metrics.jsonl` and checkpoints
/// under `out` when given.
pub fn train(config: &TrainConfig, out: Option<&Path>) -> Result<TrainOutput> {
    config.validate()?;
    let built = build_env(&config.env, &config.env_config)?;
    with_env!(&built.env, env => Trainer::new(env, &built.registry, config)?.run(out))
}

pub struct Trainer<'a, E: EnvModel> {
    env: &'a E,
    registry: &'a InstructionRegistry,
    config: TrainConfig,
    hash: String,
    policy: Policy,
    target: Option<Policy>,
    buffer: ReplayBuffer,
    rng: SimRng,
    epoch: usize,
    quarantined: usize,
    sampled: usize,
    critic_losses: Vec<f64>,
    actor_losses: Vec<f64>,
}

impl<'a, E: EnvModel + Sync> Trainer<'a, E> {
    pub fn new(env: &'a E, registry: &'a InstructionRegistry, config: &TrainConfig) -> Result<Self> {
        let conditioned = config.mode != Mode::Vanilla;
        let shape = PolicyShape::of(env, config.history_window, conditioned);
        let encoder = Encoder::new(config.encoder.clone(), registry)?;
        let policy = Policy::new(shape, encoder, &config.hidden, derive_seed(config.seed, 1, 0));
        Ok(Self {
            env,
            registry,
            hash: config.hash()?,
            config: config.clone(),
            policy,
            target: None,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            rng: seeded_rng(derive_seed(config.seed, 2, 0)),
            epoch: 0,
            quarantined: 0,
            sampled: 0,
            critic_losses: Vec::new(),
            actor_losses: Vec::new(),
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn plan(&self, episode_seed: u64) -> InstructionPlan {
        match self.config.mode {
            Mode::Mavic | Mode::Naive => InstructionPlan::Arrivals {
                beta: self.config.arrival_prob,
                weights: self.config.arrival_weights.clone(),
            },
            Mode::Vanilla => InstructionPlan::Arrivals {
                beta: 0.0,
                weights: None,
            },
            Mode::Switch => {
                let mut rng = seeded_rng(derive_seed(episode_seed, 3, 0));
                let classes = self.registry.classes();
                let class = &classes[rng.random_range(0..classes.len())];
                let phrase = class.phrases[rng.random_range(0..class.phrases.len())].clone();
                InstructionPlan::Fixed {
                    class: class.class_id,
                    phrase,
                }
            }
        }
    }

    /// Runs the epoch's episodes and appends their transitions.
    pub fn collect(&mut self) -> Result<usize> {
        let n = self.config.episodes_per_epoch;
        let seeds: Vec<u64> = (0..n)
            .map(|i| derive_seed(self.config.seed, self.epoch as u64 + 16, i as u64))
            .collect();
        let plans: Vec<InstructionPlan> = seeds.iter().map(|&s| self.plan(s)).collect();
        let workers = self.config.workers.min(n).max(1);
        let (env, registry, policy) = (self.env, self.registry, &self.policy);
        let run = |i: usize| run_episode(env, registry, policy, &plans[i], seeds[i], false, true);
        let mut results: Vec<Result<Vec<MacroTransition>>> = Vec::with_capacity(n);
        if workers == 1 {
            results.extend((0..n).map(|i| run(i).map(|o| o.transitions)));
        } else {
            let chunks: Vec<Vec<usize>> = (0..workers).map(|w| (w..n).step_by(workers).collect()).collect();
            let mut slots: Vec<Option<Result<Vec<MacroTransition>>>> = (0..n).map(|_| None).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|chunk| {
                        let run = &run;
                        scope.spawn(move || {
                            chunk
                                .iter()
                                .map(|&i| (i, run(i).map(|o| o.transitions)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (i, r) in h.join().expect("collection worker panicked") {
                        slots[i] = Some(r);
                    }
                }
            });
            results.extend(slots.into_iter().map(|s| s.expect("every episode ran")));
        }
        let mut count = 0;
        for r in results {
            let ts = r?;
            count += ts.len();
            self.buffer.extend(ts);
        }
        Ok(count)
    }

    /// One gradient step on a sampled batch.
    pub fn update(&mut self) -> Result<()> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng);
        if batch.is_empty() {
            return Ok(());
        }
        let options = TargetOptions {
            gamma: self.env.discount(),
            bootstrap: self.config.bootstrap_target,
            advantage: self.config.advantage_form,
        };
        let bootstrap = self.target.as_ref().unwrap_or(&self.policy);
        let mut cache = EmbeddingCache::default();
        let agents = self.policy.agent_count();
        let mut critic_samples: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); agents];
        let mut actor_samples: Vec<Vec<ActorSample>> = vec![Vec::new(); agents];
        for t in &batch {
            self.sampled += 1;
            match compute_target(t, &self.policy, bootstrap, self.config.mode, &options, &mut cache)? {
                None => self.quarantined += 1,
                Some(target) => {
                    critic_samples[t.agent].push((target.input.clone(), target.target));
                    actor_samples[t.agent].push(ActorSample {
                        input: target.input,
                        mask: t.mask.clone(),
                        macro_id: t.macro_id,
                        advantage: target.advantage,
                    });
                }
            }
        }
        let mut steps = Vec::with_capacity(agents);
        for agent in 0..agents {
            let (critic_grads, critic_loss) = critic_gradient(&self.policy, agent, &critic_samples[agent]);
            let (actor_grads, objective) =
                actor_gradient(&self.policy, agent, &actor_samples[agent], self.config.entropy_coef)?;
            if !critic_loss.is_finite() {
                return Err(self.abort("critic loss", &batch));
            }
            if !objective.is_finite() {
                return Err(self.abort("actor loss", &batch));
            }
            if !critic_samples[agent].is_empty() {
                self.critic_losses.push(critic_loss);
                self.actor_losses.push(-objective);
            }
            steps.push((critic_grads, actor_grads));
        }
        for (agent, (critic_grads, actor_grads)) in steps.into_iter().enumerate() {
            let nets = &mut self.policy.nets[agent];
            nets.critic.sgd_step(&critic_grads, self.config.critic_lr, self.config.clip_norm);
            let descent: Vec<f64> = actor_grads.iter().map(|g| -g).collect();
            nets.actor.sgd_step(&descent, self.config.actor_lr, self.config.clip_norm);
        }
        if self.policy.nets.iter().any(|n| n.actor.params.iter().chain(&n.critic.params).any(|p| !p.is_finite())) {
            return Err(self.abort("parameters", &batch));
        }
        Ok(())
    }

    fn abort(&self, what: &'static str, batch: &[MacroTransition]) -> LearnerError {
        let dump = std::env::temp_dir().join(format!(
            "mavic-dump-{}-seed{}-epoch{}.json",
            self.config.mode.name(),
            self.config.seed,
            self.epoch
        ));
        let body = serde_json::json!({
            "what": what,
            "epoch": self.epoch,
            "config": self.config,
            "batch": batch,
            "checkpoint": Checkpoint::from_policy(&self.policy, self.hash.clone(), self.config.mode, self.config.seed, self.epoch),
        });
        let _ = std::fs::write(&dump, body.to_string());
        LearnerError::NonFiniteLoss {
            what,
            epoch: self.epoch,
            dump: dump.display().to_string(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_policy(&self.policy, self.hash.clone(), self.config.mode, self.config.seed, self.epoch)
    }

    /// Greedy (by default) base return and live compliance of the current
    /// policy on a fixed set of evaluation seeds.
    pub fn evaluate(&mut self) -> Result<MetricsLine> {
        let seed = derive_seed(self.config.seed, EVAL_STREAM, 0);
        let episodes = self.config.eval_episodes;
        let greedy = self.config.eval_greedy;
        let base = eval_base(self.env, self.registry, &self.policy, episodes, seed, greedy)?;
        let compliance = eval_compliance(
            self.env,
            self.registry,
            &self.policy,
            self.config.eval_beta(),
            self.config.arrival_weights.as_deref(),
            episodes,
            seed,
            greedy,
        )?;
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let line = MetricsLine {
            epoch: self.epoch,
            mode: self.config.mode,
            seed: self.config.seed,
            base_return: base.mean,
            compliance: compliance.compliance,
            critic_loss: mean(&self.critic_losses),
            actor_loss: mean(&self.actor_losses),
            quarantined: if self.sampled == 0 { 0.0 } else { self.quarantined as f64 / self.sampled as f64 },
        };
        self.critic_losses.clear();
        self.actor_losses.clear();
        self.quarantined = 0;
        self.sampled = 0;
        Ok(line)
    }

    /// One collection round followed by the configured number of updates.
    pub fn epoch_step(&mut self) -> Result<()> {
        if self.config.critic_source == CriticSource::Target {
            self.target = Some(self.policy.clone());
        }
        self.collect()?;
        for _ in 0..self.config.updates_per_epoch {
            self.update()?;
        }
        if self.config.on_policy {
            self.buffer.clear();
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn run(mut self, out: Option<&Path>) -> Result<TrainOutput> {
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(std::fs::File::create(dir.join("metrics.jsonl"))?)
            }
            None => None,
        };
        let mut metrics = Vec::new();
        while self.epoch < self.config.epochs {
            self.epoch_step()?;
            if self.epoch.is_multiple_of(self.config.eval_every) || self.epoch == self.config.epochs {
                let line = self.evaluate()?;
                if let Some(f) = log.as_mut() {
                    writeln!(f, "{}", serde_json::to_string(&line)?)?;
                }
                if let Some(dir) = out {
                    self.checkpoint().save(&checkpoint_path(dir, self.epoch))?;
                }
                metrics.push(line);
            }
        }
        let checkpoint = self.checkpoint();
        if let Some(dir) = out {
            checkpoint.save(&dir.join("checkpoint.json"))?;
        }
        Ok(TrainOutput {
            policy: self.policy,
            metrics,
            checkpoint,
        })
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_{epoch:05}.json"))
}
