#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mavic_core::envs::{build_env, BuiltEnv};
use mavic_core::with_env;
use mavic_learner::{Checkpoint, Encoder, EncoderSpec, Mode, Policy, PolicyShape};
use serde_json::Value;

/// Untrained but deterministic policy for `env`.
pub fn policy_for(env: &str, seed: u64) -> (BuiltEnv, Policy) {
    let built = build_env(env, &Value::Null).unwrap();
    let shape = with_env!(&built.env, e => PolicyShape::of(e, 1, true));
    let encoder = Encoder::new(EncoderSpec::default(), &built.registry).unwrap();
    let policy = Policy::new(shape, encoder, &[8], seed);
    (built, policy)
}

pub fn write_checkpoint(dir: &Path, env: &str) -> PathBuf {
    let (_, policy) = policy_for(env, 3);
    let path = dir.join(format!("{env}.json"));
    Checkpoint::from_policy(&policy, "test".into(), Mode::Mavic, 3, 0)
        .save(&path)
        .unwrap();
    path
}
