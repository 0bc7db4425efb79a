//! Bundled environments and the name-based constructor.

pub mod box_pushing;
pub mod chain;
pub mod conformance;
pub mod grid;
pub mod overcooked;
pub mod warehouse;

use serde_json::Value;

use crate::config::parse_section;
use crate::error::{CoreError, Result};
use crate::instructions::InstructionRegistry;

pub use box_pushing::{BoxPushing, BoxPushingConfig};
pub use chain::{ChainConfig, ChainSwitch};
pub use overcooked::{Overcooked, OvercookedConfig};
pub use warehouse::{Warehouse, WarehouseConfig};

pub const ENV_NAMES: [&str; 4] = ["chain", "box_pushing", "overcooked", "warehouse"];

#[derive(Clone, Debug)]
pub enum EnvKind {
    Chain(ChainSwitch),
    BoxPushing(BoxPushing),
    Overcooked(Overcooked),
    Warehouse(Warehouse),
}

/// An environment together with its instruction registry.
#[derive(Clone, Debug)]
pub struct BuiltEnv {
    pub env: EnvKind,
    pub registry: InstructionRegistry,
}

impl BuiltEnv {
    pub fn name(&self) -> &'static str {
        match &self.env {
            EnvKind::Chain(_) => "chain",
            EnvKind::BoxPushing(_) => "box_pushing",
            EnvKind::Overcooked(_) => "overcooked",
            EnvKind::Warehouse(_) => "warehouse",
        }
    }
}

/// Runs `$body` with `$env` bound to the concrete environment inside an
/// [`EnvKind`].
#[macro_export]
macro_rules! with_env {
    ($kind:expr, $env:ident => $body:expr) => {
        match $kind {
            $crate::envs::EnvKind::Chain($env) => $body,
            $crate::envs::EnvKind::BoxPushing($env) => $body,
            $crate::envs::EnvKind::Overcooked($env) => $body,
            $crate::envs::EnvKind::Warehouse($env) => $body,
        }
    };
}

/// Builds an environment by name from its JSON configuration section.
/// Missing keys take their defaults; unknown keys are rejected by name.
pub fn build_env(name: &str, config: &Value) -> Result<BuiltEnv> {
    let (env, registry) = match name {
        "chain" => {
            let e = ChainSwitch::new(parse_section(config)?)?;
            let r = e.registry();
            (EnvKind::Chain(e), r)
        }
        "box_pushing" => {
            let e = BoxPushing::new(parse_section(config)?)?;
            let r = e.registry();
            (EnvKind::BoxPushing(e), r)
        }
        "overcooked" => {
            let e = Overcooked::new(parse_section(config)?)?;
            let r = e.registry();
            (EnvKind::Overcooked(e), r)
        }
        "warehouse" => {
            let e = Warehouse::new(parse_section(config)?)?;
            let r = e.registry();
            (EnvKind::Warehouse(e), r)
        }
        other => return Err(CoreError::UnknownEnv(other.to_string())),
    };
    Ok(BuiltEnv { env, registry })
}
