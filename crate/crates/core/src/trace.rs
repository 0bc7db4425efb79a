//! JSON-lines episode traces, one record per primitive step.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instructions::ClassId;
use crate::model::PrimitiveAction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionView {
    pub class_id: ClassId,
    pub phrase: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state_repr: serde_json::Value,
    pub joint_primitive: Vec<PrimitiveAction>,
    /// Instruction-conditioned reward `R_c` actually received.
    pub reward: f64,
    pub per_agent_obs: Vec<Vec<f64>>,
    pub active_instruction: InstructionView,
    pub segment_id: usize,
    #[serde(default)]
    pub base_reward: f64,
    #[serde(default)]
    pub events: Vec<String>,
    /// Macro each agent was executing on this step.
    #[serde(default)]
    pub macros: Vec<usize>,
}

pub fn write_jsonl<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn save(records: &[StepRecord], path: &Path) -> Result<()> {
    write_jsonl(records, std::fs::File::create(path)?)
}

pub fn load(path: &Path) -> Result<Vec<StepRecord>> {
    read_jsonl(std::fs::File::open(path)?)
}

/// Rewards of the trace in step order.
pub fn rewards(records: &[StepRecord]) -> Vec<f64> {
    records.iter().map(|r| r.reward).collect()
}
