//! CSV reports. Absent values are written as `NA`.

use std::io::Write;
use std::path::Path;

use mavic_core::instructions::InstructionRegistry;

use crate::error::Result;
use crate::experiment::{ExperimentResult, ResultRow, SeedResult};

pub const RESULTS_HEADER: [&str; 11] = [
    "env",
    "mode",
    "base_mean",
    "base_std",
    "compliance",
    "compliance_std",
    "n_seeds",
    "base_ci_low",
    "base_ci_high",
    "compliance_ci_low",
    "compliance_ci_high",
];

pub const COMPLIANCE_HEADER: [&str; 10] = [
    "env",
    "mode",
    "seed",
    "class_id",
    "class_name",
    "issued",
    "followed",
    "violated",
    "pending",
    "rate",
];

pub const HISTOGRAM_HEADER: [&str; 10] = [
    "env",
    "mode",
    "seed",
    "phrase",
    "recognized",
    "agent",
    "macro_id",
    "macro_name",
    "count",
    "frequency",
];

fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => v.to_string(),
        _ => "NA".into(),
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        let c = r.compliance.as_ref();
        w.write_record([
            r.env.clone(),
            r.mode.name().to_string(),
            num(Some(r.base.mean)),
            num(Some(r.base.std)),
            num(c.map(|c| c.mean)),
            num(c.map(|c| c.std)),
            r.n_seeds.to_string(),
            num(r.base.ci.map(|ci| ci.0)),
            num(r.base.ci.map(|ci| ci.1)),
            num(c.and_then(|c| c.ci).map(|ci| ci.0)),
            num(c.and_then(|c| c.ci).map(|ci| ci.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_compliance<W: Write>(results: &[SeedResult], registry: &InstructionRegistry, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPLIANCE_HEADER)?;
    for r in results {
        for rec in &r.evaluation.compliance.records {
            let name = registry.class(rec.class_id).map(|c| c.name.clone()).unwrap_or_default();
            w.write_record([
                r.env.clone(),
                r.mode.name().to_string(),
                r.seed.to_string(),
                rec.class_id.to_string(),
                name,
                rec.issued.to_string(),
                rec.followed.to_string(),
                rec.violated.to_string(),
                rec.pending.to_string(),
                num(rec.rate()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histograms<W: Write>(results: &[SeedResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTOGRAM_HEADER)?;
    for r in results {
        for h in &r.evaluation.histograms {
            for (m, (count, freq)) in h.counts.iter().zip(h.frequencies()).enumerate() {
                w.write_record([
                    r.env.clone(),
                    r.mode.name().to_string(),
                    r.seed.to_string(),
                    h.phrase.clone(),
                    h.recognized.to_string(),
                    h.agent.to_string(),
                    m.to_string(),
                    h.macro_names.get(m).cloned().unwrap_or_default(),
                    count.to_string(),
                    num(Some(freq)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `compliance.csv` and `action_hist.csv`.
pub fn write_all(result: &ExperimentResult, registry: &InstructionRegistry, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_results(&result.rows, std::fs::File::create(out.join("results.csv"))?)?;
    write_compliance(&result.seeds, registry, std::fs::File::create(out.join("compliance.csv"))?)?;
    write_histograms(&result.seeds, std::fs::File::create(out.join("action_hist.csv"))?)?;
    Ok(())
}
