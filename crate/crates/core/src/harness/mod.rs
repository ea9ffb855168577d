//! Experiment harness: configuration, raw outputs, analysis and reports.
//!
//! Every run writes raw files first. The report is then rebuilt from those
//! files alone, so `report` on a finished directory reproduces it exactly.

mod analyze;
pub mod config;
pub mod io;
pub mod produce;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use analyze::{analyze, dissipation_identity, missing_files, required_files, stability_envelope};
pub use config::{parse_config, parse_config_str, preset, ExperimentConfig, Mode, PRESETS};
pub use io::Stamp;
pub use report::{RunReport, Timing};

fn stamp_of(cfg: &ExperimentConfig) -> Stamp {
    Stamp { config_hash: cfg.hash(), seed: cfg.seed }
}

fn canonical(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Runs one experiment end to end and returns its report.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunReport> {
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let out = cfg.output.directory.clone();
    if cfg.mode == Mode::Report {
        let input = cfg
            .analysis
            .input
            .clone()
            .ok_or_else(|| Error::MissingInputs(vec!["analysis.input (a finished output directory)".into()]))?;
        return emit_report(&input, Some(&out));
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let input_inside = cfg.analysis.input.as_ref().is_some_and(|i| {
        let i = canonical(i);
        let o = canonical(&out);
        i == o || i.parent().is_some_and(|p| p == o)
    });
    if !input_inside {
        produce::clear_outputs(&out)?;
    }
    io::write_json(&out.join(io::CONFIG_FILE), cfg)?;
    let timings = produce::produce(cfg, &out, &stamp_of(cfg))?;
    io::write_json(&out.join(io::TIMINGS_FILE), &timings)?;
    emit_report(&out, None)
}

/// Rebuilds the report of a finished output directory from its raw files.
/// The report is written to `out`, or next to the inputs.
pub fn emit_report(input: &Path, out: Option<&Path>) -> Result<RunReport> {
    let cfg_path = input.join(io::CONFIG_FILE);
    if !cfg_path.is_file() {
        let mut missing = vec![cfg_path.display().to_string()];
        // Any mode's more specific requirements are unknown without the config.
        if !input.is_dir() {
            missing.push(input.display().to_string());
        }
        return Err(Error::MissingInputs(missing));
    }
    let cfg = parse_config(&cfg_path)?;
    let stamp = stamp_of(&cfg);
    let (mut report, hints) = analyze(&cfg, input, &stamp)?;
    let timings_path = input.join(io::TIMINGS_FILE);
    if timings_path.is_file() {
        report.timings = io::read_json(&timings_path)?;
    }
    let dest = out.unwrap_or(input);
    report::write_report(dest, &report, &hints, &stamp)?;
    Ok(report)
}
