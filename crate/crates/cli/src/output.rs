//! File outputs. Everything lands under `cfg.out_dir`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use mfg_wealth::{InvariantReport, IterationReport, IterationState, MomentSeries, OracleRun, Problem, RunConfig};

use crate::{CliResult, Failure};

fn path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn create(cfg: &RunConfig, name: &str) -> CliResult<BufWriter<File>> {
    let p = path(cfg, name);
    let f = File::create(&p).map_err(|e| Failure::new(crate::code::IO, format!("{}: {e}", p.display())))?;
    Ok(BufWriter::new(f))
}

fn write_text(cfg: &RunConfig, name: &str, text: &str) -> CliResult<()> {
    let p = path(cfg, name);
    fs::write(&p, text).map_err(|e| Failure::new(crate::code::IO, format!("{}: {e}", p.display())))
}

/// Creates the output directory and echoes the effective configuration.
pub fn prepare(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    write_text(cfg, "effective_config.toml", &cfg.to_toml_string())
}

pub fn write_json(cfg: &RunConfig, name: &str, value: &serde_json::Value) -> CliResult<()> {
    write_text(cfg, name, &serde_json::to_string_pretty(value).expect("json serializes"))
}

pub fn write_solution(
    cfg: &RunConfig,
    problem: &Problem,
    state: &IterationState,
    report: &IterationReport,
    moments: &MomentSeries,
) -> CliResult<()> {
    moments.write_csv(create(cfg, "moments.csv")?)?;
    write_text(cfg, "iteration_report.txt", &report.to_kv_text())?;
    write_text(cfg, "iteration_report.json", &serde_json::to_string_pretty(report).expect("json serializes"))?;

    let dir = cfg.out_dir.join("snapshots");
    fs::create_dir_all(&dir)?;
    let grid = &problem.disc.grid;
    let n_t = state.time.n_t();
    for k in (0..=n_t).filter(|k| k % cfg.stride == 0 || *k == n_t) {
        for (prefix, field) in [("g", state.g.get(k)), ("y", state.y.get(k))] {
            let name = format!("snapshots/{prefix}_t{k:06}.csv");
            grid.write_csv(field, create(cfg, &name)?)?;
        }
    }
    Ok(())
}

pub fn write_invariants(cfg: &RunConfig, report: &InvariantReport) -> CliResult<()> {
    write_text(cfg, "invariant_report.txt", &report.to_kv_text())?;
    write_text(cfg, "invariant_report.json", &report.to_json())
}

pub fn write_oracle_csv(cfg: &RunConfig, run: &OracleRun) -> CliResult<()> {
    run.write_csv(create(cfg, "oracle.csv")?)?;
    Ok(())
}
