//! Experiment runner for the ualk toolkit: JSON configs, the pipeline
//! recipes and the files each run leaves behind.

pub mod config;
pub mod pipelines;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use ualk_core::io;

use config::{Common, Pipeline};
use pipelines::Outcome;

pub const THREADS_VAR: &str = "UAL_THREADS";

/// Width of the global rayon pool: `UAL_THREADS`, default 1.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("{THREADS_VAR} must be a positive integer, got `{v}`"),
        },
    }
}

/// Where a run's inputs come from.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn read_config(args: &RunArgs) -> Result<(Option<String>, PathBuf)> {
    match &args.config {
        None => Ok((None, PathBuf::from("."))),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((Some(text), base))
        }
    }
}

fn execute<T, F>(text: Option<&str>, base: &Path, args: &RunArgs, body: F) -> Result<PathBuf>
where
    T: Common + DeserializeOwned + Serialize,
    F: FnOnce(&T) -> Result<Outcome>,
{
    let where_ = args.config.as_ref().map_or("<defaults>".into(), |p| p.display().to_string());
    let mut cfg: T =
        config::load(text, base, args.seed, args.out.clone()).with_context(|| format!("config {where_}"))?;
    let out = cfg.out_mut().clone().expect("checked by load");
    let seed = *cfg.seed_mut();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.resolved.json"), config::resolved_json(&cfg)?)?;
    let t0 = Instant::now();
    let outcome = body(&cfg).with_context(|| format!("pipeline {}", T::PIPELINE.name()))?;
    let wall = t0.elapsed().as_secs_f64();
    outcome.write(&out)?;
    let mut m: serde_json::Map<String, Value> = outcome.metrics.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    m.insert("seed".into(), json!(seed));
    m.insert("wall_time".into(), json!(wall));
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(out)
}

/// Runs `pipeline`, or the one named by the config's `pipeline` key, and
/// returns the output directory.
pub fn run(pipeline: Option<Pipeline>, args: &RunArgs) -> Result<PathBuf> {
    let (text, base) = read_config(args)?;
    let named = match &text {
        Some(t) => config::pipeline_of(t).context("invalid config")?,
        None => None,
    };
    let Some(p) = pipeline.or(named) else {
        bail!("missing required key `pipeline`");
    };
    let t = text.as_deref();
    match p {
        Pipeline::Gen => execute(t, &base, args, pipelines::gen),
        Pipeline::Vos => execute(t, &base, args, pipelines::vos),
        Pipeline::Siren => execute(t, &base, args, pipelines::siren),
        Pipeline::Sal => execute(t, &base, args, pipelines::sal),
        Pipeline::Halo => execute(t, &base, args, pipelines::halo),
        Pipeline::Eval => execute(t, &base, args, pipelines::eval),
    }
}

/// Lossless matrix conversion. The input format is detected from its
/// content; the output is CSV when the path ends in `.csv`, else binary.
pub fn convert(input: &Path, output: &Path) -> Result<()> {
    let m = pipelines::load_any_matrix(input)?;
    let csv = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if csv {
        io::save_csv(output, &m, None)
    } else {
        io::save_matrix(output, &m)
    }
    .with_context(|| format!("writing {}", output.display()))
}
