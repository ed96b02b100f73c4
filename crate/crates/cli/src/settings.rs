//! Merge the run configuration with command-line overrides.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use vinsta_core::config::{BackendKind, LlmSettings, PipelineSettings, RunConfig};
use vinsta_core::pipeline::{build_backend, build_gateway, dry_run_gateway};
use vinsta_llm::{DryRunBackend, Gateway};

use crate::{CliError, GlobalArgs};

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Http,
    Script(PathBuf),
}

pub fn parse_backend(spec: &str) -> Result<BackendChoice, CliError> {
    match spec.split_once(':') {
        None if spec == "http" => Ok(BackendChoice::Http),
        Some(("script", path)) if !path.is_empty() => Ok(BackendChoice::Script(PathBuf::from(path))),
        _ => Err(CliError::config(anyhow!(
            "invalid --backend `{spec}` (expected `http` or `script:PATH`)"
        ))),
    }
}

fn apply_llm(global: &GlobalArgs, llm: &mut LlmSettings) -> Result<(), CliError> {
    if let Some(spec) = &global.backend {
        match parse_backend(spec)? {
            BackendChoice::Http => llm.backend = BackendKind::Http,
            BackendChoice::Script(path) => {
                if !path.exists() {
                    return Err(CliError::config(anyhow!("script {} does not exist", path.display())));
                }
                llm.backend = BackendKind::Script;
                llm.script = Some(path);
            }
        }
    }
    if let Some(dir) = &global.cache_dir {
        llm.cache_dir = Some(dir.clone());
    }
    Ok(())
}

/// The run configuration with overrides applied, validated.
pub fn run_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| CliError::config(anyhow!("this command needs --config")))?;
    let mut config = RunConfig::load(path).map_err(CliError::config)?;
    if let Some(p) = global.parallel {
        config.parallel = p;
    }
    if let Some(m) = global.method {
        config.segmentation.method = m;
    }
    if let Some(k) = global.k_events {
        config.segmentation.num_events = k;
    }
    apply_llm(global, &mut config.llm)?;
    config.validate().map_err(CliError::config)?;
    Ok(config)
}

/// Pipeline settings from the configuration when given, else defaults, with
/// overrides applied.
pub fn pipeline_settings(global: &GlobalArgs) -> Result<PipelineSettings, CliError> {
    let mut settings = match &global.config {
        Some(_) => run_config(global)?.pipeline_settings(),
        None => PipelineSettings::default(),
    };
    if let Some(m) = global.method {
        settings.segmentation.method = m;
    }
    if let Some(k) = global.k_events {
        if k == 0 {
            return Err(CliError::config(anyhow!("--k-events must be at least 1")));
        }
        settings.segmentation.num_events = k;
    }
    apply_llm(global, &mut settings.llm)?;
    Ok(settings)
}

/// Gateway for the configured backend, or a recording one under `--dry-run`.
pub fn gateway(global: &GlobalArgs, llm: &LlmSettings) -> Result<(Gateway, Option<Arc<DryRunBackend>>), CliError> {
    if global.dry_run {
        let (g, rec) = dry_run_gateway();
        return Ok((g, Some(rec)));
    }
    let backend = build_backend(llm)
        .context("cannot create the chat backend")
        .map_err(CliError::config)?;
    let gateway = build_gateway(llm, backend)
        .context("cannot open the response cache")
        .map_err(CliError::config)?;
    Ok((gateway, None))
}
