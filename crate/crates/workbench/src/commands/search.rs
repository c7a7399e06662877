//! `search`: random search report plus checkpoints of the fastest localized patterns.

use std::io::{BufWriter, Write};
use std::path::PathBuf;

use flowlenia::explore::{run_random_search_with_mode, search_sample};
use flowlenia::{Precision, RuleSource, Scalar, SearchConfig, SearchRecord, SimConfig, World};

use super::{create_dir, read_json};
use crate::cli::SearchArgs;
use crate::error::{io, Result};

/// Localized, finite, non-vanished samples ordered by mean speed (fastest first, ties by index).
pub fn rank_by_speed(records: &[SearchRecord]) -> Vec<&SearchRecord> {
    let mut out: Vec<&SearchRecord> = records
        .iter()
        .filter(|r| r.stats.as_ref().is_some_and(|s| s.localized && s.finite && !s.vanished))
        .collect();
    out.sort_by(|a, b| {
        let speed = |r: &SearchRecord| r.stats.as_ref().map_or(0.0, |s| s.mean_speed);
        speed(b).total_cmp(&speed(a)).then(a.index.cmp(&b.index))
    });
    out
}

/// Step-0 world of one search sample, with its rules made explicit.
pub fn sample_world<T: Scalar>(cfg: &SearchConfig, record: &SearchRecord) -> Result<World<T>> {
    let (rules, a0) = search_sample::<T>(record.seed, record.index, cfg)?;
    let config = SimConfig {
        width: cfg.width,
        height: cfg.height,
        channels: cfg.channels,
        adjacency: cfg.adjacency.clone(),
        rules: RuleSource::Explicit(rules),
        mode: record.mode,
        flow: cfg.flow,
        precision: T::PRECISION,
        patch_side: 0,
        ..Default::default()
    };
    let mut world = World::<T>::new(config)?;
    world.set_state(a0)?;
    Ok(world)
}

fn search<T: Scalar>(args: &SearchArgs, cfg: &SearchConfig) -> Result<(Vec<SearchRecord>, Vec<PathBuf>)> {
    let mode = args.mode.map_or(cfg.mode, Into::into);
    let records = run_random_search_with_mode::<T>(args.seed, args.count, cfg, mode);
    let mut written = Vec::new();
    if let Some(dir) = &args.checkpoints {
        create_dir(dir)?;
        for (rank, record) in rank_by_speed(&records).into_iter().take(args.top_k).enumerate() {
            let path = dir.join(format!("top_{rank:02}_sample_{:05}.json", record.index));
            sample_world::<T>(cfg, record)?.checkpoint().save(&path)?;
            written.push(path);
        }
    }
    Ok((records, written))
}

pub fn run(args: &SearchArgs, precision: Option<Precision>) -> Result<(Vec<SearchRecord>, Vec<PathBuf>)> {
    let cfg: SearchConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SearchConfig::default(),
    };
    let (records, written) = match precision.unwrap_or_default() {
        Precision::Single => search::<f32>(args, &cfg)?,
        Precision::Double => search::<f64>(args, &cfg)?,
    };
    if let Some(parent) = args.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut out = BufWriter::new(io(std::fs::File::create(&args.report), &args.report)?);
    for r in &records {
        io(writeln!(out, "{}", serde_json::to_string(r)?), &args.report)?;
    }
    io(out.flush(), &args.report)?;
    Ok((records, written))
}
