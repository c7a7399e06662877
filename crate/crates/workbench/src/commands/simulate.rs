//! `simulate`: batch rollout with frames, a step log and a final checkpoint.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use flowlenia::{Checkpoint, FrameEncoding, Precision, SimConfig};
use serde::{Deserialize, Serialize};

use super::create_dir;
use crate::any_world::AnyWorld;
use crate::cli::SimulateArgs;
use crate::commands::render::frame_image;
use crate::error::{io, Result, WorkbenchError};

/// Printed to stdout when a rollout finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub start_step: u64,
    pub final_step: u64,
    pub total_mass: Vec<f64>,
    pub center_of_mass: Option<[f64; 2]>,
    pub frames: usize,
    pub checkpoint: PathBuf,
}

fn write_frame(world: &AnyWorld, dir: &Path, png: bool) -> Result<()> {
    let frame = world.frame(FrameEncoding::RawF32);
    let stem = format!("frame_{:08}", frame.step);
    frame.write_files(dir, &stem)?;
    if png {
        let path = dir.join(format!("{stem}.png"));
        frame_image(&world.frame(FrameEncoding::Rgb8), None, 1)?.save(path)?;
    }
    Ok(())
}

pub fn run(args: &SimulateArgs, precision: Option<Precision>) -> Result<SimulateSummary> {
    let mut world = match (&args.config, &args.checkpoint) {
        (_, Some(cp)) => AnyWorld::from_checkpoint(&Checkpoint::load(cp)?, precision)?,
        (Some(cfg), None) => AnyWorld::new(SimConfig::load(cfg)?, precision)?,
        (None, None) => return Err(WorkbenchError::Usage("either --config or --checkpoint is required".into())),
    };
    let frames_dir = args.out.join("frames");
    create_dir(&frames_dir)?;
    let stride = args.frame_stride.unwrap_or(world.config().frame_stride);
    let start_step = world.step_index();
    write_frame(&world, &frames_dir, args.png)?;
    let mut frames = 1;

    if args.steps > 0 {
        let log_path = args.out.join("steps.jsonl");
        let mut log = BufWriter::new(io(std::fs::File::create(&log_path), &log_path)?);
        for i in 1..=args.steps {
            let report = world.step()?;
            io(writeln!(log, "{}", serde_json::to_string(&report)?), &log_path)?;
            if let Some((drift, tolerance)) = world.conservation_violation(&report) {
                io(log.flush(), &log_path)?;
                world.checkpoint().save(&args.out.join("checkpoint.json"))?;
                return Err(WorkbenchError::Conservation {
                    step: report.step,
                    drift,
                    tolerance,
                });
            }
            if i == args.steps || (stride > 0 && world.step_index() % stride == 0) {
                write_frame(&world, &frames_dir, args.png)?;
                frames += 1;
            }
        }
        io(log.flush(), &log_path)?;
    }

    let checkpoint = args.out.join("checkpoint.json");
    world.checkpoint().save(&checkpoint)?;
    Ok(SimulateSummary {
        start_step,
        final_step: world.step_index(),
        total_mass: world.total_mass(),
        center_of_mass: world.center_of_mass(),
        frames,
        checkpoint,
    })
}
