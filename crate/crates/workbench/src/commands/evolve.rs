//! `evolve`: OpenES training with a JSON-lines history, resumable state and best checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use flowlenia::evolve::{evaluate_fitness, GenerationRecord};
use flowlenia::{
    Checkpoint, EcologyConfig, EsConfig, EsRun, Layer, Mode, OpenEs, Precision, RuleSource, Scalar, SimConfig, Task, TaskSpec, World,
};
use serde::{Deserialize, Serialize};

use super::{create_dir, read_json, write_json};
use crate::cli::EvolveArgs;
use crate::error::{io, Result, WorkbenchError};

pub const STATE_VERSION: u32 = 1;

/// What is being optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    Task { spec: Box<TaskSpec> },
    /// `−‖g − 0.5‖²` over `dim` genes.
    Sphere { dim: usize },
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::Task { spec } => spec.template.genome_len(),
            Objective::Sphere { dim } => *dim,
        }
    }

    pub fn fitness(&self, genes: &[f64], episode_seed: u64) -> f64 {
        match self {
            Objective::Task { spec } => evaluate_fitness(genes, spec, episode_seed),
            Objective::Sphere { .. } => -genes.iter().map(|g| (g - 0.5) * (g - 0.5)).sum::<f64>(),
        }
    }
}

/// Everything needed to continue a run: `state.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveState {
    pub format_version: u32,
    pub objective: Objective,
    pub run: EsRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestGenotype {
    pub generation: u64,
    pub fitness: f64,
    pub genotype: Vec<f64>,
}

pub struct EvolveOutput {
    pub history: Vec<GenerationRecord>,
    pub state: EvolveState,
}

fn world_checkpoint<T: Scalar>(spec: &TaskSpec, genes: &[f64]) -> Result<Checkpoint> {
    let t = &spec.template;
    let (rules, a0) = t.decode::<T>(genes)?;
    let sensed = |layer| if t.static_channels() == 1 { vec![layer] } else { Vec::new() };
    let ecology = match spec.task {
        Task::Obstacles => Some(EcologyConfig {
            walls: Some(spec.walls),
            wall_strength: spec.wall_strength,
            sensed: sensed(Layer::Walls),
            ..Default::default()
        }),
        Task::Chemotaxis => Some(EcologyConfig {
            chem: Some(spec.chem),
            sensed: sensed(Layer::Chem),
            ..Default::default()
        }),
        _ => None,
    };
    let config = SimConfig {
        width: t.width,
        height: t.height,
        channels: t.channels,
        adjacency: t.adjacency.clone(),
        rules: RuleSource::Explicit(rules),
        mode: spec.mode,
        flow: spec.flow,
        precision: T::PRECISION,
        patch_side: 0,
        ecology,
        ..Default::default()
    };
    let mut world = World::<T>::new(config)?;
    world.set_state(a0)?;
    Ok(world.checkpoint())
}

/// A world at step 0 holding the decoded rules and initial patch of `genes`.
pub fn genotype_checkpoint(spec: &TaskSpec, genes: &[f64]) -> Result<Checkpoint> {
    match spec.precision {
        Precision::Single => world_checkpoint::<f32>(spec, genes),
        Precision::Double => world_checkpoint::<f64>(spec, genes),
    }
}

fn save_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, value)?;
    io(std::fs::rename(&tmp, path), path)
}

fn fresh_state(args: &EvolveArgs, precision: Option<Precision>) -> Result<EvolveState> {
    let objective = match (&args.task, args.sphere) {
        (_, Some(dim)) => Objective::Sphere { dim },
        (Some(path), None) => {
            let mut spec: TaskSpec = read_json(path)?;
            if args.baseline_lenia {
                spec.mode = Mode::Lenia;
            }
            if let Some(p) = precision {
                spec.precision = p;
            }
            spec.validate()?;
            Objective::Task { spec: Box::new(spec) }
        }
        (None, None) => return Err(WorkbenchError::Usage("evolve needs --task, --sphere or --resume".into())),
    };
    let mut es: EsConfig = match &args.es {
        Some(path) => read_json(path)?,
        None => EsConfig::default(),
    };
    if let Some(g) = args.generations {
        es.generations = g;
    }
    let mean = OpenEs::random_mean(objective.dim(), args.seed);
    Ok(EvolveState {
        format_version: STATE_VERSION,
        objective,
        run: EsRun::new(OpenEs::new(es, mean, args.seed)?),
    })
}

fn resumed_state(args: &EvolveArgs, path: &Path) -> Result<EvolveState> {
    let mut state: EvolveState = read_json(path)?;
    if state.format_version != STATE_VERSION {
        return Err(WorkbenchError::Usage(format!("unsupported state version {}", state.format_version)));
    }
    if args.task.is_some() || args.sphere.is_some() || args.es.is_some() {
        return Err(WorkbenchError::Usage("--resume continues the stored task and settings".into()));
    }
    if let Objective::Task { spec } = &state.objective {
        if args.baseline_lenia && spec.mode != Mode::Lenia {
            return Err(WorkbenchError::Usage("the stored run does not use the Lenia baseline".into()));
        }
    }
    if let Some(g) = args.generations {
        state.run.es.config.generations = g;
    }
    Ok(state)
}

pub fn run(args: &EvolveArgs, precision: Option<Precision>) -> Result<EvolveOutput> {
    create_dir(&args.out)?;
    let state_path = args.out.join("state.json");
    let history_path = args.out.join("history.jsonl");
    let mut state = if args.resume {
        resumed_state(args, &state_path)?
    } else {
        let state = fresh_state(args, precision)?;
        io(std::fs::write(&history_path, ""), &history_path)?;
        state
    };
    let mut history_file = io(std::fs::OpenOptions::new().append(true).create(true).open(&history_path), &history_path)?;
    let best_path: PathBuf = args.out.join("best_genotype.json");
    let objective = state.objective.clone();
    let mut saved_best = state.run.best_fitness;
    let target = state.run.es.config.generations;
    let history = flowlenia::open_es_run(
        &mut state.run,
        target,
        |g, ep| objective.fitness(g, ep),
        |run, record| {
            let line = serde_json::to_string(record).map_err(flowlenia::Error::from)?;
            writeln!(history_file, "{line}").map_err(flowlenia::Error::from)?;
            tracing::info!(
                generation = record.generation,
                best = record.best_fitness,
                mean = record.mean_fitness,
                best_ever = record.best_ever,
                "generation done"
            );
            if run.best_fitness > saved_best {
                saved_best = run.best_fitness;
                let best = BestGenotype {
                    generation: record.generation,
                    fitness: run.best_fitness,
                    genotype: run.best_genotype.clone(),
                };
                std::fs::write(&best_path, serde_json::to_string_pretty(&best)?)?;
                if let Objective::Task { spec } = &objective {
                    let cp = genotype_checkpoint(spec, &run.best_genotype).map_err(|e| flowlenia::Error::Checkpoint(e.to_string()))?;
                    cp.save(&best_path.with_file_name("best_checkpoint.json"))?;
                }
            }
            let snapshot = EvolveState {
                format_version: STATE_VERSION,
                objective: objective.clone(),
                run: run.clone(),
            };
            save_atomic(&state_path, &snapshot).map_err(|e| flowlenia::Error::Checkpoint(e.to_string()))?;
            Ok(())
        },
    )?;
    save_atomic(&state_path, &state)?;
    Ok(EvolveOutput { history, state })
}
