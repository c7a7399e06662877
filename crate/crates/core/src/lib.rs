//! Flow Lenia: a mass-conservative continuous cellular automaton, its classic
//! Lenia baseline, per-cell parameter embedding, ecology layers, random search
//! and evolution-strategy training of rule parameters.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision for the common cases.

pub mod checkpoint;
pub mod config;
pub mod ecology;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod explore;
pub mod evolve;
pub mod fft;
pub mod field;
pub mod frame;
pub mod rules;
pub mod scalar;
mod transport;
pub mod world;

pub use checkpoint::Checkpoint;
pub use config::{EcologyConfig, EmbeddingConfig, Layer, RuleSource, SimConfig};
pub use ecology::{food_decay_update, make_chem_field, sense_channels, wall_flow, EcologyState};
pub use embedding::{mix, species_color, MixingMode, MixingPolicy, ParamMap};
pub use engine::{alpha_map, flow_field, flow_lenia_step, lenia_step, reintegration_step, FlowState, Mode, StepReport, Stepper};
pub use explore::{center_of_mass, init_patch, run_random_search, sample_ruleset, PatternStats, SamplerRanges, SearchConfig, SearchRecord};
pub use error::{Error, Result};
pub use evolve::{evaluate, open_es_run, EsConfig, EvalFlag, Evaluation, EsRun, OpenEs, Task, TaskSpec, Template};
pub use field::{channel_sum, convolve_circular, convolve_direct, sobel_gradient, total_mass, Field, MultiField, VectorField};
pub use rules::{affinity_map, growth, rasterize_kernel, FlowParams, GrowthSpec, KernelCache, KernelPair, KernelSpec, RuleSet};
pub use frame::{FrameEncoding, FrameMessage};
pub use scalar::{Precision, Scalar};
pub use transport::Displacement;
pub use world::{BrushTarget, Rect, World};

pub type Field64 = Field<f64>;
pub type Field32 = Field<f32>;
pub type MultiField64 = MultiField<f64>;
pub type MultiField32 = MultiField<f32>;
pub type World64 = World<f64>;
pub type World32 = World<f32>;
