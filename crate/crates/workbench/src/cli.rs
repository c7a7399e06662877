//! Command line definitions.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowlenia::{Mode, Precision};

#[derive(Debug, Parser)]
#[command(name = "flowlenia", version, about = "Flow Lenia simulations, searches, evolution runs and live sessions")]
pub struct Cli {
    /// Overrides the precision stored in configs and task files.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Worker threads for the numeric pool (defaults to all cores).
    #[arg(long, global = true, env = "FLOWLENIA_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Flow,
    Lenia,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Flow => Mode::Flow,
            ModeArg::Lenia => Mode::Lenia,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a world and write frames, a step log and a final checkpoint.
    Simulate(SimulateArgs),
    /// Sample random rule sets, roll them out and report pattern statistics.
    Search(SearchArgs),
    /// Optimize rules and initial patch with OpenES.
    Evolve(EvolveArgs),
    /// Serve live sessions over HTTP and WebSocket.
    Serve(ServeArgs),
    /// Convert a frame file to PNG.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON simulation config.
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting from a config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub steps: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Steps between frames; overrides the config's `frame_stride`.
    #[arg(long)]
    pub frame_stride: Option<u64>,
    /// Also write an RGB composite PNG per frame.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// JSON search settings; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    /// JSON-lines report, one record per sample.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for checkpoints of the fastest localized patterns.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Overrides the update rule of the search settings.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Args)]
pub struct EvolveArgs {
    /// JSON task spec; required unless resuming or running the sphere surrogate.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// JSON ES settings; missing fields take their defaults.
    #[arg(long)]
    pub es: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total generations to reach (overrides the ES settings).
    #[arg(long)]
    pub generations: Option<u64>,
    /// Continue the run stored in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Roll out with the classic Lenia update instead of Flow Lenia.
    #[arg(long)]
    pub baseline_lenia: bool,
    /// Optimize `-‖g − 0.5‖²` over this many genes instead of a simulation task.
    #[arg(long, conflicts_with = "task")]
    pub sphere: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Config used by sessions created without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// JSON sidecar of the frame.
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Draw only this channel of a raw frame, in grey.
    #[arg(long)]
    pub channel: Option<usize>,
    /// Nearest-neighbour upscaling factor.
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
}
