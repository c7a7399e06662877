//! A world whose precision is chosen at run time.

use flowlenia::{center_of_mass, BrushTarget, Checkpoint, FrameEncoding, FrameMessage, Mode, Precision, Rect, SimConfig, StepReport, World};

use crate::error::{Result, WorkbenchError};

#[derive(Debug)]
pub enum AnyWorld {
    Single(World<f32>),
    Double(World<f64>),
}

macro_rules! with_world {
    ($self:expr, $w:ident => $body:expr) => {
        match $self {
            AnyWorld::Single($w) => $body,
            AnyWorld::Double($w) => $body,
        }
    };
}

impl AnyWorld {
    /// Builds a world at `precision`, or at the configuration's precision when `None`.
    pub fn new(mut config: SimConfig, precision: Option<Precision>) -> Result<Self> {
        if let Some(p) = precision {
            config.precision = p;
        }
        Ok(match config.precision {
            Precision::Single => AnyWorld::Single(World::new(config)?),
            Precision::Double => AnyWorld::Double(World::new(config)?),
        })
    }

    pub fn from_checkpoint(cp: &Checkpoint, precision: Option<Precision>) -> Result<Self> {
        if precision.is_some_and(|p| p != cp.precision) {
            return Err(WorkbenchError::Usage(format!(
                "checkpoint holds {:?} data; drop --precision or convert it",
                cp.precision
            )));
        }
        Ok(match cp.precision {
            Precision::Single => AnyWorld::Single(World::from_checkpoint(cp)?),
            Precision::Double => AnyWorld::Double(World::from_checkpoint(cp)?),
        })
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyWorld::Single(_) => Precision::Single,
            AnyWorld::Double(_) => Precision::Double,
        }
    }

    pub fn config(&self) -> &SimConfig {
        with_world!(self, w => w.config())
    }

    pub fn step(&mut self) -> Result<StepReport> {
        Ok(with_world!(self, w => w.step()?))
    }

    pub fn step_index(&self) -> u64 {
        with_world!(self, w => w.step_index())
    }

    pub fn total_mass(&self) -> Vec<f64> {
        with_world!(self, w => w.total_mass())
    }

    pub fn center_of_mass(&self) -> Option<[f64; 2]> {
        with_world!(self, w => center_of_mass(w.state()))
    }

    /// Drift of a transport step beyond the precision's tolerance, if any (Flow mode only).
    pub fn conservation_violation(&self, report: &StepReport) -> Option<(f64, f64)> {
        let tolerance = self.precision().conservation_tolerance();
        let drift = report.max_relative_drift();
        (self.config().mode == Mode::Flow && !(drift <= tolerance)).then_some((drift, tolerance))
    }

    pub fn scalar(&self, key: &str) -> Result<f64> {
        Ok(with_world!(self, w => w.scalar(key)?))
    }

    pub fn set_scalar(&mut self, key: &str, value: f64) -> Result<()> {
        Ok(with_world!(self, w => w.set_scalar(key, value))?)
    }

    pub fn paint(&mut self, target: BrushTarget, rect: Rect, value: f64) -> Result<()> {
        Ok(with_world!(self, w => w.paint(target, rect, value))?)
    }

    pub fn inject_species(&mut self, rect: Rect, vector: &[f64]) -> Result<()> {
        Ok(with_world!(self, w => w.inject_species(rect, vector))?)
    }

    pub fn mutate(&mut self) -> Result<()> {
        Ok(with_world!(self, w => w.mutate())?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        with_world!(self, w => w.checkpoint())
    }

    pub fn frame(&self, encoding: FrameEncoding) -> FrameMessage {
        with_world!(self, w => match encoding {
            FrameEncoding::RawF32 => FrameMessage::raw(w.step_index(), w.state()),
            FrameEncoding::Rgb8 => FrameMessage::composite(w.step_index(), w.state(), w.params()),
        })
    }
}
