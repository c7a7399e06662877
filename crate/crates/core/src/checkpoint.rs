//! Checkpoints: a world's full state as JSON with base64 little-endian arrays.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RuleSource, SimConfig};
use crate::ecology::EcologyState;
use crate::embedding::ParamMap;
use crate::engine::Stepper;
use crate::error::{Error, Result};
use crate::field::{Field, MultiField};
use crate::scalar::{Precision, Scalar};
use crate::world::World;

pub const FORMAT_VERSION: u32 = 1;

/// `layers` planes of `width × height` scalars, row-major, little-endian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedArray {
    pub width: usize,
    pub height: usize,
    pub layers: usize,
    pub data: String,
}

impl EncodedArray {
    pub fn encode<T: Scalar>(width: usize, height: usize, layers: usize, values: impl Iterator<Item = T>) -> Self {
        let mut bytes = Vec::with_capacity(width * height * layers * T::BYTES);
        values.for_each(|v| v.write_le(&mut bytes));
        Self {
            width,
            height,
            layers,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode<T: Scalar>(&self) -> Result<Vec<T>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
        let n = self.width * self.height * self.layers;
        if bytes.len() != n * T::BYTES {
            return Err(Error::Checkpoint(format!(
                "array holds {} bytes, expected {}",
                bytes.len(),
                n * T::BYTES
            )));
        }
        Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    fn of_multi<T: Scalar>(m: &MultiField<T>) -> Self {
        let (w, h) = m.dims();
        Self::encode(w, h, m.channel_count(), m.channels().iter().flat_map(|c| c.values().iter().copied()))
    }

    fn of_field<T: Scalar>(f: &Field<T>) -> Self {
        Self::encode(f.width(), f.height(), 1, f.values().iter().copied())
    }

    fn to_multi<T: Scalar>(&self) -> Result<MultiField<T>> {
        let values = self.decode::<T>()?;
        let plane = self.width * self.height;
        MultiField::new(
            values
                .chunks(plane.max(1))
                .take(self.layers)
                .map(|c| Field::from_vec(self.width, self.height, c.to_vec()))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    fn to_field<T: Scalar>(&self) -> Result<Field<T>> {
        Field::from_vec(self.width, self.height, self.decode()?)
    }
}

/// Key and position of the world's ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, base64.
    pub seed: String,
    pub stream: u64,
    /// Word position, as a decimal string (it is 68 bits wide).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: STANDARD.encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = STANDARD
            .decode(&self.seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Checkpoint("generator key must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedEcology {
    pub food: EncodedArray,
    pub walls: EncodedArray,
    pub chem: EncodedArray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Current configuration, with explicit rules.
    pub config: SimConfig,
    pub step: u64,
    pub precision: Precision,
    pub state: EncodedArray,
    /// Cell-major: the `layers` parameters of a cell are contiguous.
    pub params: Option<EncodedArray>,
    pub ecology: Option<EncodedEcology>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Self = serde_json::from_str(text)?;
        if cp.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", cp.format_version)));
        }
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl<T: Scalar> World<T> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            precision: T::PRECISION,
            state: EncodedArray::of_multi(&self.state),
            params: self.params.as_ref().map(|p| {
                let (w, h) = p.dims();
                EncodedArray::encode(w, h, p.dim(), p.values().iter().copied())
            }),
            ecology: self.ecology.as_ref().map(|e| EncodedEcology {
                food: EncodedArray::of_field(&e.food),
                walls: EncodedArray::of_field(&e.walls),
                chem: EncodedArray::of_field(&e.chem),
            }),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Rebuilds a world that continues exactly where the checkpoint left off.
    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.precision != T::PRECISION {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} data, world is {:?}",
                cp.precision,
                T::PRECISION
            )));
        }
        let config = cp.config.clone();
        config.validate()?;
        let RuleSource::Explicit(rules) = &config.rules else {
            return Err(Error::Checkpoint("checkpoint rules must be explicit".into()));
        };
        let rules = rules.clone();
        let (w, h) = (config.width, config.height);
        let state = cp.state.to_multi::<T>()?;
        if state.dims() != (w, h) || state.channel_count() != config.channels {
            return Err(Error::Checkpoint("state shape disagrees with the configuration".into()));
        }
        let params = match (&cp.params, &config.embedding) {
            (Some(p), Some(_)) if (p.width, p.height) == (w, h) => {
                Some(ParamMap::from_vec(w, h, p.layers, p.decode()?)?)
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("parameter map and embedding settings disagree".into())),
        };
        let ecology = match (&cp.ecology, &config.ecology) {
            (Some(e), Some(c)) => Some(EcologyState {
                food: e.food.to_field()?,
                walls: e.walls.to_field()?,
                chem: e.chem.to_field()?,
                rho_decay: c.rho_decay,
                rho_digest: c.rho_digest,
            }),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("ecology layers and settings disagree".into())),
        };
        let stepper = Stepper::new(&rules, w, h, config.mode, config.flow)?;
        let mut world = World {
            config,
            rules,
            stepper,
            state,
            params,
            ecology,
            step: cp.step,
            rng: cp.rng.restore()?,
        };
        world.refresh_wall_flow();
        Ok(world)
    }
}
