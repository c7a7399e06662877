//! Simulation configuration, stored as versioned JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecology::{ChemGeometry, WallForest, DEFAULT_WALL_STRENGTH};
use crate::embedding::MixingPolicy;
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::explore::{SamplerRanges, DEFAULT_PATCH_SIDE};
use crate::rules::{FlowParams, RuleSet};
use crate::scalar::Precision;

pub const SCHEMA_VERSION: u32 = 1;

/// Where a world's rules come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    Explicit(RuleSet),
    Sampled {
        seed: u64,
        #[serde(default)]
        ranges: SamplerRanges,
    },
}

/// A read-only layer sensed through a static channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Food,
    Walls,
    Chem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub mixing: MixingPolicy,
    /// Steps between zone mutations; 0 disables them.
    #[serde(default = "default_mutation_every")]
    pub mutation_every: u64,
    #[serde(default = "default_mutation_radius")]
    pub mutation_radius: f64,
    #[serde(default = "default_mutation_sigma")]
    pub mutation_sigma: f64,
    /// Initial parameter vector of every cell; the rules' `h` when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

fn default_mutation_every() -> u64 {
    500
}

fn default_mutation_radius() -> f64 {
    10.0
}

fn default_mutation_sigma() -> f64 {
    0.2
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            mixing: MixingPolicy::default(),
            mutation_every: default_mutation_every(),
            mutation_radius: default_mutation_radius(),
            mutation_sigma: default_mutation_sigma(),
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcologyConfig {
    #[serde(default)]
    pub rho_decay: f64,
    #[serde(default)]
    pub rho_digest: f64,
    /// Initial food level of every cell.
    #[serde(default)]
    pub food: f64,
    #[serde(default = "default_wall_strength")]
    pub wall_strength: f64,
    /// Random wall discs around the grid centre.
    #[serde(default)]
    pub walls: Option<WallForest>,
    /// Gaussian chemical peak on a circle around the grid centre.
    #[serde(default)]
    pub chem: Option<ChemGeometry>,
    /// Layers feeding the rule set's static channels, in order.
    #[serde(default)]
    pub sensed: Vec<Layer>,
}

fn default_wall_strength() -> f64 {
    DEFAULT_WALL_STRENGTH
}

impl Default for EcologyConfig {
    fn default() -> Self {
        Self {
            rho_decay: 0.0,
            rho_digest: 0.0,
            food: 0.0,
            wall_strength: DEFAULT_WALL_STRENGTH,
            walls: None,
            chem: None,
            sensed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    /// Matter channels.
    pub channels: usize,
    /// `(C + S) × (C + S)` kernel counts; rows past `channels` are sensed layers.
    pub adjacency: Vec<Vec<u32>>,
    pub rules: RuleSource,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub precision: Precision,
    /// Seeds the initial patch, task geometry and mutations.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patch_side")]
    pub patch_side: usize,
    #[serde(default)]
    pub embedding: Option<EmbeddingConfig>,
    #[serde(default)]
    pub ecology: Option<EcologyConfig>,
    /// Steps between frames written by batch runs; 0 writes only the first and last.
    #[serde(default)]
    pub frame_stride: u64,
}

fn default_patch_side() -> usize {
    DEFAULT_PATCH_SIDE
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            width: 128,
            height: 128,
            channels: 1,
            adjacency: vec![vec![10]],
            rules: RuleSource::Sampled {
                seed: 0,
                ranges: SamplerRanges::default(),
            },
            mode: Mode::Flow,
            flow: FlowParams::default(),
            precision: Precision::Double,
            seed: 0,
            patch_side: DEFAULT_PATCH_SIDE,
            embedding: None,
            ecology: None,
            frame_stride: 0,
        }
    }
}

impl SimConfig {
    pub fn static_channels(&self) -> usize {
        self.adjacency.len().saturating_sub(self.channels)
    }

    /// Checks everything that can be checked without building the world.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.width < 3 || self.height < 3 {
            return Err(Error::Config(format!("grid {}x{} is too small", self.width, self.height)));
        }
        if self.channels == 0 || self.adjacency.len() < self.channels {
            return Err(Error::Config("adjacency must cover every matter channel".into()));
        }
        self.flow.validate()?;
        if self.patch_side > self.width.min(self.height) {
            return Err(Error::Config(format!("patch side {} exceeds the grid", self.patch_side)));
        }
        let sensed = self.ecology.as_ref().map_or(0, |e| e.sensed.len());
        if sensed != self.static_channels() {
            return Err(Error::Config(format!(
                "adjacency declares {} sensed layers but the ecology lists {sensed}",
                self.static_channels()
            )));
        }
        if let RuleSource::Explicit(rules) = &self.rules {
            rules.validate()?;
            if rules.channels != self.channels || rules.adjacency != self.adjacency {
                return Err(Error::Config("explicit rules disagree with channels/adjacency".into()));
            }
        }
        if let Some(e) = &self.embedding {
            if !(e.mutation_radius >= 0.0) || !(e.mutation_sigma >= 0.0) {
                return Err(Error::Config("mutation radius and sigma must be non-negative".into()));
            }
        }
        if let Some(e) = &self.ecology {
            for (name, v) in [("rho_decay", e.rho_decay), ("rho_digest", e.rho_digest)] {
                crate::error::check_range(name, v, 0.0, 1.0)?;
            }
            if !(e.food >= 0.0) || !(e.wall_strength >= 0.0) {
                return Err(Error::Config("food level and wall strength must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MixingMode;
    use crate::rules::tests::single_pair_rules;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_minimal_json_parses() {
        SimConfig::default().validate().unwrap();
        let cfg = SimConfig::from_json(
            r#"{"schema_version":1,"width":64,"height":64,"channels":1,"adjacency":[[10]],"rules":{"sampled":{"seed":4}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.patch_side, 40);
        assert_eq!(cfg.flow, FlowParams::default());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SimConfig {
                schema_version: 9,
                ..Default::default()
            },
            SimConfig {
                patch_side: 400,
                ..Default::default()
            },
            SimConfig {
                adjacency: vec![vec![1, 0], vec![1, 0]],
                ..Default::default()
            },
            SimConfig {
                flow: FlowParams {
                    theta_a: 0.0,
                    ..Default::default()
                },
                ..Default::default()
            },
            SimConfig {
                ecology: Some(EcologyConfig {
                    rho_decay: -0.5,
                    ..Default::default()
                }),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(SimConfig::from_json(r#"{"schema_version":1,"bogus":1}"#).is_err());
    }

    #[test]
    fn explicit_rules_must_match_the_wiring() {
        let rules = single_pair_rules(0.2, 0.05, 1.0);
        let mut cfg = SimConfig {
            adjacency: vec![vec![1]],
            rules: RuleSource::Explicit(rules),
            ..Default::default()
        };
        cfg.validate().unwrap();
        cfg.adjacency = vec![vec![2]];
        assert!(cfg.validate().is_err());
    }

    fn arb_config() -> impl Strategy<Value = SimConfig> {
        (
            8usize..256,
            8usize..256,
            any::<u64>(),
            0.3f64..2.0,
            0.01f64..1.0,
            prop::option::of((any::<u64>(), any::<bool>(), 0u64..2000, 0.0f64..30.0)),
            prop::option::of((0.0f64..1.0, 0.0f64..1.0, 0.0f64..5.0)),
        )
            .prop_map(|(w, h, seed, s, dt, emb, eco)| SimConfig {
                width: w,
                height: h,
                seed,
                patch_side: w.min(h) / 2,
                flow: FlowParams {
                    s,
                    dt,
                    ..Default::default()
                },
                embedding: emb.map(|(rng_seed, avg, every, radius)| EmbeddingConfig {
                    mixing: MixingPolicy {
                        mode: if avg { MixingMode::Average } else { MixingMode::SoftmaxSample },
                        rng_seed,
                        crossover: !avg,
                    },
                    mutation_every: every,
                    mutation_radius: radius,
                    ..Default::default()
                }),
                ecology: eco.map(|(rho_decay, rho_digest, food)| EcologyConfig {
                    rho_decay,
                    rho_digest,
                    food,
                    walls: Some(WallForest::default()),
                    ..Default::default()
                }),
                ..Default::default()
            })
    }

    proptest! {
        #[test]
        fn config_round_trips(cfg in arb_config()) {
            let back = SimConfig::from_json(&cfg.to_json()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
