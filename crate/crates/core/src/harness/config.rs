use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::WorldSpec;
use crate::federated::{default_schedule, AggregationSchedule, Band, FederatedConfig};
use crate::model::{ModelConfig, PersonalConfig};
use crate::privacy::{AttackNorm, SweepConfig};

use super::HarnessError;

/// Which aggregation schedule to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulePreset {
    /// Night 4 h, rush hours 30 min, daytime and evening 2 h.
    #[default]
    Banded,
    /// One aggregation at midnight over the previous day.
    Daily,
    /// The `bands` listed in the section.
    Custom,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub preset: SchedulePreset,
    pub bands: Vec<Band>,
}

impl ScheduleSection {
    pub fn schedule(&self) -> AggregationSchedule {
        match self.preset {
            SchedulePreset::Banded => default_schedule(),
            SchedulePreset::Daily => AggregationSchedule::daily(),
            SchedulePreset::Custom => AggregationSchedule { bands: self.bands.clone() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Simulated days; all but the last are training, the last is held out.
    pub days: usize,
    /// Region grid for driver profiles, over the network's bounding box.
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Write a global checkpoint after every round.
    pub checkpoints: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            days: 3,
            grid_rows: 4,
            grid_cols: 4,
            checkpoints: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub epsilons: Vec<f64>,
    pub seeds: usize,
    pub k: usize,
    pub norm: AttackNorm,
    /// Attack the first this many non-skipped training rounds.
    pub rounds: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            epsilons: s.epsilons,
            seeds: s.seeds,
            k: s.k,
            norm: s.norm,
            rounds: 16,
        }
    }
}

impl AttackSection {
    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            epsilons: self.epsilons.clone(),
            seeds: self.seeds,
            k: self.k,
            norm: self.norm,
        }
    }
}

/// Full experiment description, one TOML section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub model: ModelConfig,
    pub personal: PersonalConfig,
    pub federated: FederatedConfig,
    pub schedule: ScheduleSection,
    pub experiment: ExperimentSection,
    pub attack: AttackSection,
}

/// Command-line overrides; `seed` sets both the world and the federation seed.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub clients: Option<usize>,
    pub epochs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.world.seed = s;
            self.federated.seed = s;
        }
        if let Some(e) = o.epsilon {
            self.federated.dp_epsilon = e;
        }
        if let Some(c) = o.clients {
            self.federated.clients_per_round = c;
        }
        if let Some(e) = o.epochs {
            self.federated.local_epochs = e;
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.world.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.federated.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.schedule.schedule().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.experiment.days < 2 {
            return bad("experiment.days must be >= 2 (training days plus one held-out day)".into());
        }
        if self.model.slots_per_day != self.world.slots_per_day {
            return bad(format!(
                "model.slots_per_day = {} but world.slots_per_day = {}",
                self.model.slots_per_day, self.world.slots_per_day
            ));
        }
        if self.experiment.grid_rows == 0 || self.experiment.grid_cols == 0 {
            return bad("grid_rows and grid_cols must be >= 1".into());
        }
        if self.personal.top_k == 0 || self.personal.embed_dim == 0 {
            return bad("personal.top_k and personal.embed_dim must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(back.federated.dp_epsilon.is_infinite());
    }

    #[test]
    fn sections_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            "[federated]\ndp_epsilon = 10.0\nclients_per_round = 3\n[schedule]\npreset = \"daily\"\n[experiment]\ndays = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.federated.dp_epsilon, 10.0);
        assert_eq!(cfg.schedule.schedule(), AggregationSchedule::daily());
        assert_eq!(cfg.experiment.days, 5);
        assert!(ExperimentConfig::from_toml_str("[federated]\nlr = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn validation_failures() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.days = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.model.slots_per_day = 24;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            epsilon: Some(-1.0),
            ..Default::default()
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_override_sets_both_seeds() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            seed: Some(7),
            clients: Some(2),
            epochs: Some(4),
            ..Default::default()
        });
        assert_eq!((cfg.world.seed, cfg.federated.seed), (7, 7));
        assert_eq!((cfg.federated.clients_per_round, cfg.federated.local_epochs), (2, 4));
    }
}
