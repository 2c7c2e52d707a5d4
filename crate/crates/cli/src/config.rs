use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use snn_trojan::data::SyntheticParams;
use snn_trojan::grad::TrainConfig;
use snn_trojan::hw::AttackConfig;
use snn_trojan::snn::{FaultKind, NeuronParams};
use snn_trojan::trigger::TriggerSearchConfig;

pub const DEFAULT_SEED: u64 = 7;

/// Everything a pipeline run can be configured with. Loaded from TOML (or
/// JSON when the file ends in `.json`); command-line flags win.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own seed from it by label.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub data: DataOptions,
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub campaign: CampaignOptions,
    pub pattern: PatternOptions,
    pub trigger: TriggerSearchConfig,
    pub hw: HwOptions,
}

/// Artifact locations; unset entries default to fixed names in the output
/// directory.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pattern: Option<PathBuf>,
    pub trigger: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// The generator's own `seed` is replaced by one derived from the root.
    pub synthetic: SyntheticParams,
    pub train_samples: usize,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            synthetic: SyntheticParams::default(),
            train_samples: 150,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub neuron: NeuronParams,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignOptions {
    pub kinds: Vec<FaultKind>,
    pub layers: Option<Vec<usize>>,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            kinds: vec![FaultKind::Dead, FaultKind::Saturated],
            layers: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternOptions {
    /// `L<layer>:<neuron>`; picked from a saturated-fault scan when unset.
    pub trojan: Option<String>,
    pub d_max: usize,
    pub budget: usize,
}

impl Default for PatternOptions {
    fn default() -> Self {
        PatternOptions {
            trojan: None,
            d_max: 32,
            budget: snn_trojan::attack::DEFAULT_CANDIDATE_BUDGET,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwOptions {
    pub cores: usize,
    /// Build the Trojan into the accelerator.
    pub ht: bool,
    pub attack: AttackConfig,
    /// Test sample whose attack run is written out as a trace.
    pub trace_sample: usize,
}

impl Default for HwOptions {
    fn default() -> Self {
        HwOptions {
            cores: 4,
            ht: true,
            attack: AttackConfig::default(),
            trace_sample: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn root_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        snn_trojan::seed::derive(self.root_seed(), stage)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    pub fn train_path(&self) -> PathBuf {
        self.paths.train.clone().unwrap_or_else(|| self.out("train.jsonl"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.paths.test.clone().unwrap_or_else(|| self.out("test.jsonl"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.out("model.json"))
    }

    pub fn pattern_path(&self) -> PathBuf {
        self.paths.pattern.clone().unwrap_or_else(|| self.out("pattern.json"))
    }

    pub fn trigger_path(&self) -> PathBuf {
        self.paths.trigger.clone().unwrap_or_else(|| self.out("trigger.json"))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.threads == Some(0) {
            bail!("--threads must be positive");
        }
        if self.hw.cores == 0 {
            bail!("hw.cores must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_configs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("run.toml");
        std::fs::write(
            &t,
            "seed = 3\n[campaign]\nkinds = [\"saturated\"]\n[hw]\ncores = 2\n[hw.attack]\ngap_steps = 0\n",
        )
        .unwrap();
        let j = dir.path().join("run.json");
        std::fs::write(
            &j,
            r#"{"seed": 3, "campaign": {"kinds": ["saturated"]}, "hw": {"cores": 2, "attack": {"gap_steps": 0}}}"#,
        )
        .unwrap();
        for p in [t, j] {
            let c = RunConfig::load(&p).unwrap();
            assert_eq!(c.root_seed(), 3);
            assert_eq!(c.campaign.kinds, vec![FaultKind::Saturated]);
            assert_eq!(c.hw.cores, 2);
            assert_eq!(c.hw.attack.gap_steps, 0);
            assert!(c.hw.attack.reset_between_phases);
            assert_eq!(c.pattern.d_max, 32);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "sede = 3\n").unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn stage_seeds_differ_and_follow_the_root() {
        let a = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        let b = RunConfig {
            seed: Some(2),
            ..RunConfig::default()
        };
        assert_ne!(a.stage_seed("data"), a.stage_seed("train"));
        assert_ne!(a.stage_seed("data"), b.stage_seed("data"));
    }
}
