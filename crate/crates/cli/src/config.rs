//! Optional TOML run configuration. Command-line flags override it.

use std::path::Path;

use anyhow::{Context, Result};
use parapush_core::analytical::AnalyticalParams;
use parapush_core::fine::FineParams;
use parapush_core::learned::DatasetConfig;
use parapush_core::nn::TrainConfig;
use parapush_core::planner::{CostParams, MpcConfig, OptimizerConfig};
use parapush_core::{Rect, SceneConfig, Vec2};
use serde::{Deserialize, Serialize};

/// Scene settings that do not depend on the slider count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneOverrides {
    pub pusher_radius: Option<f64>,
    pub slider_radius: Option<f64>,
    /// `[min_x, min_y, max_x, max_y]`, meters.
    pub table_bounds: Option<[f64; 4]>,
    pub goal_center: Option<[f64; 2]>,
    pub goal_radius: Option<f64>,
    pub max_speed: Option<f64>,
}

impl SceneOverrides {
    pub fn apply(&self, cfg: &mut SceneConfig) {
        if let Some(r) = self.pusher_radius {
            cfg.pusher_radius = r;
        }
        if let Some(r) = self.slider_radius {
            cfg.slider_radii = vec![r; cfg.num_sliders];
        }
        if let Some([a, b, c, d]) = self.table_bounds {
            cfg.table_bounds = Rect::new(a, b, c, d);
        }
        if let Some([x, y]) = self.goal_center {
            cfg.goal_center = Vec2::new(x, y);
        }
        if let Some(r) = self.goal_radius {
            cfg.goal_radius = r;
        }
        if let Some(v) = self.max_speed {
            cfg.max_speed = v;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scene: SceneOverrides,
    pub fine: FineParams,
    pub analytical: AnalyticalParams,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub cost: CostParams,
    pub optimizer: OptimizerConfig,
    pub mpc: MpcConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Scene with `num_sliders` slots, the first `active` in play.
    pub fn scene(&self, num_sliders: usize, active: usize) -> Result<SceneConfig> {
        let mut cfg = SceneConfig::with_sliders(num_sliders, active);
        self.scene.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: FileConfig = toml::from_str("[train]\nepochs = 3\n[scene]\ngoal_radius = 0.07\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 1024);
        let scene = cfg.scene(4, 2).unwrap();
        assert_eq!(scene.goal_radius, 0.07);
        assert_eq!(scene.active_sliders, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[scene]\nfoo = 1\n").is_err());
    }
}
