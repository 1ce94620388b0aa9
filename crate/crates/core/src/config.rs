//! Pipeline configuration loaded from TOML. Relative paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action_labeler::LabelThresholds;
use crate::analysis::StatsConfig;
use crate::eval_metrics::{EgoDims, DEFAULT_GRID, HORIZONS};
use crate::reasoning_orchestrator::{EndpointConfig, Lexicon, PromptConfig, RejectPolicy};
use crate::scene_store::{DEFAULT_STRIDE, DEFAULT_WINDOW_LEN};
use crate::template_engine::{FactThresholds, GenerationConfig, QaCategory, TemplateSet, DEFAULT_RUBRIC};
use crate::temporal_memory::MemoryConfig;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of raw scene documents (`*.json`).
    pub scenes: PathBuf,
    /// Root for every stage's outputs.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            scenes: "scenes".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesConfig {
    pub window_len: usize,
    pub stride: usize,
    pub templates: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub thresholds: FactThresholds,
    pub categories: Vec<QaCategory>,
}

impl Default for TemplatesConfig {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
            templates: None,
            priors: None,
            thresholds: FactThresholds::default(),
            categories: QaCategory::ALL.to_vec(),
        }
    }
}

impl TemplatesConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            thresholds: self.thresholds,
            categories: self.categories.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    pub endpoint: EndpointConfig,
    pub prompt: PromptConfig,
    pub reject_policy: RejectPolicy,
    /// JSON lexicon replacing the built-in one.
    pub lexicon: Option<PathBuf>,
    pub rubric: Option<PathBuf>,
    /// Defaults to `<out>/audit.jsonl`.
    pub audit_log: Option<PathBuf>,
    pub tasks: Vec<QaCategory>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointConfig::default(),
            prompt: PromptConfig::default(),
            reject_policy: RejectPolicy::default(),
            lexicon: None,
            rubric: None,
            audit_log: None,
            tasks: QaCategory::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ego_length: f64,
    pub ego_width: f64,
    /// Waypoint times in seconds; must contain 1, 2 and 3.
    pub grid: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let d = EgoDims::default();
        Self {
            ego_length: d.length,
            ego_width: d.width,
            grid: DEFAULT_GRID.to_vec(),
        }
    }
}

impl MetricsConfig {
    pub fn dims(&self) -> EgoDims {
        EgoDims {
            length: self.ego_length,
            width: self.ego_width,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dry_run: bool,
    pub paths: Paths,
    /// When the block is present all five thresholds are required.
    pub labeler: LabelThresholds,
    pub templates: TemplatesConfig,
    pub orchestrator: OrchestratorConfig,
    pub metrics: MetricsConfig,
    pub temporal_memory: MemoryConfig,
    pub stats: StatsConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    /// Defaults with paths relative to `base_dir`.
    pub fn with_base(base_dir: &Path) -> Self {
        let mut cfg = Self::default();
        cfg.resolve_paths(base_dir);
        cfg
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.paths.scenes);
        resolve(base, &mut self.paths.out);
        let optional = [
            &mut self.templates.templates,
            &mut self.templates.priors,
            &mut self.orchestrator.lexicon,
            &mut self.orchestrator.rubric,
            &mut self.orchestrator.audit_log,
            &mut self.stats.stopwords,
        ];
        for p in optional.into_iter().flatten() {
            resolve(base, p);
        }
    }

    /// Checks every block and that referenced data files exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |block: &str, m: String| ConfigError(format!("[{block}] {m}"));
        self.labeler.validate().map_err(|x| e("labeler", x.to_string()))?;
        self.templates.thresholds.validate().map_err(|x| e("templates", x.to_string()))?;
        if self.templates.window_len == 0 || self.templates.stride == 0 {
            return Err(e("templates", "window_len and stride must be >= 1".into()));
        }
        self.orchestrator.endpoint.validate().map_err(|x| e("orchestrator", x.to_string()))?;
        if self.orchestrator.prompt.token_budget == 0 {
            return Err(e("orchestrator", "prompt.token_budget must be positive".into()));
        }
        let m = &self.metrics;
        if !(m.ego_length > 0.0 && m.ego_width > 0.0) {
            return Err(e("metrics", "ego dimensions must be positive".into()));
        }
        if m.grid.windows(2).any(|w| w[1] <= w[0]) || HORIZONS.iter().any(|h| !m.grid.iter().any(|g| (g - h).abs() < 1e-9)) {
            return Err(e("metrics", format!("grid must be increasing and contain 1, 2 and 3 s, got {:?}", m.grid)));
        }
        self.temporal_memory.validate().map_err(|x| e("temporal_memory", x.to_string()))?;
        self.stats.validate().map_err(|x| e("stats", x.to_string()))?;
        let files = [
            ("templates", &self.templates.templates),
            ("templates", &self.templates.priors),
            ("orchestrator", &self.orchestrator.lexicon),
            ("orchestrator", &self.orchestrator.rubric),
            ("stats", &self.stats.stopwords),
        ];
        for (block, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(e(block, format!("file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn template_set(&self) -> Result<TemplateSet, ConfigError> {
        TemplateSet::load(self.templates.templates.as_deref(), self.templates.priors.as_deref())
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn lexicon(&self) -> Result<Lexicon, ConfigError> {
        match &self.orchestrator.lexicon {
            None => Ok(Lexicon::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn rubric(&self) -> Result<String, ConfigError> {
        match &self.orchestrator.rubric {
            None => Ok(DEFAULT_RUBRIC.to_owned()),
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display()))),
        }
    }

    pub fn audit_log_path(&self) -> PathBuf {
        self.orchestrator.audit_log.clone().unwrap_or_else(|| self.paths.out.join("audit.jsonl"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        let c = PipelineConfig::from_toml("", Path::new("/base")).unwrap();
        assert_eq!(c.paths.out, PathBuf::from("/base/out"));
        assert_eq!(c.labeler, LabelThresholds::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn labeler_block_needs_all_thresholds() {
        let partial = "[labeler]\ncrawl_speed = 2.0\n";
        assert!(PipelineConfig::from_toml(partial, Path::new(".")).is_err());
        let full = "seed = 9\n[labeler]\ncrawl_speed = 1.5\nfast_speed = 9.0\nstop_speed = 0.4\ndelta_speed = 1.0\nturn_deg = 40.0\n";
        let c = PipelineConfig::from_toml(full, Path::new(".")).unwrap();
        assert_eq!((c.seed, c.labeler.crawl_speed), (9, 1.5));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(PipelineConfig::from_toml("[metrics]\nego_len = 4.0\n", Path::new(".")).is_err());
        let c = PipelineConfig::from_toml("[metrics]\ngrid = [0.5, 1.0, 2.0]\n", Path::new(".")).unwrap();
        assert!(c.validate().unwrap_err().0.contains("[metrics]"));
        let c = PipelineConfig::from_toml("[temporal_memory]\nd = 30\nh = 4\n", Path::new(".")).unwrap();
        assert!(c.validate().unwrap_err().0.contains("[temporal_memory]"));
    }

    #[test]
    fn referenced_files_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig::from_toml("[orchestrator]\nrubric = \"missing.txt\"\n", dir.path()).unwrap();
        let err = c.validate().unwrap_err().0;
        assert!(err.contains("missing.txt"), "{err}");
        std::fs::write(dir.path().join("missing.txt"), "rubric").unwrap();
        assert!(c.validate().is_ok());
        assert_eq!(c.rubric().unwrap(), "rubric");
    }

    #[test]
    fn nested_blocks_parse() {
        let text = r#"
[templates]
window_len = 3
stride = 1
categories = ["environment", "action"]

[orchestrator]
reject_policy = "drop"
tasks = ["reasoning"]

[orchestrator.endpoint]
model = "qwen"
max_inflight = 2

[orchestrator.prompt]
token_budget = 512
"#;
        let c = PipelineConfig::from_toml(text, Path::new("/x")).unwrap();
        assert_eq!(c.templates.window_len, 3);
        assert_eq!(c.orchestrator.reject_policy, RejectPolicy::Drop);
        assert_eq!(c.orchestrator.endpoint.max_inflight, 2);
        assert_eq!(c.orchestrator.prompt.token_budget, 512);
        assert_eq!(c.audit_log_path(), PathBuf::from("/x/out/audit.jsonl"));
        assert!(c.validate().is_ok());
    }
}
