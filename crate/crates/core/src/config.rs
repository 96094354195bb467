//! Run configuration in `key = value` form.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::recommender::{ConfigError, TrainingConfig};

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{content}`")]
    Malformed { line: usize, content: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: `{value}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error(transparent)]
    Training(#[from] ConfigError),
}

/// Everything a run needs: hyperparameters, data paths, and the behavior
/// roster with its target marker.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub training: TrainingConfig,
    /// Interaction log (`user<TAB>item<TAB>behavior` lines).
    pub interactions: PathBuf,
    /// Ordered behavior roster.
    pub behaviors: Vec<String>,
    /// Target behavior name; must appear in the roster.
    pub target: String,
    /// Directory for splits, checkpoints, logs, and metric files.
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parses a `key = value` config file. Lines starting with `#` and blank
    /// lines are ignored. Hyperparameters default as in
    /// [`TrainingConfig::default`]; `interactions`, `behaviors`, and `target`
    /// are required.
    pub fn from_file(path: &Path) -> Result<Self, RunConfigError> {
        Self::from_str_content(&std::fs::read_to_string(path)?)
    }

    pub fn from_str_content(content: &str) -> Result<Self, RunConfigError> {
        let mut training = TrainingConfig::default();
        let mut interactions: Option<PathBuf> = None;
        let mut behaviors: Option<Vec<String>> = None;
        let mut target: Option<String> = None;
        let mut output_dir = PathBuf::from("out");

        for (line_no, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => {
                    return Err(RunConfigError::Malformed {
                        line: line_no + 1,
                        content: line.to_string(),
                    })
                }
            };
            let bad = |k: &str, v: &str| RunConfigError::BadValue {
                line: line_no + 1,
                key: k.to_string(),
                value: v.to_string(),
            };
            match key {
                "interactions" => interactions = Some(PathBuf::from(value)),
                "behaviors" => {
                    behaviors = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect(),
                    )
                }
                "target" => target = Some(value.to_string()),
                "output_dir" => output_dir = PathBuf::from(value),
                "embedding_dim" => {
                    training.embedding_dim = value.parse().map_err(|_| bad(key, value))?
                }
                "num_experts" => {
                    training.num_experts = value.parse().map_err(|_| bad(key, value))?
                }
                "gcn_layers" => training.gcn_layers = value.parse().map_err(|_| bad(key, value))?,
                "learning_rate" => {
                    training.learning_rate = value.parse().map_err(|_| bad(key, value))?
                }
                "temperature" => {
                    training.temperature = value.parse().map_err(|_| bad(key, value))?
                }
                "alpha" => training.alpha = value.parse().map_err(|_| bad(key, value))?,
                "gamma" => training.gamma = value.parse().map_err(|_| bad(key, value))?,
                "batch_size" => training.batch_size = value.parse().map_err(|_| bad(key, value))?,
                "epochs" => training.epochs = value.parse().map_err(|_| bad(key, value))?,
                "seed" => training.seed = value.parse().map_err(|_| bad(key, value))?,
                "eval_cutoffs" => {
                    training.eval_cutoffs = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad(key, value))?
                }
                other => {
                    return Err(RunConfigError::UnknownKey {
                        line: line_no + 1,
                        key: other.to_string(),
                    })
                }
            }
        }

        let config = RunConfig {
            training,
            interactions: interactions.ok_or(RunConfigError::Missing("interactions"))?,
            behaviors: behaviors.ok_or(RunConfigError::Missing("behaviors"))?,
            target: target.ok_or(RunConfigError::Missing("target"))?,
            output_dir,
        };
        config.training.validate()?;
        Ok(config)
    }

    pub fn split_path(&self) -> PathBuf {
        self.output_dir.join("split.tsv")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.output_dir.join("model.ckpt")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.output_dir.join("metrics.json")
    }

    pub fn ranks_path(&self) -> PathBuf {
        self.output_dir.join("ranks.tsv")
    }

    pub fn epoch_log_path(&self) -> PathBuf {
        self.output_dir.join("epochs.tsv")
    }

    pub fn histogram_path(&self) -> PathBuf {
        self.output_dir.join("selection_histogram.tsv")
    }

    pub fn gates_path(&self) -> PathBuf {
        self.output_dir.join("gates.tsv")
    }

    pub fn factors_path(&self) -> PathBuf {
        self.output_dir.join("factors.tsv")
    }
}

impl fmt::Display for RunConfig {
    /// Resolved `key = value` lines, printable at the start of every run.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "interactions = {}", self.interactions.display())?;
        writeln!(f, "behaviors = {}", self.behaviors.join(","))?;
        writeln!(f, "target = {}", self.target)?;
        writeln!(f, "output_dir = {}", self.output_dir.display())?;
        let t = &self.training;
        writeln!(f, "embedding_dim = {}", t.embedding_dim)?;
        writeln!(f, "num_experts = {}", t.num_experts)?;
        writeln!(f, "gcn_layers = {}", t.gcn_layers)?;
        writeln!(f, "learning_rate = {}", t.learning_rate)?;
        writeln!(f, "temperature = {}", t.temperature)?;
        writeln!(f, "alpha = {}", t.alpha)?;
        writeln!(f, "gamma = {}", t.gamma)?;
        writeln!(f, "batch_size = {}", t.batch_size)?;
        writeln!(f, "epochs = {}", t.epochs)?;
        writeln!(f, "seed = {}", t.seed)?;
        let cutoffs: Vec<String> = t.eval_cutoffs.iter().map(|k| k.to_string()).collect();
        write!(f, "eval_cutoffs = {}", cutoffs.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
interactions = data/logs.tsv
behaviors = click, collect, cart, purchase
target = purchase
";

    #[test]
    fn minimal_config_uses_defaults() {
        let config = RunConfig::from_str_content(MINIMAL).unwrap();
        assert_eq!(config.behaviors.len(), 4);
        assert_eq!(config.target, "purchase");
        assert_eq!(config.training.embedding_dim, 64);
        assert_eq!(config.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn overrides_and_comments_parse() {
        let content = format!(
            "{MINIMAL}# hyperparameters\nembedding_dim = 16\neval_cutoffs = 5, 10\nseed = 7\n"
        );
        let config = RunConfig::from_str_content(&content).unwrap();
        assert_eq!(config.training.embedding_dim, 16);
        assert_eq!(config.training.eval_cutoffs, vec![5, 10]);
        assert_eq!(config.training.seed, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_error() {
        assert!(matches!(
            RunConfig::from_str_content(&format!("{MINIMAL}mystery = 1\n")),
            Err(RunConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            RunConfig::from_str_content(&format!("{MINIMAL}epochs = soon\n")),
            Err(RunConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::from_str_content("behaviors = a\ntarget = a\n"),
            Err(RunConfigError::Missing("interactions"))
        ));
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        let content = format!("{MINIMAL}embedding_dim = 7\n");
        assert!(matches!(
            RunConfig::from_str_content(&content),
            Err(RunConfigError::Training(_))
        ));
    }

    #[test]
    fn display_round_trips() {
        let config = RunConfig::from_str_content(MINIMAL).unwrap();
        let reparsed = RunConfig::from_str_content(&config.to_string()).unwrap();
        assert_eq!(config, reparsed);
    }
}
