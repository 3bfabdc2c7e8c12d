//! Run configuration: flat dotted-key text files with command-line
//! overrides, echoed verbatim into every output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::align::{AlignmentVariant, FusionVariant, Perspectives};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Union of architecture, training, data, and output settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    pub cutoffs: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_path: None,
            test_path: None,
            out_dir: None,
            threads: 1,
            cutoffs: vec![20, 40],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

impl RunConfig {
    /// Applies one `key = value` assignment; keys use dotted sections.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.d" => self.model.embedding_dim = parse_num(key, value)?,
            "model.k" => self.model.num_prototypes = parse_num(key, value)?,
            "model.intent_hidden" => self.model.intent_hidden = parse_num(key, value)?,
            "model.d_prime" => self.model.intent_dim = parse_num(key, value)?,
            "model.align_hidden1" => self.model.align_hidden1 = parse_num(key, value)?,
            "model.align_hidden2" => self.model.align_hidden2 = parse_num(key, value)?,
            "model.d_star" => self.model.align_dim = parse_num(key, value)?,
            "model.predict_hidden" => self.model.predict_hidden = parse_num(key, value)?,
            "model.alignment" => self.model.alignment = value.parse::<AlignmentVariant>()?,
            "model.fusion" => self.model.fusion = value.parse::<FusionVariant>()?,
            "model.perspectives" => self.model.perspectives = value.parse::<Perspectives>()?,
            "train.temperature" => self.train.temperature = parse_num(key, value)?,
            "train.negatives" => self.train.negatives_per_positive = parse_num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "train.eval_every" => self.train.eval_every = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "train.seed" => self.train.seed = parse_num(key, value)?,
            "train.validation_fraction" => {
                self.train.validation_fraction = parse_num(key, value)?
            }
            "train.validation_cutoff" => self.train.validation_cutoff = parse_num(key, value)?,
            "data.train" => self.train_path = Some(PathBuf::from(value)),
            "data.test" => self.test_path = Some(PathBuf::from(value)),
            "run.out" => self.out_dir = Some(PathBuf::from(value)),
            "run.threads" => {
                self.threads = parse_num(key, value)?;
                if self.threads == 0 {
                    return Err(Error::Config("run.threads must be at least 1".into()));
                }
            }
            "run.cutoffs" => {
                self.cutoffs = value
                    .split(',')
                    .map(|c| parse_num::<usize>(key, c.trim()))
                    .collect::<Result<_>>()?;
                if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
                    return Err(Error::Config("run.cutoffs must be positive".into()));
                }
            }
            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    /// Reads a `key = value` file; `#` lines are comments.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Usage(format!("config file not found: {display}")))?;
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: lineno + 1,
                    detail: format!("expected \"key = value\", got {trimmed:?}"),
                });
            };
            self.apply(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// The fully resolved configuration as a reloadable key-value
    /// document; this is what gets echoed into output directories.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let path_or = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let _ = writeln!(out, "model.d = {}", self.model.embedding_dim);
        let _ = writeln!(out, "model.k = {}", self.model.num_prototypes);
        let _ = writeln!(out, "model.intent_hidden = {}", self.model.intent_hidden);
        let _ = writeln!(out, "model.d_prime = {}", self.model.intent_dim);
        let _ = writeln!(out, "model.align_hidden1 = {}", self.model.align_hidden1);
        let _ = writeln!(out, "model.align_hidden2 = {}", self.model.align_hidden2);
        let _ = writeln!(out, "model.d_star = {}", self.model.align_dim);
        let _ = writeln!(out, "model.predict_hidden = {}", self.model.predict_hidden);
        let _ = writeln!(out, "model.alignment = {}", self.model.alignment);
        let _ = writeln!(out, "model.fusion = {}", self.model.fusion);
        let _ = writeln!(out, "model.perspectives = {}", self.model.perspectives);
        let _ = writeln!(out, "train.temperature = {}", self.train.temperature);
        let _ = writeln!(out, "train.negatives = {}", self.train.negatives_per_positive);
        let _ = writeln!(out, "train.learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(out, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(out, "train.eval_every = {}", self.train.eval_every);
        let _ = writeln!(out, "train.patience = {}", self.train.patience);
        let _ = writeln!(out, "train.max_epochs = {}", self.train.max_epochs);
        let _ = writeln!(out, "train.seed = {}", self.train.seed);
        let _ = writeln!(
            out,
            "train.validation_fraction = {}",
            self.train.validation_fraction
        );
        let _ = writeln!(
            out,
            "train.validation_cutoff = {}",
            self.train.validation_cutoff
        );
        if self.train_path.is_some() {
            let _ = writeln!(out, "data.train = {}", path_or(&self.train_path));
        }
        if self.test_path.is_some() {
            let _ = writeln!(out, "data.test = {}", path_or(&self.test_path));
        }
        if self.out_dir.is_some() {
            let _ = writeln!(out, "run.out = {}", path_or(&self.out_dir));
        }
        let _ = writeln!(out, "run.threads = {}", self.threads);
        let cutoffs: Vec<String> = self.cutoffs.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "run.cutoffs = {}", cutoffs.join(","));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_follow_the_reference_configuration() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model.embedding_dim, 32);
        assert_eq!(cfg.model.num_prototypes, 32);
        assert_eq!(cfg.model.intent_dim, 80);
        assert_eq!(cfg.model.align_dim, 16);
        assert_eq!(cfg.model.fused_width(), 34);
        assert_eq!(cfg.train.temperature, 0.2);
        assert_eq!(cfg.train.negatives_per_positive, 60);
        assert_eq!(cfg.train.learning_rate, 3e-5);
        assert_eq!(cfg.train.batch_size, 4096);
        assert_eq!(cfg.train.patience, 3);
        assert_eq!(cfg.cutoffs, vec![20, 40]);
    }

    #[test]
    fn file_and_overrides_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment\nmodel.d = 16\ntrain.seed = 7\nrun.cutoffs = 5,10").unwrap();
        drop(f);

        let mut cfg = RunConfig::default();
        cfg.load_file(&path).unwrap();
        cfg.apply("model.k", "8").unwrap();
        assert_eq!(cfg.model.embedding_dim, 16);
        assert_eq!(cfg.model.num_prototypes, 8);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.cutoffs, vec![5, 10]);

        // The resolved echo reloads to the same configuration.
        let echo = cfg.to_text();
        let echo_path = dir.path().join("echo.conf");
        std::fs::write(&echo_path, &echo).unwrap();
        let mut reloaded = RunConfig::default();
        reloaded.load_file(&echo_path).unwrap();
        assert_eq!(cfg, reloaded);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("model.bogus", "1").is_err());
        assert!(cfg.apply("model.d", "not-a-number").is_err());
        assert!(cfg.apply("model.alignment", "fancy").is_err());
        assert!(cfg.apply("run.threads", "0").is_err());
    }
}
