//! Experiment settings: defaults, config-file parsing, and the effective
//! configuration echo.
//!
//! Precedence, lowest to highest: built-in defaults, then a `key = value`
//! config file, then command-line flags (applied by the CLI after the file).
//! The one environment variable, `HARCNN_OUTPUT_DIR`, overrides only the
//! output root — it exists so wrappers can redirect results without editing
//! configs — and loses to an explicit `--out` flag.
//!
//! Whatever wins, the run echoes the final settings into
//! `effective_config.txt` in the output directory, in a format this parser
//! reads back, so any run can be repeated from its own output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable overriding the default output root.
pub const OUTPUT_DIR_ENV: &str = "HARCNN_OUTPUT_DIR";

/// The knobs shared by the experiment commands. Training defaults are the
/// full-scale ones; desk-scale runs shrink them via file or flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub folds: usize,
    pub subjects: u32,
    pub seconds_per_activity: f64,
    pub output_dir: PathBuf,
}

impl Default for Settings {
    fn default() -> Settings {
        Settings {
            seed: 0,
            batch_size: 1024,
            epochs: 200,
            learning_rate: 0.005,
            folds: 5,
            subjects: 19,
            seconds_per_activity: 60.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Settings {
    /// Defaults, with the output root taken from [`OUTPUT_DIR_ENV`] when
    /// set (and non-empty).
    pub fn from_env() -> Settings {
        let mut s = Settings::default();
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                s.output_dir = PathBuf::from(dir);
            }
        }
        s
    }

    /// Applies one `key = value` file on top of the current values.
    /// Blank lines and `#` comments are ignored; unknown keys and
    /// unparseable values are errors naming the line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::ConfigFile {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            self.set(key, value)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    /// Sets one setting from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| Error::InvalidConfigValue {
                key: key.to_string(),
                reason: format!("{value:?}: {e}"),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "subjects" => self.subjects = parse(key, value)?,
            "seconds_per_activity" => self.seconds_per_activity = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => {
                return Err(Error::InvalidConfigValue {
                    key: key.to_string(),
                    reason: "unknown setting".to_string(),
                })
            }
        }
        Ok(())
    }

    /// The settings in the file format [`Settings::apply_file`] accepts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "subjects = {}", self.subjects);
        let _ = writeln!(s, "seconds_per_activity = {}", self.seconds_per_activity);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }

    /// Writes `effective_config.txt` into `dir` (creating it), recording
    /// what this run actually used. Contains no timestamps: identical runs
    /// write identical bytes.
    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("effective_config.txt");
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
