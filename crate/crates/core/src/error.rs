//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Error`]. Variants are grouped into
//! [`ErrorCategory`] so the command-line front end can map failures onto
//! distinct process exit codes: bad configuration, bad input data, numeric
//! aborts, and I/O each get their own code.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- configuration ---
    #[error("unknown activity group {name:?}")]
    UnknownGroup { name: String },

    #[error("unknown activity code {code:?}")]
    UnknownActivity { code: String },

    #[error("unknown sensor configuration {name:?}")]
    UnknownSensorConfig { name: String },

    #[error(
        "sensor configuration {config} does not apply to group {group}: \
         its activities are performed one side at a time, so bilateral \
         shank/foot placements are excluded"
    )]
    ConfigNotApplicable { config: String, group: String },

    #[error("invalid training configuration: {reason}")]
    InvalidTrainConfig { reason: String },

    #[error("{path}: line {line}: {reason}")]
    ConfigFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid value for {key}: {reason}")]
    InvalidConfigValue { key: String, reason: String },

    #[error("synthesis profile for {activity:?}: {reason}")]
    InvalidProfile { activity: String, reason: String },

    #[error("{k}-fold cross-validation needs at least {k} subjects, got {subjects}")]
    TooFewSubjects { subjects: usize, k: usize },

    // --- input data ---
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("sensor streams have unequal lengths {lengths:?}")]
    UnequalStreams { lengths: Vec<usize> },

    #[error("channel stack expects sensors {expected:?} in order, got {got:?}")]
    ChannelOrder {
        expected: Vec<String>,
        got: Vec<String>,
    },

    #[error("recording too short for spectral analysis: {seconds:.2} s, need at least {required:.0} s")]
    SpectralTooShort { seconds: f64, required: f64 },

    #[error("{path}: row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("{path}: row {row}: {column} = {value} is outside the sensor range {range}")]
    ValueOutOfRange {
        path: PathBuf,
        row: usize,
        column: String,
        value: f64,
        range: String,
    },

    #[error("recording has {len} samples but a window needs {window}")]
    RecordingTooShort { len: usize, window: usize },

    #[error("no usable windows: {reason}")]
    EmptyDataset { reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    // --- numerics ---
    #[error("tensor shape {shape:?} has a zero-sized dimension")]
    ZeroDim { shape: Vec<usize> },

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("batch norm in training mode needs a batch of at least 2, got {batch}")]
    DegenerateBatch { batch: usize },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient in {layer}; aborting the step")]
    NonFiniteGradient { layer: String },

    // --- I/O ---
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps whatever went wrong inside one cross-validation fold so the
    /// run aborts naming the fold; the category is inherited.
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure class, used to pick the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorCategory {
    /// Process exit code for this category. `0` is reserved for success and
    /// the argument parser reports usage errors as configuration errors.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numeric => 4,
            ErrorCategory::Io => 5,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            UnknownGroup { .. }
            | UnknownActivity { .. }
            | UnknownSensorConfig { .. }
            | ConfigNotApplicable { .. }
            | InvalidTrainConfig { .. }
            | ConfigFile { .. }
            | InvalidConfigValue { .. }
            | InvalidProfile { .. }
            | TooFewSubjects { .. } => ErrorCategory::Config,

            Manifest { .. }
            | MissingColumn { .. }
            | UnequalStreams { .. }
            | ChannelOrder { .. }
            | SpectralTooShort { .. }
            | MalformedRow { .. }
            | ValueOutOfRange { .. }
            | RecordingTooShort { .. }
            | EmptyDataset { .. }
            | Checkpoint { .. } => ErrorCategory::Data,

            ZeroDim { .. }
            | ShapeMismatch { .. }
            | LabelOutOfRange { .. }
            | DegenerateBatch { .. }
            | NonFinite { .. }
            | NonFiniteGradient { .. } => ErrorCategory::Numeric,

            Io { .. } => ErrorCategory::Io,

            Fold { source, .. } => source.category(),
        }
    }

    /// Shorthand for wrapping `std::io::Error` with the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let codes = [
            ErrorCategory::Config.exit_code(),
            ErrorCategory::Data.exit_code(),
            ErrorCategory::Numeric.exit_code(),
            ErrorCategory::Io.exit_code(),
        ];
        for (i, a) in codes.iter().enumerate() {
            assert_ne!(*a, 0);
            for b in codes.iter().skip(i + 1) {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn categories_follow_variant_family() {
        let e = Error::ConfigNotApplicable {
            config: "RFLF".into(),
            group: "strength".into(),
        };
        assert_eq!(e.category(), ErrorCategory::Config);

        let e = Error::ValueOutOfRange {
            path: "x.csv".into(),
            row: 3,
            column: "RF_ax".into(),
            value: 9.0,
            range: "[-2, 2] g".into(),
        };
        assert_eq!(e.category(), ErrorCategory::Data);

        let e = Error::NonFiniteGradient {
            layer: "conv1.weights".into(),
        };
        assert_eq!(e.category(), ErrorCategory::Numeric);

        let e = Error::io("out/report.csv", std::io::Error::other("disk full"));
        assert_eq!(e.category(), ErrorCategory::Io);
    }

    #[test]
    fn messages_name_the_offender() {
        let e = Error::ValueOutOfRange {
            path: "s01.csv".into(),
            row: 17,
            column: "LM_gz".into(),
            value: 612.0,
            range: "[-500, 500] dps".into(),
        };
        let msg = e.to_string();
        assert!(msg.contains("s01.csv"));
        assert!(msg.contains("row 17"));
        assert!(msg.contains("LM_gz"));
        assert!(msg.contains("612"));
    }
}
