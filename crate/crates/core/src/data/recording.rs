//! In-memory IMU recordings and their CSV/manifest serialization.
//!
//! One recording is one subject performing one activity: five synchronized
//! streams (one per sensor placement) of six components each — triaxial
//! acceleration in g, then triaxial angular velocity in degrees per second.
//!
//! The CSV schema is one file per recording with header
//! `subject,activity,t,RF_ax,…,LM_gz` (sensor blocks in canonical order,
//! components ax,ay,az,gx,gy,gz within each block) and `t` the 0-based
//! sample index. A manifest CSV (`path,subject,activity`) lists recording
//! files relative to its own directory.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::activities::Activity;
use crate::data::sensors::{SensorId, ALL_SENSORS};
use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: f64 = 102.4;
pub const ACCEL_RANGE_G: f64 = 2.0;
pub const GYRO_RANGE_DPS: f64 = 500.0;
/// Component order within each sensor block: accelerometer then gyroscope.
pub const COMPONENTS: [&str; 6] = ["ax", "ay", "az", "gx", "gy", "gz"];

/// One subject performing one activity, sampled at 102.4 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuRecording {
    pub subject: u32,
    pub activity: Activity,
    /// Indexed by [`SensorId::index`]; each sample is
    /// `[ax, ay, az, gx, gy, gz]`.
    streams: [Vec<[f64; 6]>; 5],
}

impl ImuRecording {
    /// Builds a recording, checking that all five streams share a length.
    pub fn new(subject: u32, activity: Activity, streams: [Vec<[f64; 6]>; 5]) -> Result<Self> {
        let t = streams[0].len();
        if streams.iter().any(|s| s.len() != t) {
            return Err(Error::UnequalStreams {
                lengths: streams.iter().map(Vec::len).collect(),
            });
        }
        Ok(ImuRecording { subject, activity, streams })
    }

    /// Number of samples per stream.
    pub fn len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE_HZ
    }

    pub fn stream(&self, sensor: SensorId) -> &[[f64; 6]] {
        &self.streams[sensor.index()]
    }

    /// Checks every sample against the sensor ranges; `origin` names the
    /// data source in the error.
    pub fn validate_ranges(&self, origin: &Path) -> Result<()> {
        for sensor in ALL_SENSORS {
            for (t, sample) in self.stream(sensor).iter().enumerate() {
                for (ci, &v) in sample.iter().enumerate() {
                    check_range(origin, t + 2, sensor, ci, v)?;
                }
            }
        }
        Ok(())
    }
}

fn component_limit(component_index: usize) -> (f64, &'static str) {
    if component_index < 3 {
        (ACCEL_RANGE_G, "±2 g")
    } else {
        (GYRO_RANGE_DPS, "±500 dps")
    }
}

fn check_range(path: &Path, row: usize, sensor: SensorId, ci: usize, v: f64) -> Result<()> {
    let (limit, range) = component_limit(ci);
    // NaN fails this comparison too, which is exactly what we want.
    if !(v.abs() <= limit) {
        return Err(Error::ValueOutOfRange {
            path: path.to_path_buf(),
            row,
            column: format!("{}_{}", sensor.tag(), COMPONENTS[ci]),
            value: v,
            range: range.to_string(),
        });
    }
    Ok(())
}

/// The exact expected CSV header.
pub fn csv_header() -> String {
    let mut h = String::from("subject,activity,t");
    for sensor in ALL_SENSORS {
        for comp in COMPONENTS {
            let _ = write!(h, ",{}_{}", sensor.tag(), comp);
        }
    }
    h
}

fn malformed(path: &Path, row: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

/// Reads and fully validates one recording file.
///
/// Out-of-range samples are hard errors — nothing is clamped on the way
/// in.
pub fn ingest_csv(path: &Path) -> Result<ImuRecording> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(malformed(path, 1, "empty file")),
    };
    if header != csv_header() {
        // Distinguish a missing column (typically a whole absent sensor
        // block) from mere reordering.
        let got: Vec<&str> = header.split(',').collect();
        for expected in csv_header().split(',') {
            if !got.contains(&expected) {
                return Err(Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: expected.to_string(),
                });
            }
        }
        return Err(malformed(
            path,
            1,
            format!("header does not match the schema (expected `{}`)", csv_header()),
        ));
    }

    let mut streams: [Vec<[f64; 6]>; 5] = Default::default();
    let mut subject: Option<u32> = None;
    let mut activity: Option<Activity> = None;

    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row = i + 2; // header is line 1
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 33 {
            return Err(malformed(
                path,
                row,
                format!("expected 33 fields, found {}", fields.len()),
            ));
        }

        let s: u32 = fields[0]
            .parse()
            .map_err(|_| malformed(path, row, format!("bad subject id `{}`", fields[0])))?;
        let a = Activity::parse(fields[1])
            .map_err(|_| malformed(path, row, format!("unknown activity `{}`", fields[1])))?;
        match (subject, activity) {
            (None, None) => {
                subject = Some(s);
                activity = Some(a);
            }
            (Some(s0), Some(a0)) if s0 == s && a0 == a => {}
            _ => {
                return Err(malformed(
                    path,
                    row,
                    "subject/activity changes mid-file; one recording per file",
                ))
            }
        }

        let t: usize = fields[2]
            .parse()
            .map_err(|_| malformed(path, row, format!("bad sample index `{}`", fields[2])))?;
        if t != i {
            return Err(malformed(
                path,
                row,
                format!("sample index t={t}, expected {i} (rows must be in order)"),
            ));
        }

        let mut col = 3;
        for (si, sensor) in ALL_SENSORS.into_iter().enumerate() {
            let mut sample = [0.0f64; 6];
            for (ci, slot) in sample.iter_mut().enumerate() {
                let raw = fields[col];
                let v: f64 = raw.parse().map_err(|_| {
                    malformed(
                        path,
                        row,
                        format!("bad value `{raw}` in column {}_{}", sensor.tag(), COMPONENTS[ci]),
                    )
                })?;
                check_range(path, row, sensor, ci, v)?;
                *slot = v;
                col += 1;
            }
            streams[si].push(sample);
        }
    }

    match (subject, activity) {
        (Some(s), Some(a)) => ImuRecording::new(s, a, streams),
        _ => Err(malformed(path, 2, "no data rows")),
    }
}

/// Writes one recording in the schema `ingest_csv` reads. Floats are
/// written with six decimal places, so write→read round-trips quantize to
/// 1e-6 but repeated writes are byte-identical.
pub fn write_csv(recording: &ImuRecording, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(w, "{}", csv_header())?;
        for t in 0..recording.len() {
            write!(w, "{},{},{}", recording.subject, recording.activity.code(), t)?;
            for sensor in ALL_SENSORS {
                for v in recording.stream(sensor)[t] {
                    write!(w, ",{v:.6}")?;
                }
            }
            writeln!(w)?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::io(path, e))
}

/// One line of a manifest: a recording file plus what it should contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub subject: u32,
    pub activity: Activity,
}

const MANIFEST_HEADER: &str = "path,subject,activity";

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(w, "{MANIFEST_HEADER}")?;
        for e in entries {
            writeln!(w, "{},{},{}", e.path.display(), e.subject, e.activity.code())?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bad = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(MANIFEST_HEADER) => {}
        Some(other) => {
            return Err(bad(format!(
                "bad header `{other}` (expected `{MANIFEST_HEADER}`)"
            )))
        }
        None => return Err(bad("empty manifest".into())),
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(format!("line {}: expected 3 fields", i + 2)));
        }
        let subject = fields[1]
            .parse()
            .map_err(|_| bad(format!("line {}: bad subject `{}`", i + 2, fields[1])))?;
        let activity = Activity::parse(fields[2])
            .map_err(|_| bad(format!("line {}: unknown activity `{}`", i + 2, fields[2])))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            subject,
            activity,
        });
    }
    Ok(entries)
}

/// Reads every recording a manifest lists, checking each file against the
/// manifest's subject and activity.
pub fn load_recordings(manifest_path: &Path) -> Result<Vec<ImuRecording>> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut recordings = Vec::with_capacity(entries.len());
    for e in &entries {
        let rec = ingest_csv(&base.join(&e.path))?;
        if rec.subject != e.subject || rec.activity != e.activity {
            return Err(Error::Manifest {
                path: manifest_path.to_path_buf(),
                reason: format!(
                    "{} contains subject {} / {}, manifest says subject {} / {}",
                    e.path.display(),
                    rec.subject,
                    rec.activity.code(),
                    e.subject,
                    e.activity.code()
                ),
            });
        }
        recordings.push(rec);
    }
    Ok(recordings)
}
