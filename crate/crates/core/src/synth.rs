//! Seedable synthetic IMU cohorts.
//!
//! Real recordings of the sixteen activities are not redistributable, so
//! the pipeline ships with a generator that produces class-separable
//! stand-ins: each periodic activity is a sum of up to three harmonics of
//! a class-specific fundamental inside the 0.6–5 Hz band typical of human
//! motion, plus Gaussian noise; the two standing-balance activities are
//! near-constant except for a single mid-recording step transient. Subjects
//! differ by per-(subject, activity) gain jitter and phases drawn from a
//! named substream of the root seed, so generation is deterministic per
//! subject regardless of scheduling. Values are clamped to the sensor
//! ranges at the very end as a belt-and-braces invariant.
//!
//! The model is intentionally simple: it exercises windowing, channel
//! stacking, and class structure. It is not biomechanics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::data::activities::Activity;
use crate::data::recording::{
    write_csv, write_manifest, ImuRecording, ManifestEntry, ACCEL_RANGE_G, GYRO_RANGE_DPS,
    SAMPLE_RATE_HZ,
};
use crate::data::sensors::ALL_SENSORS;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Frequency band of gait-related motion; periodic profiles must keep
/// their fundamental inside it.
pub const FREQ_BAND_HZ: (f64, f64) = (0.6, 5.0);
/// Relative weights of the fundamental and its first two harmonics.
pub const HARMONIC_WEIGHTS: [f64; 3] = [1.0, 0.35, 0.15];
/// Scale of each signal component relative to the dominant axis, in the
/// order ax, ay, az, gx, gy, gz.
pub const COMPONENT_FACTORS: [f64; 6] = [1.0, 0.7, 0.55, 1.0, 0.75, 0.6];
/// Attenuation per placement (feet move most, lumbar least), in canonical
/// sensor order RF, LF, RS, LS, LM.
pub const SENSOR_GAINS: [f64; 5] = [1.00, 0.97, 0.90, 0.86, 0.55];
/// Gyro amplitude per g of accelerometer amplitude.
pub const GYRO_DPS_PER_G: f64 = 150.0;
/// Per-subject gain jitter half-width (±10%).
pub const GAIN_JITTER: f64 = 0.10;

const PERIODIC_NOISE_SIGMA_G: f64 = 0.02;
const ACCEL_BASELINE_G: [f64; 3] = [0.10, 0.08, 0.95];
const TRANSIENT_AMP_G: f64 = 0.25;
const TRANSIENT_AMP_DPS: f64 = 40.0;
const TRANSIENT_WIDTH_SAMPLES: f64 = 12.0;

/// How one activity's signals are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    /// Harmonic series at a class-specific fundamental.
    Periodic {
        fundamental_hz: f64,
        accel_amp_g: f64,
        noise_sigma_g: f64,
    },
    /// Static posture: baseline plus low noise and one step transient.
    NearConstant {
        noise_sigma_g: f64,
        baseline_scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityProfile {
    pub activity: Activity,
    pub kind: ProfileKind,
}

impl ActivityProfile {
    /// Checks the profile against the sensor and frequency-band
    /// invariants before anything is generated.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidProfile {
            activity: self.activity.code().to_string(),
            reason,
        };
        match self.kind {
            ProfileKind::Periodic { fundamental_hz, accel_amp_g, noise_sigma_g } => {
                if !(FREQ_BAND_HZ.0..=FREQ_BAND_HZ.1).contains(&fundamental_hz) {
                    return Err(bad(format!(
                        "fundamental {fundamental_hz} Hz outside [{}, {}] Hz",
                        FREQ_BAND_HZ.0, FREQ_BAND_HZ.1
                    )));
                }
                let harmonic_sum: f64 = HARMONIC_WEIGHTS.iter().sum();
                let peak = accel_amp_g * (1.0 + GAIN_JITTER) * harmonic_sum
                    + 4.0 * noise_sigma_g;
                if peak > ACCEL_RANGE_G {
                    return Err(bad(format!(
                        "worst-case accel peak {peak:.2} g exceeds ±{ACCEL_RANGE_G} g"
                    )));
                }
                if peak * GYRO_DPS_PER_G > GYRO_RANGE_DPS {
                    return Err(bad("worst-case gyro peak exceeds ±500 dps".into()));
                }
                if accel_amp_g <= 0.0 || noise_sigma_g < 0.0 {
                    return Err(bad("amplitude must be positive, noise non-negative".into()));
                }
            }
            ProfileKind::NearConstant { noise_sigma_g, baseline_scale } => {
                if noise_sigma_g <= 0.0 || !(0.0..=1.5).contains(&baseline_scale) {
                    return Err(bad("noise must be positive, baseline scale in [0, 1.5]".into()));
                }
            }
        }
        Ok(())
    }
}

/// The built-in profile for each activity. Fundamentals and amplitudes are
/// distinct within each group (and ordered), which is what makes the
/// classes separable from simple window statistics.
pub fn profile(activity: Activity) -> ActivityProfile {
    use Activity::*;
    let periodic = |fundamental_hz: f64, accel_amp_g: f64| ProfileKind::Periodic {
        fundamental_hz,
        accel_amp_g,
        noise_sigma_g: PERIODIC_NOISE_SIGMA_G,
    };
    let kind = match activity {
        // walk
        Bawk => periodic(0.9, 0.50),
        Sdwk => periodic(1.3, 0.80),
        Wktrn => periodic(1.7, 1.10),
        // walking balance
        Hetowkbk => periodic(0.7, 0.35),
        Hewk => periodic(1.1, 0.55),
        Tdwk => periodic(1.5, 0.75),
        Towk => periodic(1.9, 0.95),
        // standing balance: mainly flat
        Sls => ProfileKind::NearConstant { noise_sigma_g: 0.003, baseline_scale: 1.0 },
        Tdst => ProfileKind::NearConstant { noise_sigma_g: 0.006, baseline_scale: 0.9 },
        // strength
        Knex => periodic(0.8, 0.30),
        Knfx => periodic(1.3, 0.44),
        Hpabd => periodic(1.8, 0.58),
        Cars => periodic(2.3, 0.72),
        Tors => periodic(2.8, 0.86),
        Knbn => periodic(3.3, 1.00),
        Sts => periodic(3.8, 1.15),
    };
    ActivityProfile { activity, kind }
}

/// Cohort shape: how many subjects, how long each recording runs, and the
/// root seed everything derives from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub subjects: u32,
    pub seconds_per_activity: f64,
    pub seed: u64,
}

impl CohortSpec {
    pub fn new(seed: u64) -> Self {
        CohortSpec {
            subjects: 19,
            seconds_per_activity: 60.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects < 5 {
            return Err(Error::InvalidConfigValue {
                key: "subjects".into(),
                reason: format!(
                    "need at least 5 subjects for 5-fold cross-validation, got {}",
                    self.subjects
                ),
            });
        }
        if self.seconds_per_activity * SAMPLE_RATE_HZ < 1.0 {
            return Err(Error::InvalidConfigValue {
                key: "seconds_per_activity".into(),
                reason: "duration yields no samples".into(),
            });
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.seconds_per_activity * SAMPLE_RATE_HZ).round() as usize
    }
}

/// Renders one subject performing one profiled activity.
///
/// All randomness comes from `substream(seed, "synth/<code>", subject)`,
/// drawn in a fixed order, so any recording can be regenerated alone.
pub fn render_recording(
    prof: &ActivityProfile,
    subject: u32,
    seed: u64,
    t_len: usize,
) -> Result<ImuRecording> {
    prof.validate()?;
    let label = format!("synth/{}", prof.activity.code());
    let mut rng = substream(seed, &label, subject as u64);

    let mut streams: [Vec<[f64; 6]>; 5] = std::array::from_fn(|_| vec![[0.0; 6]; t_len]);
    match prof.kind {
        ProfileKind::Periodic { fundamental_hz, accel_amp_g, noise_sigma_g } => {
            render_periodic(
                &mut streams,
                &mut rng,
                fundamental_hz,
                accel_amp_g,
                noise_sigma_g,
            );
        }
        ProfileKind::NearConstant { noise_sigma_g, baseline_scale } => {
            render_near_constant(&mut streams, &mut rng, noise_sigma_g, baseline_scale, t_len);
        }
    }

    for stream in &mut streams {
        for sample in stream.iter_mut() {
            for (ci, v) in sample.iter_mut().enumerate() {
                let limit = if ci < 3 { ACCEL_RANGE_G } else { GYRO_RANGE_DPS };
                *v = v.clamp(-limit, limit);
            }
        }
    }
    ImuRecording::new(subject, prof.activity, streams)
}

fn render_periodic(
    streams: &mut [Vec<[f64; 6]>; 5],
    rng: &mut ChaCha8Rng,
    fundamental_hz: f64,
    accel_amp_g: f64,
    noise_sigma_g: f64,
) {
    // Draw order is part of the format: per sensor, one gain jitter and
    // then 6×3 phases, followed by all noise samples.
    let mut gains = [0.0; 5];
    let mut phases = [[[0.0; 3]; 6]; 5];
    for (si, gain) in gains.iter_mut().enumerate() {
        *gain = SENSOR_GAINS[si] * (1.0 + rng.random_range(-GAIN_JITTER..GAIN_JITTER));
        for comp in 0..6 {
            for h in 0..3 {
                phases[si][comp][h] = rng.random_range(0.0..std::f64::consts::TAU);
            }
        }
    }
    let noise = Normal::new(0.0, noise_sigma_g).expect("sigma validated");
    for (si, stream) in streams.iter_mut().enumerate() {
        for comp in 0..6 {
            let accel = comp < 3;
            let unit = if accel { 1.0 } else { GYRO_DPS_PER_G };
            let amp = accel_amp_g * COMPONENT_FACTORS[comp] * gains[si] * unit;
            for (t, sample) in stream.iter_mut().enumerate() {
                let time = t as f64 / SAMPLE_RATE_HZ;
                let mut v = 0.0;
                for (h, w) in HARMONIC_WEIGHTS.iter().enumerate() {
                    let omega = std::f64::consts::TAU * fundamental_hz * (h + 1) as f64;
                    v += w * (omega * time + phases[si][comp][h]).sin();
                }
                sample[comp] = amp * v + noise.sample(rng) * unit;
            }
        }
    }
}

fn render_near_constant(
    streams: &mut [Vec<[f64; 6]>; 5],
    rng: &mut ChaCha8Rng,
    noise_sigma_g: f64,
    baseline_scale: f64,
    t_len: usize,
) {
    let mut gains = [0.0; 5];
    let mut wobble = [[0.0; 6]; 5];
    for si in 0..5 {
        gains[si] = SENSOR_GAINS[si] * (1.0 + rng.random_range(-GAIN_JITTER..GAIN_JITTER));
        for comp in 0..6 {
            wobble[si][comp] = rng.random_range(-0.01..0.01);
        }
    }
    // One step transient somewhere near the middle — the subject moves
    // once to change the standing leg.
    let center = t_len as f64 * rng.random_range(0.45..0.55);
    let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };

    let noise = Normal::new(0.0, noise_sigma_g).expect("sigma validated");
    for (si, stream) in streams.iter_mut().enumerate() {
        for comp in 0..6 {
            let accel = comp < 3;
            let unit = if accel { 1.0 } else { GYRO_DPS_PER_G };
            let baseline = if accel {
                (ACCEL_BASELINE_G[comp] * baseline_scale + wobble[si][comp]) * gains[si]
            } else {
                0.0
            };
            let pulse_amp = if accel { TRANSIENT_AMP_G } else { TRANSIENT_AMP_DPS }
                * COMPONENT_FACTORS[comp]
                * gains[si]
                * sign;
            for (t, sample) in stream.iter_mut().enumerate() {
                let z = (t as f64 - center) / TRANSIENT_WIDTH_SAMPLES;
                let pulse = pulse_amp * (-0.5 * z * z).exp();
                sample[comp] = baseline + pulse + noise.sample(rng) * unit;
            }
        }
    }
}

/// Generates `spec.subjects × activities.len()` recordings, subjects
/// numbered from 1.
pub fn generate_cohort(spec: &CohortSpec, activities: &[Activity]) -> Result<Vec<ImuRecording>> {
    spec.validate()?;
    let t_len = spec.samples();
    let mut out = Vec::with_capacity(spec.subjects as usize * activities.len());
    for subject in 1..=spec.subjects {
        for &activity in activities {
            out.push(render_recording(&profile(activity), subject, spec.seed, t_len)?);
        }
    }
    Ok(out)
}

/// Writes a cohort as one CSV per recording plus `manifest.csv`, returning
/// the manifest path. The directory must exist.
pub fn write_cohort(
    dir: &std::path::Path,
    recordings: &[ImuRecording],
) -> Result<std::path::PathBuf> {
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let name = format!("s{:02}_{}.csv", rec.subject, rec.activity.code());
        write_csv(rec, &dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name.into(),
            subject: rec.subject,
            activity: rec.activity,
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Dominant frequency per sensor and component, or `None` where no clear
/// peak stands out (flat signals).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    /// Indexed `[sensor][component]` in canonical order.
    pub dominant_hz: [[Option<f64>; 6]; 5],
}

/// Minimum recording length for a meaningful periodogram.
pub const SPECTRAL_MIN_SECONDS: f64 = 4.0;
/// A peak must exceed the median power of its spectral neighborhood by
/// this factor to count as dominant. Harmonic lines are orders of
/// magnitude above their surroundings; white noise and the smooth hump of
/// a step transient are not.
const PEAK_TO_MEDIAN: f64 = 20.0;
/// Bins to each side considered "neighborhood" for the contrast test.
const NEIGHBORHOOD: usize = 25;

/// Periodogram-based dominant-frequency estimate for every component.
pub fn spectral_check(rec: &ImuRecording) -> Result<SpectralSummary> {
    let t_len = rec.len();
    let seconds = rec.duration_seconds();
    if seconds < SPECTRAL_MIN_SECONDS {
        return Err(Error::SpectralTooShort {
            seconds,
            required: SPECTRAL_MIN_SECONDS,
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(t_len);
    let df = SAMPLE_RATE_HZ / t_len as f64;
    // Ignore DC and anything below 0.3 Hz so baselines and drift cannot
    // masquerade as motion. (Half the band, well under the 0.6 Hz floor.)
    let k_min = (0.3 / df).ceil() as usize;
    let k_max = t_len / 2;

    let mut dominant_hz = [[None; 6]; 5];
    let mut buf = vec![Complex::new(0.0, 0.0); t_len];
    for (si, sensor) in ALL_SENSORS.into_iter().enumerate() {
        for comp in 0..6 {
            for (t, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(rec.stream(sensor)[t][comp], 0.0);
            }
            fft.process(&mut buf);
            let powers: Vec<f64> = buf[k_min..=k_max].iter().map(|c| c.norm_sqr()).collect();
            let (mut best_k, mut best_p) = (0, 0.0);
            for (k, &p) in powers.iter().enumerate() {
                if p > best_p {
                    best_p = p;
                    best_k = k;
                }
            }
            // Contrast against the neighborhood, excluding the main lobe
            // (±2 bins of leakage around the peak itself).
            let lo = best_k.saturating_sub(NEIGHBORHOOD);
            let hi = (best_k + NEIGHBORHOOD).min(powers.len() - 1);
            let mut near: Vec<f64> = (lo..=hi)
                .filter(|&k| k.abs_diff(best_k) > 2)
                .map(|k| powers[k])
                .collect();
            let mid = near.len() / 2;
            let median = *near
                .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap())
                .1;
            // Absolute floor keeps FFT rounding dust of a truly constant
            // signal from ever counting as a peak.
            let floor = 1e-12 * (t_len as f64).powi(2);
            if best_p > floor && best_p > PEAK_TO_MEDIAN * median.max(f64::MIN_POSITIVE) {
                dominant_hz[si][comp] = Some((best_k + k_min) as f64 * df);
            }
        }
    }
    Ok(SpectralSummary { dominant_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::activities::ActivityGroup;
    use crate::data::dataset::Dataset;
    use crate::data::sensors::{SensorConfig, SensorId};

    fn small_spec(seed: u64) -> CohortSpec {
        CohortSpec {
            subjects: 5,
            seconds_per_activity: 10.0,
            seed,
        }
    }

    #[test]
    fn builtin_profiles_validate_and_cover_every_activity() {
        for a in ALL_ACTIVITIES {
            let p = profile(a);
            assert_eq!(p.activity, a);
            p.validate().unwrap();
        }
        // fundamentals distinct within each group
        for g in crate::data::activities::GROUPS {
            let mut f0s: Vec<f64> = g
                .labels()
                .iter()
                .filter_map(|&a| match profile(a).kind {
                    ProfileKind::Periodic { fundamental_hz, .. } => Some(fundamental_hz),
                    ProfileKind::NearConstant { .. } => None,
                })
                .collect();
            f0s.sort_by(f64::total_cmp);
            f0s.dedup();
            let expected = match g {
                ActivityGroup::StandBalance => 0,
                _ => g.m(),
            };
            assert_eq!(f0s.len(), expected, "{}", g.name());
        }
    }

    #[test]
    fn out_of_band_profile_is_rejected() {
        let p = ActivityProfile {
            activity: Activity::Bawk,
            kind: ProfileKind::Periodic {
                fundamental_hz: 5.5,
                accel_amp_g: 0.5,
                noise_sigma_g: 0.01,
            },
        };
        assert!(matches!(p.validate(), Err(Error::InvalidProfile { .. })));
        let too_loud = ActivityProfile {
            activity: Activity::Bawk,
            kind: ProfileKind::Periodic {
                fundamental_hz: 2.0,
                accel_amp_g: 1.5,
                noise_sigma_g: 0.01,
            },
        };
        assert!(too_loud.validate().is_err());
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let a = generate_cohort(&small_spec(9), &[Activity::Bawk, Activity::Sls]).unwrap();
        let b = generate_cohort(&small_spec(9), &[Activity::Bawk, Activity::Sls]).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&small_spec(10), &[Activity::Bawk, Activity::Sls]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn subjects_are_distinguishable() {
        let r1 = render_recording(&profile(Activity::Bawk), 1, 3, 1024).unwrap();
        let r2 = render_recording(&profile(Activity::Bawk), 2, 3, 1024).unwrap();
        assert_ne!(r1.stream(SensorId::RF)[0], r2.stream(SensorId::RF)[0]);
    }

    #[test]
    fn every_sample_respects_sensor_ranges() {
        for a in ALL_ACTIVITIES {
            let rec = render_recording(&profile(a), 1, 11, 2048).unwrap();
            rec.validate_ranges(std::path::Path::new("synth")).unwrap();
        }
    }

    #[test]
    fn cohort_covers_subjects_times_activities() {
        let recs = generate_cohort(&small_spec(1), &[Activity::Sls, Activity::Tdst]).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(recs[0].len(), 1024);
        assert!(recs.iter().any(|r| r.subject == 5));
    }

    #[test]
    fn too_few_subjects_rejected() {
        let spec = CohortSpec { subjects: 4, ..CohortSpec::new(1) };
        assert!(matches!(
            generate_cohort(&spec, &[Activity::Bawk]),
            Err(Error::InvalidConfigValue { .. })
        ));
    }

    #[test]
    fn standing_balance_variance_is_under_one_percent_of_walking() {
        // Default-length recordings: the transient's energy dilutes over
        // 60 s, which is what keeps the ratio under 1%.
        let walk = render_recording(&profile(Activity::Bawk), 1, 5, 6144).unwrap();
        for activity in [Activity::Sls, Activity::Tdst] {
            let flat = render_recording(&profile(activity), 1, 5, 6144).unwrap();
            for sensor in ALL_SENSORS {
                for comp in 0..6 {
                    let var = |r: &ImuRecording| {
                        let xs: Vec<f64> = r.stream(sensor).iter().map(|s| s[comp]).collect();
                        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
                    };
                    let ratio = var(&flat) / var(&walk);
                    assert!(
                        ratio < 0.01,
                        "{} {} comp {comp}: ratio {ratio:.4}",
                        activity.code(),
                        sensor.tag()
                    );
                }
            }
        }
    }

    #[test]
    fn periodogram_finds_the_fundamental() {
        let rec = render_recording(&profile(Activity::Sdwk), 2, 13, 2048).unwrap(); // 20 s
        let spectral = spectral_check(&rec).unwrap();
        for si in 0..5 {
            for comp in 0..6 {
                let hz = spectral.dominant_hz[si][comp].expect("periodic signal has a peak");
                assert!((hz - 1.3).abs() < 0.1, "sensor {si} comp {comp}: {hz}");
            }
        }
    }

    #[test]
    fn five_hertz_fundamental_does_not_alias() {
        let p = ActivityProfile {
            activity: Activity::Sts,
            kind: ProfileKind::Periodic {
                fundamental_hz: 5.0,
                accel_amp_g: 0.4,
                noise_sigma_g: 0.005,
            },
        };
        let rec = render_recording(&p, 1, 21, 1024).unwrap(); // 10 s
        let spectral = spectral_check(&rec).unwrap();
        let hz = spectral.dominant_hz[0][0].unwrap();
        assert!((hz - 5.0).abs() < 0.1, "{hz}");
    }

    #[test]
    fn flat_signal_has_no_dominant_peak() {
        let rec = render_recording(&profile(Activity::Sls), 3, 17, 1024).unwrap();
        let spectral = spectral_check(&rec).unwrap();
        // az carries the big gravity-like baseline; with DC excluded and
        // only noise plus one transient left, no peak should qualify.
        assert_eq!(spectral.dominant_hz[0][2], None);

        // a literally constant recording has no peak in any component
        let streams = std::array::from_fn(|_| vec![[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]; 1024]);
        let constant = ImuRecording::new(1, Activity::Sls, streams).unwrap();
        let spectral = spectral_check(&constant).unwrap();
        assert_eq!(spectral.dominant_hz, [[None; 6]; 5]);
    }

    #[test]
    fn short_recording_is_rejected_for_spectra() {
        let rec = render_recording(&profile(Activity::Bawk), 1, 1, 256).unwrap(); // 2.5 s
        assert!(matches!(
            spectral_check(&rec),
            Err(Error::SpectralTooShort { .. })
        ));
    }

    #[test]
    fn cohort_files_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let recs = generate_cohort(
            &CohortSpec { subjects: 5, seconds_per_activity: 2.5, seed: 3 },
            &[Activity::Bawk],
        )
        .unwrap();
        let manifest = write_cohort(dir.path(), &recs).unwrap();
        let loaded = crate::data::recording::load_recordings(&manifest).unwrap();
        assert_eq!(loaded.len(), 5);
        // CSV quantizes to 1e-6, so compare with that tolerance
        for (a, b) in recs.iter().zip(&loaded) {
            assert_eq!((a.subject, a.activity), (b.subject, b.activity));
            let (sa, sb) = (a.stream(SensorId::LM), b.stream(SensorId::LM));
            for (x, y) in sa.iter().zip(sb) {
                for c in 0..6 {
                    assert!((x[c] - y[c]).abs() <= 5e-7 + 1e-12);
                }
            }
        }
    }

    /// Nearest-centroid on per-window mean+variance features is a linear
    /// classifier; it must separate the walk classes across subjects.
    /// This backs the desk-scale learning targets: if this holds, a CNN
    /// failure is an engine bug, not a data problem.
    #[test]
    fn walk_group_is_linearly_separable_across_subjects() {
        let spec = CohortSpec { subjects: 5, seconds_per_activity: 30.0, seed: 7 };
        let walk: Vec<Activity> = ActivityGroup::Walk.labels().to_vec();
        let recs = generate_cohort(&spec, &walk).unwrap();
        let config = SensorConfig::lookup("LS").unwrap();
        let ds = Dataset::build(&recs, ActivityGroup::Walk, config).unwrap();

        let features = |i: usize| -> Vec<f64> {
            let ex = ds.example(i).unwrap();
            let mut f = Vec::with_capacity(12);
            for comp in 0..6 {
                let xs: Vec<f64> = (0..crate::data::WINDOW)
                    .map(|t| ex.block.at(&[comp, t, 0]))
                    .collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                f.push(mean);
                f.push(var);
            }
            f
        };

        // subjects 1..=4 train the centroids, subject 5 is held out
        let mut centroids = vec![vec![0.0; 12]; 3];
        let mut counts = vec![0usize; 3];
        let mut test = Vec::new();
        for i in 0..ds.len() {
            if ds.subject(i) == 5 {
                test.push(i);
            } else {
                let f = features(i);
                let c = ds.label(i);
                for (acc, v) in centroids[c].iter_mut().zip(&f) {
                    *acc += v;
                }
                counts[c] += 1;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= *n as f64;
            }
        }
        let mut hits = 0;
        for &i in &test {
            let f = features(i);
            let pred = (0..3)
                .min_by(|&a, &b| {
                    let d = |c: &Vec<f64>| -> f64 {
                        c.iter().zip(&f).map(|(x, y)| (x - y).powi(2)).sum()
                    };
                    d(&centroids[a]).total_cmp(&d(&centroids[b]))
                })
                .unwrap();
            if pred == ds.label(i) {
                hits += 1;
            }
        }
        let acc = hits as f64 / test.len() as f64;
        assert!(acc >= 0.90, "linear baseline accuracy {acc:.3}");
    }
}
