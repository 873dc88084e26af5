//! Sensor placements and the named sensor configurations.
//!
//! Five body placements carry one IMU each. A *sensor configuration* is an
//! ordered subset of them; its order defines the channel order of network
//! inputs, so it is part of the public contract (checkpoints trained under
//! `RSRFLM` expect channels RS, RF, LM in that order).

use crate::error::{Error, Result};

/// Body placement of one IMU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorId {
    /// Right foot.
    RF,
    /// Left foot.
    LF,
    /// Right shin.
    RS,
    /// Left shin.
    LS,
    /// Lumbar (lower back).
    LM,
}

/// All placements in canonical order (also the CSV column-block order).
pub const ALL_SENSORS: [SensorId; 5] = [
    SensorId::RF,
    SensorId::LF,
    SensorId::RS,
    SensorId::LS,
    SensorId::LM,
];

impl SensorId {
    pub fn tag(self) -> &'static str {
        match self {
            SensorId::RF => "RF",
            SensorId::LF => "LF",
            SensorId::RS => "RS",
            SensorId::LS => "LS",
            SensorId::LM => "LM",
        }
    }

    /// Position in [`ALL_SENSORS`]; indexes recording streams.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// An ordered selection of sensors used as input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorConfig {
    pub name: &'static str,
    pub sensors: &'static [SensorId],
}

use SensorId::{LF, LM, LS, RF, RS};

/// The thirteen supported configurations: five singles, four doubles, and
/// each double extended with the lumbar sensor. Listed in the order the
/// F-score grid uses for its columns.
pub const CONFIGS: [SensorConfig; 13] = [
    SensorConfig { name: "RF", sensors: &[RF] },
    SensorConfig { name: "LF", sensors: &[LF] },
    SensorConfig { name: "RS", sensors: &[RS] },
    SensorConfig { name: "LS", sensors: &[LS] },
    SensorConfig { name: "LM", sensors: &[LM] },
    SensorConfig { name: "RSLS", sensors: &[RS, LS] },
    SensorConfig { name: "RFLF", sensors: &[RF, LF] },
    SensorConfig { name: "RSRF", sensors: &[RS, RF] },
    SensorConfig { name: "LSLF", sensors: &[LS, LF] },
    SensorConfig { name: "RSLSLM", sensors: &[RS, LS, LM] },
    SensorConfig { name: "RFLFLM", sensors: &[RF, LF, LM] },
    SensorConfig { name: "RSRFLM", sensors: &[RS, RF, LM] },
    SensorConfig { name: "LSLFLM", sensors: &[LS, LF, LM] },
];

impl SensorConfig {
    /// Number of input channels this configuration produces.
    pub fn arity(&self) -> usize {
        self.sensors.len()
    }

    /// True when both sensors of a left/right pair are present (shins or
    /// feet). Bilateral configurations are rejected for the strength group,
    /// whose exercises are single-sided.
    pub fn is_bilateral(&self) -> bool {
        let has = |s: SensorId| self.sensors.contains(&s);
        (has(RS) && has(LS)) || (has(RF) && has(LF))
    }

    /// Resolves a configuration by name (case-insensitive).
    pub fn lookup(name: &str) -> Result<&'static SensorConfig> {
        let upper = name.to_ascii_uppercase();
        CONFIGS
            .iter()
            .find(|c| c.name == upper)
            .ok_or_else(|| Error::UnknownSensorConfig { name: name.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_five_singles_four_doubles_four_triples() {
        assert_eq!(CONFIGS.len(), 13);
        assert_eq!(CONFIGS.iter().filter(|c| c.arity() == 1).count(), 5);
        assert_eq!(CONFIGS.iter().filter(|c| c.arity() == 2).count(), 4);
        assert_eq!(CONFIGS.iter().filter(|c| c.arity() == 3).count(), 4);
    }

    #[test]
    fn triples_are_doubles_plus_lumbar() {
        for c in CONFIGS.iter().filter(|c| c.arity() == 3) {
            assert_eq!(c.sensors[2], LM, "{}", c.name);
            let double_name = &c.name[..4];
            let double = SensorConfig::lookup(double_name).unwrap();
            assert_eq!(&c.sensors[..2], double.sensors);
        }
    }

    #[test]
    fn names_match_sensor_order() {
        for c in &CONFIGS {
            let built: String = c.sensors.iter().map(|s| s.tag()).collect();
            assert_eq!(c.name, built);
        }
    }

    #[test]
    fn bilateral_flags() {
        let bilateral = ["RSLS", "RFLF", "RSLSLM", "RFLFLM"];
        for c in &CONFIGS {
            assert_eq!(
                c.is_bilateral(),
                bilateral.contains(&c.name),
                "{}",
                c.name
            );
        }
    }

    #[test]
    fn lookup_is_case_insensitive_and_strict() {
        assert_eq!(SensorConfig::lookup("rsrflm").unwrap().name, "RSRFLM");
        assert_eq!(SensorConfig::lookup("LS").unwrap().sensors, &[LS]);
        assert!(matches!(
            SensorConfig::lookup("XX"),
            Err(Error::UnknownSensorConfig { .. })
        ));
        // LMRS would be a valid *set* but not a canonical order
        assert!(SensorConfig::lookup("LMRS").is_err());
    }

    #[test]
    fn sensor_index_matches_canonical_position() {
        for (i, s) in ALL_SENSORS.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
    }
}
