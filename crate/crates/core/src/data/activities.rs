//! Activity codes, the four activity groups, and the published label
//! distributions used as an arithmetic cross-check.

use crate::data::sensors::SensorConfig;
use crate::error::{Error, Result};

/// One of the sixteen recorded activities, identified by its short code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    // walk group
    Bawk,
    Sdwk,
    Wktrn,
    // walking-balance group
    Hetowkbk,
    Hewk,
    Tdwk,
    Towk,
    // standing-balance group
    Sls,
    Tdst,
    // strength group
    Knex,
    Knfx,
    Hpabd,
    Cars,
    Tors,
    Knbn,
    Sts,
}

pub const ALL_ACTIVITIES: [Activity; 16] = [
    Activity::Bawk,
    Activity::Sdwk,
    Activity::Wktrn,
    Activity::Hetowkbk,
    Activity::Hewk,
    Activity::Tdwk,
    Activity::Towk,
    Activity::Sls,
    Activity::Tdst,
    Activity::Knex,
    Activity::Knfx,
    Activity::Hpabd,
    Activity::Cars,
    Activity::Tors,
    Activity::Knbn,
    Activity::Sts,
];

impl Activity {
    pub fn code(self) -> &'static str {
        match self {
            Activity::Bawk => "bawk",
            Activity::Sdwk => "sdwk",
            Activity::Wktrn => "wktrn",
            Activity::Hetowkbk => "hetowkbk",
            Activity::Hewk => "hewk",
            Activity::Tdwk => "tdwk",
            Activity::Towk => "towk",
            Activity::Sls => "sls",
            Activity::Tdst => "tdst",
            Activity::Knex => "knex",
            Activity::Knfx => "knfx",
            Activity::Hpabd => "hpabd",
            Activity::Cars => "cars",
            Activity::Tors => "tors",
            Activity::Knbn => "knbn",
            Activity::Sts => "sts",
        }
    }

    pub fn parse(code: &str) -> Result<Activity> {
        ALL_ACTIVITIES
            .iter()
            .copied()
            .find(|a| a.code() == code)
            .ok_or_else(|| Error::UnknownActivity { code: code.to_string() })
    }

    /// The group this activity belongs to.
    pub fn group(self) -> ActivityGroup {
        for g in GROUPS {
            if g.labels().contains(&self) {
                return g;
            }
        }
        unreachable!("every activity belongs to a group")
    }
}

/// A classification task: an ordered set of activities sharing a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivityGroup {
    Walk,
    WalkBalance,
    StandBalance,
    Strength,
}

pub const GROUPS: [ActivityGroup; 4] = [
    ActivityGroup::Walk,
    ActivityGroup::WalkBalance,
    ActivityGroup::StandBalance,
    ActivityGroup::Strength,
];

impl ActivityGroup {
    pub fn name(self) -> &'static str {
        match self {
            ActivityGroup::Walk => "walk",
            ActivityGroup::WalkBalance => "walk_balance",
            ActivityGroup::StandBalance => "stand_balance",
            ActivityGroup::Strength => "strength",
        }
    }

    pub fn parse(name: &str) -> Result<ActivityGroup> {
        GROUPS
            .iter()
            .copied()
            .find(|g| g.name() == name)
            .ok_or_else(|| Error::UnknownGroup { name: name.to_string() })
    }

    /// Class labels in index order: position in this slice is the class
    /// index used for training and reporting.
    pub fn labels(self) -> &'static [Activity] {
        match self {
            ActivityGroup::Walk => &[Activity::Bawk, Activity::Sdwk, Activity::Wktrn],
            ActivityGroup::WalkBalance => &[
                Activity::Hetowkbk,
                Activity::Hewk,
                Activity::Tdwk,
                Activity::Towk,
            ],
            ActivityGroup::StandBalance => &[Activity::Sls, Activity::Tdst],
            ActivityGroup::Strength => &[
                Activity::Knex,
                Activity::Knfx,
                Activity::Hpabd,
                Activity::Cars,
                Activity::Tors,
                Activity::Knbn,
                Activity::Sts,
            ],
        }
    }

    /// Number of classes.
    pub fn m(self) -> usize {
        self.labels().len()
    }

    pub fn label_index(self, activity: Activity) -> Option<usize> {
        self.labels().iter().position(|&a| a == activity)
    }

    /// Checks that `config` may be used with this group. The strength
    /// exercises are single-sided, so configurations pairing a left and
    /// right sensor are rejected for that group.
    pub fn accepts(self, config: &SensorConfig) -> Result<()> {
        if self == ActivityGroup::Strength && config.is_bilateral() {
            return Err(Error::ConfigNotApplicable {
                config: config.name.to_string(),
                group: self.name().to_string(),
            });
        }
        Ok(())
    }
}

/// Published window counts per class for one group, kept verbatim for an
/// arithmetic cross-check. `stated_total` is the group total as printed,
/// which is not always the sum of the printed per-class counts.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceDistribution {
    pub group: ActivityGroup,
    pub window_counts: &'static [u64],
    pub stated_total: u64,
    pub stated_percentages: &'static [f64],
}

impl ReferenceDistribution {
    /// Percentages recomputed as `count / stated_total × 100`.
    pub fn recomputed_percentages(&self) -> Vec<f64> {
        self.window_counts
            .iter()
            .map(|&c| c as f64 / self.stated_total as f64 * 100.0)
            .collect()
    }

    /// Largest absolute difference between recomputed and stated
    /// percentages.
    pub fn max_percentage_deviation(&self) -> f64 {
        self.recomputed_percentages()
            .iter()
            .zip(self.stated_percentages)
            .map(|(r, s)| (r - s).abs())
            .fold(0.0, f64::max)
    }
}

/// The published label distribution for each group.
pub fn reference_distribution(group: ActivityGroup) -> ReferenceDistribution {
    match group {
        ActivityGroup::Walk => ReferenceDistribution {
            group,
            window_counts: &[19204, 22077, 6925],
            stated_total: 48143,
            stated_percentages: &[39.88, 45.85, 14.38],
        },
        ActivityGroup::WalkBalance => ReferenceDistribution {
            group,
            window_counts: &[4130, 17796, 4578, 17250],
            stated_total: 43754,
            stated_percentages: &[9.44, 40.67, 10.46, 39.42],
        },
        ActivityGroup::StandBalance => ReferenceDistribution {
            group,
            window_counts: &[20006, 10753],
            stated_total: 30759,
            stated_percentages: &[65.05, 34.95],
        },
        ActivityGroup::Strength => ReferenceDistribution {
            group,
            window_counts: &[7500, 6398, 5954, 6188, 5815, 26452, 8533],
            stated_total: 76854,
            stated_percentages: &[12.14, 10.42, 9.62, 10.11, 9.41, 34.42, 13.86],
        },
    }
}
