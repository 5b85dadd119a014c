//! Dataset families: score bounds, the discretized score grid, and class binning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::Polarity;

/// Spacing of the score grid used by the discrete score tokens.
pub const GRID_STEP: f64 = 0.1;

/// Score bounds and class-binning rules for one dataset family. Deserializes
/// from a full table or from a built-in name (`"mosi"`, `"sims"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileSpec")]
pub struct DatasetProfile {
    pub name: String,
    pub r_min: f64,
    pub r_max: f64,
    /// Non-empty when the family reports seven-class accuracy.
    pub class_edges_acc7: Vec<f64>,
    /// Non-empty when the family reports five-class accuracy.
    pub class_edges_acc5: Vec<f64>,
    /// Scores with `|s| <= neutral_band` are neutral.
    pub neutral_band: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileTable {
    name: String,
    r_min: f64,
    r_max: f64,
    #[serde(default)]
    class_edges_acc7: Vec<f64>,
    #[serde(default)]
    class_edges_acc5: Vec<f64>,
    #[serde(default)]
    neutral_band: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileSpec {
    Name(String),
    Table(ProfileTable),
}

impl TryFrom<ProfileSpec> for DatasetProfile {
    type Error = Error;

    fn try_from(spec: ProfileSpec) -> Result<Self> {
        let p = match spec {
            ProfileSpec::Name(n) => return Self::by_name(&n),
            ProfileSpec::Table(t) => Self {
                name: t.name,
                r_min: t.r_min,
                r_max: t.r_max,
                class_edges_acc7: t.class_edges_acc7,
                class_edges_acc5: t.class_edges_acc5,
                neutral_band: t.neutral_band,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

impl DatasetProfile {
    /// Seven-point scale on [-3, 3] (MOSI / MOSEI family).
    pub fn mosi() -> Self {
        Self {
            name: "mosi".into(),
            r_min: -3.0,
            r_max: 3.0,
            class_edges_acc7: vec![-2.5, -1.5, -0.5, 0.5, 1.5, 2.5],
            class_edges_acc5: Vec::new(),
            neutral_band: 0.0,
        }
    }

    /// Continuous scale on [-1, 1] (SIMS family).
    pub fn sims() -> Self {
        Self {
            name: "sims".into(),
            r_min: -1.0,
            r_max: 1.0,
            class_edges_acc7: Vec::new(),
            class_edges_acc5: vec![-0.7, -0.1, 0.1, 0.7],
            neutral_band: 0.1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "mosi" => Ok(Self::mosi()),
            "sims" => Ok(Self::sims()),
            other => Err(Error::Profile(format!("unknown profile '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min < self.r_max) || !self.r_min.is_finite() || !self.r_max.is_finite() {
            return Err(Error::Profile(format!("{}: r_min must be below r_max", self.name)));
        }
        for edges in [&self.class_edges_acc7, &self.class_edges_acc5] {
            if edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Profile(format!(
                    "{}: class edges must be strictly increasing",
                    self.name
                )));
            }
        }
        if !(self.neutral_band >= 0.0) {
            return Err(Error::Profile(format!(
                "{}: neutral_band must be nonnegative",
                self.name
            )));
        }
        for bound in [self.r_min, self.r_max] {
            let scaled = bound / GRID_STEP;
            if (scaled - scaled.round()).abs() > 1e-9 {
                return Err(Error::Profile(format!(
                    "{}: bound {bound} is not on the {GRID_STEP} grid",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.r_max - self.r_min
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.r_min && s <= self.r_max
    }

    fn grid_lo(&self) -> i64 {
        (self.r_min / GRID_STEP).round() as i64
    }

    /// Number of grid points on [r_min, r_max].
    pub fn grid_len(&self) -> usize {
        ((self.r_max / GRID_STEP).round() as i64 - self.grid_lo() + 1) as usize
    }

    /// Value of grid point `i`. Computed as an integer over ten so that it is
    /// bit-identical to parsing its two-decimal rendering.
    pub fn grid_value(&self, i: usize) -> f64 {
        (self.grid_lo() + i as i64) as f64 / 10.0
    }

    pub fn nearest_grid_index(&self, s: f64) -> usize {
        let raw = (s / GRID_STEP).round() as i64 - self.grid_lo();
        raw.clamp(0, self.grid_len() as i64 - 1) as usize
    }

    pub fn snap(&self, s: f64) -> f64 {
        self.grid_value(self.nearest_grid_index(s))
    }

    pub fn clamp(&self, s: f64) -> f64 {
        s.clamp(self.r_min, self.r_max)
    }

    pub fn supports_classes(&self, k: usize) -> bool {
        match k {
            2 | 3 => true,
            5 => !self.class_edges_acc5.is_empty(),
            7 => !self.class_edges_acc7.is_empty(),
            _ => false,
        }
    }
}

/// Negative below `-neutral_band`, positive above `+neutral_band`, neutral otherwise.
pub fn score_to_polarity(s: f64, profile: &DatasetProfile) -> Polarity {
    if s < -profile.neutral_band {
        Polarity::Negative
    } else if s > profile.neutral_band {
        Polarity::Positive
    } else {
        Polarity::Neutral
    }
}
