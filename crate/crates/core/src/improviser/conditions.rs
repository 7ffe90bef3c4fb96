use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::biometric::QscLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisCondition {
    Truthful,
    Deceptive,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BioCondition {
    Truthful,
    Deceptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Live,
    Script,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = EngineError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)+
                    _ => Err(EngineError::Config(format!("unknown {} '{s}'", stringify!($t)))),
                }
            }
        }
    };
}

text_enum!(VisCondition, Truthful => "truthful", Deceptive => "deceptive", Absent => "absent");
text_enum!(BioCondition, Truthful => "truthful", Deceptive => "deceptive");
text_enum!(InputMode, Live => "live", Script => "script");

impl VisCondition {
    /// The value shown to the performer for a given truthful confidence.
    pub fn display(self, c_raw: f64) -> f64 {
        match self {
            VisCondition::Deceptive => 1.0 - c_raw,
            VisCondition::Truthful | VisCondition::Absent => c_raw,
        }
    }

    /// Absent sessions render a face with no features.
    pub fn featureless(self) -> bool {
        self == VisCondition::Absent
    }
}

impl BioCondition {
    pub fn effective(self, raw: QscLevel) -> QscLevel {
        match self {
            BioCondition::Truthful => raw,
            BioCondition::Deceptive => raw.swapped(),
        }
    }
}

/// `(c_display, qsc_effective)` for one cell of the condition matrix.
pub fn apply_conditions(c_raw: f64, qsc: QscLevel, vis: VisCondition, bio: BioCondition) -> (f64, QscLevel) {
    (vis.display(c_raw), bio.effective(qsc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_examples() {
        let (c, q) = apply_conditions(0.8, QscLevel::High, VisCondition::Deceptive, BioCondition::Deceptive);
        assert!((c - 0.2).abs() < 1e-12);
        assert_eq!(q, QscLevel::Low);
        for vis in [VisCondition::Truthful, VisCondition::Deceptive, VisCondition::Absent] {
            for bio in [BioCondition::Truthful, BioCondition::Deceptive] {
                assert_eq!(apply_conditions(0.5, QscLevel::Med, vis, bio), (0.5, QscLevel::Med));
            }
        }
        assert_eq!(apply_conditions(0.3, QscLevel::Low, VisCondition::Truthful, BioCondition::Truthful), (0.3, QscLevel::Low));
        assert!(VisCondition::Absent.featureless());
    }

    #[test]
    fn parse_names() {
        assert_eq!("Deceptive".parse::<VisCondition>().unwrap(), VisCondition::Deceptive);
        assert_eq!("script".parse::<InputMode>().unwrap(), InputMode::Script);
        assert!("sometimes".parse::<BioCondition>().is_err());
    }

    proptest! {
        #[test]
        fn maps_are_involutions(c in 0.0f64..=1.0, i in 0usize..3) {
            let q = QscLevel::ALL[i];
            let d = VisCondition::Deceptive;
            prop_assert!((d.display(d.display(c)) - c).abs() < 1e-15);
            let b = BioCondition::Deceptive;
            prop_assert_eq!(b.effective(b.effective(q)), q);
        }
    }
}
