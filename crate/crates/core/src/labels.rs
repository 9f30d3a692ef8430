//! Stage identifiers and the fixed per-stage class order.
//!
//! | stage | index 0       | index 1     |
//! |-------|---------------|-------------|
//! | 1     | `impure`      | `pure`      |
//! | 2     | `flat`        | `round`     |
//! | 3     | `embryo_down` | `embryo_up` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    Purity = 1,
    Shape = 2,
    Embryo = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Purity, Stage::Shape, Stage::Embryo];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Stage> {
        match n {
            1 => Some(Stage::Purity),
            2 => Some(Stage::Shape),
            3 => Some(Stage::Embryo),
            _ => None,
        }
    }

    /// Class names in index order.
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Stage::Purity => ["impure", "pure"],
            Stage::Shape => ["flat", "round"],
            Stage::Embryo => ["embryo_down", "embryo_up"],
        }
    }

    pub fn class_index(self, name: &str) -> Option<usize> {
        let normalized = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        self.class_names().iter().position(|c| *c == normalized)
    }

    pub fn key(self) -> &'static str {
        match self {
            Stage::Purity => "stage1",
            Stage::Shape => "stage2",
            Stage::Embryo => "stage3",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}", self.number())
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Stage::from_number(n).ok_or_else(|| format!("stage must be 1, 2 or 3, got {n}"))
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s.trim().parse().map_err(|_| format!("invalid stage {s:?}"))?;
        Stage::try_from(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purity {
    Impure,
    Pure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Flat,
    Round,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embryo {
    EmbryoDown,
    EmbryoUp,
}

macro_rules! binary_label {
    ($ty:ident, $stage:expr, $zero:ident, $one:ident) => {
        impl $ty {
            pub const STAGE: Stage = $stage;

            pub fn from_index(i: usize) -> Option<Self> {
                match i {
                    0 => Some($ty::$zero),
                    1 => Some($ty::$one),
                    _ => None,
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn name(self) -> &'static str {
                $stage.class_names()[self.index()]
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

binary_label!(Purity, Stage::Purity, Impure, Pure);
binary_label!(Shape, Stage::Shape, Flat, Round);
binary_label!(Embryo, Stage::Embryo, EmbryoDown, EmbryoUp);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_order_is_pinned() {
        assert_eq!(Purity::Impure.index(), 0);
        assert_eq!(Shape::Round.name(), "round");
        assert_eq!(Embryo::EmbryoUp.name(), "embryo_up");
        assert_eq!(Stage::Embryo.class_index("Embryo Up"), Some(1));
        assert_eq!(Stage::Purity.class_index("round"), None);
    }

    #[test]
    fn stage_parsing() {
        assert_eq!("2".parse::<Stage>().unwrap(), Stage::Shape);
        assert!("4".parse::<Stage>().is_err());
        let json = serde_json::to_string(&Stage::Embryo).unwrap();
        assert_eq!(json, "3");
        assert!(serde_json::from_str::<Stage>("0").is_err());
    }
}
