use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Annotation vocabulary. The declaration order is the fixed class order
/// used by probability vectors and confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TissueLabel {
    Benign,
    Malignant,
    Normal,
}

impl TissueLabel {
    pub const ALL: [TissueLabel; 3] = [TissueLabel::Benign, TissueLabel::Malignant, TissueLabel::Normal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TissueLabel::Benign => "benign",
            TissueLabel::Malignant => "malignant",
            TissueLabel::Normal => "normal",
        }
    }
}

impl fmt::Display for TissueLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TissueLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" => Ok(TissueLabel::Benign),
            "malignant" => Ok(TissueLabel::Malignant),
            "normal" => Ok(TissueLabel::Normal),
            _ => Err(Error::UnknownLabel { found: s.to_string() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_case_insensitively() {
        assert_eq!(" Malignant ".parse::<TissueLabel>().unwrap(), TissueLabel::Malignant);
        assert_eq!("NORMAL".parse::<TissueLabel>().unwrap(), TissueLabel::Normal);
    }

    #[test]
    fn rejects_unknown_label_with_vocabulary() {
        let err = "tumor".parse::<TissueLabel>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tumor"));
        assert!(msg.contains("benign, malignant, normal"));
    }

    #[test]
    fn index_round_trips() {
        for label in TissueLabel::ALL {
            assert_eq!(TissueLabel::from_index(label.index()), Some(label));
        }
        assert_eq!(TissueLabel::from_index(3), None);
    }
}
