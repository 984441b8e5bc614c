use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Assignment of two estimates to two references.
///
/// `Identity` pairs estimate `i` with reference `i`; `Swap` pairs estimate
/// `1 - i` with reference `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permutation {
    #[default]
    Identity,
    Swap,
}

impl Permutation {
    pub const ALL: [Permutation; 2] = [Permutation::Identity, Permutation::Swap];

    /// Index of the estimate assigned to `reference`.
    pub fn estimate_for(self, reference: usize) -> usize {
        match self {
            Permutation::Identity => reference,
            Permutation::Swap => 1 - reference,
        }
    }

    /// Reorders a pair of estimates so position `i` holds the one assigned to reference `i`.
    pub fn arrange<T>(self, [a, b]: [T; 2]) -> [T; 2] {
        match self {
            Permutation::Identity => [a, b],
            Permutation::Swap => [b, a],
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Permutation::Identity => Permutation::Swap,
            Permutation::Swap => Permutation::Identity,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Permutation::Identity => "identity",
            Permutation::Swap => "swap",
        }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Permutation::Identity),
            "swap" => Ok(Permutation::Swap),
            other => Err(Error::Parse {
                location: "permutation".into(),
                message: format!("unknown permutation {other:?}"),
            }),
        }
    }
}
