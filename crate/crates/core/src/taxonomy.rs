//! Emotion classes and the arousal/valence/dominance attribute scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 8;
pub const ATTR_MIN: f64 = 1.0;
pub const ATTR_MAX: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Emotion {
    Anger,
    Contempt,
    Disgust,
    Fear,
    Happiness,
    Neutral,
    Sadness,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Anger,
        Emotion::Contempt,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happiness,
        Emotion::Neutral,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::ClassOutOfRange(i))
    }

    /// One-letter code: A C D F H N S U.
    pub fn code(self) -> char {
        match self {
            Emotion::Anger => 'A',
            Emotion::Contempt => 'C',
            Emotion::Disgust => 'D',
            Emotion::Fear => 'F',
            Emotion::Happiness => 'H',
            Emotion::Neutral => 'N',
            Emotion::Sadness => 'S',
            Emotion::Surprise => 'U',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "Anger",
            Emotion::Contempt => "Contempt",
            Emotion::Disgust => "Disgust",
            Emotion::Fear => "Fear",
            Emotion::Happiness => "Happiness",
            Emotion::Neutral => "Neutral",
            Emotion::Sadness => "Sadness",
            Emotion::Surprise => "Surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Emotion::from_code(c),
            _ => None,
        }
        .ok_or_else(|| Error::invalid("emotion", format!("unknown emotion code `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    Arousal,
    Valence,
    Dominance,
}

impl Attribute {
    /// Storage order of attribute triples.
    pub const ALL: [Attribute; 3] = [Attribute::Arousal, Attribute::Valence, Attribute::Dominance];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Arousal => "arousal",
            Attribute::Valence => "valence",
            Attribute::Dominance => "dominance",
        }
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arousal" | "aro" => Ok(Attribute::Arousal),
            "valence" | "val" => Ok(Attribute::Valence),
            "dominance" | "dom" => Ok(Attribute::Dominance),
            _ => Err(Error::invalid("attribute", format!("unknown attribute `{s}`"))),
        }
    }
}

/// Arousal, valence and dominance on the 1–7 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    pub arousal: f64,
    pub valence: f64,
    pub dominance: f64,
}

impl AttributeVector {
    /// Validated constructor: every component must lie in `[1, 7]`.
    pub fn new(arousal: f64, valence: f64, dominance: f64) -> Result<Self> {
        let v = Self::unchecked(arousal, valence, dominance);
        if !v.in_range() {
            return Err(Error::invalid(
                "attributes",
                format!("attribute out of range [1,7]: {:?}", v.to_array()),
            ));
        }
        Ok(v)
    }

    pub fn unchecked(arousal: f64, valence: f64, dominance: f64) -> Self {
        Self {
            arousal,
            valence,
            dominance,
        }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::unchecked(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.arousal, self.valence, self.dominance]
    }

    pub fn get(self, a: Attribute) -> f64 {
        self.to_array()[a.index()]
    }

    pub fn in_range(self) -> bool {
        self.to_array()
            .iter()
            .all(|v| (ATTR_MIN..=ATTR_MAX).contains(v))
    }

    /// Clamps into `[1, 7]`; the flag reports whether anything moved.
    pub fn clamped(self) -> (Self, bool) {
        let a = self.to_array();
        let c = a.map(|v| v.clamp(ATTR_MIN, ATTR_MAX));
        (Self::from_array(c), a != c)
    }
}
