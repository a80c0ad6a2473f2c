//! Closed vocabularies: coverage classes (with zone geometry), team schemes and
//! position codes. The class table ships as `data/coverage_classes.json`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const N_COVERAGE_CLASSES: usize = 20;

const CLASS_TABLE: &str = include_str!("../data/coverage_classes.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Man,
    Zone,
    Rush,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub kind: ClassKind,
    /// `[yards beyond LOS, y]`.
    #[serde(default)]
    pub landmark: Option<[f64; 2]>,
    #[serde(default)]
    pub align: Option<[f64; 2]>,
    #[serde(default)]
    pub spread: f64,
}

#[derive(Debug, Deserialize)]
struct Table {
    classes: Vec<ClassInfo>,
    schemes: Vec<String>,
    positions: Vec<String>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t: Table = serde_json::from_str(CLASS_TABLE).expect("coverage class table parses");
        assert_eq!(t.classes.len(), N_COVERAGE_CLASSES);
        assert_eq!(t.classes[0].kind, ClassKind::Rush);
        assert_eq!(t.schemes.len(), Scheme::ALL.len());
        for (s, name) in Scheme::ALL.iter().zip(&t.schemes) {
            assert_eq!(s.name(), name);
        }
        t
    })
}

/// Index into the 20-class coverage vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoverageClass(pub usize);

impl CoverageClass {
    pub const NO_ASSIGNMENT: CoverageClass = CoverageClass(0);
    pub const MAN: CoverageClass = CoverageClass(1);
    pub const BRACKET: CoverageClass = CoverageClass(2);

    pub fn all() -> impl Iterator<Item = CoverageClass> {
        (0..N_COVERAGE_CLASSES).map(CoverageClass)
    }

    pub fn by_name(name: &str) -> Option<CoverageClass> {
        table()
            .classes
            .iter()
            .position(|c| c.name == name)
            .map(CoverageClass)
    }

    pub fn info(self) -> &'static ClassInfo {
        &table().classes[self.0]
    }

    pub fn name(self) -> &'static str {
        &self.info().name
    }

    pub fn kind(self) -> ClassKind {
        self.info().kind
    }

    pub fn is_man(self) -> bool {
        self.kind() == ClassKind::Man
    }

    pub fn is_zone(self) -> bool {
        self.kind() == ClassKind::Zone
    }
}

impl fmt::Display for CoverageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoverageClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoverageClass::by_name(s)
            .ok_or_else(|| Error::Data(format!("unknown coverage class {s:?}")))
    }
}

impl Serialize for CoverageClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CoverageClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Team coverage shell, consumed as an input feature by the coverage head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "COVER_1")]
    Cover1,
    #[serde(rename = "COVER_2")]
    Cover2,
    #[serde(rename = "COVER_3")]
    Cover3,
    #[serde(rename = "COVER_4")]
    Cover4,
    #[serde(rename = "COVER_6")]
    Cover6,
    #[serde(rename = "MAN")]
    Man,
    #[serde(rename = "PREVENT")]
    Prevent,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::Cover1,
        Scheme::Cover2,
        Scheme::Cover3,
        Scheme::Cover4,
        Scheme::Cover6,
        Scheme::Man,
        Scheme::Prevent,
    ];

    pub fn index(self) -> usize {
        Scheme::ALL.iter().position(|&s| s == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Cover1 => "COVER_1",
            Scheme::Cover2 => "COVER_2",
            Scheme::Cover3 => "COVER_3",
            Scheme::Cover4 => "COVER_4",
            Scheme::Cover6 => "COVER_6",
            Scheme::Man => "MAN",
            Scheme::Prevent => "PREVENT",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown team scheme {s:?}")))
    }
}

/// Index of a position code in the embedding table; unknown codes share the
/// final slot.
pub fn position_index(code: &str) -> usize {
    let positions = &table().positions;
    positions
        .iter()
        .position(|p| p == code)
        .unwrap_or(positions.len())
}

/// Embedding rows needed for position codes (known codes plus one unknown slot).
pub fn n_position_codes() -> usize {
    table().positions.len() + 1
}

pub fn position_codes() -> &'static [String] {
    &table().positions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_twenty_classes() {
        assert_eq!(CoverageClass::all().count(), 20);
        assert_eq!(CoverageClass::NO_ASSIGNMENT.name(), "NO_ASSIGNMENT");
        assert_eq!(CoverageClass::MAN.kind(), ClassKind::Man);
        assert_eq!(CoverageClass::BRACKET.kind(), ClassKind::Man);
    }

    #[test]
    fn man_set_is_declared_in_data() {
        let man: Vec<_> = CoverageClass::all().filter(|c| c.is_man()).map(|c| c.name()).collect();
        assert_eq!(man, ["MAN", "BRACKET"]);
    }

    #[test]
    fn zones_carry_geometry() {
        for c in CoverageClass::all().filter(|c| c.is_zone()) {
            assert!(c.info().landmark.is_some() && c.info().align.is_some(), "{c}");
        }
        let flat = CoverageClass::by_name("FLAT_LEFT").unwrap().info();
        assert_eq!(flat.landmark, Some([3.0, 46.0]));
    }

    #[test]
    fn names_round_trip() {
        for c in CoverageClass::all() {
            assert_eq!(c.name().parse::<CoverageClass>().unwrap(), c);
        }
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
            assert_eq!(Scheme::ALL[s.index()], s);
        }
        assert!("COVER_9".parse::<Scheme>().is_err());
        assert!("ZONE".parse::<CoverageClass>().is_err());
    }

    #[test]
    fn unknown_positions_share_a_slot() {
        assert_eq!(position_index("QB"), 0);
        assert_eq!(position_index("K"), position_codes().len());
        assert_eq!(position_index("P"), position_index("K"));
    }
}
