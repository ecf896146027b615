//! Tidal constituents and the catalog that fixes their order.
//!
//! Every matrix and vector in the crate is indexed by the position of a
//! constituent in a [`ConstituentCatalog`]. Catalog files list speeds in
//! degrees per hour and nodal angles in degrees; both are stored in radians.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const STANDARD_CATALOG: &str = include_str!("../data/noaa37.csv");

/// Wraps an angle in radians into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constituent {
    pub name: String,
    /// Angular speed in radians per hour.
    pub speed: f64,
    /// Nodal amplitude factor `f`.
    pub nodal_factor: f64,
    /// Nodal phase correction `u` in radians, within `[0, 2π)`.
    pub nodal_angle: f64,
}

impl Constituent {
    /// Constituent with no nodal correction (`f = 1`, `u = 0`).
    pub fn new(name: impl Into<String>, speed: f64) -> Result<Self> {
        Self::with_nodal(name, speed, 1.0, 0.0)
    }

    pub fn with_nodal(name: impl Into<String>, speed: f64, nodal_factor: f64, nodal_angle: f64) -> Result<Self> {
        let name = name.into();
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::InvalidSpeed { name, speed });
        }
        if !(nodal_factor > 0.0 && nodal_factor.is_finite()) {
            return Err(Error::Format(format!(
                "constituent `{name}` has non-positive nodal factor {nodal_factor}"
            )));
        }
        Ok(Self {
            name,
            speed,
            nodal_factor,
            nodal_angle: normalize_angle(nodal_angle),
        })
    }

    /// Period in hours.
    pub fn period(&self) -> f64 {
        TAU / self.speed
    }
}

/// An ordered, immutable list of constituents with unique names.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstituentCatalog {
    constituents: Vec<Constituent>,
    index: HashMap<String, usize>,
}

impl ConstituentCatalog {
    pub fn new(constituents: Vec<Constituent>) -> Result<Self> {
        let mut index = HashMap::with_capacity(constituents.len());
        for (k, c) in constituents.iter().enumerate() {
            if index.insert(c.name.clone(), k).is_some() {
                return Err(Error::DuplicateName(c.name.clone()));
            }
        }
        Ok(Self { constituents, index })
    }

    /// The bundled 37-constituent NOAA list.
    pub fn standard() -> Self {
        Self::parse(STANDARD_CATALOG, Path::new("<bundled noaa37.csv>")).expect("bundled catalog is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading catalog {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    /// Parses catalog text: `name, speed_deg_per_hour[, f[, u_deg]]` per row,
    /// `#` comment lines, and an optional header row whose first field is `name`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: PathBuf::from(origin),
            line,
            message,
        };

        let mut constituents = Vec::new();
        let mut first = true;
        for (k, raw) in text.lines().enumerate() {
            let line = k as u64 + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let record: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let is_header = first && record[0].eq_ignore_ascii_case("name");
            first = false;
            if is_header {
                continue;
            }
            if !(2..=4).contains(&record.len()) {
                return Err(parse_err(
                    line,
                    format!("expected 2 to 4 columns, found {}", record.len()),
                ));
            }
            let name = record[0].to_string();
            if name.is_empty() {
                return Err(parse_err(line, "empty constituent name".into()));
            }
            let number = |idx: usize, what: &str| -> Result<f64> {
                record[idx]
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("invalid {what} `{}`", record[idx])))
            };
            let speed_deg = number(1, "speed")?;
            let f = if record.len() > 2 {
                number(2, "nodal factor")?
            } else {
                1.0
            };
            let u_deg = if record.len() > 3 {
                number(3, "nodal angle")?
            } else {
                0.0
            };
            if !(speed_deg > 0.0) {
                return Err(Error::InvalidSpeed { name, speed: speed_deg });
            }
            let c =
                Constituent::with_nodal(name, speed_deg.to_radians(), f, u_deg.to_radians()).map_err(|e| match e {
                    Error::Format(msg) => parse_err(line, msg),
                    other => other,
                })?;
            constituents.push(c);
        }
        Self::new(constituents)
    }

    /// Serializes back to the catalog file format.
    pub fn to_catalog_string(&self) -> String {
        let mut out = String::from("# name, speed_deg_per_hour, f, u_deg\n");
        for c in &self.constituents {
            out.push_str(&format!(
                "{}, {}, {}, {}\n",
                c.name,
                c.speed.to_degrees(),
                c.nodal_factor,
                c.nodal_angle.to_degrees()
            ));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.constituents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constituents.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<&Constituent> {
        self.constituents.get(k)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constituent> {
        self.constituents.iter()
    }

    pub fn constituents(&self) -> &[Constituent] {
        &self.constituents
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.constituents.iter().map(|c| c.speed).collect()
    }

    pub fn nodal_factors(&self) -> Vec<f64> {
        self.constituents.iter().map(|c| c.nodal_factor).collect()
    }
}

impl<'a> IntoIterator for &'a ConstituentCatalog {
    type Item = &'a Constituent;
    type IntoIter = std::slice::Iter<'a, Constituent>;

    fn into_iter(self) -> Self::IntoIter {
        self.constituents.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<ConstituentCatalog> {
        ConstituentCatalog::parse(text, Path::new("test.csv"))
    }

    #[test]
    fn single_m2_row_converts_to_radians() {
        let cat = parse("M2, 28.9841042\n").unwrap();
        assert_eq!(cat.len(), 1);
        let m2 = cat.get(0).unwrap();
        // 360 / 28.9841042 = 12.4206 h, the 12 h 25 min lunar semidiurnal period
        assert!((360.0f64 / 28.9841042 - 12.4206).abs() < 1e-4);
        assert!((m2.speed - std::f64::consts::TAU / 12.4206).abs() < 1e-5);
        assert!((m2.period() - 12.4206).abs() < 1e-4);
        assert_eq!(m2.nodal_factor, 1.0);
        assert_eq!(m2.nodal_angle, 0.0);
    }

    #[test]
    fn explicit_defaults_match_implicit() {
        let explicit = parse("M2, 28.98, 1.0, 0.0").unwrap();
        let implicit = parse("M2, 28.98").unwrap();
        assert_eq!(explicit, implicit);
    }

    #[test]
    fn standard_catalog_has_37_rows() {
        let cat = ConstituentCatalog::standard();
        assert_eq!(cat.len(), 37);
        assert_eq!(cat.index_of("M2"), Some(0));
        assert_eq!(cat.index_of("MS4"), Some(36));
    }

    #[test]
    fn comments_and_header_are_skipped() {
        let cat = parse("# comment\nname, speed_deg_per_hour\nK1, 15.0410686\n# tail\nO1, 13.9430356\n").unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.index_of("O1"), Some(1));
    }

    #[test]
    fn unknown_name_is_not_found() {
        let cat = ConstituentCatalog::standard();
        assert_eq!(cat.index_of("ZZ9"), None);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(matches!(
            parse("M2, 28.98\nM2, 28.98\n"),
            Err(Error::DuplicateName(n)) if n == "M2"
        ));
    }

    #[test]
    fn rejects_non_positive_speed() {
        assert!(matches!(parse("X, 0.0\n"), Err(Error::InvalidSpeed { .. })));
        assert!(matches!(parse("X, -3\n"), Err(Error::InvalidSpeed { .. })));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let err = parse("M2, 28.98\nS2, fast\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("# c\nM2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn nodal_angle_is_normalized() {
        let cat = parse("M2, 28.98, 1.02, -90").unwrap();
        let u = cat.get(0).unwrap().nodal_angle;
        assert!((u - 1.5 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert_eq!(normalize_angle(TAU), 0.0);
        assert!(normalize_angle(-1e-300) < TAU);
        assert!((normalize_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn file_order_is_index_order() {
        let cat = ConstituentCatalog::standard();
        for (k, c) in cat.iter().enumerate() {
            assert_eq!(cat.index_of(&c.name), Some(k));
        }
    }

    proptest! {
        #[test]
        fn serialization_round_trips(speeds in proptest::collection::vec(1e-3f64..200.0, 1..20),
                                     factor in 0.5f64..1.5, angle in -720.0f64..720.0) {
            let text: String = speeds
                .iter()
                .enumerate()
                .map(|(k, s)| format!("C{k}, {s}, {factor}, {angle}\n"))
                .collect();
            let cat = parse(&text).unwrap();
            let again = parse(&cat.to_catalog_string()).unwrap();
            prop_assert_eq!(cat.len(), again.len());
            for (a, b) in cat.iter().zip(again.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert!((a.speed - b.speed).abs() <= 4.0 * f64::EPSILON * a.speed);
                prop_assert_eq!(a.nodal_factor, b.nodal_factor);
                prop_assert!((a.nodal_angle - b.nodal_angle).abs() <= 1e-12);
            }
            for (k, c) in cat.iter().enumerate() {
                prop_assert_eq!(cat.index_of(&c.name), Some(k));
            }
        }
    }
}
