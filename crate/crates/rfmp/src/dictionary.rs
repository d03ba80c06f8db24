//! Dictionaries of trial functions: ordered collections of spherical
//! harmonics and Abel–Poisson kernels, with the manual and starting
//! constructions used in the experiments and a line-oriented text format.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{grid_with_radii, SphereGrid};
use crate::types::{norm3, sub3, BallPoint, SHIndex};

/// One trial function: a fully normalized spherical harmonic or an
/// Abel–Poisson kernel parametrized by a point inside the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DictionaryElement {
    SphericalHarmonic(SHIndex),
    AbelPoisson(BallPoint),
}

impl DictionaryElement {
    pub fn kind(&self) -> &'static str {
        match self {
            DictionaryElement::SphericalHarmonic(_) => "SH",
            DictionaryElement::AbelPoisson(_) => "APK",
        }
    }

    /// Space-separated parameter list matching the text file format.
    pub fn params_string(&self) -> String {
        match self {
            DictionaryElement::SphericalHarmonic(idx) => format!("{} {}", idx.degree, idx.order),
            DictionaryElement::AbelPoisson(bp) => {
                let x = bp.coords();
                format!("{:.17e} {:.17e} {:.17e}", x[0], x[1], x[2])
            }
        }
    }
}

impl fmt::Display for DictionaryElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind(), self.params_string())
    }
}

/// Provenance tag for a dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryOrigin {
    Manual,
    Starting,
    Learnt,
}

impl fmt::Display for DictionaryOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DictionaryOrigin::Manual => "manual",
            DictionaryOrigin::Starting => "starting",
            DictionaryOrigin::Learnt => "learnt",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DictionaryOrigin {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "manual" => Ok(DictionaryOrigin::Manual),
            "starting" => Ok(DictionaryOrigin::Starting),
            "learnt" => Ok(DictionaryOrigin::Learnt),
            other => Err(format!("unknown dictionary origin {other:?}")),
        }
    }
}

/// Ordered dictionary with provenance metadata. Element order is significant
/// and preserved through serialization.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub elements: Vec<DictionaryElement>,
    pub origin: DictionaryOrigin,
    pub metadata: BTreeMap<String, String>,
}

impl Dictionary {
    pub fn new(origin: DictionaryOrigin) -> Self {
        Dictionary {
            elements: Vec::new(),
            origin,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Appends `d` unless an equal element is already present: exact index
    /// match for spherical harmonics, kernel parameter within Euclidean
    /// distance `tol` for Abel–Poisson kernels. Returns whether the element
    /// was appended.
    pub fn dedupe_append(&mut self, d: DictionaryElement, tol: f64) -> bool {
        let duplicate = self.elements.iter().any(|e| match (e, &d) {
            (DictionaryElement::SphericalHarmonic(a), DictionaryElement::SphericalHarmonic(b)) => {
                a == b
            }
            (DictionaryElement::AbelPoisson(a), DictionaryElement::AbelPoisson(b)) => {
                norm3(sub3(a.coords(), b.coords())) <= tol
            }
            _ => false,
        });
        if duplicate {
            false
        } else {
            self.elements.push(d);
            true
        }
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# origin {}", self.origin)?;
        for (k, v) in &self.metadata {
            writeln!(f, "# {k} {v}")?;
        }
        for e in &self.elements {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut dict = Dictionary::new(DictionaryOrigin::Manual);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                let mut it = rest.trim().splitn(2, ' ');
                if let Some(key) = it.next() {
                    let value = it.next().unwrap_or("").to_string();
                    if key == "origin" {
                        dict.origin = value.parse().map_err(|m| Error::Parse {
                            path: path.display().to_string(),
                            line: lineno,
                            message: m,
                        })?;
                    } else if !key.is_empty() {
                        dict.metadata.insert(key.to_string(), value);
                    }
                }
                continue;
            }
            let elem = parse_element(trimmed).map_err(|m| Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: m,
            })?;
            dict.elements.push(elem);
        }
        Ok(dict)
    }
}

/// Parses `SH n j` or `APK x1 x2 x3`.
pub(crate) fn parse_element(s: &str) -> std::result::Result<DictionaryElement, String> {
    let fields: Vec<&str> = s.split_whitespace().collect();
    match fields.as_slice() {
        ["SH", n, j] => {
            let n: u32 = n.parse().map_err(|e| format!("bad degree {n:?}: {e}"))?;
            let j: i32 = j.parse().map_err(|e| format!("bad order {j:?}: {e}"))?;
            let idx = SHIndex::new(n, j).map_err(|e| e.to_string())?;
            Ok(DictionaryElement::SphericalHarmonic(idx))
        }
        ["APK", x1, x2, x3] => {
            let parse = |v: &str| -> std::result::Result<f64, String> {
                v.parse().map_err(|e| format!("bad coordinate {v:?}: {e}"))
            };
            let x = [parse(x1)?, parse(x2)?, parse(x3)?];
            let bp = BallPoint::new(x).map_err(|e| e.to_string())?;
            Ok(DictionaryElement::AbelPoisson(bp))
        }
        _ => Err(format!("expected `SH n j` or `APK x1 x2 x3`, got {s:?}")),
    }
}

/// All spherical harmonics with degree `<= max_degree`, degree-major with
/// ascending order.
pub fn sh_block(max_degree: u32) -> Vec<DictionaryElement> {
    let mut out = Vec::with_capacity(((max_degree + 1) * (max_degree + 1)) as usize);
    for n in 0..=max_degree {
        for j in -(n as i32)..=n as i32 {
            out.push(DictionaryElement::SphericalHarmonic(SHIndex { degree: n, order: j }));
        }
    }
    out
}

/// Manual dictionary: all spherical harmonics up to `max_degree` followed by
/// kernels on the radius x grid product, radius-major.
pub fn manual_dictionary(max_degree: u32, grid: &SphereGrid, radii: &[f64]) -> Result<Dictionary> {
    let mut dict = Dictionary::new(DictionaryOrigin::Manual);
    dict.elements = sh_block(max_degree);
    for bp in grid_with_radii(grid, radii)? {
        dict.elements.push(DictionaryElement::AbelPoisson(bp));
    }
    dict.metadata.insert("max_degree".into(), max_degree.to_string());
    dict.metadata.insert("gamma".into(), grid.gamma().to_string());
    dict.metadata.insert(
        "radii".into(),
        radii.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","),
    );
    Ok(dict)
}

/// Starting dictionary for learning: spherical harmonics up to `max_degree`
/// plus a single-radius kernel set over the grid.
pub fn starting_dictionary(max_degree: u32, grid: &SphereGrid, radius: f64) -> Result<Dictionary> {
    let mut dict = manual_dictionary(max_degree, grid, &[radius])?;
    dict.origin = DictionaryOrigin::Starting;
    Ok(dict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::reuter_grid;

    #[test]
    fn manual_counts() {
        let g = reuter_grid(2).unwrap();
        let d = manual_dictionary(2, &g, &[0.5]).unwrap();
        assert_eq!(d.len(), 9 + 6);

        let empty = SphereGrid::from_points(vec![]);
        let d0 = manual_dictionary(0, &empty, &[]).unwrap();
        assert_eq!(d0.len(), 1);
        assert_eq!(
            d0.elements[0],
            DictionaryElement::SphericalHarmonic(SHIndex::new(0, 0).unwrap())
        );
    }

    #[test]
    fn reference_dictionary_sizes() {
        // the production constructions: SH<=25 + 10 radii over a 4551-point
        // grid gives 46186 elements; the starting sets give 11330 and 4850
        let g60 = reuter_grid(60).unwrap();
        assert_eq!(g60.len(), 4551);
        let radii = [0.75, 0.80, 0.85, 0.89, 0.91, 0.93, 0.94, 0.95, 0.96, 0.97];
        let manual = manual_dictionary(25, &g60, &radii).unwrap();
        assert_eq!(manual.len(), 46186);

        let g30 = reuter_grid(30).unwrap();
        assert_eq!(g30.len(), 1129);
        assert_eq!(starting_dictionary(100, &g30, 0.94).unwrap().len(), 11330);
        assert_eq!(starting_dictionary(60, &g30, 0.94).unwrap().len(), 4850);
    }

    #[test]
    fn starting_trivial() {
        let one = SphereGrid::from_points(vec![[0.0, 0.0, 1.0]]);
        let d = starting_dictionary(0, &one, 0.5).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.origin, DictionaryOrigin::Starting);
    }

    #[test]
    fn dedupe_rules() {
        let mut d = Dictionary::new(DictionaryOrigin::Learnt);
        let sh = DictionaryElement::SphericalHarmonic(SHIndex::new(3, 1).unwrap());
        assert!(d.dedupe_append(sh, 1e-10));
        assert!(!d.dedupe_append(sh, 1e-10));
        let a = DictionaryElement::AbelPoisson(BallPoint::new([0.1, 0.2, 0.3]).unwrap());
        assert!(d.dedupe_append(a, 1e-10));
        let near = DictionaryElement::AbelPoisson(BallPoint::new([0.1, 0.2, 0.3 + 1e-12]).unwrap());
        assert!(!d.dedupe_append(near, 1e-10));
        let far = DictionaryElement::AbelPoisson(BallPoint::new([0.1, 0.2, 0.4]).unwrap());
        assert!(d.dedupe_append(far, 1e-10));
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn round_trip_preserves_order_and_metadata() {
        let g = reuter_grid(3).unwrap();
        let mut d = manual_dictionary(4, &g, &[0.3, 0.9]).unwrap();
        d.metadata.insert("note".into(), "round trip".into());
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("d.dict");
        d.write_to(&path).unwrap();
        let back = Dictionary::read_from(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn parse_errors_name_line() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.dict");
        std::fs::write(&path, "SH 2 1\nAPK 0.1 oops 0.2\n").unwrap();
        let err = Dictionary::read_from(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
    }
}
