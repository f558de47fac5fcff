//! TOML measure descriptions.
//!
//! ```toml
//! atoms = [{ x = [0.0, 0.0], t = 0.01, mass = 1.0 }]   # omit `t` for spatial measures
//! density = "source.grid"                             # DPLGRID1 file, relative to this file
//!
//! [[product]]                                         # space-time measures only
//! F = [1.0, 0.5]                                      # uniform slabs of (0, T)
//! omega = { atoms = [{ x = [0.2, 0.0], mass = 1.0 }] }
//! ```
//!
//! A density file carries no coordinates: it is read as the uniform lattice
//! of its own shape over the measure's domain, with the leading axis as time
//! slabs for space-time files.
//!
//! A description may instead consist of `file = "other.toml"` alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, GridSpec, Lattice, Layout};
use crate::gridfile::read_grid;
use crate::measure::{Ambient, RadonMeasure};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDescription {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub product: Vec<ProductEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomEntry {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductEntry {
    pub omega: MeasureDescription,
    #[serde(rename = "F")]
    pub profile: Vec<f64>,
}

impl MeasureDescription {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn is_empty(&self) -> bool {
        self.file.is_none()
            && self.atoms.is_empty()
            && self.density.is_none()
            && self.product.is_empty()
    }

    /// Every file the description refers to, resolved against `base`.
    pub fn referenced_files(&self, base: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        if let Some(f) = &self.file {
            let path = base.join(f);
            let inner = Self::read(&path)?;
            out.push(path.clone());
            out.extend(inner.referenced_files(parent_of(&path))?);
        }
        if let Some(d) = &self.density {
            out.push(base.join(d));
        }
        for p in &self.product {
            out.extend(p.omega.referenced_files(base)?);
        }
        Ok(out)
    }

    /// Builds the measure on `domain`; relative paths resolve against `base`.
    pub fn build(&self, domain: &BoxDomain, ambient: Ambient, base: &Path) -> Result<RadonMeasure> {
        if let Some(f) = &self.file {
            if self.atoms.len() + self.product.len() > 0 || self.density.is_some() {
                return Err(Error::Config(
                    "`file` cannot be combined with inline entries".into(),
                ));
            }
            let path = base.join(f);
            return Self::read(&path)?.build(domain, ambient, parent_of(&path));
        }
        let mut mu = RadonMeasure::zero(domain.clone(), ambient);
        for a in &self.atoms {
            mu = match (ambient, a.t) {
                (Ambient::Space, None) => {
                    mu.add(&RadonMeasure::dirac(domain.clone(), &a.x, a.mass)?)?
                }
                (Ambient::SpaceTime, Some(t)) => mu.with_atom(&a.x, t, a.mass)?,
                (Ambient::Space, Some(_)) => {
                    return Err(Error::Config(
                        "atoms of a spatial measure take no time `t`".into(),
                    ))
                }
                (Ambient::SpaceTime, None) => {
                    return Err(Error::Config(
                        "atoms of a space-time measure need a time `t`".into(),
                    ))
                }
            };
        }
        if let Some(d) = &self.density {
            let path = base.join(d);
            let raw = read_grid(&path)?;
            let want = match ambient {
                Ambient::Space => Layout::Space,
                Ambient::SpaceTime => Layout::SpaceTime,
            };
            if raw.layout != want {
                return Err(Error::format(
                    &path,
                    format!("expected a {want:?} grid, found {:?}", raw.layout),
                ));
            }
            let (steps, cells) = match want {
                Layout::Space => (1, raw.shape.clone()),
                Layout::SpaceTime => (raw.shape[0], raw.shape[1..].to_vec()),
            };
            if cells.len() != domain.dim() {
                return Err(Error::format(
                    &path,
                    format!(
                        "{} spatial axes for a {}-dimensional domain",
                        cells.len(),
                        domain.dim()
                    ),
                ));
            }
            let lattice = Lattice::new(domain.clone(), GridSpec::new(cells, steps)?)?;
            mu = mu.with_density(raw.into_field(lattice)?)?;
        }
        for p in &self.product {
            if ambient != Ambient::SpaceTime {
                return Err(Error::Config(
                    "product parts belong to space-time measures".into(),
                ));
            }
            let omega = p.omega.build(domain, Ambient::Space, base)?;
            mu = mu.with_product(omega, p.profile.clone())?;
        }
        Ok(mu)
    }
}

fn parent_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridField;
    use crate::gridfile::write_grid;

    fn square() -> BoxDomain {
        BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn atoms_products_and_density() {
        let dir = tempfile::tempdir().unwrap();
        let lat = Lattice::new(square(), GridSpec::uniform(2, 4, 2).unwrap()).unwrap();
        write_grid(
            dir.path().join("f.grid"),
            &GridField::from_fn_space_time(lat, |_, _| 2.0),
        )
        .unwrap();
        let text = r#"
            atoms = [{ x = [0.5, 0.5], t = 0.25, mass = -1.5 }]
            density = "f.grid"
            [[product]]
            F = [1.0, 3.0]
            omega = { atoms = [{ x = [0.2, 0.2], mass = 2.0 }] }
        "#;
        let desc = MeasureDescription::parse(text, Path::new("m.toml")).unwrap();
        let mu = desc
            .build(&square(), Ambient::SpaceTime, dir.path())
            .unwrap();
        // |atom| + density (2 on the unit cylinder) + 2·∫F = 1.5 + 2 + 2·2.
        assert!(
            (mu.total_variation() - 7.5).abs() < 1e-12,
            "{}",
            mu.total_variation()
        );
        assert_eq!(
            desc.referenced_files(dir.path()).unwrap(),
            vec![dir.path().join("f.grid")]
        );
        let back: MeasureDescription = toml::from_str(&toml::to_string(&desc).unwrap()).unwrap();
        assert_eq!(back, desc);
    }

    #[test]
    fn file_indirection_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("s.toml"),
            "atoms = [{ x = [0.5, 0.5], mass = 1.0 }]",
        )
        .unwrap();
        let desc = MeasureDescription::parse("file = \"s.toml\"", Path::new("x")).unwrap();
        let sigma = desc.build(&square(), Ambient::Space, dir.path()).unwrap();
        assert_eq!(sigma.total_variation(), 1.0);
        assert!(desc
            .build(&square(), Ambient::SpaceTime, dir.path())
            .is_err());
        assert!(matches!(
            MeasureDescription::parse("atom = []", Path::new("x")),
            Err(Error::Format { .. })
        ));
        let missing = MeasureDescription::parse("density = \"nope.grid\"", Path::new("x")).unwrap();
        assert!(matches!(
            missing.build(&square(), Ambient::Space, dir.path()),
            Err(Error::Io { .. })
        ));
        assert!(MeasureDescription::default()
            .build(&square(), Ambient::Space, dir.path())
            .unwrap()
            .is_zero());
    }
}
