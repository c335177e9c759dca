//! JSON description of a star model.
//!
//! The document stores the warp, the radial function (a constant or a list of
//! ellipsoid branches with their temperatures), an optional cached log
//! normalizer, and the path of the base flow checkpoint relative to the
//! document. A missing checkpoint means an identity base flow.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffeo::{Diffeo, Identity, Vector};
use crate::ellipsoid::{BranchRadial, Ellipsoid, StarRadial};
use crate::error::{Error, Result};
use crate::flow::{load_checkpoint, CouplingFlow};
use crate::star::{ConstantRadial, RadialFn, StarModel, Warp};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal axes, one inner vector per axis.
    pub frame: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

impl From<&Ellipsoid> for EllipsoidSpec {
    fn from(e: &Ellipsoid) -> Self {
        Self {
            eigenvalues: e.eigenvalues().iter().copied().collect(),
            frame: e.frame().column_iter().map(|c| c.iter().copied().collect()).collect(),
            center: e.center().iter().copied().collect(),
        }
    }
}

impl EllipsoidSpec {
    pub fn build(&self) -> Result<Ellipsoid> {
        let d = self.center.len();
        if self.frame.len() != d || self.frame.iter().any(|c| c.len() != d) {
            return Err(Error::invalid("ellipsoid frame must be d columns of length d"));
        }
        let frame = DMatrix::from_fn(d, d, |i, j| self.frame[j][i]);
        Ellipsoid::new(
            frame,
            DVector::from_column_slice(&self.eigenvalues),
            Vector::from_column_slice(&self.center),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub t_min: f64,
    pub offcentered: EllipsoidSpec,
    pub centered: EllipsoidSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialSpec {
    Constant { value: f64 },
    Star { t_max: f64, branches: Vec<BranchSpec> },
}

impl RadialSpec {
    pub fn from_star(star: &StarRadial) -> Self {
        RadialSpec::Star {
            t_max: star.temperature(),
            branches: star
                .branches()
                .iter()
                .map(|b| BranchSpec {
                    t_min: b.temperature(),
                    offcentered: b.offcentered().into(),
                    centered: b.centered().into(),
                })
                .collect(),
        }
    }

    pub fn build_star(&self) -> Result<Option<StarRadial>> {
        match self {
            RadialSpec::Constant { .. } => Ok(None),
            RadialSpec::Star { t_max, branches } => {
                let branches = branches
                    .iter()
                    .map(|b| BranchRadial::new(b.offcentered.build()?, b.centered.build()?, b.t_min))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(StarRadial::new(branches, *t_max)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub dim: usize,
    pub warp: Warp,
    pub radial: RadialSpec,
    /// Base flow checkpoint relative to the document; `None` for an identity base.
    pub flow_checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_normalizer: Option<f64>,
}

/// A model document together with the objects it describes.
#[derive(Clone)]
pub struct LoadedModel {
    pub document: ModelDocument,
    pub model: StarModel,
    pub flow: Option<CouplingFlow>,
    pub star: Option<StarRadial>,
    pub path: PathBuf,
}

impl ModelDocument {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc: ModelDocument = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if doc.version != MODEL_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported model version {}, expected {MODEL_VERSION}", doc.version),
            ));
        }
        Ok(doc)
    }

    /// Builds the model; `base_dir` resolves the checkpoint path.
    pub fn instantiate(&self, base_dir: &Path) -> Result<(StarModel, Option<CouplingFlow>, Option<StarRadial>)> {
        let flow = match &self.flow_checkpoint {
            Some(rel) => Some(load_checkpoint(base_dir.join(rel))?),
            None => None,
        };
        let base: Arc<dyn Diffeo> = match &flow {
            Some(f) => Arc::new(f.clone()),
            None => Arc::new(Identity::new(self.dim)),
        };
        let star = self.radial.build_star()?;
        let rho: Arc<dyn RadialFn> = match (&self.radial, &star) {
            (RadialSpec::Constant { value }, _) => {
                if !(*value > 0.0 && value.is_finite()) {
                    return Err(Error::invalid("constant radial value must be positive"));
                }
                Arc::new(ConstantRadial::new(self.dim, *value))
            }
            (_, Some(s)) => Arc::new(s.clone()),
            (_, None) => unreachable!("star radial spec always builds a star radial"),
        };
        let mut model = StarModel::new(base, rho, self.warp)?;
        if let Some(z) = self.log_normalizer {
            model = model.with_log_normalizer(z);
        }
        Ok((model, flow, star))
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let document = ModelDocument::read(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let (model, flow, star) = document.instantiate(dir)?;
    Ok(LoadedModel {
        document,
        model,
        flow,
        star,
        path: path.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn ellipsoid_spec_round_trip() {
        let e = Ellipsoid::new(
            DMatrix::from_column_slice(2, 2, &[0.6, 0.8, -0.8, 0.6]),
            dvector![3.0, 0.5],
            dvector![0.4, 0.1],
        )
        .unwrap();
        let spec = EllipsoidSpec::from(&e);
        let json = serde_json::to_string(&spec).unwrap();
        let back: EllipsoidSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap(), e);
    }

    #[test]
    fn document_round_trip_with_identity_base() {
        let dir = tempfile::tempdir().unwrap();
        let doc = ModelDocument {
            version: MODEL_VERSION,
            dim: 2,
            warp: Warp::Log { a: 10.0 },
            radial: RadialSpec::Constant { value: 1.0 },
            flow_checkpoint: None,
            log_normalizer: Some((2.0 * std::f64::consts::PI).ln()),
        };
        let p = dir.path().join("model.json");
        doc.save(&p).unwrap();
        let loaded = load_model(&p).unwrap();
        assert_eq!(loaded.document, doc);
        let lp = loaded.model.log_density(&Vector::zeros(2)).unwrap();
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        fs::write(
            &p,
            r#"{"version":7,"dim":2,"warp":{"kind":"identity"},"radial":{"kind":"constant","value":1.0},"flow_checkpoint":null}"#,
        )
        .unwrap();
        assert!(ModelDocument::read(&p).is_err());
    }
}
