use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Contact locations and the reaction force measured at the fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactObservation {
    /// Contact locations in normalized units.
    pub q: PointCloud,
    /// Indices of `q` in the nominal cloud, when known.
    pub q_indices: Vec<usize>,
    /// Reaction force in Newtons.
    pub u: Vec3,
}

impl ContactObservation {
    pub fn new(q: PointCloud, u: Vec3) -> Result<Self> {
        if u.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite reaction force".into()));
        }
        Ok(ContactObservation {
            q,
            q_indices: Vec::new(),
            u,
        })
    }

    /// Builds the observation from indices into a nominal cloud.
    pub fn from_indices(nominal: &PointCloud, q_indices: Vec<usize>, u: Vec3) -> Result<Self> {
        if let Some(&i) = q_indices.iter().find(|&&i| i >= nominal.len()) {
            return Err(Error::InvalidInput(format!(
                "contact index {i} outside nominal cloud of {}",
                nominal.len()
            )));
        }
        let mut q = PointCloud::new(q_indices.iter().map(|&i| nominal.points[i]).collect())?;
        q.frame_scale = nominal.frame_scale;
        let mut obs = Self::new(q, u)?;
        obs.q_indices = q_indices;
        Ok(obs)
    }
}

/// Serialized form stored as `contacts.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactFile {
    pub q_indices: Vec<usize>,
    /// Reaction force, Newtons.
    pub u: [f64; 3],
    /// Applied load point in normalized units.
    pub load_point: [f64; 3],
    /// Applied load point in meters (tool frame).
    pub load_point_m: [f64; 3],
    /// Applied load, Newtons.
    pub load_vector: [f64; 3],
    pub contact_radius: f64,
}
