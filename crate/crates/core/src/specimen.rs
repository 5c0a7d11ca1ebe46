//! The notched tension specimen used throughout the workbench.

use serde::{Deserialize, Serialize};

use crate::elasticity::{BoundaryConditions, Material};
use crate::error::Result;
use crate::geometry::{build_rect_mesh, Mesh, Notch};

/// Displacement-controlled loading: `fixed` dofs keep their value, `driven`
/// dofs move proportionally to the loadfactor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrescribedLoad {
    pub fixed: Vec<(usize, f64)>,
    pub driven: Vec<(usize, f64)>,
}

impl PrescribedLoad {
    pub fn at(&self, lf: f64) -> BoundaryConditions {
        let mut bcs = BoundaryConditions::default();
        for &(d, v) in &self.fixed {
            bcs.fix(d, v);
        }
        for &(d, v) in &self.driven {
            bcs.fix(d, lf * v);
        }
        bcs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecimenConfig {
    pub width: f64,
    pub height: f64,
    pub notch: Option<Notch>,
    /// Top-edge vertical displacement at loadfactor 1.
    pub delta_peak: f64,
    pub material: Material,
}

impl Default for SpecimenConfig {
    fn default() -> Self {
        Self {
            width: 1.0,
            height: 1.0,
            notch: Some(Notch {
                x_min: 0.0,
                x_max: 0.3,
                y_min: 0.4,
                y_max: 0.5,
            }),
            delta_peak: 1.65e-4,
            material: Material::default(),
        }
    }
}

impl SpecimenConfig {
    pub fn mesh(&self, nx: usize, ny: usize) -> Result<Mesh> {
        self.material.validate()?;
        build_rect_mesh(self.width, self.height, nx, ny, self.notch)
    }

    /// Uniaxial tension: bottom edge on rollers, bottom-right corner pinned
    /// horizontally, top edge pulled upward.
    pub fn load(&self, mesh: &Mesh) -> Result<PrescribedLoad> {
        let mut load = PrescribedLoad::default();
        for &n in mesh.node_set("bottom")? {
            load.fixed.push((2 * n + 1, 0.0));
        }
        for &n in mesh.node_set("bottom_right")? {
            load.fixed.push((2 * n, 0.0));
        }
        for &n in mesh.node_set("top")? {
            load.driven.push((2 * n + 1, self.delta_peak));
        }
        Ok(load)
    }
}
