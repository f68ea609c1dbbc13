//! Grid models, hard data, facies-to-property mapping and ensembles.

mod fixture;
mod io;

pub use fixture::{gen_fixture_ensemble, gen_synthetic_channels, ChannelParams};
pub use io::{read_hard_data, write_hard_data};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Facies indicator with values in `[0, 1]` (1 = sand).
    Binary,
    /// Unconstrained values: PCA output or log-permeability.
    Continuous,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Binary => 0,
            ModelKind::Continuous => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ModelKind::Binary),
            1 => Some(ModelKind::Continuous),
            _ => None,
        }
    }
}

/// A 2D scalar field on an `nx x ny` grid, stored row-major with cell index `j·nx + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridModel {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    kind: ModelKind,
}

impl GridModel {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>, kind: ModelKind) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid(format!("grid extents must be positive, got {nx}x{ny}")));
        }
        if values.len() != nx * ny {
            return Err(Error::shape(
                "grid model",
                format!("{nx}x{ny} grid needs {} values, got {}", nx * ny, values.len()),
            ));
        }
        if kind == ModelKind::Binary && values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("binary model values must lie in [0, 1]"));
        }
        Ok(GridModel { nx, ny, values, kind })
    }

    pub fn filled(nx: usize, ny: usize, value: f64, kind: ModelKind) -> Result<Self> {
        Self::new(nx, ny, vec![value; nx * ny], kind)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn same_extents(&self, other: &GridModel) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    /// Values `>= cutoff` become 1 (sand), the rest 0.
    pub fn hard_threshold(&self, cutoff: f64) -> GridModel {
        GridModel {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| if v >= cutoff { 1.0 } else { 0.0 }).collect(),
            kind: ModelKind::Binary,
        }
    }

    /// `[ny, nx, 1]` feature map.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.ny, self.nx, 1], self.values.clone()).expect("extents are positive")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for any tensor with `ny·nx` elements.
    pub fn from_tensor(t: &Tensor, nx: usize, ny: usize, kind: ModelKind) -> Result<Self> {
        Self::new(nx, ny, t.data().to_vec(), kind)
    }
}

/// Hard data: exact cell values at well locations.
#[derive(Clone, Debug, PartialEq)]
pub struct HardData {
    n_cells: usize,
    entries: Vec<(usize, f64)>,
}

impl HardData {
    pub fn new(n_cells: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(idx, v) in &entries {
            if idx >= n_cells {
                return Err(Error::invalid(format!("hard-data cell {idx} outside [0, {n_cells})")));
            }
            if !seen.insert(idx) {
                return Err(Error::invalid(format!("duplicate hard-data cell {idx}")));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("hard-data value at cell {idx} is not finite")));
            }
        }
        Ok(HardData { n_cells, entries })
    }

    /// Builds from `(i, j, value)` well locations on an `nx x ny` grid.
    pub fn from_wells(nx: usize, ny: usize, wells: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(wells.len());
        for &(i, j, v) in wells {
            if i >= nx || j >= ny {
                return Err(Error::invalid(format!("well ({i}, {j}) outside {nx}x{ny} grid")));
            }
            entries.push((j * nx + i, v));
        }
        Self::new(nx * ny, entries)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Number of hard-data values.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 0/1 indicator vector over all cells.
    pub fn indicator(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.n_cells];
        for &(idx, _) in &self.entries {
            h[idx] = 1.0;
        }
        h
    }

    /// Dense vector holding the hard-data values at their cells and 0 elsewhere.
    pub fn values_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_cells];
        for &(idx, val) in &self.entries {
            v[idx] = val;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardDataReport {
    /// Pass flag per hard-data entry, in entry order.
    pub per_well: Vec<bool>,
    pub pass: bool,
}

pub fn check_hard_data(m: &GridModel, hd: &HardData, tol: f64) -> Result<HardDataReport> {
    if hd.n_cells != m.n_cells() {
        return Err(Error::shape(
            "check_hard_data",
            format!("hard data for {} cells, model has {}", hd.n_cells, m.n_cells()),
        ));
    }
    let per_well: Vec<bool> = hd.entries.iter().map(|&(idx, v)| (m.values[idx] - v).abs() <= tol).collect();
    let pass = per_well.iter().all(|&p| p);
    Ok(HardDataReport { per_well, pass })
}

/// Fraction of models that honor every hard datum.
pub fn honoring_rate<'a>(models: impl IntoIterator<Item = &'a GridModel>, hd: &HardData, tol: f64) -> Result<f64> {
    let (mut ok, mut n) = (0usize, 0usize);
    for m in models {
        n += 1;
        if check_hard_data(m, hd, tol)?.pass {
            ok += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("honoring rate of an empty model set"));
    }
    Ok(ok as f64 / n as f64)
}

/// Facies-to-property mapping: `φ = φ_s·m + φ_m·(1−m)`, `k = a·exp(b·m)` (md).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertyMap {
    pub phi_sand: f64,
    pub phi_mud: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PropertyMap {
    fn default() -> Self {
        PropertyMap {
            phi_sand: 0.25,
            phi_mud: 0.15,
            a: 2.0,
            b: 1000f64.ln(),
        }
    }
}

impl PropertyMap {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.phi_mud && self.phi_mud < self.phi_sand && self.phi_sand < 1.0) {
            return Err(Error::invalid("porosities must satisfy 0 < phi_mud < phi_sand < 1"));
        }
        if self.a <= 0.0 || self.b <= 0.0 || !self.b.is_finite() {
            return Err(Error::invalid("permeability prefactor and exponent must be positive"));
        }
        Ok(())
    }

    fn porosity(&self, m: f64) -> f64 {
        self.phi_sand * m + self.phi_mud * (1.0 - m)
    }

    /// Returns `(porosity, permeability in md)` per cell.
    ///
    /// Binary models are facies indicators. Continuous models carry natural-log
    /// permeability; their porosity uses the facies value implied by inverting
    /// `k = a·exp(b·m)`, clamped to `[0, 1]`.
    pub fn to_properties(&self, m: &GridModel) -> (Vec<f64>, Vec<f64>) {
        match m.kind {
            ModelKind::Binary => {
                let phi = m.values.iter().map(|&v| self.porosity(v)).collect();
                let k = m.values.iter().map(|&v| self.a * (self.b * v).exp()).collect();
                (phi, k)
            }
            ModelKind::Continuous => {
                let phi = m
                    .values
                    .iter()
                    .map(|&lk| self.porosity(((lk - self.a.ln()) / self.b).clamp(0.0, 1.0)))
                    .collect();
                let k = m.values.iter().map(|&lk| lk.exp()).collect();
                (phi, k)
            }
        }
    }
}

/// Non-empty list of models with identical extents and kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    models: Vec<GridModel>,
    provenance: String,
}

impl Ensemble {
    pub fn new(models: Vec<GridModel>, provenance: impl Into<String>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::invalid("ensemble must contain at least one model"))?;
        if let Some(bad) = models.iter().position(|m| !m.same_extents(first) || m.kind != first.kind) {
            return Err(Error::shape(
                "ensemble",
                format!(
                    "model {bad} is {}x{} {:?}, model 0 is {}x{} {:?}",
                    models[bad].nx, models[bad].ny, models[bad].kind, first.nx, first.ny, first.kind
                ),
            ));
        }
        Ok(Ensemble {
            models,
            provenance: provenance.into(),
        })
    }

    pub fn models(&self) -> &[GridModel] {
        &self.models
    }

    pub fn into_models(self) -> Vec<GridModel> {
        self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn nx(&self) -> usize {
        self.models[0].nx
    }

    pub fn ny(&self) -> usize {
        self.models[0].ny
    }

    pub fn kind(&self) -> ModelKind {
        self.models[0].kind
    }
}
