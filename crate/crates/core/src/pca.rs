//! Truncated PCA of a prior ensemble: `m = U_l Σ_l ξ + m̄`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geomodel::{Ensemble, GridModel, ModelKind};
use crate::linalg::{gemm, MatRef};
use crate::nnw::NamedTensors;
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Anything that can draw a model from a seed; lets calibration swap PCA for other generators.
pub trait ModelSampler: Sync {
    fn extents(&self) -> (usize, usize);
    fn draw(&self, seed: u64) -> GridModel;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    mean: GridModel,
    /// `N_c x l`, row-major.
    u: Vec<f64>,
    sigma: Vec<f64>,
    spectrum: Vec<f64>,
    n_r: usize,
}

/// Flips a column so its entry of largest magnitude is positive.
fn fix_sign(col: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two passes of modified Gram-Schmidt over column-major columns.
fn reorthonormalize(cols: &mut [Vec<f64>]) {
    for _pass in 0..2 {
        for k in 0..cols.len() {
            let (done, rest) = cols.split_at_mut(k);
            let c = &mut rest[0];
            for q in done.iter() {
                let p = dot(q, c);
                c.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
            let n = dot(c, c).sqrt();
            c.iter_mut().for_each(|x| *x /= n);
        }
    }
}

impl PcaBasis {
    /// Thin SVD of the centered, `1/√(N_r−1)`-scaled ensemble matrix, truncated to `l` columns.
    pub fn build(ens: &Ensemble, l: usize) -> Result<Self> {
        let n_r = ens.len();
        if n_r < 2 {
            return Err(Error::invalid("PCA needs at least two models"));
        }
        let (nx, ny) = (ens.nx(), ens.ny());
        let n_c = nx * ny;
        let max_l = n_c.min(n_r - 1);
        if l == 0 || l > max_l {
            return Err(Error::invalid(format!("l = {l} outside [1, {max_l}] for {n_r} models of {n_c} cells")));
        }
        let mut mean = vec![0.0; n_c];
        for m in ens.models() {
            mean.iter_mut().zip(m.values()).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|v| *v /= n_r as f64);
        // Y stored N_c x N_r row-major
        let scale = 1.0 / ((n_r - 1) as f64).sqrt();
        let mut y = vec![0.0; n_c * n_r];
        for (r, m) in ens.models().iter().enumerate() {
            for (c, (&v, &mu)) in m.values().iter().zip(&mean).enumerate() {
                y[c * n_r + r] = (v - mu) * scale;
            }
        }
        let k = n_c.min(n_r);
        let (eigvals, cols): (Vec<f64>, Vec<Vec<f64>>) = if n_r <= n_c {
            let mut g = vec![0.0; n_r * n_r];
            gemm(n_r, n_c, n_r, 1.0, MatRef::transposed(&y, n_r), MatRef::rows(&y, n_r), 0.0, &mut g);
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(n_r, n_r, &g));
            let mut order: Vec<usize> = (0..n_r).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let mut cols = Vec::new();
            for &i in order.iter().take(l) {
                let s = eig.eigenvalues[i].max(0.0).sqrt();
                let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let mut u = vec![0.0; n_c];
                gemm(n_c, n_r, 1, 1.0 / s, MatRef::rows(&y, n_r), MatRef::rows(&v, 1), 0.0, &mut u);
                cols.push(u);
            }
            (vals, cols)
        } else {
            let mut c = vec![0.0; n_c * n_c];
            gemm(n_c, n_r, n_c, 1.0, MatRef::rows(&y, n_r), MatRef::transposed(&y, n_r), 0.0, &mut c);
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(n_c, n_c, &c));
            let mut order: Vec<usize> = (0..n_c).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let cols = order
                .iter()
                .take(l)
                .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
                .collect();
            (vals, cols)
        };
        let lam1 = eigvals[0];
        if !(lam1 > 0.0) {
            return Err(Error::Degenerate("all models identical: zero spectrum".into()));
        }
        let tol = lam1 * (n_r.max(n_c) as f64) * f64::EPSILON * 64.0;
        let spectrum: Vec<f64> = eigvals[..k].iter().map(|&v| if v > tol { v.sqrt() } else { 0.0 }).collect();
        let rank = spectrum.iter().take_while(|&&s| s > 0.0).count();
        if l > rank {
            return Err(Error::invalid(format!("l = {l} exceeds the numerical rank {rank} of the ensemble")));
        }
        let mut cols = cols;
        reorthonormalize(&mut cols);
        cols.iter_mut().for_each(|c| fix_sign(c));
        let mut u = vec![0.0; n_c * l];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                u[i * l + j] = v;
            }
        }
        Ok(PcaBasis {
            mean: GridModel::new(nx, ny, mean, ModelKind::Continuous)?,
            u,
            sigma: spectrum[..l].to_vec(),
            spectrum,
            n_r,
        })
    }

    /// Assembles a basis from explicit factors; columns must be orthonormal within `1e-6`.
    pub fn from_parts(mean: GridModel, u: Vec<f64>, sigma: Vec<f64>, spectrum: Vec<f64>, n_r: usize) -> Result<Self> {
        let l = sigma.len();
        let n_c = mean.n_cells();
        if l == 0 || u.len() != n_c * l {
            return Err(Error::shape("pca basis", format!("U has {} values for {n_c} cells and l = {l}", u.len())));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("singular values must be finite, nonnegative and nonincreasing"));
        }
        let b = PcaBasis {
            mean: GridModel::new(mean.nx(), mean.ny(), mean.values().to_vec(), ModelKind::Continuous)?,
            u,
            sigma,
            spectrum,
            n_r,
        };
        let dev = b.orthonormality_error();
        if dev > 1e-6 {
            return Err(Error::invalid(format!("basis columns are not orthonormal (max deviation {dev:e})")));
        }
        Ok(b)
    }

    pub fn l(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn nx(&self) -> usize {
        self.mean.nx()
    }

    pub fn ny(&self) -> usize {
        self.mean.ny()
    }

    pub fn n_cells(&self) -> usize {
        self.mean.n_cells()
    }

    pub fn mean(&self) -> &GridModel {
        &self.mean
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Entry `(cell, k)` of `U_l`.
    pub fn u(&self, cell: usize, k: usize) -> f64 {
        self.u[cell * self.l() + k]
    }

    /// Max elementwise deviation of `U_lᵀU_l` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let l = self.l();
        let mut g = vec![0.0; l * l];
        gemm(l, self.n_cells(), l, 1.0, MatRef::transposed(&self.u, l), MatRef::rows(&self.u, l), 0.0, &mut g);
        let mut worst: f64 = 0.0;
        for i in 0..l {
            for j in 0..l {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[i * l + j] - want).abs());
            }
        }
        worst
    }

    fn check_latent(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.l() {
            return Err(Error::shape("pca sample", format!("latent vector has length {}, basis has l = {}", xi.len(), self.l())));
        }
        Ok(())
    }

    /// `m = U_l Σ_l ξ + m̄` as a continuous model.
    pub fn sample(&self, xi: &[f64]) -> Result<GridModel> {
        self.check_latent(xi)?;
        let scaled: Vec<f64> = xi.iter().zip(&self.sigma).map(|(x, s)| x * s).collect();
        let mut out = self.mean.values().to_vec();
        gemm(self.n_cells(), self.l(), 1, 1.0, MatRef::rows(&self.u, self.l()), MatRef::rows(&scaled, 1), 1.0, &mut out);
        GridModel::new(self.nx(), self.ny(), out, ModelKind::Continuous)
    }

    /// Draws `ξ ~ N(0, I)` from `seed`.
    pub fn standard_latent(&self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..self.l()).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// `ξ = Σ_l⁻¹ U_lᵀ (m − m̄)`; components with zero singular value are set to 0.
    pub fn project(&self, m: &GridModel) -> Result<Vec<f64>> {
        if !m.same_extents(&self.mean) {
            return Err(Error::shape("pca project", "model extents differ from basis"));
        }
        let d: Vec<f64> = m.values().iter().zip(self.mean.values()).map(|(a, b)| a - b).collect();
        let mut c = self.latent_pullback(&d)?;
        for (ci, s) in c.iter_mut().zip(&self.sigma) {
            *ci = if *s > 0.0 { *ci / (s * s) } else { 0.0 };
        }
        Ok(c)
    }

    /// Chain rule through the sampler: `Σ_l U_lᵀ g` for a gradient `g` with respect to the model.
    pub fn latent_pullback(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.n_cells() {
            return Err(Error::shape("pca pullback", "gradient length differs from cell count"));
        }
        let l = self.l();
        let mut out = vec![0.0; l];
        gemm(l, self.n_cells(), 1, 1.0, MatRef::transposed(&self.u, l), MatRef::rows(g, 1), 0.0, &mut out);
        out.iter_mut().zip(&self.sigma).for_each(|(o, s)| *o *= s);
        Ok(out)
    }

    /// `Σ_{i≤l'} σ_i² / Σ_i σ_i²` over the full spectrum.
    pub fn energy_fraction(&self, l_prime: usize) -> Result<f64> {
        if l_prime > self.spectrum.len() {
            return Err(Error::invalid(format!("l' = {l_prime} exceeds spectrum length {}", self.spectrum.len())));
        }
        let total: f64 = self.spectrum.iter().map(|s| s * s).sum();
        let part: f64 = self.spectrum[..l_prime].iter().map(|s| s * s).sum();
        Ok(if total > 0.0 { part / total } else { 0.0 })
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut nt = NamedTensors::new();
        nt.push("mean", Tensor::new(vec![self.ny(), self.nx()], self.mean.values().to_vec()).unwrap());
        nt.push("U_l", Tensor::new(vec![self.n_cells(), self.l()], self.u.clone()).unwrap());
        nt.push("Sigma_l", Tensor::new(vec![self.l()], self.sigma.clone()).unwrap());
        nt.push("spectrum", Tensor::new(vec![self.spectrum.len()], self.spectrum.clone()).unwrap());
        nt.push("n_r", Tensor::scalar(self.n_r as f64));
        nt
    }

    pub fn from_named(nt: &NamedTensors) -> Result<Self> {
        let mean = nt.get("mean").ok_or_else(|| Error::format("NNW1", "missing tensor `mean`"))?;
        let [ny, nx] = *mean.shape() else {
            return Err(Error::format("NNW1", "`mean` must be rank 2"));
        };
        let sigma = nt.get("Sigma_l").ok_or_else(|| Error::format("NNW1", "missing tensor `Sigma_l`"))?;
        let l = sigma.len();
        let u = nt.expect("U_l", &[nx * ny, l])?;
        let spectrum = nt.get("spectrum").map(|t| t.data().to_vec()).unwrap_or_else(|| sigma.data().to_vec());
        let n_r = nt.get("n_r").map(|t| t.data()[0] as usize).unwrap_or(spectrum.len() + 1);
        let mean = GridModel::new(nx, ny, mean.data().to_vec(), ModelKind::Continuous)?;
        Self::from_parts(mean, u.data().to_vec(), sigma.data().to_vec(), spectrum, n_r)
            .map_err(|e| Error::format("NNW1", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_named().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_named(&NamedTensors::load(path)?)
    }
}

impl ModelSampler for PcaBasis {
    fn extents(&self) -> (usize, usize) {
        (self.nx(), self.ny())
    }

    fn draw(&self, seed: u64) -> GridModel {
        self.sample(&self.standard_latent(seed)).expect("latent length matches basis")
    }
}
