//! O-PCA post-processing: the closed-form binary variant and the bimodal
//! variant with its histogram-matching calibration.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geomodel::{Ensemble, GridModel, ModelKind};
use crate::pca::ModelSampler;
use crate::rng::derive_seed;

/// Per-cell minimizer of `(y − x)² + γ·x(1 − x)` over `x ∈ [0, 1]`.
///
/// For `γ < 1` the objective is convex and the stationary point is clamped.
/// For `γ ≥ 1` it is linear or concave, so the minimum sits at an endpoint:
/// 1 when `y ≥ 0.5`, else 0.
pub fn opca_binary_value(y: f64, gamma: f64) -> f64 {
    if gamma < 1.0 {
        ((y - gamma / 2.0) / (1.0 - gamma)).clamp(0.0, 1.0)
    } else if y >= 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn opca_binary(m: &GridModel, gamma: f64) -> Result<GridModel> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("O-PCA weight must be finite and nonnegative, got {gamma}")));
    }
    let v = m.values().iter().map(|&y| opca_binary_value(y, gamma)).collect();
    GridModel::new(m.nx(), m.ny(), v, ModelKind::Binary)
}

/// Bimodal regularization parameters (log-permeability units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BimodalParams {
    pub gamma: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub var1: f64,
    pub var2: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BimodalParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma >= 0.0
            && self.gamma.is_finite()
            && self.lo < self.mu1
            && self.mu1 < self.mu2
            && self.mu2 < self.hi
            && self.var1 > 0.0
            && self.var2 > 0.0
            && self.hi.is_finite()
            && self.lo.is_finite();
        if !ok {
            return Err(Error::invalid(format!("invalid bimodal parameters {self:?}")));
        }
        Ok(())
    }

    /// Per-cell regularizer `1 − N(x; μ1, σ1²) − N(x; μ2, σ2²)`.
    pub fn regularizer(&self, x: f64) -> f64 {
        let g = |mu: f64, var: f64| (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        1.0 - g(self.mu1, self.var1) - g(self.mu2, self.var2)
    }

    pub fn objective(&self, y: f64, x: f64) -> f64 {
        (y - x).powi(2) + self.gamma * self.regularizer(x)
    }
}

pub const BIMODAL_GRID_POINTS: usize = 1000;

/// The bracketing grid used by [`opca_bimodal_value`].
pub fn bimodal_grid(p: &BimodalParams) -> impl Iterator<Item = f64> + '_ {
    let step = (p.hi - p.lo) / (BIMODAL_GRID_POINTS - 1) as f64;
    (0..BIMODAL_GRID_POINTS).map(move |i| if i + 1 == BIMODAL_GRID_POINTS { p.hi } else { p.lo + step * i as f64 })
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Global minimizer over `[lo, hi]` of `(y − x)² + γ·R(x)`: dense grid, then local refinement.
pub fn opca_bimodal_value(y: f64, p: &BimodalParams) -> f64 {
    if p.gamma == 0.0 {
        return y.clamp(p.lo, p.hi);
    }
    let step = (p.hi - p.lo) / (BIMODAL_GRID_POINTS - 1) as f64;
    let (mut bi, mut bf) = (0usize, f64::INFINITY);
    for (i, x) in bimodal_grid(p).enumerate() {
        let f = p.objective(y, x);
        if f < bf {
            bi = i;
            bf = f;
        }
    }
    let mut best = (p.lo + step * bi as f64, bf);
    if bi + 1 == BIMODAL_GRID_POINTS {
        best.0 = p.hi;
    }
    let a = (p.lo + step * bi.saturating_sub(1) as f64).max(p.lo);
    let b = (p.lo + step * (bi + 1) as f64).min(p.hi);
    let refined = golden(|x| p.objective(y, x), a, b);
    if refined.1 < best.1 {
        best = refined;
    }
    let yc = y.clamp(p.lo, p.hi);
    let fy = p.objective(y, yc);
    if fy < best.1 {
        best = (yc, fy);
    }
    best.0
}

pub fn opca_bimodal(m: &GridModel, p: &BimodalParams) -> Result<GridModel> {
    p.validate()?;
    let v = m.values().par_iter().map(|&y| opca_bimodal_value(y, p)).collect();
    GridModel::new(m.nx(), m.ny(), v, ModelKind::Continuous)
}

pub const HISTOGRAM_BINS: usize = 50;

/// Normalized histogram (fractions) of `values` over `HISTOGRAM_BINS` uniform bins on `[lo, hi]`.
pub fn histogram(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; HISTOGRAM_BINS];
    let mut n = 0usize;
    let w = (hi - lo) / HISTOGRAM_BINS as f64;
    for v in values {
        let b = (((v - lo) / w).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1.0;
        n += 1;
    }
    if n > 0 {
        h.iter_mut().for_each(|x| *x /= n as f64);
    }
    h
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub params: BimodalParams,
    /// L2 distance between the probe and target average histograms.
    pub misfit: f64,
    pub evaluations: usize,
    /// False when the simplex had not contracted before the evaluation budget ran out.
    pub converged: bool,
}

/// Fits `(γ, μ1, μ2, σ1², σ2²)` so the average histogram of `n_probe` post-processed
/// sampler draws matches the ensemble's average histogram.
pub fn calibrate_bimodal(ens: &Ensemble, sampler: &dyn ModelSampler, n_probe: usize, seed: u64) -> Result<Calibration> {
    if n_probe == 0 {
        return Err(Error::invalid("calibration needs at least one probe model"));
    }
    if sampler.extents() != (ens.nx(), ens.ny()) {
        return Err(Error::shape("calibrate_bimodal", "sampler and ensemble extents differ"));
    }
    let all = || ens.models().iter().flat_map(|m| m.values().iter().copied());
    let lo = all().fold(f64::INFINITY, f64::min);
    let hi = all().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate("ensemble values are constant".into()));
    }
    let target = histogram(all(), lo, hi);

    let mut probe: Vec<f64> = (0..n_probe)
        .into_par_iter()
        .map(|i| sampler.draw(derive_seed(seed, i as u64)).into_values())
        .flatten()
        .collect();
    probe.sort_by(f64::total_cmp);

    let init = moment_split(&all().collect::<Vec<_>>(), &target, lo, hi);
    let to_params = |z: &[f64]| BimodalParams {
        gamma: z[0].exp(),
        mu1: z[1],
        mu2: z[2],
        var1: z[3].exp(),
        var2: z[4].exp(),
        lo,
        hi,
    };
    let misfit = |z: &[f64]| -> f64 {
        let p = to_params(z);
        if p.validate().is_err() {
            return f64::INFINITY;
        }
        let h = monotone_histogram(&probe, &p);
        h.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let z0 = [init.gamma.ln(), init.mu1, init.mu2, init.var1.ln(), init.var2.ln()];
    let steps = [0.5, 0.1 * (hi - lo), 0.1 * (hi - lo), 0.5, 0.5];
    let res = nelder_mead(misfit, &z0, &steps, 600, 1e-7);
    Ok(Calibration {
        params: to_params(&res.x),
        misfit: res.f,
        evaluations: res.evals,
        converged: res.converged,
    })
}

/// Moment-based starting point: split at the antimode between the two class means of
/// an Otsu threshold and use each side's mean and variance.
fn moment_split(values: &[f64], hist: &[f64], lo: f64, hi: f64) -> BimodalParams {
    let w = (hi - lo) / HISTOGRAM_BINS as f64;
    let center = |b: usize| lo + w * (b as f64 + 0.5);
    let mut best = (f64::INFINITY, HISTOGRAM_BINS / 2);
    for t in 1..HISTOGRAM_BINS {
        let (w0, w1): (f64, f64) = (hist[..t].iter().sum(), hist[t..].iter().sum());
        if w0 <= 0.0 || w1 <= 0.0 {
            continue;
        }
        let m0 = (0..t).map(|b| hist[b] * center(b)).sum::<f64>() / w0;
        let m1 = (t..HISTOGRAM_BINS).map(|b| hist[b] * center(b)).sum::<f64>() / w1;
        let v0 = (0..t).map(|b| hist[b] * (center(b) - m0).powi(2)).sum::<f64>();
        let v1 = (t..HISTOGRAM_BINS).map(|b| hist[b] * (center(b) - m1).powi(2)).sum::<f64>();
        if v0 + v1 < best.0 {
            best = (v0 + v1, t);
        }
    }
    let t = best.1;
    let (w0, w1): (f64, f64) = (hist[..t].iter().sum(), hist[t..].iter().sum());
    let c0 = ((0..t).map(|b| hist[b] * center(b)).sum::<f64>() / w0.max(1e-300) - lo) / w;
    let c1 = ((t..HISTOGRAM_BINS).map(|b| hist[b] * center(b)).sum::<f64>() / w1.max(1e-300) - lo) / w;
    let (b0, b1) = ((c0 as usize).min(HISTOGRAM_BINS - 1), (c1 as usize).min(HISTOGRAM_BINS - 1));
    let smooth = |b: usize| {
        let a = b.saturating_sub(1);
        let c = (b + 1).min(HISTOGRAM_BINS - 1);
        (hist[a] + hist[b] + hist[c]) / 3.0
    };
    let anti = (b0..=b1.max(b0)).min_by(|&a, &b| smooth(a).total_cmp(&smooth(b))).unwrap_or(t);
    let split = lo + w * anti as f64 + w / 2.0;
    let stats = |it: &mut dyn Iterator<Item = f64>| {
        let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
        for v in it {
            n += 1.0;
            s += v;
            s2 += v * v;
        }
        let m = if n > 0.0 { s / n } else { split };
        let var = if n > 1.0 { (s2 / n - m * m).max(0.0) } else { 0.0 };
        (m, var.max(1e-4 * (hi - lo).powi(2)))
    };
    let (mu1, var1) = stats(&mut values.iter().copied().filter(|&v| v < split));
    let (mu2, var2) = stats(&mut values.iter().copied().filter(|&v| v >= split));
    let eps = 1e-3 * (hi - lo);
    let mu1 = mu1.clamp(lo + eps, hi - 2.0 * eps);
    let mu2 = mu2.clamp(mu1 + eps, hi - eps);
    BimodalParams {
        gamma: 10.0,
        mu1,
        mu2,
        var1,
        var2,
        lo,
        hi,
    }
}

/// Histogram of post-processed `sorted` values without solving every cell.
///
/// The per-cell minimizer is `argmin_x φ(x) − 2xy` with `φ(x) = x² + γR(x)`, so it
/// walks the vertices of the lower convex hull of `φ` as `y` grows. Each bin edge
/// therefore corresponds to a threshold in `y` given by a hull slope.
fn monotone_histogram(sorted: &[f64], p: &BimodalParams) -> Vec<f64> {
    const FINE: usize = 20_001;
    let n = sorted.len();
    let step = (p.hi - p.lo) / (FINE - 1) as f64;
    let xs: Vec<f64> = (0..FINE).map(|i| p.lo + step * i as f64).collect();
    let phi: Vec<f64> = xs.iter().map(|&x| x * x + p.gamma * p.regularizer(x)).collect();
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..FINE {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a..i
            if (phi[b] - phi[a]) * (xs[i] - xs[a]) >= (phi[i] - phi[a]) * (xs[b] - xs[a]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let w = (p.hi - p.lo) / HISTOGRAM_BINS as f64;
    let mut below = vec![0usize; HISTOGRAM_BINS + 1];
    below[HISTOGRAM_BINS] = n;
    for (b, slot) in below.iter_mut().enumerate().take(HISTOGRAM_BINS).skip(1) {
        let edge = p.lo + w * b as f64;
        let k = hull.partition_point(|&h| xs[h] < edge).max(1);
        let threshold = if k >= hull.len() {
            f64::INFINITY
        } else {
            let (h0, h1) = (hull[k - 1], hull[k]);
            (phi[h1] - phi[h0]) / (xs[h1] - xs[h0]) / 2.0
        };
        *slot = sorted.partition_point(|&y| y < threshold);
    }
    for b in 1..=HISTOGRAM_BINS {
        below[b] = below[b].max(below[b - 1]);
    }
    (0..HISTOGRAM_BINS).map(|b| (below[b + 1] - below[b]) as f64 / n as f64).collect()
}

pub(crate) struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Standard Nelder–Mead (reflection 1, expansion 2, contraction ½, shrink ½).
pub(crate) fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], steps: &[f64], max_evals: usize, ftol: f64) -> NmResult {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = n + 1;
    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fb, fw) = (simplex[0].1, simplex[n].1);
        if fw.is_finite() && (fw - fb).abs() <= ftol * (fb.abs() + 1e-12) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|s| s.0[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = s.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    s.1 = f(&x);
                    s.0 = x;
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NmResult {
        x,
        f: fx,
        evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn binary_objective(y: f64, x: f64, g: f64) -> f64 {
        (y - x).powi(2) + g * x * (1.0 - x)
    }

    fn paper_params() -> BimodalParams {
        BimodalParams {
            gamma: 15.3,
            mu1: 3.0,
            mu2: 8.3,
            var1: 4.1,
            var2: 1.6,
            lo: 0.0,
            hi: 10.0,
        }
    }

    #[test]
    fn binary_examples() {
        assert!((opca_binary_value(0.5, 0.8) - 0.5).abs() < 1e-15);
        assert!((opca_binary_value(0.45, 0.8) - 0.25).abs() < 1e-12);
        assert_eq!(opca_binary_value(0.9, 0.8), 1.0);
        assert_eq!(opca_binary_value(0.37, 0.0), 0.37);
        assert_eq!(opca_binary_value(-0.2, 0.0), 0.0);
        assert_eq!(opca_binary_value(0.5, 1.0), 1.0);
        assert_eq!(opca_binary_value(0.49, 1.5), 0.0);
    }

    #[test]
    fn binary_matches_grid_oracle() {
        let mut rng = seeded(99);
        for _ in 0..1000 {
            let y: f64 = rng.random_range(-0.5..1.5);
            let g: f64 = rng.random_range(0.0..2.0);
            let x = opca_binary_value(y, g);
            let brute = (0..10_000)
                .map(|i| i as f64 / 9999.0)
                .map(|xg| binary_objective(y, xg, g))
                .fold(f64::INFINITY, f64::min);
            assert!((binary_objective(y, x, g) - brute).abs() <= 1e-6, "y={y} g={g}");
            assert!(binary_objective(y, x, g) <= brute + 1e-15);
        }
    }

    #[test]
    fn binary_preserves_hard_values() {
        for g in [0.0, 0.3, 0.8, 0.99] {
            assert_eq!(opca_binary_value(0.0, g), 0.0);
            assert_eq!(opca_binary_value(1.0, g), 1.0);
        }
    }

    #[test]
    fn binary_model_has_binary_kind() {
        let m = GridModel::new(3, 1, vec![-1.0, 0.45, 2.0], ModelKind::Continuous).unwrap();
        let o = opca_binary(&m, 0.8).unwrap();
        assert_eq!(o.kind(), ModelKind::Binary);
        assert!(opca_binary(&m, -0.1).is_err());
    }

    #[test]
    fn bimodal_zero_gamma_is_projection() {
        let mut p = paper_params();
        p.gamma = 0.0;
        assert_eq!(opca_bimodal_value(4.2, &p), 4.2);
        assert_eq!(opca_bimodal_value(-3.0, &p), 0.0);
        assert_eq!(opca_bimodal_value(13.0, &p), 10.0);
    }

    #[test]
    fn bimodal_mode_center_stays_put() {
        let p = paper_params();
        let x = opca_bimodal_value(p.mu1, &p);
        assert!((x - p.mu1).abs() < 0.25 * p.var1.sqrt(), "moved to {x}");
        let x = opca_bimodal_value(p.mu2, &p);
        assert!((x - p.mu2).abs() < 0.25 * p.var2.sqrt(), "moved to {x}");
    }

    #[test]
    fn paper_calibration_points_are_valid() {
        paper_params().validate().unwrap();
        BimodalParams {
            gamma: 14.6,
            mu1: 2.8,
            mu2: 8.1,
            var1: 3.1,
            var2: 1.3,
            lo: 0.0,
            hi: 10.0,
        }
        .validate()
        .unwrap();
        let mut bad = paper_params();
        bad.mu2 = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bimodal_beats_its_grid() {
        let p = paper_params();
        let mut rng = seeded(4);
        for _ in 0..200 {
            let y: f64 = rng.random_range(-2.0..12.0);
            let x = opca_bimodal_value(y, &p);
            assert!((p.lo..=p.hi).contains(&x));
            let fx = p.objective(y, x);
            for g in bimodal_grid(&p) {
                assert!(fx <= p.objective(y, g));
            }
            assert!(fx <= p.objective(y, y.clamp(p.lo, p.hi)));
        }
    }

    #[test]
    fn histogram_counts() {
        let h = histogram([0.0, 0.0, 1.0, 0.99], 0.0, 1.0);
        assert_eq!(h[0], 0.5);
        assert_eq!(h[HISTOGRAM_BINS - 1], 0.5);
    }

    #[test]
    fn monotone_histogram_matches_direct_histogram() {
        let p = paper_params();
        let mut rng = seeded(8);
        let mut ys: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..11.0)).collect();
        ys.sort_by(f64::total_cmp);
        let fast = monotone_histogram(&ys, &p);
        let direct = histogram(ys.iter().map(|&y| opca_bimodal_value(y, &p)), p.lo, p.hi);
        let l1: f64 = fast.iter().zip(&direct).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 2.0 / 3000.0 * 4.0, "L1 difference {l1}");
    }

    #[test]
    fn nelder_mead_minimizes_quadratic() {
        let r = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0], &[0.5, 0.5], 2000, 1e-14);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] + 2.0).abs() < 1e-4);
    }

    fn mixture_model(n: usize, seed: u64) -> GridModel {
        let mut rng = seeded(seed);
        let a = Normal::new(3.0, 0.25).unwrap();
        let b = Normal::new(8.0, 0.25).unwrap();
        let v = (0..n * n)
            .map(|_| if rng.random_bool(0.6) { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect();
        GridModel::new(n, n, v, ModelKind::Continuous).unwrap()
    }

    /// Identity basis: every cell is an independent Gaussian with the pooled mean and spread.
    fn identity_basis(ens: &Ensemble) -> crate::pca::PcaBasis {
        let n = ens.nx() * ens.ny();
        let vals: Vec<f64> = ens.models().iter().flat_map(|m| m.values().iter().copied()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        let mut u = vec![0.0; n * n];
        (0..n).for_each(|i| u[i * n + i] = 1.0);
        let m = GridModel::filled(ens.nx(), ens.ny(), mean, ModelKind::Continuous).unwrap();
        crate::pca::PcaBasis::from_parts(m, u, vec![sd; n], vec![sd; n], ens.len()).unwrap()
    }

    #[test]
    fn calibration_recovers_mixture_centers() {
        let ens = Ensemble::new((0..20).map(|s| mixture_model(20, 1000 + s)).collect(), "mixture").unwrap();
        let sampler = identity_basis(&ens);
        let cal = calibrate_bimodal(&ens, &sampler, 20, 3).unwrap();
        assert!((cal.params.mu1 - 3.0).abs() <= 0.2, "{:?}", cal.params);
        assert!((cal.params.mu2 - 8.0).abs() <= 0.2, "{:?}", cal.params);
        let again = calibrate_bimodal(&ens, &sampler, 20, 3).unwrap();
        assert_eq!(again.params, cal.params);
        assert!(calibrate_bimodal(&ens, &sampler, 0, 3).is_err());
    }

    proptest! {
        #[test]
        fn binary_output_in_unit_interval(y in -5.0f64..5.0, g in 0.0f64..3.0) {
            let x = opca_binary_value(y, g);
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn binary_monotone_for_convex_weights(y1 in -1.0f64..2.0, y2 in -1.0f64..2.0, g in 0.0f64..0.999) {
            let (a, b) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(opca_binary_value(a, g) <= opca_binary_value(b, g));
        }

        #[test]
        fn bimodal_output_in_bounds(y in -20.0f64..30.0) {
            let p = paper_params();
            let x = opca_bimodal_value(y, &p);
            prop_assert!(x >= p.lo && x <= p.hi);
        }
    }
}
