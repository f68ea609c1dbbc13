//! Two-dimensional incompressible oil-water simulator (implicit pressure,
//! explicit upwind saturation) with bottom-hole-pressure wells, plus ensemble
//! statistics.
//!
//! Units: metres, days, bar, centipoise, millidarcy; rates in m³/day.

mod bl;
mod io;
mod stats;

pub use bl::{buckley_leverett_breakthrough_pvi, buckley_leverett_check, BlCheck};
pub use io::{read_schedule, write_rates_csv, write_schedule};
pub use stats::{cumulative_cdf, ensemble_stats, percentile, PercentileSeries};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geomodel::{GridModel, PropertyMap};
use crate::linalg::BandCholesky;

/// `md·m²/(m·cp)·bar → m³/day`.
pub const DARCY_METRIC: f64 = 0.008_527_02;

/// Corey relative permeabilities on normalized saturation
/// `s = (S − S_wir)/(1 − S_wir − S_or)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corey {
    pub swir: f64,
    pub sor: f64,
    pub krw0: f64,
    pub kro0: f64,
    pub nw: f64,
    pub no: f64,
}

impl Default for Corey {
    fn default() -> Self {
        Corey {
            swir: 0.1,
            sor: 0.1,
            krw0: 0.7,
            kro0: 0.9,
            nw: 2.0,
            no: 2.0,
        }
    }
}

fn pow(x: f64, n: f64) -> f64 {
    if n == 2.0 {
        x * x
    } else if n == 1.0 {
        x
    } else {
        x.powf(n)
    }
}

impl Corey {
    fn normalized(&self, s: f64) -> f64 {
        ((s - self.swir) / (1.0 - self.swir - self.sor)).clamp(0.0, 1.0)
    }

    pub fn krw(&self, s: f64) -> f64 {
        self.krw0 * pow(self.normalized(s), self.nw)
    }

    pub fn kro(&self, s: f64) -> f64 {
        self.kro0 * pow(1.0 - self.normalized(s), self.no)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirConfig {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub mu_w: f64,
    pub mu_o: f64,
    pub sw_init: f64,
    pub p_init: f64,
    pub relperm: Corey,
    pub well_radius: f64,
    /// Fraction of the stable explicit step actually taken.
    pub cfl: f64,
    pub report_interval: f64,
    /// Longest time between pressure solves (days).
    pub pressure_interval: f64,
    /// Relative change in total mobility at any well cell that forces an early pressure solve.
    pub mobility_tolerance: f64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            dx: 50.0,
            dy: 50.0,
            dz: 10.0,
            mu_w: 0.31,
            mu_o: 0.29,
            sw_init: 0.1,
            p_init: 325.0,
            relperm: Corey::default(),
            well_radius: 0.1,
            cfl: 0.9,
            report_interval: 100.0,
            pressure_interval: 10.0,
            mobility_tolerance: 0.2,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.dx) && pos(self.dy) && pos(self.dz)) {
            return Err(Error::invalid("cell dimensions must be positive"));
        }
        if !(pos(self.mu_w) && pos(self.mu_o)) {
            return Err(Error::invalid("viscosities must be positive"));
        }
        let c = &self.relperm;
        if !(c.swir >= 0.0 && c.sor >= 0.0 && c.swir + c.sor < 1.0) {
            return Err(Error::invalid("residual saturations must satisfy 0 <= S_wir + S_or < 1"));
        }
        if !(pos(c.krw0) && pos(c.kro0) && c.nw >= 1.0 && c.no >= 1.0) {
            return Err(Error::invalid("Corey endpoints must be positive and exponents at least 1"));
        }
        if !(self.sw_init >= c.swir && self.sw_init <= 1.0 - c.sor) {
            return Err(Error::invalid("initial water saturation must lie in [S_wir, 1 - S_or]"));
        }
        if !(pos(self.well_radius) && pos(self.report_interval) && pos(self.pressure_interval)) {
            return Err(Error::invalid("well radius, report interval and pressure interval must be positive"));
        }
        if !(self.mobility_tolerance > 0.0) {
            return Err(Error::invalid("mobility tolerance must be positive"));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::invalid("CFL fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    fn lambda_w(&self, s: f64) -> f64 {
        self.relperm.krw(s) / self.mu_w
    }

    fn lambda_o(&self, s: f64) -> f64 {
        self.relperm.kro(s) / self.mu_o
    }

    pub fn fractional_flow(&self, s: f64) -> f64 {
        let (w, o) = (self.lambda_w(s), self.lambda_o(s));
        w / (w + o)
    }

    fn total_mobility(&self, s: f64) -> f64 {
        self.lambda_w(s) + self.lambda_o(s)
    }

    fn max_df(&self) -> f64 {
        let c = &self.relperm;
        let (lo, hi) = (c.swir, 1.0 - c.sor);
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let mut best: f64 = 0.0;
        for i in 0..n {
            let s = lo + h * i as f64;
            best = best.max((self.fractional_flow(s + h) - self.fractional_flow(s)) / h);
        }
        // secant slopes underestimate the peak slightly
        best * 1.05
    }

    /// Peaceman well index (m³/day per bar per unit mobility) for isotropic `k` in md.
    pub fn well_index(&self, k: f64) -> f64 {
        let r_eq = 0.14 * (self.dx * self.dx + self.dy * self.dy).sqrt();
        DARCY_METRIC * 2.0 * std::f64::consts::PI * k * self.dz / (r_eq / self.well_radius).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WellRole {
    Injector,
    Producer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WellSpec {
    pub name: String,
    pub i: usize,
    pub j: usize,
    pub role: WellRole,
    pub bhp: f64,
    pub start_day: f64,
}

impl WellSpec {
    pub fn new(name: impl Into<String>, i: usize, j: usize, role: WellRole, bhp: f64) -> Self {
        WellSpec {
            name: name.into(),
            i,
            j,
            role,
            bhp,
            start_day: 0.0,
        }
    }
}

/// Two injectors at 335 bar and two producers at 315 bar in a five-spot-like layout.
pub fn default_wells(nx: usize, ny: usize) -> Vec<WellSpec> {
    let (a, b) = (nx / 4, (3 * nx) / 4);
    let (c, d) = (ny / 4, (3 * ny) / 4);
    vec![
        WellSpec::new("I1", a, c, WellRole::Injector, 335.0),
        WellSpec::new("I2", b, d, WellRole::Injector, 335.0),
        WellSpec::new("P1", b, c, WellRole::Producer, 315.0),
        WellSpec::new("P2", a, d, WellRole::Producer, 315.0),
    ]
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimDiagnostics {
    pub steps: usize,
    pub pressure_solves: usize,
    pub factorizations: usize,
    pub pcg_iterations: usize,
    /// Largest `|ΔW − net water inflow| / throughput` over all steps.
    pub max_water_balance: f64,
    /// Largest `|Σ well rates| / throughput` over all pressure solves.
    pub max_volume_balance: f64,
    /// Largest pressure residual relative to the right-hand side norm.
    pub max_pressure_residual: f64,
    pub clamp_events: usize,
    pub min_dt: f64,
}

/// Interval-averaged rates at report times. Per-well vectors are indexed `[well][report]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSeries {
    pub times: Vec<f64>,
    pub wells: Vec<WellSpec>,
    pub water_rate: Vec<Vec<f64>>,
    pub oil_rate: Vec<Vec<f64>>,
    pub injection_rate: Vec<Vec<f64>>,
    pub cum_water: Vec<Vec<f64>>,
    pub cum_oil: Vec<Vec<f64>>,
    pub cum_injection: Vec<Vec<f64>>,
    pub diagnostics: SimDiagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    WaterRate,
    OilRate,
    InjectionRate,
    CumWater,
    CumOil,
    CumInjection,
}

/// A quantity for one well, or summed over all wells when `well` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selector {
    pub quantity: Quantity,
    pub well: Option<usize>,
}

impl Selector {
    pub fn field(quantity: Quantity) -> Self {
        Selector { quantity, well: None }
    }

    pub fn well(quantity: Quantity, well: usize) -> Self {
        Selector {
            quantity,
            well: Some(well),
        }
    }
}

impl RateSeries {
    fn table(&self, q: Quantity) -> &Vec<Vec<f64>> {
        match q {
            Quantity::WaterRate => &self.water_rate,
            Quantity::OilRate => &self.oil_rate,
            Quantity::InjectionRate => &self.injection_rate,
            Quantity::CumWater => &self.cum_water,
            Quantity::CumOil => &self.cum_oil,
            Quantity::CumInjection => &self.cum_injection,
        }
    }

    pub fn series(&self, sel: Selector) -> Result<Vec<f64>> {
        let t = self.table(sel.quantity);
        match sel.well {
            Some(w) => t
                .get(w)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("well index {w} out of range"))),
            None => Ok((0..self.times.len()).map(|k| t.iter().map(|s| s[k]).sum()).collect()),
        }
    }

    /// Observed-data layout: at each report time up to `until_day`, injection rates of
    /// injectors followed by oil and water rates of producers.
    pub fn history_vector(&self, until_day: f64) -> Vec<f64> {
        let mut d = Vec::new();
        for (k, &t) in self.times.iter().enumerate() {
            if t > until_day + 1e-9 {
                break;
            }
            for (w, spec) in self.wells.iter().enumerate() {
                if spec.role == WellRole::Injector {
                    d.push(self.injection_rate[w][k]);
                }
            }
            for (w, spec) in self.wells.iter().enumerate() {
                if spec.role == WellRole::Producer {
                    d.push(self.oil_rate[w][k]);
                    d.push(self.water_rate[w][k]);
                }
            }
        }
        d
    }
}

struct Face {
    a: usize,
    b: usize,
    t: f64,
}

struct Simulator<'a> {
    cfg: &'a ReservoirConfig,
    n: usize,
    pv: Vec<f64>,
    faces: Vec<Face>,
    wells: &'a [WellSpec],
    well_cell: Vec<usize>,
    wi: Vec<f64>,
    row: Vec<usize>,
    bw: usize,
    s: Vec<f64>,
    p: Vec<f64>,
    flux: Vec<f64>,
    /// Total well rate, positive into the reservoir.
    q: Vec<f64>,
    /// Largest stable transport step for the current flux field.
    dt_stable: f64,
    df_max: f64,
    precond: Option<(BandCholesky, Vec<bool>)>,
    /// Total mobility at the last pressure solve.
    lam_ref: Vec<f64>,
    diag: SimDiagnostics,
}

const PCG_TOL: f64 = 1e-10;
const PCG_MAX_ITER: usize = 30;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients from `x`; `None` if `max_iter` iterations do not reach `tol`.
fn pcg(
    a: impl Fn(&[f64], &mut [f64]),
    m_inv: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, usize)> {
    let n = b.len();
    let mut q = vec![0.0; n];
    a(&x, &mut q);
    let mut r: Vec<f64> = b.iter().zip(&q).map(|(b, q)| b - q).collect();
    let mut z = vec![0.0; n];
    m_inv(&r, &mut z);
    let mut d = z.clone();
    let mut rz = dotp(&r, &z);
    for it in 0..=max_iter {
        if norm(&r) <= tol {
            return Some((x, it));
        }
        a(&d, &mut q);
        let dq = dotp(&d, &q);
        if !(dq > 0.0) {
            return None;
        }
        let alpha = rz / dq;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * q[i];
        }
        m_inv(&r, &mut z);
        let rz_new = dotp(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    None
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a ReservoirConfig, nx: usize, ny: usize, poro: &[f64], perm: &[f64], wells: &'a [WellSpec]) -> Result<Self> {
        cfg.validate()?;
        let n = nx * ny;
        if poro.len() != n || perm.len() != n {
            return Err(Error::shape("simulate", "property arrays do not match the grid"));
        }
        if let Some(i) = poro.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::invalid(format!("porosity of cell {i} is {}, expected (0, 1)", poro[i])));
        }
        if let Some(i) = perm.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("permeability of cell {i} is {}", perm[i])));
        }
        for w in wells {
            if w.i >= nx || w.j >= ny {
                return Err(Error::invalid(format!("well {} at ({}, {}) is outside the {nx}x{ny} grid", w.name, w.i, w.j)));
            }
            if !(w.bhp.is_finite() && w.start_day.is_finite() && w.start_day >= 0.0) {
                return Err(Error::invalid(format!("well {} has a non-finite BHP or negative start day", w.name)));
            }
        }
        let harmonic = |a: f64, b: f64| if a > 0.0 && b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
        let gx = DARCY_METRIC * cfg.dy * cfg.dz / cfg.dx;
        let gy = DARCY_METRIC * cfg.dx * cfg.dz / cfg.dy;
        let mut faces = Vec::with_capacity(2 * n);
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                if i + 1 < nx {
                    faces.push(Face {
                        a: c,
                        b: c + 1,
                        t: gx * harmonic(perm[c], perm[c + 1]),
                    });
                }
                if j + 1 < ny {
                    faces.push(Face {
                        a: c,
                        b: c + nx,
                        t: gy * harmonic(perm[c], perm[c + nx]),
                    });
                }
            }
        }
        let (row, bw) = if nx <= ny {
            ((0..n).collect(), nx)
        } else {
            ((0..n).map(|c| (c % nx) * ny + c / nx).collect(), ny)
        };
        let well_cell: Vec<usize> = wells.iter().map(|w| w.j * nx + w.i).collect();
        let wi = well_cell.iter().map(|&c| cfg.well_index(perm[c])).collect();
        let vol = cfg.dx * cfg.dy * cfg.dz;
        Ok(Simulator {
            cfg,
            n,
            pv: poro.iter().map(|&f| f * vol).collect(),
            faces,
            wells,
            well_cell,
            wi,
            row,
            bw: bw.min(n.saturating_sub(1)),
            s: vec![cfg.sw_init; n],
            p: vec![cfg.p_init; n],
            flux: Vec::new(),
            q: vec![0.0; wells.len()],
            dt_stable: f64::INFINITY,
            df_max: cfg.max_df(),
            precond: None,
            lam_ref: Vec::new(),
            diag: SimDiagnostics {
                min_dt: f64::INFINITY,
                ..Default::default()
            },
        })
    }

    fn active(&self, w: usize, t: f64) -> bool {
        t + 1e-9 >= self.wells[w].start_day && self.wi[w] > 0.0
    }

    /// Face mobility, upwinded on the previous pressure field.
    fn face_mobility(&self, f: &Face) -> f64 {
        let up = if self.p[f.a] >= self.p[f.b] { f.a } else { f.b };
        self.cfg.total_mobility(self.s[up])
    }

    fn solve_pressure(&mut self, t: f64, step: usize) -> Result<()> {
        let n = self.n;
        let mut parent: Vec<usize> = (0..n).collect();
        let mut coef = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            let c = f.t * self.face_mobility(f);
            coef.push(c);
            if c > 0.0 {
                let (ra, rb) = (find(&mut parent, f.a), find(&mut parent, f.b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
        let mut anchored = vec![false; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for w in 0..self.wells.len() {
            if self.active(w, t) {
                let c = self.well_cell[w];
                let g = self.wi[w] * self.cfg.total_mobility(self.s[c]);
                diag[c] += g;
                rhs[c] += g * self.wells[w].bhp;
                let r = find(&mut parent, c);
                anchored[r] = true;
            }
        }
        let pinned: Vec<bool> = (0..n).map(|c| !anchored[find(&mut parent, c)]).collect();
        for c in 0..n {
            if pinned[c] {
                diag[c] = 1.0;
                rhs[c] = self.p[c];
            }
        }
        let live: Vec<(usize, usize, f64)> = self
            .faces
            .iter()
            .zip(&coef)
            .filter(|(f, &c)| !pinned[f.a] && c > 0.0)
            .map(|(f, &c)| (f.a, f.b, c))
            .collect();
        for &(a, b, c) in &live {
            diag[a] += c;
            diag[b] += c;
        }
        let matvec = |x: &[f64], y: &mut [f64]| {
            for c in 0..n {
                y[c] = diag[c] * x[c];
            }
            for &(a, b, c) in &live {
                y[a] -= c * x[b];
                y[b] -= c * x[a];
            }
        };
        let rn = norm(&rhs);
        let row = &self.row;
        let mut p = None;
        if let Some((chol, pins)) = &self.precond {
            if *pins == pinned {
                let m_inv = |r: &[f64], z: &mut [f64]| {
                    let mut x = vec![0.0; n];
                    for c in 0..n {
                        x[row[c]] = r[c];
                    }
                    chol.solve(&mut x);
                    for c in 0..n {
                        z[c] = x[row[c]];
                    }
                };
                p = pcg(matvec, m_inv, &rhs, self.p.clone(), PCG_TOL * rn, PCG_MAX_ITER).map(|(p, it)| {
                    self.diag.pcg_iterations += it;
                    p
                });
            }
        }
        let p = match p {
            Some(p) => p,
            None => {
                let w1 = self.bw + 1;
                let mut band = vec![0.0; n * w1];
                for c in 0..n {
                    band[row[c] * w1] = diag[c];
                }
                for &(a, b, c) in &live {
                    let (ra, rb) = (row[a], row[b]);
                    let (hi, lo) = (ra.max(rb), ra.min(rb));
                    band[hi * w1 + (hi - lo)] -= c;
                }
                let chol = BandCholesky::factor(n, self.bw, band).map_err(|r| Error::LinearSolve {
                    step,
                    detail: format!("non-positive pivot at row {r}"),
                })?;
                let mut x = vec![0.0; n];
                for c in 0..n {
                    x[row[c]] = rhs[c];
                }
                chol.solve(&mut x);
                self.diag.factorizations += 1;
                self.precond = Some((chol, pinned.clone()));
                (0..n).map(|c| x[row[c]]).collect()
            }
        };
        if p.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::LinearSolve {
                step,
                detail: "non-finite pressure".into(),
            });
        }
        let mut res = vec![0.0; n];
        matvec(&p, &mut res);
        if rn > 0.0 {
            let r = res.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / rn;
            self.diag.max_pressure_residual = self.diag.max_pressure_residual.max(r);
        }
        self.p = p;
        self.flux = self
            .faces
            .iter()
            .zip(&coef)
            .map(|(f, &c)| if pinned[f.a] { 0.0 } else { c * (self.p[f.a] - self.p[f.b]) })
            .collect();
        let mut net = 0.0;
        let mut thru = 0.0;
        for w in 0..self.wells.len() {
            self.q[w] = if self.active(w, t) {
                let c = self.well_cell[w];
                self.wi[w] * self.cfg.total_mobility(self.s[c]) * (self.wells[w].bhp - self.p[c])
            } else {
                0.0
            };
            net += self.q[w];
            thru += self.q[w].abs();
        }
        if thru > 0.0 {
            self.diag.max_volume_balance = self.diag.max_volume_balance.max(net.abs() / (0.5 * thru));
        }
        self.diag.pressure_solves += 1;
        self.dt_stable = self.stable_dt();
        self.lam_ref = self.s.iter().map(|&s| self.cfg.total_mobility(s)).collect();
        Ok(())
    }

    /// Largest relative change in well-cell mobility since the last pressure solve.
    fn mobility_drift(&self) -> f64 {
        let rel = |c: usize| (self.cfg.total_mobility(self.s[c]) / self.lam_ref[c] - 1.0).abs();
        self.well_cell.iter().map(|&c| rel(c)).fold(0.0, f64::max)
    }

    fn stable_dt(&self) -> f64 {
        let df = self.df_max;
        let mut out = vec![0.0; self.n];
        for (f, &v) in self.faces.iter().zip(&self.flux) {
            if v > 0.0 {
                out[f.a] += v;
            } else {
                out[f.b] -= v;
            }
        }
        for (w, &c) in self.well_cell.iter().enumerate() {
            if self.q[w] < 0.0 {
                out[c] -= self.q[w];
            }
        }
        let mut dt = f64::INFINITY;
        for (o, pv) in out.iter().zip(&self.pv) {
            if *o > 0.0 {
                dt = dt.min(pv / (df * o));
            }
        }
        self.cfg.cfl * dt
    }

    /// Advances saturations by `dt`; returns per-well `(water produced, oil produced, water injected)`.
    fn transport(&mut self, dt: f64) -> Vec<(f64, f64, f64)> {
        let cfg = self.cfg;
        let fw: Vec<f64> = self.s.iter().map(|&s| cfg.fractional_flow(s)).collect();
        let mut dw = vec![0.0; self.n];
        for (f, &v) in self.faces.iter().zip(&self.flux) {
            let w = if v > 0.0 { fw[f.a] * v } else { fw[f.b] * v };
            dw[f.a] -= w;
            dw[f.b] += w;
        }
        let mut vols = Vec::with_capacity(self.wells.len());
        let mut net_in = 0.0;
        let mut thru = 0.0;
        for (w, &c) in self.well_cell.iter().enumerate() {
            let q = self.q[w];
            let injecting = q > 0.0 && self.wells[w].role == WellRole::Injector;
            let water = if injecting { q } else { fw[c] * q };
            dw[c] += water;
            net_in += water * dt;
            thru += q.abs() * dt;
            vols.push(if injecting {
                (0.0, 0.0, q * dt)
            } else {
                (-water * dt, -(q - water) * dt, 0.0)
            });
        }
        let before: f64 = self.s.iter().zip(&self.pv).map(|(s, pv)| s * pv).sum();
        let (lo, hi) = (cfg.relperm.swir, 1.0 - cfg.relperm.sor);
        for c in 0..self.n {
            let s = self.s[c] + dt * dw[c] / self.pv[c];
            self.s[c] = if s < lo - 1e-10 || s > hi + 1e-10 {
                self.diag.clamp_events += 1;
                s.clamp(lo, hi)
            } else {
                s
            };
        }
        let after: f64 = self.s.iter().zip(&self.pv).map(|(s, pv)| s * pv).sum();
        if thru > 0.0 {
            let r = ((after - before) - net_in).abs() / thru;
            self.diag.max_water_balance = self.diag.max_water_balance.max(r);
        }
        self.diag.steps += 1;
        self.diag.min_dt = self.diag.min_dt.min(dt);
        vols
    }

    fn run(mut self, horizon: f64) -> Result<RateSeries> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let cfg = self.cfg;
        let nw = self.wells.len();
        let mut reports: Vec<f64> = Vec::new();
        let mut k = 1;
        while (k as f64) * cfg.report_interval < horizon - 1e-9 {
            reports.push(k as f64 * cfg.report_interval);
            k += 1;
        }
        reports.push(horizon);
        let mut starts: Vec<f64> = self.wells.iter().map(|w| w.start_day).filter(|&d| d > 0.0 && d < horizon).collect();
        starts.sort_by(f64::total_cmp);
        let mut cum = vec![(0.0, 0.0, 0.0); nw];
        let mut out = RateSeries {
            times: reports.clone(),
            wells: self.wells.to_vec(),
            water_rate: vec![Vec::new(); nw],
            oil_rate: vec![Vec::new(); nw],
            injection_rate: vec![Vec::new(); nw],
            cum_water: vec![Vec::new(); nw],
            cum_oil: vec![Vec::new(); nw],
            cum_injection: vec![Vec::new(); nw],
            diagnostics: SimDiagnostics::default(),
        };
        let mut t = 0.0;
        let mut last_report = 0.0;
        let mut next_pressure = 0.0;
        let mut step = 0;
        for &tr in &reports {
            let prev = cum.clone();
            while t < tr - 1e-9 {
                if t >= next_pressure - 1e-9 {
                    self.solve_pressure(t, step)?;
                    next_pressure = t + cfg.pressure_interval;
                    if let Some(&s) = starts.iter().find(|&&s| s > t + 1e-9) {
                        next_pressure = next_pressure.min(s);
                    }
                }
                let dt = self.dt_stable.min(tr - t).min(next_pressure - t);
                if !(dt > 1e-10) {
                    return Err(Error::StepUnderflow { time: t, dt });
                }
                let vols = self.transport(dt);
                for (c, v) in cum.iter_mut().zip(vols) {
                    c.0 += v.0;
                    c.1 += v.1;
                    c.2 += v.2;
                }
                t += dt;
                step += 1;
                if self.mobility_drift() > cfg.mobility_tolerance {
                    next_pressure = t;
                }
            }
            let span = tr - last_report;
            for w in 0..nw {
                out.water_rate[w].push((cum[w].0 - prev[w].0) / span);
                out.oil_rate[w].push((cum[w].1 - prev[w].1) / span);
                out.injection_rate[w].push((cum[w].2 - prev[w].2) / span);
                out.cum_water[w].push(cum[w].0);
                out.cum_oil[w].push(cum[w].1);
                out.cum_injection[w].push(cum[w].2);
            }
            last_report = tr;
        }
        if self.diag.min_dt == f64::INFINITY {
            self.diag.min_dt = 0.0;
        }
        out.diagnostics = self.diag;
        Ok(out)
    }
}

/// Simulates a facies or log-permeability model through `pm`.
pub fn simulate(m: &GridModel, pm: &PropertyMap, cfg: &ReservoirConfig, wells: &[WellSpec], horizon: f64) -> Result<RateSeries> {
    pm.validate()?;
    let (poro, perm) = pm.to_properties(m);
    simulate_properties(m.nx(), m.ny(), &poro, &perm, cfg, wells, horizon)
}

/// Simulates explicit porosity and permeability (md) fields.
pub fn simulate_properties(
    nx: usize,
    ny: usize,
    poro: &[f64],
    perm: &[f64],
    cfg: &ReservoirConfig,
    wells: &[WellSpec],
    horizon: f64,
) -> Result<RateSeries> {
    Simulator::new(cfg, nx, ny, poro, perm, wells)?.run(horizon)
}

/// Simulates every model in parallel; results keep the input order.
pub fn simulate_ensemble(
    models: &[GridModel],
    pm: &PropertyMap,
    cfg: &ReservoirConfig,
    wells: &[WellSpec],
    horizon: f64,
) -> Vec<Result<RateSeries>> {
    models.par_iter().map(|m| simulate(m, pm, cfg, wells, horizon)).collect()
}
