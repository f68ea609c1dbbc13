//! Subspace randomized-maximum-likelihood history matching with a hybrid
//! PSO–MADS derivative-free optimizer.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow_sim::{simulate, RateSeries, ReservoirConfig, WellRole, WellSpec};
use crate::geomodel::{GridModel, PropertyMap};
use crate::opca::opca_binary;
use crate::pca::PcaBasis;
use crate::rng::{derive_seed, seeded};
use crate::transform_net::{Finalizer, TransformNet};

pub const NOISE_FRACTION: f64 = 0.10;
pub const NOISE_FLOOR: f64 = 2.0;
/// Last day of the history period.
pub const HISTORY_DAYS: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsQuantity {
    Injection,
    Oil,
    Water,
}

impl ObsQuantity {
    fn as_str(self) -> &'static str {
        match self {
            ObsQuantity::Injection => "injection",
            ObsQuantity::Oil => "oil",
            ObsQuantity::Water => "water",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "injection" => Some(ObsQuantity::Injection),
            "oil" => Some(ObsQuantity::Oil),
            "water" => Some(ObsQuantity::Water),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObsKey {
    pub day: f64,
    pub well: String,
    pub quantity: ObsQuantity,
}

/// Keys in the order of [`RateSeries::history_vector`].
pub fn history_keys(r: &RateSeries, until_day: f64) -> Vec<ObsKey> {
    let mut keys = Vec::new();
    for &day in r.times.iter().take_while(|&&t| t <= until_day + 1e-9) {
        for w in r.wells.iter().filter(|w| w.role == WellRole::Injector) {
            keys.push(ObsKey {
                day,
                well: w.name.clone(),
                quantity: ObsQuantity::Injection,
            });
        }
        for w in r.wells.iter().filter(|w| w.role == WellRole::Producer) {
            for quantity in [ObsQuantity::Oil, ObsQuantity::Water] {
                keys.push(ObsKey {
                    day,
                    well: w.name.clone(),
                    quantity,
                });
            }
        }
    }
    keys
}

/// Observed rates with independent Gaussian noise of standard deviation `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsData {
    pub keys: Vec<ObsKey>,
    pub d_obs: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn noise_sigma(d_true: f64) -> f64 {
    (NOISE_FRACTION * d_true.abs()).max(NOISE_FLOOR)
}

impl ObsData {
    pub fn new(keys: Vec<ObsKey>, d_obs: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if keys.len() != d_obs.len() || sigma.len() != d_obs.len() {
            return Err(Error::shape("ObsData", "keys, data and sigma must have equal length"));
        }
        if let Some(i) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("sigma[{i}] = {} must be positive", sigma[i])));
        }
        if d_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observed data must be finite"));
        }
        Ok(ObsData { keys, d_obs, sigma })
    }

    /// Synthetic observations from a reference run: `σ = max(10%·|d|, 2)` and one noise draw.
    pub fn synthesize(truth: &RateSeries, until_day: f64, seed: u64) -> Result<Self> {
        let d_true = truth.history_vector(until_day);
        let sigma: Vec<f64> = d_true.iter().map(|&d| noise_sigma(d)).collect();
        let mut rng = seeded(seed);
        let d_obs = d_true
            .iter()
            .zip(&sigma)
            .map(|(d, s)| d + s * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        ObsData::new(history_keys(truth, until_day), d_obs, sigma)
    }

    pub fn n_d(&self) -> usize {
        self.d_obs.len()
    }

    /// `½ Σ ((d − target)/σ)²`.
    pub fn mismatch(&self, d: &[f64], target: &[f64]) -> Result<f64> {
        if d.len() != self.n_d() || target.len() != self.n_d() {
            return Err(Error::shape(
                "data mismatch",
                format!("expected {} data, got {} and {}", self.n_d(), d.len(), target.len()),
            ));
        }
        Ok(0.5 * d.iter().zip(target).zip(&self.sigma).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>())
    }

    /// CSV with columns `day,well,quantity,value,sigma`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let e = |e: csv::Error| Error::format("CSV", e.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["day", "well", "quantity", "value", "sigma"]).map_err(e)?;
        for ((k, v), s) in self.keys.iter().zip(&self.d_obs).zip(&self.sigma) {
            out.write_record([k.day.to_string(), k.well.clone(), k.quantity.as_str().into(), v.to_string(), s.to_string()])
                .map_err(e)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `day,well,quantity,value[,sigma]`; a missing sigma defaults to the noise rule applied to `value`.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let (mut keys, mut d, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::format("observations", e.to_string()))?;
            let bad = |what: &str| Error::format("observations", format!("row {}: {what}", i + 1));
            if rec.len() < 4 {
                return Err(bad("expected day,well,quantity,value[,sigma]"));
            }
            let day: f64 = rec[0].trim().parse().map_err(|_| bad("bad day"))?;
            let quantity = ObsQuantity::parse(rec[2].trim()).ok_or_else(|| bad("quantity must be injection, oil or water"))?;
            let v: f64 = rec[3].trim().parse().map_err(|_| bad("bad value"))?;
            let s = match rec.get(4).map(str::trim).filter(|s| !s.is_empty()) {
                Some(s) => s.parse().map_err(|_| bad("bad sigma"))?,
                None => noise_sigma(v),
            };
            keys.push(ObsKey {
                day,
                well: rec[1].trim().to_string(),
                quantity,
            });
            d.push(v);
            sigma.push(s);
        }
        ObsData::new(keys, d, sigma)
    }
}

/// One perturbed objective: `d*_obs ~ N(d_obs, C_d)` and `ξ* ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmlInstance {
    pub d_obs_star: Vec<f64>,
    pub xi_star: Vec<f64>,
    pub seed: u64,
}

pub fn perturb(obs: &ObsData, l: usize, seed: u64) -> RmlInstance {
    let mut rng = seeded(seed);
    let d_obs_star = obs
        .d_obs
        .iter()
        .zip(&obs.sigma)
        .map(|(d, s)| d + s * { let z: f64 = StandardNormal.sample(&mut rng); z })
        .collect();
    let xi_star = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
    RmlInstance {
        d_obs_star,
        xi_star,
        seed,
    }
}

/// Objective split into data and model terms; infeasible points carry `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub data: f64,
    pub model: f64,
    pub total: f64,
}

impl ObjectiveValue {
    pub const INFEASIBLE: ObjectiveValue = ObjectiveValue {
        data: f64::INFINITY,
        model: f64::INFINITY,
        total: f64::INFINITY,
    };

    pub fn new(data: f64, model: f64) -> Self {
        ObjectiveValue {
            data,
            model,
            total: data + model,
        }
    }

    pub fn feasible(&self) -> bool {
        self.total.is_finite()
    }
}

/// `½(d − d*)ᵀC_d⁻¹(d − d*) + ½(ξ − ξ*)ᵀ(ξ − ξ*)` for simulated data `d`.
pub fn rml_objective(xi: &[f64], d: &[f64], inst: &RmlInstance, obs: &ObsData) -> Result<ObjectiveValue> {
    if xi.len() != inst.xi_star.len() {
        return Err(Error::shape("rml_objective", "latent length differs from the instance"));
    }
    let data = obs.mismatch(d, &inst.d_obs_star)?;
    let model = 0.5 * xi.iter().zip(&inst.xi_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    Ok(ObjectiveValue::new(data, model))
}

/// Maps latent vectors to models and simulated data.
pub trait ForwardModel: Sync {
    fn l(&self) -> usize;
    fn model(&self, xi: &[f64]) -> Result<GridModel>;
    fn data(&self, xi: &[f64]) -> Result<Vec<f64>>;

    fn data_batch(&self, xis: &[Vec<f64>]) -> Vec<Result<Vec<f64>>> {
        xis.par_iter().map(|x| self.data(x)).collect()
    }
}

/// How a latent vector becomes a geomodel.
pub enum Generator {
    Pca(Finalizer),
    /// Binary O-PCA with the given `γ`.
    Opca(f64),
    Cnn(Box<TransformNet>, Finalizer),
}

/// `ξ → model → properties → simulation → history vector`.
pub struct Pipeline {
    pub pca: PcaBasis,
    pub generator: Generator,
    pub props: PropertyMap,
    pub reservoir: ReservoirConfig,
    pub wells: Vec<WellSpec>,
    /// Simulation horizon; only reports up to `until_day` enter the data vector.
    pub horizon: f64,
    pub until_day: f64,
}

impl Pipeline {
    fn finish(&self, m_pca: GridModel) -> Result<GridModel> {
        match &self.generator {
            Generator::Pca(fin) => fin.apply(&m_pca),
            Generator::Opca(g) => opca_binary(&m_pca, *g),
            Generator::Cnn(net, fin) => fin.apply(&net.forward(&m_pca)?),
        }
    }

    fn models(&self, xis: &[Vec<f64>]) -> Vec<Result<GridModel>> {
        match &self.generator {
            Generator::Cnn(net, fin) => {
                let mut out = Vec::with_capacity(xis.len());
                for group in xis.chunks(8) {
                    let m_pca: Result<Vec<GridModel>> = group.iter().map(|x| self.pca.sample(x)).collect();
                    match m_pca.and_then(|ms| net.forward_batch(&ms.iter().collect::<Vec<_>>())) {
                        Ok(ms) => out.extend(ms.iter().map(|m| fin.apply(m))),
                        Err(e) => out.extend(group.iter().map(|_| Err(Error::invalid(e.to_string())))),
                    }
                }
                out
            }
            _ => xis.iter().map(|x| self.model(x)).collect(),
        }
    }

    pub fn simulate_model(&self, m: &GridModel) -> Result<RateSeries> {
        simulate(m, &self.props, &self.reservoir, &self.wells, self.horizon)
    }
}

impl ForwardModel for Pipeline {
    fn l(&self) -> usize {
        self.pca.l()
    }

    fn model(&self, xi: &[f64]) -> Result<GridModel> {
        self.finish(self.pca.sample(xi)?)
    }

    fn data(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.simulate_model(&self.model(xi)?)?.history_vector(self.until_day))
    }

    fn data_batch(&self, xis: &[Vec<f64>]) -> Vec<Result<Vec<f64>>> {
        let models = self.models(xis);
        models
            .into_par_iter()
            .map(|m| Ok(self.simulate_model(&m?)?.history_vector(self.until_day)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoMadsConfig {
    pub swarm: usize,
    pub iterations: usize,
    pub mesh_init: f64,
    pub mesh_max: f64,
    pub mesh_min: f64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub lower: f64,
    pub upper: f64,
    /// Spread of the initial swarm around the starting point.
    pub init_spread: f64,
    pub seed: u64,
}

impl Default for PsoMadsConfig {
    fn default() -> Self {
        PsoMadsConfig {
            swarm: 50,
            iterations: 24,
            mesh_init: 0.5,
            mesh_max: 1.0,
            mesh_min: 1e-6,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            lower: -4.0,
            upper: 4.0,
            init_spread: 1.0,
            seed: 0,
        }
    }
}

impl PsoMadsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm < 2 || self.iterations < 1 {
            return Err(Error::invalid("PSO-MADS needs a swarm of at least 2 and at least 1 iteration"));
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::invalid("bounds must be finite with lower < upper"));
        }
        if !(self.mesh_min > 0.0 && self.mesh_init >= self.mesh_min && self.mesh_max >= self.mesh_init) {
            return Err(Error::invalid("mesh sizes must satisfy 0 < min <= init <= max"));
        }
        Ok(())
    }
}

/// Evaluation accounting for one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pso_evals: usize,
    pub mads_evals: usize,
    pub infeasible: usize,
    /// Mesh size used by this iteration's poll.
    pub mesh: f64,
    pub mads_success: bool,
    pub incumbent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub best_x: Vec<f64>,
    pub best: ObjectiveValue,
    /// Incumbent objective after each iteration.
    pub trace: Vec<f64>,
    pub ledger: Vec<IterationRecord>,
    pub evaluations: usize,
    pub stopped_on_mesh: bool,
}

/// Minimizes `objective` evaluated in waves; `objective` receives a batch of points
/// and returns one value per point.
pub fn pso_mads_minimize(
    mut objective: impl FnMut(&[Vec<f64>]) -> Vec<ObjectiveValue>,
    cfg: &PsoMadsConfig,
    init: &[f64],
) -> Result<OptimizationResult> {
    cfg.validate()?;
    let l = init.len();
    if l == 0 {
        return Err(Error::invalid("empty search space"));
    }
    let (lo, hi) = (cfg.lower, cfg.upper);
    let vmax = 0.5 * (hi - lo);
    let mut rng = seeded(cfg.seed);
    let clamp = |v: f64| v.clamp(lo, hi);
    let mut x: Vec<Vec<f64>> = (0..cfg.swarm)
        .map(|p| {
            init.iter()
                .map(|&v| {
                    if p == 0 {
                        clamp(v)
                    } else {
                        clamp(v + cfg.init_spread * { let z: f64 = StandardNormal.sample(&mut rng); z })
                    }
                })
                .collect()
        })
        .collect();
    let mut vel = vec![vec![0.0; l]; cfg.swarm];
    let mut pbest = x.clone();
    let mut pbest_f = vec![f64::INFINITY; cfg.swarm];
    let mut best_x = x[0].clone();
    let mut best = ObjectiveValue::INFEASIBLE;
    let mut mesh = cfg.mesh_init;
    let mut pending: Option<Vec<f64>> = None;
    let mut out = OptimizationResult {
        best_x: Vec::new(),
        best,
        trace: Vec::new(),
        ledger: Vec::new(),
        evaluations: 0,
        stopped_on_mesh: false,
    };
    let mut wave = |pts: &[Vec<f64>], count: &mut usize| -> Result<Vec<ObjectiveValue>> {
        let v = objective(pts);
        if v.len() != pts.len() {
            return Err(Error::invalid("objective returned the wrong number of values"));
        }
        *count += pts.len();
        Ok(v)
    };
    for it in 0..cfg.iterations {
        if it > 0 {
            for p in 0..cfg.swarm {
                for k in 0..l {
                    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                    let v = cfg.inertia * vel[p][k]
                        + cfg.cognitive * r1 * (pbest[p][k] - x[p][k])
                        + cfg.social * r2 * (best_x[k] - x[p][k]);
                    vel[p][k] = v.clamp(-vmax, vmax);
                    let nx = x[p][k] + vel[p][k];
                    if nx < lo || nx > hi {
                        vel[p][k] = 0.0;
                    }
                    x[p][k] = clamp(nx);
                }
            }
            if let Some(s) = pending.take() {
                let worst = (0..cfg.swarm).max_by(|&a, &b| pbest_f[a].total_cmp(&pbest_f[b])).unwrap_or(0);
                x[worst] = s;
                vel[worst].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut rec = IterationRecord {
            iteration: it,
            pso_evals: 0,
            mads_evals: 0,
            infeasible: 0,
            mesh,
            mads_success: false,
            incumbent: best.total,
        };
        let vals = wave(&x, &mut rec.pso_evals)?;
        for (p, v) in vals.iter().enumerate() {
            if !v.feasible() {
                rec.infeasible += 1;
                continue;
            }
            if v.total < pbest_f[p] {
                pbest_f[p] = v.total;
                pbest[p] = x[p].clone();
            }
            if v.total < best.total {
                best = *v;
                best_x = x[p].clone();
            }
        }
        if best.feasible() {
            let mut trial = Vec::with_capacity(2 * l);
            let mut dirs = Vec::with_capacity(2 * l);
            for k in 0..l {
                for sign in [1.0, -1.0] {
                    let mut t = best_x.clone();
                    t[k] = clamp(t[k] + sign * mesh);
                    if t[k] != best_x[k] {
                        trial.push(t);
                        dirs.push((k, sign));
                    }
                }
            }
            let vals = wave(&trial, &mut rec.mads_evals)?;
            pending = quadratic_search(&best_x, best.total, mesh, &dirs, &vals).map(|mut s| {
                s.iter_mut().for_each(|v| *v = clamp(*v));
                s
            });
            let mut win: Option<usize> = None;
            for (i, v) in vals.iter().enumerate() {
                if !v.feasible() {
                    rec.infeasible += 1;
                } else if v.total < best.total && win.is_none_or(|w| v.total < vals[w].total) {
                    win = Some(i);
                }
            }
            match win {
                Some(i) => {
                    best = vals[i];
                    best_x = trial[i].clone();
                    rec.mads_success = true;
                    mesh = (2.0 * mesh).min(cfg.mesh_max);
                }
                None => mesh *= 0.5,
            }
        } else {
            mesh *= 0.5;
        }
        rec.incumbent = best.total;
        out.evaluations += rec.pso_evals + rec.mads_evals;
        out.trace.push(best.total);
        out.ledger.push(rec);
        if mesh < cfg.mesh_min {
            out.stopped_on_mesh = true;
            break;
        }
    }
    out.best_x = best_x;
    out.best = best;
    Ok(out)
}

/// Minimizer of the separable quadratic through the centre and its coordinate poll,
/// with each coordinate step limited to four mesh widths.
fn quadratic_search(center: &[f64], f0: f64, mesh: f64, dirs: &[(usize, f64)], vals: &[ObjectiveValue]) -> Option<Vec<f64>> {
    let mut plus = vec![None; center.len()];
    let mut minus = vec![None; center.len()];
    for (&(k, sign), v) in dirs.iter().zip(vals) {
        if v.feasible() {
            if sign > 0.0 { plus[k] = Some(v.total) } else { minus[k] = Some(v.total) }
        }
    }
    let mut s = center.to_vec();
    let mut moved = false;
    for k in 0..center.len() {
        let step = match (plus[k], minus[k]) {
            (Some(fp), Some(fm)) => {
                let h = (fp + fm - 2.0 * f0) / (mesh * mesh);
                let g = (fp - fm) / (2.0 * mesh);
                if h > 0.0 {
                    (-g / h).clamp(-4.0 * mesh, 4.0 * mesh)
                } else if fp.min(fm) < f0 {
                    if fp < fm { mesh } else { -mesh }
                } else {
                    0.0
                }
            }
            (Some(fp), None) if fp < f0 => mesh,
            (None, Some(fm)) if fm < f0 => -mesh,
            _ => 0.0,
        };
        if step != 0.0 {
            s[k] += step;
            moved = true;
        }
    }
    moved.then_some(s)
}

/// Per-instance outcome of [`run_rml`].
#[derive(Debug)]
pub struct RmlOutcome {
    pub instance: RmlInstance,
    /// Objective at `ξ*`.
    pub prior: ObjectiveValue,
    pub result: Result<OptimizationResult>,
}

impl RmlOutcome {
    pub fn posterior(&self) -> Option<&OptimizationResult> {
        self.result.as_ref().ok()
    }
}

fn evaluate_batch(fwd: &dyn ForwardModel, inst: &RmlInstance, obs: &ObsData, pts: &[Vec<f64>]) -> Vec<ObjectiveValue> {
    fwd.data_batch(pts)
        .into_iter()
        .zip(pts)
        .map(|(d, x)| {
            d.and_then(|d| rml_objective(x, &d, inst, obs))
                .unwrap_or(ObjectiveValue::INFEASIBLE)
        })
        .collect()
}

/// `n_posterior` independent perturbed minimizations, each started from its own `ξ*`.
pub fn run_rml(obs: &ObsData, fwd: &dyn ForwardModel, n_posterior: usize, cfg: &PsoMadsConfig, base_seed: u64) -> Vec<RmlOutcome> {
    run_rml_with(obs, fwd, n_posterior, cfg, base_seed, |_, _| {})
}

/// [`run_rml`] with a callback after each instance.
pub fn run_rml_with(
    obs: &ObsData,
    fwd: &dyn ForwardModel,
    n_posterior: usize,
    cfg: &PsoMadsConfig,
    base_seed: u64,
    mut on_done: impl FnMut(usize, &RmlOutcome),
) -> Vec<RmlOutcome> {
    (0..n_posterior)
        .map(|r| {
            let seed = derive_seed(base_seed, r as u64);
            let inst = perturb(obs, fwd.l(), seed);
            let prior = evaluate_batch(fwd, &inst, obs, std::slice::from_ref(&inst.xi_star))[0];
            let mut c = cfg.clone();
            c.seed = derive_seed(seed, 0x9a0);
            let result = pso_mads_minimize(|pts| evaluate_batch(fwd, &inst, obs, pts), &c, &inst.xi_star);
            let out = RmlOutcome { instance: inst, prior, result };
            on_done(r, &out);
            out
        })
        .collect()
}

/// CSV of `instance,iteration,pso_evals,mads_evals,infeasible,mesh,mads_success,incumbent`.
pub fn write_traces_csv(w: impl Write, outcomes: &[RmlOutcome]) -> Result<()> {
    let e = |e: csv::Error| Error::format("CSV", e.to_string());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["instance", "iteration", "pso_evals", "mads_evals", "infeasible", "mesh", "mads_success", "incumbent"])
        .map_err(e)?;
    for (i, o) in outcomes.iter().enumerate() {
        if let Some(res) = o.posterior() {
            for r in &res.ledger {
                out.write_record([
                    i.to_string(),
                    r.iteration.to_string(),
                    r.pso_evals.to_string(),
                    r.mads_evals.to_string(),
                    r.infeasible.to_string(),
                    r.mesh.to_string(),
                    r.mads_success.to_string(),
                    r.incumbent.to_string(),
                ])
                .map_err(e)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(d: Vec<f64>, sigma: Vec<f64>) -> ObsData {
        let keys = (0..d.len())
            .map(|i| ObsKey {
                day: 100.0 * (i + 1) as f64,
                well: "P1".into(),
                quantity: ObsQuantity::Oil,
            })
            .collect();
        ObsData::new(keys, d, sigma).unwrap()
    }

    fn sphere(pts: &[Vec<f64>]) -> Vec<ObjectiveValue> {
        pts.iter().map(|x| ObjectiveValue::new(x.iter().map(|v| v * v).sum(), 0.0)).collect()
    }

    #[test]
    fn objective_examples() {
        let o = obs(vec![10.0, 20.0], vec![2.0, 4.0]);
        let inst = RmlInstance {
            d_obs_star: vec![10.0, 20.0],
            xi_star: vec![0.5, -1.0],
            seed: 0,
        };
        let v = rml_objective(&[0.5, -1.0], &[10.0, 20.0], &inst, &o).unwrap();
        assert_eq!(v, ObjectiveValue::new(0.0, 0.0));
        let v = rml_objective(&[0.5, -1.0], &[12.0, 20.0], &inst, &o).unwrap();
        assert_eq!(v.total, 0.5);
        let v = rml_objective(&[1.5, -1.0], &[10.0, 20.0], &inst, &o).unwrap();
        assert_eq!((v.data, v.model, v.total), (0.0, 0.5, 0.5));
        assert!(rml_objective(&[0.0], &[10.0, 20.0], &inst, &o).is_err());
    }

    #[test]
    fn noise_rule() {
        assert_eq!(noise_sigma(500.0), 50.0);
        assert_eq!(noise_sigma(5.0), 2.0);
        assert_eq!(noise_sigma(-30.0), 3.0);
        assert!(ObsData::new(vec![], vec![], vec![]).is_ok());
        assert!(obs_bad().is_err());
    }

    fn obs_bad() -> Result<ObsData> {
        ObsData::new(
            vec![ObsKey {
                day: 1.0,
                well: "x".into(),
                quantity: ObsQuantity::Oil,
            }],
            vec![1.0],
            vec![0.0],
        )
    }

    #[test]
    fn perturb_is_deterministic_and_unbiased() {
        let o = obs(vec![100.0, 5.0, 0.0], vec![10.0, 2.0, 2.0]);
        assert_eq!(perturb(&o, 4, 9), perturb(&o, 4, 9));
        assert_ne!(perturb(&o, 4, 9), perturb(&o, 4, 10));
        let n = 10_000;
        let mut mean = [0.0; 3];
        for s in 0..n {
            for (m, v) in mean.iter_mut().zip(perturb(&o, 2, s).d_obs_star) {
                *m += v / n as f64;
            }
        }
        for k in 0..3 {
            assert!((mean[k] - o.d_obs[k]).abs() <= 4.0 * o.sigma[k] / 100.0, "{k}: {}", mean[k]);
        }
    }

    #[test]
    fn zero_noise_leaves_data_unperturbed() {
        let mut o = obs(vec![100.0, 5.0], vec![1.0, 1.0]);
        o.sigma = vec![0.0, 0.0];
        assert_eq!(perturb(&o, 1, 3).d_obs_star, o.d_obs);
    }

    #[test]
    fn obs_csv_round_trip() {
        let o = obs(vec![100.0, 5.5], vec![10.0, 2.0]);
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        assert_eq!(ObsData::read_csv(&buf[..]).unwrap(), o);
        let no_sigma = "day,well,quantity,value\n100,P1,water,300\n";
        let r = ObsData::read_csv(no_sigma.as_bytes()).unwrap();
        assert_eq!(r.sigma, vec![30.0]);
        assert!(ObsData::read_csv("day,well,quantity,value\n100,P1,gas,3\n".as_bytes()).is_err());
    }

    #[test]
    fn sphere_ten_d() {
        let init: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 1.3 } else { -0.7 }).collect();
        let cfg = PsoMadsConfig {
            seed: 1,
            ..Default::default()
        };
        let r = pso_mads_minimize(sphere, &cfg, &init).unwrap();
        assert!(r.best.total <= 1e-3, "{}", r.best.total);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock_from_origin() {
        let f = |pts: &[Vec<f64>]| -> Vec<ObjectiveValue> {
            pts.iter()
                .map(|x| ObjectiveValue::new(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2), 0.0))
                .collect()
        };
        let r = pso_mads_minimize(f, &PsoMadsConfig::default(), &[0.0, 0.0]).unwrap();
        assert!(r.best.total <= 1.0, "{}", r.best.total);
    }

    #[test]
    fn constant_objective_shrinks_mesh() {
        let cfg = PsoMadsConfig {
            iterations: 40,
            ..Default::default()
        };
        let init = vec![0.3, -0.2, 0.1];
        let r = pso_mads_minimize(|p| p.iter().map(|_| ObjectiveValue::new(1.0, 0.0)).collect(), &cfg, &init).unwrap();
        assert_eq!(r.best_x, init);
        assert!(r.trace.iter().all(|&v| v == 1.0));
        assert!(r.ledger.windows(2).all(|w| w[1].mesh == 0.5 * w[0].mesh));
        assert!(r.stopped_on_mesh);
    }

    #[test]
    fn infeasible_points_are_skipped() {
        let f = |pts: &[Vec<f64>]| -> Vec<ObjectiveValue> {
            pts.iter()
                .map(|x| if x[0] > 0.5 { ObjectiveValue::INFEASIBLE } else { ObjectiveValue::new((x[0] - 0.4).powi(2), 0.0) })
                .collect()
        };
        let r = pso_mads_minimize(f, &PsoMadsConfig::default(), &[0.0]).unwrap();
        assert!(r.best.feasible());
        assert!(r.best_x[0] <= 0.5);
        assert!(r.ledger.iter().map(|l| l.infeasible).sum::<usize>() > 0);
    }

    #[test]
    fn all_infeasible_stops_on_mesh_floor() {
        let cfg = PsoMadsConfig {
            iterations: 100,
            ..Default::default()
        };
        let r = pso_mads_minimize(|p| vec![ObjectiveValue::INFEASIBLE; p.len()], &cfg, &[0.0, 0.0]).unwrap();
        assert!(r.stopped_on_mesh);
        assert!(!r.best.feasible());
    }

    struct Linear;

    impl ForwardModel for Linear {
        fn l(&self) -> usize {
            2
        }

        fn model(&self, xi: &[f64]) -> Result<GridModel> {
            GridModel::new(2, 1, xi.to_vec(), crate::geomodel::ModelKind::Continuous)
        }

        fn data(&self, xi: &[f64]) -> Result<Vec<f64>> {
            if xi[0] > 3.5 {
                return Err(Error::invalid("solver failure"));
            }
            Ok(vec![10.0 * (xi[0] + xi[1]), 10.0 * (xi[0] - xi[1]), 5.0])
        }
    }

    fn linear_obs() -> ObsData {
        obs(vec![20.0, 0.0, 5.0], vec![2.0, 2.0, 2.0])
    }

    #[test]
    fn single_instance_matches_direct_minimization() {
        let o = linear_obs();
        let cfg = PsoMadsConfig {
            iterations: 8,
            ..Default::default()
        };
        let out = run_rml(&o, &Linear, 1, &cfg, 42);
        assert_eq!(out.len(), 1);
        let inst = &out[0].instance;
        let mut c = cfg.clone();
        c.seed = derive_seed(inst.seed, 0x9a0);
        let direct = pso_mads_minimize(|p| evaluate_batch(&Linear, inst, &o, p), &c, &inst.xi_star).unwrap();
        assert_eq!(out[0].posterior().unwrap(), &direct);
        assert!(direct.best.total < out[0].prior.total);
    }

    #[test]
    fn identical_seeds_give_identical_posteriors() {
        let o = linear_obs();
        let cfg = PsoMadsConfig {
            iterations: 5,
            swarm: 10,
            ..Default::default()
        };
        let a = run_rml(&o, &Linear, 3, &cfg, 7);
        let b = run_rml(&o, &Linear, 3, &cfg, 7);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.instance, y.instance);
            assert_eq!(x.posterior().unwrap(), y.posterior().unwrap());
        }
        let seeds: std::collections::BTreeSet<u64> = a.iter().map(|x| x.instance.seed).collect();
        assert_eq!(seeds.len(), 3);
        let mut buf = Vec::new();
        write_traces_csv(&mut buf, &a).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 15);
    }

    #[test]
    fn failed_simulations_are_infeasible() {
        let o = linear_obs();
        let inst = perturb(&o, 2, 1);
        let v = evaluate_batch(&Linear, &inst, &o, &[vec![3.9, 0.0], vec![1.0, 1.0]]);
        assert!(!v[0].feasible());
        assert!(v[1].feasible());
        assert_eq!(v[1].total, v[1].data + v[1].model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn ledger_is_exact_and_trace_monotone(seed in 0u64..500, l in 1usize..6, shift in -2.0f64..2.0) {
            let cfg = PsoMadsConfig { seed, swarm: 8, iterations: 6, ..Default::default() };
            let init = vec![shift; l];
            let mut calls = 0usize;
            let r = pso_mads_minimize(|p| {
                calls += p.len();
                p.iter().map(|x| ObjectiveValue::new(x.iter().map(|v| (v - 1.0).abs()).sum(), 0.0)).collect()
            }, &cfg, &init).unwrap();
            prop_assert_eq!(calls, r.evaluations);
            prop_assert_eq!(r.ledger.iter().map(|x| x.pso_evals + x.mads_evals).sum::<usize>(), r.evaluations);
            prop_assert!(r.evaluations <= cfg.iterations * (cfg.swarm + 2 * l));
            prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
            for x in &r.best_x {
                prop_assert!(*x >= cfg.lower && *x <= cfg.upper);
            }
        }
    }
}
