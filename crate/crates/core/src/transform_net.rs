//! The model transform net `f_W`: construction, training, inference and
//! latent-space gradients.
//!
//! Layer stack:
//!
//! | layer | filters | stride | output |
//! |---|---|---|---|
//! | `conv_in` | 32 @ 9x9 | 1 | `ny x nx x 32` |
//! | `down1` | 64 @ 3x3 | 2 | `ny/2 x nx/2 x 64` |
//! | `down2` | 128 @ 3x3 | 2 | `ny/4 x nx/4 x 128` |
//! | `res1`…`res5` | 2 x 128 @ 3x3 | 1 | `ny/4 x nx/4 x 128` |
//! | `up1` | 64 @ 3x3 | 1/2 | `ny/2 x nx/2 x 64` |
//! | `up2` | 32 @ 3x3 | 1/2 | `ny x nx x 32` |
//! | `conv_out` | 1 @ 9x9 | 1 | `ny x nx x 1` |
//!
//! Every layer but `conv_out` is followed by batch normalization; all but the
//! second convolution of each residual block are then rectified.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geomodel::{honoring_rate, GridModel, HardData, ModelKind};
use crate::loss_net::{GramSet, LossNetwork, CONTENT_TAP};
use crate::nnw::NamedTensors;
use crate::opca::{opca_bimodal, BimodalParams};
use crate::pca::PcaBasis;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{adam_step, AdamState, BnMode, BnStats, Tape, Tensor, Var};

pub const PARAM_COUNT: usize = 1_668_865;
pub const N_RES_BLOCKS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Conv { stride: usize },
    Up,
}

#[derive(Clone, Debug)]
struct LayerSpec {
    name: String,
    k: usize,
    cin: usize,
    cout: usize,
    kind: Kind,
    bn: bool,
}

fn layer_specs() -> Vec<LayerSpec> {
    let spec = |name: String, k, cin, cout, kind, bn| LayerSpec {
        name,
        k,
        cin,
        cout,
        kind,
        bn,
    };
    let mut v = vec![
        spec("conv_in".into(), 9, 1, 32, Kind::Conv { stride: 1 }, true),
        spec("down1".into(), 3, 32, 64, Kind::Conv { stride: 2 }, true),
        spec("down2".into(), 3, 64, 128, Kind::Conv { stride: 2 }, true),
    ];
    for r in 1..=N_RES_BLOCKS {
        for part in ["a", "b"] {
            v.push(spec(format!("res{r}.{part}"), 3, 128, 128, Kind::Conv { stride: 1 }, true));
        }
    }
    v.push(spec("up1".into(), 3, 128, 64, Kind::Up, true));
    v.push(spec("up2".into(), 3, 64, 32, Kind::Up, true));
    v.push(spec("conv_out".into(), 9, 32, 1, Kind::Conv { stride: 1 }, false));
    v
}

#[derive(Clone, Debug)]
struct Layer {
    spec: LayerSpec,
    /// Index of the filter tensor in `params`; bias, BN scale and BN shift follow.
    base: usize,
    bn: Option<usize>,
}

/// Batch statistics (updated) or running statistics (read) for one forward pass.
enum Stats<'a> {
    Train(&'a mut [BnStats]),
    Inference(Vec<BnStats>),
}

impl Stats<'_> {
    fn mode(&self) -> BnMode {
        match self {
            Stats::Train(_) => BnMode::Train,
            Stats::Inference(_) => BnMode::Inference,
        }
    }

    fn get(&mut self, i: usize) -> &mut BnStats {
        match self {
            Stats::Train(s) => &mut s[i],
            Stats::Inference(s) => &mut s[i],
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformNet {
    layers: Vec<Layer>,
    names: Vec<String>,
    params: Vec<Tensor>,
    bn_stats: Vec<BnStats>,
}

/// A map from a PCA model to a post-processed model that can pull output
/// cotangents back to the input.
pub trait DifferentiableTransform {
    fn apply(&self, m: &GridModel) -> Result<GridModel>;
    /// `(∂apply(m)/∂m)ᵀ · cotangent`.
    fn pullback(&self, m: &GridModel, cotangent: &[f64]) -> Result<Vec<f64>>;
}

pub struct IdentityTransform;

impl DifferentiableTransform for IdentityTransform {
    fn apply(&self, m: &GridModel) -> Result<GridModel> {
        Ok(m.clone())
    }

    fn pullback(&self, m: &GridModel, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != m.n_cells() {
            return Err(Error::shape("pullback", "cotangent length differs from model size"));
        }
        Ok(cotangent.to_vec())
    }
}

fn check_divisible(nx: usize, ny: usize) -> Result<()> {
    if nx == 0 || ny == 0 || !nx.is_multiple_of(4) || !ny.is_multiple_of(4) {
        return Err(Error::shape(
            "transform net",
            format!("grid extents must be positive multiples of 4, got {nx}x{ny}"),
        ));
    }
    Ok(())
}

fn batch_tensor(models: &[&GridModel]) -> Result<Tensor> {
    let first = models.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (nx, ny) = (first.nx(), first.ny());
    let mut data = Vec::with_capacity(models.len() * nx * ny);
    for m in models {
        if !m.same_extents(first) {
            return Err(Error::shape("batch", "models in a batch must share extents"));
        }
        data.extend_from_slice(m.values());
    }
    Tensor::new(vec![models.len(), ny, nx, 1], data)
}

fn split_batch(t: &Tensor, nx: usize, ny: usize) -> Result<Vec<GridModel>> {
    t.data()
        .chunks(nx * ny)
        .map(|c| GridModel::new(nx, ny, c.to_vec(), ModelKind::Continuous))
        .collect()
}

impl TransformNet {
    /// Gaussian filters with standard deviation `√(2/fan_in)`, zero biases, BN scale 1 and shift 0.
    pub fn build(seed: u64) -> Self {
        let mut layers = Vec::new();
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut bn_stats = Vec::new();
        for (li, spec) in layer_specs().into_iter().enumerate() {
            let fan_in = spec.k * spec.k * spec.cin;
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let mut rng = seeded(derive_seed(seed, li as u64));
            let base = params.len();
            names.push(format!("{}.w", spec.name));
            params.push(Tensor::from_fn(&[spec.k, spec.k, spec.cin, spec.cout], |_| dist.sample(&mut rng)));
            names.push(format!("{}.b", spec.name));
            params.push(Tensor::zeros(&[spec.cout]));
            let bn = if spec.bn {
                names.push(format!("{}.bn.scale", spec.name));
                params.push(Tensor::full(&[spec.cout], 1.0));
                names.push(format!("{}.bn.shift", spec.name));
                params.push(Tensor::zeros(&[spec.cout]));
                bn_stats.push(BnStats::new(spec.cout));
                Some(bn_stats.len() - 1)
            } else {
                None
            };
            layers.push(Layer { spec, base, bn });
        }
        TransformNet {
            layers,
            names,
            params,
            bn_stats,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// `(name, count)` for each layer, BN scale and shift included.
    pub fn layer_param_counts(&self) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .map(|l| {
                let n = if l.bn.is_some() { 4 } else { 2 };
                let c = self.params[l.base..l.base + n].iter().map(Tensor::len).sum();
                (l.spec.name.clone(), c)
            })
            .collect()
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn record_layer(&self, tape: &mut Tape, li: usize, x: Var, pv: &[Var], stats: &mut Stats) -> Result<Var> {
        let l = &self.layers[li];
        let (w, b) = (pv[l.base], pv[l.base + 1]);
        let y = match l.spec.kind {
            Kind::Conv { stride } => tape.conv2d(x, w, Some(b), stride, l.spec.k / 2)?,
            Kind::Up => tape.conv2d_fractional(x, w, Some(b))?,
        };
        match l.bn {
            Some(bi) => {
                let mode = stats.mode();
                tape.batch_norm(y, pv[l.base + 2], pv[l.base + 3], mode, stats.get(bi))
            }
            None => Ok(y),
        }
    }

    fn record(&self, tape: &mut Tape, x: Var, pv: &[Var], stats: &mut Stats) -> Result<Var> {
        let (_, h, w, _) = tape.value(x).nhwc()?;
        check_divisible(w, h)?;
        let mut li = 0;
        let mut next = |tape: &mut Tape, x: Var, stats: &mut Stats, relu: bool| -> Result<Var> {
            let y = self.record_layer(tape, li, x, pv, stats)?;
            li += 1;
            if relu {
                tape.relu(y)
            } else {
                Ok(y)
            }
        };
        let mut hcur = next(tape, x, stats, true)?;
        hcur = next(tape, hcur, stats, true)?;
        hcur = next(tape, hcur, stats, true)?;
        for _ in 0..N_RES_BLOCKS {
            let a = next(tape, hcur, stats, true)?;
            let b = next(tape, a, stats, false)?;
            hcur = tape.add(hcur, b)?;
        }
        hcur = next(tape, hcur, stats, true)?;
        hcur = next(tape, hcur, stats, true)?;
        next(tape, hcur, stats, false)
    }

    fn constant_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Inference-mode forward pass of a batch sharing extents.
    pub fn forward_batch(&self, models: &[&GridModel]) -> Result<Vec<GridModel>> {
        let x = batch_tensor(models)?;
        let (nx, ny) = (models[0].nx(), models[0].ny());
        check_divisible(nx, ny)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let pv = self.constant_params(&mut tape);
        let mut stats = Stats::Inference(self.bn_stats.clone());
        let out = self.record(&mut tape, xv, &pv, &mut stats)?;
        split_batch(tape.value(out), nx, ny)
    }

    pub fn forward(&self, m: &GridModel) -> Result<GridModel> {
        Ok(self.forward_batch(&[m])?.remove(0))
    }

    /// `f_W(m)` with `m = sample(pca, ξ)`, then the finalizer.
    pub fn generate(&self, pca: &PcaBasis, xi: &[f64], fin: &Finalizer) -> Result<GridModel> {
        fin.apply(&self.forward(&pca.sample(xi)?)?)
    }

    /// Batched [`Self::generate`], `chunk` models per forward pass.
    pub fn generate_many(&self, pca: &PcaBasis, xis: &[Vec<f64>], fin: &Finalizer, chunk: usize) -> Result<Vec<GridModel>> {
        let mut out = Vec::with_capacity(xis.len());
        for group in xis.chunks(chunk.max(1)) {
            let m_pca = group.iter().map(|xi| pca.sample(xi)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GridModel> = m_pca.iter().collect();
            for m in self.forward_batch(&refs)? {
                out.push(fin.apply(&m)?);
            }
        }
        Ok(out)
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut nt = NamedTensors::new();
        for (name, p) in self.names.iter().zip(&self.params) {
            nt.push(name.clone(), p.clone());
        }
        for l in &self.layers {
            if let Some(bi) = l.bn {
                let s = &self.bn_stats[bi];
                let c = l.spec.cout;
                nt.push(format!("{}.bn.mean", l.spec.name), Tensor::new(vec![c], s.mean.clone()).unwrap());
                nt.push(format!("{}.bn.var", l.spec.name), Tensor::new(vec![c], s.var.clone()).unwrap());
            }
        }
        nt
    }

    pub fn from_named(nt: &NamedTensors) -> Result<Self> {
        let mut net = TransformNet::build(0);
        for (name, p) in net.names.iter().zip(net.params.iter_mut()) {
            *p = nt.expect(name, p.shape())?.clone();
        }
        for l in &net.layers {
            if let Some(bi) = l.bn {
                let c = l.spec.cout;
                let s = &mut net.bn_stats[bi];
                s.mean = nt.expect(&format!("{}.bn.mean", l.spec.name), &[c])?.data().to_vec();
                s.var = nt.expect(&format!("{}.bn.var", l.spec.name), &[c])?.data().to_vec();
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_named().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&NamedTensors::load(path)?)
    }

    /// Trains in place and returns the per-iteration loss trace.
    pub fn train(&mut self, pca: &PcaBasis, cfg: &TrainConfig, loss_net: &LossNetwork, hd: Option<&HardData>) -> Result<TrainTrace> {
        self.train_with(pca, cfg, loss_net, hd, |_| {})
    }

    /// [`Self::train`] with a callback after every iteration.
    pub fn train_with(
        &mut self,
        pca: &PcaBasis,
        cfg: &TrainConfig,
        loss_net: &LossNetwork,
        hd: Option<&HardData>,
        mut on_iter: impl FnMut(&TraceRow),
    ) -> Result<TrainTrace> {
        cfg.validate(hd.is_some())?;
        let (nx, ny) = (pca.nx(), pca.ny());
        check_divisible(nx, ny)?;
        if let Some(h) = hd {
            if h.n_cells() != pca.n_cells() {
                return Err(Error::shape("train", "hard data does not match the PCA grid"));
            }
        }
        let style_target = loss_net.grams(&cfg.m_ref)?;
        let pool: Vec<GridModel> = (0..cfg.n_t)
            .map(|i| pca.sample(&pca.standard_latent(derive_seed(cfg.seed, i as u64))))
            .collect::<Result<_>>()?;
        let mask = hd.map(|h| Tensor::new(vec![ny, nx, 1], h.indicator()).expect("hard data matches grid"));
        let mut adam = AdamState::new(cfg.lr, &self.params);
        let mut order: Vec<usize> = Vec::new();
        let mut cursor = 0;
        let mut epoch = 0u64;
        let mut trace = TrainTrace::default();
        for it in 0..cfg.iterations {
            if cursor + cfg.n_b > order.len() {
                order = (0..cfg.n_t).collect();
                order.shuffle(&mut seeded(derive_seed(cfg.seed ^ 0x5eed_0f_e90c, epoch)));
                epoch += 1;
                cursor = 0;
            }
            let batch: Vec<&GridModel> = order[cursor..cursor + cfg.n_b].iter().map(|&i| &pool[i]).collect();
            cursor += cfg.n_b;
            let row = self.step(&batch, loss_net, &style_target, mask.as_ref(), cfg, &mut adam, it)?;
            on_iter(&row);
            trace.rows.push(row);
        }
        Ok(trace)
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        batch: &[&GridModel],
        loss_net: &LossNetwork,
        style_target: &GramSet,
        mask: Option<&Tensor>,
        cfg: &TrainConfig,
        adam: &mut AdamState,
        it: usize,
    ) -> Result<TraceRow> {
        let x = batch_tensor(batch)?;
        let content_target = {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let tap = loss_net.taps(&mut t, xv, CONTENT_TAP + 1)?[CONTENT_TAP];
            t.value(tap).clone()
        };
        let inv_nb = 1.0 / batch.len() as f64;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let pv: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut bn = std::mem::take(&mut self.bn_stats);
        let out = self.record(&mut tape, xv, &pv, &mut Stats::Train(&mut bn));
        self.bn_stats = bn;
        let out = out?;
        let taps = loss_net.taps(&mut tape, out, 4)?;
        let content = loss_net.content_term(&mut tape, taps[CONTENT_TAP], &content_target)?;
        let content = tape.scale(content, inv_nb)?;
        let mut total = content;
        let mut style_v = 0.0;
        if cfg.gamma_s != 0.0 {
            let style = loss_net.style_term(&mut tape, &taps, style_target)?;
            let style = tape.scale(style, inv_nb)?;
            style_v = tape.value(style).item()?;
            let weighted = tape.scale(style, cfg.gamma_s)?;
            total = tape.add(total, weighted)?;
        }
        let mut hard_v = 0.0;
        if let Some(mask) = mask {
            let n_h = mask.sum();
            let d = tape.sub(xv, out)?;
            let sq = tape.square(d)?;
            let mv = tape.constant(mask.clone());
            let masked = tape.mul(sq, mv)?;
            let s = tape.sum(masked)?;
            let hard = tape.scale(s, inv_nb / n_h)?;
            hard_v = tape.value(hard).item()?;
            let weighted = tape.scale(hard, cfg.gamma_h)?;
            total = tape.add(total, weighted)?;
        }
        let row = TraceRow {
            iteration: it,
            content: tape.value(content).item()?,
            style: style_v,
            hard: hard_v,
            total: tape.value(total).item()?,
        };
        if ![row.content, row.style, row.hard, row.total].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                content: row.content,
                style: row.style,
                hard: row.hard,
            });
        }
        let grads = tape.backward(total)?;
        let g: Vec<&Tensor> = pv.iter().map(|&v| grads.grad(v)).collect();
        adam_step(&mut self.params, &g, adam)?;
        Ok(row)
    }
}

impl DifferentiableTransform for TransformNet {
    fn apply(&self, m: &GridModel) -> Result<GridModel> {
        self.forward(m)
    }

    fn pullback(&self, m: &GridModel, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != m.n_cells() {
            return Err(Error::shape("pullback", "cotangent length differs from model size"));
        }
        check_divisible(m.nx(), m.ny())?;
        let mut tape = Tape::new();
        let xv = tape.leaf(m.to_tensor().reshape(&[1, m.ny(), m.nx(), 1])?);
        let pv = self.constant_params(&mut tape);
        let out = self.record(&mut tape, xv, &pv, &mut Stats::Inference(self.bn_stats.clone()))?;
        let c = tape.constant(Tensor::new(vec![1, m.ny(), m.nx(), 1], cotangent.to_vec())?);
        let prod = tape.mul(out, c)?;
        let s = tape.sum(prod)?;
        let grads = tape.backward(s)?;
        Ok(grads.grad(xv).data().to_vec())
    }
}

/// `∂J(f(sample(pca, ξ)))/∂ξ` where `functional` returns `J` and `∂J/∂output`.
pub fn latent_gradient(
    net: &dyn DifferentiableTransform,
    pca: &PcaBasis,
    xi: &[f64],
    functional: impl Fn(&GridModel) -> (f64, Vec<f64>),
) -> Result<(f64, Vec<f64>)> {
    let m = pca.sample(xi)?;
    let out = net.apply(&m)?;
    let (j, g_out) = functional(&out);
    let g_in = net.pullback(&m, &g_out)?;
    Ok((j, pca.latent_pullback(&g_in)?))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finalizer {
    Threshold(f64),
    Bimodal(BimodalParams),
    None,
}

impl Finalizer {
    pub fn apply(&self, m: &GridModel) -> Result<GridModel> {
        match self {
            Finalizer::Threshold(c) => Ok(m.hard_threshold(*c)),
            Finalizer::Bimodal(p) => opca_bimodal(m, p),
            Finalizer::None => Ok(m.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub n_t: usize,
    pub n_b: usize,
    pub lr: f64,
    pub iterations: usize,
    pub gamma_s: f64,
    pub gamma_h: f64,
    pub seed: u64,
    pub m_ref: GridModel,
}

impl TrainConfig {
    /// Pool of 3000, batches of 4, learning rate 1e-3, 2250 iterations, `γ_s = 0.3`, `γ_h = 16`.
    pub fn new(m_ref: GridModel) -> Self {
        TrainConfig {
            n_t: 3000,
            n_b: 4,
            lr: 1e-3,
            iterations: 2250,
            gamma_s: 0.3,
            gamma_h: 16.0,
            seed: 0,
            m_ref,
        }
    }

    pub fn validate(&self, conditional: bool) -> Result<()> {
        if self.n_b == 0 || self.n_b > self.n_t {
            return Err(Error::invalid(format!("batch size {} must be in 1..={}", self.n_b, self.n_t)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.gamma_s >= 0.0 && self.gamma_s.is_finite()) {
            return Err(Error::invalid(format!("gamma_s must be non-negative, got {}", self.gamma_s)));
        }
        if conditional && !(self.gamma_h > 0.0 && self.gamma_h.is_finite()) {
            return Err(Error::invalid(format!("gamma_h must be positive with hard data, got {}", self.gamma_h)));
        }
        Ok(())
    }

    pub fn epochs(&self) -> f64 {
        (self.iterations * self.n_b) as f64 / self.n_t as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub content: f64,
    pub style: f64,
    pub hard: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    /// Mean total loss over `rows[start..start + len]`.
    pub fn window_mean(&self, start: usize, len: usize) -> Option<f64> {
        let w = self.rows.get(start..start.checked_add(len)?)?;
        if w.is_empty() {
            return None;
        }
        Some(w.iter().map(|r| r.total).sum::<f64>() / w.len() as f64)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "content", "style", "hard", "total"])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
        for r in &self.rows {
            out.write_record([
                r.iteration.to_string(),
                r.content.to_string(),
                r.style.to_string(),
                r.hard.to_string(),
                r.total.to_string(),
            ])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Retrain-from-scratch search over `γ_h = start, 2·start, …` up to `cap`.
#[derive(Clone, Debug)]
pub struct GammaHSchedule {
    pub start: f64,
    pub cap: f64,
    pub n_check: usize,
    pub check_seed: u64,
    pub cutoff: f64,
}

impl Default for GammaHSchedule {
    fn default() -> Self {
        GammaHSchedule {
            start: 4.0,
            cap: 64.0,
            n_check: 200,
            check_seed: 0xc4ec,
            cutoff: 0.5,
        }
    }
}

pub struct ScheduleOutcome {
    pub net: TransformNet,
    pub gamma_h: f64,
    pub honoring_rate: f64,
    /// `(γ_h, honoring rate)` for each attempt.
    pub attempts: Vec<(f64, f64)>,
    pub trace: TrainTrace,
}

/// Trains with increasing `γ_h` until all `n_check` thresholded models honor the
/// hard data or the cap is reached; the last attempt is returned either way.
pub fn train_with_gamma_h_schedule(
    init_seed: u64,
    pca: &PcaBasis,
    cfg: &TrainConfig,
    loss_net: &LossNetwork,
    hd: &HardData,
    sched: &GammaHSchedule,
) -> Result<ScheduleOutcome> {
    if !(sched.start > 0.0 && sched.cap >= sched.start) {
        return Err(Error::invalid("gamma_h schedule needs 0 < start <= cap"));
    }
    let xis: Vec<Vec<f64>> = (0..sched.n_check)
        .map(|i| pca.standard_latent(derive_seed(sched.check_seed, i as u64)))
        .collect();
    let mut attempts = Vec::new();
    let mut gamma_h = sched.start;
    loop {
        let mut net = TransformNet::build(init_seed);
        let mut c = cfg.clone();
        c.gamma_h = gamma_h;
        let trace = net.train(pca, &c, loss_net, Some(hd))?;
        let models = net.generate_many(pca, &xis, &Finalizer::Threshold(sched.cutoff), 8)?;
        let rate = honoring_rate(&models, hd, 1e-9)?;
        attempts.push((gamma_h, rate));
        if rate >= 1.0 || gamma_h * 2.0 > sched.cap {
            return Ok(ScheduleOutcome {
                net,
                gamma_h,
                honoring_rate: rate,
                attempts,
                trace,
            });
        }
        gamma_h *= 2.0;
    }
}
