//! Command-line workflows: fixture generation, PCA, O-PCA calibration, training,
//! generation, flow studies and history matching.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow_sim::{
    buckley_leverett_check, cumulative_cdf, default_wells, ensemble_stats, read_schedule, simulate, simulate_ensemble,
    PercentileSeries, Quantity, RateSeries, ReservoirConfig, Selector, WellRole, WellSpec,
};
use crate::geomodel::{
    check_hard_data, gen_fixture_ensemble, gen_synthetic_channels, honoring_rate, read_hard_data, ChannelParams, Ensemble,
    GridModel, HardData, PropertyMap,
};
use crate::history_match::{run_rml_with, write_traces_csv, ForwardModel, Generator, ObsData, Pipeline, PsoMadsConfig};
use crate::loss_net::LossNetwork;
use crate::opca::{calibrate_bimodal, opca_binary, BimodalParams};
use crate::pca::PcaBasis;
use crate::rng::derive_seed;
use crate::transform_net::{train_with_gamma_h_schedule, Finalizer, GammaHSchedule, TrainConfig, TransformNet};

#[derive(Parser, Debug)]
#[command(name = "cnnpca", version, about = "CNN-PCA geological parameterization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthetic channel ensemble, training image and truth model.
    GenFixture(Common),
    /// PCA basis from an ensemble.
    BuildPca(Common),
    /// Bimodal O-PCA parameters by histogram matching.
    CalibrateOpca(Common),
    /// Train the model transform net.
    Train(Common),
    /// Generate new realizations.
    Generate(Common),
    /// P10/P50/P90 flow statistics for prior, O-PCA and CNN-PCA ensembles.
    FlowStudy(FlowArgs),
    /// Randomized-maximum-likelihood history matching.
    HistoryMatch(Common),
    /// Hard-data honoring report for an ensemble.
    CheckHardData(Common),
}

#[derive(Args, Debug)]
pub struct Common {
    /// INI-style `key = value` run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run only the Buckley–Leverett self-check.
    #[arg(long)]
    pub bl_check: bool,
}

/// Keys accepted in a run configuration.
pub const KEYS: &[&str] = &[
    "out_dir",
    "ensemble",
    "training_image",
    "weights",
    "hard_data",
    "schedule",
    "holdout_schedule",
    "pca",
    "net",
    "observations",
    "truth",
    "fallback_loss_net",
    "loss_net_seed",
    "l",
    "gamma",
    "gamma_s",
    "gamma_h",
    "gamma_h_schedule",
    "n_t",
    "n_b",
    "lr",
    "iterations",
    "seed",
    "horizon",
    "history_days",
    "finalizer",
    "cutoff",
    "method",
    "count",
    "n_probe",
    "nx",
    "ny",
    "n_channels",
    "orientation",
    "width",
    "ti_nx",
    "ti_ny",
    "ti_channels",
    "report_interval",
    "pressure_interval",
    "mobility_tolerance",
    "n_posterior",
    "swarm",
    "hm_iterations",
    "noise_seed",
    "bimodal_gamma",
    "bimodal_mu1",
    "bimodal_mu2",
    "bimodal_var1",
    "bimodal_var2",
    "bimodal_lo",
    "bimodal_hi",
];

/// Keys naming input files; each must exist when present.
pub const INPUT_PATHS: &[&str] = &[
    "ensemble",
    "training_image",
    "weights",
    "hard_data",
    "schedule",
    "holdout_schedule",
    "pca",
    "net",
    "observations",
    "truth",
];

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
    text: String,
    overrides: Vec<String>,
}

impl RunConfig {
    /// Parses `key = value` lines; `#`/`;` comment lines and `[section]` headers are ignored.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(cfg_err(format!("line {}: unknown key '{k}'", n + 1)));
            }
            if values.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key '{k}'", n + 1)));
            }
        }
        Ok(RunConfig {
            values,
            base_dir: base_dir.into(),
            text: text.to_string(),
            overrides: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(cfg_err(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        self.overrides.push(format!("{key}={value}"));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| cfg_err(format!("{key}: cannot parse '{v}'"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        let v: f64 = self.parsed(key, default)?;
        if !v.is_finite() {
            return Err(cfg_err(format!("{key} must be finite")));
        }
        Ok(v)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(cfg_err(format!("{key}: expected true or false, got '{v}'"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|p| self.base_dir.join(p))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| cfg_err(format!("missing required key '{key}'")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out_dir").unwrap_or_else(|| self.base_dir.join("out"))
    }

    pub fn validate_paths(&self) -> Result<()> {
        for key in INPUT_PATHS {
            if let Some(p) = self.path(key) {
                if !p.is_file() {
                    return Err(cfg_err(format!("{key}: file not found: {}", p.display())));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the config text, overrides and every referenced input file.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.text.as_bytes());
        for o in &self.overrides {
            h.update(b"\0");
            h.update(o.as_bytes());
        }
        for key in INPUT_PATHS {
            if let Some(p) = self.path(key) {
                h.update(key.as_bytes());
                h.update(fs::read(&p)?);
            }
        }
        Ok(hex(&h.finalize()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

/// Output bundle rooted at `out_dir` with `models/`, `stats/`, `traces/` and `posterior/`.
struct Bundle {
    root: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Bundle {
    fn new(root: PathBuf) -> Result<Self> {
        for sub in ["models", "stats", "traces", "posterior"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Bundle {
            root,
            outputs: Vec::new(),
        })
    }

    fn file(&mut self, rel: &str) -> PathBuf {
        let p = self.root.join(rel);
        self.outputs.push(p.clone());
        p
    }

    fn writer(&mut self, rel: &str) -> Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(fs::File::create(self.file(rel))?))
    }

    fn manifest(&self, command: &str, cfg: &RunConfig, config_path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut inputs = serde_json::Map::new();
        for key in INPUT_PATHS {
            if let Some(p) = cfg.path(key) {
                inputs.insert(
                    key.to_string(),
                    serde_json::json!({ "path": p.display().to_string(), "sha256": sha256_file(&p)? }),
                );
            }
        }
        let mut outputs = Vec::new();
        for p in &self.outputs {
            outputs.push(serde_json::json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? }));
        }
        let m = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config_path.display().to_string(),
            "config_hash": cfg.hash()?,
            "seed": cfg.u64_or("seed", 0)?,
            "settings": cfg.values,
            "inputs": inputs,
            "outputs": outputs,
            "summary": extra,
        });
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::format("JSON", e.to_string()))?;
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Runs one command; the returned error carries the process exit code.
pub fn run(cli: Cli) -> std::result::Result<(), (i32, String)> {
    let code = |e: Error| match e {
        Error::Config(_) => (2, e.to_string()),
        _ => (1, e.to_string()),
    };
    let (name, common, bl) = match &cli.command {
        Command::GenFixture(c) => ("gen-fixture", c, false),
        Command::BuildPca(c) => ("build-pca", c, false),
        Command::CalibrateOpca(c) => ("calibrate-opca", c, false),
        Command::Train(c) => ("train", c, false),
        Command::Generate(c) => ("generate", c, false),
        Command::FlowStudy(f) => ("flow-study", &f.common, f.bl_check),
        Command::HistoryMatch(c) => ("history-match", c, false),
        Command::CheckHardData(c) => ("check-hard-data", c, false),
    };
    let cfg = load_config(common).map_err(code)?;
    let mut bundle = Bundle::new(cfg.out_dir()).map_err(code)?;
    let summary = match name {
        "gen-fixture" => cmd_gen_fixture(&cfg, &mut bundle),
        "build-pca" => cmd_build_pca(&cfg, &mut bundle),
        "calibrate-opca" => cmd_calibrate_opca(&cfg, &mut bundle),
        "train" => cmd_train(&cfg, &mut bundle),
        "generate" => cmd_generate(&cfg, &mut bundle),
        "flow-study" if bl => cmd_bl_check(&cfg, &mut bundle),
        "flow-study" => cmd_flow_study(&cfg, &mut bundle),
        "history-match" => cmd_history_match(&cfg, &mut bundle),
        _ => cmd_check_hard_data(&cfg, &mut bundle),
    }
    .map_err(code)?;
    bundle.manifest(name, &cfg, &common.config, summary).map_err(code)
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| cfg_err(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate_paths()?;
    Ok(cfg)
}

fn channel_params(cfg: &RunConfig) -> Result<ChannelParams> {
    Ok(ChannelParams::new(
        cfg.usize_or("nx", 60)?,
        cfg.usize_or("ny", 60)?,
        cfg.usize_or("n_channels", 4)?,
        cfg.f64_or("orientation", 0.0)?,
        cfg.f64_or("width", 5.0)?,
    ))
}

fn hard_data(cfg: &RunConfig, nx: usize, ny: usize) -> Result<Option<HardData>> {
    cfg.path("hard_data").map(|p| read_hard_data(p, nx, ny)).transpose()
}

fn wells(cfg: &RunConfig, nx: usize, ny: usize) -> Result<Vec<WellSpec>> {
    match cfg.path("schedule") {
        Some(p) => read_schedule(p, nx, ny),
        None => Ok(default_wells(nx, ny)),
    }
}

fn reservoir(cfg: &RunConfig) -> Result<ReservoirConfig> {
    let d = ReservoirConfig::default();
    let r = ReservoirConfig {
        report_interval: cfg.f64_or("report_interval", d.report_interval)?,
        pressure_interval: cfg.f64_or("pressure_interval", d.pressure_interval)?,
        mobility_tolerance: cfg.f64_or("mobility_tolerance", d.mobility_tolerance)?,
        ..d
    };
    r.validate().map_err(|e| cfg_err(e.to_string()))?;
    Ok(r)
}

fn bimodal(cfg: &RunConfig) -> Result<BimodalParams> {
    let need = |k: &str| -> Result<f64> {
        cfg.get(k).ok_or_else(|| cfg_err(format!("finalizer = bimodal needs '{k}'")))?;
        cfg.f64_or(k, 0.0)
    };
    let p = BimodalParams {
        gamma: need("bimodal_gamma")?,
        mu1: need("bimodal_mu1")?,
        mu2: need("bimodal_mu2")?,
        var1: need("bimodal_var1")?,
        var2: need("bimodal_var2")?,
        lo: need("bimodal_lo")?,
        hi: need("bimodal_hi")?,
    };
    p.validate().map_err(|e| cfg_err(e.to_string()))?;
    Ok(p)
}

fn finalizer(cfg: &RunConfig) -> Result<Finalizer> {
    match cfg.get("finalizer").unwrap_or("threshold") {
        "threshold" => Ok(Finalizer::Threshold(cfg.f64_or("cutoff", 0.5)?)),
        "bimodal" => Ok(Finalizer::Bimodal(bimodal(cfg)?)),
        "none" => Ok(Finalizer::None),
        other => Err(cfg_err(format!("finalizer must be threshold, bimodal or none, got '{other}'"))),
    }
}

fn generator(cfg: &RunConfig, default: &str) -> Result<Generator> {
    match cfg.get("method").unwrap_or(default) {
        "pca" => Ok(Generator::Pca(finalizer(cfg)?)),
        "opca" => Ok(Generator::Opca(cfg.f64_or("gamma", 0.8)?)),
        "cnn" => {
            let net = TransformNet::load(cfg.require_path("net")?)?;
            Ok(Generator::Cnn(Box::new(net), finalizer(cfg)?))
        }
        other => Err(cfg_err(format!("method must be pca, opca or cnn, got '{other}'"))),
    }
}

fn latents(pca: &PcaBasis, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count).map(|i| pca.standard_latent(derive_seed(seed, i as u64))).collect()
}

fn generate_with(g: &Generator, pca: &PcaBasis, xis: &[Vec<f64>]) -> Result<Vec<GridModel>> {
    match g {
        Generator::Cnn(net, fin) => net.generate_many(pca, xis, fin, 8),
        Generator::Opca(gamma) => xis.iter().map(|x| opca_binary(&pca.sample(x)?, *gamma)).collect(),
        Generator::Pca(fin) => xis.iter().map(|x| fin.apply(&pca.sample(x)?)).collect(),
    }
}

fn load_loss_net(cfg: &RunConfig) -> Result<LossNetwork> {
    match cfg.path("weights") {
        Some(p) => LossNetwork::load(p),
        None if cfg.bool_or("fallback_loss_net", true)? => Ok(LossNetwork::fallback(cfg.u64_or("loss_net_seed", 1)?)),
        None => Err(cfg_err("no 'weights' file given and fallback_loss_net = false")),
    }
}

fn cmd_gen_fixture(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let p = channel_params(cfg)?;
    let seed = cfg.u64_or("seed", 0)?;
    let count = cfg.usize_or("count", 200)?;
    let hd = hard_data(cfg, p.nx, p.ny)?;
    let ens = gen_fixture_ensemble(count, &p, seed, hd.as_ref())?;
    ens.save(b.file("models/fixture.gpe"))?;
    let ti = ChannelParams::new(
        cfg.usize_or("ti_nx", 2 * p.nx)?,
        cfg.usize_or("ti_ny", 2 * p.ny)?,
        cfg.usize_or("ti_channels", 2 * p.n_channels)?,
        p.orientation_deg,
        p.width_cells,
    );
    gen_synthetic_channels(&ti, derive_seed(seed, 0x7197), None)?.save(b.file("models/ti.gpm"))?;
    gen_synthetic_channels(&p, derive_seed(seed, 0x7a07), hd.as_ref())?.save(b.file("models/truth.gpm"))?;
    println!("wrote {count} fixture models, a {}x{} training image and a truth model", ti.nx, ti.ny);
    Ok(serde_json::json!({ "count": count }))
}

fn cmd_build_pca(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let ens = Ensemble::load(cfg.require_path("ensemble")?)?;
    let l = cfg.usize_or("l", 40)?;
    let max_l = (ens.nx() * ens.ny()).min(ens.len().saturating_sub(1));
    if l == 0 || l > max_l {
        return Err(cfg_err(format!("l = {l} must be in 1..={max_l} for this ensemble")));
    }
    let pca = PcaBasis::build(&ens, l)?;
    pca.save(b.file("models/pca.nnw"))?;
    let energy = pca.energy_fraction(l)?;
    let mut w = csv::Writer::from_writer(b.writer("stats/spectrum.csv")?);
    let e = |e: csv::Error| Error::format("CSV", e.to_string());
    w.write_record(["k", "singular_value", "energy"]).map_err(e)?;
    for (k, s) in pca.spectrum().iter().enumerate() {
        w.write_record([(k + 1).to_string(), s.to_string(), pca.energy_fraction(k + 1)?.to_string()])
            .map_err(e)?;
    }
    w.flush()?;
    println!("PCA basis l = {l} from {} models retains {:.2}% of the energy", ens.len(), 100.0 * energy);
    Ok(serde_json::json!({ "l": l, "energy": energy }))
}

fn cmd_calibrate_opca(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let ens = Ensemble::load(cfg.require_path("ensemble")?)?;
    let pca = PcaBasis::load(cfg.require_path("pca")?)?;
    let c = calibrate_bimodal(&ens, &pca, cfg.usize_or("n_probe", 100)?, cfg.u64_or("seed", 0)?)?;
    let p = c.params;
    let mut w = b.writer("models/bimodal.ini")?;
    writeln!(w, "finalizer = bimodal")?;
    for (k, v) in [
        ("bimodal_gamma", p.gamma),
        ("bimodal_mu1", p.mu1),
        ("bimodal_mu2", p.mu2),
        ("bimodal_var1", p.var1),
        ("bimodal_var2", p.var2),
        ("bimodal_lo", p.lo),
        ("bimodal_hi", p.hi),
    ] {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    if !c.converged {
        eprintln!("warning: calibration stopped at the evaluation budget before converging");
    }
    println!(
        "bimodal O-PCA: gamma {:.4} mu1 {:.4} mu2 {:.4} var1 {:.4} var2 {:.4} (histogram misfit {:.4e})",
        p.gamma, p.mu1, p.mu2, p.var1, p.var2, c.misfit
    );
    Ok(serde_json::json!({ "misfit": c.misfit, "converged": c.converged, "evaluations": c.evaluations }))
}

fn cmd_train(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let pca = PcaBasis::load(cfg.require_path("pca")?)?;
    let m_ref = GridModel::load(cfg.require_path("training_image")?)?;
    let ln = load_loss_net(cfg)?;
    let hd = hard_data(cfg, pca.nx(), pca.ny())?;
    let seed = cfg.u64_or("seed", 0)?;
    let d = TrainConfig::new(m_ref);
    let tc = TrainConfig {
        n_t: cfg.usize_or("n_t", d.n_t)?,
        n_b: cfg.usize_or("n_b", d.n_b)?,
        lr: cfg.f64_or("lr", d.lr)?,
        iterations: cfg.usize_or("iterations", d.iterations)?,
        gamma_s: cfg.f64_or("gamma_s", d.gamma_s)?,
        gamma_h: cfg.f64_or("gamma_h", d.gamma_h)?,
        seed,
        ..d
    };
    tc.validate(hd.is_some()).map_err(|e| cfg_err(e.to_string()))?;
    let (net, trace, summary) = match &hd {
        Some(hd) if cfg.bool_or("gamma_h_schedule", false)? => {
            let out = train_with_gamma_h_schedule(derive_seed(seed, 1), &pca, &tc, &ln, hd, &GammaHSchedule::default())?;
            for (g, r) in &out.attempts {
                println!("gamma_h {g}: honoring rate {r:.4}");
            }
            let s = serde_json::json!({ "gamma_h": out.gamma_h, "honoring_rate": out.honoring_rate, "attempts": out.attempts });
            (out.net, out.trace, s)
        }
        _ => {
            let mut net = TransformNet::build(derive_seed(seed, 1));
            let trace = net.train(&pca, &tc, &ln, hd.as_ref())?;
            (net, trace, serde_json::json!({ "gamma_h": tc.gamma_h }))
        }
    };
    net.save(b.file("models/net.nnw"))?;
    trace.write_csv(b.writer("traces/train.csv")?)?;
    if let Some(r) = trace.rows.last() {
        println!(
            "trained {} iterations: content {:.4e} style {:.4e} hard {:.4e}",
            trace.rows.len(),
            r.content,
            r.style,
            r.hard
        );
    }
    Ok(summary)
}

fn write_honoring(b: &mut Bundle, models: &[GridModel], hd: &HardData, nx: usize) -> Result<f64> {
    let mut w = csv::Writer::from_writer(b.writer("stats/hard_data.csv")?);
    let e = |e: csv::Error| Error::format("CSV", e.to_string());
    w.write_record(["model", "i", "j", "value", "simulated", "pass"]).map_err(e)?;
    for (k, m) in models.iter().enumerate() {
        let rep = check_hard_data(m, hd, 1e-9)?;
        for (&(idx, v), pass) in hd.entries().iter().zip(&rep.per_well) {
            w.write_record([
                k.to_string(),
                (idx % nx).to_string(),
                (idx / nx).to_string(),
                v.to_string(),
                m.values()[idx].to_string(),
                pass.to_string(),
            ])
            .map_err(e)?;
        }
    }
    w.flush()?;
    honoring_rate(models, hd, 1e-9)
}

fn cmd_generate(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let pca = PcaBasis::load(cfg.require_path("pca")?)?;
    let count = cfg.usize_or("count", 200)?;
    if count == 0 {
        return Err(cfg_err("count must be at least 1: an ensemble cannot be empty"));
    }
    let g = generator(cfg, "cnn")?;
    let models = generate_with(&g, &pca, &latents(&pca, count, cfg.u64_or("seed", 0)?))?;
    let ens = Ensemble::new(models, format!("generated:{}", cfg.get("method").unwrap_or("cnn")))?;
    ens.save(b.file("models/generated.gpe"))?;
    println!("wrote {count} models");
    match hard_data(cfg, pca.nx(), pca.ny())? {
        Some(hd) => {
            let rate = write_honoring(b, ens.models(), &hd, pca.nx())?;
            println!("hard-data honoring rate {:.4} ({} of {count} models)", rate, (rate * count as f64).round());
            Ok(serde_json::json!({ "count": count, "honoring_rate": rate }))
        }
        None => Ok(serde_json::json!({ "count": count })),
    }
}

fn cmd_check_hard_data(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let ens = Ensemble::load(cfg.require_path("ensemble")?)?;
    let hd = read_hard_data(cfg.require_path("hard_data")?, ens.nx(), ens.ny())?;
    let rate = write_honoring(b, ens.models(), &hd, ens.nx())?;
    println!("hard-data honoring rate {rate:.4} over {} models", ens.len());
    Ok(serde_json::json!({ "honoring_rate": rate }))
}

fn cmd_bl_check(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let r = reservoir(cfg)?;
    let c = buckley_leverett_check(&r, 200)?;
    let mut w = b.writer("stats/bl_check.csv")?;
    writeln!(w, "n_cells,oracle_pvi,simulated_pvi,rel_error,max_water_balance")?;
    writeln!(w, "{},{},{},{},{}", c.n_cells, c.oracle_pvi, c.simulated_pvi, c.rel_error, c.max_water_balance)?;
    w.flush()?;
    println!(
        "Buckley-Leverett breakthrough: oracle {:.4} PVI, simulated {:.4} PVI, relative error {:.4}",
        c.oracle_pvi, c.simulated_pvi, c.rel_error
    );
    if c.rel_error > 0.1 {
        return Err(Error::invalid(format!("breakthrough error {:.4} exceeds 0.1", c.rel_error)));
    }
    Ok(serde_json::json!({ "rel_error": c.rel_error }))
}

/// Field totals followed by every well's rate of its own role.
pub fn study_selectors(wells: &[WellSpec]) -> Vec<(String, Selector)> {
    let mut s = vec![
        ("field_oil".to_string(), Selector::field(Quantity::OilRate)),
        ("field_water".to_string(), Selector::field(Quantity::WaterRate)),
        ("field_injection".to_string(), Selector::field(Quantity::InjectionRate)),
    ];
    for (k, w) in wells.iter().enumerate() {
        match w.role {
            WellRole::Injector => s.push((format!("{}_injection", w.name), Selector::well(Quantity::InjectionRate, k))),
            WellRole::Producer => {
                s.push((format!("{}_oil", w.name), Selector::well(Quantity::OilRate, k)));
                s.push((format!("{}_water", w.name), Selector::well(Quantity::WaterRate, k)));
            }
        }
    }
    s
}

fn write_stats(w: impl Write, stats: &[(String, PercentileSeries)]) -> Result<()> {
    let e = |e: csv::Error| Error::format("CSV", e.to_string());
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["day".to_string()];
    for (name, _) in stats {
        for p in ["p10", "p50", "p90"] {
            head.push(format!("{name}_{p}"));
        }
    }
    out.write_record(&head).map_err(e)?;
    if let Some((_, first)) = stats.first() {
        for (t, day) in first.times.iter().enumerate() {
            let mut row = vec![day.to_string()];
            for (_, s) in stats {
                row.extend([s.p10[t].to_string(), s.p50[t].to_string(), s.p90[t].to_string()]);
            }
            out.write_record(&row).map_err(e)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn successful(name: &str, runs: Vec<Result<RateSeries>>) -> Result<Vec<RateSeries>> {
    let n = runs.len();
    let ok: Vec<RateSeries> = runs.into_iter().filter_map(|r| r.ok()).collect();
    if ok.len() < n {
        eprintln!("warning: {} of {n} {name} simulations failed and were excluded", n - ok.len());
    }
    Ok(ok)
}

fn cmd_flow_study(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let prior = Ensemble::load(cfg.require_path("ensemble")?)?;
    let pca = PcaBasis::load(cfg.require_path("pca")?)?;
    let net = TransformNet::load(cfg.require_path("net")?)?;
    let count = cfg.usize_or("count", 200)?.min(prior.len());
    let (nx, ny) = (prior.nx(), prior.ny());
    let wells = wells(cfg, nx, ny)?;
    let r = reservoir(cfg)?;
    let horizon = cfg.f64_or("horizon", 2000.0)?;
    let pm = PropertyMap::default();
    let xis = latents(&pca, count, cfg.u64_or("seed", 0)?);
    let opca = generate_with(&Generator::Opca(cfg.f64_or("gamma", 0.8)?), &pca, &xis)?;
    let cnn = generate_with(&Generator::Cnn(Box::new(net), finalizer(cfg)?), &pca, &xis)?;
    let sels = study_selectors(&wells);
    let mut all = Vec::new();
    for (name, models) in [("prior", &prior.models()[..count]), ("opca", &opca[..]), ("cnn", &cnn[..])] {
        let runs = successful(name, simulate_ensemble(models, &pm, &r, &wells, horizon))?;
        let stats = sels
            .iter()
            .map(|(n, s)| Ok((n.clone(), ensemble_stats(&runs, *s)?)))
            .collect::<Result<Vec<_>>>()?;
        write_stats(b.writer(&format!("stats/{name}_stats.csv"))?, &stats)?;
        let mut w = csv::Writer::from_writer(b.writer(&format!("stats/{name}_cdf.csv"))?);
        let e = |e: csv::Error| Error::format("CSV", e.to_string());
        w.write_record(["quantity", "value", "fraction"]).map_err(e)?;
        for (q, sel) in [("cum_oil", Quantity::CumOil), ("cum_water", Quantity::CumWater)] {
            for (v, f) in cumulative_cdf(&runs, Selector::field(sel), horizon)? {
                w.write_record([q.to_string(), v.to_string(), f.to_string()]).map_err(e)?;
            }
        }
        w.flush()?;
        all.push((name, runs.len(), stats));
    }
    let mut w = b.writer("stats/distances.csv")?;
    writeln!(w, "series,opca_to_prior,cnn_to_prior")?;
    let mut summary = serde_json::Map::new();
    for (k, (name, _)) in sels.iter().enumerate() {
        let d_o = all[1].2[k].1.l2_distance(&all[0].2[k].1)?;
        let d_c = all[2].2[k].1.l2_distance(&all[0].2[k].1)?;
        writeln!(w, "{name},{d_o},{d_c}")?;
        println!("{name}: L2 distance to prior statistics, O-PCA {d_o:.1}, CNN-PCA {d_c:.1}");
        summary.insert(name.clone(), serde_json::json!({ "opca": d_o, "cnn": d_c }));
    }
    w.flush()?;
    for (name, n, _) in &all {
        summary.insert(format!("{name}_runs"), serde_json::json!(n));
    }
    Ok(serde_json::Value::Object(summary))
}

/// Two producers at the midpoints of the right and top edges, opened at `start`.
pub fn default_holdout_wells(nx: usize, ny: usize, start: f64) -> Vec<WellSpec> {
    let mut p3 = WellSpec::new("P3", nx - 1 - nx / 10, ny / 2, WellRole::Producer, 315.0);
    let mut p4 = WellSpec::new("P4", nx / 2, ny - 1 - ny / 10, WellRole::Producer, 315.0);
    p3.start_day = start;
    p4.start_day = start;
    vec![p3, p4]
}

fn cmd_history_match(cfg: &RunConfig, b: &mut Bundle) -> Result<serde_json::Value> {
    let pca = PcaBasis::load(cfg.require_path("pca")?)?;
    let (nx, ny) = (pca.nx(), pca.ny());
    let wells = wells(cfg, nx, ny)?;
    let history = cfg.f64_or("history_days", 1000.0)?;
    let horizon = cfg.f64_or("horizon", 2000.0)?;
    let seed = cfg.u64_or("seed", 0)?;
    let reservoir = reservoir(cfg)?;
    let truth = cfg.path("truth").map(GridModel::load).transpose()?;
    let pipeline = Pipeline {
        pca,
        generator: generator(cfg, "cnn")?,
        props: PropertyMap::default(),
        reservoir,
        wells: wells.clone(),
        horizon: history,
        until_day: history,
    };
    let obs = match (cfg.path("observations"), &truth) {
        (Some(p), _) => ObsData::read_csv(std::io::BufReader::new(fs::File::open(p)?))?,
        (None, Some(t)) => ObsData::synthesize(&pipeline.simulate_model(t)?, history, cfg.u64_or("noise_seed", 1)?)?,
        (None, None) => return Err(cfg_err("history-match needs 'observations' or 'truth'")),
    };
    obs.write_csv(b.writer("stats/observations.csv")?)?;
    let opt = PsoMadsConfig {
        swarm: cfg.usize_or("swarm", 50)?,
        iterations: cfg.usize_or("hm_iterations", 24)?,
        ..Default::default()
    };
    opt.validate().map_err(|e| cfg_err(e.to_string()))?;
    let n_post = cfg.usize_or("n_posterior", 30)?;
    let outcomes = run_rml_with(&obs, &pipeline, n_post, &opt, seed, |r, o| match &o.result {
        Ok(res) => println!(
            "instance {r}: data mismatch {:.2} -> {:.2} ({} evaluations)",
            o.prior.data, res.best.data, res.evaluations
        ),
        Err(e) => println!("instance {r}: failed: {e}"),
    });
    write_traces_csv(b.writer("traces/hm_traces.csv")?, &outcomes)?;

    let mut summary = csv::Writer::from_writer(b.writer("posterior/summary.csv")?);
    let e = |e: csv::Error| Error::format("CSV", e.to_string());
    summary
        .write_record(["instance", "seed", "status", "prior_data", "prior_total", "data", "model", "total", "evaluations"])
        .map_err(e)?;
    let mut xi_out = csv::Writer::from_writer(b.writer("posterior/xi.csv")?);
    let mut models = Vec::new();
    let mut failed = 0;
    for (i, o) in outcomes.iter().enumerate() {
        let (status, best, evals) = match &o.result {
            Ok(r) if r.best.feasible() => ("ok".to_string(), Some(r), r.evaluations),
            Ok(r) => ("infeasible".to_string(), None, r.evaluations),
            Err(err) => (format!("error: {err}"), None, 0),
        };
        let (d, m, t) = best.map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.best.data, r.best.model, r.best.total));
        summary
            .write_record([
                i.to_string(),
                o.instance.seed.to_string(),
                status,
                o.prior.data.to_string(),
                o.prior.total.to_string(),
                d.to_string(),
                m.to_string(),
                t.to_string(),
                evals.to_string(),
            ])
            .map_err(e)?;
        match best {
            Some(r) => {
                let mut row = vec![i.to_string()];
                row.extend(r.best_x.iter().map(f64::to_string));
                xi_out.write_record(&row).map_err(e)?;
                models.push(pipeline.model(&r.best_x)?);
            }
            None => failed += 1,
        }
    }
    summary.flush()?;
    xi_out.flush()?;
    if models.is_empty() {
        return Err(Error::invalid("every history-matching instance failed"));
    }
    Ensemble::new(models.clone(), "posterior")?.save(b.file("posterior/posterior.gpe"))?;

    if let Some(t) = &truth {
        let extra = match cfg.path("holdout_schedule") {
            Some(p) => read_schedule(p, nx, ny)?,
            None => default_holdout_wells(nx, ny, history),
        };
        let mut all_wells = wells;
        all_wells.extend(extra.iter().cloned());
        let run = |m: &GridModel| simulate(m, &pipeline.props, &pipeline.reservoir, &all_wells, horizon);
        let truth_run = run(t)?;
        let post = successful("posterior", simulate_ensemble(&models, &pipeline.props, &pipeline.reservoir, &all_wells, horizon))?;
        let mut head = vec!["day".to_string()];
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for w in &extra {
            let k = all_wells.iter().position(|x| x.name == w.name).unwrap_or(0);
            for (q, quantity) in [("oil", Quantity::OilRate), ("water", Quantity::WaterRate)] {
                let sel = Selector::well(quantity, k);
                head.push(format!("truth_{}_{q}", w.name));
                cols.push(truth_run.series(sel)?);
                if post.len() >= 10 {
                    let s = ensemble_stats(&post, sel)?;
                    for (p, v) in [("p10", s.p10), ("p50", s.p50), ("p90", s.p90)] {
                        head.push(format!("posterior_{}_{q}_{p}", w.name));
                        cols.push(v);
                    }
                } else {
                    for (m, r) in post.iter().enumerate() {
                        head.push(format!("model{m}_{}_{q}", w.name));
                        cols.push(r.series(sel)?);
                    }
                }
            }
        }
        let mut w = csv::Writer::from_writer(b.writer("stats/holdout.csv")?);
        w.write_record(&head).map_err(e)?;
        for (t, day) in truth_run.times.iter().enumerate() {
            let mut row = vec![day.to_string()];
            row.extend(cols.iter().map(|c| c[t].to_string()));
            w.write_record(&row).map_err(e)?;
        }
        w.flush()?;
    }
    let ok: Vec<&_> = outcomes.iter().filter_map(|o| o.posterior()).filter(|r| r.best.feasible()).collect();
    let mut prior: Vec<f64> = outcomes.iter().map(|o| o.prior.data).collect();
    let mut post: Vec<f64> = ok.iter().map(|r| r.best.data).collect();
    prior.sort_by(f64::total_cmp);
    post.sort_by(f64::total_cmp);
    let med = |v: &[f64]| crate::flow_sim::percentile(v, 0.5);
    println!(
        "median data mismatch: prior {:.2}, posterior {:.2}; {} of {n_post} instances succeeded",
        med(&prior),
        med(&post),
        ok.len()
    );
    Ok(serde_json::json!({
        "n_posterior": n_post,
        "failed": failed,
        "median_prior_data_mismatch": med(&prior),
        "median_posterior_data_mismatch": med(&post),
    }))
}
