use super::{ReservoirConfig, Simulator, WellRole, WellSpec};
use crate::error::{Error, Result};

/// Pore volumes injected at water breakthrough for a one-dimensional displacement
/// from `sw_init`, via the Welge tangent to the fractional-flow curve.
pub fn buckley_leverett_breakthrough_pvi(cfg: &ReservoirConfig) -> f64 {
    let (s0, hi) = (cfg.sw_init, 1.0 - cfg.relperm.sor);
    let f0 = cfg.fractional_flow(s0);
    let slope = |s: f64| (cfg.fractional_flow(s) - f0) / (s - s0);
    let n = 20_000;
    let h = (hi - s0) / n as f64;
    let (mut best_s, mut best) = (hi, slope(hi));
    for i in 1..=n {
        let s = s0 + h * i as f64;
        if slope(s) > best {
            best = slope(s);
            best_s = s;
        }
    }
    // golden-section polish around the grid maximum
    let (mut a, mut b) = ((best_s - h).max(s0 + 1e-12), (best_s + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if slope(c) > slope(d) {
            b = d;
        } else {
            a = c;
        }
    }
    1.0 / slope(0.5 * (a + b)).max(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlCheck {
    pub oracle_pvi: f64,
    pub simulated_pvi: f64,
    pub rel_error: f64,
    pub n_cells: usize,
    pub max_water_balance: f64,
}

/// Water cut at the producer that marks breakthrough in the simulated run.
pub const BREAKTHROUGH_CUT: f64 = 0.01;

/// Runs a homogeneous `n_cells x 1` waterflood between end-cell wells and compares
/// the injected pore volumes at breakthrough with the analytic value.
pub fn buckley_leverett_check(cfg: &ReservoirConfig, n_cells: usize) -> Result<BlCheck> {
    if n_cells < 10 {
        return Err(Error::invalid("Buckley-Leverett check needs at least 10 cells"));
    }
    let poro = vec![0.2; n_cells];
    let perm = vec![100.0; n_cells];
    let wells = vec![
        WellSpec::new("I", 0, 0, WellRole::Injector, 335.0),
        WellSpec::new("P", n_cells - 1, 0, WellRole::Producer, 315.0),
    ];
    let pv_total = 0.2 * cfg.dx * cfg.dy * cfg.dz * n_cells as f64;
    let q0 = {
        let mut probe = Simulator::new(cfg, n_cells, 1, &poro, &perm, &wells)?;
        probe.solve_pressure(0.0, 0)?;
        probe.q[0]
    };
    if !(q0 > 0.0) {
        return Err(Error::invalid("no injection in the Buckley-Leverett setup"));
    }
    let oracle = buckley_leverett_breakthrough_pvi(cfg);
    let horizon = 4.0 * oracle * pv_total / q0;
    let mut c = cfg.clone();
    c.report_interval = horizon / 4000.0;
    c.pressure_interval = c.pressure_interval.min(c.report_interval);
    let r = Simulator::new(&c, n_cells, 1, &poro, &perm, &wells)?.run(horizon)?;
    let mut prev = (0.0, 0.0);
    for k in 0..r.times.len() {
        let (qw, qo) = (r.water_rate[1][k], r.oil_rate[1][k]);
        let cut = if qw + qo > 0.0 { qw / (qw + qo) } else { 0.0 };
        let pvi = r.cum_injection[0][k] / pv_total;
        if cut >= BREAKTHROUGH_CUT {
            let w = (BREAKTHROUGH_CUT - prev.0) / (cut - prev.0);
            let sim = prev.1 + w * (pvi - prev.1);
            return Ok(BlCheck {
                oracle_pvi: oracle,
                simulated_pvi: sim,
                rel_error: (sim - oracle).abs() / oracle,
                n_cells,
                max_water_balance: r.diagnostics.max_water_balance,
            });
        }
        prev = (cut, pvi);
    }
    Err(Error::invalid("no breakthrough within the simulated horizon"))
}
