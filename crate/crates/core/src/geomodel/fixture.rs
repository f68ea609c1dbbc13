//! Synthetic sinuous-channel models used as a stand-in prior ensemble in tests
//! and desk-scale runs. These are not multipoint-statistics simulations.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_hard_data, Ensemble, GridModel, HardData, ModelKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub nx: usize,
    pub ny: usize,
    pub n_channels: usize,
    /// Mean channel direction, degrees counter-clockwise from the x axis.
    pub orientation_deg: f64,
    pub width_cells: f64,
    pub max_retries: usize,
}

impl ChannelParams {
    pub fn new(nx: usize, ny: usize, n_channels: usize, orientation_deg: f64, width_cells: f64) -> Self {
        ChannelParams {
            nx,
            ny,
            n_channels,
            orientation_deg,
            width_cells,
            max_retries: 2000,
        }
    }
}

struct Channel {
    cos: f64,
    sin: f64,
    center: f64,
    amplitude: f64,
    wavelength: f64,
    phase: f64,
}

impl Channel {
    /// Along/across coordinates of point `(x, y)` relative to grid centre `(cx, cy)`.
    fn uv(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (dx, dy) = (x - cx, y - cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    fn centerline(&self, u: f64) -> f64 {
        self.center + self.amplitude * (2.0 * PI * u / self.wavelength + self.phase).sin()
    }
}

/// One binary channel model. With hard data, channel centerlines are seeded
/// through sand wells and whole models are redrawn until every datum is honored.
pub fn gen_synthetic_channels(p: &ChannelParams, seed: u64, hd: Option<&HardData>) -> Result<GridModel> {
    if p.nx == 0 || p.ny == 0 {
        return Err(Error::invalid("grid extents must be positive"));
    }
    if !(p.width_cells >= 1.0) {
        return Err(Error::invalid(format!("channel width must be at least 1 cell, got {}", p.width_cells)));
    }
    let n = p.nx * p.ny;
    if let Some(hd) = hd {
        if hd.n_cells() != n {
            return Err(Error::shape("gen_synthetic_channels", "hard data does not match grid"));
        }
    }
    let attempts = if hd.is_some() { p.max_retries.max(1) } else { 1 };
    let (cx, cy) = (p.nx as f64 / 2.0, p.ny as f64 / 2.0);
    let span = (p.nx.max(p.ny)) as f64;
    let half_diag = 0.5 * ((p.nx * p.nx + p.ny * p.ny) as f64).sqrt();
    for attempt in 0..attempts {
        let mut rng = seeded(derive_seed(seed, attempt as u64));
        let mut sand_wells: Vec<usize> = hd
            .map(|h| h.entries().iter().filter(|e| e.1 >= 0.5).map(|e| e.0).collect())
            .unwrap_or_default();
        sand_wells.shuffle(&mut rng);
        let mut channels = Vec::with_capacity(p.n_channels);
        for k in 0..p.n_channels {
            let theta = (p.orientation_deg + rng.random_range(-10.0..10.0)).to_radians();
            let mut ch = Channel {
                cos: theta.cos(),
                sin: theta.sin(),
                center: 0.0,
                amplitude: span * rng.random_range(0.04..0.12),
                wavelength: span * rng.random_range(0.5..1.2),
                phase: rng.random_range(0.0..2.0 * PI),
            };
            ch.center = match sand_wells.get(k) {
                Some(&idx) => {
                    let (u, v) = ch.uv((idx % p.nx) as f64 + 0.5, (idx / p.nx) as f64 + 0.5, cx, cy);
                    // jitter within the band so the well is not always on the centerline
                    v - ch.amplitude * (2.0 * PI * u / ch.wavelength + ch.phase).sin()
                        + rng.random_range(-0.25..0.25) * p.width_cells
                }
                None => rng.random_range(-half_diag..half_diag),
            };
            channels.push(ch);
        }
        let mut values = vec![0.0; n];
        for j in 0..p.ny {
            for i in 0..p.nx {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                if channels.iter().any(|ch| {
                    let (u, v) = ch.uv(x, y, cx, cy);
                    (v - ch.centerline(u)).abs() <= p.width_cells / 2.0
                }) {
                    values[j * p.nx + i] = 1.0;
                }
            }
        }
        let m = GridModel::new(p.nx, p.ny, values, ModelKind::Binary)?;
        match hd {
            Some(h) if !check_hard_data(&m, h, 1e-6)?.pass => continue,
            _ => return Ok(m),
        }
    }
    Err(Error::Conditioning { retries: attempts })
}

/// `count` fixture models; model `r` uses a seed derived from `(seed, r)`.
pub fn gen_fixture_ensemble(count: usize, p: &ChannelParams, seed: u64, hd: Option<&HardData>) -> Result<Ensemble> {
    let models = (0..count)
        .map(|r| gen_synthetic_channels(p, derive_seed(seed, r as u64), hd))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(models, format!("synthetic-channels seed={seed}"))
}
