use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{RateSeries, WellRole, WellSpec};
use crate::error::{Error, Result};

/// Parses `name i j role bhp_bar start_day` lines; `#` starts a comment.
pub fn read_schedule(path: impl AsRef<Path>, nx: usize, ny: usize) -> Result<Vec<WellSpec>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut wells = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format("schedule", format!("line {}: {what} in `{line}`", ln + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("expected `name i j role bhp_bar start_day`"));
        }
        let i: usize = f[1].parse().map_err(|_| bad("bad i"))?;
        let j: usize = f[2].parse().map_err(|_| bad("bad j"))?;
        let role = match f[3].to_ascii_lowercase().as_str() {
            "injector" | "inj" => WellRole::Injector,
            "producer" | "prod" => WellRole::Producer,
            _ => return Err(bad("role must be injector or producer")),
        };
        let bhp: f64 = f[4].parse().map_err(|_| bad("bad BHP"))?;
        let start_day: f64 = f[5].parse().map_err(|_| bad("bad start day"))?;
        if i >= nx || j >= ny {
            return Err(bad("well outside grid"));
        }
        wells.push(WellSpec {
            name: f[0].to_string(),
            i,
            j,
            role,
            bhp,
            start_day,
        });
    }
    if wells.is_empty() {
        return Err(Error::format("schedule", "no wells"));
    }
    Ok(wells)
}

pub fn write_schedule(path: impl AsRef<Path>, wells: &[WellSpec]) -> Result<()> {
    let mut w = fs::File::create(path)?;
    for s in wells {
        let role = match s.role {
            WellRole::Injector => "injector",
            WellRole::Producer => "producer",
        };
        writeln!(w, "{} {} {} {} {} {}", s.name, s.i, s.j, role, s.bhp, s.start_day)?;
    }
    Ok(())
}

/// `day` followed by `<well>_inj` for injectors and `<well>_oil`, `<well>_water` for producers.
pub fn write_rates_csv(w: impl Write, r: &RateSeries) -> Result<()> {
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["day".to_string()];
    for s in &r.wells {
        match s.role {
            WellRole::Injector => head.push(format!("{}_inj", s.name)),
            WellRole::Producer => {
                head.push(format!("{}_oil", s.name));
                head.push(format!("{}_water", s.name));
            }
        }
    }
    out.write_record(&head).map_err(csv_err)?;
    for (k, t) in r.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        for (w, s) in r.wells.iter().enumerate() {
            match s.role {
                WellRole::Injector => rec.push(r.injection_rate[w][k].to_string()),
                WellRole::Producer => {
                    rec.push(r.oil_rate[w][k].to_string());
                    rec.push(r.water_rate[w][k].to_string());
                }
            }
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
