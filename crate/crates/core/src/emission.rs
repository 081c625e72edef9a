//! Synthetic road-emission time series.
//!
//! Sources are known at knots t_k = k*h (h = 300 s by default) and
//! linearly interpolated in between, emulating traffic-emission data
//! aggregated on 5-minute frames. The generator is deterministic for a
//! fixed seed: per-cell series = double-peak diurnal profile x per-day
//! factor in [0.6, 1.0] x per-cell spatial weight x (1 + bounded noise),
//! clipped at zero. The noise is a per-cell combination of smooth daily
//! harmonics so the snapshot spectrum decays steadily, which is what
//! makes DEIM truncation meaningful.

use crate::grid::StructuredGrid;
use crate::scalar::Real;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmissionError {
    #[error("empty road-cell set")]
    EmptyRoads,
    #[error("time {t} outside the series horizon [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("need at least one day, got {0}")]
    NoDays(usize),
    #[error("malformed emission CSV: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig<R> {
    /// Sample interval (s).
    pub h: R,
    /// Length of one day segment (s).
    pub day_seconds: R,
    /// Multiplicative noise bound, in [0, 0.2].
    pub noise_amp: R,
    /// Number of daily harmonics composing the noise.
    pub n_harmonics: usize,
    /// Geometric decay of harmonic amplitudes.
    pub harmonic_decay: R,
    /// Overall magnitude (kg/(m^3 s)).
    pub base_scale: R,
    pub weight_min: R,
    pub weight_max: R,
}

impl<R: Real> Default for ProfileConfig<R> {
    fn default() -> Self {
        Self {
            h: R::of(300.0),
            day_seconds: R::of(86_400.0),
            noise_amp: R::of(0.2),
            n_harmonics: 10,
            harmonic_decay: R::of(0.97),
            base_scale: R::of(1e-6),
            weight_min: R::of(0.5),
            weight_max: R::of(1.0),
        }
    }
}

/// Double-peak diurnal shape (morning and evening rush), unit scale.
pub fn diurnal_profile<R: Real>(t_of_day: R, day_seconds: R) -> R {
    let t = t_of_day.to_f64() / day_seconds.to_f64() * 24.0; // hours
    let peak = |center: f64, width: f64| (-((t - center) / width).powi(2)).exp();
    R::of(0.15 + peak(8.0, 2.0) + 0.9 * peak(18.0, 2.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionSeries<R> {
    pub h: R,
    pub day_seconds: R,
    pub days: usize,
    pub seed: u64,
    pub road_cells: Vec<usize>,
    /// rows = road cells, columns = knot instants t_k = k*h.
    pub samples: DMatrix<R>,
    cell_row: HashMap<usize, usize>,
}

pub fn synthesize_series<R: Real>(
    seed: u64,
    days: usize,
    road_cells: &[usize],
    cfg: &ProfileConfig<R>,
) -> Result<EmissionSeries<R>, EmissionError> {
    if road_cells.is_empty() {
        return Err(EmissionError::EmptyRoads);
    }
    if days == 0 {
        return Err(EmissionError::NoDays(days));
    }
    let per_day = (cfg.day_seconds.to_f64() / cfg.h.to_f64()).ceil() as usize;
    let n_knots = days * per_day + 1; // day boundaries share a knot
    let n_cells = road_cells.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let day_factors: Vec<f64> = (0..days).map(|_| rng.gen_range(0.6..=1.0)).collect();
    let weights: Vec<f64> = (0..n_cells)
        .map(|_| rng.gen_range(cfg.weight_min.to_f64()..=cfg.weight_max.to_f64()))
        .collect();
    // Per-cell harmonic noise: amplitudes decay geometrically, phases random.
    let decay = cfg.harmonic_decay.to_f64();
    let amp = cfg.noise_amp.to_f64();
    let harmonics: Vec<Vec<(f64, f64)>> = (0..n_cells)
        .map(|_| {
            (1..=cfg.n_harmonics)
                .map(|m| {
                    let a = decay.powi(m as i32) * rng.gen_range(0.5..1.0);
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    (a, phase)
                })
                .collect()
        })
        .collect();

    let day_len = cfg.day_seconds.to_f64();
    let hf = cfg.h.to_f64();
    let mut samples = DMatrix::zeros(n_cells, n_knots);
    for k in 0..n_knots {
        let t = k as f64 * hf;
        let day = ((t / day_len) as usize).min(days - 1);
        let t_of_day = t - day as f64 * day_len;
        let base = diurnal_profile::<f64>(t_of_day, day_len);
        for c in 0..n_cells {
            let hs = &harmonics[c];
            let norm: f64 = hs.iter().map(|&(a, _)| a).sum();
            let noise = if norm > 0.0 && amp > 0.0 {
                let s: f64 = hs
                    .iter()
                    .enumerate()
                    .map(|(mi, &(a, ph))| {
                        let m = (mi + 1) as f64;
                        a * (std::f64::consts::TAU * m * t / day_len + ph).cos()
                    })
                    .sum();
                amp * s / norm
            } else {
                0.0
            };
            let v = cfg.base_scale.to_f64() * base * day_factors[day] * weights[c] * (1.0 + noise);
            samples[(c, k)] = R::of(v.max(0.0));
        }
    }

    let cell_row = road_cells.iter().enumerate().map(|(r, &c)| (c, r)).collect();
    Ok(EmissionSeries {
        h: cfg.h,
        day_seconds: cfg.day_seconds,
        days,
        seed,
        road_cells: road_cells.to_vec(),
        samples,
        cell_row,
    })
}

impl<R: Real> EmissionSeries<R> {
    pub fn horizon(&self) -> R {
        self.day_seconds * R::of(self.days as f64)
    }

    pub fn n_knots(&self) -> usize {
        self.samples.ncols()
    }

    fn bracket(&self, t: R) -> Result<(usize, R), EmissionError> {
        let tf = t.to_f64();
        let horizon = self.horizon().to_f64();
        if tf < 0.0 || tf > horizon * (1.0 + 1e-12) {
            return Err(EmissionError::OutOfRange { t: tf, horizon });
        }
        let hf = self.h.to_f64();
        let mut k = (tf / hf).floor() as usize;
        if k + 1 >= self.n_knots() {
            k = self.n_knots() - 2;
        }
        let frac = (tf - k as f64 * hf) / hf;
        Ok((k, R::of(frac)))
    }

    /// Full-order source field at time t: zero off road cells, linear
    /// interpolation between the bracketing knots on road cells.
    pub fn evaluate_source(&self, g: &StructuredGrid<R>, t: R) -> Result<Vec<R>, EmissionError> {
        let (k, frac) = self.bracket(t)?;
        let mut field = vec![R::zero(); g.n_active()];
        let one = R::one();
        for (r, &cell) in self.road_cells.iter().enumerate() {
            field[cell] = (one - frac) * self.samples[(r, k)] + frac * self.samples[(r, k + 1)];
        }
        Ok(field)
    }

    /// Point evaluation at a single cell; zero off the road support.
    /// This is the cheap online path used by DEIM magic points.
    pub fn value_at_cell(&self, cell: usize, t: R) -> Result<R, EmissionError> {
        let (k, frac) = self.bracket(t)?;
        Ok(match self.cell_row.get(&cell) {
            Some(&r) => (R::one() - frac) * self.samples[(r, k)] + frac * self.samples[(r, k + 1)],
            None => R::zero(),
        })
    }

    /// CSV body: one row per road cell, first column the cell index.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (r, &cell) in self.road_cells.iter().enumerate() {
            out.push_str(&cell.to_string());
            for k in 0..self.n_knots() {
                out.push(',');
                out.push_str(&format!("{:e}", self.samples[(r, k)].to_f64()));
            }
            out.push('\n');
        }
        out
    }

    /// Header companion for the CSV body.
    pub fn header_toml(&self) -> String {
        format!(
            "h = {}\nday_seconds = {}\ndays = {}\nseed = {}\n",
            self.h.to_f64(),
            self.day_seconds.to_f64(),
            self.days,
            self.seed
        )
    }

    /// Imports an externally produced series of the same CSV shape.
    pub fn from_csv(h: R, day_seconds: R, days: usize, seed: u64, csv: &str) -> Result<Self, EmissionError> {
        let mut road_cells = Vec::new();
        let mut rows: Vec<Vec<R>> = Vec::new();
        for line in csv.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split(',');
            let cell: usize = it
                .next()
                .ok_or_else(|| EmissionError::Parse("missing cell index".into()))?
                .trim()
                .parse()
                .map_err(|e| EmissionError::Parse(format!("cell index: {e}")))?;
            let vals: Result<Vec<R>, _> = it
                .map(|v| v.trim().parse::<f64>().map(R::of))
                .collect();
            road_cells.push(cell);
            rows.push(vals.map_err(|e| EmissionError::Parse(format!("value: {e}")))?);
        }
        if rows.is_empty() {
            return Err(EmissionError::EmptyRoads);
        }
        let n_knots = rows[0].len();
        if rows.iter().any(|r| r.len() != n_knots) {
            return Err(EmissionError::Parse("ragged rows".into()));
        }
        let per_day = (day_seconds.to_f64() / h.to_f64()).ceil() as usize;
        if n_knots != days * per_day + 1 {
            return Err(EmissionError::Parse(format!(
                "expected {} knots for {} days, got {}",
                days * per_day + 1,
                days,
                n_knots
            )));
        }
        let samples = DMatrix::from_fn(rows.len(), n_knots, |r, k| rows[r][k]);
        let cell_row = road_cells.iter().enumerate().map(|(r, &c)| (c, r)).collect();
        Ok(Self { h, day_seconds, days, seed, road_cells, samples, cell_row })
    }
}
