//! Case-directory orchestration: offline stages, online runs, metrics.
//!
//! Every artifact lives under one case directory. Stages record a hash
//! of their inputs in `manifest.json`; re-running a stage whose inputs
//! are unchanged and whose outputs exist is a no-op unless forced.
//! Everything except wall-clock timing is bit-deterministic for a given
//! configuration, and timings are quarantined in `timing` CSVs so the
//! remaining outputs can be compared byte-for-byte.

use crate::config::ExperimentConfig;
use crate::deim::{build_deim, deim_error_curve, DeimModel};
use crate::emission::{synthesize_series, EmissionSeries, ProfileConfig};
use crate::flow::{solve_potential_flow_uniform, FluxField};
use crate::fom::{assemble_operators, run_fom_varying, SnapshotMatrix, SnapshotRole};
use crate::io;
use crate::mlp::{encode_wind, Activation, Mlp, TrainConfig};
use crate::pod::{compute_pod, PodBasis};
use crate::rom::{self, RomOperators, SourcePath};
use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

type Grid = crate::grid::StructuredGrid<f64>;

/// Per-day wind detections, linearly interpolated on velocity vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSchedule {
    pub day_seconds: f64,
    /// `days[d][k]` = (mu1, mu2) at sample k of day d.
    pub days: Vec<Vec<(f64, f64)>>,
}

impl WindSchedule {
    /// Deterministic synthesis: per-day seeded random walks in speed and
    /// direction, independent of which days are later simulated.
    pub fn generate(cfg: &ExperimentConfig) -> Self {
        let w = &cfg.wind;
        let n_days = cfg.n_days();
        let mut days = Vec::with_capacity(n_days);
        for d in 0..n_days {
            let mut rng = ChaCha8Rng::seed_from_u64(w.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(d as u64 + 1)));
            let (lo, hi) = (w.prevailing - w.dir_spread, w.prevailing + w.dir_spread);
            let mut mu1 = rng.gen_range(w.speed_min..=w.speed_max);
            let mut mu2 = rng.gen_range(lo..=hi);
            let step = (w.speed_max - w.speed_min) / 8.0;
            let mut samples = Vec::with_capacity(w.samples_per_day);
            for _ in 0..w.samples_per_day {
                samples.push((mu1, mu2));
                mu1 = (mu1 + rng.gen_range(-step..=step)).clamp(w.speed_min, w.speed_max);
                mu2 = (mu2 + rng.gen_range(-w.max_turn..=w.max_turn)).clamp(lo, hi);
            }
            days.push(samples);
        }
        WindSchedule { day_seconds: cfg.fom.day_seconds, days }
    }

    /// Cartesian far-field velocity at absolute time t, piecewise-linear
    /// between samples on the velocity vector (no angle-wrap artifacts).
    pub fn velocity_at(&self, t: f64) -> (f64, f64) {
        let d = ((t / self.day_seconds).floor() as usize).min(self.days.len() - 1);
        let samples = &self.days[d];
        let tau = (t - d as f64 * self.day_seconds).clamp(0.0, self.day_seconds);
        let spacing = self.day_seconds / (samples.len() - 1) as f64;
        let k = ((tau / spacing).floor() as usize).min(samples.len() - 2);
        let frac = (tau - k as f64 * spacing) / spacing;
        let vel = |&(m1, m2): &(f64, f64)| {
            let w = crate::flow::WindParameter::new(m1, m2);
            encode_wind(&w)
        };
        let a = vel(&samples[k]);
        let b = vel(&samples[k + 1]);
        (a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,sample,t,mu1,mu2,ux,uy\n");
        for (d, samples) in self.days.iter().enumerate() {
            let spacing = self.day_seconds / (samples.len() - 1) as f64;
            for (k, &(m1, m2)) in samples.iter().enumerate() {
                let t = d as f64 * self.day_seconds + k as f64 * spacing;
                let w = crate::flow::WindParameter::new(m1, m2);
                let [ux, uy] = encode_wind(&w);
                out.push_str(&format!("{d},{k},{t},{m1:e},{m2:e},{ux:e},{uy:e}\n"));
            }
        }
        out
    }
}

fn sha_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    format!("{:x}", h.finalize())
}

pub struct Case {
    pub root: PathBuf,
    pub cfg: ExperimentConfig,
    cfg_text: String,
    grid: std::cell::OnceCell<Grid>,
    fluxes: std::cell::OnceCell<(FluxField<f64>, FluxField<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageReport {
    pub ran: bool,
}

impl Case {
    /// generate-case: validates the config and writes the case skeleton
    /// (config copy, grid summary, wind schedule, emission series).
    pub fn create(root: &Path, cfg: ExperimentConfig) -> Result<Case> {
        cfg.validate()?;
        std::fs::create_dir_all(root)?;
        let cfg_text = cfg.to_toml();
        std::fs::write(root.join("config.toml"), &cfg_text)?;
        let case = Case {
            root: root.to_path_buf(),
            cfg,
            cfg_text,
            grid: Default::default(),
            fluxes: Default::default(),
        };
        let g = case.grid()?;
        std::fs::write(root.join("grid_summary.csv"), g.summary_csv())?;
        let schedule = WindSchedule::generate(&case.cfg);
        std::fs::write(root.join("wind_schedule.csv"), schedule.to_csv())?;
        let series = case.emissions()?;
        std::fs::write(root.join("emission.csv"), series.to_csv())?;
        let mut manifest = case.manifest()?;
        manifest.insert("case".into(), sha_hex(&[&case.cfg_text]));
        case.write_manifest(&manifest)?;
        Ok(case)
    }

    pub fn open(root: &Path) -> Result<Case> {
        let cfg_text = std::fs::read_to_string(root.join("config.toml"))
            .with_context(|| format!("no case at {}", root.display()))?;
        let cfg = ExperimentConfig::from_toml(&cfg_text)?;
        Ok(Case {
            root: root.to_path_buf(),
            cfg,
            cfg_text,
            grid: Default::default(),
            fluxes: Default::default(),
        })
    }

    pub fn grid(&self) -> Result<&Grid> {
        if self.grid.get().is_none() {
            let g = Grid::build(&self.cfg.grid)?;
            let _ = self.grid.set(g);
        }
        Ok(self.grid.get().unwrap())
    }

    pub fn emissions(&self) -> Result<EmissionSeries<f64>> {
        let g = self.grid()?;
        let e = &self.cfg.emission;
        let profile = ProfileConfig {
            h: e.h,
            day_seconds: self.cfg.fom.day_seconds,
            noise_amp: e.noise_amp,
            n_harmonics: e.n_harmonics,
            harmonic_decay: e.harmonic_decay,
            base_scale: e.base_scale,
            ..ProfileConfig::default()
        };
        Ok(synthesize_series(e.seed, self.cfg.n_days(), &g.road_cells, &profile)?)
    }

    pub fn schedule(&self) -> WindSchedule {
        WindSchedule::generate(&self.cfg)
    }

    /// Unit-velocity potential solves; every wind flux is a linear
    /// combination of these two.
    pub fn unit_fluxes(&self) -> Result<&(FluxField<f64>, FluxField<f64>)> {
        if self.fluxes.get().is_none() {
            let g = self.grid()?;
            let px = self.root.join("flux_unit_x.rmdm");
            let py = self.root.join("flux_unit_y.rmdm");
            let pair = if px.exists() && py.exists() {
                let fx = io::read_vector(&px)?;
                let fy = io::read_vector(&py)?;
                (FluxField { values: fx }, FluxField { values: fy })
            } else {
                let fx = solve_potential_flow_uniform(g, 1.0, 0.0)?;
                let fy = solve_potential_flow_uniform(g, 0.0, 1.0)?;
                io::write_vector(&px, &fx.values)?;
                io::write_vector(&py, &fy.values)?;
                (fx, fy)
            };
            let _ = self.fluxes.set(pair);
        }
        Ok(self.fluxes.get().unwrap())
    }

    pub fn flux_at(&self, t: f64, schedule: &WindSchedule) -> Result<FluxField<f64>> {
        let (ux, uy) = schedule.velocity_at(t);
        self.flux_for(ux, uy)
    }

    pub fn flux_for(&self, ux: f64, uy: f64) -> Result<FluxField<f64>> {
        let (fx, fy) = self.unit_fluxes()?;
        Ok(FluxField::linear_combination(fx, ux, fy, uy))
    }

    // -- manifest plumbing ------------------------------------------------

    fn manifest(&self) -> Result<BTreeMap<String, String>> {
        let p = self.root.join("manifest.json");
        if !p.exists() {
            return Ok(BTreeMap::new());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    fn write_manifest(&self, m: &BTreeMap<String, String>) -> Result<()> {
        std::fs::write(self.root.join("manifest.json"), serde_json::to_string_pretty(m)?)?;
        Ok(())
    }

    fn stage(
        &self,
        key: &str,
        input_hash: String,
        outputs: &[PathBuf],
        force: bool,
        run: impl FnOnce() -> Result<()>,
    ) -> Result<StageReport> {
        let mut manifest = self.manifest()?;
        let fresh = manifest.get(key) == Some(&input_hash) && outputs.iter().all(|p| p.exists());
        if fresh && !force {
            println!("{key}: up-to-date");
            return Ok(StageReport { ran: false });
        }
        run()?;
        manifest.insert(key.to_string(), input_hash);
        self.write_manifest(&manifest)?;
        println!("{key}: done");
        Ok(StageReport { ran: true })
    }

    fn upstream(&self, key: &str) -> Result<String> {
        self.manifest()?
            .get(key)
            .cloned()
            .with_context(|| format!("stage '{key}' has not been run"))
    }

    // -- stage: fom-run ---------------------------------------------------

    fn fom_day_path(&self, day: usize) -> PathBuf {
        self.root.join(format!("fom/day_{day}.rmdm"))
    }

    pub fn fom_run(&self, days: &[usize], force: bool) -> Result<Vec<StageReport>> {
        std::fs::create_dir_all(self.root.join("fom"))?;
        let g = self.grid()?;
        let series = self.emissions()?;
        let schedule = self.schedule();
        let mut reports = Vec::new();
        let mut days = days.to_vec();
        days.sort_unstable();
        days.dedup();
        for day in days {
            if day >= self.cfg.n_days() {
                bail!("day {day} outside the configured range");
            }
            let key = format!("fom:day{day}");
            let hash = sha_hex(&[&self.cfg_text, "fom", &day.to_string()]);
            let out = self.fom_day_path(day);
            let out2 = self.root.join(format!("fom/day_{day}_t.rmdm"));
            let (fx, fy) = self.unit_fluxes()?;
            let report = self.stage(&key, hash, &[out.clone(), out2.clone()], force, || {
                let t0 = day as f64 * self.cfg.fom.day_seconds;
                let (snaps, secs) = run_fom_varying(
                    g,
                    |t| {
                        let (ux, uy) = schedule.velocity_at(t);
                        Ok(fx.linear_combination(ux, fy, uy))
                    },
                    &series,
                    self.cfg.fom.nu,
                    t0,
                    self.cfg.fom.day_seconds,
                    self.cfg.fom.dt,
                    self.cfg.fom.record_every,
                )?;
                io::write_matrix(&out, &snaps.data)?;
                io::write_vector(&out2, &snaps.instants)?;
                append_timing(&self.root.join("fom/timing.csv"), "day,seconds", day, secs)?;
                Ok(())
            })?;
            reports.push(report);
        }
        Ok(reports)
    }

    pub fn load_fom_day(&self, day: usize) -> Result<SnapshotMatrix<f64>> {
        let data = io::read_matrix(&self.fom_day_path(day))?;
        let instants = io::read_vector(&self.root.join(format!("fom/day_{day}_t.rmdm")))?;
        Ok(SnapshotMatrix { data, instants, role: SnapshotRole::Concentration })
    }

    fn fom_day_secs(&self, day: usize) -> Result<f64> {
        read_timing(&self.root.join("fom/timing.csv"), day)
    }

    // -- stage: pod -------------------------------------------------------

    /// Concentration, flux and source POD from the training days.
    pub fn pod(&self, force: bool) -> Result<StageReport> {
        std::fs::create_dir_all(self.root.join("pod"))?;
        let mut upstream = vec![self.cfg_text.clone()];
        let train_days = self.sorted_train_days();
        for &d in &train_days {
            upstream.push(self.upstream(&format!("fom:day{d}"))?);
        }
        let hash = sha_hex(&upstream.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        let outs: Vec<PathBuf> = ["conc_modes", "conc_eigs", "flux_modes", "flux_eigs", "source_modes", "source_eigs"]
            .iter()
            .map(|n| self.root.join(format!("pod/{n}.rmdm")))
            .collect();
        self.stage("pod", hash, &outs, force, || {
            let g = self.grid()?;
            let series = self.emissions()?;
            let schedule = self.schedule();
            let vol = g.cell_volume();
            let wc = vec![vol; g.n_active()];

            // concentration snapshots: all recorded instants of the training days
            let mut cols: Vec<DMatrix<f64>> = Vec::new();
            let mut instants: Vec<f64> = Vec::new();
            for &d in &train_days {
                let s = self.load_fom_day(d)?;
                instants.extend(&s.instants);
                cols.push(s.data);
            }
            let nd = g.n_active();
            let total: usize = cols.iter().map(|c| c.ncols()).sum();
            let mut conc = DMatrix::zeros(nd, total);
            let mut at = 0;
            for c in &cols {
                conc.columns_mut(at, c.ncols()).copy_from(c);
                at += c.ncols();
            }
            let n_rb = self.cfg.reduction.n_rb.min(total);
            let conc_basis = compute_pod(&conc, &wc, n_rb, SnapshotRole::Concentration)?;
            io::write_matrix(&self.root.join("pod/conc_modes.rmdm"), &conc_basis.modes)?;
            io::write_vector(&self.root.join("pod/conc_eigs.rmdm"), &conc_basis.eigenvalues)?;
            std::fs::write(self.root.join("pod/conc_eigs.csv"), eigen_csv(&conc_basis))?;

            // convective face data (signed flux + magnitudes) at the
            // same instants; the magnitudes carry the upwind dissipation
            let mut flux = DMatrix::zeros(2 * g.n_faces(), instants.len());
            for (j, &t) in instants.iter().enumerate() {
                let aug = self.flux_at(t, &schedule)?.convective_data();
                for r in 0..2 * g.n_faces() {
                    flux[(r, j)] = aug[r];
                }
            }
            let wf = vec![1.0; 2 * g.n_faces()];
            let n_phi = self.cfg.reduction.n_phi.min(instants.len());
            let flux_basis = compute_pod(&flux, &wf, n_phi, SnapshotRole::Flux)?;
            io::write_matrix(&self.root.join("pod/flux_modes.rmdm"), &flux_basis.modes)?;
            io::write_vector(&self.root.join("pod/flux_eigs.rmdm"), &flux_basis.eigenvalues)?;
            std::fs::write(self.root.join("pod/flux_eigs.csv"), eigen_csv(&flux_basis))?;

            // source snapshots at the same instants
            let mut src = DMatrix::zeros(nd, instants.len());
            for (j, &t) in instants.iter().enumerate() {
                let f = series.evaluate_source(g, t)?;
                for r in 0..nd {
                    src[(r, j)] = f[r];
                }
            }
            let n_src = self.cfg.reduction.n_deim.max(60).min(instants.len());
            let src_basis = compute_pod(&src, &wc, n_src, SnapshotRole::Source)?;
            io::write_matrix(&self.root.join("pod/source_modes.rmdm"), &src_basis.modes)?;
            io::write_vector(&self.root.join("pod/source_eigs.rmdm"), &src_basis.eigenvalues)?;
            std::fs::write(self.root.join("pod/source_eigs.csv"), eigen_csv(&src_basis))?;
            Ok(())
        })
    }

    fn sorted_train_days(&self) -> Vec<usize> {
        let mut d = self.cfg.wind.train_days.clone();
        d.sort_unstable();
        d
    }

    fn load_basis(&self, name: &str, role: SnapshotRole) -> Result<PodBasis<f64>> {
        let modes = io::read_matrix(&self.root.join(format!("pod/{name}_modes.rmdm")))?;
        let eigenvalues = io::read_vector(&self.root.join(format!("pod/{name}_eigs.rmdm")))?;
        let g = self.grid()?;
        let weights = match role {
            SnapshotRole::Flux => vec![1.0; 2 * g.n_faces()],
            _ => vec![g.cell_volume(); g.n_active()],
        };
        Ok(PodBasis { modes, eigenvalues, weights, role })
    }

    pub fn conc_basis(&self) -> Result<PodBasis<f64>> {
        self.load_basis("conc", SnapshotRole::Concentration)
    }

    pub fn flux_basis(&self) -> Result<PodBasis<f64>> {
        self.load_basis("flux", SnapshotRole::Flux)
    }

    pub fn source_basis(&self) -> Result<PodBasis<f64>> {
        self.load_basis("source", SnapshotRole::Source)
    }

    /// DEIM size actually available given the source spectrum.
    pub fn deim_size(&self, requested: usize) -> Result<usize> {
        Ok(requested.min(self.source_basis()?.rank()))
    }

    // -- stage: deim-build ------------------------------------------------

    /// Builds the DEIM artifacts (magic points, error curve) for the
    /// configured size. The reduced map is re-derived at rom-build time
    /// against whichever concentration basis the ROM uses.
    pub fn deim_build(&self, n_deim: usize, force: bool) -> Result<StageReport> {
        std::fs::create_dir_all(self.root.join("deim"))?;
        let hash = sha_hex(&[&self.cfg_text, &self.upstream("pod")?, &n_deim.to_string()]);
        let key = format!("deim:{n_deim}");
        let out = self.root.join(format!("deim/magic_points_{n_deim}.csv"));
        let curve_out = self.root.join(format!("deim/error_curve_{n_deim}.csv"));
        self.stage(&key, hash, &[out.clone(), curve_out.clone()], force, || {
            let g = self.grid()?;
            let src_basis = self.source_basis()?;
            let n = n_deim.min(src_basis.rank());
            let conc = self.conc_basis()?;
            let model = build_deim(&src_basis, &conc, &g.road_cells, n)?;
            std::fs::write(&out, model.magic_points_csv(g))?;

            // error sweep on training and test source snapshots
            let series = self.emissions()?;
            let schedule_instants = |days: &[usize]| -> Result<DMatrix<f64>> {
                let mut instants = Vec::new();
                for &d in days {
                    let t0 = d as f64 * self.cfg.fom.day_seconds;
                    let steps =
                        (self.cfg.fom.day_seconds / self.cfg.fom.record_every).round() as usize;
                    for k in 0..=steps {
                        instants.push(t0 + k as f64 * self.cfg.fom.record_every);
                    }
                }
                let mut m = DMatrix::zeros(g.n_active(), instants.len());
                for (j, &t) in instants.iter().enumerate() {
                    let f = series.evaluate_source(g, t)?;
                    for r in 0..g.n_active() {
                        m[(r, j)] = f[r];
                    }
                }
                Ok(m)
            };
            let train = schedule_instants(&self.sorted_train_days())?;
            let mut test_days = self.cfg.wind.test_days.clone();
            test_days.sort_unstable();
            let test = schedule_instants(&test_days)?;
            let sizes: Vec<usize> = (1..=n).collect();
            let (_, csv) = deim_error_curve(&src_basis, &conc, &g.road_cells, &sizes, &train, &test)?;
            std::fs::write(&curve_out, csv)?;
            Ok(())
        })
    }

    // -- stage: train-flux-nn ---------------------------------------------

    /// Wind dataset: encoded velocities at the recorded instants of the
    /// training days, targets the exact flux projection coefficients.
    fn wind_dataset(&self, flux_basis: &PodBasis<f64>) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let schedule = self.schedule();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for &d in &self.sorted_train_days() {
            let t0 = d as f64 * self.cfg.fom.day_seconds;
            let steps = (self.cfg.fom.day_seconds / self.cfg.fom.record_every).round() as usize;
            for k in 0..=steps {
                let t = t0 + k as f64 * self.cfg.fom.record_every;
                let (ux, uy) = schedule.velocity_at(t);
                let f = self.flux_at(t, &schedule)?;
                let pi = flux_basis.project(&f.convective_data())?;
                inputs.push(vec![ux, uy]);
                targets.push(pi);
            }
        }
        // cover the whole admissible wind box with a deterministic grid so
        // the regression interpolates (never extrapolates) on test days;
        // these samples need no solver runs, only flux superposition
        let w = &self.cfg.wind;
        let m = 16;
        for i in 0..m {
            let speed = w.speed_min
                + (w.speed_max - w.speed_min) * i as f64 / (m - 1) as f64;
            for j in 0..m {
                let dir = (w.prevailing - w.dir_spread)
                    + 2.0 * w.dir_spread * j as f64 / (m - 1) as f64;
                let (ux, uy) = (speed * dir.cos(), speed * dir.sin());
                let f = self.flux_for(ux, uy)?;
                inputs.push(vec![ux, uy]);
                targets.push(flux_basis.project(&f.convective_data())?);
            }
        }
        Ok((inputs, targets))
    }

    pub fn train_net(&self, force: bool) -> Result<StageReport> {
        let hash = sha_hex(&[&self.cfg_text, &self.upstream("pod")?, "net-grid"]);
        let out = self.root.join("net.bin");
        let loss_out = self.root.join("net_loss.csv");
        self.stage("net", hash, &[out.clone(), loss_out.clone()], force, || {
            let flux_basis = self.flux_basis()?;
            let (inputs, targets) = self.wind_dataset(&flux_basis)?;
            let n_phi = flux_basis.n_modes();
            // deterministic split of the dataset
            let n_fit = ((inputs.len() as f64) * self.cfg.net.train_split).round() as usize;
            let n_fit = n_fit.clamp(1, inputs.len() - 1);
            let mut order: Vec<usize> = (0..inputs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.net.seed ^ 0x5bd1_e995);
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
                (
                    idx.iter().map(|&i| inputs[i].clone()).collect(),
                    idx.iter().map(|&i| targets[i].clone()).collect(),
                )
            };
            let (fit_x, fit_y) = pick(&order[..n_fit]);
            let (held_x, held_y) = pick(&order[n_fit..]);

            let mut sizes = vec![2];
            sizes.extend(&self.cfg.net.hidden);
            sizes.push(n_phi);
            let act = if self.cfg.net.relu { Activation::ReLU } else { Activation::Tanh };
            let mut net = Mlp::new(&sizes, act, self.cfg.net.seed)?;
            let loss_w: Vec<f64> = flux_basis.normalized_eigenvalues()[..n_phi].to_vec();
            let tc = TrainConfig {
                learning_rate: self.cfg.net.learning_rate,
                weight_decay: self.cfg.net.weight_decay,
                batch_size: self.cfg.net.batch_size,
                epochs: self.cfg.net.epochs,
                seed: self.cfg.net.seed,
            };
            let hist = net.train(&fit_x, &fit_y, &loss_w, Some(&held_x), Some(&held_y), &tc)?;
            io::write_net(&out, &net)?;
            std::fs::write(&loss_out, hist.csv())?;
            Ok(())
        })
    }

    // -- stage: rom-build -------------------------------------------------

    fn rom_key(&self, n_rb: usize, n_deim: usize, n_phi: usize) -> String {
        format!("rom_{n_rb}_{n_deim}_{n_phi}")
    }

    pub fn rom_build(
        &self,
        n_rb: usize,
        n_deim: usize,
        n_phi: usize,
        force: bool,
    ) -> Result<StageReport> {
        let key = self.rom_key(n_rb, n_deim, n_phi);
        let dir = self.root.join(&key);
        std::fs::create_dir_all(&dir)?;
        let hash = sha_hex(&[
            &self.cfg_text,
            &self.upstream("pod")?,
            &self.upstream("net")?,
            &key,
        ]);
        let outs = vec![dir.join("b_r.rmdm"), dir.join("gamma.rmdm"), dir.join("deim_map.rmdm")];
        let stage_key = format!("rom-build:{key}");
        self.stage(&stage_key, hash, &outs, force, || {
            let ops = self.build_rom_operators(n_rb, n_deim, n_phi)?;
            io::write_matrix(&dir.join("b_r.rmdm"), &ops.b_r)?;
            // gamma slices stacked side by side
            let n = ops.n_rb();
            let mut stacked = DMatrix::zeros(n, n * ops.gamma.len());
            for (k, slice) in ops.gamma.iter().enumerate() {
                stacked.columns_mut(k * n, n).copy_from(slice);
            }
            io::write_matrix(&dir.join("gamma.rmdm"), &stacked)?;
            let deim = ops.deim.as_ref().expect("rom-build always carries a DEIM model");
            io::write_matrix(&dir.join("deim_map.rmdm"), &deim.reduced_map)?;
            io::write_vector(
                &dir.join("magic_points.rmdm"),
                &deim.magic_points.iter().map(|&q| q as f64).collect::<Vec<_>>(),
            )?;
            Ok(())
        })
    }

    /// Deterministically assembles the reduced operators from the stored
    /// bases (the persisted files are for inspection and audit).
    pub fn build_rom_operators(
        &self,
        n_rb: usize,
        n_deim: usize,
        n_phi: usize,
    ) -> Result<RomOperators<f64>> {
        let g = self.grid()?;
        let conc = self.conc_basis()?;
        if n_rb > conc.n_modes() {
            bail!("n_rb {} exceeds the {} stored concentration modes", n_rb, conc.n_modes());
        }
        let phi = conc.truncated(n_rb)?;
        let flux_full = self.flux_basis()?;
        let psi = flux_full.truncated(n_phi.min(flux_full.n_modes()))?;

        let src_basis = self.source_basis()?;
        let n_deim = n_deim.min(src_basis.rank());
        let deim = build_deim(&src_basis, &phi, &g.road_cells, n_deim)?;

        // diffusion inflow faces marked with the mean training wind; the
        // inflow penalty is O(nu) and sub-dominant at these Peclet numbers
        let schedule = self.schedule();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for &d in &self.sorted_train_days() {
            let t0 = d as f64 * self.cfg.fom.day_seconds;
            let steps = (self.cfg.fom.day_seconds / self.cfg.fom.record_every).round() as usize;
            for k in 0..=steps {
                let (ux, uy) = schedule.velocity_at(t0 + k as f64 * self.cfg.fom.record_every);
                sx += ux;
                sy += uy;
                n += 1;
            }
        }
        let (fx, fy) = self.unit_fluxes()?;
        let mean_flux = FluxField::linear_combination(fx, sx / n as f64, fy, sy / n as f64);
        let fom_ops = assemble_operators(g, self.cfg.fom.nu, &mean_flux)?;

        Ok(RomOperators::build(g, phi, psi, &fom_ops, Some(deim))?)
    }

    // -- stage: rom-run ---------------------------------------------------

    pub fn rom_run(
        &self,
        days: &[usize],
        path: SourcePath,
        n_rb: usize,
        n_deim: usize,
        n_phi: usize,
        force: bool,
    ) -> Result<Vec<StageReport>> {
        let key = self.rom_key(n_rb, n_deim, n_phi);
        let dir = self.root.join(&key);
        let path_tag = match path {
            SourcePath::Projection => "projection",
            SourcePath::Deim => "deim",
        };
        let build_hash = self.upstream(&format!("rom-build:{key}"))?;
        let ops = std::cell::OnceCell::new();
        let series = self.emissions()?;
        let schedule = self.schedule();
        let net = io::read_net(&self.root.join("net.bin"))?;
        let mut reports = Vec::new();
        let mut days = days.to_vec();
        days.sort_unstable();
        days.dedup();
        for day in days {
            let stage_key = format!("rom-run:{key}:{path_tag}:day{day}");
            let hash =
                sha_hex(&[&build_hash, &self.upstream("net")?, path_tag, &day.to_string()]);
            let out = dir.join(format!("run_day{day}_{path_tag}.rmdm"));
            let report = self.stage(&stage_key, hash, &[out.clone()], force, || {
                if ops.get().is_none() {
                    let _ = ops.set(self.build_rom_operators(n_rb, n_deim, n_phi)?);
                }
                let ops: &RomOperators<f64> = ops.get().unwrap();
                let t0 = day as f64 * self.cfg.fom.day_seconds;
                // the net emits the full coefficient set; truncation to
                // the leading modes is exact because the basis is fixed
                let n_phi_run = ops.n_phi();
                let pi_at = |t: f64| {
                    let (ux, uy) = schedule.velocity_at(t);
                    let mut pi = net.predict(&[ux, uy]).expect("net arity fixed at build time");
                    pi.truncate(n_phi_run);
                    pi
                };
                let phi = &ops.phi;
                let deim = ops.deim.as_ref().expect("built with DEIM");
                let g = self.grid()?;
                let run_once = || match path {
                    SourcePath::Projection => rom::run_rom(
                        ops,
                        &pi_at,
                        rom::projection_source(phi, g, &series),
                        t0,
                        self.cfg.fom.day_seconds,
                        self.cfg.fom.dt,
                        self.cfg.fom.record_every,
                    ),
                    SourcePath::Deim => rom::run_rom(
                        ops,
                        &pi_at,
                        rom::deim_source(deim, &series),
                        t0,
                        self.cfg.fom.day_seconds,
                        self.cfg.fom.dt,
                        self.cfg.fom.record_every,
                    ),
                };
                // median-of-3 timing; the coefficients are identical runs
                let mut runs = vec![run_once()?, run_once()?, run_once()?];
                runs.sort_by(|a, b| a.online_secs.partial_cmp(&b.online_secs).unwrap());
                let traj = runs.swap_remove(1);
                io::write_matrix(&out, &traj.coeffs)?;
                append_timing(
                    &dir.join(format!("timing_{path_tag}.csv")),
                    "day,seconds",
                    day,
                    traj.online_secs,
                )?;
                Ok(())
            })?;
            reports.push(report);
        }
        Ok(reports)
    }

    // -- stage: evaluate --------------------------------------------------

    /// Metrics for one reduction variant and source path over the given
    /// days. FOM snapshots for those days must exist.
    pub fn evaluate(
        &self,
        days: &[usize],
        path: SourcePath,
        n_rb: usize,
        n_deim: usize,
        n_phi: usize,
    ) -> Result<Vec<(usize, f64, f64)>> {
        let key = self.rom_key(n_rb, n_deim, n_phi);
        let dir = self.root.join(&key);
        let metrics_dir = self.root.join("metrics");
        std::fs::create_dir_all(&metrics_dir)?;
        let path_tag = match path {
            SourcePath::Projection => "projection",
            SourcePath::Deim => "deim",
        };
        let g = self.grid()?;
        let conc = self.conc_basis()?;
        let phi = conc.truncated(n_rb)?;

        let mut days = days.to_vec();
        days.sort_unstable();
        days.dedup();
        let mut rows = Vec::new();
        let mut daily_csv = String::from("day,err_rb\n");
        let mut speed_csv = String::from("day,fom_seconds,rom_seconds,speedup\n");
        for &day in &days {
            let fom = self.load_fom_day(day)?;
            let coeffs = io::read_matrix(&dir.join(format!("run_day{day}_{path_tag}.rmdm")))?;
            let traj = rom::ReducedTrajectory {
                coeffs,
                instants: fom.instants.clone(),
                online_secs: read_timing(&dir.join(format!("timing_{path_tag}.csv")), day)?,
            };
            let fom_secs = self.fom_day_secs(day)?;
            let m = rom::evaluate(&fom, &traj, &phi, fom_secs)?;
            std::fs::write(
                metrics_dir.join(format!("err_rb_{key}_{path_tag}_day{day}.csv")),
                m.series_csv(),
            )?;
            let mut field_csv = String::from("cell,x,y,rel_error\n");
            for (cell, &v) in m.worst_field.iter().enumerate() {
                let (x, y) = g.cell_center(cell);
                field_csv.push_str(&format!("{cell},{x},{y},{v:e}\n"));
            }
            std::fs::write(
                metrics_dir.join(format!("worst_field_{key}_{path_tag}_day{day}.csv")),
                field_csv,
            )?;
            daily_csv.push_str(&format!("{day},{:e}\n", m.err_rb));
            speed_csv.push_str(&format!(
                "{day},{:e},{:e},{:e}\n",
                fom_secs, traj.online_secs, m.speedup
            ));
            rows.push((day, m.err_rb, m.speedup));
        }
        std::fs::write(metrics_dir.join(format!("daily_means_{key}_{path_tag}.csv")), daily_csv)?;
        std::fs::write(metrics_dir.join(format!("speedup_{key}_{path_tag}.csv")), speed_csv)?;

        // projection-error curve of the concentration basis (training days)
        let mut cols = Vec::new();
        for &d in &self.sorted_train_days() {
            if self.fom_day_path(d).exists() {
                cols.push(self.load_fom_day(d)?.data);
            }
        }
        if !cols.is_empty() {
            let nd = g.n_active();
            let total: usize = cols.iter().map(|c| c.ncols()).sum();
            let mut m = DMatrix::zeros(nd, total);
            let mut at = 0;
            for c in &cols {
                m.columns_mut(at, c.ncols()).copy_from(c);
                at += c.ncols();
            }
            let mut csv = String::from("n_modes,err_prj\n");
            for n in 1..=conc.n_modes() {
                let (err, _skipped) = conc.projection_error_series(&m, n)?;
                csv.push_str(&format!("{n},{err:e}\n"));
            }
            std::fs::write(metrics_dir.join("err_prj.csv"), csv)?;
        }
        Ok(rows)
    }

    /// Mean Err_rb over the given days.
    pub fn mean_error(rows: &[(usize, f64, f64)]) -> f64 {
        rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64
    }
}

fn eigen_csv(b: &PodBasis<f64>) -> String {
    let mut out = String::from("i,eigenvalue,normalized,retained_energy\n");
    let norm = b.normalized_eigenvalues();
    for i in 0..b.eigenvalues.len() {
        out.push_str(&format!(
            "{},{:e},{:e},{:e}\n",
            i + 1,
            b.eigenvalues[i],
            norm[i],
            b.retained_energy(i + 1)
        ));
    }
    out
}

/// Timing files are keyed by day and overwritten per day so re-runs stay
/// idempotent.
fn append_timing(path: &Path, header: &str, day: usize, secs: f64) -> Result<()> {
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    if path.exists() {
        for line in std::fs::read_to_string(path)?.lines().skip(1) {
            let mut it = line.split(',');
            if let (Some(d), Some(s)) = (it.next(), it.next()) {
                rows.insert(d.parse()?, s.parse()?);
            }
        }
    }
    rows.insert(day, secs);
    let mut out = format!("{header}\n");
    for (d, s) in rows {
        out.push_str(&format!("{d},{s:e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_timing(path: &Path, day: usize) -> Result<f64> {
    for line in std::fs::read_to_string(path)
        .with_context(|| format!("missing timing file {}", path.display()))?
        .lines()
        .skip(1)
    {
        let mut it = line.split(',');
        if let (Some(d), Some(s)) = (it.next(), it.next()) {
            if d.parse::<usize>()? == day {
                return Ok(s.parse()?);
            }
        }
    }
    bail!("no timing entry for day {day} in {}", path.display())
}

// re-used by the DEIM persistence audit in tests
pub fn deim_model_summary(model: &DeimModel<f64>) -> String {
    format!(
        "n_deim={} condition={:e} first_point={}",
        model.n_deim(),
        model.condition,
        model.magic_points.first().copied().unwrap_or(0)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::small();
        cfg.grid.nx = 16;
        cfg.grid.ny = 16;
        cfg.grid.obstacles.clear();
        // one-hour "days" keep the FOM runs fast
        cfg.fom.day_seconds = 3600.0;
        cfg.fom.dt = 100.0;
        cfg.fom.record_every = 300.0;
        cfg.emission.h = 300.0;
        cfg.wind.samples_per_day = 4;
        cfg.reduction = crate::config::ReductionConfig { n_rb: 10, n_deim: 5, n_phi: 2 };
        cfg.net.epochs = 200;
        cfg.net.hidden = vec![16, 16];
        cfg
    }

    #[test]
    fn wind_schedule_is_deterministic_and_piecewise_linear() {
        let cfg = tiny_cfg();
        let a = WindSchedule::generate(&cfg);
        let b = WindSchedule::generate(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.days.len(), cfg.n_days());
        // midpoint of a segment = mean of endpoint velocities
        let spacing = a.day_seconds / (cfg.wind.samples_per_day - 1) as f64;
        let (x0, y0) = a.velocity_at(0.0);
        let (x1, y1) = a.velocity_at(spacing);
        let (xm, ym) = a.velocity_at(spacing / 2.0);
        assert!((xm - 0.5 * (x0 + x1)).abs() < 1e-12);
        assert!((ym - 0.5 * (y0 + y1)).abs() < 1e-12);
        // speeds honor the configured range at the sample points
        for day in &a.days {
            for &(m1, _) in day {
                assert!(m1 >= cfg.wind.speed_min && m1 <= cfg.wind.speed_max);
            }
        }
    }

    #[test]
    fn create_open_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let case = Case::create(dir.path(), tiny_cfg()).unwrap();
        assert!(dir.path().join("config.toml").exists());
        assert!(dir.path().join("wind_schedule.csv").exists());
        assert!(dir.path().join("emission.csv").exists());
        let reopened = Case::open(dir.path()).unwrap();
        assert_eq!(case.cfg_text, reopened.cfg_text);

        let mut bad = tiny_cfg();
        bad.wind.test_days = bad.wind.train_days.clone();
        assert!(Case::create(dir.path(), bad).is_err());
    }

    #[test]
    fn fom_stage_is_idempotent_and_forced_reruns_work() {
        let dir = tempfile::tempdir().unwrap();
        let case = Case::create(dir.path(), tiny_cfg()).unwrap();
        let r1 = case.fom_run(&[0], false).unwrap();
        assert!(r1[0].ran);
        let r2 = case.fom_run(&[0], false).unwrap();
        assert!(!r2[0].ran, "unchanged inputs must be a no-op");
        let r3 = case.fom_run(&[0], true).unwrap();
        assert!(r3[0].ran);
        let snaps = case.load_fom_day(0).unwrap();
        assert_eq!(snaps.n_snapshots(), 13);
        assert!(case.fom_run(&[99], false).is_err());
    }

    #[test]
    fn full_offline_online_chain_runs() {
        let dir = tempfile::tempdir().unwrap();
        let case = Case::create(dir.path(), tiny_cfg()).unwrap();
        let days: Vec<usize> = (0..case.cfg.n_days()).collect();
        case.fom_run(&days, false).unwrap();
        case.pod(false).unwrap();
        let n_deim = case.deim_size(case.cfg.reduction.n_deim).unwrap();
        case.deim_build(n_deim, false).unwrap();
        case.train_net(false).unwrap();
        let (n_rb, n_phi) = (case.cfg.reduction.n_rb, case.cfg.reduction.n_phi);
        case.rom_build(n_rb, n_deim, n_phi, false).unwrap();
        case.rom_run(&[2], SourcePath::Deim, n_rb, n_deim, n_phi, false).unwrap();
        let rows = case.evaluate(&[2], SourcePath::Deim, n_rb, n_deim, n_phi).unwrap();
        assert_eq!(rows.len(), 1);
        let err = Case::mean_error(&rows);
        assert!(err.is_finite() && err >= 0.0);
        assert!(dir.path().join("metrics/err_prj.csv").exists());
        assert!(dir
            .path()
            .join(format!("metrics/daily_means_rom_{n_rb}_{n_deim}_{n_phi}_deim.csv"))
            .exists());

        // second pass: everything up-to-date
        assert!(!case.pod(false).unwrap().ran);
        assert!(!case.train_net(false).unwrap().ran);
        assert!(!case.rom_build(n_rb, n_deim, n_phi, false).unwrap().ran);
    }
}
