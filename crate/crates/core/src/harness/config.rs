//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # cartpole fleet, two fleet sizes
//! fleet = cartpole
//! H = 25, 100
//! seeds = 0..10
//! sigma1_sq = 0.3
//! ```
//!
//! Keys and defaults:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `fleet` | `cartpole` | `cartpole` or `synthetic` |
//! | `synthetic_dx`, `synthetic_du`, `synthetic_dtheta` | 3, 1, 2 | synthetic fleet shape |
//! | `synthetic_margin` | 0.2 | open-loop stability margin of synthetic systems |
//! | `H` | `25, 100` | fleet sizes |
//! | `seeds` | `0..10` | comma list; items may be ranges `a..b` |
//! | `tau1` | 30 | first epoch length |
//! | `k_fin` | 10 | number of epochs |
//! | `N` | 1000 | DFW iterations per epoch |
//! | `eta` | 0.25 | DFW step size |
//! | `x_b` | 25 | state abort scale |
//! | `K_b` | 15 | gain abort bound |
//! | `noise_var` | 0.01 | per-coordinate process noise variance (cartpole) |
//! | `schedule` | `empirical` | `empirical`, `easy` or `hard` |
//! | `sigma1_sq` | 0.3 | first-epoch exploration variance (empirical) |
//! | `rho_pow` | 0.5 | contraction proxy (easy, hard) |
//! | `d0` | `phi0_distance` | initial distance used by easy and hard schedules |
//! | `dfw_mode` | `full_data` | `full_data`, `split` or `halves` |
//! | `update_order` | `representation_first` | or `weights_first` |
//! | `phi0_distance` | 0.99 | distance of the initial basis from the truth |
//! | `output_dir` | `out` | where results are written |
//! | `workers` | 0 | worker threads; 0 defers to `MTLQR_WORKERS`, then all cores |

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mtlearn::DfwMode;
use crate::orchestrator::{EpochSchedule, ExplorationMode, ExplorationSchedule, LoopParams, UpdateOrder};

pub const WORKERS_ENV: &str = "MTLQR_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FleetKind {
    Cartpole,
    Synthetic { dx: usize, du: usize, d_theta: usize, margin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fleet_kind: FleetKind,
    pub h_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub tau1: usize,
    pub k_fin: usize,
    pub n_iters: usize,
    pub eta: f64,
    pub x_b: f64,
    pub k_b: f64,
    pub noise_var: f64,
    pub schedule: ExplorationSchedule,
    pub dfw_mode: DfwMode,
    pub update_order: UpdateOrder,
    pub phi0_distance: f64,
    pub output_dir: PathBuf,
    /// 0 means unset.
    pub worker_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fleet_kind: FleetKind::Cartpole,
            h_values: vec![25, 100],
            seeds: (0..10).collect(),
            tau1: 30,
            k_fin: 10,
            n_iters: 1000,
            eta: 0.25,
            x_b: 25.0,
            k_b: 15.0,
            noise_var: 0.01,
            schedule: ExplorationSchedule {
                mode: ExplorationMode::Empirical,
                rho_pow: 0.5,
                sigma1_sq: 0.3,
                d0: 0.99,
            },
            dfw_mode: DfwMode::FullData,
            update_order: UpdateOrder::RepresentationFirst,
            phi0_distance: 0.99,
            output_dir: PathBuf::from("out"),
            worker_count: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn epochs(&self) -> Result<EpochSchedule> {
        EpochSchedule::new(self.tau1, self.k_fin)
    }

    pub fn loop_params(&self) -> LoopParams {
        LoopParams {
            x_b: self.x_b,
            k_b: self.k_b,
            n_iters: self.n_iters,
            eta: self.eta,
            dfw_mode: self.dfw_mode,
            order: self.update_order,
        }
    }

    /// Worker threads: the configured count, else `MTLQR_WORKERS`, else
    /// the available parallelism.
    pub fn resolved_workers(&self) -> usize {
        if self.worker_count > 0 {
            return self.worker_count;
        }
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }

    /// Checks the invariants that cannot be enforced while parsing a
    /// single line.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parse(msg));
        if self.h_values.is_empty() {
            return bad("H must list at least one fleet size".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return bad(format!("seed {s} is listed twice"));
            }
        }
        if self.h_values.iter().any(|&h| h < 2) {
            return bad("every H must be at least 2 (H = 1 is reserved for the baseline curve)".into());
        }
        if self.tau1 < 2 {
            return bad("tau1 must be at least 2".into());
        }
        if !(self.phi0_distance >= 0.0 && self.phi0_distance < 1.0) {
            return bad(format!("phi0_distance must lie in [0, 1), got {}", self.phi0_distance));
        }
        if !(self.schedule.rho_pow > 0.0 && self.schedule.rho_pow < 1.0) {
            return bad(format!("rho_pow must lie in (0, 1), got {}", self.schedule.rho_pow));
        }
        if let FleetKind::Synthetic { dx, du, d_theta, margin } = self.fleet_kind {
            if d_theta > dx * (dx + du) {
                return bad(format!("synthetic_dtheta {d_theta} exceeds d_x (d_x + d_u) = {}", dx * (dx + du)));
            }
            if !(0.0..1.0).contains(&margin) {
                return bad(format!("synthetic_margin must lie in [0, 1), got {margin}"));
            }
        }
        self.epochs().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

fn positive_int(key: &str, v: &str) -> std::result::Result<usize, String> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("{key} must be a positive integer, got '{v}'")),
    }
}

fn positive_real(key: &str, v: &str) -> std::result::Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("{key} must be a positive number, got '{v}'")),
    }
}

fn seed_list(v: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let (a, b) = (a.trim().parse::<u64>(), b.trim().parse::<u64>());
            match (a, b) {
                (Ok(a), Ok(b)) if a < b => out.extend(a..b),
                _ => return Err(format!("bad seed range '{item}'")),
            }
        } else {
            out.push(item.parse::<u64>().map_err(|_| format!("bad seed '{item}'"))?);
        }
    }
    Ok(out)
}

fn synthetic_dims(kind: &mut FleetKind) -> (&mut usize, &mut usize, &mut usize, &mut f64) {
    if *kind == FleetKind::Cartpole {
        *kind = FleetKind::Synthetic { dx: 3, du: 1, d_theta: 2, margin: 0.2 };
    }
    match kind {
        FleetKind::Synthetic { dx, du, d_theta, margin } => (dx, du, d_theta, margin),
        FleetKind::Cartpole => unreachable!(),
    }
}

fn apply(cfg: &mut ExperimentConfig, key: &str, v: &str, d0_set: &mut bool) -> std::result::Result<(), String> {
    match key {
        "fleet" => {
            cfg.fleet_kind = match v {
                "cartpole" => FleetKind::Cartpole,
                "synthetic" => {
                    let mut k = cfg.fleet_kind;
                    synthetic_dims(&mut k);
                    k
                }
                _ => return Err(format!("fleet must be 'cartpole' or 'synthetic', got '{v}'")),
            }
        }
        "synthetic_dx" => *synthetic_dims(&mut cfg.fleet_kind).0 = positive_int(key, v)?,
        "synthetic_du" => *synthetic_dims(&mut cfg.fleet_kind).1 = positive_int(key, v)?,
        "synthetic_dtheta" => *synthetic_dims(&mut cfg.fleet_kind).2 = positive_int(key, v)?,
        "synthetic_margin" => {
            *synthetic_dims(&mut cfg.fleet_kind).3 = v.parse::<f64>().map_err(|_| format!("bad number '{v}'"))?
        }
        "H" => {
            cfg.h_values = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| positive_int(key, s))
                .collect::<std::result::Result<_, _>>()?
        }
        "seeds" => cfg.seeds = seed_list(v)?,
        "tau1" => cfg.tau1 = positive_int(key, v)?,
        "k_fin" => cfg.k_fin = positive_int(key, v)?,
        "N" => cfg.n_iters = positive_int(key, v)?,
        "eta" => cfg.eta = positive_real(key, v)?,
        "x_b" => cfg.x_b = positive_real(key, v)?,
        "K_b" => cfg.k_b = positive_real(key, v)?,
        "noise_var" => cfg.noise_var = positive_real(key, v)?,
        "schedule" => {
            cfg.schedule.mode = match v {
                "empirical" => ExplorationMode::Empirical,
                "easy" => ExplorationMode::Easy,
                "hard" => ExplorationMode::Hard,
                _ => return Err(format!("schedule must be empirical, easy or hard, got '{v}'")),
            }
        }
        "sigma1_sq" => cfg.schedule.sigma1_sq = positive_real(key, v)?,
        "rho_pow" => cfg.schedule.rho_pow = positive_real(key, v)?,
        "d0" => {
            cfg.schedule.d0 = v.parse::<f64>().ok().filter(|x| *x >= 0.0).ok_or(format!("d0 must be non-negative, got '{v}'"))?;
            *d0_set = true;
        }
        "dfw_mode" => {
            cfg.dfw_mode = match v {
                "full_data" => DfwMode::FullData,
                "split" => DfwMode::Split,
                "halves" => DfwMode::Halves,
                _ => return Err(format!("dfw_mode must be full_data, split or halves, got '{v}'")),
            }
        }
        "update_order" => {
            cfg.update_order = match v {
                "representation_first" => UpdateOrder::RepresentationFirst,
                "weights_first" => UpdateOrder::WeightsFirst,
                _ => return Err(format!("update_order must be representation_first or weights_first, got '{v}'")),
            }
        }
        "phi0_distance" => {
            cfg.phi0_distance = v.parse::<f64>().map_err(|_| format!("bad number '{v}'"))?;
            if !(0.0..1.0).contains(&cfg.phi0_distance) {
                return Err(format!("phi0_distance must lie in [0, 1), got '{v}'"));
            }
        }
        "output_dir" => cfg.output_dir = PathBuf::from(v),
        "workers" => cfg.worker_count = v.parse::<usize>().map_err(|_| format!("workers must be a count, got '{v}'"))?,
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

/// Parses configuration text. Unset keys keep their defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut d0_set = false;
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {line_no}: expected key = value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse(format!("line {line_no}: key '{key}' given twice")));
        }
        apply(&mut cfg, key, value, &mut d0_set).map_err(|m| Error::Parse(format!("line {line_no}: {m}")))?;
    }
    if !d0_set {
        cfg.schedule.d0 = cfg.phi0_distance;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// The resolved configuration in the same format, every key written.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    match cfg.fleet_kind {
        FleetKind::Cartpole => put("fleet", "cartpole".into()),
        FleetKind::Synthetic { dx, du, d_theta, margin } => {
            put("fleet", "synthetic".into());
            put("synthetic_dx", dx.to_string());
            put("synthetic_du", du.to_string());
            put("synthetic_dtheta", d_theta.to_string());
            put("synthetic_margin", margin.to_string());
        }
    }
    put("H", cfg.h_values.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", "));
    put("seeds", cfg.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", "));
    put("tau1", cfg.tau1.to_string());
    put("k_fin", cfg.k_fin.to_string());
    put("N", cfg.n_iters.to_string());
    put("eta", cfg.eta.to_string());
    put("x_b", cfg.x_b.to_string());
    put("K_b", cfg.k_b.to_string());
    put("noise_var", cfg.noise_var.to_string());
    let mode = match cfg.schedule.mode {
        ExplorationMode::Empirical => "empirical",
        ExplorationMode::Easy => "easy",
        ExplorationMode::Hard => "hard",
    };
    put("schedule", mode.into());
    put("sigma1_sq", cfg.schedule.sigma1_sq.to_string());
    put("rho_pow", cfg.schedule.rho_pow.to_string());
    put("d0", cfg.schedule.d0.to_string());
    let dfw = match cfg.dfw_mode {
        DfwMode::FullData => "full_data",
        DfwMode::Split => "split",
        DfwMode::Halves => "halves",
    };
    put("dfw_mode", dfw.into());
    let order = match cfg.update_order {
        UpdateOrder::RepresentationFirst => "representation_first",
        UpdateOrder::WeightsFirst => "weights_first",
    };
    put("update_order", order.into());
    put("phi0_distance", cfg.phi0_distance.to_string());
    put("output_dir", cfg.output_dir.display().to_string());
    out
}
