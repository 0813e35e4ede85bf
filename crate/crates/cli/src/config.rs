//! Resolved run configuration: command-line flags over a JSON config file
//! over built-in defaults. A flag that contradicts the file is an error.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use charblow::lifespan::{FitOptions, ScanConfig, DEFAULT_RICHARDSON_ORDER};
use charblow::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Verify,
    Spectral,
    Constants,
    Data,
    Simulate,
    Lemma3,
    Lifespan,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Spectral => "spectral",
            Command::Constants => "constants",
            Command::Data => "data",
            Command::Simulate => "simulate",
            Command::Lemma3 => "lemma3",
            Command::Lifespan => "lifespan",
        }
    }
}

/// Fully resolved settings. Every field has a default (see [`RunConfig::default`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Registry or diagnostic model name. Default `burgers`.
    pub model: String,
    /// Model parameters such as `beta`. Default: none (model defaults).
    pub params: BTreeMap<String, f64>,
    /// Amplitudes `ε`. Default `[0.05]`.
    pub eps: Vec<f64>,
    /// Source strengths `κ`. Default `[0.1]`.
    pub kappa: Vec<f64>,
    /// Use the rescaled (Corollary) form of the data and source. Default false.
    pub rescaled: bool,
    /// Bump amplitude. Default 1.
    pub amplitude: f64,
    /// Grid ladder, coarse to fine; single runs use the finest. Default `[1024, 2560]`.
    pub cells: Vec<usize>,
    /// Initial window half width in data length units. Default 0.6.
    pub half_width: f64,
    /// Default 0.9.
    pub cfl: f64,
    /// Sixth-difference dissipation coefficient. Default 0.
    pub dissipation: f64,
    /// Gradient growth factor that stops a run. Default 1000.
    pub gradient_cap: f64,
    /// Front resolution stop in cells. Default 12.
    pub min_front_cells: f64,
    /// Final time; `None` uses `t_cap_factor` times the lifespan bound.
    pub t_end: Option<f64>,
    /// Default 1.
    pub t_cap_factor: f64,
    /// Snapshots per run. Default 100.
    pub snapshots: usize,
    /// Ball samples for the coefficient bounds. Default 4096.
    pub samples: usize,
    /// Offset of the deterministic sample sequence. Default 0.
    pub seed: u64,
    /// State for `spectral`; empty means the origin. Default empty.
    pub u: Vec<f64>,
    /// Default 0.3.
    pub tail_fraction: f64,
    /// Default 20.
    pub min_samples: usize,
    /// Default 1.
    pub richardson_order: f64,
    /// Cone-check support threshold relative to `ε`. Default 1e-10.
    pub cone_threshold: f64,
    /// Tolerance of the assumption checks. Default 1e-10.
    pub tol: f64,
    /// Output file (`data`, `lifespan`) or directory (`simulate`, `lemma3`).
    /// Default: per command (`data.csv`, `scan.csv`, `charblow-out`).
    pub out: Option<PathBuf>,
    /// Also write SVG plots. Default false.
    pub plot: bool,
}

impl RunConfig {
    pub fn default_for(command: Command) -> Self {
        let scan = ScanConfig::default();
        Self {
            command,
            model: "burgers".into(),
            params: BTreeMap::new(),
            eps: vec![0.05],
            kappa: vec![0.1],
            rescaled: false,
            amplitude: 1.0,
            cells: scan.cells.clone(),
            half_width: scan.half_width,
            cfl: scan.cfl,
            dissipation: scan.dissipation,
            gradient_cap: scan.gradient_cap,
            min_front_cells: scan.min_front_cells,
            t_end: None,
            t_cap_factor: scan.t_cap_factor,
            snapshots: scan.snapshots,
            samples: charblow::coefficients::DEFAULT_SAMPLES,
            seed: 0,
            u: Vec::new(),
            tail_fraction: scan.fit.tail_fraction,
            min_samples: scan.fit.min_samples,
            richardson_order: DEFAULT_RICHARDSON_ORDER,
            cone_threshold: scan.cone_threshold,
            tol: 1e-10,
            out: None,
            plot: false,
        }
    }

    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            eps: self.eps.clone(),
            kappa: self.kappa.clone(),
            cells: self.cells.clone(),
            half_width: self.half_width,
            cfl: self.cfl,
            dissipation: self.dissipation,
            gradient_cap: self.gradient_cap,
            min_front_cells: self.min_front_cells,
            t_cap_factor: self.t_cap_factor,
            snapshots: self.snapshots,
            rescaled: self.rescaled,
            fit: self.fit(),
            richardson_order: self.richardson_order,
            cone_threshold: self.cone_threshold,
        }
    }

    pub fn fit(&self) -> FitOptions {
        FitOptions {
            tail_fraction: self.tail_fraction,
            min_samples: self.min_samples,
        }
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    /// The single `ε` of a one-run command.
    pub fn single_eps(&self) -> Result<f64> {
        single("eps", &self.eps)
    }

    pub fn single_kappa(&self) -> Result<f64> {
        single("kappa", &self.kappa)
    }

    pub fn finest_cells(&self) -> Result<usize> {
        self.cells
            .iter()
            .copied()
            .max()
            .ok_or_else(|| Error::Config("`cells` must not be empty".into()))
    }
}

fn single(name: &str, v: &[f64]) -> Result<f64> {
    match v {
        [x] => Ok(*x),
        _ => Err(Error::Config(format!(
            "this command takes exactly one `{name}` value, got {}",
            v.len()
        ))),
    }
}

/// Flags shared by all commands. Unset flags fall back to the config file,
/// then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file with any subset of the settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Model parameter `name=value` (repeatable).
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Comma-separated amplitudes.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Comma-separated source strengths.
    #[arg(long, value_delimiter = ',')]
    pub kappa: Option<Vec<f64>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub rescaled: Option<bool>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Comma-separated grid ladder.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<usize>>,
    #[arg(long)]
    pub half_width: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    #[arg(long)]
    pub dissipation: Option<f64>,
    #[arg(long)]
    pub gradient_cap: Option<f64>,
    #[arg(long)]
    pub min_front_cells: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub t_cap_factor: Option<f64>,
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated state for `spectral`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub u: Option<Vec<f64>>,
    #[arg(long)]
    pub tail_fraction: Option<f64>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    #[arg(long)]
    pub richardson_order: Option<f64>,
    #[arg(long)]
    pub cone_threshold: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plot: Option<bool>,
    /// Worker threads (falls back to CHARBLOW_JOBS).
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Config file contents: every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    pub model: Option<String>,
    pub params: Option<BTreeMap<String, f64>>,
    pub eps: Option<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    pub rescaled: Option<bool>,
    pub amplitude: Option<f64>,
    pub cells: Option<Vec<usize>>,
    pub half_width: Option<f64>,
    pub cfl: Option<f64>,
    pub dissipation: Option<f64>,
    pub gradient_cap: Option<f64>,
    pub min_front_cells: Option<f64>,
    pub t_end: Option<f64>,
    pub t_cap_factor: Option<f64>,
    pub snapshots: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub u: Option<Vec<f64>>,
    pub tail_fraction: Option<f64>,
    pub min_samples: Option<usize>,
    pub richardson_order: Option<f64>,
    pub cone_threshold: Option<f64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub plot: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config file {}: {e}", path.display())))
    }
}

fn merge<T: PartialEq + Debug>(name: &str, flag: Option<T>, file: Option<T>, default: T) -> Result<T> {
    match (flag, file) {
        (Some(a), Some(b)) if a != b => Err(Error::Config(format!(
            "`{name}` is {a:?} on the command line but {b:?} in the config file"
        ))),
        (Some(a), _) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Ok(default),
    }
}

/// Combines flags, the optional config file and the defaults.
pub fn resolve(command: Command, flags: &Flags) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(c) = file.command {
        if c != command {
            return Err(Error::Config(format!(
                "config file is for `{}` but the command is `{}`",
                c.name(),
                command.name()
            )));
        }
    }
    let d = RunConfig::default_for(command);
    let flag_params = if flags.params.is_empty() {
        None
    } else {
        Some(flags.params.iter().cloned().collect::<BTreeMap<_, _>>())
    };
    let cfg = RunConfig {
        command,
        model: merge("model", flags.model.clone(), file.model, d.model)?,
        params: merge("params", flag_params, file.params, d.params)?,
        eps: merge("eps", flags.eps.clone(), file.eps, d.eps)?,
        kappa: merge("kappa", flags.kappa.clone(), file.kappa, d.kappa)?,
        rescaled: merge("rescaled", flags.rescaled, file.rescaled, d.rescaled)?,
        amplitude: merge("amplitude", flags.amplitude, file.amplitude, d.amplitude)?,
        cells: merge("cells", flags.cells.clone(), file.cells, d.cells)?,
        half_width: merge("half_width", flags.half_width, file.half_width, d.half_width)?,
        cfl: merge("cfl", flags.cfl, file.cfl, d.cfl)?,
        dissipation: merge("dissipation", flags.dissipation, file.dissipation, d.dissipation)?,
        gradient_cap: merge("gradient_cap", flags.gradient_cap, file.gradient_cap, d.gradient_cap)?,
        min_front_cells: merge("min_front_cells", flags.min_front_cells, file.min_front_cells, d.min_front_cells)?,
        t_end: merge("t_end", flags.t_end.map(Some), file.t_end.map(Some), d.t_end)?,
        t_cap_factor: merge("t_cap_factor", flags.t_cap_factor, file.t_cap_factor, d.t_cap_factor)?,
        snapshots: merge("snapshots", flags.snapshots, file.snapshots, d.snapshots)?,
        samples: merge("samples", flags.samples, file.samples, d.samples)?,
        seed: merge("seed", flags.seed, file.seed, d.seed)?,
        u: merge("u", flags.u.clone(), file.u, d.u)?,
        tail_fraction: merge("tail_fraction", flags.tail_fraction, file.tail_fraction, d.tail_fraction)?,
        min_samples: merge("min_samples", flags.min_samples, file.min_samples, d.min_samples)?,
        richardson_order: merge("richardson_order", flags.richardson_order, file.richardson_order, d.richardson_order)?,
        cone_threshold: merge("cone_threshold", flags.cone_threshold, file.cone_threshold, d.cone_threshold)?,
        tol: merge("tol", flags.tol, file.tol, d.tol)?,
        out: merge("out", flags.out.clone().map(Some), file.out.map(Some), d.out)?,
        plot: merge("plot", flags.plot, file.plot, d.plot)?,
    };
    if cfg.model.is_empty() {
        return Err(Error::Config("`model` must not be empty".into()));
    }
    if !(cfg.amplitude > 0.0 && cfg.amplitude.is_finite()) {
        return Err(Error::Config(format!("`amplitude` must be positive, got {}", cfg.amplitude)));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_nothing_given() {
        let c = resolve(Command::Simulate, &Flags::default()).unwrap();
        assert_eq!(c, RunConfig::default_for(Command::Simulate));
    }

    #[test]
    fn file_values_apply_and_conflicts_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": "euler_friction", "eps": [0.1, 0.2]}"#).unwrap();
        let mut f = Flags {
            config: Some(p),
            ..Default::default()
        };
        let c = resolve(Command::Lifespan, &f).unwrap();
        assert_eq!(c.model, "euler_friction");
        assert_eq!(c.eps, vec![0.1, 0.2]);
        f.model = Some("euler_friction".into());
        assert!(resolve(Command::Lifespan, &f).is_ok());
        f.model = Some("burgers".into());
        assert!(matches!(resolve(Command::Lifespan, &f), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"modle": "burgers"}"#).unwrap();
        let f = Flags {
            config: Some(p),
            ..Default::default()
        };
        assert!(resolve(Command::Verify, &f).is_err());
    }
}
