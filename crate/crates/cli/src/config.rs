//! Run configuration: command-line flags layered over an optional TOML file
//! layered over the defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use h2direct::fixtures::Family;
use h2direct::geometry::PointCloud;
use h2direct::kernel::KernelSpec;
use h2direct::C64;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Problem flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProblemArgs {
    /// Fixture family: rod, slab or cube.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Number of fixture points.
    #[arg(long)]
    pub n: Option<usize>,
    /// Point file (`.csv` with x,y,z rows, or raw little-endian f64 triples).
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// laplace or helmholtz.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Helmholtz wavenumber, `k` or `re,im`.
    #[arg(long)]
    pub wavenumber: Option<String>,
    /// Value of the self-interaction entries (default 1.0).
    #[arg(long)]
    pub diagonal_shift: Option<f64>,
    /// Add the largest off-diagonal row sum to the diagonal.
    #[arg(long)]
    pub row_sum_scaling: bool,
    #[arg(long)]
    pub leafsize: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eps_h2: Option<f64>,
    #[arg(long)]
    pub eps_fill_in: Option<f64>,
    /// Last tree level processed by the factorization (default: l0).
    #[arg(long)]
    pub stop_level: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with any of the keys above (kebab-case); flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl ProblemArgs {
    fn or(self, file: ProblemArgs) -> ProblemArgs {
        ProblemArgs {
            geometry: self.geometry.or(file.geometry),
            n: self.n.or(file.n),
            points: self.points.or(file.points),
            kernel: self.kernel.or(file.kernel),
            wavenumber: self.wavenumber.or(file.wavenumber),
            diagonal_shift: self.diagonal_shift.or(file.diagonal_shift),
            row_sum_scaling: self.row_sum_scaling || file.row_sum_scaling,
            leafsize: self.leafsize.or(file.leafsize),
            eta: self.eta.or(file.eta),
            eps_h2: self.eps_h2.or(file.eps_h2),
            eps_fill_in: self.eps_fill_in.or(file.eps_fill_in),
            stop_level: self.stop_level.or(file.stop_level),
            seed: self.seed.or(file.seed),
            config: self.config,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Fixture { family: Family, n: usize },
    File(PathBuf),
}

/// Fully resolved configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub geometry: Option<Geometry>,
    pub kernel: String,
    pub wavenumber: [f64; 2],
    pub diagonal_shift: f64,
    pub row_sum_scaling: bool,
    pub leafsize: usize,
    pub eta: f64,
    pub eps_h2: f64,
    pub eps_fill_in: f64,
    pub stop_level: Option<usize>,
    pub seed: u64,
}

impl RunConfig {
    pub fn resolve(args: &ProblemArgs) -> Result<Self, CliError> {
        let args = match &args.config {
            Some(path) => args.clone().or(read_config(path)?),
            None => args.clone(),
        };
        let geometry = match (&args.points, &args.geometry) {
            (Some(_), Some(_)) => {
                return Err(CliError::input("give either --points or --geometry, not both"))
            }
            (Some(p), None) => Some(Geometry::File(p.clone())),
            (None, Some(g)) => {
                let family: Family = g.parse().map_err(CliError::Input)?;
                let n = args
                    .n
                    .ok_or_else(|| CliError::input("--geometry needs --n"))?;
                Some(Geometry::Fixture { family, n })
            }
            (None, None) => None,
        };
        let kernel = args.kernel.unwrap_or_else(|| "laplace".into());
        if kernel != "laplace" && kernel != "helmholtz" {
            return Err(CliError::Input(format!(
                "unknown kernel '{kernel}' (laplace, helmholtz)"
            )));
        }
        let wavenumber = match &args.wavenumber {
            Some(w) => parse_complex(w)?,
            None => [1.0, 0.0],
        };
        let cfg = Self {
            geometry,
            kernel,
            wavenumber,
            diagonal_shift: args.diagonal_shift.unwrap_or(1.0),
            row_sum_scaling: args.row_sum_scaling,
            leafsize: args.leafsize.unwrap_or(25),
            eta: args.eta.unwrap_or(1.0),
            eps_h2: args.eps_h2.unwrap_or(1e-3),
            eps_fill_in: args.eps_fill_in.unwrap_or(1e-5),
            stop_level: args.stop_level,
            seed: args.seed.unwrap_or(0),
        };
        if cfg.leafsize == 0 {
            return Err(CliError::input("--leafsize must be positive"));
        }
        if !cfg.diagonal_shift.is_finite() {
            return Err(CliError::input("--diagonal-shift must be finite"));
        }
        for (name, v) in [
            ("--eta", cfg.eta),
            ("--eps-h2", cfg.eps_h2),
            ("--eps-fill-in", cfg.eps_fill_in),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(cfg)
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let k = match self.kernel.as_str() {
            "helmholtz" => KernelSpec::helmholtz(C64::new(self.wavenumber[0], self.wavenumber[1])),
            _ => KernelSpec::laplace(),
        };
        k.with_diagonal_shift(self.diagonal_shift)
            .with_row_sum_scaling(self.row_sum_scaling)
    }

    pub fn points(&self) -> Result<PointCloud, CliError> {
        match &self.geometry {
            Some(Geometry::Fixture { family, n }) => {
                if *n == 0 {
                    return Err(CliError::input("--n must be positive"));
                }
                Ok(family.points(*n))
            }
            Some(Geometry::File(p)) => Ok(h2direct::io::load_points(p)?),
            None => Err(CliError::input(
                "no problem given: use --geometry/--n or --points",
            )),
        }
    }
}

fn read_config(path: &Path) -> Result<ProblemArgs, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_complex(s: &str) -> Result<[f64; 2], CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| {
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CliError::Input(format!("bad wavenumber '{s}'")))
    };
    match parts.as_slice() {
        [re] => Ok([num(re)?, 0.0]),
        [re, im] => Ok([num(re)?, num(im)?]),
        _ => Err(CliError::Input(format!("bad wavenumber '{s}'"))),
    }
}
