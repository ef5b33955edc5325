//! `--config` file schema. Every field is optional; a present field wins over
//! the corresponding flag.

use crate::CliError;
use nalgebra::DMatrix;
use serde::Deserialize;
use smallball_core::durbin::FamilySpec;
use smallball_core::kernels::KernelSpec;
use smallball_core::perturbation::PerturbingFn;
use smallball_core::quadform::Method;
use smallball_core::spectral::{gauss_legendre_grid, graded_gauss_legendre_grid, Grid};
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kernel: Option<KernelConfig>,
    pub grid_size: Option<usize>,
    pub grid: Option<GridKind>,
    pub k: Option<usize>,
    pub perturbation: Option<PerturbationConfig>,
    pub family: Option<FamilyConfig>,
    pub law: Option<String>,
    pub theta: Option<f64>,
    pub delta: Option<f64>,
    pub d: Option<f64>,
    pub eps: Option<f64>,
    pub r: Option<f64>,
    pub weights: Option<PathBuf>,
    pub method: Option<Method>,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub terms: Option<usize>,
    pub outputs: Option<Outputs>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub eigenfunctions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[serde(alias = "gl")]
    #[value(alias = "gl")]
    GaussLegendre,
    Graded,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Wiener {
        green_order: Option<u32>,
    },
    Bridge {
        green_order: Option<u32>,
    },
    #[serde(alias = "ou")]
    OrnsteinUhlenbeck {
        alpha: f64,
        green_order: Option<u32>,
    },
    Sampled {
        grid: Vec<f64>,
        matrix: Vec<Vec<f64>>,
        green_order: Option<u32>,
    },
}

impl KernelConfig {
    pub fn from_flags(
        name: &str,
        alpha: Option<f64>,
        green_order: Option<u32>,
    ) -> Result<Self, CliError> {
        Ok(match name {
            "wiener" => KernelConfig::Wiener { green_order },
            "bridge" => KernelConfig::Bridge { green_order },
            "ou" | "ornstein_uhlenbeck" | "ornstein-uhlenbeck" => KernelConfig::OrnsteinUhlenbeck {
                alpha: alpha.ok_or_else(|| {
                    CliError::Usage("--alpha is required for the OU kernel".into())
                })?,
                green_order,
            },
            "sampled" => {
                return Err(CliError::Usage(
                    "a sampled kernel can only be given in a --config file".into(),
                ))
            }
            other => return Err(CliError::Usage(format!("unknown kernel '{other}'"))),
        })
    }

    /// The kernel and, for sampled kernels, the grid it lives on.
    pub fn build(&self) -> Result<(KernelSpec, Option<Grid>), CliError> {
        let (spec, order, grid) = match self {
            KernelConfig::Wiener { green_order } => (KernelSpec::wiener(), *green_order, None),
            KernelConfig::Bridge { green_order } => (KernelSpec::bridge(), *green_order, None),
            KernelConfig::OrnsteinUhlenbeck { alpha, green_order } => {
                (KernelSpec::ornstein_uhlenbeck(*alpha)?, *green_order, None)
            }
            KernelConfig::Sampled {
                grid,
                matrix,
                green_order,
            } => {
                let m = matrix_from_rows(matrix)?;
                let spec = KernelSpec::sampled(grid.clone(), m)?;
                (spec, *green_order, Some(Grid::from_nodes(grid.clone())?))
            }
        };
        let spec = match order {
            Some(l) => spec.with_green_order(Some(l)),
            None => spec,
        };
        Ok((spec, grid))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub phi: Vec<PhiConfig>,
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiConfig {
    /// Coefficients `c₀, c₁, …` of `Σ c_k t^k`.
    Polynomial(Vec<f64>),
    /// Values on the computation grid nodes.
    Sampled { nodes: Vec<f64>, values: Vec<f64> },
}

impl From<&PhiConfig> for PerturbingFn {
    fn from(p: &PhiConfig) -> Self {
        match p {
            PhiConfig::Polynomial(c) => PerturbingFn::Polynomial(c.clone()),
            PhiConfig::Sampled { nodes, values } => PerturbingFn::Sampled {
                nodes: nodes.clone(),
                values: values.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FamilyConfig {
    Tag(String),
    Full(FamilySpec),
}

impl FamilyConfig {
    pub fn build(&self) -> Result<FamilySpec, CliError> {
        match self {
            FamilyConfig::Tag(t) => Ok(FamilySpec::from_tag(t)?),
            FamilyConfig::Full(f) => {
                f.validate()?;
                Ok(*f)
            }
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<ProblemConfig, CliError> {
    let Some(path) = path else {
        return Ok(ProblemConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Usage(
            "matrix rows must be non-empty and of equal length".into(),
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// `"1,0;0,2"` → rows.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';').map(parse_list).collect()
}

pub fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("'{v}' is not a number")))
        })
        .collect()
}

/// Accepts `pi` and `π` alongside ordinary numbers.
pub fn parse_number(text: &str) -> Result<f64, String> {
    match text.trim() {
        "pi" | "π" => Ok(std::f64::consts::PI),
        t => t.parse().map_err(|_| format!("'{t}' is not a number")),
    }
}

pub fn build_grid(kind: GridKind, n: usize) -> Result<Grid, CliError> {
    Ok(match kind {
        GridKind::GaussLegendre => gauss_legendre_grid(n)?,
        GridKind::Graded => graded_gauss_legendre_grid(n)?,
    })
}
