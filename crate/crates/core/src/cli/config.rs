//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eigensolver::{SolverOptions, StartCorner};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::models::ModelSpec;
use crate::ordparam::DEFAULT_Y_MIN;
use crate::qstate::{centered_window, DensityMatrix};
use crate::rfsfield::ParameterLattice;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default = "default_grid")]
    pub grid: GridSize,
    #[serde(default = "default_rdm_sites")]
    pub rdm_sites: usize,
    #[serde(default)]
    pub eta: EtaSetting,
    #[serde(default = "default_y_min")]
    pub y_min: f64,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Divide edge terms by the squared lattice steps.
    #[serde(default)]
    pub metric: bool,
    #[serde(default)]
    pub start_corner: StartCorner,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub threads: Threads,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub order_param: OrderParamConfig,
    #[serde(default)]
    pub fss: Option<FssConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lambda1: [f64; 2],
    pub lambda2: [f64; 2],
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let inside = |r: [f64; 2], x: f64| x >= r[0].min(r[1]) && x <= r[0].max(r[1]);
        inside(self.lambda1, p[0]) && inside(self.lambda2, p[1])
    }
}

/// Points per axis, either shared or as [λ₁ count, λ₂ count].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSize {
    Square(usize),
    Rect([usize; 2]),
}

impl GridSize {
    pub fn cols_rows(&self) -> (usize, usize) {
        match *self {
            GridSize::Square(n) => (n, n),
            GridSize::Rect([c, r]) => (c, r),
        }
    }
}

/// `"auto"` or an explicit angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "AutoOr<f64>", into = "AutoOr<f64>")]
pub enum EtaSetting {
    #[default]
    Auto,
    Value(f64),
}

/// `"auto"` or an explicit worker count.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "AutoOr<usize>", into = "AutoOr<usize>")]
pub enum Threads {
    #[default]
    Auto,
    Count(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Word(String),
    Value(T),
}

impl TryFrom<AutoOr<f64>> for EtaSetting {
    type Error = String;
    fn try_from(v: AutoOr<f64>) -> std::result::Result<Self, String> {
        match v {
            AutoOr::Word(w) if w == "auto" => Ok(EtaSetting::Auto),
            AutoOr::Word(w) => Err(format!("eta must be \"auto\" or a number, got {w:?}")),
            AutoOr::Value(x) => Ok(EtaSetting::Value(x)),
        }
    }
}

impl From<EtaSetting> for AutoOr<f64> {
    fn from(v: EtaSetting) -> Self {
        match v {
            EtaSetting::Auto => AutoOr::Word("auto".into()),
            EtaSetting::Value(x) => AutoOr::Value(x),
        }
    }
}

impl TryFrom<AutoOr<usize>> for Threads {
    type Error = String;
    fn try_from(v: AutoOr<usize>) -> std::result::Result<Self, String> {
        match v {
            AutoOr::Word(w) if w == "auto" => Ok(Threads::Auto),
            AutoOr::Word(w) => Err(format!("threads must be \"auto\" or a count, got {w:?}")),
            AutoOr::Value(0) => Err("threads must be positive".into()),
            AutoOr::Value(n) => Ok(Threads::Count(n)),
        }
    }
}

impl From<Threads> for AutoOr<usize> {
    fn from(v: Threads) -> Self {
        match v {
            Threads::Auto => AutoOr::Word("auto".into()),
            Threads::Count(n) => AutoOr::Value(n),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderParamConfig {
    /// Window for the observable; defaults to `rdm_sites`.
    #[serde(default)]
    pub rdm_sites: Option<usize>,
    /// Restricts labeled samples to this parameter box.
    #[serde(default)]
    pub region: Option<Region>,
    /// Explicit labeled RDMs used instead of a computed diagram.
    #[serde(default)]
    pub fixture: Option<Fixture>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub plus: Vec<MatrixJson>,
    pub minus: Vec<MatrixJson>,
}

/// A matrix as nested real rows or as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Real(Vec<Vec<f64>>),
    Complex { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMat> {
        let (re, im) = match self {
            MatrixJson::Real(re) => (re, None),
            MatrixJson::Complex { re, im } => (re, Some(im)),
        };
        let n = re.len();
        let square = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
        if n == 0 || !square(re) || im.is_some_and(|im| !square(im)) {
            return Err(Error::Config("matrix must be square and nonempty".into()));
        }
        Ok(CMat::from_fn(n, n, |i, j| C64::new(re[i][j], im.map_or(0.0, |im| im[i][j]))))
    }
}

/// Row-major `[re, im]` pairs of a square matrix.
pub fn matrix_pairs(m: &CMat) -> Vec<[f64; 2]> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| [m[(i, j)].re, m[(i, j)].im]))
        .collect()
}

pub fn matrix_from_pairs(order: usize, pairs: &[[f64; 2]]) -> Result<CMat> {
    if order == 0 || pairs.len() != order * order {
        return Err(Error::Config(format!(
            "matrix of order {order} needs {} pairs, got {}",
            order * order,
            pairs.len()
        )));
    }
    Ok(CMat::from_fn(order, order, |i, j| {
        let [re, im] = pairs[i * order + j];
        C64::new(re, im)
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FssConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub h_values: Option<HGrid>,
    #[serde(default)]
    pub lengths: Vec<usize>,
    #[serde(default = "default_hc")]
    pub h_c: f64,
    #[serde(default)]
    pub observable: Option<MatrixJson>,
    /// JSON written by `order-param`; its `order` and `matrix` fields are used.
    #[serde(default)]
    pub observable_file: Option<PathBuf>,
    /// CSV `L,h,expectation` used instead of computing curves.
    #[serde(default)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl HGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            HGrid::List(v) => Ok(v.clone()),
            &HGrid::Range { start, stop, count } => {
                if count < 2 {
                    return Err(Error::Config("h range needs at least 2 points".into()));
                }
                Ok((0..count)
                    .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                    .collect())
            }
        }
    }
}

fn default_grid() -> GridSize {
    GridSize::Square(8)
}
fn default_rdm_sites() -> usize {
    2
}
fn default_y_min() -> f64 {
    DEFAULT_Y_MIN
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_seed() -> u64 {
    SolverOptions::default().seed
}
fn default_kappa() -> f64 {
    0.001
}
fn default_hc() -> f64 {
    crate::fss::DEFAULT_HC
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(f) = &mut self.fss {
            for p in [&mut f.observable_file, &mut f.data].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Solver options with the run seed applied.
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            seed: self.seed,
            ..self.solver.clone()
        }
    }

    pub fn observable_sites(&self) -> usize {
        self.order_param.rdm_sites.unwrap_or(self.rdm_sites)
    }

    pub fn lattice(&self) -> Result<ParameterLattice> {
        let region = self
            .region
            .ok_or_else(|| Error::Config("region is required".into()))?;
        let (cols, rows) = self.grid.cols_rows();
        ParameterLattice::from_ranges(region.lambda1, region.lambda2, cols, rows)
    }

    /// Checks shared by every command that builds a diagram.
    pub fn validate_diagram(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        let region = self
            .region
            .ok_or_else(|| Error::Config("region is required".into()))?;
        for (name, r) in [("lambda1", region.lambda1), ("lambda2", region.lambda2)] {
            if !(r[1] > r[0]) || !r.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("region {name} must be an increasing finite range")));
            }
        }
        let (cols, rows) = self.grid.cols_rows();
        if cols < 3 || rows < 3 {
            return Err(Error::Config(format!("grid {cols}x{rows} is below 3 points per axis")));
        }
        for k in [self.rdm_sites, self.observable_sites()] {
            if k == 0 {
                return Err(Error::Config("rdm window must have at least one site".into()));
            }
            centered_window(self.model.sites, k).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.y_min >= 0.0 && self.y_min < 1.0) {
            return Err(Error::Config(format!("y_min {} outside [0, 1)", self.y_min)));
        }
        Ok(())
    }

    pub fn fixture_rdms(&self) -> Result<Option<(Vec<DensityMatrix>, Vec<DensityMatrix>)>> {
        let Some(f) = &self.order_param.fixture else {
            return Ok(None);
        };
        let load = |v: &Vec<MatrixJson>| {
            v.iter()
                .map(|m| DensityMatrix::from_matrix(m.to_matrix()?).map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Some((load(&f.plus)?, load(&f.minus)?)))
    }
}
