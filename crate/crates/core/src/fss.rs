//! Finite-size scaling of an observable near a transition: expectation curves
//! over chain lengths, their steepest slope, and fits of the correction-to-scaling
//! form G(L) = a L^s (1 + b L^{−θs}) with s = 1/ν.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{sweep_line, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::models::{build_model, ModelKind, ModelSpec};
use crate::qstate::{centered_window, partial_trace};
use crate::rfsfield::fmt17;

pub const DEFAULT_HC: f64 = 1.0;
/// Fewer distinct lengths than this keep s fixed at the log-log slope.
pub const JOINT_MIN_LENGTHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FssDataset {
    pub lengths: Vec<usize>,
    pub h_values: Vec<f64>,
    /// curves[l][i] = ⟨M⟩ at lengths[l], h_values[i].
    pub curves: Vec<Vec<f64>>,
    pub kappa: f64,
}

impl FssDataset {
    pub fn new(lengths: Vec<usize>, h_values: Vec<f64>, curves: Vec<Vec<f64>>, kappa: f64) -> Result<Self> {
        if lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec("lengths must be strictly increasing".into()));
        }
        if h_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec("h values must be strictly increasing".into()));
        }
        if curves.len() != lengths.len() {
            return Err(Error::DimensionMismatch {
                expected: lengths.len(),
                got: curves.len(),
            });
        }
        if let Some(c) = curves.iter().find(|c| c.len() != h_values.len()) {
            return Err(Error::DimensionMismatch {
                expected: h_values.len(),
                got: c.len(),
            });
        }
        Ok(FssDataset {
            lengths,
            h_values,
            curves,
            kappa,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,h,expectation\n");
        for (l, curve) in self.lengths.iter().zip(&self.curves) {
            for (h, v) in self.h_values.iter().zip(curve) {
                out.push_str(&format!("{l},{},{}\n", fmt17(*h), fmt17(*v)));
            }
        }
        out
    }

    /// Reads `L,h,expectation` rows; every length must cover the same h grid.
    pub fn from_csv(text: &str, kappa: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for rec in reader.deserialize::<(usize, f64, f64)>() {
            rows.push(rec.map_err(|e| Error::Config(format!("fss data: {e}")))?);
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut lengths: Vec<usize> = rows.iter().map(|r| r.0).collect();
        lengths.dedup();
        let h_values: Vec<f64> = rows.iter().filter(|r| r.0 == lengths[0]).map(|r| r.1).collect();
        let curves: Vec<Vec<f64>> = lengths
            .iter()
            .map(|&l| {
                let hs: Vec<f64> = rows.iter().filter(|r| r.0 == l).map(|r| r.1).collect();
                if hs != h_values {
                    return Err(Error::InvalidSpec(format!("length {l} uses a different h grid")));
                }
                Ok(rows.iter().filter(|r| r.0 == l).map(|r| r.2).collect())
            })
            .collect::<Result<_>>()?;
        FssDataset::new(lengths, h_values, curves, kappa)
    }

    /// ⟨M⟩ at h by linear interpolation, one value per length.
    pub fn values_at(&self, h: f64) -> Result<Vec<f64>> {
        let hs = &self.h_values;
        if hs.is_empty() || h < hs[0] || h > hs[hs.len() - 1] {
            return Err(Error::Domain(format!("h = {h} outside the sampled range")));
        }
        let i = hs.partition_point(|&x| x <= h).clamp(1, hs.len().max(2) - 1);
        Ok(self
            .curves
            .iter()
            .map(|c| {
                if hs.len() == 1 {
                    return c[0];
                }
                let t = (h - hs[i - 1]) / (hs[i] - hs[i - 1]);
                c[i - 1] + t * (c[i] - c[i - 1])
            })
            .collect())
    }
}

/// ⟨M⟩ = tr(ρ_L M) on the centered window of the ANNNI ground state at (κ, h)
/// for every h and L.
pub fn observable_sweep(
    m: &CMat,
    base: &ModelSpec,
    kappa: f64,
    h_values: &[f64],
    lengths: &[usize],
    opts: &SolverOptions,
) -> Result<FssDataset> {
    if base.kind != ModelKind::Annni {
        return Err(Error::InvalidSpec("finite-size sweeps use the ANNNI chain".into()));
    }
    let order = m.nrows();
    if !order.is_power_of_two() || order < 2 || m.ncols() != order {
        return Err(Error::InvalidSpec(format!("observable of order {order}x{}", m.ncols())));
    }
    let k = order.trailing_zeros() as usize;
    let lambdas: Vec<[f64; 2]> = h_values.iter().map(|&h| [kappa, h]).collect();
    let curves = lengths
        .par_iter()
        .map(|&l| {
            let mut spec = base.clone();
            spec.sites = l;
            let model = build_model(&spec)?;
            let window = centered_window(l, k)?;
            sweep_line(&model, &lambdas, opts)
                .into_iter()
                .map(|gs| {
                    let gs = gs.require_converged()?;
                    let rho = partial_trace(&gs.vector, l, window.clone())?;
                    Ok(crate::linalg::frob_inner(&rho.matrix, m).re)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    FssDataset::new(lengths.to_vec(), h_values.to_vec(), curves, kappa)
}

/// Location and value of max |d⟨M⟩/dh|: central differences inside, one-sided
/// at the ends, leftmost maximizer on ties.
pub fn max_gradient(h: &[f64], curve: &[f64]) -> Result<(f64, f64)> {
    let n = h.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    if curve.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: curve.len(),
        });
    }
    let grad = |i: usize| {
        let (a, b) = match i {
            0 => (0, 1),
            i if i == n - 1 => (n - 2, n - 1),
            i => (i - 1, i + 1),
        };
        ((curve[b] - curve[a]) / (h[b] - h[a])).abs()
    };
    let mut best = (h[0], grad(0));
    for i in 1..n {
        let g = grad(i);
        if g > best.1 * (1.0 + 1e-12) && g - best.1 > 1e-300 {
            best = (h[i], g);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FssFit {
    /// Stage-one log-log slope of G against L.
    pub loglog_slope: f64,
    /// Leading exponent s = 1/ν after the correction fit.
    pub slope: f64,
    pub nu_estimate: f64,
    pub a_double_prime: f64,
    pub b_double_prime: f64,
    pub theta: f64,
    pub beta: Option<f64>,
    /// True when s was refined together with the correction terms.
    pub joint: bool,
    pub residual_norm: f64,
    /// ln G − ln(model) per length.
    pub residuals: Vec<f64>,
}

fn distinct(lengths: &[f64]) -> usize {
    let mut v = lengths.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Least-squares slope and intercept of y against x.
fn line_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 1e-300 {
        return Err(Error::SingularFit("all lengths equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// ln G − s ln L − ln(1 + b L^{−θs}) with ln a profiled out by centering.
#[derive(Clone)]
struct Correction {
    ln_l: Vec<f64>,
    ln_g: Vec<f64>,
    fixed_s: Option<f64>,
    /// (s, b, θ) or (b, θ) when s is fixed.
    p: DVector<f64>,
}

impl Correction {
    fn unpack(&self) -> (f64, f64, f64) {
        match self.fixed_s {
            Some(s) => (s, self.p[0], self.p[1]),
            None => (self.p[0], self.p[1], self.p[2]),
        }
    }

    /// Raw residuals and their partial derivatives before centering.
    fn raw(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let (s, b, th) = self.unpack();
        let n = self.ln_l.len();
        let np = self.p.len();
        let mut r = Vec::with_capacity(n);
        let mut j = DMatrix::zeros(n, np);
        for (i, (&x, &y)) in self.ln_l.iter().zip(&self.ln_g).enumerate() {
            let e = (-th * s * x).exp();
            let q = 1.0 + b * e;
            if q <= 0.0 || !q.is_finite() {
                return None;
            }
            r.push(y - s * x - q.ln());
            let d_b = -e / q;
            let d_th = b * e * s * x / q;
            let d_s = -x + b * e * th * x / q;
            match self.fixed_s {
                Some(_) => {
                    j[(i, 0)] = d_b;
                    j[(i, 1)] = d_th;
                }
                None => {
                    j[(i, 0)] = d_s;
                    j[(i, 1)] = d_b;
                    j[(i, 2)] = d_th;
                }
            }
        }
        Some((r, j))
    }

    fn ln_a(&self) -> Option<f64> {
        let (r, _) = self.raw()?;
        Some(r.iter().sum::<f64>() / r.len() as f64)
    }

    fn cost(&self) -> f64 {
        self.residuals().map_or(f64::INFINITY, |r| r.norm_squared())
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Correction {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let (r, _) = self.raw()?;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        Some(DVector::from_iterator(r.len(), r.iter().map(|v| v - mean)))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let (_, mut j) = self.raw()?;
        for mut col in j.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Some(j)
    }
}

const THETA_STARTS: [f64; 7] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 3.0];
const B_STARTS: [f64; 4] = [-0.5, 0.1, 1.0, 10.0];

/// Two-stage fit of maximal gradients G(L). Stage one is the log-log slope.
/// Stage two minimizes the log residuals of a L^s (1 + b L^{−θs}) over (b, θ)
/// by Levenberg–Marquardt, refining s jointly when at least
/// [`JOINT_MIN_LENGTHS`] distinct lengths are available.
pub fn fit_fss(lengths: &[f64], gradients: &[f64]) -> Result<FssFit> {
    if lengths.len() != gradients.len() {
        return Err(Error::DimensionMismatch {
            expected: lengths.len(),
            got: gradients.len(),
        });
    }
    let nd = distinct(lengths);
    if nd < 2 {
        return Err(Error::SingularFit("all lengths equal".into()));
    }
    if lengths.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: lengths.len(),
        });
    }
    if lengths.iter().chain(gradients).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("lengths and gradients must be positive".into()));
    }
    let ln_l: Vec<f64> = lengths.iter().map(|v| v.ln()).collect();
    let ln_g: Vec<f64> = gradients.iter().map(|v| v.ln()).collect();
    let (s0, _) = line_fit(&ln_l, &ln_g)?;
    let joint = nd >= JOINT_MIN_LENGTHS;

    let solver = LevenbergMarquardt::new().with_patience(400);
    let mut best: Option<Correction> = None;
    for &th in &THETA_STARTS {
        for &b in &B_STARTS {
            let p = if joint {
                DVector::from_vec(vec![s0, b, th])
            } else {
                DVector::from_vec(vec![b, th])
            };
            let start = Correction {
                ln_l: ln_l.clone(),
                ln_g: ln_g.clone(),
                fixed_s: (!joint).then_some(s0),
                p,
            };
            if start.raw().is_none() {
                continue;
            }
            let (done, _) = solver.minimize(start);
            let c = done.cost();
            if c.is_finite() && best.as_ref().map_or(true, |b| c < b.cost()) {
                best = Some(done);
            }
        }
    }
    let best = best.ok_or_else(|| Error::SingularFit("no admissible start".into()))?;
    let (s, b, th) = best.unpack();
    let residuals: Vec<f64> = best.residuals().expect("admissible").iter().copied().collect();
    let residual_norm = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(FssFit {
        loglog_slope: s0,
        slope: s,
        nu_estimate: 1.0 / s,
        a_double_prime: best.ln_a().expect("admissible").exp(),
        b_double_prime: b,
        theta: th,
        beta: None,
        joint,
        residual_norm,
        residuals,
    })
}

/// β from |⟨M⟩(h_c)| ∝ L^{−β/ν}.
pub fn fit_beta(lengths: &[f64], values: &[f64], nu: f64) -> Result<f64> {
    if lengths.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: lengths.len(),
            got: values.len(),
        });
    }
    if distinct(lengths) < 2 {
        return Err(Error::SingularFit("all lengths equal".into()));
    }
    if values.iter().any(|v| *v == 0.0) || lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Domain("log-log fit needs nonzero values".into()));
    }
    let x: Vec<f64> = lengths.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let (slope, _) = line_fit(&x, &y)?;
    Ok(-slope * nu)
}

/// Maximal gradient per length, then [`fit_fss`], then β at `h_c`.
pub fn analyze(data: &FssDataset, h_c: f64) -> Result<(Vec<(f64, f64)>, FssFit)> {
    let maxima = data
        .curves
        .iter()
        .map(|c| max_gradient(&data.h_values, c))
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<f64> = data.lengths.iter().map(|&l| l as f64).collect();
    let grads: Vec<f64> = maxima.iter().map(|m| m.1).collect();
    let mut fit = fit_fss(&lengths, &grads)?;
    let at_hc = data.values_at(h_c)?;
    fit.beta = fit_beta(&lengths, &at_hc, fit.nu_estimate).ok();
    Ok((maxima, fit))
}
