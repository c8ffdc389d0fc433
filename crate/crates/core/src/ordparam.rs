//! Order-parameter discovery: phase labels from the angle map, the quadratic
//! program over unit-norm Hermitian observables, the two-state closed form,
//! the Ξ-operator SVD, and projector analyses of a solution.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    frob_inner, herm_eigen, hermiticity_defect, hermitian_part, sym_eigen, CMat, C64, ZERO,
};
use crate::qstate::{purity, unvec, vec, DensityMatrix};

pub const DEFAULT_Y_MIN: f64 = 0.1;
pub const ETA_GRID: usize = 64;
/// |λ| below this counts as zero when testing indefiniteness.
pub const INDEFINITE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    /// Index into the RDM collection this sample refers to.
    pub index: usize,
    pub lambda: [f64; 2],
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub index: usize,
    pub lambda: [f64; 2],
    pub angle: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabels {
    pub eta: f64,
    pub y_min: f64,
    pub samples: Vec<LabeledSample>,
    /// RDM indices with y > y_min.
    pub i_plus: Vec<usize>,
    /// RDM indices with y < −y_min.
    pub i_minus: Vec<usize>,
}

impl PhaseLabels {
    /// Labels given directly as index sets.
    pub fn from_sets(i_plus: Vec<usize>, i_minus: Vec<usize>) -> Result<Self> {
        if i_plus.is_empty() {
            return Err(Error::EmptyPhaseSet("I+"));
        }
        if i_minus.is_empty() {
            return Err(Error::EmptyPhaseSet("I-"));
        }
        Ok(PhaseLabels {
            eta: f64::NAN,
            y_min: f64::NAN,
            samples: Vec::new(),
            i_plus,
            i_minus,
        })
    }
}

pub fn eta_grid() -> Vec<f64> {
    (0..ETA_GRID)
        .map(|k| -PI + 2.0 * PI * (k + 1) as f64 / ETA_GRID as f64)
        .collect()
}

fn split(samples: &[AngleSample], eta: f64, y_min: f64) -> (Vec<LabeledSample>, Vec<usize>, Vec<usize>) {
    let mut labeled = Vec::with_capacity(samples.len());
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for s in samples {
        let y = (s.angle + eta).sin();
        if y > y_min {
            plus.push(s.index);
        } else if y < -y_min {
            minus.push(s.index);
        }
        labeled.push(LabeledSample {
            index: s.index,
            lambda: s.lambda,
            angle: s.angle,
            y,
        });
    }
    (labeled, plus, minus)
}

/// yᵢ = sin(pᵢ + η); samples with |yᵢ| ≤ y_min join neither set.
pub fn label_phases(samples: &[AngleSample], eta: f64, y_min: f64) -> Result<PhaseLabels> {
    let (labeled, i_plus, i_minus) = split(samples, eta, y_min);
    if i_plus.is_empty() {
        return Err(Error::EmptyPhaseSet("I+"));
    }
    if i_minus.is_empty() {
        return Err(Error::EmptyPhaseSet("I-"));
    }
    Ok(PhaseLabels {
        eta,
        y_min,
        samples: labeled,
        i_plus,
        i_minus,
    })
}

/// Real coordinates of H in an orthonormal basis of Hermitian matrices:
/// diagonal entries, then √2 Re and √2 Im of each upper entry.
pub fn herm_coords(h: &CMat) -> Vec<f64> {
    let m = h.nrows();
    let mut out = Vec::with_capacity(m * m);
    out.extend((0..m).map(|a| h[(a, a)].re));
    let r2 = std::f64::consts::SQRT_2;
    for a in 0..m {
        for b in a + 1..m {
            out.push(r2 * h[(a, b)].re);
            out.push(r2 * h[(a, b)].im);
        }
    }
    out
}

pub fn from_herm_coords(x: &[f64], m: usize) -> CMat {
    let mut h = CMat::zeros(m, m);
    for a in 0..m {
        h[(a, a)] = C64::new(x[a], 0.0);
    }
    let r2 = std::f64::consts::SQRT_2;
    let mut k = m;
    for a in 0..m {
        for b in a + 1..m {
            let z = C64::new(x[k], x[k + 1]) / r2;
            h[(a, b)] = z;
            h[(b, a)] = z.conj();
            k += 2;
        }
    }
    h
}

/// Isometric embedding of a fixed RDM collection into the smallest real space
/// containing every vec ρᵢ. Every labeled problem over the collection becomes an
/// r×r eigenproblem with r ≤ min(N, m²), so A (of order m²) is never formed.
#[derive(Debug, Clone)]
pub struct Gram {
    pub order: usize,
    /// Row i holds the coordinates of ρᵢ.
    pub coords: DMatrix<f64>,
    /// Maps embedded coordinates back to Hermitian-basis coordinates (m² × r).
    pub basis: Option<DMatrix<f64>>,
    pub purity: Vec<f64>,
}

impl Gram {
    pub fn new(rdms: &[DensityMatrix]) -> Result<Self> {
        let order = rdms.first().map_or(0, |r| r.order());
        if let Some(bad) = rdms.iter().find(|r| r.order() != order) {
            return Err(Error::DimensionMismatch {
                expected: order,
                got: bad.order(),
            });
        }
        let n = rdms.len();
        let d = order * order;
        let rows: Vec<Vec<f64>> = rdms.iter().map(|r| herm_coords(&r.matrix)).collect();
        let x = DMatrix::from_fn(n, d, |i, k| rows[i][k]);
        let purity: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
        if n >= d {
            return Ok(Gram {
                order,
                coords: x,
                basis: None,
                purity,
            });
        }
        let (lam, u) = sym_eigen(&x * x.transpose());
        let top = lam.last().copied().unwrap_or(0.0).max(0.0);
        let keep: Vec<usize> = (0..n).filter(|&k| lam[k] > 1e-13 * top).collect();
        let coords = DMatrix::from_fn(n, keep.len(), |i, p| u[(i, keep[p])] * lam[keep[p]].sqrt());
        let lift = DMatrix::from_fn(n, keep.len(), |i, p| u[(i, keep[p])] / lam[keep[p]].sqrt());
        Ok(Gram {
            order,
            coords,
            basis: Some(x.transpose() * lift),
            purity,
        })
    }

    pub fn rank(&self) -> usize {
        self.coords.ncols()
    }

    fn to_matrix(&self, y: &[f64]) -> CMat {
        match &self.basis {
            None => from_herm_coords(y, self.order),
            Some(q) => {
                let v = q * DVector::from_column_slice(y);
                from_herm_coords(v.as_slice(), self.order)
            }
        }
    }

    /// Hermitian-basis coordinates of an embedded vector.
    fn lift(&self, y: &[f64]) -> Vec<f64> {
        match &self.basis {
            None => y.to_vec(),
            Some(q) => (q * DVector::from_column_slice(y)).as_slice().to_vec(),
        }
    }
}

/// Eigen-structure of A inside the embedding.
struct Reduced {
    /// Eigenvalues, ascending.
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    rank: usize,
}

impl Reduced {
    fn extremes(&self, full_dim: usize) -> (f64, f64) {
        let mut lo = self.values.first().copied().unwrap_or(0.0);
        let mut hi = self.values.last().copied().unwrap_or(0.0);
        if self.rank < full_dim {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        (lo, hi)
    }
}

fn reduce(gram: &Gram, plus: &[usize], minus: &[usize]) -> Reduced {
    let r = gram.rank();
    let mut a = DMatrix::zeros(r, r);
    for (set, sign) in [(plus, -1.0), (minus, 1.0)] {
        let w = sign / set.len() as f64;
        for &i in set {
            let x = gram.coords.row(i);
            a.ger(w / gram.purity[i], &x.transpose(), &x.transpose(), 1.0);
        }
    }
    let (values, vectors) = if r == 0 {
        (Vec::new(), DMatrix::zeros(0, 0))
    } else {
        sym_eigen(a)
    };
    Reduced { values, vectors, rank: r }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaChoice {
    pub eta: f64,
    pub margin: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// (η, margin) for every grid value that produced two nonempty sets.
    pub scan: Vec<(f64, f64)>,
}

/// Grid search over 64 values of η ∈ (−π, π] for the largest indefiniteness
/// margin min(−λ_min(A), λ_max(A)).
///
/// Ties within a relative 1e-9 go to the larger mean |yᵢ| over labeled
/// samples, then to the deeper minimum (larger −λ_min), then to the smaller η.
pub fn select_eta(samples: &[AngleSample], gram: &Gram, y_min: f64) -> Result<EtaChoice> {
    if samples.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: samples.len(),
        });
    }
    let full = gram.order * gram.order;
    struct Cand {
        eta: f64,
        margin: f64,
        sep: f64,
        lo: f64,
        hi: f64,
    }
    let mut cands = Vec::new();
    for eta in eta_grid() {
        let (labeled, plus, minus) = split(samples, eta, y_min);
        if plus.is_empty() || minus.is_empty() {
            continue;
        }
        let red = reduce(gram, &plus, &minus);
        let (lo, hi) = red.extremes(full);
        let used: Vec<f64> = labeled.iter().map(|s| s.y.abs()).filter(|&a| a > y_min).collect();
        let sep = used.iter().sum::<f64>() / used.len() as f64;
        cands.push(Cand {
            eta,
            margin: (-lo).min(hi),
            sep,
            lo,
            hi,
        });
    }
    if cands.is_empty() {
        return Err(Error::NoValidLabeling);
    }
    let close = |a: f64, b: f64, rel: f64| (a - b).abs() <= rel * a.abs().max(b.abs());
    let mut best = 0;
    for k in 1..cands.len() {
        let (c, b) = (&cands[k], &cands[best]);
        let better = if !close(c.margin, b.margin, 1e-9) {
            c.margin > b.margin
        } else if !close(c.sep, b.sep, 1e-12) {
            c.sep > b.sep
        } else if !close(c.lo, b.lo, 1e-9) {
            c.lo < b.lo
        } else {
            false
        };
        if better {
            best = k;
        }
    }
    let b = &cands[best];
    Ok(EtaChoice {
        eta: b.eta,
        margin: b.margin,
        lambda_min: b.lo,
        lambda_max: b.hi,
        scan: cands.iter().map(|c| (c.eta, c.margin)).collect(),
    })
}

/// A = −(1/|I⁺|) Σ rᵢrᵢ†/pᵢ + (1/|I⁻|) Σ rⱼrⱼ†/pⱼ with rᵢ = vec(ρᵢ), formed densely.
pub fn build_a_matrix(rdms: &[DensityMatrix], labels: &PhaseLabels) -> Result<CMat> {
    let m = rdms[labels.i_plus[0]].order();
    let mut a = CMat::zeros(m * m, m * m);
    for (set, sign) in [(&labels.i_plus, -1.0), (&labels.i_minus, 1.0)] {
        let w = sign / set.len() as f64;
        for &i in set.iter() {
            let rho = &rdms[i];
            let r = nalgebra::DVector::from_vec(vec(&rho.matrix));
            a += (&r * r.adjoint()).scale(w / purity(rho));
        }
    }
    Ok(a)
}

/// vec(K)† A vec(K) = −mean₊ tr(ρK)²/p + mean₋ tr(ρK)²/p for Hermitian K.
pub fn objective(rdms: &[DensityMatrix], labels: &PhaseLabels, k: &CMat) -> f64 {
    let part = |set: &[usize]| {
        set.iter()
            .map(|&i| {
                let t = frob_inner(&rdms[i].matrix, k).re;
                t * t / purity(&rdms[i])
            })
            .sum::<f64>()
            / set.len() as f64
    };
    -part(&labels.i_plus) + part(&labels.i_minus)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observable {
    #[serde(skip)]
    pub m: CMat,
    pub order: usize,
    /// Attained objective vec(M)† A vec(M).
    pub lambda_min: f64,
    pub a_lambda_min: f64,
    pub a_lambda_max: f64,
    pub null_dim: usize,
    /// ‖M − M†‖_F before symmetrization.
    pub hermiticity_defect: f64,
    /// True when the eigenvector was negated to make the I⁺ mean nonnegative.
    pub sign_flipped: bool,
}

impl Observable {
    /// Dual optimum of the trust-region problem.
    pub fn alpha_star(&self) -> f64 {
        -self.a_lambda_min
    }

    pub fn expectation(&self, rho: &DensityMatrix) -> f64 {
        frob_inner(&rho.matrix, &self.m).re
    }
}

fn check_indefinite(lo: f64, hi: f64) -> Result<()> {
    if lo < -INDEFINITE_TOL && hi > INDEFINITE_TOL {
        Ok(())
    } else {
        Err(Error::NotIndefinite {
            lambda_min: lo,
            lambda_max: hi,
        })
    }
}

fn finish(
    m_raw: CMat,
    rdms: &[DensityMatrix],
    labels: &PhaseLabels,
    lo: f64,
    hi: f64,
    null_dim: usize,
) -> Observable {
    let defect = hermiticity_defect(&m_raw);
    let mut m = hermitian_part(&m_raw);
    let nrm = m.norm();
    m.unscale_mut(nrm);
    let mean_plus: f64 = labels
        .i_plus
        .iter()
        .map(|&i| frob_inner(&rdms[i].matrix, &m).re)
        .sum::<f64>()
        / labels.i_plus.len() as f64;
    let flipped = mean_plus < 0.0;
    if flipped {
        m.neg_mut();
    }
    let attained = objective(rdms, labels, &m);
    Observable {
        order: m.nrows(),
        m,
        lambda_min: attained,
        a_lambda_min: lo,
        a_lambda_max: hi,
        null_dim,
        hermiticity_defect: defect,
        sign_flipped: flipped,
    }
}

fn check_labels(rdms: &[DensityMatrix], labels: &PhaseLabels) -> Result<()> {
    if labels.i_plus.is_empty() {
        return Err(Error::EmptyPhaseSet("I+"));
    }
    if labels.i_minus.is_empty() {
        return Err(Error::EmptyPhaseSet("I-"));
    }
    if let Some(&bad) = labels.i_plus.iter().chain(&labels.i_minus).find(|&&i| i >= rdms.len()) {
        return Err(Error::IndexOutOfRange(format!("sample {bad} of {}", rdms.len())));
    }
    Ok(())
}

/// Minimum-eigenvector solution of the quadratic program, computed in the
/// Gram space of the labeled RDMs.
pub fn solve_order_parameter(rdms: &[DensityMatrix], labels: &PhaseLabels) -> Result<Observable> {
    check_labels(rdms, labels)?;
    let gram = Gram::new(rdms)?;
    solve_with_gram(rdms, &gram, labels)
}

pub fn solve_with_gram(rdms: &[DensityMatrix], gram: &Gram, labels: &PhaseLabels) -> Result<Observable> {
    check_labels(rdms, labels)?;
    let m = gram.order;
    let red = reduce(gram, &labels.i_plus, &labels.i_minus);
    let (lo, hi) = red.extremes(m * m);
    check_indefinite(lo, hi)?;
    let scale = lo.abs().max(hi.abs());
    let tied: Vec<usize> = (0..red.values.len())
        .filter(|&k| red.values[k] - red.values[0] <= 1e-10 * scale)
        .collect();
    let column = |k: usize| red.vectors.column(k).iter().copied().collect::<Vec<f64>>();
    let mut y = column(0);
    if tied.len() > 1 {
        // overlap with vec(I)/√m is the sum of the diagonal coordinates over √m
        let t: Vec<f64> = tied
            .iter()
            .map(|&k| gram.lift(&column(k))[..m].iter().sum::<f64>())
            .collect();
        let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nt > 1e-12 {
            y = vec![0.0; red.rank];
            for (&k, tk) in tied.iter().zip(&t) {
                for (p, yp) in y.iter_mut().enumerate() {
                    *yp += tk / nt * red.vectors[(p, k)];
                }
            }
        }
    }
    Ok(finish(gram.to_matrix(&y), rdms, labels, lo, hi, tied.len()))
}

/// Same problem solved by diagonalizing the dense m²×m² matrix A.
pub fn solve_order_parameter_dense(rdms: &[DensityMatrix], labels: &PhaseLabels) -> Result<Observable> {
    check_labels(rdms, labels)?;
    let a = build_a_matrix(rdms, labels)?;
    let e = herm_eigen(&a);
    let (lo, hi) = (e.values[0], *e.values.last().unwrap());
    check_indefinite(lo, hi)?;
    let scale = lo.abs().max(hi.abs());
    let tied: Vec<usize> = (0..e.values.len())
        .filter(|&k| e.values[k] - lo <= 1e-10 * scale)
        .collect();
    let m = rdms[labels.i_plus[0]].order();
    let n2 = m * m;
    let id: Vec<C64> = vec(&CMat::identity(m, m)).iter().map(|z| z / (m as f64).sqrt()).collect();
    let mut x: Vec<C64> = (0..n2).map(|i| e.vectors[(i, 0)]).collect();
    if tied.len() > 1 {
        let mut proj = vec![ZERO; n2];
        for &k in &tied {
            let t: C64 = (0..n2).map(|i| e.vectors[(i, k)].conj() * id[i]).sum();
            for (i, p) in proj.iter_mut().enumerate() {
                *p += e.vectors[(i, k)] * t;
            }
        }
        let np = proj.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if np > 1e-12 {
            x = proj.iter().map(|z| z / np).collect();
        }
    }
    // remove the arbitrary global phase: tr(X²) = e^{2iφ}‖M‖²
    let xm = unvec(&x, m)?;
    let t2: C64 = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| xm[(i, j)] * xm[(j, i)]).sum();
    let phase = C64::from_polar(1.0, -0.5 * t2.arg());
    let m_raw = xm.map(|z| z * phase);
    Ok(finish(m_raw, rdms, labels, lo, hi, tied.len()))
}

fn normalized(rho: &DensityMatrix) -> CMat {
    let n = rho.matrix.norm();
    rho.matrix.unscale(n)
}

/// M = (ρ̂₊ − cρ̂₋)/√(1−c²) with c = ⟨ρ̂₊, ρ̂₋⟩.
pub fn solve_two_state(rho_plus: &DensityMatrix, rho_minus: &DensityMatrix) -> Result<Observable> {
    if rho_plus.order() != rho_minus.order() {
        return Err(Error::DimensionMismatch {
            expected: rho_plus.order(),
            got: rho_minus.order(),
        });
    }
    let (p, q) = (normalized(rho_plus), normalized(rho_minus));
    let c = frob_inner(&p, &q).re;
    if c >= 1.0 - 1e-12 {
        return Err(Error::IdenticalStates(c));
    }
    let s = (1.0 - c * c).sqrt();
    let m = (&p - q.scale(c)).unscale(s);
    let tp = frob_inner(&rho_plus.matrix, &m).re;
    let tm = frob_inner(&rho_minus.matrix, &m).re;
    let objective = -tp * tp / purity(rho_plus) + tm * tm / purity(rho_minus);
    Ok(Observable {
        order: m.nrows(),
        hermiticity_defect: hermiticity_defect(&m),
        m,
        lambda_min: objective,
        a_lambda_min: -s,
        a_lambda_max: s,
        null_dim: 1,
        sign_flipped: false,
    })
}

/// Ξ(K) = −⟨K,ρ₊⟩/⟨ρ₊,ρ₊⟩ ρ₊ + ⟨K,ρ₋⟩/⟨ρ₋,ρ₋⟩ ρ₋.
pub fn xi_apply(k: &CMat, rho_plus: &CMat, rho_minus: &CMat) -> Result<CMat> {
    let pp = frob_inner(rho_plus, rho_plus).re;
    let mm = frob_inner(rho_minus, rho_minus).re;
    if pp == 0.0 || mm == 0.0 {
        return Err(Error::Domain("Ξ needs nonzero states".into()));
    }
    let a = frob_inner(k, rho_plus) / pp;
    let b = frob_inner(k, rho_minus) / mm;
    Ok(rho_plus * (-a) + rho_minus * b)
}

#[derive(Debug, Clone)]
pub struct XiSvd {
    pub c: f64,
    pub s1: f64,
    pub s2: f64,
    pub v1: CMat,
    pub v2: CMat,
    pub u1: CMat,
    pub u2: CMat,
}

impl XiSvd {
    /// s·(⟨K,V̂₁⟩U₁ + ⟨K,V₂⟩Û₂).
    pub fn apply(&self, k: &CMat) -> CMat {
        let v1h = self.v1.unscale(self.v1.norm());
        let u2h = self.u2.unscale(self.u2.norm());
        (&self.u1 * frob_inner(&v1h, k) + u2h * frob_inner(&self.v2, k)) * C64::new(self.s1, 0.0)
    }
}

/// Reduced SVD of Ξ: s₁ = s₂ = √(1−c²), V₁ = ρ̂₊ − cρ̂₋, V₂ = ρ̂₋,
/// U₁ = −ρ̂₊, U₂ = ρ̂₋ − cρ̂₊ (unnormalized where stated).
pub fn xi_svd(rho_plus: &CMat, rho_minus: &CMat) -> Result<XiSvd> {
    let p = rho_plus.unscale(rho_plus.norm());
    let q = rho_minus.unscale(rho_minus.norm());
    let c = frob_inner(&p, &q).re;
    if c >= 1.0 - 1e-12 {
        return Err(Error::DegenerateStates(c));
    }
    let s = (1.0 - c * c).sqrt();
    Ok(XiSvd {
        c,
        s1: s,
        s2: s,
        v1: &p - q.scale(c),
        v2: q.clone(),
        u1: -p.clone(),
        u2: q - p.scale(c),
    })
}

/// Eigenvalue/rank-one projector pairs sorted by descending |α|.
pub fn eigen_projectors(m: &CMat) -> Vec<(f64, CMat)> {
    let e = herm_eigen(m);
    let n = m.nrows();
    let mut out: Vec<(f64, CMat)> = (0..n)
        .map(|k| {
            let v = e.vectors.column(k).into_owned();
            (e.values[k], &v * v.adjoint())
        })
        .collect();
    out.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()).then(b.0.total_cmp(&a.0)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductFit {
    pub angles: Vec<f64>,
    pub residual: f64,
}

pub const PRODUCT_GRID: usize = 257;

fn product_overlap(v: &[C64], k: usize, theta: &[f64]) -> f64 {
    let mut cur: Vec<C64> = v.to_vec();
    for &t in theta.iter().take(k) {
        let (c, s) = (t.cos(), t.sin());
        let half = cur.len() / 2;
        cur = (0..half).map(|i| cur[i] * c + cur[half + i] * s).collect();
    }
    cur[0].norm_sqr()
}

/// Best product state ⊗ᵢ(cos θᵢ|0⟩ + sin θᵢ|1⟩) for a rank-one projector on k ≤ 3 sites.
pub fn fit_product_projector(proj: &CMat) -> Result<ProductFit> {
    let n = proj.nrows();
    let k = n.trailing_zeros() as usize;
    if !n.is_power_of_two() || k == 0 || k > 3 {
        return Err(Error::Domain(format!("product fit supports 1 to 3 sites, got order {n}")));
    }
    let tr = crate::linalg::trace(proj);
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return Err(Error::NotRankOne(format!("trace {tr}")));
    }
    let idem = (proj * proj - proj).norm();
    if idem > 1e-8 {
        return Err(Error::NotRankOne(format!("‖P²−P‖ = {idem:e}")));
    }
    let j = (0..n).max_by(|&a, &b| proj[(a, a)].re.total_cmp(&proj[(b, b)].re)).unwrap();
    let scale = proj[(j, j)].re.sqrt();
    let v: Vec<C64> = (0..n).map(|i| proj[(i, j)] / scale).collect();

    let grid: Vec<f64> = (0..PRODUCT_GRID)
        .map(|a| -PI / 2.0 + PI * (a + 1) as f64 / PRODUCT_GRID as f64)
        .collect();
    let (cs, sn): (Vec<f64>, Vec<f64>) = grid.iter().map(|t| (t.cos(), t.sin())).unzip();
    let mut best = (-1.0, vec![0usize; k]);
    let half = n / 2;
    for a in 0..PRODUCT_GRID {
        let u1: Vec<C64> = (0..half).map(|i| v[i] * cs[a] + v[half + i] * sn[a]).collect();
        if k == 1 {
            let f = u1[0].norm_sqr();
            if f > best.0 {
                best = (f, vec![a]);
            }
            continue;
        }
        let q = half / 2;
        for b in 0..PRODUCT_GRID {
            let u2: Vec<C64> = (0..q).map(|i| u1[i] * cs[b] + u1[q + i] * sn[b]).collect();
            if k == 2 {
                let f = u2[0].norm_sqr();
                if f > best.0 {
                    best = (f, vec![a, b]);
                }
                continue;
            }
            for c in 0..PRODUCT_GRID {
                let f = (u2[0] * cs[c] + u2[1] * sn[c]).norm_sqr();
                if f > best.0 {
                    best = (f, vec![a, b, c]);
                }
            }
        }
    }
    let mut theta: Vec<f64> = best.1.iter().map(|&a| grid[a]).collect();
    let mut value = best.0;
    // coordinate-wise parabolic steps; the optimum may lie on a flat ridge
    let h = PI / PRODUCT_GRID as f64;
    for _ in 0..8 {
        let before = value;
        for ax in 0..k {
            let mut t = theta.clone();
            t[ax] -= h;
            let fm = product_overlap(&v, k, &t);
            t[ax] += 2.0 * h;
            let fp = product_overlap(&v, k, &t);
            let curv = fm - 2.0 * value + fp;
            if curv < 0.0 {
                t[ax] = theta[ax] + (h * (fm - fp) / (2.0 * curv)).clamp(-h, h);
                let f = product_overlap(&v, k, &t);
                if f > value {
                    value = f;
                    theta = t;
                }
            }
        }
        if value - before <= 1e-15 {
            break;
        }
    }
    let wrapped = theta
        .iter()
        .map(|&t| {
            let w = (t + PI / 2.0).rem_euclid(PI) - PI / 2.0;
            if w <= -PI / 2.0 {
                PI / 2.0
            } else {
                w
            }
        })
        .collect();
    Ok(ProductFit {
        angles: wrapped,
        residual: (1.0 - value).clamp(0.0, 1.0),
    })
}

fn apply_site(state: &mut [C64], n_sites: usize, site: usize, op: &CMat) {
    let b = 1usize << (n_sites - 1 - site);
    for i in 0..state.len() {
        if i & b == 0 {
            let (a0, a1) = (state[i], state[i | b]);
            state[i] = op[(0, 0)] * a0 + op[(0, 1)] * a1;
            state[i | b] = op[(1, 0)] * a0 + op[(1, 1)] * a1;
        }
    }
}

/// ⟨ψ| O^L(j) Πᵢ Σᵢ O^R(k) |ψ⟩ with zero-based sites j < k. `middle` holds one
/// operator per site strictly between j and k, or a single operator used on all of them.
pub fn sop_expectation<T>(
    state: &[T],
    n_sites: usize,
    j: usize,
    k: usize,
    left: &CMat,
    middle: &[CMat],
    right: &CMat,
) -> Result<f64>
where
    T: Copy + Into<C64>,
{
    if j >= k || k >= n_sites {
        return Err(Error::IndexOutOfRange(format!("sites {j}, {k} in a chain of {n_sites}")));
    }
    if state.len() != 1 << n_sites {
        return Err(Error::DimensionMismatch {
            expected: 1 << n_sites,
            got: state.len(),
        });
    }
    let between = k - j - 1;
    if !(middle.len() == between || middle.len() == 1 || (between == 0 && middle.is_empty())) {
        return Err(Error::DimensionMismatch {
            expected: between,
            got: middle.len(),
        });
    }
    let psi: Vec<C64> = state.iter().map(|&x| x.into()).collect();
    let mut phi = psi.clone();
    apply_site(&mut phi, n_sites, j, left);
    for s in 0..between {
        let op = if middle.len() == 1 { &middle[0] } else { &middle[s] };
        apply_site(&mut phi, n_sites, j + 1 + s, op);
    }
    apply_site(&mut phi, n_sites, k, right);
    let v: C64 = psi.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum();
    Ok(v.re)
}
