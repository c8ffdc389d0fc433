//! Density matrices, Uhlmann fidelity, Pauli decomposition and the two
//! fidelity-susceptibility oracles.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::eigensolver::{ground_state, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::{
    frob_inner, herm_eigen, hermitian_part, spectral_map, sym_eigen, trace, CMat, C64, ZERO,
};
use crate::models::{Driver, ParametricHamiltonian};
use crate::sparse::Csr;

pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-8;
/// Eigenvalues of √ρσ√ρ below this are treated as zero before taking roots.
const ROOT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub matrix: CMat,
    /// Zero-based indices of the kept sites.
    pub sites: Vec<usize>,
}

impl DensityMatrix {
    /// Symmetrizes the input and checks the trace.
    pub fn new(matrix: CMat, sites: Vec<usize>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("density matrix has non-finite entries".into()));
        }
        let matrix = hermitian_part(&matrix);
        let tr = trace(&matrix).re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::Domain(format!("density matrix trace is {tr}")));
        }
        Ok(DensityMatrix { matrix, sites })
    }

    pub fn from_matrix(matrix: CMat) -> Result<Self> {
        let k = matrix.nrows().trailing_zeros() as usize;
        DensityMatrix::new(matrix, (0..k).collect())
    }

    pub fn pure(state: &[C64]) -> Result<Self> {
        let n = state.len();
        let m = CMat::from_fn(n, n, |i, j| state[i] * state[j].conj());
        DensityMatrix::from_matrix(m)
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn purity(&self) -> f64 {
        purity(self)
    }
}

/// Window of `k` contiguous sites centered in a chain of `l` sites.
///
/// For k = 2 this is sites {L/2, L/2+1} in one-based numbering.
/// Ginibre-distributed density matrix of the given order and rank.
pub fn random_density_matrix<R: rand::Rng + ?Sized>(rng: &mut R, order: usize, rank: usize) -> DensityMatrix {
    let mut draw = || rng.sample::<f64, _>(rand_distr::StandardNormal);
    let g = CMat::from_fn(order, rank.max(1), |_, _| C64::new(draw(), draw()));
    let rho = &g * g.adjoint();
    let t = trace(&rho).re;
    DensityMatrix::from_matrix(rho.unscale(t)).expect("normalized Gram matrix")
}

/// Haar-random pure state of the given dimension.
pub fn random_pure_state<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<C64> {
    let mut draw = || rng.sample::<f64, _>(rand_distr::StandardNormal);
    let v: Vec<C64> = (0..dim).map(|_| C64::new(draw(), draw())).collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

pub fn centered_window(l: usize, k: usize) -> Result<Range<usize>> {
    if k == 0 || k > l {
        return Err(Error::IndexOutOfRange(format!("window of {k} sites in a chain of {l}")));
    }
    let start = (l / 2).saturating_sub(1 + (k - 1) / 2).min(l - k);
    Ok(start..start + k)
}

/// Reduced density matrix of a pure state on a contiguous zero-based window.
pub fn partial_trace<T>(state: &[T], n_sites: usize, keep: Range<usize>) -> Result<DensityMatrix>
where
    T: Copy + Into<C64>,
{
    if keep.is_empty() || keep.end > n_sites {
        return Err(Error::IndexOutOfRange(format!(
            "window {keep:?} in a chain of {n_sites} sites"
        )));
    }
    if state.len() != 1 << n_sites {
        return Err(Error::DimensionMismatch {
            expected: 1 << n_sites,
            got: state.len(),
        });
    }
    let k = keep.len();
    let dk = 1usize << k;
    let right = n_sites - keep.end;
    let dr = 1usize << right;
    let dl = 1usize << keep.start;
    let mut rho = CMat::zeros(dk, dk);
    let mut block = vec![ZERO; dk * dr];
    for a in 0..dl {
        let base = a * dk * dr;
        for (slot, x) in block.iter_mut().zip(&state[base..base + dk * dr]) {
            *slot = (*x).into();
        }
        for b in 0..dk {
            let rb = &block[b * dr..(b + 1) * dr];
            for bp in b..dk {
                let rbp = &block[bp * dr..(bp + 1) * dr];
                let s: C64 = rb.iter().zip(rbp).map(|(x, y)| x * y.conj()).sum();
                rho[(b, bp)] += s;
            }
        }
    }
    for b in 0..dk {
        for bp in 0..b {
            rho[(b, bp)] = rho[(bp, b)].conj();
        }
    }
    let norm = trace(&rho).re;
    rho.unscale_mut(norm);
    DensityMatrix::new(rho, keep.collect())
}

fn check_orders(a: &DensityMatrix, b: &DensityMatrix) -> Result<()> {
    if a.order() != b.order() {
        return Err(Error::DimensionMismatch {
            expected: a.order(),
            got: b.order(),
        });
    }
    Ok(())
}

fn sqrt_psd(rho: &CMat) -> Result<CMat> {
    let e = herm_eigen(rho);
    if let Some(&min) = e.values.first() {
        if min < -PSD_TOL {
            return Err(Error::NotPsd(min));
        }
    }
    Ok(spectral_map(&e, |x| if x > 0.0 { x.sqrt() } else { 0.0 }))
}

/// F = (tr √(√ρ σ √ρ))², clamped to [0, 1].
pub fn uhlmann_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_orders(rho, sigma)?;
    let s_rho = sqrt_psd(&rho.matrix)?;
    let se = herm_eigen(&sigma.matrix);
    if se.values[0] < -PSD_TOL {
        return Err(Error::NotPsd(se.values[0]));
    }
    let inner = hermitian_part(&(&s_rho * &sigma.matrix * &s_rho));
    let e = herm_eigen(&inner);
    let root: f64 = e
        .values
        .iter()
        .map(|&x| if x > ROOT_FLOOR { x.sqrt() } else { 0.0 })
        .sum();
    Ok((root * root).clamp(0.0, 1.0))
}

pub fn bures_distance_sq(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let f = uhlmann_fidelity(rho, sigma)?;
    Ok(2.0 * (1.0 - f.sqrt()))
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    frob_inner(&rho.matrix, &rho.matrix).re
}

/// Row-major stacking of a square matrix.
pub fn vec(m: &CMat) -> Vec<C64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * m.ncols());
    for i in 0..n {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unvec(v: &[C64], order: usize) -> Result<CMat> {
    if v.len() != order * order {
        return Err(Error::DimensionMismatch {
            expected: order * order,
            got: v.len(),
        });
    }
    Ok(CMat::from_row_slice(order, order, v))
}

/// ⟨A, B⟩ = tr(A†B), real part (exactly real for Hermitian pairs).
pub fn frobenius_inner(a: &CMat, b: &CMat) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(frob_inner(a, b).re)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub label: String,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliDecomposition {
    pub sites: usize,
    pub terms: Vec<PauliTerm>,
}

impl PauliDecomposition {
    pub fn reconstruct(&self) -> CMat {
        let m = 1usize << self.sites;
        let mut out = CMat::zeros(m, m);
        for t in &self.terms {
            out += crate::linalg::pauli_string(&t.label).scale(t.coeff);
        }
        out
    }

    pub fn coeff(&self, label: &str) -> f64 {
        self.terms
            .iter()
            .find(|t| t.label == label)
            .map_or(0.0, |t| t.coeff)
    }
}

pub const PAULI_DROP: f64 = 1e-12;

/// c_P = tr(P·M)/2^k for every Pauli string P; negligible terms dropped,
/// the rest sorted by descending magnitude (ties by label).
pub fn pauli_decompose(m: &CMat) -> Result<PauliDecomposition> {
    let dim = m.nrows();
    if !dim.is_power_of_two() || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim.next_power_of_two(),
            got: dim,
        });
    }
    let k = dim.trailing_zeros() as usize;
    let letters = ['I', 'X', 'Y', 'Z'];
    let mut terms = Vec::new();
    for code in 0..(1usize << (2 * k)) {
        let mut label = String::with_capacity(k);
        let mut x_mask = 0usize;
        let mut ops = Vec::with_capacity(k);
        for site in 0..k {
            let d = (code >> (2 * (k - 1 - site))) & 3;
            label.push(letters[d]);
            ops.push(d);
            if d == 1 || d == 2 {
                x_mask |= 1 << (k - 1 - site);
            }
        }
        // tr(P M) = Σ_l P[l⊕x, l] · M[l, l⊕x]
        let mut acc = ZERO;
        for l in 0..dim {
            let mut phase = C64::new(1.0, 0.0);
            for (site, &d) in ops.iter().enumerate() {
                let b = (l >> (k - 1 - site)) & 1;
                match d {
                    2 => phase *= if b == 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) },
                    3 if b == 1 => phase = -phase,
                    _ => {}
                }
            }
            acc += phase * m[(l, l ^ x_mask)];
        }
        let c = acc.re / dim as f64;
        if c.abs() >= PAULI_DROP {
            terms.push(PauliTerm { label, coeff: c });
        }
    }
    terms.sort_by(|a, b| b.coeff.abs().total_cmp(&a.coeff.abs()).then(a.label.cmp(&b.label)));
    Ok(PauliDecomposition { sites: k, terms })
}

/// χ = Σ_{k≠0} |⟨ψ_k|H_I|ψ₀⟩|² / (E_k − E₀)² over the full dense spectrum.
pub fn spectral_susceptibility_op(h: &Csr, driver: &Csr) -> Result<f64> {
    let (values, vecs) = sym_eigen(h.to_dense());
    let gap = values[1] - values[0];
    if gap <= crate::eigensolver::NEAR_DEGENERATE_GAP {
        return Err(Error::DegenerateGroundState(gap));
    }
    let n = h.dim;
    let v0: Vec<f64> = (0..n).map(|i| vecs[(i, 0)]).collect();
    let hv0 = driver.matvec(&v0);
    let mut chi = 0.0;
    for k in 1..n {
        let amp: f64 = (0..n).map(|i| vecs[(i, k)] * hv0[i]).sum();
        let de = values[k] - values[0];
        chi += amp * amp / (de * de);
    }
    Ok(chi)
}

pub fn spectral_susceptibility(
    model: &ParametricHamiltonian,
    lambda: [f64; 2],
    driver: Driver,
) -> Result<f64> {
    spectral_susceptibility_op(&model.assemble(lambda), model.component(driver))
}

/// −2 ln|⟨ψ₀(λ − δ/2)|ψ₀(λ + δ/2)⟩| / δ² along the driver direction.
///
/// The pair of states is centered on λ, which removes the first-order bias of
/// the one-sided pair (λ, λ+δ).
pub fn overlap_susceptibility_fd(
    model: &ParametricHamiltonian,
    lambda: [f64; 2],
    driver: Driver,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {delta}")));
    }
    let shift = |s: f64| match driver {
        Driver::Lambda1 => [lambda[0] + s, lambda[1]],
        Driver::Lambda2 => [lambda[0], lambda[1] + s],
    };
    let opts = SolverOptions {
        tol_rel: 1e-13,
        dense_threshold: 1024,
        ..SolverOptions::default()
    };
    let a = ground_state(&model.assemble(shift(-0.5 * delta)), None, &opts)?.require_converged()?;
    let b = ground_state(&model.assemble(shift(0.5 * delta)), Some(&a.vector), &opts)?
        .require_converged()?;
    let ov = aligned_overlap(&a.vector, &b.vector).abs().min(1.0);
    Ok(-2.0 * ov.ln() / (delta * delta))
}

/// ⟨a|b⟩ after multiplying b by the conjugate sign of its largest shared component.
pub fn aligned_overlap(a: &[f64], b: &[f64]) -> f64 {
    let mut k = 0;
    for i in 0..a.len() {
        if (a[i] * b[i]).abs() > (a[k] * b[k]).abs() {
            k = i;
        }
    }
    let s = if a[k] * b[k] < 0.0 { -1.0 } else { 1.0 };
    s * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}
