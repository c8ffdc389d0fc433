//! Ground states by thick-restart Lanczos with full reorthogonalization,
//! plus warm-started wavefront sweeps over a parameter lattice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::models::ParametricHamiltonian;
use crate::rfsfield::ParameterLattice;
use crate::sparse::Csr;
use nalgebra::DMatrix;

pub const NEAR_DEGENERATE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Residual tolerance relative to the max-row-sum norm of H.
    pub tol_rel: f64,
    pub max_matvecs: usize,
    pub max_basis: usize,
    pub keep: usize,
    /// Dimensions up to this size are diagonalized densely.
    pub dense_threshold: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_rel: 1e-10,
            max_matvecs: 2000,
            max_basis: 60,
            keep: 8,
            dense_threshold: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundState {
    pub lambda: [f64; 2],
    pub energy: f64,
    pub vector: Vec<f64>,
    pub gap: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub near_degenerate: bool,
}

impl GroundState {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

struct Eigenpairs {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    converged: bool,
    matvecs: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fix the sign so that the first largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Two passes of classical Gram-Schmidt against an orthonormal basis.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.iter().map(|v| dot(v, w)).collect();
        for (c, v) in coeffs.iter().zip(basis) {
            axpy(-c, v, w);
        }
    }
}

fn combine(basis: &[Vec<f64>], y: &DMatrix<f64>, col: usize) -> Vec<f64> {
    let mut out = vec![0.0; basis[0].len()];
    for (k, v) in basis.iter().enumerate() {
        axpy(y[(k, col)], v, &mut out);
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, basis);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
}

fn dense_lowest(h: &Csr, nev: usize) -> Eigenpairs {
    let (values, vecs) = sym_eigen(h.to_dense());
    let n = h.dim;
    let mut vectors = Vec::with_capacity(nev);
    for k in 0..nev {
        let mut v: Vec<f64> = (0..n).map(|i| vecs[(i, k)]).collect();
        canonical_sign(&mut v);
        vectors.push(v);
    }
    let residuals = vectors
        .iter()
        .zip(&values)
        .map(|(v, &e)| {
            let mut r = h.matvec(v);
            axpy(-e, v, &mut r);
            norm(&r)
        })
        .collect();
    Eigenpairs {
        values: values[..nev].to_vec(),
        vectors,
        residuals,
        converged: true,
        matvecs: 0,
    }
}

fn lanczos(h: &Csr, nev: usize, start: Option<&[f64]>, opts: &SolverOptions) -> Eigenpairs {
    let n = h.dim;
    let tol = opts.tol_rel * h.norm_inf().max(f64::MIN_POSITIVE);
    let keep = opts.keep.max(nev + 2);
    let max_basis = opts.max_basis.max(keep + 8).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut pending = match start {
        Some(s) => {
            let ns = norm(s);
            s.iter().map(|x| x / ns).collect()
        }
        None => random_unit(&mut rng, n, &[]),
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
    let mut t = DMatrix::<f64>::zeros(0, 0);
    let mut matvecs = 0usize;

    loop {
        let v = std::mem::take(&mut pending);
        let w = h.matvec(&v);
        matvecs += 1;
        let j = basis.len();
        let mut grown = DMatrix::<f64>::zeros(j + 1, j + 1);
        grown.view_mut((0, 0), (j, j)).copy_from(&t);
        for (k, vk) in basis.iter().enumerate() {
            let x = dot(vk, &w);
            grown[(k, j)] = x;
            grown[(j, k)] = x;
        }
        grown[(j, j)] = dot(&v, &w);
        t = grown;
        basis.push(v);
        images.push(w.clone());

        let mut f = w;
        orthogonalize(&mut f, &basis);
        let nf = norm(&f);

        let (theta, y) = sym_eigen(t.clone());
        let m = basis.len();
        let want = nev.min(m);
        let exhausted = m == n;
        let est: Vec<f64> = (0..want)
            .map(|k| if exhausted { 0.0 } else { nf * y[(m - 1, k)].abs() })
            .collect();
        if want == nev && est.iter().all(|&r| r <= tol) {
            let pairs = ritz_pairs(&basis, &images, &y, nev);
            if pairs.residuals.iter().all(|&r| r <= tol) || exhausted {
                return Eigenpairs {
                    converged: true,
                    matvecs,
                    ..pairs
                };
            }
        }
        if exhausted {
            let pairs = ritz_pairs(&basis, &images, &y, want);
            return Eigenpairs {
                converged: want == nev,
                matvecs,
                ..pairs
            };
        }
        if matvecs >= opts.max_matvecs {
            let pairs = ritz_pairs(&basis, &images, &y, want);
            return Eigenpairs {
                converged: false,
                matvecs,
                ..pairs
            };
        }

        pending = if nf > 1e-12 * h.norm_inf() {
            f.iter().map(|x| x / nf).collect()
        } else {
            random_unit(&mut rng, n, &basis)
        };

        if basis.len() >= max_basis {
            let k = keep.min(basis.len() - 1);
            let new_basis: Vec<Vec<f64>> = (0..k).map(|c| combine(&basis, &y, c)).collect();
            let new_images: Vec<Vec<f64>> = (0..k).map(|c| combine(&images, &y, c)).collect();
            basis = new_basis;
            images = new_images;
            t = DMatrix::from_fn(k, k, |a, b| if a == b { theta[a] } else { 0.0 });
            orthogonalize(&mut pending, &basis);
            let np = norm(&pending);
            if np < 1e-8 {
                pending = random_unit(&mut rng, n, &basis);
            } else {
                pending.iter_mut().for_each(|x| *x /= np);
            }
        }
    }
}

fn ritz_pairs(basis: &[Vec<f64>], images: &[Vec<f64>], y: &DMatrix<f64>, nev: usize) -> Eigenpairs {
    let mut values = Vec::with_capacity(nev);
    let mut vectors = Vec::with_capacity(nev);
    let mut residuals = Vec::with_capacity(nev);
    for k in 0..nev {
        let mut x = combine(basis, y, k);
        let mut hx = combine(images, y, k);
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        hx.iter_mut().for_each(|v| *v /= nx);
        let e = dot(&x, &hx);
        let mut r = hx;
        axpy(-e, &x, &mut r);
        residuals.push(norm(&r));
        canonical_sign(&mut x);
        values.push(e);
        vectors.push(x);
    }
    Eigenpairs {
        values,
        vectors,
        residuals,
        converged: false,
        matvecs: 0,
    }
}

fn lowest(h: &Csr, nev: usize, start: Option<&[f64]>, opts: &SolverOptions) -> Result<Eigenpairs> {
    if let Some(s) = start {
        if s.len() != h.dim {
            return Err(Error::DimensionMismatch {
                expected: h.dim,
                got: s.len(),
            });
        }
        if !(norm(s) > 0.0) {
            return Err(Error::Domain("warm start has zero norm".into()));
        }
    }
    if nev == 0 || nev > h.dim {
        return Err(Error::Domain(format!("requested {nev} eigenpairs of a {}-dim operator", h.dim)));
    }
    if h.dim <= opts.dense_threshold || nev * 4 > h.dim {
        Ok(dense_lowest(h, nev))
    } else {
        Ok(lanczos(h, nev, start, opts))
    }
}

fn to_ground_state(lambda: [f64; 2], mut pairs: Eigenpairs, with_gap: bool) -> GroundState {
    let gap = if with_gap && pairs.values.len() > 1 {
        Some(pairs.values[1] - pairs.values[0])
    } else {
        None
    };
    GroundState {
        lambda,
        energy: pairs.values[0],
        vector: pairs.vectors.swap_remove(0),
        gap,
        converged: pairs.converged,
        iterations: pairs.matvecs,
        residual: pairs.residuals[0],
        near_degenerate: gap.is_some_and(|g| g < NEAR_DEGENERATE_GAP),
    }
}

/// Lowest eigenpair. A non-converged result is returned flagged, not as an error.
pub fn ground_state(h: &Csr, warm_start: Option<&[f64]>, opts: &SolverOptions) -> Result<GroundState> {
    let pairs = lowest(h, 1, warm_start, opts)?;
    Ok(to_ground_state([f64::NAN; 2], pairs, false))
}

/// Lowest eigenpair together with the gap to the first excited level.
pub fn ground_state_with_gap(
    h: &Csr,
    warm_start: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<GroundState> {
    let pairs = lowest(h, 2.min(h.dim), warm_start, opts)?;
    Ok(to_ground_state([f64::NAN; 2], pairs, true))
}

pub fn spectrum(h: &Csr, k: usize, opts: &SolverOptions) -> Result<Spectrum> {
    let pairs = lowest(h, k, None, opts)?;
    Ok(Spectrum {
        values: pairs.values,
        vectors: pairs.vectors,
        converged: pairs.converged,
        iterations: pairs.matvecs,
    })
}

/// Lattice corner where a sweep begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartCorner {
    MaxLambda2MinLambda1,
    MaxLambda2MaxLambda1,
    MinLambda2MinLambda1,
    MinLambda2MaxLambda1,
}

impl Default for StartCorner {
    fn default() -> Self {
        StartCorner::MaxLambda2MinLambda1
    }
}

impl StartCorner {
    fn cell(self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            StartCorner::MaxLambda2MinLambda1 => (rows - 1, 0),
            StartCorner::MaxLambda2MaxLambda1 => (rows - 1, cols - 1),
            StartCorner::MinLambda2MinLambda1 => (0, 0),
            StartCorner::MinLambda2MaxLambda1 => (0, cols - 1),
        }
    }
}

/// Ground states on every lattice point, row-major (row i ↔ λ₂, column j ↔ λ₁).
///
/// Points are processed in wavefronts of equal Manhattan distance from the
/// start corner. Each point warm-starts from its converged neighbor on the
/// previous wavefront with the smallest row-major index, so the result does
/// not depend on the number of worker threads.
pub fn sweep_ground_states(
    model: &ParametricHamiltonian,
    lattice: &ParameterLattice,
    corner: StartCorner,
    opts: &SolverOptions,
) -> Vec<GroundState> {
    let (n, m) = (lattice.rows, lattice.cols);
    let (ci, cj) = corner.cell(n, m);
    let dist = |i: usize, j: usize| i.abs_diff(ci) + j.abs_diff(cj);
    let mut grid: Vec<Option<GroundState>> = vec![None; n * m];
    let max_d = dist(n - 1 - ci, m - 1 - cj);
    for d in 0..=max_d {
        let front: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| dist(i, j) == d)
            .collect();
        let solved: Vec<GroundState> = front
            .par_iter()
            .map(|&(i, j)| {
                let mut nbrs = Vec::with_capacity(2);
                if i > 0 {
                    nbrs.push((i - 1, j));
                }
                if j > 0 {
                    nbrs.push((i, j - 1));
                }
                if j + 1 < m {
                    nbrs.push((i, j + 1));
                }
                if i + 1 < n {
                    nbrs.push((i + 1, j));
                }
                let warm = nbrs
                    .into_iter()
                    .filter(|&(a, b)| d > 0 && dist(a, b) == d - 1)
                    .filter_map(|(a, b)| grid[a * m + b].as_ref())
                    .find(|g| g.converged)
                    .map(|g| g.vector.as_slice());
                let lambda = lattice.point(i, j);
                let h = model.assemble(lambda);
                let mut gs = match ground_state_with_gap(&h, warm, opts) {
                    Ok(g) => g,
                    Err(e) => unreachable!("sweep inputs are consistent: {e}"),
                };
                gs.lambda = lambda;
                gs
            })
            .collect();
        for (&(i, j), gs) in front.iter().zip(solved) {
            grid[i * m + j] = Some(gs);
        }
    }
    grid.into_iter().map(|g| g.expect("every point solved")).collect()
}

/// Ground states along a 1D list of λ values, warm-starting each from the previous one.
pub fn sweep_line(
    model: &ParametricHamiltonian,
    lambdas: &[[f64; 2]],
    opts: &SolverOptions,
) -> Vec<GroundState> {
    let mut out: Vec<GroundState> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = out.last().filter(|g| g.converged).map(|g| g.vector.clone());
        let h = model.assemble(lambda);
        let mut gs = ground_state(&h, warm.as_deref(), opts).expect("consistent dimensions");
        gs.lambda = lambda;
        out.push(gs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelKind, ModelSpec};

    fn sigma_z() -> Csr {
        Csr::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)])
    }

    #[test]
    fn single_qubit() {
        let g = ground_state(&sigma_z(), None, &SolverOptions::default()).unwrap();
        assert_eq!(g.energy, -1.0);
        assert_eq!(g.vector, vec![0.0, 1.0]);
        let s = spectrum(&sigma_z(), 2, &SolverOptions::default()).unwrap();
        assert_eq!(s.values, vec![-1.0, 1.0]);
    }

    #[test]
    fn tfim_two_sites() {
        let spec = ModelSpec::new(ModelKind::TransverseIsing, 2).with_tiebreak(0.0);
        let h = build_model(&spec).unwrap().assemble([1.0, 1.0]);
        let s = spectrum(&h, 2, &SolverOptions::default()).unwrap();
        assert!((s.values[0] + 5f64.sqrt()).abs() < 1e-12);
        assert!((s.values[1] + 1.0).abs() < 1e-12);
    }

    fn lanczos_opts() -> SolverOptions {
        SolverOptions {
            dense_threshold: 0,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn lanczos_matches_dense() {
        let spec = ModelSpec::new(ModelKind::Annni, 8);
        let model = build_model(&spec).unwrap();
        for lambda in [[0.2, 0.5], [0.7, 0.1], [1.2, 1.4]] {
            let h = model.assemble(lambda);
            let dense = sym_eigen(h.to_dense()).0;
            let g = ground_state_with_gap(&h, None, &lanczos_opts()).unwrap();
            assert!(g.converged);
            assert!((g.energy - dense[0]).abs() < 1e-9, "{} vs {}", g.energy, dense[0]);
            assert!((g.gap.unwrap() - (dense[1] - dense[0])).abs() < 1e-8);
            assert!(g.residual <= 1e-10 * h.norm_inf());
            assert!((norm(&g.vector) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_fixed_point() {
        let spec = ModelSpec::new(ModelKind::Annni, 8);
        let h = build_model(&spec).unwrap().assemble([0.3, 0.9]);
        let cold = ground_state(&h, None, &lanczos_opts()).unwrap();
        let warm = ground_state(&h, Some(&cold.vector), &lanczos_opts()).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= 2);
        assert!((warm.energy - cold.energy).abs() < 1e-12);
    }

    #[test]
    fn full_spectrum_trace() {
        let spec = ModelSpec::new(ModelKind::Cluster, 3);
        let h = build_model(&spec).unwrap().assemble([0.8, 0.4]);
        let s = spectrum(&h, 8, &SolverOptions::default()).unwrap();
        let sum: f64 = s.values.iter().sum();
        assert!((sum - h.trace()).abs() < 1e-12);
    }

    #[test]
    fn budget_exhaustion_flags_point() {
        let spec = ModelSpec::new(ModelKind::Annni, 10);
        let h = build_model(&spec).unwrap().assemble([0.6, 0.3]);
        let opts = SolverOptions {
            max_matvecs: 5,
            ..lanczos_opts()
        };
        let g = ground_state(&h, None, &opts).unwrap();
        assert!(!g.converged);
        assert!(matches!(g.require_converged(), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let r = ground_state(&sigma_z(), Some(&[1.0, 0.0, 0.0]), &SolverOptions::default());
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn constant_model_sweep() {
        let spec = ModelSpec::new(ModelKind::Annni, 4);
        let mut model = build_model(&spec).unwrap();
        model = ParametricHamiltonian::new(
            model.h0.clone(),
            Csr::zeros(16),
            Csr::zeros(16),
            ["a", "b"],
            4,
        );
        let lat = ParameterLattice::new([0.0, 0.0], [1.0, 1.0], 2, 2);
        let g = sweep_ground_states(&model, &lat, StartCorner::default(), &SolverOptions::default());
        assert!(g.iter().all(|x| x.energy == g[0].energy));
    }
}
