//! Pipeline stages behind the commands, usable without touching the filesystem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{EtaSetting, Region, RunConfig};
use crate::eigensolver::{sweep_ground_states, GroundState, SolverOptions, StartCorner};
use crate::error::{Error, Result};
use crate::linalg::{frob_inner, identity, pauli, CMat, C64};
use crate::models::{build_model, theory_lines, Driver, ModelKind, ModelSpec, ParametricHamiltonian};
use crate::ordparam::{
    eigen_projectors, fit_product_projector, label_phases, select_eta, solve_order_parameter,
    solve_order_parameter_dense, solve_two_state, solve_with_gram, xi_apply, xi_svd, AngleSample, EtaChoice,
    Gram, Observable, PhaseLabels, ProductFit,
};
use crate::qstate::{
    centered_window, overlap_susceptibility_fd, partial_trace, pauli_decompose, random_density_matrix,
    random_pure_state, spectral_susceptibility, uhlmann_fidelity, DensityMatrix, PauliDecomposition,
};
use crate::rfsfield::{ParameterLattice, Polyline, RfsField};

/// Ground states and the RFS field over a parameter lattice.
pub struct Diagram {
    pub model: ParametricHamiltonian,
    pub lattice: ParameterLattice,
    pub states: Vec<GroundState>,
    pub field: RfsField,
    pub field_sites: usize,
}

impl Diagram {
    pub fn compute(cfg: &RunConfig) -> Result<Self> {
        cfg.validate_diagram()?;
        let model = build_model(&cfg.model)?;
        let lattice = cfg.lattice()?;
        Self::from_model(model, lattice, cfg.start_corner, &cfg.solver_options(), cfg.rdm_sites, cfg.metric)
    }

    pub fn from_model(
        model: ParametricHamiltonian,
        lattice: ParameterLattice,
        corner: StartCorner,
        opts: &SolverOptions,
        rdm_sites: usize,
        metric: bool,
    ) -> Result<Self> {
        lattice.check_field_size()?;
        let states = sweep_ground_states(&model, &lattice, corner, opts);
        let converged = states.iter().map(|s| s.converged).collect::<Vec<_>>();
        let rdms = rdms_of(&states, model.sites, rdm_sites)?;
        let field = RfsField::build(lattice.clone(), &rdms, &converged, metric)?;
        Ok(Diagram {
            model,
            lattice,
            states,
            field,
            field_sites: rdm_sites,
        })
    }

    pub fn rdms(&self, k: usize) -> Result<Vec<DensityMatrix>> {
        rdms_of(&self.states, self.model.sites, k)
    }

    /// Grid indices with a defined angle, optionally inside `region`.
    pub fn sample_points(&self, region: Option<&Region>) -> Vec<usize> {
        let cols = self.lattice.cols;
        (0..self.lattice.len())
            .filter(|&n| self.field.angle[n].is_some() && self.states[n].converged)
            .filter(|&n| region.map_or(true, |r| r.contains(self.lattice.point(n / cols, n % cols))))
            .collect()
    }
}

fn rdms_of(states: &[GroundState], sites: usize, k: usize) -> Result<Vec<DensityMatrix>> {
    let window = centered_window(sites, k)?;
    states
        .iter()
        .map(|s| partial_trace(&s.vector, sites, window.clone()))
        .collect()
}

/// Theory lines of the ANNNI chain over the λ₁ range as (name, polyline).
pub fn annni_overlays(lattice: &ParameterLattice) -> Vec<(String, Polyline)> {
    let k0 = lattice.origin[0];
    let k1 = k0 + lattice.step[0] * (lattice.cols - 1) as f64;
    let n = 256;
    let kappas: Vec<f64> = (0..=n).map(|i| k0 + (k1 - k0) * i as f64 / n as f64).collect();
    let lines = kappas.iter().map(|&k| (k, theory_lines(k))).collect::<Vec<_>>();
    let pick = |f: fn(&crate::models::TheoryLines) -> Option<f64>| -> Polyline {
        lines.iter().filter_map(|(k, t)| f(t).map(|h| [*k, h])).collect()
    };
    [
        ("ising".to_string(), pick(|t| t.h_i)),
        ("kosterlitz_thouless".to_string(), pick(|t| t.h_kt)),
        ("pokrovsky_talapov".to_string(), pick(|t| t.h_pt)),
    ]
    .into_iter()
    .filter(|(_, l)| l.len() > 1)
    .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledPoint {
    pub lambda: [f64; 2],
    pub y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectorInfo {
    pub eigenvalue: f64,
    /// Computational basis states carrying the largest weight, as bit strings.
    pub dominant_states: Vec<(String, f64)>,
    pub product_fit: Option<ProductFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderParamResult {
    pub mode: &'static str,
    pub rdm_sites: usize,
    pub eta: Option<EtaChoice>,
    pub plus: Vec<LabeledPoint>,
    pub minus: Vec<LabeledPoint>,
    pub observable: Observable,
    #[serde(skip)]
    pub labels: Option<PhaseLabels>,
    pub pauli: PauliDecomposition,
    pub projectors: Vec<ProjectorInfo>,
}

fn projector_info(m: &CMat) -> Vec<ProjectorInfo> {
    let sites = m.nrows().trailing_zeros() as usize;
    eigen_projectors(m)
        .into_iter()
        .map(|(alpha, p)| {
            let mut weights: Vec<(String, f64)> = (0..p.nrows())
                .map(|i| (format!("{i:0sites$b}"), p[(i, i)].re))
                .collect();
            weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            weights.truncate(2);
            ProjectorInfo {
                eigenvalue: alpha,
                dominant_states: weights,
                product_fit: fit_product_projector(&p).ok(),
            }
        })
        .collect()
}

fn finish_result(
    mode: &'static str,
    rdm_sites: usize,
    eta: Option<EtaChoice>,
    plus: Vec<LabeledPoint>,
    minus: Vec<LabeledPoint>,
    labels: Option<PhaseLabels>,
    observable: Observable,
) -> Result<OrderParamResult> {
    let pauli = pauli_decompose(&observable.m)?;
    let projectors = projector_info(&observable.m);
    Ok(OrderParamResult {
        mode,
        rdm_sites,
        eta,
        plus,
        minus,
        observable,
        labels,
        pauli,
        projectors,
    })
}

/// Labels from the diagram's angle map, observable from `observable_sites`-site RDMs.
///
/// In two-state mode the pair is the labeled sample with the largest y and the
/// one with the smallest y.
pub fn order_param_from_diagram(diag: &Diagram, cfg: &RunConfig, two_state: bool) -> Result<OrderParamResult> {
    let k = cfg.observable_sites();
    let points = diag.sample_points(cfg.order_param.region.as_ref());
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let all = diag.rdms(k)?;
    let rdms: Vec<DensityMatrix> = points.iter().map(|&n| all[n].clone()).collect();
    let cols = diag.lattice.cols;
    let samples: Vec<AngleSample> = points
        .iter()
        .enumerate()
        .map(|(i, &n)| AngleSample {
            index: i,
            lambda: diag.lattice.point(n / cols, n % cols),
            angle: diag.field.angle[n].expect("sampled points have angles"),
        })
        .collect();
    let gram = Gram::new(&rdms)?;
    let (eta, choice) = match cfg.eta {
        EtaSetting::Auto => {
            let c = select_eta(&samples, &gram, cfg.y_min)?;
            (c.eta, Some(c))
        }
        EtaSetting::Value(v) => (v, None),
    };
    let labels = label_phases(&samples, eta, cfg.y_min)?;
    let describe = |set: &[usize]| -> Vec<LabeledPoint> {
        set.iter()
            .map(|&i| LabeledPoint {
                lambda: samples[i].lambda,
                y: labels.samples[i].y,
            })
            .collect()
    };
    let (plus, minus) = (describe(&labels.i_plus), describe(&labels.i_minus));
    if two_state {
        let ys = |i: &usize| labels.samples[*i].y;
        let p = labels.i_plus.iter().max_by(|a, b| ys(a).total_cmp(&ys(b)).then(b.cmp(a))).unwrap();
        let m = labels.i_minus.iter().min_by(|a, b| ys(a).total_cmp(&ys(b)).then(a.cmp(b))).unwrap();
        let obs = solve_two_state(&rdms[*p], &rdms[*m])?;
        return finish_result("two_state", k, choice, plus, minus, Some(labels), obs);
    }
    let obs = solve_with_gram(&rdms, &gram, &labels)?;
    finish_result("general", k, choice, plus, minus, Some(labels), obs)
}

/// Observable from explicitly labeled RDMs.
pub fn order_param_from_fixture(
    plus: &[DensityMatrix],
    minus: &[DensityMatrix],
    two_state: bool,
) -> Result<OrderParamResult> {
    let sites = plus.first().map_or(0, |r| r.order().trailing_zeros() as usize);
    if two_state {
        if plus.len() != 1 || minus.len() != 1 {
            return Err(Error::Config("two-state mode takes exactly one RDM per phase".into()));
        }
        let obs = solve_two_state(&plus[0], &minus[0])?;
        return finish_result("two_state", sites, None, vec![], vec![], None, obs);
    }
    let rdms: Vec<DensityMatrix> = plus.iter().chain(minus).cloned().collect();
    let labels = PhaseLabels::from_sets((0..plus.len()).collect(), (plus.len()..rdms.len()).collect())?;
    let obs = solve_order_parameter(&rdms, &labels)?;
    finish_result("general", sites, None, vec![], vec![], Some(labels), obs)
}

/// One named check of the validation suite.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub measured: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, tolerance: f64, measured: f64) -> Self {
        Check {
            name: name.to_string(),
            tolerance,
            measured,
            passed: measured <= tolerance,
        }
    }
}

pub type FidelityFn = dyn Fn(&DensityMatrix, &DensityMatrix) -> Result<f64> + Sync;

pub fn validation_suite(seed: u64) -> Vec<Check> {
    validation_suite_with(seed, &uhlmann_fidelity)
}

/// Runs the oracle checks with a replaceable fidelity implementation.
pub fn validation_suite_with(seed: u64, fidelity: &FidelityFn) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let fail = |name: &str, tol: f64| Check::new(name, tol, f64::INFINITY);

    let mut sym = 0.0f64;
    let mut range = 0.0f64;
    let mut ok = true;
    for t in 0..60 {
        let order = 1 << (1 + t % 4);
        let a = random_density_matrix(&mut rng, order, 1 + t % order);
        let b = random_density_matrix(&mut rng, order, 1 + (t * 7) % order);
        match (fidelity(&a, &b), fidelity(&b, &a)) {
            (Ok(f1), Ok(f2)) => {
                sym = sym.max((f1 - f2).abs());
                range = range.max((-f1).max(f1 - 1.0)).max(0.0);
            }
            _ => ok = false,
        }
    }
    out.push(if ok { Check::new("fidelity_symmetry", 1e-10, sym) } else { fail("fidelity_symmetry", 1e-10) });
    out.push(if ok { Check::new("fidelity_range", 1e-10, range) } else { fail("fidelity_range", 1e-10) });

    let mut pure = 0.0f64;
    let mut bound = 0.0f64;
    let mut ok = true;
    for t in 0..30 {
        let n = 2 + t % 3;
        let psi = random_pure_state(&mut rng, 1 << n);
        let phi = random_pure_state(&mut rng, 1 << n);
        let ov: C64 = psi.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum();
        let (Ok(pa), Ok(pb)) = (DensityMatrix::pure(&psi), DensityMatrix::pure(&phi)) else {
            ok = false;
            continue;
        };
        let window = 0..1 + t % (n - 1);
        let (Ok(ra), Ok(rb)) = (partial_trace(&psi, n, window.clone()), partial_trace(&phi, n, window)) else {
            ok = false;
            continue;
        };
        match (fidelity(&pa, &pb), fidelity(&ra, &rb)) {
            (Ok(f), Ok(fr)) => {
                pure = pure.max((f - ov.norm_sqr()).abs());
                bound = bound.max(ov.norm() - fr.sqrt());
            }
            _ => ok = false,
        }
    }
    out.push(if ok { Check::new("fidelity_pure_reduction", 1e-10, pure) } else { fail("fidelity_pure_reduction", 1e-10) });
    out.push(if ok { Check::new("uhlmann_bound", 1e-10, bound.max(0.0)) } else { fail("uhlmann_bound", 1e-10) });

    out.push(susceptibility_check());

    let mut xi = 0.0f64;
    for _ in 0..20 {
        let p = random_density_matrix(&mut rng, 4, 2).matrix;
        let m = random_density_matrix(&mut rng, 4, 3).matrix;
        let k = random_density_matrix(&mut rng, 4, 4).matrix;
        match (xi_svd(&p, &m), xi_apply(&k, &p, &m)) {
            (Ok(s), Ok(direct)) => {
                let pn = p.unscale(p.norm());
                let mn = m.unscale(m.norm());
                let c = frob_inner(&pn, &mn).re;
                xi = xi.max((s.s1 - (1.0 - c * c).sqrt()).abs()).max((s.apply(&k) - direct).norm());
            }
            _ => xi = f64::INFINITY,
        }
    }
    out.push(Check::new("xi_svd_theorem", 1e-10, xi));

    let plus = DensityMatrix::from_matrix((identity(2) + pauli('Z')).scale(0.5)).expect("fixture");
    let minus = DensityMatrix::from_matrix((identity(2) + pauli('X')).scale(0.5)).expect("fixture");
    let target = (identity(2) + pauli('Z').scale(2.0) - pauli('X')).unscale(2.0 * 3f64.sqrt());
    let two = solve_two_state(&plus, &minus).map_or(f64::INFINITY, |o| (&o.m - &target).norm());
    out.push(Check::new("two_state_fixture", 1e-10, two));

    let mut qcqp = 0.0f64;
    for _ in 0..10 {
        let rdms: Vec<DensityMatrix> = (0..6).map(|i| random_density_matrix(&mut rng, 4, 1 + i % 4)).collect();
        let labels = PhaseLabels::from_sets(vec![0, 1, 2], vec![3, 4, 5]).expect("nonempty");
        match (solve_order_parameter(&rdms, &labels), solve_order_parameter_dense(&rdms, &labels)) {
            (Ok(a), Ok(b)) => qcqp = qcqp.max((a.lambda_min - b.a_lambda_min).abs()),
            _ => qcqp = f64::INFINITY,
        }
    }
    out.push(Check::new("qcqp_minimum", 1e-10, qcqp));
    out
}

/// Largest relative gap between the spectral and overlap susceptibilities of
/// the transverse Ising chain.
pub fn susceptibility_check() -> Check {
    let spec = ModelSpec::new(ModelKind::TransverseIsing, 8).with_tiebreak(0.0);
    let measured = build_model(&spec)
        .and_then(|model| {
            let mut worst = 0.0f64;
            for h in [0.3, 0.7, 1.3] {
                let a = spectral_susceptibility(&model, [1.0, h], Driver::Lambda2)?;
                let b = overlap_susceptibility_fd(&model, [1.0, h], Driver::Lambda2, 1e-3)?;
                worst = worst.max((a - b).abs() / a.abs());
            }
            Ok(worst)
        })
        .unwrap_or(f64::INFINITY);
    Check::new("susceptibility_agreement", 1e-3, measured)
}

pub fn format_report(checks: &[Check]) -> String {
    let mut s = format!("{:<28} {:>10} {:>12}  {}\n", "check", "tolerance", "measured", "result");
    for c in checks {
        s.push_str(&format!(
            "{:<28} {:>10.1e} {:>12.3e}  {}\n",
            c.name,
            c.tolerance,
            c.measured,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}
