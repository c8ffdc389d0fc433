//! Spin-chain Hamiltonians in the form H(λ) = H₀ + λ₁H₁ + λ₂H₂.
//!
//! Basis states |s₁s₂…s_L⟩ are indexed with site 1 as the most significant
//! bit; σᶻ|0⟩ = |0⟩ and nᵢ = |1⟩⟨1|ᵢ.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{Csr, UnionPattern};

pub const DEFAULT_TIEBREAK: f64 = 1e-6;
pub const MAX_TIEBREAK: f64 = 1e-3;
pub const DEFAULT_RYDBERG_RANGE: usize = 4;
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(alias = "annni")]
    Annni,
    #[serde(alias = "transverse_ising", alias = "tfim")]
    TransverseIsing,
    #[serde(alias = "cluster")]
    Cluster,
    #[serde(alias = "rydberg")]
    Rydberg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub sites: usize,
    #[serde(default)]
    pub couplings: BTreeMap<String, f64>,
    #[serde(default = "default_tiebreak")]
    pub tiebreak_field: f64,
}

fn default_tiebreak() -> f64 {
    DEFAULT_TIEBREAK
}

impl ModelSpec {
    pub fn new(kind: ModelKind, sites: usize) -> Self {
        ModelSpec {
            kind,
            sites,
            couplings: BTreeMap::new(),
            tiebreak_field: DEFAULT_TIEBREAK,
        }
    }

    pub fn with_tiebreak(mut self, eps: f64) -> Self {
        self.tiebreak_field = eps;
        self
    }

    pub fn with_coupling(mut self, name: &str, value: f64) -> Self {
        self.couplings.insert(name.to_string(), value);
        self
    }

    pub fn rydberg_range(&self) -> usize {
        self.couplings
            .get("range")
            .map(|&r| r as usize)
            .unwrap_or(DEFAULT_RYDBERG_RANGE)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::InvalidSpec(format!("sites must be >= 2, got {}", self.sites)));
        }
        let eps = self.tiebreak_field;
        if !(eps >= 0.0) || eps > MAX_TIEBREAK {
            return Err(Error::InvalidSpec(format!(
                "tiebreak_field must lie in [0, {MAX_TIEBREAK}], got {eps}"
            )));
        }
        for (name, v) in &self.couplings {
            if !v.is_finite() {
                return Err(Error::InvalidSpec(format!("coupling {name} is not finite")));
            }
        }
        match self.kind {
            ModelKind::Annni => {
                if let Some(&j1) = self.couplings.get("J1") {
                    if j1 <= 0.0 {
                        return Err(Error::InvalidSpec("J1 must be positive".into()));
                    }
                }
            }
            ModelKind::Rydberg => {
                if let Some(&r) = self.couplings.get("range") {
                    if r.fract() != 0.0 || r < 1.0 || r as usize >= self.sites {
                        return Err(Error::InvalidSpec(format!(
                            "range must be an integer in [1, sites), got {r}"
                        )));
                    }
                }
            }
            ModelKind::Cluster => {
                if self.sites < 3 {
                    return Err(Error::InvalidSpec("cluster model needs at least 3 sites".into()));
                }
            }
            ModelKind::TransverseIsing => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParametricHamiltonian {
    pub h0: Csr,
    pub h1: Csr,
    pub h2: Csr,
    pub param_names: [String; 2],
    pub sites: usize,
    pub dimension: usize,
    union: UnionPattern,
}

impl ParametricHamiltonian {
    pub fn new(h0: Csr, h1: Csr, h2: Csr, param_names: [&str; 2], sites: usize) -> Self {
        let union = UnionPattern::new(&[&h0, &h1, &h2]);
        let dimension = h0.dim;
        ParametricHamiltonian {
            h0,
            h1,
            h2,
            param_names: param_names.map(String::from),
            sites,
            dimension,
            union,
        }
    }

    pub fn assemble(&self, lambda: [f64; 2]) -> Csr {
        self.union.combine(&[1.0, lambda[0], lambda[1]])
    }

    pub fn component(&self, which: Driver) -> &Csr {
        match which {
            Driver::Lambda1 => &self.h1,
            Driver::Lambda2 => &self.h2,
        }
    }
}

/// Which driving component a derivative or susceptibility refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Driver {
    Lambda1,
    Lambda2,
}

/// One Pauli-type product term: coefficient, sites carrying σˣ, sites carrying σᶻ.
struct Term {
    coeff: f64,
    x_mask: usize,
    z_mask: usize,
}

fn bit(sites: usize, site: usize) -> usize {
    1 << (sites - 1 - site)
}

fn assemble_terms(sites: usize, terms: &[Term], diag: impl Fn(usize) -> f64) -> Csr {
    let dim = 1usize << sites;
    let mut trip = Vec::with_capacity(dim * (terms.len() + 1));
    for s in 0..dim {
        let d = diag(s);
        if d != 0.0 {
            trip.push((s, s, d));
        }
        for t in terms {
            let sign = if (s & t.z_mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            trip.push((s ^ t.x_mask, s, t.coeff * sign));
        }
    }
    Csr::from_triplets(dim, trip)
}

fn sum_x(sites: usize, coeff: f64) -> Vec<Term> {
    (0..sites)
        .map(|i| Term {
            coeff,
            x_mask: bit(sites, i),
            z_mask: 0,
        })
        .collect()
}

fn xx(sites: usize, dist: usize, coeff: f64) -> Vec<Term> {
    (0..sites.saturating_sub(dist))
        .map(|i| Term {
            coeff,
            x_mask: bit(sites, i) | bit(sites, i + dist),
            z_mask: 0,
        })
        .collect()
}

fn z_sum(sites: usize, coeff: f64) -> impl Fn(usize) -> f64 {
    move |s: usize| {
        let ones = s.count_ones() as f64;
        coeff * ((sites as f64 - ones) - ones)
    }
}

fn estimate_bytes(sites: usize, offdiag_terms: usize) -> u64 {
    let dim = 1u64 << sites.min(62);
    let nnz = dim * (offdiag_terms as u64 + 1);
    // three components plus the union pattern, each value 8 bytes and index 8 bytes
    nnz * 16 * 4 + dim * 8 * 8
}

pub fn build_model(spec: &ModelSpec) -> Result<ParametricHamiltonian> {
    build_model_with_budget(spec, DEFAULT_MEMORY_BUDGET)
}

pub fn build_model_with_budget(spec: &ModelSpec, budget: u64) -> Result<ParametricHamiltonian> {
    spec.validate()?;
    let l = spec.sites;
    let bytes = if l >= 40 { u64::MAX } else { estimate_bytes(l, 2 * l) };
    if bytes > budget {
        return Err(Error::UnsupportedSize {
            sites: l,
            bytes,
            budget,
        });
    }
    let eps = spec.tiebreak_field;
    let tiebreak = if eps > 0.0 { sum_x(l, -eps) } else { Vec::new() };
    let none = |_: usize| 0.0;
    let ham = match spec.kind {
        ModelKind::Annni => {
            let j1 = spec.couplings.get("J1").copied().unwrap_or(1.0);
            let mut t0 = xx(l, 1, -j1);
            t0.extend(sum_x(l, -eps));
            t0.retain(|t| t.coeff != 0.0);
            let h0 = assemble_terms(l, &t0, none);
            let h1 = assemble_terms(l, &xx(l, 2, j1), none);
            let h2 = assemble_terms(l, &[], z_sum(l, -j1));
            ParametricHamiltonian::new(h0, h1, h2, ["kappa", "h"], l)
        }
        ModelKind::TransverseIsing => {
            let h0 = assemble_terms(l, &tiebreak, none);
            let h1 = assemble_terms(l, &xx(l, 1, -1.0), none);
            let h2 = assemble_terms(l, &[], z_sum(l, -1.0));
            ParametricHamiltonian::new(h0, h1, h2, ["J", "h"], l)
        }
        ModelKind::Cluster => {
            let h0 = assemble_terms(l, &tiebreak, none);
            let xzx: Vec<Term> = (0..l - 2)
                .map(|i| Term {
                    coeff: -1.0,
                    x_mask: bit(l, i) | bit(l, i + 2),
                    z_mask: bit(l, i + 1),
                })
                .collect();
            let h1 = assemble_terms(l, &xzx, none);
            let h2 = assemble_terms(l, &[], z_sum(l, -1.0));
            ParametricHamiltonian::new(h0, h1, h2, ["K", "h"], l)
        }
        ModelKind::Rydberg => {
            let range = spec.rydberg_range();
            let h0 = assemble_terms(l, &sum_x(l, 1.0 - eps), none);
            let h1 = assemble_terms(l, &[], |s: usize| -(s.count_ones() as f64));
            let h2 = assemble_terms(l, &[], |s: usize| {
                let mut e = 0.0;
                for i in 0..l {
                    if s & bit(l, i) == 0 {
                        continue;
                    }
                    for d in 1..=range {
                        if i + d < l && s & bit(l, i + d) != 0 {
                            e += 1.0 / (d as f64).powi(6);
                        }
                    }
                }
                e
            });
            ParametricHamiltonian::new(h0, h1, h2, ["delta_over_omega", "rb_over_a_pow6"], l)
        }
    };
    Ok(ham)
}

/// Evaluations of the ANNNI transition-line approximations; `None` where a
/// line is not defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryLines {
    pub h_i: Option<f64>,
    pub h_kt: Option<f64>,
    pub h_pt: Option<f64>,
}

pub fn h_ising(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) || kappa >= 1.0 {
        return Err(Error::Domain(format!("h_I needs 0 < kappa < 1, got {kappa}")));
    }
    let rad = (1.0 - 3.0 * kappa + 4.0 * kappa * kappa) / (1.0 - kappa);
    if rad < 0.0 {
        return Err(Error::Domain(format!("negative radicand at kappa {kappa}")));
    }
    Ok((1.0 - kappa) / kappa * (1.0 - rad.sqrt()))
}

pub fn h_kt(kappa: f64) -> Result<f64> {
    let rad = (kappa - 0.5) * (kappa - 0.1);
    if kappa < 0.5 || rad < 0.0 {
        return Err(Error::Domain(format!("h_KT needs kappa >= 1/2, got {kappa}")));
    }
    Ok(1.05 * rad.sqrt())
}

pub fn h_pt(kappa: f64) -> Result<f64> {
    if kappa < 0.5 {
        return Err(Error::Domain(format!("h_PT needs kappa >= 1/2, got {kappa}")));
    }
    Ok(1.05 * (kappa - 0.5))
}

pub fn theory_lines(kappa: f64) -> TheoryLines {
    TheoryLines {
        h_i: h_ising(kappa).ok(),
        h_kt: h_kt(kappa).ok(),
        h_pt: h_pt(kappa).ok(),
    }
}
