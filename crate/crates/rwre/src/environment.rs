//! Environment laws for random walks in random environment: Dirichlet,
//! ratio-constrained laws, a two-dimensional example with heavy-tailed
//! local drift, and lazy quenched realizations over Z^d.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{domain, SplitMix64};

#[derive(Debug, Error, PartialEq)]
pub enum LawError {
    #[error("weight vector must have even length >= 4, got {0}")]
    BadWeightCount(usize),
    #[error("weights must be positive and finite, got weight[{index}] = {value}")]
    BadWeight { index: usize, value: f64 },
    #[error("probabilities must sum to 1 within 1e-12, got {0}")]
    BadSum(f64),
    #[error("probability {index} = {value} is not in (0, 1)")]
    NotElliptic { index: usize, value: f64 },
    #[error("ratio must exceed 1, got {0}")]
    RatioTooSmall(f64),
    #[error("axis mass range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")]
    BadMassRange { lo: f64, hi: f64 },
    #[error("phi value {0} outside the open interval (0, 1/4)")]
    PhiOutOfRange(f64),
    #[error("phi range ({lo}, {hi}) must satisfy 0 < lo < hi < 1/4")]
    BadPhiRange { lo: f64, hi: f64 },
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
}

/// Jump distribution at a single site: probabilities for the 2d canonical
/// steps, ordered (e_1, .., e_d, -e_1, .., -e_d). Always elliptic here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDistribution {
    probs: Vec<f64>,
}

impl SiteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, LawError> {
        if probs.len() < 4 || probs.len() % 2 != 0 {
            return Err(LawError::BadWeightCount(probs.len()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) || !p.is_finite() {
                return Err(LawError::NotElliptic { index: i, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(LawError::BadSum(sum));
        }
        Ok(SiteDistribution { probs })
    }

    /// Normalize positive weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self, LawError> {
        if weights.len() < 4 || weights.len() % 2 != 0 {
            return Err(LawError::BadWeightCount(weights.len()));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(LawError::BadWeight { index: i, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        SiteDistribution::new(weights.iter().map(|w| w / sum).collect())
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.probs.len() / 2
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, dir: usize) -> f64 {
        self.probs[dir]
    }

    /// Local drift sum_e omega(e) e.
    pub fn drift(&self) -> Vec<f64> {
        let d = self.d();
        (0..d).map(|i| self.probs[i] - self.probs[i + d]).collect()
    }

    /// Map a uniform variate in [0,1) to a direction index by cumulative
    /// inversion. The final bucket absorbs any rounding slack.
    #[inline]
    pub fn choose_direction(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Law of the auxiliary variable phi in the heavy-tailed two-dimensional
/// example. Supported in (0, 1/4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiLaw {
    /// phi = U^2/4 with U uniform on (0,1). The 1/2-negative moment of phi
    /// diverges while every smaller negative moment is finite.
    SquaredUniformQuarter,
    /// phi uniform on (lo, hi), 0 < lo < hi < 1/4.
    Uniform { lo: f64, hi: f64 },
    /// Degenerate phi.
    Fixed { value: f64 },
}

impl PhiLaw {
    pub fn validate(&self) -> Result<(), LawError> {
        match *self {
            PhiLaw::SquaredUniformQuarter => Ok(()),
            PhiLaw::Uniform { lo, hi } => {
                if 0.0 < lo && lo < hi && hi < 0.25 {
                    Ok(())
                } else {
                    Err(LawError::BadPhiRange { lo, hi })
                }
            }
            PhiLaw::Fixed { value } => {
                if 0.0 < value && value < 0.25 {
                    Ok(())
                } else {
                    Err(LawError::PhiOutOfRange(value))
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            PhiLaw::SquaredUniformQuarter => {
                let u = rng.open01();
                u * u / 4.0
            }
            PhiLaw::Uniform { lo, hi } => lo + rng.open01() * (hi - lo),
            PhiLaw::Fixed { value } => value,
        }
    }
}

/// Base law for the ratio-constrained family: the total mass on the e_1
/// axis is uniform on (mass_lo, mass_hi) and the remaining mass is split
/// over the other 2d-2 directions by a Dirichlet draw. One concrete
/// elliptic family with the required axis ratio, not a canonical one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBase {
    pub mass_lo: f64,
    pub mass_hi: f64,
    pub rest_beta: Vec<f64>,
}

impl RatioBase {
    pub fn validate(&self) -> Result<(), LawError> {
        if !(0.0 < self.mass_lo && self.mass_lo <= self.mass_hi && self.mass_hi < 1.0) {
            return Err(LawError::BadMassRange {
                lo: self.mass_lo,
                hi: self.mass_hi,
            });
        }
        if self.rest_beta.len() < 2 || self.rest_beta.len() % 2 != 0 {
            return Err(LawError::BadWeightCount(self.rest_beta.len()));
        }
        for (i, &b) in self.rest_beta.iter().enumerate() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(LawError::BadWeight { index: i, value: b });
            }
        }
        Ok(())
    }
}

/// An i.i.d. law for site distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentLaw {
    /// Dirichlet with 2d positive weights.
    Dirichlet { beta: Vec<f64> },
    /// omega(e_1) = r * omega(-e_1) exactly, remaining mass from `base`.
    Ratio { r: f64, base: RatioBase },
    /// d=2 example: omega(e_1) = 2 phi, omega(-e_1) = phi, and the vertical
    /// pair is (phi, 1-4phi) or (1-4phi, phi) by a fair coin.
    CrExample { phi: PhiLaw },
    /// Simple random walk, all 2d steps equally likely.
    Uniform { d: usize },
}

impl EnvironmentLaw {
    pub fn validate(&self) -> Result<(), LawError> {
        match self {
            EnvironmentLaw::Dirichlet { beta } => {
                if beta.len() < 4 || beta.len() % 2 != 0 {
                    return Err(LawError::BadWeightCount(beta.len()));
                }
                for (i, &b) in beta.iter().enumerate() {
                    if !(b > 0.0) || !b.is_finite() {
                        return Err(LawError::BadWeight { index: i, value: b });
                    }
                }
                Ok(())
            }
            EnvironmentLaw::Ratio { r, base } => {
                if !(*r > 1.0) || !r.is_finite() {
                    return Err(LawError::RatioTooSmall(*r));
                }
                base.validate()
            }
            EnvironmentLaw::CrExample { phi } => phi.validate(),
            EnvironmentLaw::Uniform { d } => {
                if *d < 2 {
                    Err(LawError::DimensionTooSmall(*d))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn d(&self) -> usize {
        match self {
            EnvironmentLaw::Dirichlet { beta } => beta.len() / 2,
            EnvironmentLaw::Ratio { base, .. } => base.rest_beta.len() / 2 + 1,
            EnvironmentLaw::CrExample { .. } => 2,
            EnvironmentLaw::Uniform { d } => *d,
        }
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> SiteDistribution {
        match self {
            EnvironmentLaw::Dirichlet { beta } => sample_dirichlet(beta, rng),
            EnvironmentLaw::Ratio { r, base } => sample_ratio_law(*r, base, rng),
            EnvironmentLaw::CrExample { phi } => sample_cr_example(phi, rng),
            EnvironmentLaw::Uniform { d } => {
                SiteDistribution::new(vec![1.0 / (2 * *d) as f64; 2 * *d]).expect("uniform law")
            }
        }
    }
}

/// Dirichlet draw via normalized independent gamma variables. Zero draws
/// (possible in floating point for small shapes) are rejected to keep the
/// sample in the open simplex.
pub fn sample_dirichlet(beta: &[f64], rng: &mut SplitMix64) -> SiteDistribution {
    assert!(beta.len() >= 4 && beta.len() % 2 == 0, "validated upstream");
    let gammas: Vec<Gamma<f64>> = beta
        .iter()
        .map(|&b| Gamma::new(b, 1.0).expect("positive shape"))
        .collect();
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        if draws.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            continue;
        }
        let sum: f64 = draws.iter().sum();
        let probs: Vec<f64> = draws.iter().map(|g| g / sum).collect();
        if probs.iter().all(|&p| p > 0.0 && p < 1.0) {
            return SiteDistribution { probs };
        }
    }
}

/// Entries of the heavy-tailed d=2 example for a given phi and coin:
/// (2phi, phi or 1-4phi, phi, 1-4phi or phi). The sum telescopes to 1.
pub fn cr_probs(phi: f64, up_heavy: bool) -> [f64; 4] {
    let light = phi;
    let heavy = 1.0 - 4.0 * phi;
    if up_heavy {
        [2.0 * phi, light, phi, heavy]
    } else {
        [2.0 * phi, heavy, phi, light]
    }
}

pub fn sample_cr_example(phi_law: &PhiLaw, rng: &mut SplitMix64) -> SiteDistribution {
    let phi = phi_law.sample(rng);
    assert!(
        phi > 0.0 && phi < 0.25,
        "phi law produced {phi} outside (0, 1/4)"
    );
    let up_heavy = rng.next() & 1 == 1;
    SiteDistribution {
        probs: cr_probs(phi, up_heavy).to_vec(),
    }
}

/// Sample the ratio-constrained law: forced split of the axis mass into
/// r/(1+r) forward and 1/(1+r) backward makes omega(e_1) = r*omega(-e_1)
/// hold bitwise.
pub fn sample_ratio_law(r: f64, base: &RatioBase, rng: &mut SplitMix64) -> SiteDistribution {
    let m = base.mass_lo + rng.open01() * (base.mass_hi - base.mass_lo);
    let unit = m / (1.0 + r);
    let rest = sample_dirichlet_weights(&base.rest_beta, rng);
    let d = base.rest_beta.len() / 2 + 1;
    let mut probs = vec![0.0; 2 * d];
    probs[0] = r * unit;
    probs[d] = unit;
    let remaining = 1.0 - m;
    let mut k = 0;
    for i in 0..2 * d {
        if i == 0 || i == d {
            continue;
        }
        probs[i] = remaining * rest[k];
        k += 1;
    }
    SiteDistribution { probs }
}

/// Normalized gamma draws without the site-distribution length constraint.
fn sample_dirichlet_weights(beta: &[f64], rng: &mut SplitMix64) -> Vec<f64> {
    let gammas: Vec<Gamma<f64>> = beta
        .iter()
        .map(|&b| Gamma::new(b, 1.0).expect("positive shape"))
        .collect();
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        if draws.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            continue;
        }
        let sum: f64 = draws.iter().sum();
        let out: Vec<f64> = draws.iter().map(|g| g / sum).collect();
        if out.iter().all(|&p| p > 0.0 && p < 1.0) {
            return out;
        }
    }
}

/// A lazily realized environment: site distributions are drawn on first
/// query from a stream keyed by (master_seed, site) and cached, so query
/// order and thread interleaving cannot change the realization.
pub struct QuenchedEnvironment {
    law: EnvironmentLaw,
    master_seed: u64,
    cache: RwLock<HashMap<Vec<i64>, Arc<SiteDistribution>>>,
}

impl QuenchedEnvironment {
    pub fn new(law: EnvironmentLaw, master_seed: u64) -> Result<Self, LawError> {
        law.validate()?;
        Ok(QuenchedEnvironment {
            law,
            master_seed,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn law(&self) -> &EnvironmentLaw {
        &self.law
    }

    pub fn d(&self) -> usize {
        self.law.d()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn site(&self, x: &[i64]) -> Arc<SiteDistribution> {
        debug_assert_eq!(x.len(), self.d());
        if let Some(hit) = self.cache.read().expect("cache lock").get(x) {
            return hit.clone();
        }
        let mut rng = SplitMix64::for_site(self.master_seed, domain::ENVIRONMENT, x);
        let fresh = Arc::new(self.law.sample(&mut rng));
        let mut cache = self.cache.write().expect("cache lock");
        cache.entry(x.to_vec()).or_insert(fresh).clone()
    }

    pub fn cached_sites(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    /// Rough memory held by the cache, for run reports.
    pub fn cache_memory_bytes(&self) -> usize {
        let n = self.cached_sites();
        let per_site = std::mem::size_of::<Vec<i64>>()
            + self.d() * std::mem::size_of::<i64>()
            + std::mem::size_of::<Arc<SiteDistribution>>()
            + 2 * self.d() * std::mem::size_of::<f64>();
        n * per_site
    }
}
