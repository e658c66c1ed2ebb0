//! Quenched walk simulation with stopping-time instrumentation, and an
//! exact exit-law solver on small regions that serves as the brute-force
//! oracle behind every Monte Carlo estimate in this crate.

use std::collections::HashMap;

use thiserror::Error;

use crate::environment::QuenchedEnvironment;
use crate::lattice::step_in_place;
use crate::linsolve::{bicgstab, CsrMatrix, SolveError};
use crate::rng::SplitMix64;

/// Default cap on exact-solver region sizes.
pub const EXACT_REGION_CAP: usize = 20_000;

#[derive(Debug, Error)]
pub enum WalkerError {
    #[error("start site is outside the region")]
    StartOutsideRegion,
    #[error("region has {got} sites, exceeding the cap of {cap}")]
    RegionTooLarge { got: usize, cap: usize },
    #[error("start site is not part of the region set")]
    StartNotListed,
    #[error("exit masses sum to {0}, expected 1 within 1e-9")]
    MassLeak(f64),
    #[error("linear solve failed: {0}")]
    Solve(#[from] SolveError),
}

/// A nearest-neighbour path stored as its start and step directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub start: Vec<i64>,
    pub steps: Vec<u8>,
    pub d: usize,
    /// True when the walk was cut at the configured horizon rather than
    /// by its stopping rule.
    pub horizon_hit: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Position after the first `n` steps.
    pub fn position_at(&self, n: usize) -> Vec<i64> {
        assert!(n <= self.steps.len());
        let mut x = self.start.clone();
        for &s in &self.steps[..n] {
            step_in_place(&mut x, s as usize);
        }
        x
    }

    pub fn final_position(&self) -> Vec<i64> {
        self.position_at(self.steps.len())
    }

    /// Visit every position in order, including the start.
    pub fn for_each_position(&self, mut f: impl FnMut(usize, &[i64])) {
        let mut x = self.start.clone();
        f(0, &x);
        for (n, &s) in self.steps.iter().enumerate() {
            step_in_place(&mut x, s as usize);
            f(n + 1, &x);
        }
    }
}

/// One quenched step from `x`: pick a direction by inverting the site law.
pub fn step(env: &QuenchedEnvironment, x: &[i64], rng: &mut SplitMix64) -> Vec<i64> {
    let dist = env.site(x);
    let dir = dist.choose_direction(rng.open01());
    let mut y = x.to_vec();
    step_in_place(&mut y, dir);
    y
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkRun {
    pub trajectory: Trajectory,
    /// First site outside the region, with the step count that reached it.
    /// None when the horizon was hit first.
    pub exit: Option<(Vec<i64>, usize)>,
}

/// Run the quenched walk from `start` until it leaves `region` or takes
/// `horizon` steps, whichever comes first.
pub fn run_until_exit(
    env: &QuenchedEnvironment,
    start: &[i64],
    region: impl Fn(&[i64]) -> bool,
    horizon: usize,
    rng: &mut SplitMix64,
) -> Result<WalkRun, WalkerError> {
    if !region(start) {
        return Err(WalkerError::StartOutsideRegion);
    }
    let mut x = start.to_vec();
    let mut steps = Vec::new();
    for n in 0..horizon {
        let dist = env.site(&x);
        let dir = dist.choose_direction(rng.open01());
        step_in_place(&mut x, dir);
        steps.push(dir as u8);
        if !region(&x) {
            return Ok(WalkRun {
                trajectory: Trajectory {
                    start: start.to_vec(),
                    steps,
                    d: env.d(),
                    horizon_hit: false,
                },
                exit: Some((x, n + 1)),
            });
        }
    }
    Ok(WalkRun {
        trajectory: Trajectory {
            start: start.to_vec(),
            steps,
            d: env.d(),
            horizon_hit: true,
        },
        exit: None,
    })
}

/// First hitting times of directional levels and of the backtrack event
/// along a direction l.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTimes {
    /// level_times[k] = first n with X_n.l >= levels[k], None if never.
    pub level_times: Vec<Option<usize>>,
    /// First n with X_n.l < X_0.l, None if never.
    pub backtrack: Option<usize>,
}

pub fn detect_stopping_times(traj: &Trajectory, l: &[f64], levels: &[f64]) -> StoppingTimes {
    assert_eq!(l.len(), traj.d);
    let mut level_times = vec![None; levels.len()];
    let mut backtrack = None;
    let mut start_level = 0.0;
    traj.for_each_position(|n, x| {
        let h: f64 = l.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
        if n == 0 {
            start_level = h;
        }
        for (k, &u) in levels.iter().enumerate() {
            if level_times[k].is_none() && h >= u {
                level_times[k] = Some(n);
            }
        }
        if backtrack.is_none() && n > 0 && h < start_level {
            backtrack = Some(n);
        }
    });
    StoppingTimes {
        level_times,
        backtrack,
    }
}

/// Exact quenched exit law from a finite region: the linear system
/// (I - P^T) mu = delta_start gives the expected visit counts mu, and the
/// exit mass at boundary site b is sum over interior x, directions e with
/// x+e = b of mu(x) omega(x,e). Absorption is certain under ellipticity,
/// so the masses sum to 1; this is checked to 1e-9.
pub fn exact_exit_distribution(
    env: &QuenchedEnvironment,
    region: &[Vec<i64>],
    start: &[i64],
    cap: usize,
) -> Result<HashMap<Vec<i64>, f64>, WalkerError> {
    if region.len() > cap {
        return Err(WalkerError::RegionTooLarge {
            got: region.len(),
            cap,
        });
    }
    let index: HashMap<&[i64], usize> = region
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_slice(), i))
        .collect();
    let Some(&start_idx) = index.get(start) else {
        return Err(WalkerError::StartNotListed);
    };
    let n = region.len();
    let d = env.d();

    // Row i of the system holds 1 at (i,i) and -omega(j, e) at (i, j) for
    // every interior j with j+e = i: the transpose of the killed kernel.
    let mut triplets = Vec::with_capacity(n * (2 * d + 1));
    for i in 0..n {
        triplets.push((i, i, 1.0));
    }
    for (j, x) in region.iter().enumerate() {
        let dist = env.site(x);
        for dir in 0..2 * d {
            let mut y = x.clone();
            step_in_place(&mut y, dir);
            if let Some(&i) = index.get(y.as_slice()) {
                triplets.push((i, j, -dist.prob(dir)));
            }
        }
    }
    let a = CsrMatrix::from_triplets(n, n, &mut triplets);
    let mut b = vec![0.0; n];
    b[start_idx] = 1.0;
    let mu = bicgstab(&a, &b, 1e-12, 60_000)?;

    let mut exit: HashMap<Vec<i64>, f64> = HashMap::new();
    for (j, x) in region.iter().enumerate() {
        let dist = env.site(x);
        for dir in 0..2 * d {
            let mut y = x.clone();
            step_in_place(&mut y, dir);
            if !index.contains_key(y.as_slice()) {
                *exit.entry(y).or_insert(0.0) += mu[j] * dist.prob(dir);
            }
        }
    }
    let total: f64 = exit.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(WalkerError::MassLeak(total));
    }
    Ok(exit)
}
