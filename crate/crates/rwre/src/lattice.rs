//! Lattice geometry: canonical directions on Z^d, rotated boxes for
//! directional exit statistics, tilted boxes, and slabs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Tolerance for tie-breaking against box faces. Membership intervals are
/// open; coordinates within this distance of a face count as outside.
pub const FACE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("direction vector must be nonzero")]
    ZeroDirection,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("box depth must be >= 2, got {0}")]
    DepthTooSmall(f64),
    #[error("box width must be positive, got {0}")]
    WidthNotPositive(f64),
    #[error("tilt direction must satisfy v.e1 > 0, got {0}")]
    TiltNotForward(f64),
    #[error("parameter {name} = {value} outside required range {range}")]
    ParameterRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// The 2d canonical unit steps: index i < d is +e_i, index d+i is -e_i.
pub fn canonical_directions(d: usize) -> Result<Vec<Vec<i64>>, LatticeError> {
    if d < 2 {
        return Err(LatticeError::DimensionTooSmall(d));
    }
    let mut dirs = Vec::with_capacity(2 * d);
    for i in 0..2 * d {
        let mut v = vec![0i64; d];
        if i < d {
            v[i] = 1;
        } else {
            v[i - d] = -1;
        }
        dirs.push(v);
    }
    Ok(dirs)
}

/// Index of the direction opposite to `dir` (e_i <-> -e_i).
#[inline]
pub fn opposite(d: usize, dir: usize) -> usize {
    (dir + d) % (2 * d)
}

/// Apply the `dir`-th canonical step to `x` in place.
#[inline]
pub fn step_in_place(x: &mut [i64], dir: usize) {
    let d = x.len();
    if dir < d {
        x[dir] += 1;
    } else {
        x[dir - d] -= 1;
    }
}

/// Component of the `dir`-th canonical step along a real vector `l`.
#[inline]
pub fn step_dot(l: &[f64], dir: usize) -> f64 {
    let d = l.len();
    if dir < d {
        l[dir]
    } else {
        -l[dir - d]
    }
}

#[inline]
pub fn dot(l: &[f64], x: &[i64]) -> f64 {
    l.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

/// Orthogonal matrix with first column `l` (so `R e_1 = l`), built as a
/// Householder reflection with one column negated to fix the determinant
/// at +1. Deterministic in `l`.
pub fn build_rotation(l: &[f64]) -> Result<DMatrix<f64>, LatticeError> {
    let d = l.len();
    if d < 2 {
        return Err(LatticeError::DimensionTooSmall(d));
    }
    let norm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-300 {
        return Err(LatticeError::ZeroDirection);
    }
    let unit: Vec<f64> = l.iter().map(|v| v / norm).collect();

    // v = e1 - l; H = I - 2 v v^T / |v|^2 maps e1 to l.
    let mut v: Vec<f64> = unit.iter().map(|&c| -c).collect();
    v[0] += 1.0;
    let vv: f64 = v.iter().map(|c| c * c).sum();
    if vv < 1e-26 {
        return Ok(DMatrix::identity(d, d));
    }
    let mut h = DMatrix::<f64>::identity(d, d);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] -= 2.0 * v[i] * v[j] / vv;
        }
    }
    // A Householder reflection has determinant -1; flipping the last column
    // restores +1 and leaves the first column untouched.
    for i in 0..d {
        h[(i, d - 1)] = -h[(i, d - 1)];
    }
    Ok(h)
}

/// Which face of a box an exit site belongs to. Front takes priority over
/// side when both apply, matching the definition of the front boundary as
/// all points with x.l >= L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitFace {
    Front,
    Back,
    Side,
}

/// A box of depth `2L` along direction `l` and width `2L~` across it:
/// the preimage under the rotation of the open product
/// (-L, L) x (-L~, L~)^{d-1}, intersected with Z^d.
#[derive(Debug, Clone)]
pub struct BoxSpec {
    pub d: usize,
    pub l: Vec<f64>,
    pub depth: f64,
    pub width: f64,
    rotation: DMatrix<f64>,
}

impl BoxSpec {
    pub fn new(l: &[f64], depth: f64, width: f64) -> Result<Self, LatticeError> {
        if depth < 2.0 {
            return Err(LatticeError::DepthTooSmall(depth));
        }
        if width <= 0.0 {
            return Err(LatticeError::WidthNotPositive(width));
        }
        let rotation = build_rotation(l)?;
        let norm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = l.iter().map(|v| v / norm).collect();
        Ok(BoxSpec {
            d: l.len(),
            l: unit,
            depth,
            width,
            rotation,
        })
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Coordinates of `x` in the rotated frame (first entry is x.l).
    pub fn rotated_coords(&self, x: &[i64]) -> DVector<f64> {
        let xv = DVector::from_iterator(self.d, x.iter().map(|&c| c as f64));
        self.rotation.transpose() * xv
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        let c = self.rotated_coords(x);
        if c[0].abs() >= self.depth - FACE_TOL {
            return false;
        }
        for k in 1..self.d {
            if c[k].abs() >= self.width - FACE_TOL {
                return false;
            }
        }
        true
    }

    /// Classify a point outside the box by the face it lies beyond.
    /// Returns None for interior points.
    pub fn exit_classification(&self, x: &[i64]) -> Option<ExitFace> {
        if self.contains(x) {
            return None;
        }
        let along = dot(&self.l, x);
        if along >= self.depth - FACE_TOL {
            Some(ExitFace::Front)
        } else if along <= -(self.depth - FACE_TOL) {
            Some(ExitFace::Back)
        } else {
            Some(ExitFace::Side)
        }
    }

    /// All lattice points of the box, found by flood fill from the origin.
    /// Errors if the box does not contain the origin or exceeds `cap` sites.
    pub fn interior_sites(&self, cap: usize) -> Result<Vec<Vec<i64>>, BoxEnumError> {
        let origin = vec![0i64; self.d];
        if !self.contains(&origin) {
            return Err(BoxEnumError::OriginOutside);
        }
        let mut seen = std::collections::HashSet::new();
        let mut queue = std::collections::VecDeque::new();
        let mut out = Vec::new();
        seen.insert(origin.clone());
        queue.push_back(origin.clone());
        out.push(origin);
        while let Some(x) = queue.pop_front() {
            for dir in 0..2 * self.d {
                let mut y = x.clone();
                step_in_place(&mut y, dir);
                if !seen.contains(&y) && self.contains(&y) {
                    seen.insert(y.clone());
                    out.push(y.clone());
                    if out.len() > cap {
                        return Err(BoxEnumError::CapExceeded(cap));
                    }
                    queue.push_back(y);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BoxEnumError {
    #[error("box does not contain the origin")]
    OriginOutside,
    #[error("box has more than {0} sites")]
    CapExceeded(usize),
}

/// Outer boundary of a set of sites: points outside the set adjacent to it.
pub fn outer_boundary(sites: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let set: std::collections::HashSet<&[i64]> = sites.iter().map(|s| s.as_slice()).collect();
    let d = match sites.first() {
        Some(s) => s.len(),
        None => return Vec::new(),
    };
    let mut boundary = std::collections::HashSet::new();
    for x in sites {
        for dir in 0..2 * d {
            let mut y = x.clone();
            step_in_place(&mut y, dir);
            if !set.contains(y.as_slice()) {
                boundary.insert(y);
            }
        }
    }
    let mut out: Vec<Vec<i64>> = boundary.into_iter().collect();
    out.sort();
    out
}

/// Projection of z onto the tilt direction v along the e_1 axis:
/// P(z) = (z.e1 / v.e1) v, so that z - P(z) has zero e_1 component.
pub fn project_p(z: &[f64], v: &[f64]) -> Result<Vec<f64>, LatticeError> {
    if z.len() != v.len() {
        return Err(LatticeError::DimensionMismatch {
            expected: v.len(),
            got: z.len(),
        });
    }
    if v[0] <= 0.0 {
        return Err(LatticeError::TiltNotForward(v[0]));
    }
    let t = z[0] / v[0];
    Ok(v.iter().map(|&c| t * c).collect())
}

/// Complementary projection Q(z) = z - P(z).
pub fn project_q(z: &[f64], v: &[f64]) -> Result<Vec<f64>, LatticeError> {
    let p = project_p(z, v)?;
    Ok(z.iter().zip(&p).map(|(&a, &b)| a - b).collect())
}

/// Box tilted along a direction v with v.e1 > 0: depth L forward along e_1,
/// L^beta backward, and sup-norm width rho L^beta across the tilt.
#[derive(Debug, Clone)]
pub struct TiltedBoxSpec {
    pub d: usize,
    pub v: Vec<f64>,
    pub beta: f64,
    pub big_l: f64,
    pub rho: f64,
    pub center: Vec<i64>,
}

impl TiltedBoxSpec {
    pub fn new(
        v: &[f64],
        beta: f64,
        big_l: f64,
        rho: f64,
        center: Vec<i64>,
    ) -> Result<Self, LatticeError> {
        let d = v.len();
        if d < 2 {
            return Err(LatticeError::DimensionTooSmall(d));
        }
        if v[0] <= 0.0 {
            return Err(LatticeError::TiltNotForward(v[0]));
        }
        if !(0.0 < beta && beta < 1.0) {
            return Err(LatticeError::ParameterRange {
                name: "beta",
                value: beta,
                range: "(0, 1)",
            });
        }
        if big_l < 2.0 {
            return Err(LatticeError::DepthTooSmall(big_l));
        }
        if rho <= 0.0 {
            return Err(LatticeError::WidthNotPositive(rho));
        }
        if center.len() != d {
            return Err(LatticeError::DimensionMismatch {
                expected: d,
                got: center.len(),
            });
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        Ok(TiltedBoxSpec {
            d,
            v: v.iter().map(|c| c / norm).collect(),
            beta,
            big_l,
            rho,
            center,
        })
    }

    fn rel(&self, y: &[i64]) -> Vec<f64> {
        y.iter()
            .zip(&self.center)
            .map(|(&a, &b)| (a - b) as f64)
            .collect()
    }

    pub fn contains(&self, y: &[i64]) -> bool {
        let z = self.rel(y);
        let back = self.big_l.powf(self.beta);
        if z[0] <= -back + FACE_TOL || z[0] >= self.big_l - FACE_TOL {
            return false;
        }
        let q = project_q(&z, &self.v).expect("validated tilt");
        let w = self.rho * back;
        q.iter().all(|c| c.abs() < w - FACE_TOL)
    }

    /// Points of the outer boundary lying at or beyond the front face
    /// (relative e_1 coordinate >= L), the positive exit set.
    pub fn is_front_exit(&self, y: &[i64]) -> bool {
        !self.contains(y) && self.rel(y)[0] >= self.big_l - FACE_TOL
    }
}

/// Slab {x : -L^{beta'} < x.e1 < L}.
#[derive(Debug, Clone)]
pub struct SlabSpec {
    pub beta_prime: f64,
    pub big_l: f64,
}

impl SlabSpec {
    pub fn new(beta_prime: f64, big_l: f64) -> Result<Self, LatticeError> {
        if !(0.0 < beta_prime && beta_prime < 1.0) {
            return Err(LatticeError::ParameterRange {
                name: "beta_prime",
                value: beta_prime,
                range: "(0, 1)",
            });
        }
        if big_l < 2.0 {
            return Err(LatticeError::DepthTooSmall(big_l));
        }
        Ok(SlabSpec { beta_prime, big_l })
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        let c = x[0] as f64;
        c > -self.big_l.powf(self.beta_prime) + FACE_TOL && c < self.big_l - FACE_TOL
    }
}
