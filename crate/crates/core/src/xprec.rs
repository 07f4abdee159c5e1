//! Double-double arithmetic (≈106-bit significand) and a cyclic Jacobi
//! eigensolver for small symmetric matrices.
//!
//! Values are unevaluated sums hi + lo with |lo| ≤ ulp(hi)/2. Products rely
//! on fused multiply-add for the exact error term.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub const fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return if self.hi == 0.0 { Dd::ZERO } else { Dd::new(f64::NAN) };
        }
        let x = self.hi.sqrt();
        let r = self - Dd::new(x) * Dd::new(x);
        Dd::renorm(x, r.hi / (2.0 * x))
    }

    /// x^k by repeated squaring.
    pub fn powi(self, mut k: u32) -> Self {
        let mut base = self;
        let mut acc = Dd::ONE;
        while k > 0 {
            if k & 1 == 1 {
                acc *= base;
            }
            base *= base;
            k >>= 1;
        }
        acc
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd::new(x)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} + {:e}", self.hi, self.lo)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::new(q2);
        let q3 = r.hi / b.hi;
        Dd::renorm(q1, q2) + Dd::new(q3)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl SubAssign for Dd {
    fn sub_assign(&mut self, b: Dd) {
        *self = *self - b;
    }
}

impl MulAssign for Dd {
    fn mul_assign(&mut self, b: Dd) {
        *self = *self * b;
    }
}

/// Row-major square matrix of double-doubles.
pub type DdMatrix = Vec<Vec<Dd>>;

/// Eigen-decomposition of a symmetric matrix: `values[i]` pairs with column
/// `i` of `vectors` (vectors[row][i]).
pub struct SymmetricEigen {
    pub values: Vec<Dd>,
    pub vectors: DdMatrix,
}

/// Cyclic Jacobi rotations until the off-diagonal mass drops below
/// 1e-30 of the Frobenius norm.
pub fn symmetric_eigen(matrix: &DdMatrix) -> SymmetricEigen {
    let n = matrix.len();
    let mut a = matrix.clone();
    let mut v: DdMatrix = (0..n)
        .map(|i| (0..n).map(|j| if i == j { Dd::ONE } else { Dd::ZERO }).collect())
        .collect();
    // Norms are formed relative to the largest entry so squares cannot overflow.
    let big = a.iter().flatten().map(|x| x.hi.abs()).fold(0.0, f64::max);
    if !(big.is_finite() && big > 0.0) {
        let values = (0..n).map(|_| if big == 0.0 { Dd::ZERO } else { Dd::new(f64::NAN) }).collect();
        return SymmetricEigen { values, vectors: v };
    }
    let tol = 1e-30 * a.iter().flatten().map(|x| (x.hi / big).powi(2)).sum::<f64>().sqrt();
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| (a[i][j].hi / big).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].hi.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (Dd::new(2.0) * a[p][q]);
                let t = if theta.hi.abs() > 1e100 {
                    // θ² would overflow; t → 1/(2θ).
                    Dd::ONE / (Dd::new(2.0) * theta)
                } else {
                    let root = (theta * theta + Dd::ONE).sqrt();
                    if theta.hi >= 0.0 {
                        Dd::ONE / (theta + root)
                    } else {
                        -(Dd::ONE / (root - theta))
                    }
                };
                let c = Dd::ONE / (t * t + Dd::ONE).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    SymmetricEigen { values: (0..n).map(|i| a[i][i]).collect(), vectors: v }
}

/// Σ aᵢ·bᵢ accumulated in double-double.
pub fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    a.iter().zip(b).fold(Dd::ZERO, |acc, (x, y)| acc + *x * *y)
}
