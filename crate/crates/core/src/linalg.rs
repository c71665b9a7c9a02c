//! Small dense square matrices with a fixed compile-time size.
//!
//! Everything in the propagator lives in 4×4 (covariance), 8×8 (augmented
//! noise block) or 16×16 (sensitivity block) matrices, so a stack-allocated
//! array type with a handful of kernels is all that is needed.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Row-major `N×N` matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<T, const N: usize>(pub [[T; N]; N]);

impl<T: Scalar, const N: usize> Default for Mat<T, N> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<T: Scalar, const N: usize> Mat<T, N> {
    pub fn zeros() -> Self {
        Mat([[T::zero(); N]; N])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = T::one();
        }
        m
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn from_diagonal(d: [T; N]) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = d[i];
        }
        m
    }

    pub fn diagonal(&self) -> [T; N] {
        let mut d = [T::zero(); N];
        for (i, v) in d.iter_mut().enumerate() {
            *v = self.0[i][i];
        }
        d
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i])
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn trace(&self) -> T {
        (0..N).map(|i| self.0[i][i]).sum()
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(|i, j| (self.0[i][j] + self.0[j][i]) * half)
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Induced 1-norm (max column sum).
    pub fn norm1(&self) -> T {
        (0..N)
            .map(|j| (0..N).map(|i| self.0[i][j].abs()).sum::<T>())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Frobenius inner product `Σ A_ij B_ij`.
    pub fn dot(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for i in 0..N {
            for j in 0..N {
                acc += self.0[i][j] * other.0[i][j];
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|r| r.iter()).all(|v| v.is_finite())
    }

    /// Largest entrywise deviation divided by the largest entry of `reference`.
    pub fn rel_diff(&self, reference: &Self) -> T {
        let scale = reference.max_abs();
        let diff = (*self - *reference).max_abs();
        if scale == T::zero() {
            diff
        } else {
            diff / scale
        }
    }

    /// `M X Mᵀ`.
    pub fn congruence(&self, x: &Self) -> Self {
        *self * *x * self.transpose()
    }

    pub fn block<const M: usize>(&self, r0: usize, c0: usize) -> Mat<T, M> {
        Mat::<T, M>::from_fn(|i, j| self.0[r0 + i][c0 + j])
    }

    pub fn set_block<const M: usize>(&mut self, r0: usize, c0: usize, b: &Mat<T, M>) {
        for i in 0..M {
            for j in 0..M {
                self.0[r0 + i][c0 + j] = b.0[i][j];
            }
        }
    }

    /// Solves `self · X = rhs` by LU with partial pivoting. `None` if singular.
    pub fn solve(&self, rhs: &Self) -> Option<Self> {
        let mut a = self.0;
        let mut b = rhs.0;
        for col in 0..N {
            let pivot = (col..N).max_by(|&r, &s| {
                a[r][col]
                    .abs()
                    .partial_cmp(&a[s][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })?;
            if a[pivot][col] == T::zero() || !a[pivot][col].is_finite() {
                return None;
            }
            a.swap(col, pivot);
            b.swap(col, pivot);
            let inv = T::one() / a[col][col];
            for r in (col + 1)..N {
                let factor = a[r][col] * inv;
                if factor == T::zero() {
                    continue;
                }
                for c in col..N {
                    let v = a[col][c];
                    a[r][c] -= factor * v;
                }
                for c in 0..N {
                    let v = b[col][c];
                    b[r][c] -= factor * v;
                }
            }
        }
        for col in (0..N).rev() {
            let inv = T::one() / a[col][col];
            for c in 0..N {
                let mut acc = b[col][c];
                for k in (col + 1)..N {
                    acc -= a[col][k] * b[k][c];
                }
                b[col][c] = acc * inv;
            }
        }
        Some(Mat(b))
    }

    /// Matrix exponential by scaling and squaring with a diagonal Padé
    /// approximant of degree 3, 5, 7, 9 or 13 chosen from the 1-norm
    /// (Higham 2005 thresholds for double precision).
    pub fn expm(&self) -> Self {
        const THETA: [(usize, f64); 4] = [
            (3, 1.495_585_217_958_292e-2),
            (5, 2.539_398_330_063_23e-1),
            (7, 9.504_178_996_162_932e-1),
            (9, 2.097_847_961_257_068),
        ];
        const THETA13: f64 = 5.371_920_351_148_152;

        let norm = self.norm1().to_f64_lossy();
        if !norm.is_finite() {
            return Self::from_fn(|_, _| T::nan());
        }
        for &(m, theta) in THETA.iter() {
            if norm <= theta {
                return pade_low(self, m);
            }
        }
        let s = if norm > THETA13 {
            (norm / THETA13).log2().ceil().max(0.0) as i32
        } else {
            0
        };
        let scaled = self.scale(T::lit(2f64.powi(-s)));
        let mut r = pade13(&scaled);
        for _ in 0..s {
            r = r * r;
        }
        r
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
    pub fn sym_eigenvalues(&self) -> [T; N] {
        let mut a = self.symmetrized().0;
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            let mut total = T::zero();
            for i in 0..N {
                for j in 0..N {
                    let v = a[i][j] * a[i][j];
                    total += v;
                    if i != j {
                        off += v;
                    }
                }
            }
            if off <= eps * eps * total || off == T::zero() {
                break;
            }
            for p in 0..N {
                for q in (p + 1)..N {
                    if a[p][q] == T::zero() {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..N {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..N {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut d = [T::zero(); N];
        for (i, v) in d.iter_mut().enumerate() {
            *v = a[i][i];
        }
        d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        d
    }

    /// Largest singular value, from the eigenvalues of `MᵀM`.
    pub fn max_singular_value(&self) -> T {
        let g = self.transpose() * *self;
        g.sym_eigenvalues()[N - 1].max(T::zero()).sqrt()
    }
}

fn pade_low<T: Scalar, const N: usize>(a: &Mat<T, N>, m: usize) -> Mat<T, N> {
    let b: &[f64] = match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[
            17_297_280.0,
            8_648_640.0,
            1_995_840.0,
            277_200.0,
            25_200.0,
            1_512.0,
            56.0,
            1.0,
        ],
        _ => &[
            17_643_225_600.0,
            8_821_612_800.0,
            2_075_673_600.0,
            302_702_400.0,
            30_270_240.0,
            2_162_160.0,
            110_880.0,
            3_960.0,
            90.0,
            1.0,
        ],
    };
    let ident = Mat::<T, N>::identity();
    let a2 = *a * *a;
    // even powers I, A², A⁴, ...
    let mut powers = vec![ident, a2];
    while powers.len() * 2 <= m + 1 {
        let last = *powers.last().unwrap();
        powers.push(last * a2);
    }
    let mut u = Mat::zeros();
    let mut v = Mat::zeros();
    for (k, p) in powers.iter().enumerate() {
        if 2 * k < m {
            u = u + p.scale(T::lit(b[2 * k + 1]));
        }
        if 2 * k <= m {
            v = v + p.scale(T::lit(b[2 * k]));
        }
    }
    let u = *a * u;
    finish_pade(&u, &v)
}

fn pade13<T: Scalar, const N: usize>(a: &Mat<T, N>) -> Mat<T, N> {
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let b = |k: usize| T::lit(B[k]);
    let ident = Mat::<T, N>::identity();
    let a2 = *a * *a;
    let a4 = a2 * a2;
    let a6 = a4 * a2;
    let u_inner = a6 * (a6.scale(b(13)) + a4.scale(b(11)) + a2.scale(b(9)))
        + a6.scale(b(7))
        + a4.scale(b(5))
        + a2.scale(b(3))
        + ident.scale(b(1));
    let u = *a * u_inner;
    let v = a6 * (a6.scale(b(12)) + a4.scale(b(10)) + a2.scale(b(8)))
        + a6.scale(b(6))
        + a4.scale(b(4))
        + a2.scale(b(2))
        + ident.scale(b(0));
    finish_pade(&u, &v)
}

fn finish_pade<T: Scalar, const N: usize>(u: &Mat<T, N>, v: &Mat<T, N>) -> Mat<T, N> {
    let p = *v + *u;
    let q = *v - *u;
    q.solve(&p).unwrap_or_else(|| Mat::from_fn(|_, _| T::nan()))
}

impl<T: Scalar, const N: usize> Add for Mat<T, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<T: Scalar, const N: usize> Sub for Mat<T, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<T: Scalar, const N: usize> Neg for Mat<T, N> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::from_fn(|i, j| -self.0[i][j])
    }
}

impl<T: Scalar, const N: usize> Mul for Mat<T, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            for k in 0..N {
                let a = self.0[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..N {
                    out.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        out
    }
}

impl<T, const N: usize> Index<(usize, usize)> for Mat<T, N> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[i][j]
    }
}

impl<T, const N: usize> IndexMut<(usize, usize)> for Mat<T, N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.0[i][j]
    }
}

impl<T: Serialize, const N: usize> Serialize for Mat<T, N> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(N))?;
        for row in &self.0 {
            seq.serialize_element(&row[..])?;
        }
        seq.end()
    }
}

impl<'de, T: Deserialize<'de>, const N: usize> Deserialize<'de> for Mat<T, N> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<T>> = Vec::deserialize(d)?;
        let bad = || serde::de::Error::custom(format!("expected a {N}x{N} matrix"));
        let rows: Vec<[T; N]> = rows
            .into_iter()
            .map(|r| r.try_into().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        Ok(Mat(rows.try_into().map_err(|_| bad())?))
    }
}

/// 4×4 matrix over the quadrature order `(X_a, Y_a, X_b, Y_b)`.
pub type Mat4<T> = Mat<T, 4>;
