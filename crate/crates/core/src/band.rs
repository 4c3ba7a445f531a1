//! Banded direct solver.
//!
//! Every implicit system on the strip couples a node to neighbours at most
//! two rows away, so in row-major ordering the bandwidth is `2*Nx` on each
//! side (the periodic wrap in x stays inside that band). LU with partial
//! pivoting in LAPACK band storage keeps the factorization `O(n * b^2)` and
//! removes iterative-solver tolerances from every gradient and oracle check.

use thiserror::Error;

#[derive(Debug, Error)]
#[error("singular matrix: zero pivot at column {col}")]
pub struct SingularMatrix {
    pub col: usize,
}

/// Square banded matrix with `kl` subdiagonals and `ku` superdiagonals.
///
/// Entries are stored LAPACK-style with `kl` extra rows on top for the
/// fill-in produced by row pivoting: `A[i][j]` lives at `ab[kl + ku + i - j][j]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>, // (2*kl + ku + 1) x n, column-major by band row
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        assert!(n > 0);
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ab: vec![0.0; ldab * n] }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn at(&self, band_row: usize, col: usize) -> usize {
        debug_assert!(band_row < self.ldab() && col < self.n);
        col * self.ldab() + band_row
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        let d = i as isize - j as isize;
        d <= self.kl as isize && -d <= self.ku as isize
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.at(self.kl + self.ku + i - j, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku);
        let p = self.at(self.kl + self.ku + i - j, j);
        self.ab[p] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku);
        let p = self.at(self.kl + self.ku + i - j, j);
        self.ab[p] += v;
    }

    /// Transposed copy; bandwidths swap roles.
    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::new(self.n, self.ku, self.kl);
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                let v = self.get(i, j);
                if v != 0.0 {
                    t.set(j, i, v);
                }
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                y[i] += self.get(i, j) * x[j];
            }
        }
        y
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                d[i][j] = self.get(i, j);
            }
        }
        d
    }

    /// LU factorization with partial pivoting (consumes the matrix).
    pub fn lu(mut self) -> Result<BandLu, SingularMatrix> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot search in column j among rows j..=j+km
            let mut jp = 0;
            let mut pv = self.ab[self.at(kl + ku, j)].abs();
            for p in 1..=km {
                let v = self.ab[self.at(kl + ku + p, j)].abs();
                if v > pv {
                    pv = v;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if self.ab[self.at(kl + ku + jp, j)] == 0.0 {
                return Err(SingularMatrix { col: j });
            }
            let ju = (j + ku + kl).min(n - 1);
            if jp != 0 {
                for c in j..=ju {
                    let r1 = self.at(kl + ku + j - c, c);
                    let r2 = self.at(kl + ku + j + jp - c, c);
                    self.ab.swap(r1, r2);
                }
            }
            if km > 0 {
                let pivot = self.ab[self.at(kl + ku, j)];
                for p in 1..=km {
                    let idx = self.at(kl + ku + p, j);
                    self.ab[idx] /= pivot;
                }
                for c in j + 1..=ju {
                    let ajc = self.ab[self.at(kl + ku + j - c, c)];
                    if ajc != 0.0 {
                        for p in 1..=km {
                            let m = self.ab[self.at(kl + ku + p, j)];
                            let idx = self.at(kl + ku + j + p - c, c);
                            self.ab[idx] -= m * ajc;
                        }
                    }
                }
            }
        }
        Ok(BandLu { n, kl, ku, ab: self.ab, ipiv })
    }
}

/// Factored form produced by [`BandMatrix::lu`].
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn at(&self, band_row: usize, col: usize) -> usize {
        col * (2 * self.kl + self.ku + 1) + band_row
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        // L: unit lower triangular, with row interchanges
        for j in 0..n.saturating_sub(1) {
            let km = kl.min(n - 1 - j);
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                for i in 1..=km {
                    b[j + i] -= self.ab[self.at(kl + ku + i, j)] * bj;
                }
            }
        }
        // U: upper triangular with bandwidth ku + kl
        for j in (0..n).rev() {
            b[j] /= self.ab[self.at(kl + ku, j)];
            let bj = b[j];
            if bj != 0.0 {
                let lo = j.saturating_sub(ku + kl);
                for i in lo..j {
                    b[i] -= self.ab[self.at(kl + ku + i - j, j)] * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
