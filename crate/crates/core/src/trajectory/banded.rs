//! Banded LU factorization with partial pivoting.
//!
//! Rows store the band `[i − kl, i + ku + kl]` so that row interchanges
//! have room for fill-in, following the LAPACK `gbtrf` layout idea.

use nalgebra::Vector3;

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            j + self.kl >= i && j <= i + self.ku + self.kl,
            "({i}, {j}) outside band"
        );
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    /// Sets an entry of the original (unfactored) matrix.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside declared band");
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let o = self.offset(i, j);
        &mut self.data[o]
    }

    /// Dense matrix-vector product on the original entries.
    pub fn mul_vec(&self, x: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Factors in place. Fails when a pivot falls below `tiny`.
    pub fn factor(mut self, tiny: f64) -> Result<BandedLu, usize> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > tiny) {
                return Err(k);
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let a = self.get(k, c);
                    let b = self.get(p, c);
                    *self.at(k, c) = b;
                    *self.at(p, c) = a;
                }
            }
            let pivot = self.get(k, k);
            for r in k + 1..=last_row {
                let l = self.get(r, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at(r, k) = l;
                for c in k + 1..=last_col {
                    let u = self.get(k, c);
                    if u != 0.0 {
                        *self.at(r, c) -= l * u;
                    }
                }
            }
        }
        Ok(BandedLu { lu: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [Vector3<f64>]) {
        let m = &self.lu;
        let n = m.n;
        let span = m.kl + m.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for r in k + 1..=(k + m.kl).min(n - 1) {
                let l = m.get(r, k);
                if l != 0.0 {
                    b[r] -= l * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for c in i + 1..=(i + span).min(n - 1) {
                acc -= m.get(i, c) * b[c];
            }
            b[i] = acc / m.get(i, i);
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transposed(&self, b: &mut [Vector3<f64>]) {
        let m = &self.lu;
        let n = m.n;
        let span = m.kl + m.ku;
        for i in 0..n {
            let mut acc = b[i];
            for c in i.saturating_sub(span)..i {
                acc -= m.get(c, i) * b[c];
            }
            b[i] = acc / m.get(i, i);
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for r in k + 1..=(k + m.kl).min(n - 1) {
                acc -= m.get(r, k) * b[r];
            }
            b[k] = acc;
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }
}
