//! Symmetric positive definite matrices in envelope (skyline) storage.
//!
//! Row `i` keeps the entries from column `first[i]` up to the diagonal. The
//! Cholesky factor has the same envelope, so banded pose graphs factor in
//! time linear in their length.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Skyline {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl Skyline {
    /// Zero matrix with the given first stored column per row.
    pub fn new(first: Vec<usize>) -> Self {
        let rows = first
            .iter()
            .enumerate()
            .map(|(i, &f)| vec![0.0; i + 1 - f.min(i)])
            .collect();
        let first = first.iter().enumerate().map(|(i, &f)| f.min(i)).collect();
        Self { first, rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Adds `v` to entry `(i, j)` with `j <= i` inside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && j >= self.first[i]);
        self.rows[i][j - self.first[i]] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.rows[i][j - self.first[i]]
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        *self.rows[i].last().expect("rows include the diagonal")
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        *self.rows[i].last_mut().expect("rows include the diagonal") += v;
    }

    /// In-place Cholesky factorisation `A = L L^T`.
    pub fn cholesky(mut self) -> Result<Self> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.rows[i][j - fi];
                for k in start..j {
                    s -= self.rows[i][k - fi] * self.rows[j][k - fj];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Divergence(format!("normal matrix not positive definite at row {i}")));
                    }
                    self.rows[i][j - fi] = s.sqrt();
                } else {
                    self.rows[i][j - fi] = s / self.rows[j][j - fj];
                }
            }
        }
        Ok(self)
    }

    /// Solves `L L^T x = b` with `self` holding `L`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.rows[i][k - fi] * y[k];
            }
            y[i] = s / self.rows[i][i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.rows[i][i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.rows[i][k - fi] * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_dense_cholesky() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 30;
        // random banded SPD matrix with a ragged envelope
        let first: Vec<usize> = (0..n).map(|i: usize| i.saturating_sub(rng.random_range(0..6))).collect();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in first[i]..i {
                let v = rng.random_range(-1.0..1.0);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
            dense[(i, i)] = 8.0 + rng.random_range(0.0..1.0);
        }
        let mut sky = Skyline::new(first.clone());
        for i in 0..n {
            for j in first[i]..=i {
                sky.add(i, j, dense[(i, j)]);
            }
        }
        assert_eq!(sky.get(3, first[3]), dense[(3, first[3])]);
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = sky.cholesky().unwrap().solve(b.as_slice());
        let expected = dense.cholesky().unwrap().solve(&b);
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut sky = Skyline::new(vec![0, 0]);
        sky.add(0, 0, 1.0);
        sky.add(1, 0, 2.0);
        sky.add(1, 1, 1.0);
        assert!(sky.cholesky().is_err());
    }
}
