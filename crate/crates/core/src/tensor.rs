//! Dense rank-3 coefficient arrays over small dimensions.
//!
//! Index convention: `get(i, j, k)` reads slot `[i][j][k]`. For connection
//! coefficients the first index is the raised one and the last two are the
//! lowered pair; for fully lowered tensors (cubic tensor, metric partials)
//! the tag on the surrounding type records the convention.

use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Rank3 {
    dim: usize,
    data: Vec<f64>,
}

impl Rank3 {
    pub fn zeros(dim: usize) -> Self {
        Rank3 {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Rank3::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    t.set(i, j, k, f(i, j, k));
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.dim + j) * self.dim + k] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Rank3) -> Rank3 {
        assert_eq!(self.dim, other.dim);
        Rank3 {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Contraction over the trailing pair: `out^i = T(i, j, k) a^j b^k`.
    pub fn contract_last_two(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let d = self.dim;
        DVector::from_fn(d, |i, _| {
            let mut s = 0.0;
            for j in 0..d {
                for k in 0..d {
                    s += self.get(i, j, k) * a[j] * b[k];
                }
            }
            s
        })
    }

    /// Largest deviation from full symmetry over all six index orders.
    pub fn permutation_asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = self.get(i, j, k);
                    for w in [
                        self.get(i, k, j),
                        self.get(j, i, k),
                        self.get(j, k, i),
                        self.get(k, i, j),
                        self.get(k, j, i),
                    ] {
                        worst = worst.max((v - w).abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest deviation from symmetry in the trailing index pair.
    pub fn last_two_asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in (j + 1)..d {
                    worst = worst.max((self.get(i, j, k) - self.get(i, k, j)).abs());
                }
            }
        }
        worst
    }

    /// Symmetrized copy in the trailing index pair.
    pub fn symmetrize_last_two(&self) -> Rank3 {
        Rank3::from_fn(self.dim, |i, j, k| {
            0.5 * (self.get(i, j, k) + self.get(i, k, j))
        })
    }
}
