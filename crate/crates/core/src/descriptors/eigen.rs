use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric 3×3 matrix stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

/// Largest tolerated asymmetry when converting a full matrix.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Eigenvalues below `-NEGATIVE_TOLERANCE * max(1, ‖m‖_F)` are rejected; smaller
/// negatives are clamped to zero.
pub const NEGATIVE_TOLERANCE: f64 = 1e-10;

impl Sym3 {
    pub const ZERO: Sym3 = Sym3 {
        xx: 0.0,
        xy: 0.0,
        xz: 0.0,
        yy: 0.0,
        yz: 0.0,
        zz: 0.0,
    };

    pub const IDENTITY: Sym3 = Sym3 {
        xx: 1.0,
        xy: 0.0,
        xz: 0.0,
        yy: 1.0,
        yz: 0.0,
        zz: 1.0,
    };

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Sym3 {
            xx: a,
            yy: b,
            zz: c,
            ..Sym3::ZERO
        }
    }

    /// `v vᵀ`
    pub fn outer(v: &[f64; 3]) -> Self {
        Sym3 {
            xx: v[0] * v[0],
            xy: v[0] * v[1],
            xz: v[0] * v[2],
            yy: v[1] * v[1],
            yz: v[1] * v[2],
            zz: v[2] * v[2],
        }
    }

    pub fn try_from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            if (m[i][j] - m[j][i]).abs() > SYMMETRY_TOLERANCE || !m[i][j].is_finite() {
                return Err(Error::InvalidTensor(format!(
                    "entries ({i},{j}) = {} and ({j},{i}) = {} are not symmetric",
                    m[i][j], m[j][i]
                )));
            }
        }
        if (0..3).any(|i| !m[i][i].is_finite()) {
            return Err(Error::InvalidTensor("non-finite diagonal".into()));
        }
        Ok(Sym3 {
            xx: m[0][0],
            xy: m[0][1],
            xz: m[0][2],
            yy: m[1][1],
            yz: m[1][2],
            zz: m[2][2],
        })
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn add_scaled(&mut self, other: &Sym3, w: f64) {
        self.xx += w * other.xx;
        self.xy += w * other.xy;
        self.xz += w * other.xz;
        self.yy += w * other.yy;
        self.yz += w * other.yz;
        self.zz += w * other.zz;
    }

    pub fn scaled(&self, w: f64) -> Sym3 {
        let mut out = Sym3::ZERO;
        out.add_scaled(self, w);
        out
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    pub fn mul_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        [
            self.xx * v[0] + self.xy * v[1] + self.xz * v[2],
            self.xy * v[0] + self.yy * v[1] + self.yz * v[2],
            self.xz * v[0] + self.yz * v[1] + self.zz * v[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Eigenvalues sorted descending, all non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenTriple(pub [f64; 3]);

impl EigenTriple {
    /// Sorts and validates arbitrary values; fails on any value below zero.
    pub fn new(mut values: [f64; 3]) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "eigenvalues {values:?} are not all non-negative"
            )));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(EigenTriple(values))
    }

    pub fn sum(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen3 {
    pub values: EigenTriple,
    /// `vectors[i]` is the unit eigenvector of `values.0[i]`.
    pub vectors: [[f64; 3]; 3],
}

/// Cyclic Jacobi rotations; returns (values, vectors) sorted by descending value.
/// Values may be negative for indefinite input.
pub fn jacobi_eigen(m: &Sym3) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m.to_matrix();
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = m.frobenius_norm();
    if scale == 0.0 {
        return ([0.0; 3], v);
    }
    for _ in 0..64 {
        if a[0][1] == 0.0 && a[0][2] == 0.0 && a[1][2] == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() <= 1e-3 * f64::EPSILON * scale {
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = if theta.abs() > 1e150 {
                0.5 / theta
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let r = 3 - p - q;
            a[p][p] -= t * apq;
            a[q][q] += t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let arp = a[r][p];
            let arq = a[r][q];
            a[r][p] = c * arp - s * arq;
            a[p][r] = a[r][p];
            a[r][q] = s * arp + c * arq;
            a[q][r] = a[r][q];
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (values, vectors)
}

/// Eigen-decomposition of a positive semidefinite tensor, clamping round-off
/// negatives to zero.
pub fn eigen_sym3(m: &Sym3) -> Result<Eigen3> {
    if !m.is_finite() {
        return Err(Error::InvalidTensor("non-finite entries".into()));
    }
    let (mut values, vectors) = jacobi_eigen(m);
    let tol = NEGATIVE_TOLERANCE * m.frobenius_norm().max(1.0);
    for v in values.iter_mut() {
        if *v < -tol {
            return Err(Error::InvalidTensor(format!(
                "eigenvalue {v} is negative beyond round-off"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(Eigen3 {
        values: EigenTriple(values),
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual(m: &Sym3, e: &Eigen3) -> f64 {
        (0..3)
            .map(|i| {
                let mv = m.mul_vec(&e.vectors[i]);
                let lv = e.vectors[i].map(|x| x * e.values.0[i]);
                ((mv[0] - lv[0]).powi(2) + (mv[1] - lv[1]).powi(2) + (mv[2] - lv[2]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn random_psd(rng: &mut ChaCha8Rng) -> Sym3 {
        // Sum of a few random outer products, occasionally rank deficient.
        let rank = rng.random_range(1..=4);
        let mut m = Sym3::ZERO;
        for _ in 0..rank {
            let v = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            m.add_scaled(&Sym3::outer(&v), rng.random_range(0.0..3.0));
        }
        m
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(eigen_sym3(&Sym3::IDENTITY).unwrap().values.0, [1.0, 1.0, 1.0]);
        let e = eigen_sym3(&Sym3::diag(1.0, 3.0, 2.0)).unwrap();
        assert_eq!(e.values.0, [3.0, 2.0, 1.0]);
        assert_eq!(e.vectors[0].map(f64::abs), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(eigen_sym3(&Sym3::ZERO).unwrap().values.0, [0.0; 3]);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = [[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(Sym3::try_from_matrix(m), Err(Error::InvalidTensor(_))));
        let nearly = [[1.0, 0.5, 0.0], [0.5 + 1e-12, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Sym3::try_from_matrix(nearly).is_ok());
    }

    #[test]
    fn indefinite_rejected() {
        assert!(eigen_sym3(&Sym3::diag(1.0, -0.5, 0.0)).is_err());
        // Round-off sized negatives are clamped.
        let e = eigen_sym3(&Sym3::diag(1.0, -1e-13, 0.0)).unwrap();
        assert_eq!(e.values.0[2], 0.0);
    }

    #[test]
    fn matches_reference_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..2000 {
            let m = random_psd(&mut rng);
            let e = eigen_sym3(&m).unwrap();
            let reference = nalgebra::Matrix3::from_fn(|i, j| m.to_matrix()[i][j]).symmetric_eigen();
            let mut want: Vec<f64> = reference.eigenvalues.iter().map(|v| v.max(0.0)).collect();
            want.sort_by(|a, b| b.total_cmp(a));
            for i in 0..3 {
                assert!(
                    (e.values.0[i] - want[i]).abs() <= 1e-8,
                    "{:?} vs {want:?}",
                    e.values
                );
            }
            assert!(residual(&m, &e) <= 1e-8 * m.frobenius_norm().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn near_degenerate_eigenvalues() {
        let m = Sym3 {
            xx: 1.0,
            xy: 1e-9,
            xz: 0.0,
            yy: 1.0 + 1e-12,
            yz: 1e-10,
            zz: 1.0,
        };
        let e = eigen_sym3(&m).unwrap();
        assert!(residual(&m, &e) <= 1e-8 * m.frobenius_norm());
    }

    proptest! {
        #[test]
        fn residual_and_orthonormality(
            d in prop::array::uniform3(0.0f64..10.0),
            off in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let m = Sym3 { xx: d[0] + 10.0, yy: d[1] + 10.0, zz: d[2] + 10.0, xy: off[0], xz: off[1], yz: off[2] };
            let e = eigen_sym3(&m).unwrap();
            prop_assert!(residual(&m, &e) <= 1e-8 * m.frobenius_norm());
            prop_assert!(e.values.0[0] >= e.values.0[1] && e.values.0[1] >= e.values.0[2]);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| e.vectors[i][k] * e.vectors[j][k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }
}
