//! Sobol low-discrepancy sequences in up to six dimensions.
//!
//! Points are generated in natural binary order (not Gray-code order): the
//! n-th point XORs the direction numbers selected by the set bits of n. The
//! all-zeros point at n = 0 is skipped, so the first emitted 1-D point is 0.5.

use crate::error::{Error, Result};

const BITS: usize = 32;

/// Primitive-polynomial degree, coefficient bits, and initial direction
/// numbers for dimensions 2..=6. Dimension 1 is the van der Corput sequence.
const TABLE: [(u32, u32, &[u32]); 5] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
];

fn direction_numbers(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = 1 << (31 - j);
        }
        return v;
    }
    let (s, a, m) = TABLE[dim_index - 1];
    let s = s as usize;
    for j in 0..s {
        v[j] = m[j] << (31 - j);
    }
    for j in s..BITS {
        let mut vj = v[j - s] ^ (v[j - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                vj ^= v[j - k];
            }
        }
        v[j] = vj;
    }
    v
}

/// Deterministic Sobol point generator for a fixed dimension.
#[derive(Debug, Clone)]
pub struct SobolSampler {
    v: Vec<[u32; BITS]>,
    index: u64,
}

impl SobolSampler {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > TABLE.len() + 1 {
            return Err(Error::SobolDimension(dim));
        }
        Ok(Self {
            v: (0..dim).map(direction_numbers).collect(),
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Next point of the sequence, each coordinate in (0, 1).
    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        let n = self.index;
        self.v
            .iter()
            .map(|v| {
                let mut x = 0u32;
                for (j, &vj) in v.iter().enumerate() {
                    if (n >> j) & 1 == 1 {
                        x ^= vj;
                    }
                }
                x as f64 / (1u64 << 32) as f64
            })
            .collect()
    }

    /// Discards the next `n` points.
    pub fn skip(&mut self, n: u64) {
        self.index += n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsupported_dimensions() {
        assert!(SobolSampler::new(0).is_err());
        assert!(SobolSampler::new(7).is_err());
        assert!(SobolSampler::new(6).is_ok());
    }

    #[test]
    fn one_dimensional_prefix_is_van_der_corput() {
        let mut s = SobolSampler::new(1).unwrap();
        let got: Vec<f64> = (0..7).map(|_| s.next_point()[0]).collect();
        let expected = [0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875];
        for (g, e) in got.iter().zip(expected.iter()) {
            assert_eq!(g, e);
        }
    }

    #[test]
    fn two_dimensional_prefix_matches_reference() {
        let mut s = SobolSampler::new(2).unwrap();
        let expected = [
            [0.5, 0.5],
            [0.25, 0.75],
            [0.75, 0.25],
            [0.125, 0.625],
            [0.625, 0.125],
            [0.375, 0.375],
            [0.875, 0.875],
        ];
        for e in expected {
            let p = s.next_point();
            assert_eq!(p, e);
        }
    }

    #[test]
    fn dyadic_stratification_in_each_coordinate() {
        // any aligned block of 2^k consecutive points puts exactly one
        // coordinate value in each dyadic interval of width 2^-k; use the
        // block [2^k, 2^{k+1}) since index 0 is skipped
        let k = 7usize;
        let n = 1usize << k;
        let mut s = SobolSampler::new(3).unwrap();
        s.skip(n as u64 - 1);
        let mut counts = vec![[0usize; 3]; n];
        for _ in 0..n {
            let p = s.next_point();
            for (d, &x) in p.iter().enumerate() {
                counts[(x * n as f64) as usize][d] += 1;
            }
        }
        for c in counts {
            assert_eq!(c, [1, 1, 1]);
        }
    }

    #[test]
    fn skip_matches_sequential_generation() {
        let mut a = SobolSampler::new(3).unwrap();
        let mut b = SobolSampler::new(3).unwrap();
        for _ in 0..100 {
            a.next_point();
        }
        b.skip(100);
        assert_eq!(a.next_point(), b.next_point());
    }

    #[test]
    fn coordinates_stay_in_open_unit_interval() {
        let mut s = SobolSampler::new(6).unwrap();
        for _ in 0..4096 {
            for x in s.next_point() {
                assert!(x > 0.0 && x < 1.0);
            }
        }
    }
}
