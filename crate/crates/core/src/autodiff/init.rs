use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::seed;

/// Glorot/Xavier uniform initialization in `±sqrt(6/(rows+cols))`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!("xavier_init needs positive dimensions, got {rows}x{cols}")));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = seed::rng(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_reproducible() {
        let m = xavier_init(30, 70, 9).unwrap();
        let bound = (6.0f64 / 100.0).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(m, xavier_init(30, 70, 9).unwrap());
        assert_ne!(m, xavier_init(30, 70, 10).unwrap());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(xavier_init(0, 3, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_mean_near_zero() {
        // 10^5 draws; the standard error of the mean is bound/sqrt(3·10^5) ≈ 4e-4.
        let m = xavier_init(250, 400, 123).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }
}
