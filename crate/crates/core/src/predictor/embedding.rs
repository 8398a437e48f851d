use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const MAX_PERIOD: f64 = 10_000.0;

fn frequencies(dim: usize) -> impl Iterator<Item = f64> {
    let half = dim / 2;
    (0..half).map(move |k| (-(MAX_PERIOD.ln()) * k as f64 / half as f64).exp())
}

/// Sinusoidal embedding: `[sin(t·ω_k)..., cos(t·ω_k)...]` with
/// `ω_k = 10000^(-k / (dim/2))`.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Array1<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("embedding dimension must be even and positive, got {dim}")));
    }
    Ok(sinusoid(t as f64, dim))
}

fn sinusoid(position: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for (k, w) in frequencies(dim).enumerate() {
        out[k] = (position * w).sin();
        out[half + k] = (position * w).cos();
    }
    out
}

/// Position table for frames `0..n`, same layout as [`timestep_embedding`].
pub fn position_table(n: usize, dim: usize) -> Array2<f64> {
    let mut table = Array2::zeros((n, dim));
    for i in 0..n {
        table.row_mut(i).assign(&sinusoid(i as f64, dim));
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_distinct() {
        let dim = 64;
        for t in [1, 2, 50, 199, 200, 1000] {
            let e = timestep_embedding(t, dim).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        for t1 in 1..=200 {
            let a = timestep_embedding(t1, 16).unwrap();
            let b = timestep_embedding(t1 + 1, 16).unwrap();
            assert!(a.iter().zip(b.iter()).any(|(x, y)| x != y));
        }
    }

    #[test]
    fn nearby_steps_are_more_similar() {
        let dim = 128;
        let e10 = timestep_embedding(10, dim).unwrap();
        let e11 = timestep_embedding(11, dim).unwrap();
        let e190 = timestep_embedding(190, dim).unwrap();
        // sin·sin + cos·cos collapses to cos(ω_k (t1 - t2)) per frequency
        let half = dim / 2;
        let direct = |dt: f64| {
            (0..half)
                .map(|k| (10_000f64.powf(-(k as f64) / half as f64) * dt).cos())
                .sum::<f64>()
        };
        assert!((e10.dot(&e11) - direct(1.0)).abs() < 1e-9);
        assert!((e10.dot(&e190) - direct(180.0)).abs() < 1e-9);
        assert!(e10.dot(&e11) > e10.dot(&e190));
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(timestep_embedding(3, 7), Err(Error::Config(_))));
        assert!(timestep_embedding(3, 0).is_err());
    }

    #[test]
    fn position_rows_match_embedding() {
        let table = position_table(5, 8);
        assert_eq!(table.row(3).to_owned(), timestep_embedding(3, 8).unwrap());
        assert_eq!(table.row(0)[0], 0.0);
        assert_eq!(table.row(0)[4], 1.0);
    }
}
