//! Sample-quality distances between point sets.
//!
//! Both metrics take `n × d` buffers with matching `d`; the two sets may have
//! different sizes.

use rand::Rng;

use crate::rng::{seeded, standard_normal, stream};
use crate::{Error, Result, TensorBuffer};

fn check_dims(a: &TensorBuffer, b: &TensorBuffer) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Shape("point sets must be n × d matrices".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "point sets have dims {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidArgument("point sets must be non-empty".into()));
    }
    Ok(())
}

/// Wasserstein-1 distance between two empirical distributions on the line,
/// `∫ |F_a(x) − F_b(x)| dx`, for sorted inputs.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = f64::min(a[0], b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let gap = (i as f64 / na - j as f64 / nb).abs();
        total += gap * (next - prev);
        prev = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    total
}

fn project_sorted(points: &TensorBuffer, theta: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = points
        .iter_rows()
        .map(|r| r.iter().zip(theta).map(|(x, w)| x * w).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Unit directions drawn from the projection stream of `seed`.
///
/// In two dimensions the angles are stratified: `count` equally spaced angles
/// share one uniform random rotation, so each direction is still uniform on
/// the circle while the average over directions has far less variance. Other
/// dimensions use independent normalized Gaussian draws.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed, stream::PROJECTIONS);
    if dim == 2 {
        let offset: f64 = rng.random();
        return (0..count)
            .map(|k| {
                let angle = std::f64::consts::TAU * (k as f64 + offset) / count as f64;
                vec![angle.cos(), angle.sin()]
            })
            .collect();
    }
    (0..count)
        .map(|_| loop {
            let g = standard_normal(&mut rng, dim);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break g.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Mean over `n_projections` random unit directions of the 1-D Wasserstein-1
/// distance between the projected sets. Deterministic for a given seed.
pub fn sliced_wasserstein(
    a: &TensorBuffer,
    b: &TensorBuffer,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    check_dims(a, b)?;
    if n_projections == 0 {
        return Err(Error::InvalidArgument("at least one projection is required".into()));
    }
    let dirs = random_directions(a.cols(), n_projections, seed);
    let total: f64 = dirs
        .iter()
        .map(|theta| wasserstein_1d(&project_sorted(a, theta), &project_sorted(b, theta)))
        .sum();
    Ok(total / n_projections as f64)
}

fn mean_pairwise(a: &TensorBuffer, b: &TensorBuffer) -> f64 {
    let mut total = 0.0;
    for x in a.iter_rows() {
        for y in b.iter_rows() {
            total += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
    }
    total / (a.rows() * b.rows()) as f64
}

/// `2E‖A − B‖ − E‖A − A′‖ − E‖B − B′‖` with every expectation taken over all
/// ordered pairs (self-pairs included), so identical sets score exactly zero.
pub fn energy_distance(a: &TensorBuffer, b: &TensorBuffer) -> Result<f64> {
    check_dims(a, b)?;
    let cross = mean_pairwise(a, b);
    let within_a = mean_pairwise(a, a);
    let within_b = mean_pairwise(b, b);
    Ok(2.0 * cross - within_a - within_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(n: usize, seed: u64, shift: [f64; 2]) -> TensorBuffer {
        let mut rng = seeded(seed, stream::NOISE);
        let mut data = standard_normal(&mut rng, 2 * n);
        for row in data.chunks_exact_mut(2) {
            row[0] += shift[0];
            row[1] += shift[1];
        }
        TensorBuffer::from_rows(2, data)
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = gaussian(200, 1, [0.0, 0.0]);
        assert_eq!(sliced_wasserstein(&a, &a, 16, 0).unwrap(), 0.0);
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_point_masses() {
        let a = TensorBuffer::from_rows(1, vec![0.0; 5]);
        let b = TensorBuffer::from_rows(1, vec![2.5; 3]);
        for p in [1, 7, 32] {
            let d = sliced_wasserstein(&a, &b, p, 9).unwrap();
            assert!((d - 2.5).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn wasserstein_1d_unequal_sizes() {
        // Uniform on {0, 1} against a mass at 0: half the mass moves by 1.
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.0]) - 0.5).abs() < 1e-15);
        // Order statistics for equal sizes.
        let d = wasserstein_1d(&[0.0, 1.0, 5.0], &[1.0, 2.0, 3.0]);
        assert!((d - (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_gaussian_matches_projection_average() {
        // E|⟨θ, (1, 0)⟩| over uniform θ on the circle is 2/π.
        let a = gaussian(10_000, 2, [0.0, 0.0]);
        let b = gaussian(10_000, 3, [1.0, 0.0]);
        let d = sliced_wasserstein(&a, &b, 64, 4).unwrap();
        let expected = 2.0 / std::f64::consts::PI;
        assert!((d - expected).abs() / expected < 0.05, "{d}");
    }

    #[test]
    fn symmetric_and_seeded() {
        let a = gaussian(300, 5, [0.0, 0.0]);
        let b = gaussian(200, 6, [0.5, -0.2]);
        let ab = sliced_wasserstein(&a, &b, 20, 1).unwrap();
        let ba = sliced_wasserstein(&b, &a, 20, 1).unwrap();
        assert!((ab - ba).abs() < 1e-14);
        assert_eq!(ab, sliced_wasserstein(&a, &b, 20, 1).unwrap());
        let e1 = energy_distance(&a, &b).unwrap();
        let e2 = energy_distance(&b, &a).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
        assert!(e1 > 0.0);
    }

    #[test]
    fn distant_clusters_approach_twice_separation() {
        let a = gaussian(100, 7, [0.0, 0.0]);
        let b = gaussian(100, 8, [100.0, 0.0]);
        let e = energy_distance(&a, &b).unwrap();
        assert!((e - 200.0).abs() / 200.0 < 0.03, "{e}");
    }

    #[test]
    fn energy_is_rotation_invariant() {
        let a = gaussian(80, 9, [0.0, 0.0]);
        let b = gaussian(60, 10, [1.0, 2.0]);
        let (s, c) = 0.7f64.sin_cos();
        let rot = |t: &TensorBuffer| {
            let data = t
                .iter_rows()
                .flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]])
                .collect();
            TensorBuffer::from_rows(2, data)
        };
        let e = energy_distance(&a, &b).unwrap();
        let er = energy_distance(&rot(&a), &rot(&b)).unwrap();
        assert!((e - er).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let a = TensorBuffer::from_rows(2, vec![0.0; 4]);
        let b = TensorBuffer::from_rows(3, vec![0.0; 6]);
        assert!(sliced_wasserstein(&a, &b, 4, 0).is_err());
        assert!(energy_distance(&a, &b).is_err());
    }
}
