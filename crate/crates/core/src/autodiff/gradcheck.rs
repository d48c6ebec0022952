//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker is deliberately independent of the tape: it only sees a
//! black-box scalar function of a flat parameter vector and the analytic
//! gradient to validate. Each sampled coordinate is perturbed by `+eps` and
//! `-eps`, the central difference `(f(x+eps) - f(x-eps)) / (2 eps)` is
//! compared against the analytic entry, and the relative error is
//! `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("eps {0} outside the supported range [1e-7, 1e-3]")]
    BadEps(f64),
    #[error("analytic gradient has {grad} entries but theta has {theta}")]
    LengthMismatch { grad: usize, theta: usize },
    #[error("objective returned a non-finite value at coordinate {0}")]
    NonFiniteObjective(usize),
    #[error("objective failed: {0}")]
    Objective(String),
}

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Number of coordinates actually perturbed.
    pub coords_checked: usize,
    /// Largest relative error seen across the checked coordinates.
    pub max_rel_err: f64,
    /// Coordinate index where `max_rel_err` occurred.
    pub worst_coord: usize,
    /// Analytic and numeric gradient at the worst coordinate, for debugging.
    pub worst_pair: (f64, f64),
    /// Whether `max_rel_err <= tol`.
    pub pass: bool,
}

/// Compare `grad_ad` against central differences of `f` around `theta`.
///
/// When `theta` has more than `max_coords` entries, a reproducible subset of
/// coordinates is drawn with a counter-based RNG from `seed`; otherwise every
/// coordinate is checked. `f` may fail (for example on a shape error); the
/// failure is surfaced rather than swallowed.
pub fn finite_diff_check<F, E>(
    mut f: F,
    theta: &[f64],
    grad_ad: &[f64],
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<FdReport, GradCheckError>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(GradCheckError::BadEps(eps));
    }
    if grad_ad.len() != theta.len() {
        return Err(GradCheckError::LengthMismatch {
            grad: grad_ad.len(),
            theta: theta.len(),
        });
    }

    let mut coords: Vec<usize> = if theta.len() <= max_coords {
        (0..theta.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, theta.len(), max_coords).into_vec()
    };
    coords.sort_unstable();

    let mut point = theta.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    let mut worst_pair = (0.0, 0.0);
    for &i in &coords {
        let saved = point[i];
        point[i] = saved + eps;
        let up = f(&point).map_err(|e| GradCheckError::Objective(e.to_string()))?;
        point[i] = saved - eps;
        let down = f(&point).map_err(|e| GradCheckError::Objective(e.to_string()))?;
        point[i] = saved;
        if !up.is_finite() || !down.is_finite() {
            return Err(GradCheckError::NonFiniteObjective(i));
        }
        let g_fd = (up - down) / (2.0 * eps);
        let g_ad = grad_ad[i];
        let rel = (g_ad - g_fd).abs() / (g_ad.abs() + g_fd.abs()).max(1e-8);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
            worst_pair = (g_ad, g_fd);
        }
    }

    Ok(FdReport {
        coords_checked: coords.len(),
        max_rel_err,
        worst_coord,
        worst_pair,
        pass: max_rel_err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = sum_i x_i^2 has gradient 2x; the checker should accept it.
    #[test]
    fn accepts_correct_quadratic_gradient() {
        let theta = [0.5, -1.25, 2.0];
        let grad: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        let f = |p: &[f64]| -> Result<f64, std::convert::Infallible> {
            Ok(p.iter().map(|x| x * x).sum())
        };
        let report = finite_diff_check(f, &theta, &grad, 1e-5, 1e-4, 200, 7).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 3);
    }

    /// A deliberately wrong entry must be flagged with its coordinate.
    #[test]
    fn rejects_corrupted_gradient_and_names_the_coordinate() {
        let theta = [0.5, -1.25, 2.0];
        let mut grad: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        grad[1] = 0.0;
        let f = |p: &[f64]| -> Result<f64, std::convert::Infallible> {
            Ok(p.iter().map(|x| x * x).sum())
        };
        let report = finite_diff_check(f, &theta, &grad, 1e-5, 1e-4, 200, 7).unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst_coord, 1);
    }

    #[test]
    fn subsampling_is_reproducible_for_a_fixed_seed() {
        let theta: Vec<f64> = (0..500).map(|i| (i as f64) * 0.01 - 2.5).collect();
        let grad: Vec<f64> = theta.iter().map(|x| x.cos()).collect();
        let f = |p: &[f64]| -> Result<f64, std::convert::Infallible> {
            Ok(p.iter().map(|x| x.sin()).sum())
        };
        let a = finite_diff_check(&f, &theta, &grad, 1e-5, 1e-4, 50, 123).unwrap();
        let b = finite_diff_check(&f, &theta, &grad, 1e-5, 1e-4, 50, 123).unwrap();
        assert_eq!(a.coords_checked, 50);
        assert_eq!(a.max_rel_err, b.max_rel_err);
        assert_eq!(a.worst_coord, b.worst_coord);
        assert!(a.pass);
    }

    #[test]
    fn rejects_eps_outside_supported_range() {
        let f = |_: &[f64]| -> Result<f64, std::convert::Infallible> { Ok(0.0) };
        assert!(matches!(
            finite_diff_check(f, &[1.0], &[0.0], 1e-1, 1e-4, 10, 0),
            Err(GradCheckError::BadEps(_))
        ));
    }
}
