//! Euclidean projections onto the feasible sets of the outer problem.

use crate::{Error, Result};

/// Projection onto the nonnegative orthant.
pub fn project_nonneg(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&v| v.max(0.0)).collect()
}

fn clipped_sum(s: &[f64], tau: f64) -> f64 {
    s.iter().map(|&v| (v - tau).clamp(0.0, 1.0)).sum()
}

/// Projection onto `{0 <= s <= 1, sum(s) <= budget}`.
///
/// Clamps to the box first; if the sum still exceeds the budget, finds the
/// shift `tau >= 0` with `sum(clip(s - tau, 0, 1)) = budget` by bisection and
/// then solves the final piece exactly on the free coordinates.
pub fn project_capped_box_simplex(s: &[f64], budget: f64) -> Result<Vec<f64>> {
    if !(budget > 0.0) || budget.is_nan() {
        return Err(Error::param(format!("budget must be positive, got {budget}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("keep probabilities".into()));
    }
    let boxed: Vec<f64> = s.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    if boxed.iter().sum::<f64>() <= budget {
        return Ok(boxed);
    }

    // sum is nonincreasing in tau: > budget at tau = 0, 0 at tau = max(s)
    let (mut lo, mut hi) = (0.0, s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let sum = clipped_sum(s, mid);
        if (sum - budget).abs() <= 1e-12 {
            lo = mid;
            hi = mid;
            break;
        }
        if sum > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let mut tau = 0.5 * (lo + hi);

    // exact tau on the active piece: free coordinates move, saturated ones stay
    let (mut free_sum, mut free, mut upper) = (0.0, 0usize, 0usize);
    for &v in s {
        let shifted = v - tau;
        if shifted >= 1.0 {
            upper += 1;
        } else if shifted > 0.0 {
            free += 1;
            free_sum += v;
        }
    }
    if free > 0 {
        let exact = (free_sum + upper as f64 - budget) / free as f64;
        let consistent = s.iter().all(|&v| {
            let a = v - tau;
            let b = v - exact;
            (a >= 1.0) == (b >= 1.0) && (a > 0.0) == (b > 0.0)
        });
        if consistent && exact >= 0.0 {
            tau = exact;
        }
    }
    Ok(s.iter().map(|&v| (v - tau).clamp(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonneg_examples() {
        assert_eq!(project_nonneg(&[-1.0, 0.5]), vec![0.0, 0.5]);
        assert_eq!(project_nonneg(&[0.0, 3.0]), vec![0.0, 3.0]);
    }

    #[test]
    fn capped_box_by_hand() {
        let p = project_capped_box_simplex(&[0.9, 0.8, 0.7], 2.0).unwrap();
        // tau = (2.4 - 2) / 3
        let tau = 0.4 / 3.0;
        for (v, s) in p.iter().zip([0.9, 0.8, 0.7]) {
            assert!((v - (s - tau)).abs() < 1e-12, "{p:?}");
        }
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn capped_box_fixed_point_and_clamp() {
        let s = [0.2, 0.9, 0.0];
        assert_eq!(project_capped_box_simplex(&s, 2.0).unwrap(), s.to_vec());
        let p = project_capped_box_simplex(&[2.0, 2.0], 1.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        // budget >= n reduces to box clamping
        assert_eq!(project_capped_box_simplex(&[1.5, -0.5], 5.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn capped_box_rejects_bad_budget() {
        assert!(project_capped_box_simplex(&[0.5], 0.0).is_err());
        assert!(project_capped_box_simplex(&[0.5], f64::NAN).is_err());
    }

    proptest::proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(
            s in proptest::collection::vec(-2.0f64..3.0, 1..40),
            budget in 0.05f64..10.0,
        ) {
            let p = project_capped_box_simplex(&s, budget).unwrap();
            proptest::prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            proptest::prop_assert!(p.iter().sum::<f64>() <= budget + 1e-9);
            let again = project_capped_box_simplex(&p, budget).unwrap();
            for (a, b) in p.iter().zip(&again) {
                proptest::prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
