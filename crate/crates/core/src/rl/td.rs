//! Truncated λ-returns with γ = 1.

use crate::error::{AfaError, Result};

/// `G_t^λ = r_t + (1 − λ)·V(s_{t+1}) + λ·G_{t+1}^λ`, ending with
/// `G_{T−1}^λ = r_{T−1} + V(s_T)`.
///
/// `next_values[t]` is the bootstrap value of the state reached after step
/// `t`; pass 0 for a terminal state.
pub fn lambda_return(rewards: &[f64], next_values: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != next_values.len() {
        return Err(AfaError::config(format!(
            "{} rewards but {} bootstrap values",
            rewards.len(),
            next_values.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AfaError::config(format!("lambda {lambda} outside [0, 1]")));
    }
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        out[t] = if t + 1 == n {
            rewards[t] + next_values[t]
        } else {
            rewards[t] + (1.0 - lambda) * next_values[t] + lambda * next
        };
        next = out[t];
    }
    Ok(out)
}

/// Weight `(1 − λ)·λ^{n−1}` of the n-step return inside the λ-return.
pub fn n_step_weight(lambda: f64, n: u32) -> f64 {
    (1.0 - lambda) * lambda.powi(n as i32 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct definition: weighted mixture of n-step returns, with the
    /// remaining weight on the full return.
    fn oracle(rewards: &[f64], next_values: &[f64], lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                let horizon = n - t;
                let n_step = |k: usize| -> f64 {
                    let r: f64 = rewards[t..t + k].iter().sum();
                    r + next_values[t + k - 1]
                };
                let mut g = 0.0;
                for k in 1..horizon {
                    g += (1.0 - lambda) * lambda.powi(k as i32 - 1) * n_step(k);
                }
                g + lambda.powi(horizon as i32 - 1) * n_step(horizon)
            })
            .collect()
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [0.0, -1.0, 2.0, 0.5];
        let v = [0.3, -0.2, 1.1, 0.0];
        let g = lambda_return(&r, &v, 0.0).unwrap();
        for t in 0..4 {
            assert_eq!(g[t], r[t] + v[t]);
        }
    }

    #[test]
    fn lambda_one_is_monte_carlo() {
        let r = [0.0, -1.0, 2.0, 0.5];
        let v = [0.3, -0.2, 1.1, 0.0];
        let g = lambda_return(&r, &v, 1.0).unwrap();
        for t in 0..4 {
            let mc: f64 = r[t..].iter().sum();
            assert!((g[t] - mc).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(lambda_return(&[1.0], &[], 0.5).is_err());
        assert!(lambda_return(&[1.0], &[0.0], 1.5).is_err());
    }

    #[test]
    fn four_step_weight_peaks_at_three_quarters() {
        assert!((n_step_weight(0.75, 4) - 27.0 / 256.0).abs() < 1e-15);
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| n_step_weight(*a, 4).total_cmp(&n_step_weight(*b, 4)))
            .unwrap();
        assert_eq!(best, 0.75);
    }

    proptest! {
        #[test]
        fn recursion_matches_definition(
            rv in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..8),
            lambda in 0.0f64..=1.0,
        ) {
            let r: Vec<f64> = rv.iter().map(|p| p.0).collect();
            let v: Vec<f64> = rv.iter().map(|p| p.1).collect();
            let got = lambda_return(&r, &v, lambda).unwrap();
            for (a, b) in got.iter().zip(oracle(&r, &v, lambda)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
