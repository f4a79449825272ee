//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;

/// Compare analytic gradients against central finite differences at the
/// listed `(param, index)` coordinates. Returns the max relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`, so coordinates where both
/// sides vanish report zero.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    coords: &[(usize, usize)],
    epsilon: f64,
) -> f64
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    assert!(epsilon > 0.0);
    let mut work: Vec<Vec<f64>> = params.to_vec();
    let mut max_err = 0.0f64;
    for &(p, i) in coords {
        let base = work[p][i];
        work[p][i] = base + epsilon;
        let up = f(&work);
        work[p][i] = base - epsilon;
        let down = f(&work);
        work[p][i] = base;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[p][i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    max_err
}

/// Every coordinate of every parameter, for small problems.
pub fn all_coords(params: &[Vec<f64>]) -> Vec<(usize, usize)> {
    params
        .iter()
        .enumerate()
        .flat_map(|(p, v)| (0..v.len()).map(move |i| (p, i)))
        .collect()
}

/// Deterministically sample up to `max_per_param` coordinates from each
/// parameter tensor.
pub fn sample_coords(params: &[Vec<f64>], max_per_param: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (p, v) in params.iter().enumerate() {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.shuffle(&mut rng);
        coords.extend(idx.into_iter().take(max_per_param).map(|i| (p, i)));
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_near_exact() {
        let params = vec![vec![1.0, -2.0, 3.0]];
        let analytic = vec![params[0].iter().map(|x| 2.0 * x).collect::<Vec<_>>()];
        let err = finite_diff_check(
            |p| p[0].iter().map(|x| x * x).sum(),
            &params,
            &analytic,
            &all_coords(&params),
            1e-4,
        );
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn constant_function_reports_zero() {
        let params = vec![vec![0.5, 0.7]];
        let analytic = vec![vec![0.0, 0.0]];
        let err = finite_diff_check(|_| 42.0, &params, &analytic, &all_coords(&params), 1e-4);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn scaled_sigmoid_composition_converges_quadratically() {
        use crate::synth::scaled_sigmoid;
        let params: Vec<Vec<f64>> = vec![vec![0.3, -1.2, 2.0]];
        // f = sum(scaled_sigmoid(x)^2); analytic via a tight manual derivative
        let f = |p: &[Vec<f64>]| -> f64 { p[0].iter().map(|&x| scaled_sigmoid(x).powi(2)).sum() };
        let analytic: Vec<f64> = params[0]
            .iter()
            .map(|&x| {
                let s = 1.0 / (1.0 + (-x).exp());
                let y = scaled_sigmoid(x);
                let dy = 2.0 * std::f64::consts::LN_10 * s.powf(std::f64::consts::LN_10) * (1.0 - s);
                2.0 * y * dy
            })
            .collect();
        let analytic = vec![analytic];
        let coords = all_coords(&params);
        let err1 = finite_diff_check(f, &params, &analytic, &coords, 1e-4);
        assert!(err1 < 1e-5, "err {err1}");
        // O(eps^2) convergence: a 10x larger step gives ~100x the error,
        // so the small-step error must be well below the large-step one.
        let err2 = finite_diff_check(f, &params, &analytic, &coords, 1e-2);
        assert!(err1 < err2.max(1e-9));
    }

    #[test]
    fn detects_wrong_gradient() {
        let params = vec![vec![1.0]];
        let analytic = vec![vec![5.0]]; // truth is 2.0
        let err = finite_diff_check(
            |p| p[0][0] * p[0][0],
            &params,
            &analytic,
            &[(0, 0)],
            1e-4,
        );
        assert!(err > 0.5);
    }
}
