//! Exact solver for the 1D total-variation proximal problem
//!
//! `argmin_x  1/2 sum (x_i - z_i)^2 + lambda sum |x_{i+1} - x_i|`
//!
//! using the direct (non-iterative) segment-merging algorithm of Condat.
//! Runs in O(n) typical time and returns the exact minimizer up to rounding.

use crate::scalar::Real;

pub fn tv_denoise<T: Real>(input: &[T], lambda: T) -> Vec<T> {
    let n = input.len();
    let mut output = vec![T::zero(); n];
    if n == 0 {
        return output;
    }
    if !(lambda > T::zero()) {
        output.copy_from_slice(input);
        return output;
    }
    let two_lambda = lambda + lambda;
    let min_lambda = -lambda;

    let mut k = 0usize;
    let mut k0 = 0usize;
    let mut umin = lambda;
    let mut umax = min_lambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;
    let mut kplus = 0usize;
    let mut kminus = 0usize;

    loop {
        while k == n - 1 {
            if umin < T::zero() {
                // negative jump needed at the right boundary
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > T::zero() {
                // positive jump needed at the right boundary
                loop {
                    output[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = min_lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin = vmin + umin / T::from_usize_lossy(k - k0 + 1);
                while k0 <= k {
                    output[k0] = vmin;
                    k0 += 1;
                }
                return output;
            }
        }

        umin = umin + input[k + 1] - vmin;
        if umin < min_lambda {
            loop {
                output[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = input[k0];
            vmax = vmin + two_lambda;
            umin = lambda;
            umax = min_lambda;
            continue;
        }
        umax = umax + input[k + 1] - vmax;
        if umax > lambda {
            loop {
                output[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = input[k0];
            vmin = vmax - two_lambda;
            umin = lambda;
            umax = min_lambda;
            continue;
        }
        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin = vmin + (umin - lambda) / T::from_usize_lossy(kminus - k0 + 1);
            umin = lambda;
        }
        if umax <= min_lambda {
            kplus = k;
            vmax = vmax + (umax + lambda) / T::from_usize_lossy(kplus - k0 + 1);
            umax = min_lambda;
        }
    }
}

/// Largest violation of the optimality certificate of `x` for the TV prox
/// problem with data `z`: the dual variable `p_i = -sum_{j<=i} (z_j - x_j)`
/// must satisfy `|p_i| <= lambda`, `p_{n-1} = 0` and `p_i = lambda sign(x_{i+1} - x_i)`
/// wherever the jump is nonzero.
pub fn tv_certificate_violation<T: Real>(z: &[T], x: &[T], lambda: T, jump_tol: T) -> T {
    let n = z.len();
    let mut p = T::zero();
    let mut worst = T::zero();
    for i in 0..n {
        p = p - (z[i] - x[i]);
        if i + 1 == n {
            worst = worst.max(p.abs());
            break;
        }
        worst = worst.max(p.abs() - lambda);
        let jump = x[i + 1] - x[i];
        if jump.abs() > jump_tol {
            worst = worst.max((p - lambda * jump.sign0()).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn objective(z: &[f64], x: &[f64], lambda: f64) -> f64 {
        let fit: f64 = z.iter().zip(x).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
        let tv: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        fit + lambda * tv
    }

    #[test]
    fn constant_signal_is_fixed() {
        let z = [4.0, 4.0, 4.0];
        assert_eq!(tv_denoise(&z, 1.0), vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn large_lambda_gives_mean() {
        let z = [1.0f64, 5.0, -2.0, 4.0];
        let x = tv_denoise(&z, 100.0);
        for v in x {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_closed_form() {
        // jump shrinks by 2 lambda until the two values meet
        let x = tv_denoise(&[0.0f64, 3.0], 0.5);
        assert!((x[0] - 0.5).abs() < 1e-14 && (x[1] - 2.5).abs() < 1e-14);
        let x = tv_denoise(&[0.0f64, 3.0], 2.0);
        assert!((x[0] - 1.5).abs() < 1e-14 && (x[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn single_sample() {
        assert_eq!(tv_denoise(&[7.0], 3.0), vec![7.0]);
    }

    proptest! {
        #[test]
        fn condat_satisfies_certificate(
            z in proptest::collection::vec(-5.0f64..5.0, 1..40),
            lambda in 0.01f64..3.0,
        ) {
            let x = tv_denoise(&z, lambda);
            let v = tv_certificate_violation(&z, &x, lambda, 1e-10);
            prop_assert!(v < 1e-9, "certificate violation {v}");
        }

        #[test]
        fn condat_beats_perturbations(
            z in proptest::collection::vec(-5.0f64..5.0, 2..12),
            lambda in 0.01f64..3.0,
            dir in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let x = tv_denoise(&z, lambda);
            let base = objective(&z, &x, lambda);
            for scale in [1e-3, 1e-1, 1.0] {
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + scale * d).collect();
                prop_assert!(objective(&z, &y, lambda) >= base - 1e-12);
            }
        }
    }
}
