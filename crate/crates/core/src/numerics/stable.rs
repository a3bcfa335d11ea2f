//! Overflow-safe exponential reductions and compensated summation.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// log(sum_i exp(x_i)) with the max subtracted before exponentiation, so the
/// largest term is exp(0) and no intermediate overflows for finite input.
pub fn log_sum_exp(xs: ArrayView1<'_, f64>) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty slice"));
    }
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("log_sum_exp input {x}")));
        }
        m = m.max(x);
    }
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add((x - m).exp());
    }
    Ok(m + acc.value().ln())
}

/// softmax(x) computed as exp(x_i - max) / sum exp(x_j - max).
///
/// Entries land in [0, 1] and sum to 1 up to rounding; uniform input gives
/// exactly uniform output.
pub fn softmax_stable(xs: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if xs.is_empty() {
        return Err(Error::invalid("softmax of an empty slice"));
    }
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("softmax input {x}")));
        }
        m = m.max(x);
    }
    let mut out = Array1::zeros(xs.len());
    let mut total = KahanSum::new();
    for (o, &x) in out.iter_mut().zip(xs) {
        let e = (x - m).exp();
        *o = e;
        total.add(e);
    }
    let z = total.value();
    out.mapv_inplace(|e| e / z);
    Ok(out)
}

/// Kahan compensated accumulator. Used for every MSE average in the crate so
/// results do not depend on summation-error drift.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        KahanSum::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated mean in slice order.
pub fn kahan_mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("mean of an empty slice"));
    }
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    Ok(acc.value() / xs.len() as f64)
}

/// Compensated mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> Result<(f64, f64)> {
    let mean = kahan_mean(xs)?;
    if xs.len() < 2 {
        return Ok((mean, f64::NAN));
    }
    let mut acc = KahanSum::new();
    for &x in xs {
        let d = x - mean;
        acc.add(d * d);
    }
    let var = acc.value() / (xs.len() - 1) as f64;
    Ok((mean, (var / xs.len() as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Direct-summation oracle: valid when inputs are small enough that no
    /// exp overflows.
    fn lse_direct(xs: &[f64]) -> f64 {
        xs.iter().map(|x| x.exp()).sum::<f64>().ln()
    }

    #[test]
    fn log_sum_exp_matches_direct_summation() {
        let xs = array![1.0, 2.0, 3.0];
        let expect = lse_direct(xs.as_slice().unwrap());
        assert_abs_diff_eq!(expect, 3.4076059644443806, epsilon = 1e-14);
        assert_abs_diff_eq!(log_sum_exp(xs.view()).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_of_equal_pair_is_value_plus_ln2() {
        for a in [-700.0, -1.0, 0.0, 3.5, 500.0] {
            let xs = array![a, a];
            assert_abs_diff_eq!(
                log_sum_exp(xs.view()).unwrap(),
                a + std::f64::consts::LN_2,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn softmax_handles_large_offsets() {
        let g = softmax_stable(array![1000.0, 1001.0].view()).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(g[0], 1.0 / (1.0 + e), epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], e / (1.0 + e), epsilon = 1e-14);
    }

    #[test]
    fn softmax_single_element_is_one() {
        let g = softmax_stable(array![-3.2e7].view()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn softmax_rejects_empty_and_nan() {
        assert!(softmax_stable(Array1::zeros(0).view()).is_err());
        assert!(softmax_stable(array![1.0, f64::NAN].view()).is_err());
        assert!(log_sum_exp(Array1::zeros(0).view()).is_err());
        assert!(log_sum_exp(array![f64::INFINITY].view()).is_err());
    }

    #[test]
    fn kahan_mean_recovers_small_terms_lost_by_naive_sum() {
        // 1 followed by 1e8 copies of 1e-16: naive summation loses them all.
        let mut acc = KahanSum::new();
        acc.add(1.0);
        for _ in 0..100_000_000usize {
            acc.add(1e-16);
        }
        assert_abs_diff_eq!(acc.value(), 1.0 + 1e-8, epsilon = 1e-12);
    }

    #[test]
    fn stderr_matches_two_point_formula() {
        let (m, se) = mean_and_stderr(&[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(se, 1.0, epsilon = 1e-15);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_probability_vector(xs in proptest::collection::vec(-600.0..600.0f64, 1..40)) {
                let g = softmax_stable(Array1::from(xs).view()).unwrap();
                let sum: f64 = g.sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(g.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }

            #[test]
            fn softmax_is_shift_invariant(
                xs in proptest::collection::vec(-50.0..50.0f64, 1..20),
                c in -200.0..200.0f64,
            ) {
                let a = softmax_stable(Array1::from(xs.clone()).view()).unwrap();
                let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                let b = softmax_stable(Array1::from(shifted).view()).unwrap();
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn log_sum_exp_exceeds_max(xs in proptest::collection::vec(-600.0..600.0f64, 1..40)) {
                let arr = Array1::from(xs);
                let m = arr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = log_sum_exp(arr.view()).unwrap();
                prop_assert!(v >= m);
                prop_assert!(v <= m + (arr.len() as f64).ln() + 1e-12);
            }
        }
    }
}
