//! Compensated summation.
//!
//! Every reduction in the crate goes through [`NeumaierSum`] in a fixed
//! order, which keeps results reproducible across thread counts.

/// Kahan–Babuška (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Extend<f64> for NeumaierSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

/// Compensated sum of an iterator, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = NeumaierSum::new();
    acc.extend(values);
    acc.value()
}

/// Compensated mean; `NaN` for an empty slice.
pub fn compensated_mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample mean and unbiased sample variance, both compensated.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = compensated_mean(values);
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, ss / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_low_order_bits() {
        let v = [1.0e16, 1.0, -1.0e16];
        assert_eq!(compensated_sum(v), 1.0);
        assert_eq!(v.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn adding_zero_is_a_no_op() {
        let mut a = NeumaierSum::new();
        a.extend([0.1, 0.2, 0.3]);
        let before = a.value();
        a.add(0.0);
        assert_eq!(a.value().to_bits(), before.to_bits());
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let (m, v) = mean_and_variance(&[2.5; 10]);
        assert_eq!(m, 2.5);
        assert_eq!(v, 0.0);
    }
}
