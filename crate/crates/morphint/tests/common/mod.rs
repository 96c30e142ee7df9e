//! Shared statistics helpers for the sampler test suites.

/// Kolmogorov-Smirnov p-value of a sample against the uniform law on
/// `[lo, hi]`, with the Stephens small-sample correction.
pub fn ks_uniform_p(sample: &mut [f64], lo: f64, hi: f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        let hi_dev = (i as f64 + 1.0) / n - cdf;
        let lo_dev = cdf - i as f64 / n;
        d = d.max(hi_dev).max(lo_dev);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    kolmogorov_q(lambda)
}

/// Asymptotic Kolmogorov distribution tail `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    let mut q = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        q += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    q.clamp(0.0, 1.0)
}

/// Right-tail p-value of a chi-square statistic.
pub fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let chi = ChiSquared::new(dof as f64).expect("valid dof");
    1.0 - chi.cdf(statistic)
}
