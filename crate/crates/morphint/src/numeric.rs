//! Compensated accumulation helpers shared by the estimator and the cubature.

/// Neumaier-compensated running sum.
///
/// Work accumulation over `1e6` steps and morphing-factor means over `5e4`
/// trajectories must stay accurate to well below `1e-12` relative; a plain
/// left-to-right sum does not guarantee that.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice.
pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.total()
}

/// Mean of a non-empty slice.
///
/// Bit-identical inputs return the common value exactly, so that ensembles of
/// identical works yield a strictly zero spread (the constant-integrand case
/// must report sigma = 0, not a few ulps).
pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty slice");
    let first = xs[0];
    if xs.iter().all(|&x| x.to_bits() == first.to_bits()) {
        return first;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample standard deviation (n - 1 denominator); 0 for n < 2.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = CompensatedSum::new();
    for &x in xs {
        let d = x - m;
        acc.add(d * d);
    }
    (acc.total() / (xs.len() - 1) as f64).sqrt()
}
