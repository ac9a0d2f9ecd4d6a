use statrs::distribution::{ContinuousCDF, StudentsT};

/// Sample mean with a two-sided 95% Student-t confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Zero for fewer than two samples.
    pub ci95: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, ci95: f64::NAN };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { n, mean, ci95: 0.0 };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        Self { n, mean, ci95: t * (var / n as f64).sqrt() }
    }
}
