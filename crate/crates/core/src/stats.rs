/// Sample mean and spread of Monte Carlo outcomes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample standard deviation; zero for fewer than two samples.
    pub std: f64,
}

impl Summary {
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std / (self.count as f64).sqrt()
        }
    }
}

/// Welford's single pass over `xs` in order. A constant input gives its
/// value back exactly, with zero spread.
pub fn summarize(xs: &[f64]) -> Summary {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let std = if xs.len() > 1 {
        (m2 / (xs.len() - 1) as f64).max(0.0).sqrt()
    } else {
        0.0
    };
    Summary {
        count: xs.len(),
        mean,
        std,
    }
}
