use serde::{Deserialize, Serialize};

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; absent for fewer than two values.
    pub sem: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Some(Self { n, mean, sem })
    }

    pub fn sem_or_zero(&self) -> f64 {
        self.sem.unwrap_or(0.0)
    }
}

/// `√(s₁² + s₂²)`.
pub fn combined_sem(a: &Summary, b: &Summary) -> f64 {
    a.sem_or_zero().hypot(b.sem_or_zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_values() {
        assert!(Summary::of(&[]).is_none());
        let one = Summary::of(&[2.0]).unwrap();
        assert_eq!((one.mean, one.sem), (2.0, None));
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        // sd = √(5/3), sem = sd / 2
        assert!((s.sem.unwrap() - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }
}
