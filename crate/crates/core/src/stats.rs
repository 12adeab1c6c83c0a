//! Student-t tail probabilities and Welch's unequal-variance t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// P(T > t) for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, df).map_or(f64::NAN, |d| d.sf(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// One-sided p-value for mean(x) > mean(y).
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}

/// One-sided Welch test of mean(x) > mean(y).
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Input(format!(
            "t-test needs >= 2 samples per set, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (sx, sy) = (summarize(x), summarize(y));
    let vx = sx.std * sx.std / sx.n as f64;
    let vy = sy.std * sy.std / sy.n as f64;
    if vx + vy == 0.0 {
        if sx.mean == sy.mean {
            return Ok(TTestResult {
                t: 0.0,
                df: (sx.n + sy.n - 2) as f64,
                p: 0.5,
            });
        }
        return Err(Error::Input("t-test: both sample sets have zero variance".into()));
    }
    let t = (sx.mean - sy.mean) / (vx + vy).sqrt();
    let df = (vx + vy).powi(2)
        / (vx * vx / (sx.n - 1) as f64 + vy * vy / (sy.n - 1) as f64);
    Ok(TTestResult {
        t,
        df,
        p: student_t_sf(t, df),
    })
}
