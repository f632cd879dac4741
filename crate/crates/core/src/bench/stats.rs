//! Box-plot summaries: exclusive-method quartiles and Tukey fences.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 4 samples, got {0}")]
    InsufficientData(usize),
    #[error("sample {0} is not a finite number")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Ascending.
    pub outliers: Vec<f64>,
}

impl SummaryStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    pub fn fences(&self) -> (f64, f64) {
        (self.q1 - 1.5 * self.iqr(), self.q3 + 1.5 * self.iqr())
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn summarize(data: &[f64]) -> Result<SummaryStats, StatsError> {
    if data.len() < 4 {
        return Err(StatsError::InsufficientData(data.len()));
    }
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let half = n / 2;
    let q1 = median_sorted(&v[..half]);
    let q3 = median_sorted(&v[n - half..]);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || v.iter().copied().filter(|&x| x >= lo && x <= hi);
    // the median always lies inside the fences, so `inside` is never empty
    let whisker_low = inside().next().unwrap_or(q1);
    let whisker_high = inside().next_back().unwrap_or(q3);
    Ok(SummaryStats {
        n,
        mean: v.iter().sum::<f64>() / n as f64,
        median: median_sorted(&v),
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers: v.iter().copied().filter(|&x| x < lo || x > hi).collect(),
    })
}
