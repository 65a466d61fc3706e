//! Price of Fairness and Gini coefficient.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpiError {
    #[error("utilitarian hosting capacity must be positive, got {0}")]
    ZeroUtilitarianHC(f64),
    #[error("fair hosting capacity must be non-negative, got {0}")]
    NegativeFairHC(f64),
    #[error("allocation is empty")]
    EmptyAllocation,
    #[error("allocation contains a negative or non-finite entry")]
    InvalidAllocation,
}

/// Relative loss of total hosting capacity against the utilitarian optimum.
///
/// Not clamped: a fair solution that beats the utilitarian reference (solver
/// noise) gives a small negative value.
pub fn price_of_fairness(hc_uti: f64, hc_fair: f64) -> Result<f64, KpiError> {
    if !(hc_uti > 0.0) {
        return Err(KpiError::ZeroUtilitarianHC(hc_uti));
    }
    if !(hc_fair >= 0.0) {
        return Err(KpiError::NegativeFairHC(hc_fair));
    }
    let pof = (hc_uti - hc_fair) / hc_uti;
    if pof < 0.0 {
        log::warn!("negative price of fairness {pof:.3e}: fair HC exceeds the utilitarian reference");
    }
    Ok(pof)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gini {
    pub value: f64,
    /// Set when every entry is zero and the coefficient is 0 by convention.
    pub all_zero: bool,
}

/// Gini coefficient over all ordered pairs, `Σ|p_i − p_j| / (2·mean·n²)`.
pub fn gini(allocation: &[f64]) -> Result<Gini, KpiError> {
    if allocation.is_empty() {
        return Err(KpiError::EmptyAllocation);
    }
    if allocation.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(KpiError::InvalidAllocation);
    }
    let n = allocation.len() as f64;
    let mean = allocation.iter().sum::<f64>() / n;
    if mean == 0.0 {
        log::warn!("Gini of an all-zero allocation reported as 0");
        return Ok(Gini { value: 0.0, all_zero: true });
    }
    let mut sorted = allocation.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(Gini { value: 0.0, all_zero: false });
    }
    // sorted form of the pair sum: Σ_{i<j}|Δ| = Σ_k (2k − n + 1)·p_(k)
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, p)| (2.0 * k as f64 - n + 1.0) * p)
        .sum::<f64>()
        * 2.0;
    Ok(Gini {
        value: (pair_sum / (2.0 * mean * n * n)).max(0.0),
        all_zero: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiReport {
    pub pof: f64,
    pub gini: f64,
    /// kW
    pub hc_uti_ref: f64,
    /// kW
    pub hc_fair: f64,
    pub n: usize,
    /// kW
    pub mean_allocation: f64,
}

impl KpiReport {
    pub fn new(hc_uti_ref: f64, allocation: &[f64]) -> Result<Self, KpiError> {
        let hc_fair: f64 = allocation.iter().sum();
        let g = gini(allocation)?;
        Ok(Self {
            pof: price_of_fairness(hc_uti_ref, hc_fair)?,
            gini: g.value,
            hc_uti_ref,
            hc_fair,
            n: allocation.len(),
            mean_allocation: hc_fair / allocation.len() as f64,
        })
    }

    pub const CSV_HEADER: &'static str = "hc_kw,pof,gini";

    pub fn csv_row(&self) -> String {
        format!("{:.6},{:.6},{:.6}", self.hc_fair, self.pof, self.gini)
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// `None` if either input is constant or the lengths differ.
pub fn spearman_rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gini(p: &[f64]) -> f64 {
        let n = p.len() as f64;
        let mean = p.iter().sum::<f64>() / n;
        let mut s = 0.0;
        for a in p {
            for b in p {
                s += (a - b).abs();
            }
        }
        s / (2.0 * mean * n * n)
    }

    #[test]
    fn pof_examples() {
        assert!((price_of_fairness(658.0, 520.0).unwrap() - 0.2097).abs() < 1e-4);
        assert!((price_of_fairness(922.0, 325.0).unwrap() - 0.6475).abs() < 1e-4);
        assert_eq!(price_of_fairness(42.0, 42.0).unwrap(), 0.0);
        assert!(price_of_fairness(10.0, 10.5).unwrap() < 0.0);
        assert_eq!(price_of_fairness(0.0, 1.0), Err(KpiError::ZeroUtilitarianHC(0.0)));
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[2.0, 2.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(gini(&[0.0, 4.0]).unwrap().value, 0.5);
        assert!((gini(&[1.0, 2.0, 3.0]).unwrap().value - 8.0 / 36.0).abs() < 1e-12);
        let z = gini(&[0.0, 0.0]).unwrap();
        assert!(z.all_zero && z.value == 0.0);
        assert_eq!(gini(&[]), Err(KpiError::EmptyAllocation));
        assert_eq!(gini(&[1.0, -1.0]), Err(KpiError::InvalidAllocation));
    }

    #[test]
    fn gini_matches_pairwise_sum() {
        let p = [3.0, 0.5, 7.25, 0.0, 1.0, 1.0];
        assert!((gini(&p).unwrap().value - naive_gini(&p)).abs() < 1e-12);
    }

    #[test]
    fn single_holder_bound() {
        for n in 1..8 {
            let mut p = vec![0.0; n];
            p[0] = 5.0;
            let g = gini(&p).unwrap().value;
            assert!((g - (n as f64 - 1.0) / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn report_columns() {
        let r = KpiReport::new(10.0, &[2.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.csv_row(), "8.000000,0.200000,0.166667");
        assert_eq!(r.n, 3);
        assert!((r.mean_allocation - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(spearman_rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman_rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman_rank_correlation(&[1.0, 2.0], &[5.0, 5.0]), None);
        // ranks x: 1, 2.5, 2.5, 4; y: 1..4
        let rho = spearman_rank_correlation(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 4.5 / (4.5_f64 * 5.0).sqrt()).abs() < 1e-12);
    }
}
