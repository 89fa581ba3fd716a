//! The two function families every regression quantity is built from: the
//! monomial feature library `[1, x, ..., x^d]` and a grid of spatial Gaussian
//! kernels `K_j(x) = exp(-(x - x_j)^2 / (2 h^2))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monomials `x^0 ..= x^max_degree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureLibrary {
    pub max_degree: usize,
}

impl FeatureLibrary {
    pub fn new(max_degree: usize) -> Self {
        Self { max_degree }
    }

    /// Number of library terms.
    pub fn len(&self) -> usize {
        self.max_degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(term_label).collect()
    }

    /// Writes `[1, x, x^2, ...]` into `out` by iterated multiplication, so that
    /// `out[k + 1] == x * out[k]` holds bit-for-bit.
    #[inline]
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        let mut p = 1.0;
        for slot in out.iter_mut() {
            *slot = p;
            p *= x;
        }
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(x, &mut out);
        out
    }

    /// `Θ(x)·coeffs`, evaluated term by term in the same order as `evaluate`.
    #[inline]
    pub fn combine(&self, coeffs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.len());
        poly_eval(coeffs, x)
    }
}

impl Default for FeatureLibrary {
    fn default() -> Self {
        Self { max_degree: 4 }
    }
}

/// Human-readable name of monomial `k`.
pub fn term_label(k: usize) -> String {
    match k {
        0 => "1".to_string(),
        1 => "x".to_string(),
        _ => format!("x^{k}"),
    }
}

/// `Σ_k coeffs[k]·x^k` with powers formed by iterated multiplication.
#[inline]
pub fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    let mut p = 1.0;
    let mut acc = 0.0;
    for &c in coeffs {
        acc += c * p;
        p *= x;
    }
    acc
}

/// Gaussian kernels with strictly increasing centres and a shared bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelGrid {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl KernelGrid {
    pub fn new(centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParameter("kernel grid needs at least one centre".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("kernel centres must be finite".into()));
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "kernel centres must be strictly increasing".into(),
            ));
        }
        let grid = Self { centers, bandwidth };
        if let Some(ratio) = grid.overlap_ratio() {
            if ratio < 1.0 {
                log::warn!(
                    "kernel overlap ratio h/Δx_c = {ratio:.3} < 1: state space coverage has gaps"
                );
            }
        }
        Ok(grid)
    }

    /// `m` equally spaced centres on `[lo, hi]`, endpoints included.
    pub fn uniform(lo: f64, hi: f64, m: usize, h: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel interval [{lo}, {hi}] is degenerate"
            )));
        }
        if m < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 kernel centres, got {m}")));
        }
        let step = (hi - lo) / (m - 1) as f64;
        let mut centers: Vec<f64> = (0..m).map(|j| lo + step * j as f64).collect();
        centers[m - 1] = hi;
        Self::new(centers, h)
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Mean spacing between adjacent centres, `None` for a single centre.
    pub fn spacing(&self) -> Option<f64> {
        let m = self.centers.len();
        (m >= 2).then(|| (self.centers[m - 1] - self.centers[0]) / (m - 1) as f64)
    }

    /// `h / Δx_c`.
    pub fn overlap_ratio(&self) -> Option<f64> {
        self.spacing().map(|s| self.bandwidth / s)
    }

    #[inline]
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.centers.len());
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        for (slot, &c) in out.iter_mut().zip(&self.centers) {
            let d = x - c;
            *slot = (d * d * inv).exp();
        }
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.centers.len()];
        self.evaluate_into(x, &mut out);
        out
    }
}
