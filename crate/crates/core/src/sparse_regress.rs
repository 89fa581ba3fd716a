//! Sparse solving: coordinate-descent LASSO with grouped cross-validation,
//! OLS debiasing on the selected support, and sequential thresholded least
//! squares (STLSQ).
//!
//! The LASSO objective is `‖A c − y‖² + λ‖c‖₁` with no row averaging, so the
//! coordinate update is `c_k = S(ρ_k, λ/2) / G_kk` on the Gram matrix
//! `G = AᵀA`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::term_label;
use crate::fmt_f64;
use crate::weak_system::{Response, WeakSystem};

/// `n` values spaced evenly in log10 between `10^lo_exp` and `10^hi_exp`,
/// largest first.
pub fn log_grid(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![10f64.powf(hi_exp)],
        _ => (0..n)
            .map(|i| 10f64.powf(hi_exp - (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Magnitude used when comparing coefficients against the STLSQ threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScale {
    /// Back-transformed coefficients, i.e. the physical model coefficients.
    #[default]
    Raw,
    /// Coefficients of the column-normalized design.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub lambda_grid: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub k_folds: usize,
    pub stlsq_threshold_rel: f64,
    pub stlsq_max_iter: usize,
    pub threshold_scale: ThresholdScale,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda_grid: log_grid(-8.0, -0.5, 60),
            tol: 1e-6,
            max_iter: 100_000,
            k_folds: 5,
            stlsq_threshold_rel: 0.25,
            stlsq_max_iter: 20,
            threshold_scale: ThresholdScale::Raw,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.lambda_grid.is_empty() {
            return bad("lambda grid is empty".into());
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad("lambda grid values must be positive and finite".into());
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return bad("lambda grid must be strictly descending".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 || self.stlsq_max_iter == 0 {
            return bad("iteration limits must be positive".into());
        }
        if self.k_folds < 2 {
            return bad(format!("k_folds must be at least 2, got {}", self.k_folds));
        }
        if !(self.stlsq_threshold_rel > 0.0 && self.stlsq_threshold_rel < 1.0) {
            return bad(format!(
                "stlsq_threshold_rel must lie in (0, 1), got {}",
                self.stlsq_threshold_rel
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coeffs: Vec<f64>,
    /// Completed coordinate sweeps.
    pub n_iter: usize,
    pub converged: bool,
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent given `G = AᵀA` and `Aᵀy`.
pub fn lasso_gram(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&[f64]>,
) -> LassoFit {
    let k = aty.len();
    let mut c = match warm_start {
        Some(w) => w.to_vec(),
        None => vec![0.0; k],
    };
    // gc = G c, kept current across coordinate updates
    let mut gc: Vec<f64> = (0..k).map(|i| (0..k).map(|j| gram[(i, j)] * c[j]).sum()).collect();
    let half = 0.5 * lambda;
    for sweep in 1..=max_iter {
        let mut max_change = 0.0f64;
        for j in 0..k {
            let gjj = gram[(j, j)];
            let old = c[j];
            let new = if gjj > 0.0 {
                let rho = aty[j] - (gc[j] - gjj * old);
                soft_threshold(rho, half) / gjj
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                for (i, g) in gc.iter_mut().enumerate() {
                    *g += gram[(i, j)] * delta;
                }
                c[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < tol {
            return LassoFit { coeffs: c, n_iter: sweep, converged: true };
        }
    }
    LassoFit { coeffs: c, n_iter: max_iter, converged: false }
}

/// Minimizes `‖A c − y‖² + λ‖c‖₁`.
pub fn lasso(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    cfg: &LassoConfig,
    warm_start: Option<&[f64]>,
) -> Result<LassoFit> {
    if a.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} rows, response {}",
            a.nrows(),
            y.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if let Some(w) = warm_start {
        if w.len() != a.ncols() {
            return Err(Error::ShapeMismatch("warm start length differs from column count".into()));
        }
    }
    let gram = a.tr_mul(a);
    let aty = a.tr_mul(y);
    Ok(lasso_gram(&gram, &aty, lambda, cfg.tol, cfg.max_iter, warm_start))
}

/// Largest violation of the LASSO subgradient conditions: `|g_k| − λ` for
/// zero coefficients and `|g_k + λ sign(c_k)|` for active ones, where
/// `g = 2(G c − Aᵀy)`.
pub fn kkt_violation(gram: &DMatrix<f64>, aty: &DVector<f64>, coeffs: &[f64], lambda: f64) -> f64 {
    let c = DVector::from_column_slice(coeffs);
    let grad = (gram * &c - aty) * 2.0;
    grad.iter()
        .zip(coeffs)
        .map(|(&g, &ck)| {
            if ck == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * ck.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// One row of the cross-validation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_mse: f64,
    pub fold_mse: Vec<f64>,
}

/// Coefficients after one solver stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub normalized: Vec<f64>,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    pub response: Response,
    pub labels: Vec<String>,
    /// Raw (back-transformed) coefficients.
    pub coeffs: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda_star: f64,
    pub cv_path: Vec<CvPoint>,
    pub stage_log: Vec<Stage>,
    /// Worst KKT violation over every LASSO fit on the path and the refit.
    pub max_kkt_violation: f64,
    pub all_converged: bool,
    pub stlsq_iterations: usize,
}

fn support_of(c: &[f64]) -> Vec<usize> {
    c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, _)| k).collect()
}

impl SparseModel {
    /// Coefficients from the last stage in the normalized design scale.
    pub fn normalized_coeffs(&self) -> &[f64] {
        &self.stage_log.last().expect("stage log is never empty").normalized
    }

    pub fn write_cv_path_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.cv_path.first().map_or(0, |p| p.fold_mse.len());
        let mut header = vec!["lambda".to_string(), "mean_mse".to_string()];
        header.extend((1..=k).map(|f| format!("fold_mse_{f}")));
        w.write_record(&header)?;
        for p in &self.cv_path {
            let mut rec = vec![fmt_f64(p.lambda), fmt_f64(p.mean_mse)];
            rec.extend(p.fold_mse.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_stage_log_json(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &self.stage_log)?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }
}

/// Gram pieces of one group of rows.
struct GroupBlock {
    rows: Vec<usize>,
    gram: DMatrix<f64>,
    aty: DVector<f64>,
}

/// Assigns sorted group ids to `k` contiguous folds; returns the fold of each
/// group position.
pub fn fold_assignment(n_groups: usize, k_folds: usize) -> Vec<usize> {
    (0..n_groups).map(|g| g * k_folds / n_groups).collect()
}

/// Grouped K-fold cross-validated LASSO over `cfg.lambda_grid`. The returned
/// model carries the full-data refit at `λ*`, back-transformed.
pub fn lasso_cv_grouped(ws: &WeakSystem, response: Response, cfg: &LassoConfig) -> Result<SparseModel> {
    cfg.validate()?;
    let a = ws.a_stack();
    let y = ws.response(response);
    if y.is_empty() {
        return Err(Error::ShapeMismatch("empty response".into()));
    }
    let groups: BTreeSet<usize> = ws.group_of_row().iter().copied().collect();
    let groups: Vec<usize> = groups.into_iter().collect();
    if groups.len() < cfg.k_folds {
        return Err(Error::InvalidParameter(format!(
            "{} groups cannot fill {} folds",
            groups.len(),
            cfg.k_folds
        )));
    }
    let k = a.ncols();

    let mut rows_by_group: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    for (row, g) in ws.group_of_row().iter().enumerate() {
        let pos = groups.binary_search(g).expect("group listed");
        rows_by_group[pos].push(row);
    }
    let blocks: Vec<GroupBlock> = rows_by_group
        .into_par_iter()
        .map(|rows| {
            let ag = a.select_rows(&rows);
            let yg = DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]));
            GroupBlock { gram: ag.tr_mul(&ag), aty: ag.tr_mul(&yg), rows }
        })
        .collect();
    let fold_of = fold_assignment(blocks.len(), cfg.k_folds);

    let mut kkt_worst = 0.0f64;
    let mut all_converged = true;

    let fold_paths: Vec<(Vec<f64>, f64, bool)> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|f| {
            let mut gram = DMatrix::zeros(k, k);
            let mut aty = DVector::zeros(k);
            let mut val_rows = Vec::new();
            for (b, &fo) in blocks.iter().zip(&fold_of) {
                if fo == f {
                    val_rows.extend_from_slice(&b.rows);
                } else {
                    gram += &b.gram;
                    aty += &b.aty;
                }
            }
            let av = a.select_rows(&val_rows);
            let yv = DVector::from_iterator(val_rows.len(), val_rows.iter().map(|&r| y[r]));
            let mut warm = vec![0.0; k];
            let mut mses = Vec::with_capacity(cfg.lambda_grid.len());
            let mut worst = 0.0f64;
            let mut conv = true;
            for &lambda in &cfg.lambda_grid {
                let fit = lasso_gram(&gram, &aty, lambda, cfg.tol, cfg.max_iter, Some(&warm));
                worst = worst.max(kkt_violation(&gram, &aty, &fit.coeffs, lambda));
                conv &= fit.converged;
                let c = DVector::from_column_slice(&fit.coeffs);
                mses.push((&av * c - &yv).norm_squared() / val_rows.len() as f64);
                warm = fit.coeffs;
            }
            (mses, worst, conv)
        })
        .collect();

    let cv_path: Vec<CvPoint> = cfg
        .lambda_grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let fold_mse: Vec<f64> = fold_paths.iter().map(|p| p.0[i]).collect();
            CvPoint { lambda, mean_mse: fold_mse.iter().sum::<f64>() / fold_mse.len() as f64, fold_mse }
        })
        .collect();
    for (_, worst, conv) in &fold_paths {
        kkt_worst = kkt_worst.max(*worst);
        all_converged &= *conv;
    }

    // descending grid: strict improvement keeps the larger λ on ties
    let mut best = 0;
    for (i, p) in cv_path.iter().enumerate() {
        if p.mean_mse < cv_path[best].mean_mse {
            best = i;
        }
    }
    let lambda_star = cv_path[best].lambda;

    let mut gram = DMatrix::zeros(k, k);
    let mut aty = DVector::zeros(k);
    for b in &blocks {
        gram += &b.gram;
        aty += &b.aty;
    }
    let mut warm = vec![0.0; k];
    for &lambda in &cfg.lambda_grid[..=best] {
        let fit = lasso_gram(&gram, &aty, lambda, cfg.tol, cfg.max_iter, Some(&warm));
        kkt_worst = kkt_worst.max(kkt_violation(&gram, &aty, &fit.coeffs, lambda));
        all_converged &= fit.converged;
        warm = fit.coeffs;
    }
    if !all_converged {
        log::warn!("{response} LASSO: some coordinate-descent fits hit max_iter = {}", cfg.max_iter);
    }
    if kkt_worst > 10.0 * cfg.tol {
        log::warn!("{response} LASSO: KKT violation {kkt_worst:.3e} exceeds 10·tol");
    }
    log::info!("{response} LASSO: λ* = {lambda_star:.3e}, CV MSE {:.6e}", cv_path[best].mean_mse);

    let raw = ws.to_raw(&warm);
    Ok(SparseModel {
        response,
        labels: (0..k).map(term_label).collect(),
        support: support_of(&warm),
        coeffs: raw.clone(),
        lambda_star,
        cv_path,
        stage_log: vec![Stage { name: "lasso".into(), normalized: warm, raw }],
        max_kkt_violation: kkt_worst,
        all_converged,
        stlsq_iterations: 0,
    })
}

/// Least squares restricted to `support` through a column-pivoted QR
/// factorization; entries outside the support are zero.
pub fn ols_on_support(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    if a.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} rows, response {}",
            a.nrows(),
            y.len()
        )));
    }
    if support.iter().any(|&k| k >= a.ncols()) {
        return Err(Error::ShapeMismatch("support index out of range".into()));
    }
    let s = support.len();
    if a.nrows() < s {
        return Err(Error::RankDeficient { columns: support.to_vec() });
    }
    let sub = a.select_columns(support);
    let qr = sub.col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..s).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let tol = a.nrows().max(s) as f64 * f64::EPSILON * dmax;

    // original support position of each pivoted column
    let mut position = DVector::from_iterator(s, (0..s).map(|i| i as f64));
    qr.p().inv_permute_rows(&mut position);
    let weak: Vec<usize> = (0..s).filter(|&i| !(diag[i] > tol)).collect();
    if !weak.is_empty() {
        let mut columns: Vec<usize> = (0..s)
            .filter(|&j| weak.contains(&(position[j] as usize)))
            .map(|j| support[j])
            .collect();
        columns.sort_unstable();
        return Err(Error::RankDeficient { columns });
    }

    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let mut z = DVector::zeros(s);
    for i in (0..s).rev() {
        let mut acc = qty[i];
        for j in i + 1..s {
            acc -= r[(i, j)] * z[j];
        }
        z[i] = acc / r[(i, i)];
    }
    qr.p().inv_permute_rows(&mut z);
    let mut out = vec![0.0; a.ncols()];
    for (&k, &v) in support.iter().zip(z.iter()) {
        out[k] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StlsqResult {
    pub coeffs: Vec<f64>,
    pub support: Vec<usize>,
    /// Coefficients after each refit.
    pub refits: Vec<Vec<f64>>,
    /// Thresholding passes, including the final one that found the support
    /// unchanged.
    pub n_iter: usize,
}

/// STLSQ with thresholds applied to `|c_k|·weights_k`.
pub fn stlsq_weighted(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    initial: &[f64],
    threshold_rel: f64,
    max_iter: usize,
    weights: &[f64],
) -> Result<StlsqResult> {
    if initial.len() != a.ncols() || weights.len() != a.ncols() {
        return Err(Error::ShapeMismatch("STLSQ coefficient length differs from column count".into()));
    }
    let mut c = initial.to_vec();
    let mut support = support_of(&c);
    let mut refits = Vec::new();
    for it in 1..=max_iter {
        let mag: Vec<f64> = c.iter().zip(weights).map(|(v, w)| (v * w).abs()).collect();
        let top = mag.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return Err(Error::EmptyModel);
        }
        let cut = threshold_rel * top;
        let keep: Vec<usize> = (0..c.len()).filter(|&k| c[k] != 0.0 && mag[k] >= cut).collect();
        if keep == support {
            return Ok(StlsqResult { coeffs: c, support, refits, n_iter: it });
        }
        if keep.is_empty() {
            return Err(Error::EmptyModel);
        }
        c = ols_on_support(a, y, &keep)?;
        refits.push(c.clone());
        support = keep;
    }
    log::warn!("STLSQ did not settle within {max_iter} iterations");
    Ok(StlsqResult { coeffs: c, support, refits, n_iter: max_iter })
}

/// STLSQ with thresholds applied to the coefficients as given.
pub fn stlsq(a: &DMatrix<f64>, y: &DVector<f64>, initial: &[f64], cfg: &LassoConfig) -> Result<StlsqResult> {
    stlsq_weighted(a, y, initial, cfg.stlsq_threshold_rel, cfg.stlsq_max_iter, &vec![1.0; initial.len()])
}

/// LASSO-CV, OLS debiasing on the LASSO support, then STLSQ.
pub fn solve_pipeline(ws: &WeakSystem, response: Response, cfg: &LassoConfig) -> Result<SparseModel> {
    let mut model = lasso_cv_grouped(ws, response, cfg)?;
    let a = ws.a_stack();
    let y = ws.response(response);
    let lasso_support = model.support.clone();
    if lasso_support.is_empty() {
        log::error!("{response}: LASSO selected no terms, no dynamics identified");
        return Err(Error::EmptySupport);
    }
    let debiased = ols_on_support(a, y, &lasso_support)?;
    model.stage_log.push(Stage { name: "debias".into(), raw: ws.to_raw(&debiased), normalized: debiased.clone() });

    let weights: Vec<f64> = match cfg.threshold_scale {
        ThresholdScale::Raw => ws.column_scales().iter().map(|s| 1.0 / s).collect(),
        ThresholdScale::Normalized => vec![1.0; debiased.len()],
    };
    let st = stlsq_weighted(a, y, &debiased, cfg.stlsq_threshold_rel, cfg.stlsq_max_iter, &weights)?;
    for (i, c) in st.refits.iter().enumerate() {
        model.stage_log.push(Stage { name: format!("stlsq_{}", i + 1), raw: ws.to_raw(c), normalized: c.clone() });
    }
    model.coeffs = ws.to_raw(&st.coeffs);
    model.support = st.support;
    model.stlsq_iterations = st.n_iter;
    log::info!(
        "{response}: support {:?}, STLSQ passes {}",
        model.support.iter().map(|&k| term_label(k)).collect::<Vec<_>>(),
        st.n_iter
    );
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal(n: usize, k: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, k, |i, j| ((i * 7 + j * 13) as f64).sin() + 0.1 * (i as f64 + j as f64).cos());
        m.qr().q()
    }

    #[test]
    fn log_grid_layout() {
        let g = log_grid(-8.0, -0.5, 60);
        assert_eq!(g.len(), 60);
        assert!((g[0] - 10f64.powf(-0.5)).abs() < 1e-15);
        assert!((g[59] - 1e-8).abs() < 1e-22);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        LassoConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            LassoConfig { lambda_grid: vec![1.0, 2.0], ..Default::default() },
            LassoConfig { lambda_grid: vec![], ..Default::default() },
            LassoConfig { k_folds: 1, ..Default::default() },
            LassoConfig { stlsq_threshold_rel: 1.0, ..Default::default() },
            LassoConfig { tol: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn large_lambda_gives_zero() {
        let a = orthonormal(30, 4);
        let y = DVector::from_fn(30, |i, _| (i as f64 * 0.37).cos());
        let lmax = 2.0 * a.tr_mul(&y).amax();
        let fit = lasso(&a, &y, lmax, &LassoConfig::default(), None).unwrap();
        assert_eq!(fit.coeffs, vec![0.0; 4]);
        assert!(fit.converged);
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let a = orthonormal(40, 5);
        let y = DVector::from_fn(40, |i, _| (i as f64 * 0.61).sin() * 3.0);
        let aty = a.tr_mul(&y);
        for lambda in [1e-3, 0.1, 0.5, 2.0] {
            let fit = lasso(&a, &y, lambda, &LassoConfig::default(), None).unwrap();
            for k in 0..5 {
                assert!((fit.coeffs[k] - soft_threshold(aty[k], lambda / 2.0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn stlsq_prunes_small_term() {
        let a = DMatrix::<f64>::identity(5, 5);
        let y = DVector::from_column_slice(&[1.0, 0.01, 0.0, 0.0, 0.0]);
        let st = stlsq(&a, &y, &[1.0, 0.01, 0.0, 0.0, 0.0], &LassoConfig::default()).unwrap();
        assert_eq!(st.support, vec![0]);
        assert_eq!(st.refits.len(), 1);
        assert_eq!(st.coeffs, vec![1.0, 0.0, 0.0, 0.0, 0.0]);

        let stable = stlsq(&a, &y, &[1.0, 0.0, 0.0, 0.0, 0.0], &LassoConfig::default()).unwrap();
        assert_eq!(stable.n_iter, 1);
        assert!(stable.refits.is_empty());
        assert_eq!(stable.coeffs, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stlsq_empty_initial_is_empty_model() {
        let a = DMatrix::<f64>::identity(3, 3);
        let y = DVector::zeros(3);
        assert!(matches!(stlsq(&a, &y, &[0.0; 3], &LassoConfig::default()), Err(Error::EmptyModel)));
    }

    #[test]
    fn ols_errors() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 2.0, 0.0, 1.0, 1.0, 3.0, 0.5, 0.5, 1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(ols_on_support(&a, &y, &[]), Err(Error::EmptySupport)));
        match ols_on_support(&a, &y, &[0, 1, 2]) {
            Err(Error::RankDeficient { columns }) => {
                assert_eq!(columns.len(), 1);
                assert!(columns[0] == 1 || columns[0] == 2);
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(ols_on_support(&a, &y, &[0, 1]).is_ok());
    }

    #[test]
    fn ols_square_and_projection() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let c = [1.0, -2.0, 0.5];
        let y = &a * DVector::from_column_slice(&c);
        let got = ols_on_support(&a, &y, &[0, 1, 2]).unwrap();
        for k in 0..3 {
            assert!((got[k] - c[k]).abs() < 1e-12);
        }
        let one = ols_on_support(&a, &y, &[1]).unwrap();
        let col = a.column(1);
        assert!((one[1] - col.dot(&y) / col.dot(&col)).abs() < 1e-12);
        assert_eq!((one[0], one[2]), (0.0, 0.0));
    }

    #[test]
    fn folds_are_contiguous_and_balanced() {
        let f = fold_assignment(120, 5);
        for fold in 0..5 {
            let members: Vec<usize> = (0..120).filter(|&g| f[g] == fold).collect();
            assert_eq!(members.len(), 24);
            assert_eq!(members[23] - members[0], 23);
        }
    }
}
