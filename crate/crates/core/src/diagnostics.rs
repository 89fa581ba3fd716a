//! Checks of an identified generator against ground truth: stationary
//! densities and TV distance, autocorrelations, coefficient tables, the
//! analytic noise-scaling curves, the temporal-window endogeneity experiment
//! and a Kramers-Moyal baseline.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{poly_eval, term_label, FeatureLibrary, KernelGrid};
use crate::fmt_f64;
use crate::sde_sim::{euler_maruyama, Ensemble, SdeSpec, SimConfig};
use crate::sparse_regress::ols_on_support;
use crate::weak_system::{build_temporal_system_with, build_trajectory_system, CompensatedSum, TemporalWindows};

/// Identified drift `b̂ = Θ·ĉ` and diffusion `â = Θ·d̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub drift_coeffs: Vec<f64>,
    pub diff_coeffs: Vec<f64>,
    pub library: FeatureLibrary,
}

impl GeneratorModel {
    pub fn new(drift_coeffs: Vec<f64>, diff_coeffs: Vec<f64>, library: FeatureLibrary) -> Result<Self> {
        if drift_coeffs.len() != library.len() || diff_coeffs.len() != library.len() {
            return Err(Error::ShapeMismatch(format!(
                "library has {} terms but the model has {} drift and {} diffusion coefficients",
                library.len(),
                drift_coeffs.len(),
                diff_coeffs.len()
            )));
        }
        Ok(Self { drift_coeffs, diff_coeffs, library })
    }

    pub fn from_spec(spec: &SdeSpec) -> Self {
        Self {
            drift_coeffs: spec.drift_coeffs().to_vec(),
            diff_coeffs: spec.diff_coeffs().to_vec(),
            library: FeatureLibrary::new(spec.n_terms() - 1),
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        poly_eval(&self.drift_coeffs, x)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        poly_eval(&self.diff_coeffs, x)
    }

    /// Grid points where `â(x) ≤ 0`.
    pub fn nonpositive_diffusion(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().copied().filter(|&x| !(self.diffusion(x) > 0.0)).collect()
    }
}

/// `n` evenly spaced points on `[lo, hi]`, both ends included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo < hi) || n < 2 {
        return Err(Error::InvalidParameter(format!("grid [{lo}, {hi}] with {n} points is degenerate")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    g[n - 1] = hi;
    Ok(g)
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Trapezoid integral of `values`.
    pub normalization: f64,
}

impl DensityCurve {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }
}

/// Stationary Fokker-Planck density
/// `π(x) ∝ exp(2∫₀ˣ b/a dy) / a(x)` on `n` points of `[lo, hi]`.
///
/// The integral is a cumulative trapezoid starting at the grid point nearest
/// zero and running outward in both directions.
pub fn stationary_density(model: &GeneratorModel, lo: f64, hi: f64, n: usize) -> Result<DensityCurve> {
    let grid = uniform_grid(lo, hi, n)?;
    let a: Vec<f64> = grid.iter().map(|&x| model.diffusion(x)).collect();
    if let Some(i) = a.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NegativeDiffusion { x: grid[i], value: a[i] });
    }
    let ratio: Vec<f64> = grid.iter().zip(&a).map(|(&x, &ax)| model.drift(x) / ax).collect();
    let anchor = grid
        .iter()
        .enumerate()
        .min_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut phi = vec![0.0; n];
    for i in anchor + 1..n {
        phi[i] = phi[i - 1] + (grid[i] - grid[i - 1]) * (ratio[i] + ratio[i - 1]);
    }
    for i in (0..anchor).rev() {
        phi[i] = phi[i + 1] - (grid[i + 1] - grid[i]) * (ratio[i] + ratio[i + 1]);
    }
    let top = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = phi.iter().zip(&a).map(|(p, ax)| (p - top).exp() / ax).collect();
    let z = trapezoid(&grid, &values);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NotNormalizable(format!("trapezoid mass {z}")));
    }
    values.iter_mut().for_each(|v| *v /= z);
    let peak = values.iter().cloned().fold(0.0, f64::max);
    if values[0].max(values[n - 1]) > 1e-3 * peak {
        log::warn!("stationary density is not negligible at the grid boundary [{lo}, {hi}]");
    }
    let normalization = trapezoid(&grid, &values);
    Ok(DensityCurve { grid, values, normalization })
}

/// `½∫|p − q|`, clamped to `[0, 1]`.
pub fn tv_distance(p: &DensityCurve, q: &DensityCurve) -> Result<f64> {
    if p.grid != q.grid || p.values.len() != q.values.len() {
        return Err(Error::GridMismatch);
    }
    let diff: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).collect();
    Ok((0.5 * trapezoid(&p.grid, &diff)).clamp(0.0, 1.0))
}

/// Writes `x` plus one column per named curve; all curves must share a grid.
pub fn write_density_csv(path: impl AsRef<Path>, curves: &[(&str, &DensityCurve)]) -> Result<()> {
    let Some((_, first)) = curves.first() else {
        return Err(Error::InvalidParameter("no curves to write".into()));
    };
    if curves.iter().any(|(_, c)| c.grid != first.grid) {
        return Err(Error::GridMismatch);
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x"];
    header.extend(curves.iter().map(|(name, _)| *name));
    w.write_record(&header)?;
    for (i, &x) in first.grid.iter().enumerate() {
        let mut rec = vec![fmt_f64(x)];
        rec.extend(curves.iter().map(|(_, c)| fmt_f64(c.values[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Above this many multiply-adds the ACF goes through the FFT.
const DIRECT_ACF_WORK: usize = 20_000_000;

/// Biased (`1/n`) sample autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(traj: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if traj.len() <= max_lag {
        return Err(Error::InvalidParameter(format!(
            "trajectory of length {} is too short for lag {max_lag}",
            traj.len()
        )));
    }
    if traj.len().saturating_mul(max_lag + 1) <= DIRECT_ACF_WORK {
        autocorrelation_direct(traj, max_lag)
    } else {
        autocorrelation_fft(traj, max_lag)
    }
}

fn centred(traj: &[f64]) -> Result<Vec<f64>> {
    let n = traj.len() as f64;
    let mean = traj.iter().sum::<f64>() / n;
    let d: Vec<f64> = traj.iter().map(|x| x - mean).collect();
    if d.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(d)
}

pub fn autocorrelation_direct(traj: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let d = centred(traj)?;
    let var: f64 = d.iter().map(|v| v * v).sum();
    Ok((0..=max_lag.min(d.len() - 1))
        .map(|lag| d.iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / var)
        .collect())
}

pub fn autocorrelation_fft(traj: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let d = centred(traj)?;
    let n = d.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = d.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    buf.iter_mut().for_each(|z| *z = Complex::new(z.norm_sqr(), 0.0));
    inv.process(&mut buf);
    let c0 = buf[0].re;
    Ok(buf[..=max_lag.min(n - 1)].iter().map(|z| z.re / c0).collect())
}

/// Analytic measurement-noise magnitudes of the Kramers-Moyal and weak-form
/// drift estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScalingCurve {
    pub dt_grid: Vec<f64>,
    pub snr: Vec<f64>,
    pub sigma_obs: Vec<f64>,
    /// Indexed `[snr][dt]`.
    pub km_noise: Vec<Vec<f64>>,
    pub wf_noise: Vec<Vec<f64>>,
    pub ratio: Vec<Vec<f64>>,
    pub horizon: f64,
    pub bandwidth: f64,
    pub h_eff: f64,
}

/// `km = σ/Δt`, `wf = σ/√(N h_eff)` with `N = T/Δt`, `h_eff = √(π/2)·h` and
/// `σ = signal_std / SNR`.
pub fn noise_scaling(
    horizon: f64,
    bandwidth: f64,
    snr_list: &[f64],
    dt_grid: &[f64],
    signal_std: f64,
) -> Result<NoiseScalingCurve> {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(horizon)
        || !positive(bandwidth)
        || !positive(signal_std)
        || snr_list.is_empty()
        || dt_grid.is_empty()
        || !snr_list.iter().chain(dt_grid).all(|&v| positive(v))
    {
        return Err(Error::InvalidParameter("noise scaling inputs must be non-empty and positive".into()));
    }
    let h_eff = (std::f64::consts::PI / 2.0).sqrt() * bandwidth;
    let sigma_obs: Vec<f64> = snr_list.iter().map(|s| signal_std / s).collect();
    let mut km_noise = Vec::new();
    let mut wf_noise = Vec::new();
    let mut ratio = Vec::new();
    for &sigma in &sigma_obs {
        let km: Vec<f64> = dt_grid.iter().map(|dt| sigma / dt).collect();
        let wf: Vec<f64> = dt_grid.iter().map(|dt| sigma / (horizon / dt * h_eff).sqrt()).collect();
        ratio.push(km.iter().zip(&wf).map(|(k, w)| k / w).collect());
        km_noise.push(km);
        wf_noise.push(wf);
    }
    Ok(NoiseScalingCurve {
        dt_grid: dt_grid.to_vec(),
        snr: snr_list.to_vec(),
        sigma_obs,
        km_noise,
        wf_noise,
        ratio,
        horizon,
        bandwidth,
        h_eff,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

impl NoiseScalingCurve {
    /// Log-log slope of the ratio against `Δt` for SNR index `i`.
    pub fn ratio_slope(&self, i: usize) -> f64 {
        loglog_slope(&self.dt_grid, &self.ratio[i])
    }

    /// One row per `Δt` with `km`, `wf` and `ratio` columns for each SNR.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dt".to_string()];
        for s in &self.snr {
            header.extend(["km", "wf", "ratio"].iter().map(|c| format!("{c}_snr{s}")));
        }
        w.write_record(&header)?;
        for (j, &dt) in self.dt_grid.iter().enumerate() {
            let mut rec = vec![fmt_f64(dt)];
            for i in 0..self.snr.len() {
                rec.extend([self.km_noise[i][j], self.wf_noise[i][j], self.ratio[i][j]].map(fmt_f64));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRow {
    pub process: String,
    pub term: String,
    pub estimate: f64,
    pub truth: f64,
    /// `|estimate − truth| / |truth|`; absent when the truth is zero.
    pub rel_error: Option<f64>,
    pub false_positive: bool,
    pub false_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub system: String,
    pub rows: Vec<TermRow>,
    /// `‖b̂ − b‖₁ / ‖b‖₁` on 401 points over `[−3, 3]`.
    pub drift_function_error: f64,
    pub diffusion_function_error: f64,
}

fn function_error(est: &[f64], truth: &[f64]) -> f64 {
    let grid = uniform_grid(-3.0, 3.0, 401).expect("fixed grid");
    let diff: Vec<f64> = grid.iter().map(|&x| (poly_eval(est, x) - poly_eval(truth, x)).abs()).collect();
    let norm: Vec<f64> = grid.iter().map(|&x| poly_eval(truth, x).abs()).collect();
    trapezoid(&grid, &diff) / trapezoid(&grid, &norm)
}

pub fn coefficient_report(model: &GeneratorModel, truth: &SdeSpec) -> Result<CoefficientReport> {
    if truth.n_terms() != model.library.len() {
        return Err(Error::ShapeMismatch(format!(
            "model library has {} terms, truth {}",
            model.library.len(),
            truth.n_terms()
        )));
    }
    let mut rows = Vec::new();
    for (process, est, tru) in [
        ("drift", &model.drift_coeffs, truth.drift_coeffs()),
        ("diffusion", &model.diff_coeffs, truth.diff_coeffs()),
    ] {
        for (k, (&e, &t)) in est.iter().zip(tru).enumerate() {
            rows.push(TermRow {
                process: process.to_string(),
                term: term_label(k),
                estimate: e,
                truth: t,
                rel_error: (t != 0.0).then(|| (e - t).abs() / t.abs()),
                false_positive: t == 0.0 && e != 0.0,
                false_negative: t != 0.0 && e == 0.0,
            });
        }
    }
    Ok(CoefficientReport {
        system: truth.name.clone(),
        rows,
        drift_function_error: function_error(&model.drift_coeffs, truth.drift_coeffs()),
        diffusion_function_error: function_error(&model.diff_coeffs, truth.diff_coeffs()),
    })
}

impl CoefficientReport {
    pub fn has_false_positive(&self) -> bool {
        self.rows.iter().any(|r| r.false_positive)
    }

    pub fn has_false_negative(&self) -> bool {
        self.rows.iter().any(|r| r.false_negative)
    }

    pub fn row(&self, process: &str, term: &str) -> Option<&TermRow> {
        self.rows.iter().find(|r| r.process == process && r.term == term)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system: {}", self.system);
        let _ = writeln!(
            out,
            "{:<10} {:<5} {:>14} {:>10} {:>9}  flags",
            "process", "term", "estimate", "truth", "error"
        );
        for r in &self.rows {
            let err = r.rel_error.map_or_else(|| "-".to_string(), |e| format!("{:.2}%", 100.0 * e));
            let flag = match (r.false_positive, r.false_negative) {
                (true, _) => "FALSE-POSITIVE",
                (_, true) => "FALSE-NEGATIVE",
                _ => "",
            };
            let _ = writeln!(
                out,
                "{:<10} {:<5} {:>14.6} {:>10.4} {:>9}  {flag}",
                r.process, r.term, r.estimate, r.truth, err
            );
        }
        let _ = writeln!(out, "drift function L1 error:     {:.3}%", 100.0 * self.drift_function_error);
        let _ = writeln!(out, "diffusion function L1 error: {:.3}%", 100.0 * self.diffusion_function_error);
        out
    }
}

/// Pooled per-step regression of `ΔX/Δt` on `Θ(X_n)`, no kernel aggregation.
pub fn km_drift_regression(ens: &Ensemble, lib: &FeatureLibrary) -> Result<Vec<f64>> {
    let k = lib.len();
    let mut g = vec![CompensatedSum::default(); k * k];
    let mut r = vec![CompensatedSum::default(); k];
    let mut fv = vec![0.0; k];
    for traj in ens.trajectories() {
        for pair in traj.windows(2) {
            let y = (pair[1] - pair[0]) / ens.dt;
            lib.evaluate_into(pair[0], &mut fv);
            for i in 0..k {
                r[i].add(fv[i] * y);
                for j in 0..k {
                    g[i * k + j].add(fv[i] * fv[j]);
                }
            }
        }
    }
    let gram = DMatrix::from_row_iterator(k, k, g.iter().map(CompensatedSum::total));
    let rhs = DVector::from_iterator(k, r.iter().map(CompensatedSum::total));
    let all: Vec<usize> = (0..k).collect();
    // the Gram factor is K×K; reuse the pivoted solve for its rank check
    ols_on_support(&gram, &rhs, &all)
}

/// Setup of the spatial-versus-temporal test function comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndogeneityConfig {
    pub horizons: Vec<f64>,
    pub dt: f64,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub library_degree: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub n_kernels: usize,
    pub bandwidth: f64,
    /// Time between temporal window centres.
    pub window_spacing: f64,
    pub x0_range: (f64, f64),
}

impl Default for EndogeneityConfig {
    fn default() -> Self {
        Self {
            horizons: vec![25.0, 100.0, 400.0],
            dt: 0.002,
            n_repeats: 20,
            base_seed: 2024,
            library_degree: 1,
            grid_lo: -2.5,
            grid_hi: 2.5,
            n_kernels: 50,
            bandwidth: 0.22,
            window_spacing: 1.0,
            x0_range: (-3.0, 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndogeneityRow {
    pub horizon: f64,
    pub spatial_errors: Vec<f64>,
    pub temporal_errors: Vec<f64>,
    pub spatial_mean_error: f64,
    pub spatial_rmse: f64,
    pub temporal_mean_error: f64,
    pub temporal_rmse: f64,
}

fn mean_and_rmse(e: &[f64]) -> (f64, f64) {
    let n = e.len() as f64;
    (e.iter().sum::<f64>() / n, (e.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
}

/// Signed error of the `x` coefficient from single-trajectory OLS with
/// spatial kernels and with temporal windows, repeated over seeds for each
/// horizon.
pub fn endogeneity_experiment(spec: &SdeSpec, cfg: &EndogeneityConfig) -> Result<Vec<EndogeneityRow>> {
    let lib = FeatureLibrary::new(cfg.library_degree);
    if cfg.library_degree < 1 || spec.n_terms() < 2 || cfg.n_repeats == 0 {
        return Err(Error::InvalidParameter("endogeneity experiment needs an x term and at least one repeat".into()));
    }
    let truth_x = spec.drift_coeffs()[1];
    let grid = KernelGrid::uniform(cfg.grid_lo, cfg.grid_hi, cfg.n_kernels, cfg.bandwidth)?;
    let all: Vec<usize> = (0..lib.len()).collect();
    let mut rows = Vec::new();
    for (t_idx, &horizon) in cfg.horizons.iter().enumerate() {
        let n_steps = (horizon / cfg.dt).round() as usize;
        let n_windows = (horizon / cfg.window_spacing).round() as usize + 1;
        let windows = TemporalWindows::even(n_steps as f64 * cfg.dt, n_windows)?;
        let errs = (0..cfg.n_repeats)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let sim = SimConfig {
                    dt: cfg.dt,
                    n_steps,
                    n_traj: 1,
                    master_seed: cfg.base_seed + 1000 * t_idx as u64 + i as u64,
                    x0_range: cfg.x0_range,
                    obs_noise_sigma: 0.0,
                };
                let ens = euler_maruyama(spec, &sim)?;
                let traj = ens.trajectory(0);
                let sp = build_trajectory_system(traj, &grid, &lib, cfg.dt)?;
                let c_sp = ols_on_support(&sp.a, &sp.b, &all)?;
                let (at, bt) = build_temporal_system_with(traj, &windows, &lib, cfg.dt)?;
                let c_tm = ols_on_support(&at, &bt, &all)?;
                Ok((c_sp[1] - truth_x, c_tm[1] - truth_x))
            })
            .collect::<Result<Vec<_>>>()?;
        let spatial_errors: Vec<f64> = errs.iter().map(|e| e.0).collect();
        let temporal_errors: Vec<f64> = errs.iter().map(|e| e.1).collect();
        let (spatial_mean_error, spatial_rmse) = mean_and_rmse(&spatial_errors);
        let (temporal_mean_error, temporal_rmse) = mean_and_rmse(&temporal_errors);
        log::info!(
            "T = {horizon}: spatial mean {spatial_mean_error:+.4} rmse {spatial_rmse:.4}, temporal mean {temporal_mean_error:+.4} rmse {temporal_rmse:.4}"
        );
        rows.push(EndogeneityRow {
            horizon,
            spatial_errors,
            temporal_errors,
            spatial_mean_error,
            spatial_rmse,
            temporal_mean_error,
            temporal_rmse,
        });
    }
    Ok(rows)
}

pub fn write_endogeneity_csv(path: impl AsRef<Path>, rows: &[EndogeneityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "spatial_mean_error", "spatial_rmse", "temporal_mean_error", "temporal_rmse"])?;
    for r in rows {
        w.write_record(
            [r.horizon, r.spatial_mean_error, r.spatial_rmse, r.temporal_mean_error, r.temporal_rmse].map(fmt_f64),
        )?;
    }
    w.flush()?;
    Ok(())
}
