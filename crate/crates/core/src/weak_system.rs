//! Weak-form regression systems.
//!
//! For one trajectory and kernel grid `{K_j}` the three accumulated
//! quantities are, over left endpoints `n = 0..N-1`,
//!
//! ```text
//! A_jk = Σ_n K_j(X_n) f_k(X_n) Δt
//! B_j  = Σ_n K_j(X_n) ΔX_n
//! Q_j  = Σ_n K_j(X_n) (ΔX_n)^2
//! ```
//!
//! so that `B ≈ A c` (drift) and `Q ≈ A d` (diffusion) share `A`. Systems
//! from independent trajectories are stacked row-wise, keeping the trajectory
//! index of each row for grouped cross-validation.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{term_label, FeatureLibrary, KernelGrid};
use crate::fmt_f64;
use crate::sde_sim::Ensemble;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Which response vector a solve targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Drift,
    Diffusion,
}

impl std::fmt::Display for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Response::Drift => "drift",
            Response::Diffusion => "diffusion",
        })
    }
}

/// `M×K` design block and the two `M`-vectors of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DVector<f64>,
}

fn check_trajectory(traj: &[f64]) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "a trajectory needs at least 2 states, got {}",
            traj.len()
        )));
    }
    if traj.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("trajectory contains non-finite states".into()));
    }
    Ok(())
}

/// Builds `(A, B, Q)` for a single trajectory.
pub fn build_trajectory_system(
    traj: &[f64],
    grid: &KernelGrid,
    lib: &FeatureLibrary,
    dt: f64,
) -> Result<TrajectorySystem> {
    check_trajectory(traj)?;
    let (m, k) = (grid.len(), lib.len());
    let mut acc_a = vec![CompensatedSum::default(); m * k];
    let mut acc_b = vec![CompensatedSum::default(); m];
    let mut acc_q = vec![CompensatedSum::default(); m];
    let mut kv = vec![0.0; m];
    let mut fv = vec![0.0; k];

    for pair in traj.windows(2) {
        let x = pair[0];
        let dx = pair[1] - x;
        let dx2 = dx * dx;
        grid.evaluate_into(x, &mut kv);
        lib.evaluate_into(x, &mut fv);
        for (j, &w) in kv.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (acc, &f) in acc_a[j * k..(j + 1) * k].iter_mut().zip(&fv) {
                acc.add(w * f);
            }
            acc_b[j].add(w * dx);
            acc_q[j].add(w * dx2);
        }
    }

    Ok(TrajectorySystem {
        a: DMatrix::from_row_iterator(m, k, acc_a.iter().map(|s| s.total() * dt)),
        b: DVector::from_iterator(m, acc_b.iter().map(CompensatedSum::total)),
        q: DVector::from_iterator(m, acc_q.iter().map(CompensatedSum::total)),
    })
}

const TEMPORAL_CUTOFF: f64 = 9.0;

/// Gaussian bumps in time, `φ_j(t) = exp(-(t - τ_j)^2 / (2 w^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWindows {
    pub centers: Vec<f64>,
    pub bandwidth: f64,
}

impl TemporalWindows {
    /// `n_windows` centres evenly spread over `[0, horizon]` with a bandwidth of
    /// twice the centre spacing. A single window sits at `horizon / 2`.
    pub fn even(horizon: f64, n_windows: usize) -> Result<Self> {
        if n_windows == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need a positive horizon and at least one window (got {horizon}, {n_windows})"
            )));
        }
        if n_windows == 1 {
            return Ok(Self { centers: vec![0.5 * horizon], bandwidth: 2.0 * horizon });
        }
        let spacing = horizon / (n_windows - 1) as f64;
        Ok(Self {
            centers: (0..n_windows).map(|j| spacing * j as f64).collect(),
            bandwidth: 2.0 * spacing,
        })
    }
}

/// Same projection as [`build_trajectory_system`] but with purely temporal
/// test functions `ψ_j(X_n, t_n) = φ_j(t_n)`. Returns `(A, B)`.
pub fn build_temporal_system(
    traj: &[f64],
    n_windows: usize,
    lib: &FeatureLibrary,
    dt: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_trajectory(traj)?;
    let windows = TemporalWindows::even((traj.len() - 1) as f64 * dt, n_windows)?;
    build_temporal_system_with(traj, &windows, lib, dt)
}

pub fn build_temporal_system_with(
    traj: &[f64],
    windows: &TemporalWindows,
    lib: &FeatureLibrary,
    dt: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_trajectory(traj)?;
    let (m, k) = (windows.centers.len(), lib.len());
    let inv = -0.5 / (windows.bandwidth * windows.bandwidth);
    let mut acc_a = vec![CompensatedSum::default(); m * k];
    let mut acc_b = vec![CompensatedSum::default(); m];
    let mut fv = vec![0.0; k];
    // weights beyond this many bandwidths are below 1e-17 of the peak
    let reach = TEMPORAL_CUTOFF * windows.bandwidth;
    let sorted = windows.centers.windows(2).all(|w| w[0] <= w[1]);
    for (n, pair) in traj.windows(2).enumerate() {
        let t = n as f64 * dt;
        let x = pair[0];
        let dx = pair[1] - x;
        lib.evaluate_into(x, &mut fv);
        let (lo, hi) = if sorted {
            (
                windows.centers.partition_point(|&c| c < t - reach),
                windows.centers.partition_point(|&c| c <= t + reach),
            )
        } else {
            (0, m)
        };
        for (j, &tau) in windows.centers.iter().enumerate().take(hi).skip(lo) {
            let w = ((t - tau) * (t - tau) * inv).exp();
            if w == 0.0 {
                continue;
            }
            for (acc, &f) in acc_a[j * k..(j + 1) * k].iter_mut().zip(&fv) {
                acc.add(w * f);
            }
            acc_b[j].add(w * dx);
        }
    }
    Ok((
        DMatrix::from_row_iterator(m, k, acc_a.iter().map(|s| s.total() * dt)),
        DVector::from_iterator(m, acc_b.iter().map(CompensatedSum::total)),
    ))
}

/// Stacked drift/diffusion regression problem for an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSystem {
    a_stack: DMatrix<f64>,
    b_stack: DVector<f64>,
    q_stack: DVector<f64>,
    group_of_row: Vec<usize>,
    column_scales: Vec<f64>,
    rows_per_group: usize,
    dt: f64,
    q_correction: Option<Vec<f64>>,
}

/// Concatenates per-trajectory blocks in order; block `r` supplies rows
/// `r·M .. (r+1)·M` labelled with group `r`.
pub fn stack_systems(blocks: &[TrajectorySystem], dt: f64) -> Result<WeakSystem> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no trajectory systems to stack".into()))?;
    let (m, k) = first.a.shape();
    for (r, blk) in blocks.iter().enumerate() {
        if blk.a.shape() != (m, k) || blk.b.len() != m || blk.q.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "block {r} has shape {:?}, expected ({m}, {k})",
                blk.a.shape()
            )));
        }
    }
    let rows = m * blocks.len();
    let mut a_stack = DMatrix::zeros(rows, k);
    let mut b_stack = DVector::zeros(rows);
    let mut q_stack = DVector::zeros(rows);
    let mut group_of_row = Vec::with_capacity(rows);
    for (r, blk) in blocks.iter().enumerate() {
        a_stack.view_mut((r * m, 0), (m, k)).copy_from(&blk.a);
        b_stack.rows_mut(r * m, m).copy_from(&blk.b);
        q_stack.rows_mut(r * m, m).copy_from(&blk.q);
        group_of_row.extend(std::iter::repeat_n(r, m));
    }
    Ok(WeakSystem {
        a_stack,
        b_stack,
        q_stack,
        group_of_row,
        column_scales: vec![1.0; k],
        rows_per_group: m,
        dt,
        q_correction: None,
    })
}

/// Builds every trajectory block (in parallel) and stacks them.
pub fn build_weak_system(ens: &Ensemble, grid: &KernelGrid, lib: &FeatureLibrary) -> Result<WeakSystem> {
    let blocks = (0..ens.n_traj())
        .into_par_iter()
        .map(|r| build_trajectory_system(ens.trajectory(r), grid, lib, ens.dt))
        .collect::<Result<Vec<_>>>()?;
    stack_systems(&blocks, ens.dt)
}

impl WeakSystem {
    pub fn a_stack(&self) -> &DMatrix<f64> {
        &self.a_stack
    }

    pub fn b_stack(&self) -> &DVector<f64> {
        &self.b_stack
    }

    pub fn q_stack(&self) -> &DVector<f64> {
        &self.q_stack
    }

    pub fn response(&self, which: Response) -> &DVector<f64> {
        match which {
            Response::Drift => &self.b_stack,
            Response::Diffusion => &self.q_stack,
        }
    }

    pub fn group_of_row(&self) -> &[usize] {
        &self.group_of_row
    }

    pub fn n_groups(&self) -> usize {
        self.group_of_row.last().map_or(0, |g| g + 1)
    }

    pub fn rows_per_group(&self) -> usize {
        self.rows_per_group
    }

    /// Norms divided out of the columns of `a_stack`; coefficients solved on
    /// the normalized matrix map back as `raw_k = normalized_k / scale_k`.
    pub fn column_scales(&self) -> &[f64] {
        &self.column_scales
    }

    pub fn n_terms(&self) -> usize {
        self.a_stack.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Per-row amount subtracted from `q_stack`, if bias correction ran.
    pub fn q_correction(&self) -> Option<&[f64]> {
        self.q_correction.as_deref()
    }

    pub fn is_q_corrected(&self) -> bool {
        self.q_correction.is_some()
    }

    pub fn to_raw(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().zip(&self.column_scales).map(|(c, s)| c / s).collect()
    }

    pub fn to_normalized(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.column_scales).map(|(c, s)| c * s).collect()
    }

    /// Divides each column of `a_stack` by its ℓ2 norm. Responses are left
    /// untouched.
    pub fn normalize_columns(mut self) -> Result<Self> {
        for k in 0..self.a_stack.ncols() {
            let norm = self.a_stack.column(k).norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::DeadColumn { index: k, label: term_label(k) });
            }
            self.a_stack.column_mut(k).unscale_mut(norm);
            self.column_scales[k] *= norm;
        }
        Ok(self)
    }

    /// Removes the drift-squared contribution from the squared increments:
    /// `Q_j ← Q_j − Σ_n K_j(X_n) b̂(X_n)^2 Δt^2` with `b̂ = Θ·drift_coeffs`
    /// (raw scale). Recomputes the kernel pass over the raw states.
    pub fn bias_correct_q(
        &self,
        ens: &Ensemble,
        grid: &KernelGrid,
        lib: &FeatureLibrary,
        drift_coeffs: &[f64],
    ) -> Result<Self> {
        if ens.n_traj() != self.n_groups() || grid.len() != self.rows_per_group {
            return Err(Error::ShapeMismatch(format!(
                "ensemble ({} trajectories) and grid ({} kernels) do not match the system ({} groups of {} rows)",
                ens.n_traj(),
                grid.len(),
                self.n_groups(),
                self.rows_per_group
            )));
        }
        if drift_coeffs.len() != lib.len() || lib.len() != self.n_terms() {
            return Err(Error::ShapeMismatch(format!(
                "drift has {} coefficients, library {} terms, system {} columns",
                drift_coeffs.len(),
                lib.len(),
                self.n_terms()
            )));
        }
        let dt2 = ens.dt * ens.dt;
        let m = grid.len();
        let per_traj: Vec<Vec<f64>> = (0..ens.n_traj())
            .into_par_iter()
            .map(|r| {
                let mut acc = vec![CompensatedSum::default(); m];
                let mut kv = vec![0.0; m];
                let traj = ens.trajectory(r);
                for &x in &traj[..traj.len() - 1] {
                    let b = lib.combine(drift_coeffs, x);
                    let b2 = b * b;
                    if b2 == 0.0 {
                        continue;
                    }
                    grid.evaluate_into(x, &mut kv);
                    for (s, &w) in acc.iter_mut().zip(&kv) {
                        s.add(w * b2);
                    }
                }
                acc.iter().map(|s| s.total() * dt2).collect()
            })
            .collect();

        let correction: Vec<f64> = per_traj.into_iter().flatten().collect();
        let mut out = self.clone();
        for (q, c) in out.q_stack.iter_mut().zip(&correction) {
            *q -= c;
        }
        let total_corr: f64 = correction.iter().sum();
        let total_q: f64 = self.q_stack.iter().sum();
        let max_corr = correction.iter().cloned().fold(0.0, f64::max);
        log::info!(
            "drift-squared correction: total {total_corr:.6e} ({:.4}% of Σ Q), max per row {max_corr:.6e}",
            100.0 * total_corr / total_q
        );
        for (row, c) in correction.iter().enumerate() {
            log::debug!("Q correction row {row}: {c:.6e}");
        }
        out.q_correction = Some(correction);
        Ok(out)
    }

    /// Writes `a_stack.csv`, `b_stack.csv`, `q_stack.csv` and the
    /// `weak_system.json` sidecar into `dir`.
    pub fn write_dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let k = self.n_terms();

        let mut w = csv::Writer::from_path(dir.join("a_stack.csv"))?;
        w.write_record((0..k).map(term_label))?;
        for row in self.a_stack.row_iter() {
            w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
        }
        w.flush()?;
        for (name, col, v) in [("b_stack.csv", "b", &self.b_stack), ("q_stack.csv", "q", &self.q_stack)] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record([col])?;
            for &x in v.iter() {
                w.write_record([fmt_f64(x)])?;
            }
            w.flush()?;
        }

        #[derive(Serialize)]
        struct Sidecar<'a> {
            labels: Vec<String>,
            dt: f64,
            rows_per_group: usize,
            column_scales: &'a [f64],
            group_of_row: &'a [usize],
            q_corrected: bool,
        }
        let sidecar = Sidecar {
            labels: (0..k).map(term_label).collect(),
            dt: self.dt,
            rows_per_group: self.rows_per_group,
            column_scales: &self.column_scales,
            group_of_row: &self.group_of_row,
            q_corrected: self.is_q_corrected(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("weak_system.json"))?), &sidecar)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trajectory_has_no_response() {
        let grid = KernelGrid::uniform(-1.0, 1.0, 5, 0.4).unwrap();
        let lib = FeatureLibrary::new(3);
        let xbar = 0.3;
        let traj = vec![xbar; 41];
        let sys = build_trajectory_system(&traj, &grid, &lib, 0.01).unwrap();
        assert!(sys.b.iter().all(|&b| b == 0.0));
        assert!(sys.q.iter().all(|&q| q == 0.0));
        let kv = grid.evaluate(xbar);
        let fv = lib.evaluate(xbar);
        for j in 0..5 {
            for k in 0..4 {
                let expect = 40.0 * 0.01 * kv[j] * fv[k];
                assert!((sys.a[(j, k)] - expect).abs() <= 1e-14 * expect.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn two_state_hand_computation() {
        let grid = KernelGrid::new(vec![0.0], 1.0).unwrap();
        let sys = build_trajectory_system(&[0.0, 1.0], &grid, &FeatureLibrary::new(1), 0.5).unwrap();
        assert_eq!(sys.a.as_slice(), &[0.5, 0.0]);
        assert_eq!(sys.b[0], 1.0);
        assert_eq!(sys.q[0], 1.0);
    }

    #[test]
    fn final_state_only_enters_through_last_increment() {
        let grid = KernelGrid::uniform(-2.0, 2.0, 4, 0.5).unwrap();
        let lib = FeatureLibrary::new(2);
        let a = build_trajectory_system(&[0.1, 0.2, 0.4], &grid, &lib, 0.1).unwrap();
        let b = build_trajectory_system(&[0.1, 0.2, 9.0], &grid, &lib, 0.1).unwrap();
        assert_eq!(a.a, b.a);
        assert_ne!(a.b, b.b);
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let grid = KernelGrid::uniform(-1.0, 1.0, 3, 0.5).unwrap();
        let lib = FeatureLibrary::new(1);
        assert!(build_trajectory_system(&[1.0], &grid, &lib, 0.1).is_err());
        assert!(build_trajectory_system(&[1.0, f64::NAN], &grid, &lib, 0.1).is_err());
        assert!(build_temporal_system(&[1.0], 2, &lib, 0.1).is_err());
    }

    #[test]
    fn stacking_checks_shapes() {
        let blk = |m: usize| TrajectorySystem {
            a: DMatrix::from_element(m, 2, 1.0),
            b: DVector::from_element(m, 2.0),
            q: DVector::from_element(m, 3.0),
        };
        assert!(stack_systems(&[blk(3), blk(4)], 0.1).is_err());
        assert!(stack_systems(&[], 0.1).is_err());
        let single = stack_systems(&[blk(3)], 0.1).unwrap();
        assert_eq!(single.a_stack(), &blk(3).a);
        assert_eq!(single.group_of_row(), &[0, 0, 0]);
        assert_eq!(single.column_scales(), &[1.0, 1.0]);
        let two = stack_systems(&[blk(3), blk(3)], 0.1).unwrap();
        assert_eq!(two.group_of_row(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(two.n_groups(), 2);
    }

    #[test]
    fn normalization_scales_and_rejects_dead_columns() {
        let blk = TrajectorySystem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            b: DVector::from_element(2, 1.0),
            q: DVector::from_element(2, 1.0),
        };
        let ws = stack_systems(std::slice::from_ref(&blk), 0.1).unwrap().normalize_columns().unwrap();
        assert_eq!(ws.column_scales(), &[1.0, 1.0]);
        assert_eq!(ws.a_stack(), &blk.a);

        let mut scaled = blk.clone();
        scaled.a.column_mut(1).scale_mut(10.0);
        let ws2 = stack_systems(&[scaled], 0.1).unwrap().normalize_columns().unwrap();
        assert_eq!(ws2.a_stack(), ws.a_stack());
        assert_eq!(ws2.column_scales(), &[1.0, 10.0]);

        let dead = TrajectorySystem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
            ..blk
        };
        match stack_systems(&[dead], 0.1).unwrap().normalize_columns() {
            Err(Error::DeadColumn { index, label }) => assert_eq!((index, label.as_str()), (1, "x")),
            other => panic!("expected dead column error, got {other:?}"),
        }
    }

    #[test]
    fn temporal_single_flat_window_telescopes() {
        let traj = [0.3, -0.2, 0.9, 1.4, 0.1, -0.7];
        let flat = TemporalWindows { centers: vec![0.0], bandwidth: 1e12 };
        let (a, b) = build_temporal_system_with(&traj, &flat, &FeatureLibrary::new(1), 0.1).unwrap();
        assert!((b[0] - (traj[5] - traj[0])).abs() < 1e-15);
        let sum_x: f64 = traj[..5].iter().sum();
        assert!((a[(0, 1)] - 0.1 * sum_x).abs() < 1e-15);
        assert!((a[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn even_windows_layout() {
        let w = TemporalWindows::even(10.0, 11).unwrap();
        assert_eq!(w.centers.len(), 11);
        assert_eq!(w.centers[10], 10.0);
        assert_eq!(w.bandwidth, 2.0);
        assert!(TemporalWindows::even(10.0, 0).is_err());
    }
}
