//! The end-to-end identification: build, stack, normalize, drift solve,
//! drift-squared correction, diffusion solve.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::GeneratorModel;
use crate::error::Result;
use crate::features::{FeatureLibrary, KernelGrid};
use crate::sde_sim::Ensemble;
use crate::sparse_regress::{solve_pipeline, LassoConfig, SparseModel};
use crate::weak_system::{build_weak_system, Response, WeakSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub drift: SparseModel,
    pub diffusion: SparseModel,
    pub bias_corrected: bool,
    pub n_rows: usize,
    pub library: FeatureLibrary,
}

impl Discovery {
    pub fn model(&self) -> GeneratorModel {
        GeneratorModel {
            drift_coeffs: self.drift.coeffs.clone(),
            diff_coeffs: self.diffusion.coeffs.clone(),
            library: self.library,
        }
    }

    /// Writes model JSONs, CV paths and stage logs for both responses.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for m in [&self.drift, &self.diffusion] {
            let name = m.response.to_string();
            m.write_json(dir.join(format!("{name}_model.json")))?;
            m.write_cv_path_csv(dir.join(format!("{name}_cv_path.csv")))?;
            m.write_stage_log_json(dir.join(format!("{name}_stage_log.json")))?;
        }
        let file = std::io::BufWriter::new(std::fs::File::create(dir.join("model.json"))?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Runs the full drift and diffusion identification on `ens`. With
/// `bias_correction` off the diffusion is solved on the raw squared
/// increments.
pub fn discover(
    ens: &Ensemble,
    grid: &KernelGrid,
    lib: &FeatureLibrary,
    drift_cfg: &LassoConfig,
    diffusion_cfg: &LassoConfig,
    bias_correction: bool,
) -> Result<Discovery> {
    let (ws, drift) = drift_stage(ens, grid, lib, drift_cfg)?;
    diffusion_stage(ens, grid, lib, diffusion_cfg, ws, drift, bias_correction)
}

/// Corrected and uncorrected identifications sharing one weak system and
/// one drift solve.
pub fn discover_pair(
    ens: &Ensemble,
    grid: &KernelGrid,
    lib: &FeatureLibrary,
    drift_cfg: &LassoConfig,
    diffusion_cfg: &LassoConfig,
) -> Result<(Discovery, Discovery)> {
    let (ws, drift) = drift_stage(ens, grid, lib, drift_cfg)?;
    let corrected = diffusion_stage(ens, grid, lib, diffusion_cfg, ws.clone(), drift.clone(), true)?;
    let uncorrected = diffusion_stage(ens, grid, lib, diffusion_cfg, ws, drift, false)?;
    Ok((corrected, uncorrected))
}

fn drift_stage(
    ens: &Ensemble,
    grid: &KernelGrid,
    lib: &FeatureLibrary,
    cfg: &LassoConfig,
) -> Result<(WeakSystem, SparseModel)> {
    let ws = build_weak_system(ens, grid, lib).map_err(|e| e.in_stage("weak system"))?;
    let ws = ws.normalize_columns().map_err(|e| e.in_stage("normalization"))?;
    log::info!("weak system: {} rows x {} columns", ws.a_stack().nrows(), ws.n_terms());
    let drift = solve_pipeline(&ws, Response::Drift, cfg).map_err(|e| e.in_stage("drift solve"))?;
    Ok((ws, drift))
}

fn diffusion_stage(
    ens: &Ensemble,
    grid: &KernelGrid,
    lib: &FeatureLibrary,
    cfg: &LassoConfig,
    ws: WeakSystem,
    drift: SparseModel,
    bias_correction: bool,
) -> Result<Discovery> {
    let ws = if bias_correction {
        ws.bias_correct_q(ens, grid, lib, &drift.coeffs)
            .map_err(|e| e.in_stage("bias correction"))?
    } else {
        log::info!("diffusion solved on uncorrected squared increments");
        ws
    };
    let diffusion = solve_pipeline(&ws, Response::Diffusion, cfg).map_err(|e| e.in_stage("diffusion solve"))?;
    Ok(Discovery { drift, diffusion, bias_corrected: bias_correction, n_rows: ws.a_stack().nrows(), library: *lib })
}
