use serde::{Deserialize, Serialize};

use super::instance::{adapt_instances, evaluate_depth};
use super::{AdaptConfig, AdaptMode, ComponentMask};
use crate::metrics::{DepthMetrics, EvalRange, Scaling};
use crate::models::Model;
use crate::scenes::FrameBundle;

pub const GRID_CSV_HEADER: &str = "mask,lr,steps,status,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";

/// One ablation setting; zero steps is the unadapted baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub mask: ComponentMask,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub config: GridConfig,
    /// `ok`, `diverged:<frames>` or `error:<message>`.
    pub status: String,
    pub metrics: Option<DepthMetrics>,
    /// Per-frame abs-rel in input order (empty on error).
    pub per_frame: Vec<f64>,
    pub diverged_frames: usize,
}

impl GridRow {
    pub fn csv_row(&self) -> String {
        let metrics = self
            .metrics
            .map(|m| m.csv_row())
            .unwrap_or_else(|| ",,,,,,".to_string());
        let status = self.status.replace([',', '\n'], ";");
        format!("{},{},{},{status},{metrics}", self.config.mask.label(), self.config.lr, self.config.steps)
    }
}

/// Runs every configuration over `bundles` (instance mode) and
/// aggregates median-scaled metrics; a failing configuration yields an
/// error row and the grid carries on.
pub fn ablation_grid(
    base: &Model<f32>,
    bundles: &[FrameBundle],
    configs: &[GridConfig],
    template: &AdaptConfig,
    scaling: Scaling,
    jobs: usize,
) -> Vec<GridRow> {
    let range = EvalRange::default();
    configs
        .iter()
        .map(|c| {
            let cfg = AdaptConfig {
                mode: if c.steps == 0 { AdaptMode::Off } else { AdaptMode::Instance },
                steps: c.steps,
                lr: c.lr,
                mask: c.mask.clone(),
                ..template.clone()
            };
            let failed = |msg: String| GridRow {
                config: c.clone(),
                status: format!("error:{msg}"),
                metrics: None,
                per_frame: Vec::new(),
                diverged_frames: 0,
            };
            let mut metrics = Vec::new();
            let mut diverged = 0;
            for (b, r) in bundles.iter().zip(adapt_instances(base, bundles, &cfg, jobs)) {
                let out = match r {
                    Ok(o) => o,
                    Err(e) => return failed(format!("frame {}: {e}", b.index)),
                };
                diverged += out.diverged as usize;
                let Some(gt) = &b.depth else {
                    return failed(format!("frame {} has no ground truth", b.index));
                };
                match evaluate_depth(&out.depth, gt, scaling, &range) {
                    Ok(m) => metrics.push(m),
                    Err(e) => return failed(format!("frame {}: {e}", b.index)),
                }
            }
            let Some(mean) = DepthMetrics::mean(&metrics) else {
                return failed("no frames".into());
            };
            GridRow {
                config: c.clone(),
                status: if diverged > 0 { format!("diverged:{diverged}") } else { "ok".into() },
                metrics: Some(mean),
                per_frame: metrics.iter().map(|m| m.abs_rel).collect(),
                diverged_frames: diverged,
            }
        })
        .collect()
}
