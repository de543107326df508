//! Trains and evaluates architecture variants over a list of seeds.

use std::fmt::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodymodel::BodyModel;
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::objective::SupervisionTarget;
use crate::synthdata::Dataset;

use super::config::RunConfig;
use super::evaluate::{evaluate, Predictions};
use super::train::train;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub use_residual: bool,
    pub poseforecast: bool,
    pub includes_current: bool,
    pub supervision: SupervisionTarget,
}

impl Variant {
    fn new(name: &str, use_residual: bool, poseforecast: bool) -> Self {
        Self {
            name: name.into(),
            use_residual,
            poseforecast,
            includes_current: false,
            supervision: SupervisionTarget::Current,
        }
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.temporal.use_residual = self.use_residual;
        cfg.temporal.poseforecast = self.poseforecast;
        cfg.temporal.poseforecast_includes_current = self.includes_current;
        cfg.loss.supervision = self.supervision;
        cfg
    }
}

/// The residual × forecasting grid, baseline first.
pub fn architecture_variants() -> Vec<Variant> {
    vec![
        Variant::new("res", true, false),
        Variant::new("res+pf", true, true),
        Variant::new("nores", false, false),
        Variant::new("nores+pf", false, true),
    ]
}

/// Forecasting branches that also see the current frame.
pub fn with_current_variant() -> Variant {
    Variant {
        includes_current: true,
        ..Variant::new("nores+pf+current", false, true)
    }
}

/// Side branches supervised with neighbouring-frame targets, or not at all.
pub fn supervision_variants() -> Vec<Variant> {
    vec![
        Variant {
            supervision: SupervisionTarget::Adjacent,
            ..Variant::new("nores+pf+adjacent", false, true)
        },
        Variant {
            supervision: SupervisionTarget::None,
            ..Variant::new("nores+pf+unsupervised", false, true)
        },
    ]
}

pub fn all_variants() -> Vec<Variant> {
    let mut v = architecture_variants();
    v.push(with_current_variant());
    v.extend(supervision_variants());
    v
}

pub fn variant_by_name(name: &str) -> Option<Variant> {
    all_variants().into_iter().find(|v| v.name == name)
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub report: MetricReport,
    pub predictions: Predictions,
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

#[derive(Clone, Debug)]
pub struct VariantRow {
    pub variant: Variant,
    pub runs: Vec<SeedRun>,
}

impl VariantRow {
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.result.is_err())
    }

    fn stat(&self, f: impl Fn(&MetricReport) -> f64) -> Option<MeanSd> {
        if self.failed() {
            return None;
        }
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok())
            .map(|r| f(&r.report))
            .collect();
        MeanSd::of(&v)
    }

    pub fn pa_mpjpe(&self) -> Option<MeanSd> {
        self.stat(|r| r.pa_mpjpe_mm)
    }

    pub fn mpjpe(&self) -> Option<MeanSd> {
        self.stat(|r| r.mpjpe_mm)
    }

    pub fn accel(&self) -> Option<MeanSd> {
        self.stat(|r| r.accel_err_mm_s2)
    }

    pub fn run(&self, seed: u64) -> Option<&RunResult> {
        self.runs
            .iter()
            .find(|r| r.seed == seed)
            .and_then(|r| r.result.as_ref().ok())
    }
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant.name == name)
    }

    /// Markdown table with mean ± sd over seeds; a variant with any failed seed shows `failed`.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(s, "seeds: {}", seeds.join(", ")).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "| variant | residual | forecast | current in branches | side supervision | MPJPE (mm) | PA-MPJPE (mm) | accel (mm/s²) |")
            .unwrap();
        writeln!(s, "|---|---|---|---|---|---|---|---|").unwrap();
        let cell = |m: Option<MeanSd>| {
            m.map_or_else(
                || "failed".to_string(),
                |m| format!("{:.2} ± {:.2}", m.mean, m.sd),
            )
        };
        let mark = |b: bool| if b { "yes" } else { "no" };
        for r in &self.rows {
            let v = &r.variant;
            writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                v.name,
                mark(v.use_residual),
                mark(v.poseforecast),
                mark(v.includes_current),
                if v.poseforecast {
                    format!("{:?}", v.supervision).to_lowercase()
                } else {
                    "-".into()
                },
                cell(r.mpjpe()),
                cell(r.pa_mpjpe()),
                cell(r.accel()),
            )
            .unwrap();
        }
        let failures: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| {
                r.runs
                    .iter()
                    .filter_map(move |x| x.result.as_ref().err().map(|e| (r, x.seed, e)))
            })
            .map(|(r, seed, e)| format!("- {} seed {seed}: {e}", r.variant.name))
            .collect();
        if !failures.is_empty() {
            writeln!(s, "\nfailed runs:\n{}", failures.join("\n")).unwrap();
        }
        s
    }

    /// One line per variant and seed.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("variant,seed,status,best_epoch,mpjpe_mm,pa_mpjpe_mm,accel_err_mm_s2\n");
        for r in &self.rows {
            for run in &r.runs {
                match &run.result {
                    Ok(x) => writeln!(
                        s,
                        "{},{},ok,{},{:.6},{:.6},{:.6}",
                        r.variant.name,
                        run.seed,
                        x.best_epoch,
                        x.report.mpjpe_mm,
                        x.report.pa_mpjpe_mm,
                        x.report.accel_err_mm_s2
                    ),
                    Err(_) => writeln!(s, "{},{},failed,,,,", r.variant.name, run.seed),
                }
                .unwrap();
            }
        }
        s
    }
}

pub struct AblationData<'a> {
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub eval: &'a Dataset,
}

fn run_one(
    base: &RunConfig,
    variant: &Variant,
    seed: u64,
    body: &Arc<BodyModel>,
    data: &AblationData<'_>,
) -> Result<RunResult> {
    let mut cfg = variant.apply(base);
    cfg.seed = seed;
    let outcome = train(&cfg, body.clone(), data.train, data.val)?;
    let model = outcome.best.to_model(body.clone())?;
    let (predictions, report) = evaluate(&model, data.eval)?;
    Ok(RunResult {
        report,
        predictions,
        best_epoch: outcome.best.epoch,
    })
}

/// Trains every variant for every seed and scores the best checkpoint on the
/// evaluation split. `parallel` runs the (variant, seed) jobs on the rayon pool.
pub fn ablate(
    base: &RunConfig,
    body: Arc<BodyModel>,
    data: &AblationData<'_>,
    variants: &[Variant],
    seeds: &[u64],
    parallel: bool,
) -> AblationTable {
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(v, seed): &(usize, u64)| {
        log::info!("ablation: variant {} seed {seed}", variants[v].name);
        let result = run_one(base, &variants[v], seed, &body, data).map_err(|e| e.to_string());
        if let Err(e) = &result {
            log::warn!(
                "ablation: variant {} seed {seed} failed: {e}",
                variants[v].name
            );
        }
        SeedRun { seed, result }
    };
    let runs: Vec<SeedRun> = if parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    let mut runs = runs.into_iter();
    let rows = variants
        .iter()
        .map(|v| VariantRow {
            variant: v.clone(),
            runs: runs.by_ref().take(seeds.len()).collect(),
        })
        .collect();
    AblationTable {
        seeds: seeds.to_vec(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.sd, 1.0);
        assert_eq!(MeanSd::of(&[4.0]).unwrap().sd, 0.0);
        assert!(MeanSd::of(&[]).is_none());
    }

    #[test]
    fn variants_toggle_the_right_fields() {
        let base = RunConfig::default();
        let cfg = with_current_variant().apply(&base);
        assert!(
            !cfg.temporal.use_residual
                && cfg.temporal.poseforecast
                && cfg.temporal.poseforecast_includes_current
        );
        let cfg = variant_by_name("res").unwrap().apply(&base);
        assert!(cfg.temporal.use_residual && !cfg.temporal.poseforecast);
        let names: Vec<String> = all_variants().into_iter().map(|v| v.name).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(names.len(), unique.len());
    }

    #[test]
    fn failed_cells_are_marked() {
        let row = VariantRow {
            variant: variant_by_name("nores").unwrap(),
            runs: vec![SeedRun {
                seed: 0,
                result: Err("boom".into()),
            }],
        };
        let table = AblationTable {
            seeds: vec![0],
            rows: vec![row],
        };
        let md = table.to_markdown();
        assert!(md.contains("| failed | failed | failed |"), "{md}");
        assert!(md.contains("nores seed 0: boom"));
        assert!(table.to_csv().contains("nores,0,failed"));
    }
}
