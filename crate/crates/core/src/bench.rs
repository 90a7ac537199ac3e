//! Per-stage wall-clock timing of post-processing.

use std::time::{Duration, Instant};

use crate::config::PipelineConfig;
use crate::contours::extract_boundary;
use crate::error::Result;
use crate::filtering::filter_candidates;
use crate::probmap::{AlphaSchedule, ProbabilityStack};
use crate::reconstruct::{binarize_stack, expand_seeds, flood_markers, label_components, GrowthAlgorithm};
use crate::scalar::Scalar;

pub const STAGES: [&str; 5] = ["binarize", "components", "growth", "filter", "boundary"];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub n_maps: usize,
    pub algorithm: GrowthAlgorithm,
    pub threads: usize,
    pub runs: usize,
    pub instances: usize,
    pub stages: Vec<StageStats>,
    /// Statistics of the summed per-run time of all stages.
    pub total: StageStats,
    /// Same for binarize + components + growth only.
    pub core: StageStats,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{}x{} n={} {} threads={} runs={} instances={}\n{:<12} {:>9} {:>9} {:>9} {:>9}\n",
            self.width,
            self.height,
            self.n_maps,
            self.algorithm,
            self.threads,
            self.runs,
            self.instances,
            "stage",
            "mean ms",
            "median",
            "p95",
            "min"
        );
        for st in self.stages.iter().chain([&self.core, &self.total]) {
            s.push_str(&format!(
                "{:<12} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
                st.stage, st.mean_ms, st.median_ms, st.p95_ms, st.min_ms
            ));
        }
        s
    }
}

/// Nearest-rank statistics of a sample of durations.
pub fn stats(stage: &str, samples: &[Duration]) -> StageStats {
    let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let rank = |q: f64| ms[((q * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
    StageStats {
        stage: stage.to_string(),
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        median_ms: rank(0.5),
        p95_ms: rank(0.95),
        min_ms: ms[0],
    }
}

/// Runs the whole post-processing chain `runs` times (at least once) in the
/// current thread pool and reports per-stage statistics.
pub fn bench_postprocess<T: Scalar>(
    stack: &ProbabilityStack<T>,
    schedule: &AlphaSchedule<T>,
    cfg: &PipelineConfig,
    runs: usize,
) -> Result<BenchReport> {
    let runs = runs.max(1);
    let fcfg = cfg.filter_config::<T>();
    let eps = T::lit(cfg.epsilon);
    let mut samples: Vec<Vec<Duration>> = vec![Vec::with_capacity(runs); STAGES.len()];
    let mut core = Vec::with_capacity(runs);
    let mut total = Vec::with_capacity(runs);
    let mut instances = 0;
    for _ in 0..runs {
        let mut t = [Duration::ZERO; 5];
        let start = Instant::now();
        let bstack = binarize_stack(stack, fcfg.th_b)?;
        t[0] = start.elapsed();

        let start = Instant::now();
        let (labels, count) = label_components(bstack.grid(), &bstack.layers()[0]);
        t[1] = start.elapsed();

        let start = Instant::now();
        let masks = match cfg.grow {
            GrowthAlgorithm::Pse => expand_seeds(&bstack, labels, count),
            GrowthAlgorithm::Watershed => flood_markers(stack, &bstack, labels, count)?,
        };
        t[2] = start.elapsed();

        let start = Instant::now();
        let kept = filter_candidates(&masks, stack, schedule, &fcfg)?;
        t[3] = start.elapsed();

        let start = Instant::now();
        for m in &kept {
            std::hint::black_box(extract_boundary(m, stack.last(), cfg.boundary, eps)?);
        }
        t[4] = start.elapsed();

        instances = kept.len();
        for (s, d) in samples.iter_mut().zip(t) {
            s.push(d);
        }
        core.push(t[0] + t[1] + t[2]);
        total.push(t.iter().sum());
    }
    let grid = stack.grid();
    Ok(BenchReport {
        width: grid.width,
        height: grid.height,
        n_maps: stack.len(),
        algorithm: cfg.grow,
        threads: rayon::current_num_threads(),
        runs,
        instances,
        stages: STAGES.iter().zip(&samples).map(|(n, s)| stats(n, s)).collect(),
        total: stats("total", &total),
        core: stats("core", &core),
    })
}
