use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use pmtext::io::{self, AnnotationFile, Colormap, DetectionFile, MaskFile};
use pmtext::{
    extract_boundary, filtering::filter_candidates, Detection64, Grid, MatchReport, PipelineConfig, ProbabilityStack64,
    TextPolygon64,
};
use rayon::prelude::*;
use serde_json::json;

use crate::options::{ensure_dir, ConfigArgs, SceneArgs};
use crate::Usage;

/// Writes to stdout, reporting a closed pipe as an error instead of panicking.
pub fn print_out(text: &str) -> Result<()> {
    use std::io::Write;
    let mut lock = std::io::stdout().lock();
    lock.write_all(text.as_bytes())?;
    lock.flush()?;
    Ok(())
}

fn emit(json_out: bool, value: serde_json::Value, text: impl FnOnce() -> String) -> Result<()> {
    if json_out {
        print_out(&(serde_json::to_string_pretty(&value)? + "\n"))
    } else {
        print_out(&text())
    }
}

fn read_stack(path: &Path, cfg: &PipelineConfig) -> Result<ProbabilityStack64> {
    Ok(io::read_stack(path, &cfg.schedule::<f64>()?)?)
}

fn write_detections(grid: Grid, dets: &[pmtext::DetectionBoundary<f64>], out: Option<&Path>) -> Result<()> {
    let file = DetectionFile::from_boundaries(grid, dets);
    match out {
        Some(p) => io::write_json(&file, p)?,
        None => print_out(&(serde_json::to_string_pretty(&file)? + "\n"))?,
    }
    Ok(())
}

fn boundaries(
    masks: &[pmtext::InstanceMask],
    stack: &ProbabilityStack64,
    cfg: &PipelineConfig,
) -> Result<Vec<pmtext::DetectionBoundary<f64>>> {
    Ok(masks
        .par_iter()
        .map(|m| extract_boundary(m, stack.last(), cfg.boundary, cfg.epsilon))
        .collect::<pmtext::Result<Vec<_>>>()?)
}

pub fn gen_labels(
    ann: &Path,
    out: &Path,
    heatmap: Option<&Path>,
    colormap: Colormap,
    c: &ConfigArgs,
    json_out: bool,
) -> Result<()> {
    let cfg = c.resolve()?;
    let s = cfg.schedule::<f64>()?;
    let file: AnnotationFile = io::read_json(ann)?;
    let grid = file.image.grid().map_err(|e| e.in_file(ann))?;
    let polys: Vec<TextPolygon64> = file.polygons().map_err(|e| e.in_file(ann))?;
    let stack = pmtext::generate_label_stack(&polys, grid, &s);
    io::write_stack(&stack, out)?;
    if let Some(h) = heatmap {
        io::export_stack_heatmap(&stack, h, colormap)?;
    }
    emit(
        json_out,
        json!({"out": out, "width": grid.width, "height": grid.height, "alphas": s.alphas(), "instances": polys.len()}),
        || {
            format!(
                "{} maps of {}x{} for {} instances -> {}\n",
                s.len(),
                grid.width,
                grid.height,
                polys.len(),
                out.display()
            )
        },
    )
}

pub fn synth(
    scenes: usize,
    sa: &SceneArgs,
    out: &PathBuf,
    heatmaps: bool,
    c: &ConfigArgs,
    json_out: bool,
) -> Result<()> {
    sa.check()?;
    let cfg = c.resolve()?;
    let s = cfg.schedule::<f64>()?;
    ensure_dir(out)?;
    let spec = sa.spec();
    let names = (0..scenes)
        .into_par_iter()
        .map(|i| -> Result<String> {
            let name = format!("scene_{i:05}");
            let polys: Vec<TextPolygon64> = pmtext::random_scene(sa.grid, &spec, sa.scene_seed(i))?;
            let stack = pmtext::corrupt(&pmtext::oracle_stack(&polys, sa.grid, &s), &sa.noise, sa.noise_seed(i));
            io::write_json(
                &AnnotationFile::from_polygons(sa.grid, &polys),
                out.join(format!("{name}.json")),
            )?;
            io::write_stack(&stack, out.join(format!("{name}.pmap")))?;
            if heatmaps {
                io::export_stack_heatmap(&stack, out.join(format!("{name}.png")), Colormap::Hot)?;
            }
            Ok(name)
        })
        .collect::<Result<Vec<_>>>()?;
    emit(json_out, json!({"out": out, "scenes": names}), || {
        format!("{} scenes -> {}\n", names.len(), out.display())
    })?;
    Ok(())
}

pub fn reconstruct(
    input: &Path,
    out: Option<&Path>,
    masks_out: Option<&Path>,
    c: &ConfigArgs,
    json_out: bool,
) -> Result<()> {
    let cfg = c.resolve()?;
    let stack = read_stack(input, &cfg)?;
    let masks = pmtext::reconstruct(&stack, cfg.binarize_threshold(), cfg.grow)?;
    if let Some(p) = masks_out {
        io::write_json(&MaskFile::from_masks(stack.grid(), &masks), p)?;
    }
    let dets = boundaries(&masks, &stack, &cfg)?;
    write_detections(stack.grid(), &dets, out)?;
    if out.is_some() {
        emit(json_out, json!({"candidates": masks.len(), "grow": cfg.grow}), || {
            format!("{} candidates ({})\n", masks.len(), cfg.grow)
        })?;
    }
    Ok(())
}

pub fn filter(input: &Path, masks_in: &Path, out: &Path, c: &ConfigArgs, json_out: bool) -> Result<()> {
    let cfg = c.resolve()?;
    let stack = read_stack(input, &cfg)?;
    let file: MaskFile = io::read_json(masks_in)?;
    let masks = file.masks().map_err(|e| e.in_file(masks_in))?;
    let kept = filter_candidates(&masks, &stack, &cfg.schedule()?, &cfg.filter_config())?;
    io::write_json(&MaskFile::from_masks(stack.grid(), &kept), out)?;
    emit(
        json_out,
        json!({"candidates": masks.len(), "kept": kept.len(), "filter": cfg.filter}),
        || format!("kept {} of {} candidates ({})\n", kept.len(), masks.len(), cfg.filter),
    )?;
    Ok(())
}

pub fn contours(input: &Path, masks_in: &Path, out: Option<&Path>, c: &ConfigArgs, json_out: bool) -> Result<()> {
    let cfg = c.resolve()?;
    let stack = read_stack(input, &cfg)?;
    let file: MaskFile = io::read_json(masks_in)?;
    let masks = file.masks().map_err(|e| e.in_file(masks_in))?;
    let dets = boundaries(&masks, &stack, &cfg)?;
    write_detections(stack.grid(), &dets, out)?;
    if out.is_some() {
        emit(
            json_out,
            json!({"detections": dets.len(), "mode": cfg.boundary}),
            || format!("{} boundaries ({})\n", dets.len(), cfg.boundary),
        )?;
    }
    Ok(())
}

/// `(stem, path)` of every `.json` file in a directory, or the file itself.
fn json_inputs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let stem = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    if path.is_dir() {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "json") {
                out.push((stem(&p), p));
            }
        }
        out.sort();
        Ok(out)
    } else {
        Ok(vec![(stem(path), path.to_path_buf())])
    }
}

fn read_gt(path: &Path) -> Result<BTreeMap<String, (Grid, Vec<TextPolygon64>)>> {
    json_inputs(path)?
        .into_iter()
        .map(|(k, p)| {
            let f: AnnotationFile = io::read_json(&p)?;
            let grid = f.image.grid().map_err(|e| e.in_file(&p))?;
            Ok((k, (grid, f.polygons().map_err(|e| e.in_file(&p))?)))
        })
        .collect()
}

fn report(r: &MatchReport, json_out: bool) -> Result<()> {
    if json_out {
        print_out(&(serde_json::to_string_pretty(r)? + "\n"))
    } else {
        print_out(&r.to_table())
    }
}

pub fn eval(gt: &Path, dets: &Path, c: &ConfigArgs, json_out: bool) -> Result<()> {
    let cfg = c.resolve()?;
    let single = !gt.is_dir() && !dets.is_dir();
    let gts = read_gt(gt)?;
    let mut det_map = BTreeMap::new();
    for (k, p) in json_inputs(dets)? {
        let f: DetectionFile = io::read_json(&p)?;
        let d: Vec<Detection64> = f.detections().map_err(|e| e.in_file(&p))?;
        // two plain files are compared regardless of their names
        let key = if single {
            gts.keys().next().cloned().unwrap_or(k)
        } else {
            k
        };
        det_map.insert(key, d);
    }
    let gt_map = gts.into_iter().map(|(k, (_, p))| (k, p)).collect();
    report(&pmtext::match_and_score(&det_map, &gt_map, cfg.iou)?, json_out)
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    input: Option<&Path>,
    grid: Grid,
    instances: usize,
    seed: u64,
    noise: &pmtext::NoiseSpec,
    runs: usize,
    c: &ConfigArgs,
    json_out: bool,
) -> Result<()> {
    let cfg = c.resolve()?;
    let s = cfg.schedule::<f64>()?;
    let stack = match input {
        Some(p) => read_stack(p, &cfg)?,
        None => {
            noise.validate()?;
            let spec = pmtext::SceneSpec::new(instances, pmtext::ShapeFamily::Mixed);
            let polys: Vec<TextPolygon64> = pmtext::random_scene(grid, &spec, seed)?;
            pmtext::corrupt(&pmtext::oracle_stack(&polys, grid, &s), noise, seed)
        }
    };
    let r = pmtext::bench::bench_postprocess(&stack, &s, &cfg, runs)?;
    if json_out {
        print_out(&(serde_json::to_string_pretty(&r)? + "\n"))
    } else {
        print_out(&r.to_table())
    }
}

struct Item {
    key: String,
    grid: Grid,
    gts: Vec<TextPolygon64>,
    stack: ProbabilityStack64,
}

pub fn pipeline(
    synth: Option<usize>,
    sa: &SceneArgs,
    gt: Option<&Path>,
    pred: Option<&Path>,
    out: Option<&PathBuf>,
    c: &ConfigArgs,
    json_out: bool,
) -> Result<()> {
    let cfg = c.resolve()?;
    let s = cfg.schedule::<f64>()?;
    let items: Vec<Item> = match (synth, gt) {
        (Some(n), None) => {
            sa.check()?;
            let spec = sa.spec();
            (0..n)
                .into_par_iter()
                .map(|i| -> Result<Item> {
                    let gts: Vec<TextPolygon64> = pmtext::random_scene(sa.grid, &spec, sa.scene_seed(i))?;
                    let clean = pmtext::oracle_stack(&gts, sa.grid, &s);
                    let stack = pmtext::corrupt(&clean, &sa.noise, sa.noise_seed(i));
                    Ok(Item {
                        key: format!("scene_{i:05}"),
                        grid: sa.grid,
                        gts,
                        stack,
                    })
                })
                .collect::<Result<_>>()?
        }
        (None, Some(gt)) => read_gt(gt)?
            .into_par_iter()
            .map(|(key, (grid, gts))| -> Result<Item> {
                let stack = match pred {
                    Some(p) if p.is_dir() => read_stack(&p.join(format!("{key}.pmap")), &cfg)?,
                    Some(p) => read_stack(p, &cfg)?,
                    None => pmtext::generate_label_stack(&gts, grid, &s),
                };
                if stack.grid() != grid {
                    return Err(pmtext::Error::ShapeMismatch(format!(
                        "{key}: prediction is {}x{}, annotation {}x{}",
                        stack.grid().width,
                        stack.grid().height,
                        grid.width,
                        grid.height
                    ))
                    .into());
                }
                Ok(Item { key, grid, gts, stack })
            })
            .collect::<Result<_>>()?,
        _ => return Err(Usage("pipeline needs exactly one of --synth <N> or --gt <dir|json>".into()).into()),
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let results = items
        .par_iter()
        .map(|it| -> Result<(String, Vec<Detection64>)> {
            let res = pmtext::postprocess(&it.stack, &s, &cfg)?;
            if let Some(dir) = out {
                io::write_json(
                    &DetectionFile::from_boundaries(it.grid, &res.boundaries),
                    dir.join(format!("{}.json", it.key)),
                )?;
            }
            let dets = res
                .boundaries
                .into_iter()
                .map(|b| pmtext::Detection {
                    polygon: b.polygon,
                    score: b.score,
                })
                .collect();
            Ok((it.key.clone(), dets))
        })
        .collect::<Result<Vec<_>>>()?;
    let dets: BTreeMap<_, _> = results.into_iter().collect();
    let gts: BTreeMap<_, _> = items.into_iter().map(|it| (it.key, it.gts)).collect();
    report(&pmtext::match_and_score(&dets, &gts, cfg.iou)?, json_out)
}
