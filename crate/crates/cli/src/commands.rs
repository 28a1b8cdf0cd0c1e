//! Implementations of the subcommands.

use std::path::Path;

use admgs_core::checkpoint;
use admgs_core::dataset::{Dataset, Split};
use admgs_core::eval::{decompose, evaluate, hstack, normal_preview, relight, render_aligned, EvalReport, ILLUMINATION_EPS};
use admgs_core::gradcheck::{self, GradCheckReport, Scale};
use admgs_core::image::Image;
use admgs_core::io::{write_pfm, write_png};
use admgs_core::render::View;
use admgs_core::train::{self, TrainConfig, Trainer};
use admgs_core::{Error, Result};
use admgs_synth::{generate_dataset, standard_suites, SyntheticSceneSpec, SUITE_NAMES};
use serde_json::{json, Value};

use crate::config::{load, parse_assignment};
use crate::{Command, EvalArgs, GenDataArgs, GradCheckArgs, RelightArgs, ScaleArg, SplitArg, TrainArgs, ViewArgs, BUILD_ID, EXIT_OK, EXIT_VERIFY};

pub const RUN_INFO: &str = "run_info.json";

pub fn dispatch(cmd: Command, overrides: Vec<(String, String)>) -> Result<i32> {
    let no_overrides = |name: &str| -> Result<()> {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("{name} takes no configuration overrides")))
        }
    };
    match cmd {
        Command::GenData(a) => gen_data(a, overrides),
        Command::Train(a) => train_cmd(a, overrides),
        Command::Render(a) => no_overrides("render").and_then(|_| render_cmd(a, false)),
        Command::Decompose(a) => no_overrides("decompose").and_then(|_| render_cmd(a, true)),
        Command::Relight(a) => no_overrides("relight").and_then(|_| relight_cmd(a)),
        Command::Eval(a) => no_overrides("eval").and_then(|_| eval_cmd(a)),
        Command::GradCheck(a) => no_overrides("grad-check").and_then(|_| grad_check(a)),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Record the command, its effective configuration and the build id.
pub fn write_run_info(dir: &Path, command: &str, config: Value) -> Result<()> {
    mkdir(dir)?;
    let info = json!({
        "command": command,
        "build": BUILD_ID,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    write_json(&dir.join(RUN_INFO), &info)
}

fn all_overrides(set: &[String], dotted: Vec<(String, String)>) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = set.iter().map(|s| parse_assignment(s)).collect::<Result<_>>()?;
    out.extend(dotted);
    Ok(out)
}

fn gen_data(a: GenDataArgs, dotted: Vec<(String, String)>) -> Result<i32> {
    let overrides = all_overrides(&a.set, dotted)?;
    let base = match &a.suite {
        Some(name) => {
            let spec = standard_suites().into_iter().find(|s| &s.name == name).ok_or_else(|| {
                Error::invalid(format!("unknown suite {name:?}; available suites: {}", SUITE_NAMES.join(", ")))
            })?;
            serde_json::to_value(spec)?
        }
        None => Value::Null,
    };
    let (spec, effective): (SyntheticSceneSpec, Value) = load(base, a.spec.as_deref(), &overrides)?;
    spec.validate()?;
    mkdir(&a.out)?;
    let manifest = generate_dataset(&spec, &a.out)?;
    write_run_info(&a.out, "gen-data", effective)?;
    let frames = manifest.frames().count();
    println!(
        "{}: wrote {frames} frames across {} traversals to {} (spec hash {})",
        spec.name,
        manifest.traversals.len(),
        a.out.display(),
        spec.content_hash()
    );
    Ok(EXIT_OK)
}

fn train_cmd(a: TrainArgs, dotted: Vec<(String, String)>) -> Result<i32> {
    let overrides = all_overrides(&a.set, dotted)?;
    let (config, effective): (TrainConfig, Value) = load(serde_json::to_value(TrainConfig::default())?, a.config.as_deref(), &overrides)?;
    config.validate()?;
    let dataset = Dataset::load(&a.data)?;
    write_run_info(&a.out, "train", effective)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::from_checkpoint(&dataset, config, checkpoint::load(p)?)?,
        None => Trainer::new(&dataset, config)?,
    };
    let total = trainer.config.iterations;
    let every = (total / 20).max(1);
    let quiet = a.quiet;
    let summary = train::run(&mut trainer, &dataset, &a.out, |r| {
        if !quiet && (r.iteration % every == 0 || r.iteration + 1 == total) {
            println!("iter {:>6}  loss {:.5}  photo {:.5}  material {:.5}  normal {:.5}", r.iteration, r.loss, r.components.photo, r.components.material, r.components.normal);
        }
    });
    let summary = match summary {
        Ok(s) => s,
        Err(e @ Error::TrainingDivergence { .. }) => {
            eprintln!("training diverged; checkpoints written before the failure are kept in {}", a.out.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let report = evaluate(&trainer.model, &dataset, Split::Test)?;
    write_eval(&a.out, &report)?;
    print!("{}", report.table());
    if let Some(p) = summary.checkpoints.last() {
        println!("final checkpoint: {}", p.display());
    }
    Ok(EXIT_OK)
}

fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    let name = match report.split {
        Split::Train => "eval_train",
        Split::Test => "eval_test",
    };
    write_json(&dir.join(format!("{name}.json")), report)?;
    let p = dir.join(format!("{name}.txt"));
    std::fs::write(&p, report.table()).map_err(|e| Error::io(&p, e))
}

fn view_for(dataset: &Dataset, traversal: usize, frame: usize) -> Result<View> {
    let n = dataset.manifest.cameras.len();
    if frame >= n {
        return Err(Error::invalid(format!("frame {frame} out of range (dataset has {n} cameras)")));
    }
    if traversal >= dataset.traversal_count() {
        return Err(Error::MissingTraversal(traversal));
    }
    let camera = dataset.manifest.camera(frame)?;
    let tau = dataset.find(traversal, frame).map_or(0.0, |f| f.timestamp);
    Ok(View::new(camera, traversal, tau))
}

fn save_layer(dir: &Path, name: &str, img: &Image<f32>, preview: &Image<f32>) -> Result<()> {
    write_pfm(&dir.join(format!("{name}.pfm")), img)?;
    write_png(&dir.join(format!("{name}.png")), preview)
}

fn render_cmd(a: ViewArgs, layers: bool) -> Result<i32> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let view = view_for(&dataset, a.traversal, a.frame)?;
    ck.model.scene.traversals.check(a.traversal)?;
    let cmd = if layers { "decompose" } else { "render" };
    write_run_info(&a.out, cmd, json!({ "checkpoint": a.checkpoint, "data": a.data, "traversal": a.traversal, "frame": a.frame }))?;
    if !layers {
        let (_, rgb) = render_aligned(&ck.model, &view)?;
        save_layer(&a.out, "rgb", &rgb, &rgb)?;
        println!("wrote {}", a.out.join("rgb.png").display());
        return Ok(EXIT_OK);
    }
    let d = decompose(&ck.model, &view)?;
    save_layer(&a.out, "rgb", &d.rgb, &d.rgb)?;
    save_layer(&a.out, "aligned_rgb", &d.aligned_rgb, &d.aligned_rgb)?;
    save_layer(&a.out, "material", &d.material, &d.material)?;
    save_layer(&a.out, "illumination", &d.illumination, &d.illumination)?;
    save_layer(&a.out, "normal", &d.normal, &normal_preview(&d.normal))?;
    let max_depth = d.depth.data.iter().fold(0f32, |m, v| m.max(*v));
    let depth_preview = d.depth.map(|v| if max_depth > 0.0 { v / max_depth } else { 0.0 });
    save_layer(&a.out, "depth", &d.depth, &depth_preview)?;
    save_layer(&a.out, "static_mask", &d.static_mask, &d.static_mask)?;
    write_json(
        &a.out.join("layers.json"),
        &json!({
            "rgb": "pre-alignment render; rgb = material * illumination wherever material >= the floor",
            "aligned_rgb": "render after the traversal's affine color alignment, clamped to [0, 1]",
            "illumination": format!("rgb / max(material, {ILLUMINATION_EPS})"),
            "normal_png": "(n + 1) / 2 per channel",
            "depth_png": format!("depth / {max_depth}"),
        }),
    )?;
    println!("wrote decomposition layers to {}", a.out.display());
    Ok(EXIT_OK)
}

fn relight_cmd(a: RelightArgs) -> Result<i32> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let src_view = view_for(&dataset, a.material_traversal, a.frame)?;
    let dst_view = view_for(&dataset, a.light_traversal, a.frame)?;
    write_run_info(
        &a.out,
        "relight",
        json!({ "checkpoint": a.checkpoint, "data": a.data, "material_traversal": a.material_traversal,
                "light_traversal": a.light_traversal, "frame": a.frame }),
    )?;
    let relit = relight(&ck.model, &src_view.camera, a.material_traversal, a.light_traversal, dst_view.tau)?;
    let material = decompose(&ck.model, &src_view)?.material;
    let gt = |v: &View, m: usize| -> Result<Image<f32>> {
        match dataset.find(m, a.frame) {
            Some(f) => Ok(f.rgb.clone()),
            None => Ok(render_aligned(&ck.model, v)?.1),
        }
    };
    let source = gt(&src_view, a.material_traversal)?;
    let target = gt(&dst_view, a.light_traversal)?;
    save_layer(&a.out, "relit", &relit, &relit)?;
    write_png(&a.out.join("strip.png"), &hstack(&[&source, &target, &material, &relit])?)?;
    println!("wrote {} and strip.png (source, target, material, relit)", a.out.join("relit.png").display());
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs) -> Result<i32> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    write_run_info(&a.out, "eval", json!({ "checkpoint": a.checkpoint, "data": a.data, "split": split }))?;
    let report = evaluate(&ck.model, &dataset, split)?;
    write_eval(&a.out, &report)?;
    print!("{}", report.table());
    Ok(EXIT_OK)
}

pub fn print_grad_report(r: &GradCheckReport) {
    println!("{:<16} {:>8} {:>14}  {}", "class", "checked", "worst rel err", "worst entry");
    for c in &r.classes {
        let flag = if c.passed { "ok" } else { "FAIL" };
        println!("{:<16} {:>8} {:>14.3e}  {} {flag}", c.class, c.checked, c.worst_rel_err, c.worst_at);
    }
}

fn grad_check(a: GradCheckArgs) -> Result<i32> {
    let scale = match a.scale {
        ScaleArg::Small => Scale::Small,
        ScaleArg::Full => Scale::Full,
    };
    let report = gradcheck::run(scale, a.seed, a.inject_fault.as_deref())?;
    print_grad_report(&report);
    if let Some(dir) = &a.out {
        write_run_info(dir, "grad-check", json!({ "scale": format!("{:?}", a.scale).to_lowercase(), "seed": a.seed }))?;
        write_json(&dir.join("grad_check.json"), &report)?;
    }
    if report.passed {
        println!("gradient check passed ({} classes, {} splats)", report.classes.len(), report.splats);
        Ok(EXIT_OK)
    } else {
        for c in report.classes.iter().filter(|c| !c.passed) {
            eprintln!("gradient check failed for class {} at {} (relative error {:.3e})", c.class, c.worst_at, c.worst_rel_err);
        }
        Ok(EXIT_VERIFY)
    }
}
