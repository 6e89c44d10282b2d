use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mpnerf::checkpoint::Checkpoint;
use mpnerf::dataset::toy::{write_toy_collection, write_toy_scene, ToyClass, ToyCollectionSpec, ToyObject, ToySceneSpec};
use mpnerf::dataset::{
    load_cameras, load_multi_object, load_nerf_synthetic, load_reference_set, save_reference_set, LoadOptions, Split,
};
use mpnerf::decoder::DecoderParams;
use mpnerf::eval::{
    ablate_references, ablation_csv, empty_field_report, eval_cross_class, eval_render_config, eval_scene,
    published_scene_psnr, CrossClassMatrix, MetricReport,
};
use mpnerf::geometry::{orbit_pose, Camera};
use mpnerf::render::{render_image, RenderConfig, SamplingMode};
use mpnerf::repr::{mix_references, FeatureMode, ReferenceSet};
use mpnerf::train::{ModelKind, Trainer, TrainingSet};
use serde_json::json;

use crate::config::RunConfig;
use crate::digest::digest_inputs;
use crate::{AblateArgs, CameraArgs, CliError, EvalArgs, GenerateToyArgs, InterpolateArgs, RenderArgs, TrainArgs};

const MIX_PERCENTAGES: [usize; 5] = [0, 20, 40, 60, 80];

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_options(cfg: &RunConfig) -> LoadOptions {
    LoadOptions {
        background: cfg.train.background.map(|c| c as f32),
        downsample: cfg.downsample,
    }
}

fn require_class(cfg: &RunConfig) -> Result<&str, CliError> {
    cfg.class
        .as_deref()
        .ok_or_else(|| CliError::Usage("--collection needs --class".into()))
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = args.flags.resolve()?;
    cfg.train.validate()?;
    let options = load_options(&cfg);
    let (set, digest, object_ids) = match (&cfg.scene, &cfg.collection) {
        (Some(scene), None) => {
            let views = load_nerf_synthetic(scene, Split::Train, &options)?;
            (TrainingSet::single(&views.views, &cfg.train)?, digest_inputs(&[scene])?, None)
        }
        (None, Some(root)) => {
            let class = require_class(&cfg)?;
            if cfg.train.mode != FeatureMode::Generalization || cfg.train.model != ModelKind::MultiPlane {
                return Err(CliError::Usage(
                    "collection training needs --mode generalization with the multi_plane model".into(),
                ));
            }
            let data = load_multi_object(root, class, Split::Train, &options)?;
            if data.objects.len() < 2 {
                return Err(CliError::Core(mpnerf::Error::Validation(format!(
                    "multi-object training needs at least two objects, class `{class}` has {}",
                    data.objects.len()
                ))));
            }
            let set = TrainingSet::multi(&data.objects, &cfg.train)?;
            let digest = digest_inputs(&[&root.join(class)])?;
            let ids: Vec<String> = data.objects.iter().map(|o| o.id.clone()).collect();
            (set, digest, Some(ids))
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --scene or --collection is required".into(),
            ))
        }
    };
    cfg.input_digest = Some(digest);
    let out = &args.out;
    create_dir(out)?;
    cfg.save(&out.join("config.json"))?;
    save_refs(out, &set, object_ids.as_deref())?;

    let metrics_path = out.join("metrics.csv");
    let file = fs::File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    writeln!(metrics, "step,loss,lr").map_err(|e| CliError::io(&metrics_path, e))?;
    let mut timing = String::from("step,elapsed_s\n");
    let started = Instant::now();
    let every = cfg.checkpoint_every;
    let log_every = (cfg.train.iterations / 20).max(1);

    let result = Trainer::<f32>::new(set, cfg.train.clone())?.run(|r, params| {
        writeln!(metrics, "{},{},{}", r.step, r.loss, r.learning_rate)
            .map_err(|e| mpnerf::Error::Validation(format!("writing metrics: {e}")))?;
        let done = r.step + 1;
        if done as usize % log_every == 0 {
            log::info!("step {done}: loss {:.6}", r.loss);
            timing.push_str(&format!("{done},{:.3}\n", started.elapsed().as_secs_f64()));
        }
        if every > 0 && done as usize % every == 0 {
            Checkpoint::from_params(params, done).save(&out.join(format!("checkpoint_{done:06}.json")))?;
        }
        Ok(())
    });
    metrics.flush().map_err(|e| CliError::io(&metrics_path, e))?;
    write_text(&out.join("timing.csv"), &timing)?;
    let params = result?;
    Checkpoint::from_params(&params, cfg.train.iterations as u64).save(&out.join("checkpoint.json"))?;
    log::info!("wrote {}", out.display());
    Ok(())
}

/// Writes the reference images used in training: `refs/` for a scene,
/// `refs/<object id>/` per object for a collection.
fn save_refs(out: &Path, set: &TrainingSet, object_ids: Option<&[String]>) -> Result<(), CliError> {
    for (k, object) in set.objects.iter().enumerate() {
        let Some(refs) = &object.refs else { continue };
        let dir = match object_ids {
            Some(ids) => out.join("refs").join(&ids[k]),
            None => out.join("refs"),
        };
        save_reference_set(&dir, refs)?;
    }
    if let Some(ids) = object_ids {
        let text = serde_json::to_string_pretty(ids).expect("ids serialize");
        write_text(&out.join("objects.json"), &text)?;
    }
    Ok(())
}

struct LoadedRun {
    config: RunConfig,
    params: DecoderParams<f32>,
}

fn load_run(run: &Path) -> Result<LoadedRun, CliError> {
    let config_path = run.join("config.json");
    let config = if config_path.exists() {
        RunConfig::load(&config_path)?
    } else {
        RunConfig::default()
    };
    let params = Checkpoint::load(&run.join("checkpoint.json"))?.to_params::<f32>()?;
    Ok(LoadedRun { config, params })
}

/// References matching the decoder, or `None` for positional-input models.
fn run_refs(run: &LoadedRun, dir: &Path) -> Result<Option<ReferenceSet>, CliError> {
    let Some(layout) = run.params.architecture().feature_layout() else {
        return Ok(None);
    };
    if !dir.join("transforms_refs.json").exists() {
        return Err(CliError::Usage(format!(
            "no reference set at {} (pass --refs)",
            dir.display()
        )));
    }
    let refs = load_reference_set(dir)?;
    check_refs(layout.n_refs, &refs)?;
    Ok(Some(refs))
}

fn check_refs(expected: usize, refs: &ReferenceSet) -> Result<(), CliError> {
    if refs.len() != expected {
        return Err(CliError::Core(mpnerf::Error::Validation(format!(
            "checkpoint expects {expected} references, found {}",
            refs.len()
        ))));
    }
    Ok(())
}

fn cameras(args: &CameraArgs, refs: Option<&ReferenceSet>) -> Result<Vec<Camera>, CliError> {
    let native = refs.map(|r| r.images()[0].camera());
    let resolution = args
        .resolution
        .or(native.map(|c| c.width()))
        .ok_or_else(|| CliError::Usage("--resolution is required without references".into()))?;
    let fov = native.map(|c| c.fov_x()).unwrap_or(mpnerf::dataset::toy::SYNTHETIC_FOV_X);
    match (&args.poses, args.orbit) {
        (Some(file), None) => Ok(load_cameras(file, resolution, resolution)?),
        (None, Some(n)) if n > 0 => (0..n)
            .map(|i| {
                let pose = orbit_pose(i as f64 * TAU / n as f64, args.elevation_deg.to_radians(), args.radius)?;
                Ok(Camera::from_fov_x(resolution, resolution, fov, pose)?)
            })
            .collect(),
        _ => Err(CliError::Usage("give either --poses FILE or --orbit N (N >= 1)".into())),
    }
}

fn render_config(run: &LoadedRun, seed: Option<u64>) -> RenderConfig {
    let mut cfg = eval_render_config(&run.config.train.render_config(SamplingMode::Midpoint));
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg
}

fn render_all(
    params: &DecoderParams<f32>,
    refs: Option<&ReferenceSet>,
    cameras: &[Camera],
    cfg: &RenderConfig,
    out: &Path,
) -> Result<(), CliError> {
    create_dir(out)?;
    for (i, cam) in cameras.iter().enumerate() {
        let img = render_image(params, refs, cam, cfg)?;
        img.save_png(&out.join(format!("view_{i:03}.png")))?;
    }
    log::info!("rendered {} views into {}", cameras.len(), out.display());
    Ok(())
}

pub fn render(args: RenderArgs) -> Result<(), CliError> {
    let run = load_run(&args.run)?;
    let refs_dir = args.refs.clone().unwrap_or_else(|| args.run.join("refs"));
    let mut refs = run_refs(&run, &refs_dir)?;
    if let (Some(other), Some(k)) = (&args.mix_refs, args.mix) {
        let a = refs
            .as_ref()
            .ok_or_else(|| CliError::Usage("--mix needs a multi-image checkpoint".into()))?;
        let b = load_reference_set(other)?;
        refs = Some(mix_references(a, &b, k)?);
    }
    let cams = cameras(&args.camera, refs.as_ref())?;
    render_all(&run.params, refs.as_ref(), &cams, &render_config(&run, args.seed), &args.out)
}

pub fn interpolate(args: InterpolateArgs) -> Result<(), CliError> {
    let run = load_run(&args.run)?;
    let refs_dir = args.refs.clone().unwrap_or_else(|| args.run.join("refs"));
    let a = run_refs(&run, &refs_dir)?
        .ok_or_else(|| CliError::Usage("interpolation needs a multi-image checkpoint".into()))?;
    let b = load_reference_set(&args.mix_refs)?;
    check_refs(a.len(), &b)?;
    let cams = cameras(&args.camera, Some(&a))?;
    let cfg = render_config(&run, args.seed);
    for pct in MIX_PERCENTAGES {
        let k = (pct * a.len() + 50) / 100;
        let mixed = mix_references(&a, &b, k)?;
        render_all(&run.params, Some(&mixed), &cams, &cfg, &args.out.join(format!("mix_{pct:02}")))?;
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse().map_err(|e: mpnerf::Error| CliError::Usage(e.to_string()))
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    if let Some(runs) = &args.matrix {
        return eval_matrix(runs, split, args.views_per_object, &args.out);
    }
    let run_dir = args.run.as_ref().expect("clap enforces --run without --matrix");
    let run = load_run(run_dir)?;
    let options = load_options(&run.config);
    let render = eval_render_config(&run.config.train.render_config(SamplingMode::Midpoint));

    let (report, empty) = match (&args.scene, &run.config.collection) {
        (None, Some(root)) => {
            let class = require_class(&run.config)?;
            let data = load_multi_object(root, class, split, &options)?;
            let report = eval_cross_class(&run.params, &data.objects, &run.config.train, args.views_per_object)?;
            (report, None)
        }
        (scene, _) => {
            let scene = scene
                .clone()
                .or(run.config.scene.clone())
                .ok_or_else(|| CliError::Usage("--scene is required".into()))?;
            let views = load_nerf_synthetic(&scene, split, &options)?;
            let refs = run_refs(&run, &run_dir.join("refs"))?;
            let report = eval_scene(&views.name, &run.params, refs.as_ref(), &views.views, &render)?;
            let empty = empty_field_report(&views.name, &views.views, run.config.train.background)?;
            (report, Some(empty))
        }
    };
    write_report(&report, empty.as_ref(), &args.out)
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn write_report(report: &MetricReport, empty: Option<&MetricReport>, out: &Path) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report.write_csv(out)?;
    let summary = json!({
        "scene": report.scene,
        "views": report.views.len(),
        "mean_psnr": finite_or_null(report.mean_psnr()),
        "mean_ssim": finite_or_null(report.mean_ssim()),
        "empty_field_psnr": empty.map(|e| finite_or_null(e.mean_psnr())),
        "published_full_resolution_psnr": published_scene_psnr(&report.scene),
    });
    let summary_path = out.with_extension("json");
    write_text(&summary_path, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    log::info!(
        "{}: mean PSNR {:.3} dB, mean SSIM {:.4} over {} rows",
        report.scene,
        report.mean_psnr(),
        report.mean_ssim(),
        report.views.len()
    );
    Ok(())
}

fn eval_matrix(runs: &[PathBuf], split: Split, views_per_object: usize, out: &Path) -> Result<(), CliError> {
    let loaded = runs.iter().map(|r| load_run(r)).collect::<Result<Vec<_>, _>>()?;
    let mut classes = Vec::new();
    for run in &loaded {
        classes.push(require_class(&run.config)?.to_string());
        if run.config.collection.is_none() {
            return Err(CliError::Usage("matrix runs must be collection runs".into()));
        }
    }
    let mut psnr = Vec::new();
    for run in &loaded {
        let root = run.config.collection.as_ref().expect("checked above");
        let options = load_options(&run.config);
        let row = classes
            .iter()
            .map(|class| {
                let data = load_multi_object(root, class, split, &options)?;
                let report = eval_cross_class(&run.params, &data.objects, &run.config.train, views_per_object)?;
                Ok(report.mean_psnr())
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        psnr.push(row);
    }
    let matrix = CrossClassMatrix {
        train_classes: classes.clone(),
        test_classes: classes,
        psnr,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &matrix.to_csv())?;
    log::info!("wrote cross-class matrix to {}", out.display());
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let mut cfg = args.flags.resolve()?;
    cfg.train.validate()?;
    let scene = cfg
        .scene
        .clone()
        .ok_or_else(|| CliError::Usage("ablation needs --scene".into()))?;
    let options = load_options(&cfg);
    let train = load_nerf_synthetic(&scene, Split::Train, &options)?;
    let mut test = load_nerf_synthetic(&scene, Split::Test, &options)?;
    if args.test_views > 0 {
        test.views.truncate(args.test_views);
    }
    let resolutions = if args.resolutions.is_empty() {
        vec![train.resolution().0]
    } else {
        args.resolutions.clone()
    };
    cfg.input_digest = Some(digest_inputs(&[&scene])?);
    create_dir(&args.out)?;
    cfg.save(&args.out.join("config.json"))?;
    let rows = ablate_references(&train.views, &test.views, &args.counts, &resolutions, &cfg.train)?;
    write_text(&args.out.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(())
}

pub fn generate_toy(args: GenerateToyArgs) -> Result<(), CliError> {
    match args.kind.as_str() {
        "scene" => {
            let spec = ToySceneSpec {
                resolution: args.resolution,
                train_views: args.train_views,
                val_views: 0,
                test_views: args.test_views,
                seed: args.seed,
            };
            write_toy_scene(&args.out, &ToyObject::desk_scene(), &spec)?;
        }
        "collection" => {
            let classes = args
                .classes
                .iter()
                .map(|name| {
                    ToyClass::ALL
                        .into_iter()
                        .find(|c| c.name() == name)
                        .ok_or_else(|| CliError::Usage(format!("unknown toy class `{name}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let spec = ToyCollectionSpec {
                classes,
                train_objects: args.train_objects,
                test_objects: args.test_objects,
                resolution: args.resolution,
                seed: args.seed,
            };
            write_toy_collection(&args.out, &spec)?;
        }
        other => return Err(CliError::Usage(format!("unknown toy kind `{other}`"))),
    }
    log::info!("wrote {}", args.out.display());
    Ok(())
}
