use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::json;
use viewrel_core::dataset::{
    read_predictions, read_samples, render_prompt, write_predictions, DatasetManifest,
    DatasetWriter, SceneIndex,
};
use viewrel_core::eval::{evaluate, run_solver, SolverOptions};
use viewrel_core::sampler::{
    bundle_dirs, generate_dataset, validate_sample, GenerateOptions, SceneSource, StatsTable,
};
use viewrel_core::scene::{convert_scannet, save_bundle, DEFAULT_BACKGROUND_LABELS};
use viewrel_core::synth::{corpus_member, make_opposed_pair, make_room, SynthConfig};
use viewrel_core::util::{sha256_hex, write_atomic};
use viewrel_core::{GenConfig, Sample, SceneBundle};

use crate::args::*;
use crate::record::{Input, RunRecord};

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Convert(a) => convert(a),
        Command::Generate(a) => generate(a),
        Command::Stats(a) => stats(a),
        Command::Prompts(a) => prompts(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Validate(a) => validate(a),
    }
}

fn pool(workers: Workers) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.workers.max(1))
        .build()
        .context("building worker pool")
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn check_output(out: &Path, force: bool) -> Result<()> {
    if out.exists() && !force {
        bail!(
            "{} already exists (use --force to replace it)",
            out.display()
        );
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            bail!(
                "output parent directory {} does not exist",
                parent.display()
            );
        }
    }
    Ok(())
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

/// Moves a fully written staging directory over `out`.
fn commit_dir(staged: &Path, out: &Path) -> Result<()> {
    if out.exists() {
        fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
    }
    fs::rename(staged, out).with_context(|| format!("moving output into {}", out.display()))
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    check_output(&a.out, a.force)?;
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.instances {
        cfg.n_instances = v;
    }
    if let Some(v) = a.points_per_instance {
        cfg.points_per_instance = v;
    }
    if let Some(v) = a.background_density {
        cfg.background_density = v;
    }
    if let Some(v) = a.poses {
        cfg.pose_count = v;
    }
    if let Some(v) = a.pose_strategy {
        cfg.pose_strategy = v;
    }
    cfg.validate()?;

    let opposed = a.opposed;
    let scenes: Vec<SceneBundle> = pool(a.workers)?.install(|| {
        (0..a.scenes)
            .into_par_iter()
            .map(|i| {
                let c = corpus_member(&cfg, i);
                if opposed {
                    make_opposed_pair(&c).map(|(s, _, _)| s)
                } else {
                    make_room(&c)
                }
            })
            .collect::<viewrel_core::Result<Vec<_>>>()
    })?;

    let staged = staging_dir(&a.out);
    if staged.exists() {
        fs::remove_dir_all(&staged)?;
    }
    fs::create_dir_all(&staged)?;
    let result = (|| -> Result<Vec<Input>> {
        let mut inputs = Vec::new();
        for s in &scenes {
            save_bundle(s, &staged.join(s.scene_id()))?;
            log::info!(
                "{}: {} points, {} instances",
                s.scene_id(),
                s.point_count(),
                s.instances().len()
            );
            inputs.push(Input {
                name: s.scene_id().to_string(),
                sha256: s.checksum(),
            });
        }
        Ok(inputs)
    })();
    let outputs = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&staged);
            return Err(e);
        }
    };
    commit_dir(&staged, &a.out)?;
    let config = json!({ "synth": cfg, "scenes": a.scenes, "opposed": opposed });
    // generated scenes are listed with their checksums
    RunRecord::new("synth", config, outputs).write_for(&a.out)?;
    log::info!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn convert(a: ConvertArgs) -> Result<ExitCode> {
    let labels: Vec<String> = a.background_labels.clone().unwrap_or_else(|| {
        DEFAULT_BACKGROUND_LABELS
            .iter()
            .map(|s| s.to_string())
            .collect()
    });
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut inputs = Vec::new();
    for scan in &a.scans {
        let scene = convert_scannet(scan, &labels)
            .with_context(|| format!("converting {}", scan.display()))?;
        let dest = a.out.join(scene.scene_id());
        check_output(&dest, a.force)?;
        let staged = staging_dir(&dest);
        if staged.exists() {
            fs::remove_dir_all(&staged)?;
        }
        save_bundle(&scene, &staged)?;
        commit_dir(&staged, &dest)?;
        log::info!(
            "{}: {} points, {} instances, {} poses",
            scene.scene_id(),
            scene.point_count(),
            scene.instances().len(),
            scene.trajectory().len()
        );
        inputs.push(Input {
            name: scan.display().to_string(),
            sha256: scene.checksum(),
        });
    }
    RunRecord::new("convert", json!({ "background_labels": labels }), inputs).write_for(&a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn generate(a: GenerateArgs) -> Result<ExitCode> {
    check_output(&a.out, a.force)?;
    let mut cfg: GenConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => GenConfig::default(),
    };
    if let Some(v) = a.viewpoints {
        cfg.viewpoints_per_scene = v;
    }
    if let Some(v) = a.strategy {
        cfg.viewpoint_strategy = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.tau {
        cfg.relation.tau = v;
    }
    if let Some(v) = a.min_instance_points {
        cfg.min_instance_points = v;
    }
    if let Some(v) = &a.exclude {
        cfg.exclude_scenes = v.clone();
    }
    cfg.validate()?;

    let sources = bundle_dirs(&a.scenes)?;
    log::info!("{} scenes under {}", sources.len(), a.scenes.display());
    let mut writer = DatasetWriter::create(&a.out, a.shard_by_scene, a.force)?;

    let pair_tmp = a.pair_log.as_ref().map(|p| staging_dir(p));
    let mut pair_file = match &pair_tmp {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let report = generate_dataset(
        &sources,
        &cfg,
        &mut writer,
        GenerateOptions {
            workers: a.workers.workers,
            pair_log: pair_file.as_mut().map(|w| w as &mut dyn Write),
            collect_pairs: false,
        },
    )?;
    let inputs: Vec<Input> = report
        .scenes
        .iter()
        .map(|s| Input {
            name: s.scene_id.clone(),
            sha256: s.checksum.clone(),
        })
        .collect();
    let skipped = report.skipped.len();
    let manifest = writer.finish(
        &cfg,
        report.scenes,
        report.skipped,
        report.excluded,
        &report.stats,
    )?;
    if let (Some(mut w), Some(tmp), Some(dest)) = (pair_file, pair_tmp, &a.pair_log) {
        w.flush()?;
        drop(w);
        fs::rename(&tmp, dest).with_context(|| format!("writing {}", dest.display()))?;
    }
    RunRecord::new("generate", &cfg, inputs).write_for(&a.out)?;
    log::info!(
        "wrote {} samples from {} scenes ({} skipped) to {}",
        manifest.total_samples,
        manifest.scenes.len(),
        skipped,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn recomputed_stats(samples: &[Sample]) -> StatsTable {
    let mut t = StatsTable::default();
    for s in samples {
        t.add(s.relation_set);
    }
    t
}

fn stats(a: StatsArgs) -> Result<ExitCode> {
    let (manifest, samples) = read_samples(&a.dataset)?;
    let table = recomputed_stats(&samples);
    if table != manifest.stats_table()? {
        bail!("manifest statistics disagree with the sample lines");
    }
    if a.json {
        let rows: Vec<_> = table
            .rows()
            .map(|(r, n)| json!({ "relation": r.to_string(), "count": n }))
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({ "rows": rows, "total": table.total() }))?
        );
    } else {
        println!("{table}");
    }
    Ok(ExitCode::SUCCESS)
}

fn prompts(a: PromptsArgs) -> Result<ExitCode> {
    let (_, samples) = read_samples(&a.dataset)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for s in samples.iter().take(a.limit.unwrap_or(usize::MAX)) {
        writeln!(out, "{}\t{}", s.sample_id, render_prompt(s))?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

/// Loads every scene referenced by the dataset and checks it against the
/// checksum recorded at generation time.
fn load_dataset_scenes(
    root: &Path,
    manifest: &DatasetManifest,
) -> Result<HashMap<String, SceneBundle>> {
    let dirs: BTreeMap<String, _> = bundle_dirs(root)?
        .into_iter()
        .map(|d| (d.scene_id.clone(), d))
        .collect();
    manifest
        .scenes
        .par_iter()
        .map(|entry| {
            let dir = dirs.get(&entry.scene_id).with_context(|| {
                format!(
                    "scene {} not found under {}",
                    entry.scene_id,
                    root.display()
                )
            })?;
            let scene = dir.load()?.into_owned();
            if !entry.checksum.is_empty() && scene.checksum() != entry.checksum {
                bail!(
                    "scene {} changed since the dataset was generated",
                    entry.scene_id
                );
            }
            Ok((entry.scene_id.clone(), scene))
        })
        .collect()
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (manifest, samples) = read_samples(&a.dataset)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| sibling(&a.predictions, ".report.json"));
    let (report, scores) = pool(a.workers)?.install(|| -> Result<_> {
        let scenes = load_dataset_scenes(&a.scenes, &manifest)?;
        let index = SceneIndex::new(&samples, scenes.values());
        let preds = read_predictions(&a.predictions, &index)?;
        Ok(evaluate(&samples, &scenes, &preds)?)
    })?;
    println!("{report}");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_atomic(&report_path, text.as_bytes())?;
    if let Some(p) = &a.scores {
        let mut buf = Vec::new();
        for s in &scores {
            serde_json::to_writer(&mut buf, s)?;
            buf.push(b'\n');
        }
        write_atomic(p, &buf)?;
    }
    let pred_bytes = fs::read(&a.predictions)?;
    let inputs = vec![
        Input {
            name: a.dataset.display().to_string(),
            sha256: manifest.determinism_token.clone(),
        },
        Input {
            name: a.predictions.display().to_string(),
            sha256: sha256_hex(&pred_bytes),
        },
    ];
    RunRecord::new("eval", json!({ "report": report_path }), inputs).write_for(&report_path)?;
    Ok(ExitCode::SUCCESS)
}

fn baseline(a: BaselineArgs) -> Result<ExitCode> {
    let (manifest, samples) = read_samples(&a.dataset)?;
    let mut cfg = match &a.config {
        Some(p) => load_toml(p)?,
        None => manifest.config.clone(),
    };
    if let Some(t) = a.tau {
        cfg.relation.tau = t;
    }
    cfg.validate()?;
    let opts = SolverOptions {
        canonical_pose: None,
        canonical_frame: a.canonical_frame,
        seed: a.seed,
    };
    let records = pool(a.workers)?.install(|| -> Result<_> {
        let scenes = load_dataset_scenes(&a.scenes, &manifest)?;
        Ok(run_solver(a.solver, &samples, &scenes, &cfg, &opts)?)
    })?;
    write_predictions(&records, &a.out)?;
    let config = json!({
        "solver": a.solver,
        "seed": a.seed,
        "canonical_frame": a.canonical_frame,
        "generation": cfg,
    });
    let inputs = vec![Input {
        name: a.dataset.display().to_string(),
        sha256: manifest.determinism_token.clone(),
    }];
    RunRecord::new("baseline", config, inputs).write_for(&a.out)?;
    log::info!("wrote {} predictions to {}", records.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let (manifest, samples) = read_samples(&a.dataset)?;
    let violations = pool(a.workers)?.install(|| -> Result<_> {
        let scenes = load_dataset_scenes(&a.scenes, &manifest)?;
        let per_sample: Vec<_> = samples
            .par_iter()
            .map(|s| match scenes.get(&s.scene_id) {
                Some(scene) => validate_sample(s, scene, &manifest.config),
                None => vec![viewrel_core::sampler::Violation {
                    sample_id: s.sample_id.clone(),
                    message: format!("scene {} is not part of the manifest", s.scene_id),
                }],
            })
            .collect();
        Ok(per_sample.into_iter().flatten().collect::<Vec<_>>())
    })?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for v in &violations {
        writeln!(out, "{}", serde_json::to_string(v)?)?;
    }
    out.flush()?;
    let stats_ok = recomputed_stats(&samples) == manifest.stats_table()?;
    if !stats_ok {
        log::error!("manifest statistics disagree with the sample lines");
    }
    log::info!(
        "{} samples checked, {} violations",
        samples.len(),
        violations.len()
    );
    if violations.is_empty() && stats_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
