use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use viewrel_core::dataset::{
    read_predictions, read_samples, rle_encode, write_predictions, DatasetWriter, PredictionMask,
    PredictionRecord, SceneIndex,
};
use viewrel_core::eval::{evaluate, random_solver, run_solver, Solver, SolverOptions};
use viewrel_core::relations::pointwise_oracle;
use viewrel_core::sampler::{
    bundle_dirs, compute_stats, generate_dataset, validate_sample, GenerateOptions, ViewContext,
};
use viewrel_core::scene::{instance_points, save_bundle};
use viewrel_core::synth::{make_corpus, make_room, SynthConfig};
use viewrel_core::{
    valid_relation_sets, CameraPose, GenConfig, RelationConfig, RelationLabel, RelationSet, Sample,
    SceneBundle,
};

fn small() -> SynthConfig {
    SynthConfig {
        n_instances: 8,
        points_per_instance: 120,
        background_density: 4.0,
        pose_count: 12,
        ..Default::default()
    }
}

fn generate(
    scenes: &[SceneBundle],
    cfg: &GenConfig,
    shard: bool,
) -> (tempfile::TempDir, Vec<Sample>) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let mut w = DatasetWriter::create(&out, shard, false).unwrap();
    let r = generate_dataset(scenes, cfg, &mut w, GenerateOptions::default()).unwrap();
    w.finish(cfg, r.scenes, r.skipped, r.excluded, &r.stats)
        .unwrap();
    let (_, samples) = read_samples(&out).unwrap();
    (dir, samples)
}

#[test]
fn bundles_on_disk_generate_the_same_dataset() {
    let scenes = make_corpus(&SynthConfig { seed: 3, ..small() }, 3).unwrap();
    let cfg = GenConfig {
        viewpoints_per_scene: 4,
        ..Default::default()
    };
    let root = tempfile::tempdir().unwrap();
    for s in &scenes {
        save_bundle(s, &root.path().join(s.scene_id())).unwrap();
    }
    let dirs = bundle_dirs(root.path()).unwrap();
    assert_eq!(dirs.len(), 3);

    let out = root.path().join("ds");
    let mut w = DatasetWriter::create(&out, true, false).unwrap();
    let r = generate_dataset(&dirs, &cfg, &mut w, GenerateOptions::default()).unwrap();
    let m = w
        .finish(&cfg, r.scenes, r.skipped, r.excluded, &r.stats)
        .unwrap();
    let (_, from_disk) = read_samples(&out).unwrap();

    let (_keep, in_memory) = generate(&scenes, &cfg, false);
    assert_eq!(from_disk, in_memory);
    assert_eq!(compute_stats(&out).unwrap(), m.stats_table().unwrap());
    assert!(!from_disk.is_empty());

    let by_id: HashMap<&str, &SceneBundle> = scenes.iter().map(|s| (s.scene_id(), s)).collect();
    for s in &from_disk {
        assert!(
            validate_sample(s, by_id[s.scene_id.as_str()], &cfg).is_empty(),
            "{}",
            s.sample_id
        );
    }
}

#[test]
fn validation_notices_a_different_tau() {
    let scenes = make_corpus(&SynthConfig { seed: 8, ..small() }, 2).unwrap();
    let cfg = GenConfig {
        viewpoints_per_scene: 4,
        ..Default::default()
    };
    let (_d, samples) = generate(&scenes, &cfg, false);
    let loose = GenConfig {
        relation: RelationConfig {
            tau: 2.0,
            ..cfg.relation
        },
        ..cfg.clone()
    };
    let by_id: HashMap<&str, &SceneBundle> = scenes.iter().map(|s| (s.scene_id(), s)).collect();
    let broken = samples
        .iter()
        .filter(|s| !validate_sample(s, by_id[s.scene_id.as_str()], &loose).is_empty())
        .count();
    assert!(broken > 0);
}

#[test]
fn rle_and_instance_predictions_score_the_same() {
    let scenes = make_corpus(&SynthConfig { seed: 4, ..small() }, 2).unwrap();
    let cfg = GenConfig {
        viewpoints_per_scene: 3,
        ..Default::default()
    };
    let (_d, samples) = generate(&scenes, &cfg, false);
    let map: HashMap<String, SceneBundle> = scenes
        .iter()
        .map(|s| (s.scene_id().to_string(), s.clone()))
        .collect();
    let blind = run_solver(
        Solver::Blind,
        &samples,
        &map,
        &cfg,
        &SolverOptions::default(),
    )
    .unwrap();
    let as_rle: Vec<PredictionRecord> = blind
        .iter()
        .map(|r| {
            let scene = &map[&samples
                .iter()
                .find(|s| s.sample_id == r.sample_id)
                .unwrap()
                .scene_id];
            PredictionRecord {
                sample_id: r.sample_id.clone(),
                mask: PredictionMask::Rle(rle_encode(&r.mask.to_points(scene).unwrap())),
            }
        })
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let index = SceneIndex::new(&samples, &scenes);
    let mut reports = Vec::new();
    for (name, records) in [("inst.jsonl", &blind), ("rle.jsonl", &as_rle)] {
        let path = dir.path().join(name);
        write_predictions(records.iter(), &path).unwrap();
        let preds = read_predictions(&path, &index).unwrap();
        assert_eq!(preds.records.len(), samples.len());
        reports.push(evaluate(&samples, &map, &preds).unwrap());
    }
    assert_eq!(reports[0].1, reports[1].1);
    assert_eq!(reports[0].0.miou, reports[1].0.miou);
}

#[test]
fn random_solver_matches_chance() {
    let scenes = make_corpus(
        &SynthConfig {
            seed: 12,
            ..small()
        },
        3,
    )
    .unwrap();
    let cfg = GenConfig {
        viewpoints_per_scene: 6,
        ..Default::default()
    };
    let (_d, samples) = generate(&scenes, &cfg, false);
    let by_id: HashMap<&str, &SceneBundle> = scenes.iter().map(|s| (s.scene_id(), s)).collect();
    // a random pick scores 1 when it lands on a target and 0 otherwise
    let mut expected = 0.0;
    let mut observed = 0.0;
    let mut n = 0.0;
    for s in &samples {
        let scene = by_id[s.scene_id.as_str()];
        let eligible = ViewContext::new(scene, &s.pose, &cfg).eligible.len() as f64;
        for seed in 0..8 {
            let pred = random_solver(s, scene, &cfg, seed).unwrap();
            let pts = pred.mask.to_points(scene).unwrap();
            let hit = s
                .target_ids
                .iter()
                .any(|&t| scene.instance(t).unwrap().point_indices == pts);
            observed += f64::from(u8::from(hit));
            expected += s.target_ids.len() as f64 / eligible;
            n += 1.0;
        }
    }
    assert!(n > 1000.0);
    assert!(
        (observed / n - expected / n).abs() < 0.03,
        "{} vs {}",
        observed / n,
        expected / n
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Targets equal the eligible instances whose raw points satisfy every relation.
    #[test]
    fn targets_match_pointwise_recomputation(seed in 0u64..10_000) {
        let scene = make_room(&SynthConfig { seed, pose_count: 3, ..small() }).unwrap();
        let cfg = GenConfig::default();
        let rel = cfg.relation_for(&scene);
        let (_d, samples) = generate(std::slice::from_ref(&scene), &cfg, false);
        let emitted: BTreeMap<(usize, u32, RelationSet), &Sample> = samples
            .iter()
            .map(|s| ((s.viewpoint_id, s.anchor_id, s.relation_set), s))
            .collect();
        let viewpoints: BTreeMap<usize, CameraPose> = samples.iter().map(|s| (s.viewpoint_id, s.pose)).collect();
        for (&vid, pose) in &viewpoints {
            let ctx = ViewContext::new(&scene, pose, &cfg);
            for &a in &ctx.eligible {
                let anchor = instance_points(&scene, a).unwrap();
                let masks: Vec<_> = ctx
                    .eligible
                    .iter()
                    .filter(|&&t| t != a)
                    .map(|&t| {
                        let pts = instance_points(&scene, t).unwrap();
                        let held: Vec<_> = RelationLabel::ALL
                            .into_iter()
                            .filter(|&r| pointwise_oracle(r, &pts, &anchor, pose, &rel).unwrap())
                            .collect();
                        held
                    })
                    .collect();
                for &set in valid_relation_sets() {
                    let any = masks.iter().any(|held| set.labels().all(|r| held.contains(&r)));
                    prop_assert_eq!(any, emitted.contains_key(&(vid, a, set)), "viewpoint {} anchor {} {}", vid, a, set);
                }
            }
        }
        for s in &samples {
            let ctx = ViewContext::new(&scene, &s.pose, &cfg);
            prop_assert!(ctx.eligible.contains(&s.anchor_id));
            let anchor = instance_points(&scene, s.anchor_id).unwrap();
            let mut want = Vec::new();
            for &t in &ctx.eligible {
                if t == s.anchor_id {
                    continue;
                }
                let pts = instance_points(&scene, t).unwrap();
                let all = s
                    .relation_set
                    .labels()
                    .all(|r| pointwise_oracle(r, &pts, &anchor, &s.pose, &rel).unwrap());
                if all {
                    want.push(t);
                }
            }
            prop_assert_eq!(&s.target_ids, &want);
        }
    }
}
