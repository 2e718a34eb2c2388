use std::collections::HashMap;

use deepsei::config::RunConfig;
use deepsei::pipeline::{self, RawData, WeekFeatures};
use deepsei::synth;

fn small(noise: f64, seed: u64) -> RunConfig {
    RunConfig {
        synth_agents: 40,
        synth_weeks: 2,
        synth_noise: noise,
        synth_seed: seed,
        rows: 80,
        cols: 80,
        pretrain_epochs: 10,
        joint_epochs: 10,
        sg_epochs: 5,
        ..RunConfig::default()
    }
}

fn weeks(cfg: &RunConfig) -> (Vec<WeekFeatures>, HashMap<String, usize>) {
    let world = synth::generate_world(&cfg.world_config().unwrap()).unwrap();
    let raw = RawData {
        trajectories: synth::generate_trajectories(&world, cfg.execution()),
        pois: world.pois.clone(),
        prices: world.prices.clone(),
    };
    let truth = world.agents.iter().map(|a| (a.id.clone(), a.label.class_index)).collect();
    (pipeline::preprocess_all(&raw, cfg).unwrap().weeks, truth)
}

#[test]
fn noise_free_labels_survive_the_pipeline() {
    for classes in [2, 3, 5] {
        let mut cfg = small(0.0, 4);
        cfg.num_classes = classes;
        let (w, truth) = weeks(&cfg);
        assert_eq!(w.len(), cfg.synth_agents * cfg.synth_weeks, "C={classes}");
        for wk in &w {
            assert_eq!(wk.label.class_index, truth[&wk.user_id], "C={classes} {}", wk.user_id);
        }
    }
}

#[test]
fn more_schedule_noise_never_helps() {
    let mut ordered = 0;
    let mut seen = Vec::new();
    for seed in 1..=3 {
        let accs: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&noise| {
                let cfg = small(noise, seed);
                let (w, _) = weeks(&cfg);
                let run = pipeline::train_run(&w, &cfg).unwrap();
                let test = pipeline::pick(&w, &run.test_idx);
                pipeline::classification_metrics(&run.checkpoint, &test, cfg.execution()).unwrap()[0].value
            })
            .collect();
        ordered += usize::from(accs.windows(2).all(|p| p[0] >= p[1]));
        seen.push(accs);
    }
    assert!(ordered >= 2, "{seen:?}");
}

#[test]
fn external_tables_match_the_built_in_warm_start() {
    let mut cfg = small(0.1, 2);
    cfg.pretrain_epochs = 1;
    cfg.joint_epochs = 1;
    let (w, _) = weeks(&cfg);
    let tables = pipeline::pretrain_from_weeks(&w, &cfg).unwrap();
    let external = pipeline::train_run_with(&w, &cfg, Some(&tables)).unwrap();
    let internal = pipeline::train_run(&w, &cfg).unwrap();
    assert_eq!(external.checkpoint.model, internal.checkpoint.model);

    cfg.skipgram = false;
    let cold = pipeline::train_run(&w, &cfg).unwrap();
    assert_ne!(cold.checkpoint.model, internal.checkpoint.model);
}
