use fcrl::config::{ExperimentConfig, Family};
use fcrl::downstream::Task;
use fcrl::experiment::{read_metrics_csv, reproduce, run, Job, RunManifest, RunOptions, CHECKPOINT_FILE, METRICS_FILE};

fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(Family::Sinusoid);
    c.seed = Some(seed);
    c.data.n_train = 96;
    c.data.n_val = 0;
    c.data.n_test = 24;
    c.encoder.batch_size = 32;
    c.encoder.epochs = 2;
    c.encoder.d_repr = 8;
    c.decoder.epochs = 2;
    c.decoder.batch_size = 32;
    c.decoder.hidden = 8;
    c.eval.seeds = vec![0, 1];
    c
}

fn opts(root: &std::path::Path) -> RunOptions {
    RunOptions {
        out_root: root.to_path_buf(),
        data_dir: None,
        force: false,
        reuse: false,
    }
}

#[test]
fn sinusoid_pipeline_writes_and_reproduces_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(5);
    let (enc_dir, enc) = run(&Job::TrainEncoder, &cfg, &opts(tmp.path())).unwrap();
    assert_eq!(enc_dir, tmp.path().join(&enc.run_id));
    assert!(enc_dir.join(CHECKPOINT_FILE).exists());
    assert_eq!(enc.files, ["checkpoint.bin", "curve.csv"]);

    let dec_job = Job::TrainDecoder {
        encoder_run: enc_dir.clone(),
        task: Task::Fsr,
        shots: None,
    };
    let (dec_dir, dec) = run(&dec_job, &cfg, &opts(tmp.path())).unwrap();
    assert_eq!(dec.inputs[0].run_id, enc.run_id);

    let eval_job = Job::Evaluate {
        model_run: dec_dir.clone(),
        task: None,
    };
    let (eval_dir, eval) = run(&eval_job, &cfg, &opts(tmp.path())).unwrap();
    let metrics = read_metrics_csv(&eval_dir.join(METRICS_FILE)).unwrap();
    // shots {5, 20} × seeds {0, 1}
    assert_eq!(metrics.len(), 4);
    assert!(metrics.iter().all(|m| m.task == Task::Fsr && m.metric == "mse" && m.run_id == eval.run_id));
    assert!(metrics.iter().all(|m| m.model == "fcrl" && m.value.is_finite()));

    for dir in [&enc_dir, &dec_dir, &eval_dir] {
        let report = reproduce(dir).unwrap();
        assert!(report.identical(), "{report:?}");
    }
    let loaded = RunManifest::load(&eval_dir).unwrap();
    assert_eq!(loaded, eval);
}

#[test]
fn existing_output_needs_force_or_reuse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(1);
    let (dir, _) = run(&Job::TrainCnp, &cfg, &opts(tmp.path())).unwrap();
    let err = run(&Job::TrainCnp, &cfg, &opts(tmp.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let mut forced = opts(tmp.path());
    forced.force = true;
    let (again, _) = run(&Job::TrainCnp, &cfg, &forced).unwrap();
    assert_eq!(dir, again);
    let mut reuse = opts(tmp.path());
    reuse.reuse = true;
    let before = std::fs::metadata(dir.join(CHECKPOINT_FILE)).unwrap().modified().unwrap();
    let (kept, manifest) = run(&Job::TrainCnp, &cfg, &reuse).unwrap();
    assert_eq!(kept, dir);
    assert_eq!(manifest, RunManifest::load(&dir).unwrap());
    assert_eq!(std::fs::metadata(dir.join(CHECKPOINT_FILE)).unwrap().modified().unwrap(), before);
}

#[test]
fn run_ids_follow_config_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, _) = run(&Job::TrainEncoder, &tiny_config(1), &opts(tmp.path())).unwrap();
    let (b, _) = run(&Job::TrainEncoder, &tiny_config(2), &opts(tmp.path())).unwrap();
    assert_ne!(a, b);
}

#[test]
fn cnp_runs_evaluate_natively_and_with_probes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(2);
    let (cnp_dir, _) = run(&Job::TrainCnp, &cfg, &opts(tmp.path())).unwrap();
    for task in [Task::Fsr, Task::Fspi] {
        let job = Job::Evaluate {
            model_run: cnp_dir.clone(),
            task: Some(task),
        };
        let (dir, m) = run(&job, &cfg, &opts(tmp.path())).unwrap();
        assert_eq!(m.model.as_str(), "cnp");
        let rows = read_metrics_csv(&dir.join(METRICS_FILE)).unwrap();
        assert!(rows.iter().all(|r| r.task == task && r.model == "cnp"));
    }
}

#[test]
fn upstream_problems_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(3);
    let missing = Job::TrainDecoder {
        encoder_run: tmp.path().join("nope"),
        task: Task::Fsr,
        shots: None,
    };
    assert_eq!(run(&missing, &cfg, &opts(tmp.path())).unwrap_err().exit_code(), 3);

    let (enc_dir, _) = run(&Job::TrainEncoder, &cfg, &opts(tmp.path())).unwrap();
    let fsr_without_head = Job::Evaluate {
        model_run: enc_dir.clone(),
        task: Some(Task::Fsr),
    };
    assert_eq!(run(&fsr_without_head, &cfg, &opts(tmp.path())).unwrap_err().exit_code(), 3);

    let mut other = cfg.clone();
    other.encoder.d_repr = 12;
    let mismatched = Job::TrainDecoder {
        encoder_run: enc_dir.clone(),
        task: Task::Fsr,
        shots: None,
    };
    assert_eq!(run(&mismatched, &other, &opts(tmp.path())).unwrap_err().exit_code(), 2);

    let wrong_family = Job::TrainDecoder {
        encoder_run: enc_dir,
        task: Task::Fscc,
        shots: Some(50),
    };
    assert_eq!(run(&wrong_family, &cfg, &opts(tmp.path())).unwrap_err().exit_code(), 2);

    let mut unseeded = cfg;
    unseeded.seed = None;
    assert_eq!(run(&Job::TrainEncoder, &unseeded, &opts(tmp.path())).unwrap_err().exit_code(), 2);
}

#[test]
fn tampered_input_breaks_reproduction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(4);
    let (enc_dir, _) = run(&Job::TrainEncoder, &cfg, &opts(tmp.path())).unwrap();
    let job = Job::TrainDecoder {
        encoder_run: enc_dir.clone(),
        task: Task::Fspi,
        shots: None,
    };
    let (dec_dir, _) = run(&job, &cfg, &opts(tmp.path())).unwrap();
    // Swap in another seed's encoder behind the recorded run.
    let (other_dir, _) = run(&Job::TrainEncoder, &tiny_config(9), &opts(tmp.path())).unwrap();
    std::fs::copy(other_dir.join(CHECKPOINT_FILE), enc_dir.join(CHECKPOINT_FILE)).unwrap();
    assert!(reproduce(&dec_dir).is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |name: &str| ExperimentConfig::load(&dir.join(name)).unwrap();
    let mut sinusoid = ExperimentConfig::defaults(Family::Sinusoid);
    sinusoid.seed = Some(0);
    assert_eq!(load("sinusoid.toml"), sinusoid);
    let mut mnist = ExperimentConfig::defaults(Family::Mnist);
    mnist.seed = Some(0);
    assert_eq!(load("mnist.toml"), mnist);
    let desk = load("mnist-desk.toml");
    assert_eq!((desk.data.n_train, desk.encoder.epochs, desk.encoder.bounds.n_context_min), (10_000, 10, 200));
}
