use critical_points::cpl::{cpl_select, gather_rows, output_max, SelectionMode};
use critical_points::cpnet::{
    ablate, ablation_csv, evaluate, gen_shapes, initial_loss, predict_logits, predictions, train,
    AblationGrid, Checkpoint, CpnetError, DownsampleMode, Model, NetworkConfig, ShapeDataset, Split,
    TrainConfig,
};
use critical_points::pcio::{rng_from_seed, Point3};
use rand::seq::SliceRandom;
use rand::Rng;

fn tiny(ratio: usize) -> NetworkConfig {
    NetworkConfig {
        input_points: 64,
        knn: 6,
        edgeconv_widths: vec![8],
        bottleneck: 16,
        ratios: vec![ratio],
        fc_dims: vec![16],
        ..Default::default()
    }
}

fn tiny_data() -> ShapeDataset {
    ShapeDataset {
        train_per_class: 6,
        test_per_class: 4,
        points: 64,
        ..Default::default()
    }
}

fn generic_cloud(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

#[test]
fn classifier_point_counts() {
    let cfg = NetworkConfig {
        input_points: 256,
        bottleneck: 32,
        edgeconv_widths: vec![16],
        ..Default::default()
    };
    let model = Model::build_classifier(cfg.clone()).unwrap();
    assert_eq!(model.point_counts(), vec![256, 256, 64, 64]);
    let cloud = generic_cloud(256, 1);
    let tape = critical_points::nn::Tape::new();
    let mut s = critical_points::nn::Session::new(&tape, model.params(), false, 0);
    let out = model.forward(&mut s, &[&cloud], 0).unwrap();
    assert_eq!(out.point_counts, vec![256, 256, 64, 64]);
    assert_eq!(out.kept[0][0].len(), 64);

    let none = Model::build_classifier(NetworkConfig {
        downsample: DownsampleMode::None,
        ..cfg
    })
    .unwrap();
    assert_eq!(none.point_counts(), vec![256; 4]);
}

#[test]
fn bottleneck_sets_head_input_width() {
    let model = Model::build_classifier(NetworkConfig {
        bottleneck: 64,
        edgeconv_widths: vec![16],
        ..Default::default()
    })
    .unwrap();
    assert_eq!(model.pooled_width(), 64);
    let id = model.params().find("head.0.weight").unwrap();
    assert_eq!(model.params().get(id).rows, 64);
}

#[test]
fn cascade_counts_and_concatenation() {
    let cfg = NetworkConfig {
        input_points: 256,
        edgeconv_widths: vec![16],
        bottleneck: 16,
        ratios: vec![4, 4],
        ..Default::default()
    };
    let model = Model::build_cascade(cfg.clone()).unwrap();
    assert_eq!(model.point_counts(), vec![256, 256, 64, 64, 16, 16]);
    assert!(matches!(Model::build_classifier(cfg.clone()), Err(CpnetError::ConfigInvalid(_))));

    let plain = Model::build_classifier(NetworkConfig { ratios: vec![4], ..cfg.clone() }).unwrap();
    let skip = Model::build_classifier(NetworkConfig {
        ratios: vec![4],
        concat_skip: true,
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(skip.stage_input_widths()[0], 2 * plain.stage_input_widths()[0]);

    let cloud = generic_cloud(256, 2);
    let logits = Model::build_cascade(NetworkConfig { concat_skip: true, ..cfg })
        .unwrap()
        .logits(&[&cloud], 0)
        .unwrap();
    assert_eq!(logits.shape(), (1, 4));
}

#[test]
fn single_stage_cascade_is_the_classifier() {
    let cfg = tiny(4);
    let a = Model::build_cascade(cfg.clone()).unwrap();
    let b = Model::build_classifier(cfg).unwrap();
    assert_eq!(a.params(), b.params());
    let cloud = generic_cloud(64, 3);
    assert_eq!(a.logits(&[&cloud], 0).unwrap(), b.logits(&[&cloud], 0).unwrap());
}

#[test]
fn invalid_configs_rejected() {
    for cfg in [
        NetworkConfig { classes: 1, ..tiny(4) },
        NetworkConfig { ratios: vec![3], ..tiny(4) },
        NetworkConfig { ratios: vec![128], ..tiny(4) },
        NetworkConfig { dropout: 1.0, ..tiny(4) },
    ] {
        assert!(matches!(Model::build_classifier(cfg), Err(CpnetError::ConfigInvalid(_))));
    }
}

#[test]
fn untrained_model_is_permutation_invariant() {
    for mode in [DownsampleMode::Cpl, DownsampleMode::Wcpl, DownsampleMode::None] {
        let model = Model::build_classifier(NetworkConfig { downsample: mode, ..tiny(4) }).unwrap();
        for seed in 0..5 {
            let cloud = generic_cloud(64, seed);
            let mut shuffled = cloud.clone();
            shuffled.shuffle(&mut rng_from_seed(100 + seed));
            let a = model.logits(&[&cloud], 0).unwrap();
            let b = model.logits(&[&shuffled], 0).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9, "{mode}: {}", a.max_abs_diff(&b));
        }
    }
}

#[test]
fn cpl_then_max_pool_equals_column_max() {
    let model = Model::build_classifier(tiny(1)).unwrap();
    for seed in 0..5 {
        let features = model.selection_features(&generic_cloud(64, seed)).unwrap();
        for mode in [SelectionMode::Cpl, SelectionMode::Wcpl] {
            let sel = cpl_select(features.view(), 64, mode).unwrap();
            let out = gather_rows(features.view(), &sel.resized).unwrap();
            assert_eq!(output_max(out.view()), sel.f_max);
            assert_eq!(output_max(out.view()), output_max(features.view()));
        }
    }
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data();
    let train_set = gen_shapes(&data, Split::Train).unwrap();
    let test_set = gen_shapes(&data, Split::Test).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 5, ..Default::default() };
    let run = || {
        let mut model = Model::build_classifier(tiny(4)).unwrap();
        let out = train(&mut model, &train_set, &test_set, &cfg).unwrap();
        (out.log, Checkpoint::new(&model, &out.optimizer, 2).to_bytes())
    };
    let (log_a, bytes_a) = run();
    let (log_b, bytes_b) = run();
    assert_eq!(log_a.len(), 2);
    assert_eq!(log_a, log_b);
    assert_eq!(bytes_a, bytes_b);

    let mut model = Model::build_classifier(tiny(4)).unwrap();
    let other = train(&mut model, &train_set, &test_set, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(other.log, log_a);
}

#[test]
fn untrained_loss_and_accuracy_near_chance() {
    let data = ShapeDataset { train_per_class: 16, ..tiny_data() };
    let clouds = gen_shapes(&data, Split::Train).unwrap();
    let mut losses = Vec::new();
    let mut accs = Vec::new();
    for seed in 0..4 {
        let model = Model::build_classifier(NetworkConfig { seed, ..tiny(4) }).unwrap();
        losses.push(initial_loss(&model, &clouds, seed).unwrap());
        accs.push(evaluate(&model, &clouds, 0).unwrap().overall_acc);
    }
    let ln4 = 4f64.ln();
    let loss = losses.iter().sum::<f64>() / 4.0;
    let acc = accs.iter().sum::<f64>() / 4.0;
    assert!((loss - ln4).abs() < 0.2 * ln4, "losses {losses:?}");
    assert!((acc - 0.25).abs() <= 0.10, "accuracies {accs:?}");
}

#[test]
fn evaluation_matches_naive_recount() {
    let data = tiny_data();
    let clouds = gen_shapes(&data, Split::Test).unwrap();
    let model = Model::build_classifier(NetworkConfig { seed: 9, ..tiny(4) }).unwrap();
    let report = evaluate(&model, &clouds, 0).unwrap();
    let logits = predict_logits(&model, &clouds, 0).unwrap();

    let mut correct = 0;
    let mut per_class = [[0usize; 2]; 4];
    for (r, cloud) in clouds.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0;
        for c in 1..4 {
            if row[c] > row[best] {
                best = c;
            }
        }
        let y = cloud.label.unwrap();
        per_class[y][1] += 1;
        if best == y {
            correct += 1;
            per_class[y][0] += 1;
        }
    }
    assert_eq!(report.overall_acc, correct as f64 / clouds.len() as f64);
    let mean: f64 = per_class.iter().map(|[hit, all]| *hit as f64 / *all as f64).sum::<f64>() / 4.0;
    assert!((report.mean_class_acc - mean).abs() < 1e-15);
    assert_eq!(report.confusion.iter().flatten().sum::<usize>(), clouds.len());
    assert_eq!(predictions(&logits).len(), clouds.len());
}

#[test]
fn checkpoint_round_trip() {
    let data = tiny_data();
    let train_set = gen_shapes(&data, Split::Train).unwrap();
    let mut model = Model::build_classifier(tiny(4)).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
    let out = train(&mut model, &train_set, &train_set[..4], &cfg).unwrap();
    let ckpt = Checkpoint::new(&model, &out.optimizer, 1);
    let bytes = ckpt.to_bytes();

    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.to_bytes(), bytes);
    let cloud = &train_set[0].points;
    assert_eq!(loaded.model().unwrap().logits(&[cloud], 0).unwrap(), model.logits(&[cloud], 0).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    critical_points::cpnet::checkpoint_save(&ckpt, &path).unwrap();
    assert_eq!(critical_points::cpnet::checkpoint_load(&path).unwrap(), ckpt);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CpnetError::Format(_))));
    for cut in [0, 7, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CpnetError::TruncatedFile { .. })),
            "cut at {cut}"
        );
    }
}

#[test]
fn ablation_rows_and_sampler_determinism() {
    let text = "\
input_points = 64
knn = 6
edgeconv_widths = 8
bottleneck = 16
fc_dims = 16
epochs = 1
batch_size = 8
train_per_class = 4
test_per_class = 4
grid.modes = cpl,random
grid.ratios = 1/4
grid.bottlenecks = 16
grid.seeds = 1
grid.sampler_seeds = 1,2,3,4
";
    let grid = AblationGrid::from_text(text).unwrap();
    let rows = ablate(&grid).unwrap();
    assert_eq!(rows.len(), grid.cells() * grid.seeds.len());
    assert_eq!(rows.len(), 8);
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("mode,ratio,bottleneck,seed,sampler_seed,overall_acc,mean_class_acc\n"));

    let cpl: Vec<_> = rows.iter().filter(|r| r.mode == DownsampleMode::Cpl).collect();
    assert!(cpl.windows(2).all(|w| w[0].overall_acc == w[1].overall_acc));

    let single = AblationGrid::from_text(&text.replace("cpl,random", "cpl").replace("1,2,3,4", "0")).unwrap();
    assert_eq!(ablate(&single).unwrap().len(), 1);
}

#[test]
fn random_sampler_logits_vary_with_seed() {
    let model = Model::build_classifier(NetworkConfig { downsample: DownsampleMode::Random, ..tiny(4) }).unwrap();
    let cloud = generic_cloud(64, 4);
    let a = model.logits(&[&cloud], 1).unwrap();
    assert_eq!(a, model.logits(&[&cloud], 1).unwrap());
    assert_ne!(a, model.logits(&[&cloud], 2).unwrap());
}
