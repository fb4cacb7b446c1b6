use skeldistill_core::config::RunConfig;
use skeldistill_core::data::{generate_dataset, Modality};
use skeldistill_core::encoder::{EncoderConfig, EncoderParams};
use skeldistill_core::eval::{extract_features, knn_eval};
use skeldistill_core::rng::rng_for;
use skeldistill_core::trainer::{pretrain, TrainState};

fn bench_config(seed: u64, epochs: usize, lr: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.encoder = EncoderConfig {
        gcn_channels: vec![8, 8],
        transformer_layers: 1,
        model_dim: 32,
        heads: 4,
        ffn_dim: 64,
        projection_dim: 16,
        has_cross_attention: true,
        positional_embedding: true,
        frames: 32,
    };
    cfg.bank_capacity = 256;
    cfg.k_anchors = 64;
    cfg.k_neighbors = 8;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.seed = seed;
    cfg.checkpoint_every = 0;
    if let Ok(a) = std::env::var("CAL_ALPHA") {
        cfg.key_momentum = a.parse().unwrap();
    }
    if let Ok(n) = std::env::var("CAL_NOISE") {
        cfg.dataset.noise_std = n.parse().unwrap();
    }
    if let Ok(r) = std::env::var("CAL_ROT") {
        cfg.dataset.rotation_max_rad = r.parse().unwrap();
    }
    if let Ok(r) = std::env::var("CAL_AUGROT") {
        cfg.augment.rotation_max_rad = r.parse().unwrap();
    }
    if let Ok(j) = std::env::var("CAL_JIT") {
        cfg.augment.jitter_std = j.parse().unwrap();
    }
    if let Ok(k) = std::env::var("CAL_KC") {
        cfg.k_anchors = k.parse().unwrap();
    }
    if let Ok(k) = std::env::var("CAL_KD") {
        cfg.k_neighbors = k.parse().unwrap();
    }
    cfg
}

fn knn_for_params(params: &EncoderParams, ds: &skeldistill_core::data::Dataset) -> f64 {
    let topo = ds.topology.clone();
    let train = extract_features(params, &ds.train, Modality::Joint, &topo, "train").unwrap();
    let test = extract_features(params, &ds.test, Modality::Joint, &topo, "test").unwrap();
    knn_eval(&train, &test).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let base = bench_config(1, epochs, lr);
    let ds = generate_dataset(&base.dataset).unwrap();

    // raw-coordinate 1-NN (dataset separability)
    let raw_feats = |seqs: &[skeldistill_core::data::SkeletonSequence]| {
        let dim = seqs[0].frames.len();
        let data: Vec<f64> = seqs.iter().flat_map(|s| s.frames.clone()).collect();
        skeldistill_core::eval::FeatureSet::new(
            skeldistill_core::tensor::Tensor::matrix(seqs.len(), dim, data).unwrap(),
            seqs.iter().map(|s| s.label).collect(),
            "raw",
        )
        .unwrap()
    };
    let raw_acc = knn_eval(&raw_feats(&ds.train), &raw_feats(&ds.test)).unwrap();
    println!("raw-coordinate 1-NN: {:.1}%", raw_acc * 100.0);

    let tdir = tempfile::tempdir().unwrap();
    for seed in 0..seeds {
        // random-init floor
        let cfg = bench_config(seed + 1, epochs, lr);
        let mut rng = rng_for(cfg.seed, &[0x20, 0]);
        let random_params = EncoderParams::init(&cfg.encoder, &mut rng).unwrap();
        let floor = knn_for_params(&random_params, &ds);

        let t0 = std::time::Instant::now();
        let mut run = |name: &str, disable_cmd: bool, disable_imd: bool| -> f64 {
            let mut c = bench_config(seed + 1, epochs, lr);
            c.disable_cmd = disable_cmd;
            c.disable_imd = disable_imd;
            let out = tdir.path().join(format!("{name}-{seed}"));
            let res = pretrain(c.clone(), &ds, &out).unwrap();
            let state = skeldistill_core::trainer::load_checkpoint(&res.final_checkpoint).unwrap();
            let params = &state.modalities[0].query;
            knn_for_params(params, &ds)
        };
        {
            let probe = bench_config(seed + 1, epochs, lr);
            println!("probe: k_anchors={} k_neighbors={} lr={} epochs={}", probe.k_anchors, probe.k_neighbors, probe.learning_rate, probe.epochs);
        }
        if std::env::var("CAL_PERMOD").is_ok() {
            // per-modality feature quality after scl-only pretraining
            let mut c = bench_config(seed + 1, epochs, lr);
            c.disable_cmd = true;
            c.disable_imd = true;
            let out = tdir.path().join(format!("permod-{seed}"));
            let res = pretrain(c.clone(), &ds, &out).unwrap();
            let state = skeldistill_core::trainer::load_checkpoint(&res.final_checkpoint).unwrap();
            for ms in &state.modalities {
                let tr = extract_features(&ms.query, &ds.train, ms.modality, &ds.topology, "t").unwrap();
                let te = extract_features(&ms.query, &ds.test, ms.modality, &ds.topology, "e").unwrap();
                println!("  scl-only {} knn = {:.1}%", ms.modality.name(), knn_eval(&tr, &te).unwrap() * 100.0);
            }
        }
        let scl_only = run("scl", true, true);
        let no_cmd = run("nocmd", true, false);
        let no_imd = run("noimd", false, true);
        let full = run("full", false, false);
        println!(
            "seed {seed}: floor={:.1}% scl={:.1}% no_cmd={:.1}% no_imd={:.1}% full={:.1}%  ({:.0}s)",
            floor * 100.0,
            scl_only * 100.0,
            no_cmd * 100.0,
            no_imd * 100.0,
            full * 100.0,
            t0.elapsed().as_secs_f64()
        );
        let _ = TrainState::new(bench_config(1, 1, lr)).unwrap();
    }
}
