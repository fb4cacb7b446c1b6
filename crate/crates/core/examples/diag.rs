use skeldistill_core::config::RunConfig;
use skeldistill_core::data::{generate_dataset, Modality};
use skeldistill_core::encoder::{encode, EncoderConfig};
use skeldistill_core::eval::{knn_eval, FeatureSet};
use skeldistill_core::tensor::{Graph, Tensor};
use skeldistill_core::trainer::{train_step, TrainState};

fn features(state: &TrainState, seqs: &[skeldistill_core::data::SkeletonSequence], tap_z: bool) -> FeatureSet {
    let params = &state.modalities[0].query;
    let topo = &state.config.dataset.topology;
    let adj = topo.normalized_adjacency();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for seq in seqs {
        let mut g = Graph::new();
        let vars = params.lift(&mut g, false);
        let (h, z) = encode(&mut g, &vars, seq, &adj, None).unwrap();
        let v = if tap_z { g.value(z) } else { g.value(h) };
        data.extend_from_slice(v.data());
        labels.push(seq.label);
    }
    let dim = if tap_z { params.config.projection_dim } else { params.config.model_dim };
    FeatureSet::new(Tensor::matrix(labels.len(), dim, data).unwrap(), labels, "diag").unwrap()
}

fn main() {
    let rot: f64 = std::env::var("CAL_ROT").ok().and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let augrot: f64 = std::env::var("CAL_AUGROT").ok().and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);

    let mut cfg = RunConfig::default();
    let c: usize = std::env::var("CAL_C").ok().and_then(|s| s.parse().ok()).unwrap_or(32);
    let gc: usize = std::env::var("CAL_GC").ok().and_then(|s| s.parse().ok()).unwrap_or(8);
    cfg.encoder = EncoderConfig {
        gcn_channels: vec![gc, gc],
        transformer_layers: 1,
        model_dim: c,
        heads: 4,
        ffn_dim: c * 2,
        projection_dim: c / 2,
        has_cross_attention: true,
        positional_embedding: true,
        frames: 32,
    };
    cfg.bank_capacity = 256;
    cfg.k_anchors = 64;
    cfg.k_neighbors = 8;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.disable_cmd = true;
    cfg.disable_imd = true;
    cfg.dataset.rotation_max_rad = rot;
    cfg.augment.rotation_max_rad = augrot;
    if let Ok(n) = std::env::var("CAL_NOISE") {
        cfg.dataset.noise_std = n.parse().unwrap();
    }
    if let Ok(j) = std::env::var("CAL_JIT") {
        cfg.augment.jitter_std = j.parse().unwrap();
    }
    let ds = generate_dataset(&cfg.dataset).unwrap();
    let mut state = TrainState::new(cfg.clone()).unwrap();

    let h_train = features(&state, &ds.train, false);
    let h_test = features(&state, &ds.test, false);
    println!("epoch -1 (random): h-knn={:.1}%", knn_eval(&h_train, &h_test).unwrap() * 100.0);

    use rand::seq::SliceRandom;
    for epoch in 0..cfg.epochs {
        state.epoch = epoch as u64;
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        let mut rng = skeldistill_core::rng::rng_for(cfg.seed, &[0x21, epoch as u64]);
        order.shuffle(&mut rng);
        let mut scl_sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| ds.train[i].clone()).collect();
            let m = train_step(&mut state, &batch).unwrap();
            if let Some((_, v)) = m.scl.first() {
                scl_sum += v;
                n += 1;
            }
        }
        if epoch % 2 == 1 || epoch == cfg.epochs - 1 {
            let h_train = features(&state, &ds.train, false);
            let h_test = features(&state, &ds.test, false);
            let z_train = features(&state, &ds.train, true);
            let z_test = features(&state, &ds.test, true);
            println!(
                "epoch {epoch}: scl={:.3} h-knn={:.1}% z-knn={:.1}%",
                scl_sum / n as f64,
                knn_eval(&h_train, &h_test).unwrap() * 100.0,
                knn_eval(&z_train, &z_test).unwrap() * 100.0
            );
        } else {
            println!("epoch {epoch}: scl={:.3}", scl_sum / n as f64);
        }
    }
}
