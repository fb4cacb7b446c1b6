use skeldistill_core::config::RunConfig;
use skeldistill_core::data::generate_dataset;
use skeldistill_core::encoder::EncoderConfig;
use skeldistill_core::trainer::{train_step, TrainState};

fn time_config(name: &str, mut cfg: RunConfig) {
    cfg.dataset.train_per_class = 16;
    cfg.dataset.test_per_class = 2;
    let ds = generate_dataset(&cfg.dataset).unwrap();
    let mut state = TrainState::new(cfg.clone()).unwrap();
    // warm up the banks first
    let mut idx = 0;
    while !state.banks.is_warm() {
        let batch: Vec<_> = (0..cfg.batch_size)
            .map(|i| ds.train[(idx + i) % ds.train.len()].clone())
            .collect();
        train_step(&mut state, &batch).unwrap();
        idx += cfg.batch_size;
    }
    let batch: Vec<_> = ds.train[0..cfg.batch_size].to_vec();
    let t = std::time::Instant::now();
    let reps = 3;
    for _ in 0..reps {
        train_step(&mut state, &batch).unwrap();
    }
    let per_step = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{name}: {:.3}s/step (warm, batch {}), est 25 steps/epoch -> {:.1}s/epoch",
        per_step, cfg.batch_size, per_step * 25.0
    );
}

fn main() {
    // desk preset
    let desk = RunConfig::default();
    time_config("desk C=64 L=2", desk);

    // candidate acceptance bench
    let mut bench = RunConfig::default();
    bench.encoder = EncoderConfig {
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
    bench.bank_capacity = 256;
    bench.k_anchors = 64;
    bench.k_neighbors = 8;
    time_config("bench C=32 L=1", bench);
}
