use skeldistill_core::config::RunConfig;
use skeldistill_core::data::{generate_dataset, Modality};
use skeldistill_core::encoder::{EncoderConfig, EncoderParams};
use skeldistill_core::eval::{extract_features, knn_eval, FeatureSet};
use skeldistill_core::rng::rng_for;
use skeldistill_core::tensor::Tensor;

fn main() {
    let mut base = RunConfig::default();
    base.encoder = EncoderConfig {
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
    for rot in [0.3, 0.45, 0.6, 0.75] {
        for noise in [0.04, 0.1, 0.15] {
            let mut cfg = base.clone();
            cfg.dataset.rotation_max_rad = rot;
            cfg.dataset.noise_std = noise;
            let ds = generate_dataset(&cfg.dataset).unwrap();
            let raw_feats = |seqs: &[skeldistill_core::data::SkeletonSequence]| {
                let dim = seqs[0].frames.len();
                let data: Vec<f64> = seqs.iter().flat_map(|s| s.frames.clone()).collect();
                FeatureSet::new(
                    Tensor::matrix(seqs.len(), dim, data).unwrap(),
                    seqs.iter().map(|s| s.label).collect(),
                    "raw",
                )
                .unwrap()
            };
            let raw = knn_eval(&raw_feats(&ds.train), &raw_feats(&ds.test)).unwrap();
            // average floor over two random inits
            let mut floor = 0.0;
            for init in 0..2u64 {
                let mut rng = rng_for(100 + init, &[]);
                let params = EncoderParams::init(&cfg.encoder, &mut rng).unwrap();
                let tr = extract_features(&params, &ds.train, Modality::Joint, &ds.topology, "t").unwrap();
                let te = extract_features(&params, &ds.test, Modality::Joint, &ds.topology, "e").unwrap();
                floor += knn_eval(&tr, &te).unwrap();
            }
            floor /= 2.0;
            println!(
                "rot={rot:.2} noise={noise:.2}: raw={:.1}% floor={:.1}%",
                raw * 100.0,
                floor * 100.0
            );
        }
    }
}
