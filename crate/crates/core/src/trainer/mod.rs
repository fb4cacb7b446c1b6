//! End-to-end pretraining: two augmented views, three modalities, instance
//! and cluster branches, distillation losses, SGD, momentum key update, and
//! synchronized bank writes.
//!
//! One step is a serial phase sequence. Per-sample forward/backward passes
//! are independent graphs and run in parallel; their gradients and metrics
//! are reduced in batch order afterwards, so thread scheduling can never
//! change a result.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_encoder_params, save_checkpoint, save_encoder_params, Precision};

use crate::bank::{BankBatch, BankGroup, Branch};
use crate::config::RunConfig;
use crate::data::{augment, Dataset, Modality, SkeletonSequence};
use crate::encoder::{gcn_forward, project, transformer_forward, EncoderParams, EncoderVars};
use crate::losses::{
    cluster_info_nce, cmd_loss, imd_loss, info_nce, total_loss, EntityState, ModalityLosses,
};
use crate::rng::rng_for;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::wire::FormatError;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss component {component} at step {step}")]
    NonFinite { component: String, step: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;

// rng tag spaces
const TAG_PARAM_INIT: u64 = 0x20;
const TAG_SHUFFLE: u64 = 0x21;
const TAG_AUG: u64 = 0x22;

/// Blends the key parameters toward the query parameters:
/// `key <- alpha * key + (1 - alpha) * query`, outside any graph.
pub fn momentum_update(
    key: &mut EncoderParams,
    query: &EncoderParams,
    alpha: f64,
) -> crate::tensor::Result<()> {
    let q_flat = query.tensors.flatten();
    let k_flat = key.tensors.flatten_mut();
    if q_flat.len() != k_flat.len() {
        return Err(TensorError::Contract {
            op: "momentum_update",
            msg: format!("parameter counts differ: {} vs {}", k_flat.len(), q_flat.len()),
        });
    }
    for (t, q) in k_flat.into_iter().zip(q_flat) {
        if t.shape() != q.shape() {
            return Err(TensorError::DimMismatch {
                op: "momentum_update",
                lhs: t.shape().to_vec(),
                rhs: q.shape().to_vec(),
            });
        }
        for (kv, qv) in t.data_mut().iter_mut().zip(q.data()) {
            *kv = alpha * *kv + (1.0 - alpha) * qv;
        }
    }
    Ok(())
}

/// One SGD-with-momentum update over a flat parameter list:
/// `v <- momentum * v + (grad + weight_decay * param); param -= lr * v`.
/// Gradients are zeroed after the step.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &mut [Tensor],
    velocity: &mut [Tensor],
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> crate::tensor::Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TensorError::Contract {
            op: "sgd_step",
            msg: format!(
                "param/grad/velocity counts differ: {}/{}/{}",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        });
    }
    for ((p, g), v) in params.iter_mut().zip(grads.iter_mut()).zip(velocity.iter_mut()) {
        if g.shape() != p.shape() || v.shape() != p.shape() {
            return Err(TensorError::DimMismatch {
                op: "sgd_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        for i in 0..p.numel() {
            let grad = g.data()[i] + weight_decay * p.data()[i];
            let vel = momentum * v.data()[i] + grad;
            v.data_mut()[i] = vel;
            p.data_mut()[i] -= learning_rate * vel;
        }
        for x in g.data_mut() {
            *x = 0.0;
        }
    }
    Ok(())
}

/// Query/key parameter pair plus optimizer slots for one modality.
#[derive(Debug, Clone)]
pub struct ModalityState {
    pub modality: Modality,
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub velocity: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: RunConfig,
    pub modalities: Vec<ModalityState>,
    pub banks: BankGroup,
    pub epoch: u64,
    pub step: u64,
    norm_adjacency: Tensor,
}

impl TrainState {
    pub fn new(config: RunConfig) -> TrainResult<Self> {
        config.validate()?;
        let mut modalities = Vec::new();
        for (i, &m) in config.modalities.iter().enumerate() {
            let mut rng = rng_for(config.seed, &[TAG_PARAM_INIT, i as u64]);
            let query = EncoderParams::init(&config.encoder, &mut rng)?;
            let key = query.clone();
            let velocity = query
                .tensors
                .flatten()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect();
            modalities.push(ModalityState {
                modality: m,
                query,
                key,
                velocity,
            });
        }
        let banks = BankGroup::new(
            &config.modalities,
            config.bank_capacity,
            config.encoder.projection_dim,
            config.encoder.model_dim,
        );
        let norm_adjacency = config.dataset.topology.normalized_adjacency();
        Ok(TrainState {
            config,
            modalities,
            banks,
            epoch: 0,
            step: 0,
            norm_adjacency,
        })
    }

    pub fn norm_adjacency(&self) -> &Tensor {
        &self.norm_adjacency
    }
}

/// Per-component means over the batch for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub warmup: bool,
    pub scl: Vec<(Modality, f64)>,
    pub cluster_scl: Vec<(Modality, f64)>,
    pub imd: Vec<(Modality, f64)>,
    pub cmd: Option<f64>,
    pub total: f64,
}

impl StepMetrics {
    /// One structured text record per step. During warm-up only the
    /// contrastive components appear.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "step={} epoch={} lr={} warmup={}",
            self.step, self.epoch, self.lr, self.warmup as u8
        );
        for (m, v) in &self.scl {
            s.push_str(&format!(" scl_{}={}", m.name(), v));
        }
        for (m, v) in &self.cluster_scl {
            s.push_str(&format!(" cscl_{}={}", m.name(), v));
        }
        for (m, v) in &self.imd {
            s.push_str(&format!(" imd_{}={}", m.name(), v));
        }
        if let Some(v) = self.cmd {
            s.push_str(&format!(" cmd={v}"));
        }
        s.push_str(&format!(" total={}", self.total));
        s
    }
}

/// Everything one sample contributes back to the serial reduction phase.
struct SampleOutput {
    /// Per modality, flat gradient tensors for the query parameters
    /// (zeros where a parameter was unused).
    grads: Vec<Vec<Tensor>>,
    /// Per modality: (z_k, h_k, cluster key or stand-in).
    enqueue: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    scl: Vec<f64>,
    cluster_scl: Vec<f64>,
    imd: Vec<f64>,
    cmd: Option<f64>,
    total: f64,
}

fn encode_views(
    g: &mut Graph,
    vars: &EncoderVars,
    seq: &SkeletonSequence,
    adjacency: &Tensor,
) -> crate::tensor::Result<(crate::tensor::Var, crate::tensor::Var, crate::tensor::Var)> {
    let tokens = gcn_forward(g, vars, seq, adjacency)?;
    let h = transformer_forward(g, vars, tokens, None)?;
    let z = project(g, vars, h)?;
    Ok((tokens, h, z))
}

/// Per-modality intermediates of one sample's forward passes.
struct ModalityPass {
    z_q: crate::tensor::Var,
    z_q_star: Option<crate::tensor::Var>,
    scl: Option<crate::tensor::Var>,
    cluster_scl: Option<crate::tensor::Var>,
    z_k_vals: Vec<f64>,
    z_k_star_vals: Option<Vec<f64>>,
    h_k_vals: Vec<f64>,
}

fn run_sample(
    state: &TrainState,
    seq: &SkeletonSequence,
    sample_idx: usize,
    negatives: &[(Tensor, Tensor)],
) -> TrainResult<SampleOutput> {
    let cfg = &state.config;
    let warm = state.banks.is_warm();
    let have_negatives = state.banks.fill_count() > 0;
    let run_cluster = warm && !cfg.disable_imd;
    let run_cmd = warm && !cfg.disable_cmd && cfg.modalities.len() >= 2;

    let mut rng_q = rng_for(cfg.seed, &[TAG_AUG, state.epoch, state.step, sample_idx as u64, 0]);
    let mut rng_k = rng_for(cfg.seed, &[TAG_AUG, state.epoch, state.step, sample_idx as u64, 1]);
    let view_q = augment(seq, &cfg.augment, &mut rng_q)?;
    let view_k = augment(seq, &cfg.augment, &mut rng_k)?;

    let mut g = Graph::new();
    let mut passes: Vec<ModalityPass> = Vec::new();
    let mut query_vars = Vec::new();
    let mut key_vars = Vec::new();

    for (mi, ms) in state.modalities.iter().enumerate() {
        let seq_q = ms.modality.derive(&view_q, &cfg.dataset.topology)?;
        let seq_k = ms.modality.derive(&view_k, &cfg.dataset.topology)?;
        let q_vars = ms.query.lift(&mut g, true);
        let k_vars = ms.key.lift(&mut g, false);

        let (tokens_q, _h_q, z_q) = encode_views(&mut g, &q_vars, &seq_q, &state.norm_adjacency)?;
        let (tokens_k, h_k, z_k) = encode_views(&mut g, &k_vars, &seq_k, &state.norm_adjacency)?;

        let z_q_vals = g.value(z_q).data().to_vec();
        let z_k_vals = g.value(z_k).data().to_vec();
        let h_k_vals = g.value(h_k).data().to_vec();
        let idb_bank = state.banks.bank(ms.modality, Branch::Instance);

        let scl = if have_negatives {
            Some(info_nce(&mut g, z_q, &z_k_vals, &negatives[mi].0, cfg.temperatures.contrastive)?)
        } else {
            None
        };

        let mut z_q_star = None;
        let mut cluster_scl = None;
        let mut z_k_star_vals = None;
        if run_cluster {
            // retrieval is a detached selection; gradients flow only through
            // the attention over the gathered hidden values
            let top_q = idb_bank.top_k_excluding(&z_q_vals, cfg.k_neighbors, seq.instance_id)?;
            let top_k = idb_bank.top_k_excluding(&z_k_vals, cfg.k_neighbors, seq.instance_id)?;
            let neigh_q = g.constant(idb_bank.gather_values(&top_q.indices)?);
            let neigh_k = g.constant(idb_bank.gather_values(&top_k.indices)?);
            let h_q_star = transformer_forward(&mut g, &q_vars, tokens_q, Some(neigh_q))?;
            let zq_star = project(&mut g, &q_vars, h_q_star)?;
            let h_k_star = transformer_forward(&mut g, &k_vars, tokens_k, Some(neigh_k))?;
            let zk_star = project(&mut g, &k_vars, h_k_star)?;
            let zk_star_vals = g.value(zk_star).data().to_vec();
            cluster_scl = Some(cluster_info_nce(
                &mut g,
                zq_star,
                &zk_star_vals,
                &negatives[mi].1,
                cfg.temperatures.contrastive,
            )?);
            z_q_star = Some(zq_star);
            z_k_star_vals = Some(zk_star_vals);
        }

        passes.push(ModalityPass {
            z_q,
            z_q_star,
            scl,
            cluster_scl,
            z_k_vals,
            z_k_star_vals,
            h_k_vals,
        });
        query_vars.push(q_vars);
        key_vars.push(k_vars);
    }
    // distillation losses borrow the stored key values
    let mut intra = Vec::new();
    let mut scl_vals = Vec::new();
    let mut cscl_vals = Vec::new();
    let mut imd_vals = Vec::new();
    for (mi, ms) in state.modalities.iter().enumerate() {
        let p = &passes[mi];
        let Some(scl) = p.scl else { continue };
        scl_vals.push(g.value(scl).item());
        let mut imd_term = None;
        let skip_imd_kl = std::env::var("SKEL_DEBUG_SKIP_IMD_KL").is_ok(); // calibration probe, remove
        if skip_imd_kl {
            // keep the cluster branch and its contrastive loss, drop the KL
        } else if let (Some(z_q_star), Some(zk_star)) = (p.z_q_star, &p.z_k_star_vals) {
            let idb = EntityState {
                query: p.z_q,
                key: &p.z_k_vals,
                bank: state.banks.bank(ms.modality, Branch::Instance),
            };
            let cdb = EntityState {
                query: z_q_star,
                key: zk_star,
                bank: state.banks.bank(ms.modality, Branch::Cluster),
            };
            let v = imd_loss(
                &mut g,
                &idb,
                &cdb,
                cfg.k_anchors,
                cfg.temperatures.teacher,
                cfg.temperatures.student,
            )?;
            imd_vals.push(g.value(v).item());
            imd_term = Some(v);
        }
        if let Some(c) = p.cluster_scl {
            cscl_vals.push(g.value(c).item());
        }
        intra.push(ModalityLosses {
            modality: ms.modality,
            scl,
            cluster_scl: p.cluster_scl,
            imd: imd_term,
        });
    }

    let cmd = if run_cmd && !intra.is_empty() {
        let entities: Vec<(Modality, EntityState)> = state
            .modalities
            .iter()
            .enumerate()
            .map(|(mi, ms)| {
                (
                    ms.modality,
                    EntityState {
                        query: passes[mi].z_q,
                        key: &passes[mi].z_k_vals,
                        bank: state.banks.bank(ms.modality, Branch::Instance),
                    },
                )
            })
            .collect();
        Some(cmd_loss(
            &mut g,
            &entities,
            cfg.k_anchors,
            cfg.temperatures.teacher,
            cfg.temperatures.student,
        )?)
    } else {
        None
    };
    let cmd_val = cmd.map(|v| g.value(v).item());

    let mut total_val = 0.0;
    let mut grads: Vec<Vec<Tensor>> = Vec::new();
    if !intra.is_empty() {
        let total = total_loss(&mut g, &intra, cmd, cfg.weights.cmd_weight)?;
        total_val = g.value(total).item();
        g.backward(total)?;
        for (mi, ms) in state.modalities.iter().enumerate() {
            let flat_vars = query_vars[mi].vars.flatten();
            let shapes = ms.query.tensors.flatten();
            let mut mg = Vec::with_capacity(flat_vars.len());
            for (v, t) in flat_vars.iter().zip(shapes) {
                mg.push(
                    g.grad(**v)
                        .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())),
                );
            }
            grads.push(mg);
            // teacher isolation: key-encoder parameters never accumulate
            // gradient (bank contents enter as constants and cannot)
            for kv in key_vars[mi].vars.flatten() {
                assert!(
                    g.grad(*kv).is_none(),
                    "gradient leaked into key encoder parameters"
                );
            }
        }
    } else {
        for ms in &state.modalities {
            grads.push(
                ms.query
                    .tensors
                    .flatten()
                    .iter()
                    .map(|t| Tensor::zeros(t.shape().to_vec()))
                    .collect(),
            );
        }
    }

    let enqueue = passes
        .into_iter()
        .map(|p| {
            let cluster_key = p.z_k_star_vals.unwrap_or_else(|| p.z_k_vals.clone());
            (p.z_k_vals, p.h_k_vals, cluster_key)
        })
        .collect();

    Ok(SampleOutput {
        grads,
        enqueue,
        scl: scl_vals,
        cluster_scl: cscl_vals,
        imd: imd_vals,
        cmd: cmd_val,
        total: total_val,
    })
}

/// One optimization step over a batch of joint-modality sequences.
pub fn train_step(state: &mut TrainState, batch: &[SkeletonSequence]) -> TrainResult<StepMetrics> {
    if batch.is_empty() {
        return Err(TensorError::Contract {
            op: "train_step",
            msg: "empty batch".into(),
        }
        .into());
    }
    let cfg = state.config.clone();
    let warm = state.banks.is_warm();
    let have_negatives = state.banks.fill_count() > 0;

    // negatives snapshots are shared by every sample in the batch
    let negatives: Vec<(Tensor, Tensor)> = cfg
        .modalities
        .iter()
        .map(|&m| {
            (
                state.banks.bank(m, Branch::Instance).keys_matrix(),
                state.banks.bank(m, Branch::Cluster).keys_matrix(),
            )
        })
        .collect();

    let outputs: Vec<TrainResult<SampleOutput>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, seq)| run_sample(state, seq, i, &negatives))
        .collect();
    let mut samples = Vec::with_capacity(outputs.len());
    for o in outputs {
        samples.push(o?);
    }

    // reduce gradients in batch order
    let inv_b = 1.0 / batch.len() as f64;
    if have_negatives {
        let lr = cfg.lr_at(state.epoch as usize);
        for (mi, ms) in state.modalities.iter_mut().enumerate() {
            let mut acc: Vec<Tensor> = ms
                .query
                .tensors
                .flatten()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect();
            for s in &samples {
                for (a, g) in acc.iter_mut().zip(&s.grads[mi]) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y * inv_b;
                    }
                }
            }
            let mut refs = ms.query.tensors.flatten_mut();
            sgd_step(
                &mut refs,
                &mut acc,
                &mut ms.velocity,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
        }
        // momentum update of the key encoders, outside any graph
        for ms in &mut state.modalities {
            let query = ms.query.clone();
            momentum_update(&mut ms.key, &query, cfg.key_momentum)?;
        }
    }

    // enqueue all banks synchronously, in batch order
    let instance_ids: Vec<u64> = batch.iter().map(|s| s.instance_id).collect();
    let mut per_bank = Vec::new();
    for (mi, _) in cfg.modalities.iter().enumerate() {
        // instance bank: keys + hidden values
        per_bank.push(BankBatch {
            keys: samples.iter().map(|s| s.enqueue[mi].0.clone()).collect(),
            values: Some(samples.iter().map(|s| s.enqueue[mi].1.clone()).collect()),
        });
        // cluster bank: cluster keys (or the instance stand-in during warm-up)
        per_bank.push(BankBatch {
            keys: samples.iter().map(|s| s.enqueue[mi].2.clone()).collect(),
            values: None,
        });
    }
    state.banks.enqueue_batch(&instance_ids, &per_bank)?;

    let mean_of = |per_sample: &dyn Fn(&SampleOutput) -> Option<f64>| -> Option<f64> {
        let collected: Vec<f64> = samples.iter().filter_map(per_sample).collect();
        (collected.len() == samples.len()).then(|| collected.iter().sum::<f64>() * inv_b)
    };
    let mut metrics = StepMetrics {
        step: state.step,
        epoch: state.epoch,
        lr: cfg.lr_at(state.epoch as usize),
        warmup: !warm,
        scl: Vec::new(),
        cluster_scl: Vec::new(),
        imd: Vec::new(),
        cmd: mean_of(&|s| s.cmd),
        total: samples.iter().map(|s| s.total).sum::<f64>() * inv_b,
    };
    for (mi, &m) in cfg.modalities.iter().enumerate() {
        if let Some(v) = mean_of(&|s| s.scl.get(mi).copied()) {
            metrics.scl.push((m, v));
        }
        if let Some(v) = mean_of(&|s| s.cluster_scl.get(mi).copied()) {
            metrics.cluster_scl.push((m, v));
        }
        if let Some(v) = mean_of(&|s| s.imd.get(mi).copied()) {
            metrics.imd.push((m, v));
        }
    }
    let mut finite_check: Vec<(String, f64)> = vec![("total".into(), metrics.total)];
    for (m, v) in &metrics.scl {
        finite_check.push((format!("scl_{}", m.name()), *v));
    }
    for (m, v) in &metrics.cluster_scl {
        finite_check.push((format!("cscl_{}", m.name()), *v));
    }
    for (m, v) in &metrics.imd {
        finite_check.push((format!("imd_{}", m.name()), *v));
    }
    if let Some(v) = metrics.cmd {
        finite_check.push(("cmd".into(), v));
    }
    for (name, v) in finite_check {
        if !v.is_finite() {
            return Err(TrainError::NonFinite {
                component: name,
                step: state.step,
            });
        }
    }
    state.step += 1;
    Ok(metrics)
}

/// Output paths of a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub config_echo: PathBuf,
    pub metrics_log: PathBuf,
    pub final_checkpoint: PathBuf,
}

fn metrics_header(cfg: &RunConfig) -> String {
    let mods: Vec<&str> = cfg.modalities.iter().map(|m| m.name()).collect();
    format!(
        "# temperatures contrastive={} teacher={} student={}\n\
         # cmd_weight={} k_anchors={} k_neighbors={} bank_capacity={}\n\
         # key_momentum={} batch_size={} epochs={} learning_rate={} lr_decay_factor={} lr_decay_epoch={}\n\
         # seed={} modalities={} disable_cmd={} disable_imd={}\n",
        cfg.temperatures.contrastive,
        cfg.temperatures.teacher,
        cfg.temperatures.student,
        cfg.weights.cmd_weight,
        cfg.k_anchors,
        cfg.k_neighbors,
        cfg.bank_capacity,
        cfg.key_momentum,
        cfg.batch_size,
        cfg.epochs,
        cfg.learning_rate,
        cfg.lr_decay_factor,
        cfg.lr_decay_epoch(),
        cfg.seed,
        mods.join(","),
        cfg.disable_cmd,
        cfg.disable_imd,
    )
}

/// Runs pretraining from a fresh state. Emits one metrics record per step,
/// a config echo, checkpoints on the configured cadence, and a final
/// checkpoint.
pub fn pretrain(config: RunConfig, dataset: &Dataset, out_dir: &Path) -> TrainResult<PretrainOutput> {
    let state = TrainState::new(config)?;
    run_epochs(state, dataset, out_dir)
}

/// Continues a checkpointed run until its configured epoch count. The
/// trajectory is bit-identical to the uninterrupted run.
pub fn pretrain_resume(checkpoint: &Path, dataset: &Dataset, out_dir: &Path) -> TrainResult<PretrainOutput> {
    let state = load_checkpoint(checkpoint)?;
    run_epochs(state, dataset, out_dir)
}

/// Materializes the dataset a config describes.
pub fn dataset_for(config: &RunConfig) -> TrainResult<Dataset> {
    Ok(crate::data::generate_dataset(&config.dataset)?)
}

fn run_epochs(mut state: TrainState, dataset: &Dataset, out_dir: &Path) -> TrainResult<PretrainOutput> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = state.config.clone();
    let config_echo = out_dir.join("config_echo.toml");
    std::fs::write(&config_echo, cfg.to_echo_toml())?;
    let metrics_log = out_dir.join("metrics.log");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&metrics_log)?);
    log.write_all(metrics_header(&cfg).as_bytes())?;

    for epoch in state.epoch as usize..cfg.epochs {
        state.epoch = epoch as u64;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        let mut rng = rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SkeletonSequence> =
                chunk.iter().map(|&i| dataset.train[i].clone()).collect();
            let metrics = train_step(&mut state, &batch)?;
            log.write_all(metrics.to_line().as_bytes())?;
            log.write_all(b"\n")?;
        }
        let finished = epoch + 1;
        if cfg.checkpoint_every > 0 && finished % cfg.checkpoint_every == 0 && finished < cfg.epochs
        {
            state.epoch = finished as u64;
            save_checkpoint(&state, &out_dir.join(format!("checkpoint_epoch_{finished:04}.bin")))?;
        }
        state.epoch = finished as u64;
    }
    log.flush()?;
    let final_checkpoint = out_dir.join("checkpoint_final.bin");
    save_checkpoint(&state, &final_checkpoint)?;
    Ok(PretrainOutput {
        config_echo,
        metrics_log,
        final_checkpoint,
    })
}
