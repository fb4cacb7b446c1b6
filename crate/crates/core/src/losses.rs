//! Training objectives: contrastive InfoNCE, similarity distributions, and
//! the mutual-distillation losses built on them.
//!
//! Teacher-side quantities (momentum-encoder keys, bank contents) enter every
//! loss as plain values, so no gradient can reach them. Student-side
//! embeddings are graph variables. Distillation matches a detached teacher
//! similarity distribution against the student's distribution over the *same
//! bank slots*, which is what makes the KL well-defined across modalities and
//! branches.

use crate::bank::MemoryBank;
use crate::data::Modality;
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}

/// Floor applied inside KL logs so extreme temperatures cannot produce -inf.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct TemperatureSet {
    /// InfoNCE temperature.
    pub contrastive: f64,
    /// Teacher-side distillation temperature (sharper).
    pub teacher: f64,
    /// Student-side distillation temperature.
    pub student: f64,
}

impl Default for TemperatureSet {
    fn default() -> Self {
        TemperatureSet {
            contrastive: 0.07,
            teacher: 0.05,
            student: 0.1,
        }
    }
}

impl TemperatureSet {
    pub fn validate(&self) -> Result<()> {
        if self.contrastive <= 0.0 || self.teacher <= 0.0 || self.student <= 0.0 {
            return Err(contract("temperatures", format!("{self:?} must all be > 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Weight of the cross-modal distillation term in the final objective.
    pub cmd_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cmd_weight: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.cmd_weight < 0.0 {
            return Err(contract("loss_weights", "cmd_weight must be >= 0"));
        }
        Ok(())
    }
}

/// Normalized probabilities over K anchor bank slots at one temperature.
#[derive(Debug, Clone)]
pub struct SimilarityDistribution {
    probs: Vec<f64>,
    anchor_indices: Vec<usize>,
    temperature: f64,
    /// Present when the distribution participates in gradient computation.
    node: Option<Var>,
}

impl SimilarityDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn anchor_indices(&self) -> &[usize] {
        &self.anchor_indices
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// The graph node of a gradient-carrying distribution.
    pub fn node(&self) -> Option<Var> {
        self.node
    }

    fn assert_normalized(&self) {
        let sum: f64 = self.probs.iter().sum();
        assert!(
            (sum - 1.0).abs() < 1e-9,
            "similarity distribution sums to {sum}, expected 1 within 1e-9"
        );
        assert!(
            self.probs.iter().all(|&p| p > 0.0),
            "similarity distribution has non-positive entries"
        );
    }
}

/// Stable softmax of `z . anchors[i] / tau` over the anchor rows. Multiplies
/// by the reciprocal temperature, matching the graph path bit for bit.
fn similarity_probs_raw(z: &[f64], anchors: &Tensor, tau: f64) -> Vec<f64> {
    let k = anchors.rows();
    let inv_tau = 1.0 / tau;
    let mut logits = Vec::with_capacity(k);
    for i in 0..k {
        logits.push(crate::tensor::dot_slices(z, anchors.row_slice(i)) * inv_tau);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in &mut logits {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in &mut logits {
        *l /= sum;
    }
    logits
}

fn check_distribution_args(
    op: &'static str,
    z_len: usize,
    anchors: &Tensor,
    anchor_indices: &[usize],
    tau: f64,
) -> Result<()> {
    if tau <= 0.0 {
        return Err(contract(op, format!("temperature {tau} must be > 0")));
    }
    if anchors.rows() == 0 {
        return Err(contract(op, "need at least one anchor"));
    }
    if anchors.rank() != 2 || anchors.cols() != z_len {
        return Err(TensorError::DimMismatch {
            op,
            lhs: vec![z_len],
            rhs: anchors.shape().to_vec(),
        });
    }
    if anchors.rows() != anchor_indices.len() {
        return Err(contract(
            op,
            format!(
                "{} anchors but {} indices",
                anchors.rows(),
                anchor_indices.len()
            ),
        ));
    }
    Ok(())
}

/// Detached similarity distribution (teacher side and diagnostics).
pub fn similarity_distribution(
    z: &[f64],
    anchors: &Tensor,
    anchor_indices: &[usize],
    tau: f64,
) -> Result<SimilarityDistribution> {
    check_distribution_args("similarity_distribution", z.len(), anchors, anchor_indices, tau)?;
    let dist = SimilarityDistribution {
        probs: similarity_probs_raw(z, anchors, tau),
        anchor_indices: anchor_indices.to_vec(),
        temperature: tau,
        node: None,
    };
    dist.assert_normalized();
    Ok(dist)
}

/// Gradient-carrying similarity distribution for a student embedding.
pub fn similarity_distribution_var(
    g: &mut Graph,
    z: Var,
    anchors: &Tensor,
    anchor_indices: &[usize],
    tau: f64,
) -> Result<SimilarityDistribution> {
    let z_len = g.value(z).last_dim();
    check_distribution_args("similarity_distribution", z_len, anchors, anchor_indices, tau)?;
    if g.value(z).rank() != 2 || g.value(z).rows() != 1 {
        return Err(TensorError::BadRank {
            op: "similarity_distribution",
            expected: 2,
            shape: g.value(z).shape().to_vec(),
        });
    }
    let anchors_t = g.constant(anchors.transposed());
    let sims = g.matmul(z, anchors_t)?;
    let logits = g.scale(sims, 1.0 / tau);
    let probs = g.softmax(logits)?;
    let dist = SimilarityDistribution {
        probs: g.value(probs).data().to_vec(),
        anchor_indices: anchor_indices.to_vec(),
        temperature: tau,
        node: Some(probs),
    };
    dist.assert_normalized();
    Ok(dist)
}

/// KL(p || q) = sum p_i log(p_i / q_i), with both logs floored at 1e-12.
/// `p` is read as detached values; `q` carries gradient when it has a node.
pub fn kl_div(g: &mut Graph, p: &SimilarityDistribution, q: &SimilarityDistribution) -> Result<Var> {
    if p.anchor_indices != q.anchor_indices {
        return Err(contract(
            "kl_div",
            "distributions are over different anchor slots",
        ));
    }
    kl_div_unchecked(g, &p.probs, q)
}

fn kl_div_unchecked(g: &mut Graph, p_probs: &[f64], q: &SimilarityDistribution) -> Result<Var> {
    if p_probs.len() != q.probs.len() {
        return Err(TensorError::DimMismatch {
            op: "kl_div",
            lhs: vec![p_probs.len()],
            rhs: vec![q.probs.len()],
        });
    }
    // teacher entropy term is a constant
    let neg_entropy: f64 = p_probs
        .iter()
        .map(|&pi| pi * pi.max(PROB_FLOOR).ln())
        .sum();
    let value = match q.node {
        Some(node) => {
            let p_const = g.constant(Tensor::row(p_probs));
            let log_q = g.log(node);
            let weighted = g.mul(p_const, log_q)?;
            let cross = g.sum(weighted);
            let ne = g.scalar_const(neg_entropy);
            g.sub(ne, cross)?
        }
        None => {
            let kl: f64 = p_probs
                .iter()
                .zip(&q.probs)
                .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
                .sum();
            g.scalar_const(kl)
        }
    };
    let v = g.value(value).item();
    assert!(v >= -1e-12, "KL divergence {v} below -1e-12");
    Ok(value)
}

/// `log(sum(exp(row)))` with the max folded out as a constant, so no
/// exponential can overflow and the log argument stays >= 1.
fn log_sum_exp_row(g: &mut Graph, v: Var) -> Result<Var> {
    let vals = g.value(v).data();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shape = g.value(v).shape().to_vec();
    let shift = g.constant(Tensor::filled(shape, max));
    let centered = g.sub(v, shift)?;
    let e = g.exp(centered);
    let s = g.sum(e);
    let ls = g.log(s);
    let m = g.scalar_const(max);
    g.add(ls, m)
}

fn assert_unit(op: &'static str, v: &[f64]) {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-6, "{op}: expected unit norm, got {n}");
}

/// InfoNCE with one positive key and a bank of negatives. Differentiable in
/// `z_q` only; `z_k` and the negatives are detached by construction.
pub fn info_nce(
    g: &mut Graph,
    z_q: Var,
    z_k: &[f64],
    negatives: &Tensor,
    tau_c: f64,
) -> Result<Var> {
    if tau_c <= 0.0 {
        return Err(contract("info_nce", format!("temperature {tau_c} must be > 0")));
    }
    if negatives.rank() != 2 || negatives.rows() == 0 {
        return Err(contract("info_nce", "need at least one negative (N = 0)"));
    }
    let dim = g.value(z_q).last_dim();
    if z_k.len() != dim || negatives.cols() != dim {
        return Err(TensorError::DimMismatch {
            op: "info_nce",
            lhs: vec![dim],
            rhs: negatives.shape().to_vec(),
        });
    }
    assert_unit("info_nce key", z_k);
    assert_unit("info_nce query", g.value(z_q).data());

    let n = negatives.rows();
    let zk_col = g.constant(Tensor::matrix(dim, 1, z_k.to_vec())?);
    let pos = g.matmul(z_q, zk_col)?;
    let neg_t = g.constant(negatives.transposed());
    let negs = g.matmul(z_q, neg_t)?;
    let logits = g.concat_cols(&[pos, negs])?;
    let scaled = g.scale(logits, 1.0 / tau_c);
    let lse = log_sum_exp_row(g, scaled)?;
    let mut mask = vec![0.0; n + 1];
    mask[0] = 1.0;
    let mask = g.constant(Tensor::row(&mask));
    let picked = g.mul(scaled, mask)?;
    let pos_logit = g.sum(picked);
    g.sub(lse, pos_logit)
}

/// Cluster-branch contrastive loss: the identical contract to [`info_nce`],
/// applied to cluster-branch embeddings and the cluster bank's negatives.
pub fn cluster_info_nce(
    g: &mut Graph,
    z_q_star: Var,
    z_k_star: &[f64],
    cdb_negatives: &Tensor,
    tau_c: f64,
) -> Result<Var> {
    info_nce(g, z_q_star, z_k_star, cdb_negatives, tau_c)
}

/// One contrastive-learning entity seen by the distillation losses: its
/// student query (graph), detached teacher key, and the bank that stores its
/// negatives.
#[derive(Clone, Copy)]
pub struct EntityState<'a> {
    pub query: Var,
    pub key: &'a [f64],
    pub bank: &'a MemoryBank,
}

fn check_banks_synchronized(
    teacher: &MemoryBank,
    student: &MemoryBank,
    slots: &[usize],
) -> Result<()> {
    if teacher.fill_count() != student.fill_count() {
        return Err(contract(
            "md_loss",
            format!(
                "unsynchronized banks: fill {} vs {}",
                teacher.fill_count(),
                student.fill_count()
            ),
        ));
    }
    for &s in slots {
        if teacher.instance_id(s) != student.instance_id(s) {
            return Err(contract(
                "md_loss",
                format!("unsynchronized banks: slot {s} holds different instances"),
            ));
        }
    }
    Ok(())
}

fn md_loss_impl(
    g: &mut Graph,
    teacher_key: &[f64],
    teacher_bank: &MemoryBank,
    student_query: Var,
    student_bank: &MemoryBank,
    k_anchors: usize,
    tau_teacher: f64,
    tau_student: f64,
    assert_teacher_positive: bool,
) -> Result<Var> {
    if k_anchors == 0 {
        return Err(contract("md_loss", "k_anchors must be >= 1"));
    }
    if teacher_bank.fill_count() < k_anchors {
        return Err(contract(
            "md_loss",
            format!(
                "cold bank: fill_count {} < k_anchors {k_anchors}",
                teacher_bank.fill_count()
            ),
        ));
    }
    let top = teacher_bank.top_k(teacher_key, k_anchors)?;
    check_banks_synchronized(teacher_bank, student_bank, &top.indices)?;
    let teacher_anchors = teacher_bank.gather_keys(&top.indices)?;
    let teacher_probs = similarity_probs_raw(teacher_key, &teacher_anchors, tau_teacher);
    if assert_teacher_positive {
        let dist = SimilarityDistribution {
            probs: teacher_probs.clone(),
            anchor_indices: top.indices.clone(),
            temperature: tau_teacher,
            node: None,
        };
        dist.assert_normalized();
    }
    let student_anchors = student_bank.gather_keys(&top.indices)?;
    let student_dist =
        similarity_distribution_var(g, student_query, &student_anchors, &top.indices, tau_student)?;
    kl_div_unchecked(g, &teacher_probs, &student_dist)
}

/// One direction of mutual distillation: the teacher key picks its top-K
/// anchors in its own bank; the student's distribution is taken over the same
/// slots of the student's bank and pulled toward the teacher's by KL.
pub fn md_loss(
    g: &mut Graph,
    teacher_key: &[f64],
    teacher_bank: &MemoryBank,
    student_query: Var,
    student_bank: &MemoryBank,
    k_anchors: usize,
    tau_teacher: f64,
    tau_student: f64,
) -> Result<Var> {
    md_loss_impl(
        g,
        teacher_key,
        teacher_bank,
        student_query,
        student_bank,
        k_anchors,
        tau_teacher,
        tau_student,
        true,
    )
}

/// Both directions between two entities, summed.
pub fn md_loss_bidirectional(
    g: &mut Graph,
    a: &EntityState,
    b: &EntityState,
    k_anchors: usize,
    tau_teacher: f64,
    tau_student: f64,
) -> Result<Var> {
    let a_to_b = md_loss(g, a.key, a.bank, b.query, b.bank, k_anchors, tau_teacher, tau_student)?;
    let b_to_a = md_loss(g, b.key, b.bank, a.query, a.bank, k_anchors, tau_teacher, tau_student)?;
    g.add(a_to_b, b_to_a)
}

/// Cross-modal mutual distillation: bidirectional distillation over every
/// unordered pair of modalities.
pub fn cmd_loss(
    g: &mut Graph,
    entities: &[(Modality, EntityState)],
    k_anchors: usize,
    tau_teacher: f64,
    tau_student: f64,
) -> Result<Var> {
    if entities.len() < 2 {
        return Err(contract(
            "cmd_loss",
            format!("need at least two modalities, got {}", entities.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for i in 0..entities.len() {
        for j in (i + 1)..entities.len() {
            let pair = md_loss_bidirectional(
                g,
                &entities[i].1,
                &entities[j].1,
                k_anchors,
                tau_teacher,
                tau_student,
            )?;
            total = Some(match total {
                Some(t) => g.add(t, pair)?,
                None => pair,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}

/// Intra-modal distillation between the instance and cluster branches. Same
/// form as cross-modal distillation with the branch pair as the entities.
pub fn imd_loss(
    g: &mut Graph,
    idb: &EntityState,
    cdb: &EntityState,
    k_anchors: usize,
    tau_teacher: f64,
    tau_student: f64,
) -> Result<Var> {
    // teacher z_k* guides student z_q, and teacher z_k guides student z_q*
    md_loss_bidirectional(g, cdb, idb, k_anchors, tau_teacher, tau_student)
}

/// Per-modality loss terms feeding the final objective. Distillation terms
/// are absent during warm-up.
pub struct ModalityLosses {
    pub modality: Modality,
    pub scl: Var,
    pub cluster_scl: Option<Var>,
    pub imd: Option<Var>,
}

/// Final objective: per-modality intra terms plus the weighted cross-modal
/// term. Errors with the component name on any non-finite value.
pub fn total_loss(
    g: &mut Graph,
    intra: &[ModalityLosses],
    cmd: Option<Var>,
    cmd_weight: f64,
) -> Result<Var> {
    if cmd_weight < 0.0 {
        return Err(contract("total_loss", "cmd weight must be >= 0"));
    }
    let check = |g: &Graph, v: Var, name: String| -> Result<()> {
        let val = g.value(v).item();
        if !val.is_finite() {
            return Err(contract("total_loss", format!("non-finite component {name}")));
        }
        Ok(())
    };
    let mut total: Option<Var> = None;
    let add = |g: &mut Graph, total: &mut Option<Var>, v: Var| -> Result<()> {
        *total = Some(match *total {
            Some(t) => g.add(t, v)?,
            None => v,
        });
        Ok(())
    };
    for m in intra {
        check(g, m.scl, format!("scl[{}]", m.modality.name()))?;
        add(g, &mut total, m.scl)?;
        if let Some(v) = m.cluster_scl {
            check(g, v, format!("cluster_scl[{}]", m.modality.name()))?;
            add(g, &mut total, v)?;
        }
        if let Some(v) = m.imd {
            check(g, v, format!("imd[{}]", m.modality.name()))?;
            add(g, &mut total, v)?;
        }
    }
    let mut total = total.ok_or_else(|| contract("total_loss", "no loss components"))?;
    if let Some(cmd) = cmd {
        check(g, cmd, "cmd".into())?;
        let weighted = g.scale(cmd, cmd_weight);
        total = g.add(total, weighted)?;
    }
    Ok(total)
}

/// Convergence report for the distillation-to-positive-mining degeneracy.
#[derive(Debug, Clone)]
pub struct PositiveMiningReport {
    pub epsilons: Vec<f64>,
    pub md_values: Vec<f64>,
    pub closed_form: f64,
    pub mined_slot: usize,
    /// |md - closed| per epsilon.
    pub gaps: Vec<f64>,
    pub monotone: bool,
    pub final_gap_ok: bool,
}

impl PositiveMiningReport {
    pub fn pass(&self) -> bool {
        self.monotone && self.final_gap_ok
    }
}

/// As the teacher temperature goes to zero with the anchor set covering the
/// whole bank, one distillation direction reduces to InfoNCE-style positive
/// mining: the closed form is `-log softmax(student sims / tau_s)[u]` with
/// `u` the teacher's own argmax slot. This evaluates both sides at
/// `epsilon in {1e-2, 1e-3, 1e-4}` and reports the gap.
pub fn positive_mining_equivalence_check(
    teacher_key: &[f64],
    teacher_bank: &MemoryBank,
    student_query: &[f64],
    student_bank: &MemoryBank,
    tau_student: f64,
) -> Result<PositiveMiningReport> {
    let n = teacher_bank.fill_count();
    if n == 0 || n != student_bank.fill_count() {
        return Err(contract(
            "positive_mining_check",
            "banks must be non-empty and synchronized",
        ));
    }
    // strict distinctness of teacher similarities: argmax must be unique
    let mut sims = Vec::with_capacity(n);
    for slot in 0..n {
        sims.push(crate::tensor::dot_slices(teacher_key, teacher_bank.key(slot)));
    }
    let mut sorted = sims.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(contract(
            "positive_mining_check",
            "tie in teacher similarities; the argmax slot would be ambiguous",
        ));
    }
    let mined_slot = (0..n).max_by(|&a, &b| sims[a].partial_cmp(&sims[b]).unwrap()).unwrap();

    // closed form, straight-line: -log softmax(student sims / tau_s)[u]
    let mut s_logits = Vec::with_capacity(n);
    for slot in 0..n {
        s_logits.push(
            crate::tensor::dot_slices(student_query, student_bank.key(slot)) / tau_student,
        );
    }
    let max = s_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + s_logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let closed_form = lse - s_logits[mined_slot];

    let epsilons = vec![1e-2, 1e-3, 1e-4];
    let mut md_values = Vec::new();
    for &eps in &epsilons {
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(student_query));
        let v = md_loss_impl(
            &mut g,
            teacher_key,
            teacher_bank,
            q,
            student_bank,
            n,
            eps,
            tau_student,
            false,
        )?;
        md_values.push(g.value(v).item());
    }
    let gaps: Vec<f64> = md_values.iter().map(|v| (v - closed_form).abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    let final_gap_ok = *gaps.last().unwrap() < 1e-3;
    Ok(PositiveMiningReport {
        epsilons,
        md_values,
        closed_form,
        mined_slot,
        gaps,
        monotone,
        final_gap_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::tensor::{grad_check, DEFAULT_EPS, DEFAULT_TOL};
    use rand::Rng;

    fn unit_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= n;
        }
        v
    }

    fn toy_bank(rng: &mut impl Rng, n: usize, dim: usize) -> MemoryBank {
        let keys = (0..n).map(|_| unit_vec(rng, dim)).collect();
        MemoryBank::from_keys(keys, (0..n as u64).collect())
    }

    // ── straight-line oracle: full reimplementation of one md direction ──

    fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    fn md_oracle(
        teacher_key: &[f64],
        teacher_keys: &[Vec<f64>],
        student_query: &[f64],
        student_keys: &[Vec<f64>],
        k_c: usize,
        tau_t: f64,
        tau_s: f64,
    ) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        // top-k selection by similarity, ties to the lower slot
        let mut scored: Vec<(f64, usize)> = teacher_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (dot(teacher_key, k), i))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let slots: Vec<usize> = scored[..k_c].iter().map(|s| s.1).collect();
        let t_logits: Vec<f64> = slots
            .iter()
            .map(|&s| dot(teacher_key, &teacher_keys[s]) / tau_t)
            .collect();
        let s_logits: Vec<f64> = slots
            .iter()
            .map(|&s| dot(student_query, &student_keys[s]) / tau_s)
            .collect();
        let p = softmax_oracle(&t_logits);
        let q = softmax_oracle(&s_logits);
        p.iter()
            .zip(&q)
            .map(|(&pi, &qi)| pi * (pi.max(1e-12).ln() - qi.max(1e-12).ln()))
            .sum()
    }

    #[test]
    fn info_nce_equal_similarity_negative_gives_ln2() {
        let mut g = Graph::new();
        let z_q = g.constant(Tensor::row(&[1.0, 0.0]));
        let negatives = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let loss = info_nce(&mut g, z_q, &[1.0, 0.0], &negatives, 0.07).unwrap();
        assert!((g.value(loss).item() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn info_nce_matches_direct_evaluation() {
        // q.k = 1, q.m_i = -1 for 16 negatives, tau = 0.07
        let n = 16;
        let mut g = Graph::new();
        let z_q = g.constant(Tensor::row(&[1.0, 0.0]));
        let negatives =
            Tensor::matrix(n, 2, (0..n).flat_map(|_| [-1.0, 0.0]).collect()).unwrap();
        let loss = info_nce(&mut g, z_q, &[1.0, 0.0], &negatives, 0.07).unwrap();
        let expect = -(1.0 / (1.0 + n as f64 * (-2.0 / 0.07_f64).exp())).ln();
        assert!((g.value(loss).item() - expect).abs() < 1e-12);
        assert!(g.value(loss).item() < 1e-6, "near zero for well-separated pair");
    }

    #[test]
    fn default_temperatures_and_weight() {
        let t = TemperatureSet::default();
        assert_eq!(t.contrastive, 0.07);
        assert_eq!(t.teacher, 0.05);
        assert_eq!(t.student, 0.1);
        assert_eq!(LossWeights::default().cmd_weight, 0.5);
    }

    #[test]
    fn info_nce_rejects_empty_negatives() {
        let mut g = Graph::new();
        let z_q = g.constant(Tensor::row(&[1.0, 0.0]));
        let negatives = Tensor::zeros(vec![0, 2]);
        assert!(info_nce(&mut g, z_q, &[1.0, 0.0], &negatives, 0.07).is_err());
    }

    #[test]
    fn similarity_distribution_uniform_for_equal_logits() {
        let anchors = Tensor::matrix(4, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let d = similarity_distribution(&[0.0, 1.0], &anchors, &[0, 1, 2, 3], 0.5).unwrap();
        for &p in d.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_distribution_forced_sigmoid_values() {
        // anchors e1, e2 with z = e1 at tau = 1: [sigma(1), sigma(-1)]
        let anchors = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let d = similarity_distribution(&[1.0, 0.0], &anchors, &[0, 1], 1.0).unwrap();
        let e = std::f64::consts::E;
        let want = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert!((d.probs()[0] - want[0]).abs() < 1e-12);
        assert!((d.probs()[1] - want[1]).abs() < 1e-12);
        assert!((d.probs()[0] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn similarity_distribution_low_temperature_is_near_one_hot() {
        let mut rng = rng_for(11, &[]);
        let anchors_rows: Vec<Vec<f64>> = (0..6).map(|_| unit_vec(&mut rng, 8)).collect();
        let anchors = Tensor::matrix(6, 8, anchors_rows.concat()).unwrap();
        let z = unit_vec(&mut rng, 8);
        let d = similarity_distribution(&z, &anchors, &[0, 1, 2, 3, 4, 5], 0.01).unwrap();
        let max = d.probs().iter().cloned().fold(0.0, f64::max);
        assert!(max > 1.0 - 1e-6, "max prob {max}");
    }

    #[test]
    fn similarity_distribution_rejects_bad_temperature() {
        let anchors = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(similarity_distribution(&[1.0, 0.0], &anchors, &[0], 0.0).is_err());
        assert!(similarity_distribution(&[1.0, 0.0], &anchors, &[0], -1.0).is_err());
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let anchors = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        let p = similarity_distribution(&[0.6, 0.8], &anchors, &[0, 1, 2], 0.1).unwrap();
        let mut g = Graph::new();
        let v = kl_div(&mut g, &p, &p).unwrap();
        assert!(g.value(v).item().abs() < 1e-12);
    }

    #[test]
    fn kl_matches_direct_evaluation() {
        // uniform p vs near-one-hot q, straight-line oracle
        let k = 4;
        let p_probs = vec![0.25_f64; k];
        let eps = 1e-3_f64;
        let mut q_probs = vec![eps / (k as f64 - 1.0); k];
        q_probs[0] = 1.0 - eps;
        let want: f64 = p_probs
            .iter()
            .zip(&q_probs)
            .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
            .sum();
        let p = SimilarityDistribution {
            probs: p_probs,
            anchor_indices: vec![0, 1, 2, 3],
            temperature: 0.1,
            node: None,
        };
        let q = SimilarityDistribution {
            probs: q_probs,
            anchor_indices: vec![0, 1, 2, 3],
            temperature: 0.1,
            node: None,
        };
        let mut g = Graph::new();
        let v = kl_div(&mut g, &p, &q).unwrap();
        assert!((g.value(v).item() - want).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_over_random_pairs() {
        let mut rng = rng_for(12, &[]);
        for _ in 0..100 {
            let k = rng.gen_range(2..12);
            let anchors_rows: Vec<Vec<f64>> = (0..k).map(|_| unit_vec(&mut rng, 6)).collect();
            let anchors = Tensor::matrix(k, 6, anchors_rows.concat()).unwrap();
            let idx: Vec<usize> = (0..k).collect();
            let za = unit_vec(&mut rng, 6);
            let zb = unit_vec(&mut rng, 6);
            let p = similarity_distribution(&za, &anchors, &idx, 0.2).unwrap();
            let q = similarity_distribution(&zb, &anchors, &idx, 0.2).unwrap();
            let mut g = Graph::new();
            let v = kl_div(&mut g, &p, &q).unwrap();
            assert!(g.value(v).item() >= -1e-12);
        }
    }

    #[test]
    fn kl_rejects_mismatched_anchor_slots() {
        let anchors = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = similarity_distribution(&[1.0, 0.0], &anchors, &[0, 1], 0.1).unwrap();
        let q = similarity_distribution(&[1.0, 0.0], &anchors, &[1, 0], 0.1).unwrap();
        let mut g = Graph::new();
        assert!(kl_div(&mut g, &p, &q).is_err());
    }

    #[test]
    fn md_loss_zero_for_identical_entities_and_temperatures() {
        let mut rng = rng_for(13, &[]);
        let bank = toy_bank(&mut rng, 16, 4);
        let z = unit_vec(&mut rng, 4);
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(&z));
        let v = md_loss(&mut g, &z, &bank, q, &bank, 8, 0.1, 0.1).unwrap();
        assert!(g.value(v).item().abs() < 1e-12);
    }

    #[test]
    fn md_loss_matches_reimplementation_oracle() {
        for seed in 0..5u64 {
            let mut rng = rng_for(14, &[seed]);
            let n = 32;
            let dim = 6;
            let t_keys: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut rng, dim)).collect();
            let s_keys: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut rng, dim)).collect();
            let ids: Vec<u64> = (0..n as u64).collect();
            let t_bank = MemoryBank::from_keys(t_keys.clone(), ids.clone());
            let s_bank = MemoryBank::from_keys(s_keys.clone(), ids);
            let zt = unit_vec(&mut rng, dim);
            let zs = unit_vec(&mut rng, dim);
            let mut g = Graph::new();
            let q = g.constant(Tensor::row(&zs));
            let v = md_loss(&mut g, &zt, &t_bank, q, &s_bank, 8, 0.05, 0.1).unwrap();
            let want = md_oracle(&zt, &t_keys, &zs, &s_keys, 8, 0.05, 0.1);
            assert!(
                (g.value(v).item() - want).abs() < 1e-10,
                "{} vs {want}",
                g.value(v).item()
            );
        }
    }

    #[test]
    fn md_loss_rejects_cold_and_unsynchronized_banks() {
        let mut rng = rng_for(15, &[]);
        let bank = toy_bank(&mut rng, 4, 4);
        let z = unit_vec(&mut rng, 4);
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(&z));
        assert!(md_loss(&mut g, &z, &bank, q, &bank, 5, 0.05, 0.1).is_err());

        let other = MemoryBank::from_keys(
            (0..4).map(|_| unit_vec(&mut rng, 4)).collect(),
            vec![100, 101, 102, 103],
        );
        let err = md_loss(&mut g, &z, &bank, q, &other, 2, 0.05, 0.1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("unsynchronized"), "{err}");
    }

    #[test]
    fn md_loss_invariant_under_common_slot_permutation() {
        let mut rng = rng_for(16, &[]);
        let n = 12;
        let dim = 4;
        let t_keys: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut rng, dim)).collect();
        let s_keys: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut rng, dim)).collect();
        let ids: Vec<u64> = (0..n as u64).collect();
        let zt = unit_vec(&mut rng, dim);
        let zs = unit_vec(&mut rng, dim);

        let value = |perm: &[usize]| {
            let tk: Vec<Vec<f64>> = perm.iter().map(|&i| t_keys[i].clone()).collect();
            let sk: Vec<Vec<f64>> = perm.iter().map(|&i| s_keys[i].clone()).collect();
            let pid: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
            let tb = MemoryBank::from_keys(tk, pid.clone());
            let sb = MemoryBank::from_keys(sk, pid);
            let mut g = Graph::new();
            let q = g.constant(Tensor::row(&zs));
            let v = md_loss(&mut g, &zt, &tb, q, &sb, 6, 0.05, 0.1).unwrap();
            g.value(v).item()
        };
        let identity: Vec<usize> = (0..n).collect();
        let mut shuffled = identity.clone();
        // fixed permutation
        shuffled.rotate_left(5);
        shuffled.swap(0, 3);
        let a = value(&identity);
        let b = value(&shuffled);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    fn toy_entities<'a>(
        g: &mut Graph,
        banks: &'a [MemoryBank],
        keys: &'a [Vec<f64>],
        queries: &[Vec<f64>],
    ) -> Vec<EntityState<'a>> {
        (0..banks.len())
            .map(|i| EntityState {
                query: g.constant(Tensor::row(&queries[i])),
                key: &keys[i],
                bank: &banks[i],
            })
            .collect()
    }

    #[test]
    fn cmd_loss_zero_for_identical_modalities() {
        let mut rng = rng_for(17, &[]);
        let bank = toy_bank(&mut rng, 16, 4);
        let z = unit_vec(&mut rng, 4);
        let banks = vec![bank.clone(), bank.clone(), bank];
        let keys = vec![z.clone(), z.clone(), z.clone()];
        let queries = vec![z.clone(), z.clone(), z];
        let mut g = Graph::new();
        let ents = toy_entities(&mut g, &banks, &keys, &queries);
        let tagged: Vec<(Modality, EntityState)> = Modality::ALL
            .iter()
            .zip(&ents)
            .map(|(&m, &e)| (m, e))
            .collect();
        let v = cmd_loss(&mut g, &tagged, 8, 0.1, 0.1).unwrap();
        assert!(g.value(v).item().abs() < 1e-12);
    }

    #[test]
    fn cmd_loss_two_modalities_is_single_pair() {
        let mut rng = rng_for(18, &[]);
        let n = 16;
        let banks: Vec<MemoryBank> = (0..2).map(|_| toy_bank(&mut rng, n, 4)).collect();
        let keys: Vec<Vec<f64>> = (0..2).map(|_| unit_vec(&mut rng, 4)).collect();
        let queries: Vec<Vec<f64>> = (0..2).map(|_| unit_vec(&mut rng, 4)).collect();
        let mut g = Graph::new();
        let ents = toy_entities(&mut g, &banks, &keys, &queries);
        let tagged = vec![(Modality::Joint, ents[0]), (Modality::Motion, ents[1])];
        let whole = cmd_loss(&mut g, &tagged, 4, 0.05, 0.1).unwrap();
        let pair = md_loss_bidirectional(&mut g, &ents[0], &ents[1], 4, 0.05, 0.1).unwrap();
        assert!((g.value(whole).item() - g.value(pair).item()).abs() < 1e-12);
    }

    #[test]
    fn cmd_loss_composes_from_pairwise_terms() {
        let mut rng = rng_for(19, &[]);
        let n = 16;
        let banks: Vec<MemoryBank> = (0..3).map(|_| toy_bank(&mut rng, n, 4)).collect();
        let keys: Vec<Vec<f64>> = (0..3).map(|_| unit_vec(&mut rng, 4)).collect();
        let queries: Vec<Vec<f64>> = (0..3).map(|_| unit_vec(&mut rng, 4)).collect();
        let mut g = Graph::new();
        let ents = toy_entities(&mut g, &banks, &keys, &queries);
        let tagged: Vec<(Modality, EntityState)> = Modality::ALL
            .iter()
            .zip(&ents)
            .map(|(&m, &e)| (m, e))
            .collect();
        let whole = cmd_loss(&mut g, &tagged, 4, 0.05, 0.1).unwrap();
        let mut sum = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let p = md_loss_bidirectional(&mut g, &ents[i], &ents[j], 4, 0.05, 0.1).unwrap();
            sum += g.value(p).item();
        }
        assert!((g.value(whole).item() - sum).abs() < 1e-12);
    }

    #[test]
    fn cluster_info_nce_equals_info_nce_on_equal_inputs() {
        let mut rng = rng_for(20, &[]);
        let negatives_rows: Vec<Vec<f64>> = (0..8).map(|_| unit_vec(&mut rng, 4)).collect();
        let negatives = Tensor::matrix(8, 4, negatives_rows.concat()).unwrap();
        let zq = unit_vec(&mut rng, 4);
        let zk = unit_vec(&mut rng, 4);
        let mut g = Graph::new();
        let q1 = g.constant(Tensor::row(&zq));
        let q2 = g.constant(Tensor::row(&zq));
        let a = info_nce(&mut g, q1, &zk, &negatives, 0.07).unwrap();
        let b = cluster_info_nce(&mut g, q2, &zk, &negatives, 0.07).unwrap();
        assert_eq!(g.value(a).item(), g.value(b).item());

        // mirrored trivial case: single equal-similarity negative
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(&[0.0, 1.0, 0.0, 0.0]));
        let negs = Tensor::matrix(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let v = cluster_info_nce(&mut g, q, &[0.0, 1.0, 0.0, 0.0], &negs, 0.07).unwrap();
        assert!((g.value(v).item() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn imd_loss_zero_when_branches_agree() {
        let mut rng = rng_for(21, &[]);
        let bank = toy_bank(&mut rng, 16, 4);
        let z = unit_vec(&mut rng, 4);
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(&z));
        let idb = EntityState { query: q, key: &z, bank: &bank };
        let cdb = EntityState { query: q, key: &z, bank: &bank };
        let v = imd_loss(&mut g, &idb, &cdb, 8, 0.1, 0.1).unwrap();
        assert!(g.value(v).item().abs() < 1e-12);
    }

    #[test]
    fn imd_loss_is_branch_pair_distillation() {
        let mut rng = rng_for(22, &[]);
        let n = 16;
        let ids: Vec<u64> = (0..n as u64).collect();
        let ib = MemoryBank::from_keys((0..n).map(|_| unit_vec(&mut rng, 4)).collect(), ids.clone());
        let cb = MemoryBank::from_keys((0..n).map(|_| unit_vec(&mut rng, 4)).collect(), ids);
        let zk = unit_vec(&mut rng, 4);
        let zk_star = unit_vec(&mut rng, 4);
        let zq = unit_vec(&mut rng, 4);
        let zq_star = unit_vec(&mut rng, 4);
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(&zq));
        let q_star = g.constant(Tensor::row(&zq_star));
        let idb = EntityState { query: q, key: &zk, bank: &ib };
        let cdb = EntityState { query: q_star, key: &zk_star, bank: &cb };
        let whole = imd_loss(&mut g, &idb, &cdb, 6, 0.05, 0.1).unwrap();
        let same = md_loss_bidirectional(&mut g, &cdb, &idb, 6, 0.05, 0.1).unwrap();
        assert_eq!(g.value(whole).item(), g.value(same).item());

        // value also matches the straight-line oracle, both directions summed
        let t_keys: Vec<Vec<f64>> = (0..n).map(|s| cb.key(s).to_vec()).collect();
        let s_keys: Vec<Vec<f64>> = (0..n).map(|s| ib.key(s).to_vec()).collect();
        let want = md_oracle(&zk_star, &t_keys, &zq, &s_keys, 6, 0.05, 0.1)
            + md_oracle(&zk, &s_keys, &zq_star, &t_keys, 6, 0.05, 0.1);
        assert!((g.value(whole).item() - want).abs() < 1e-10);
    }

    #[test]
    fn total_loss_sums_components_and_is_linear_in_cmd_weight() {
        let mut g = Graph::new();
        let scl = g.scalar_const(1.25);
        let cscl = g.scalar_const(0.5);
        let imd = g.scalar_const(0.25);
        let cmd = g.scalar_const(2.0);
        let intra = vec![ModalityLosses {
            modality: Modality::Joint,
            scl,
            cluster_scl: Some(cscl),
            imd: Some(imd),
        }];
        let t0 = total_loss(&mut g, &intra, Some(cmd), 0.0).unwrap();
        assert!((g.value(t0).item() - 2.0).abs() < 1e-12, "weight 0 drops cmd");
        let t_half = total_loss(&mut g, &intra, Some(cmd), 0.5).unwrap();
        assert!((g.value(t_half).item() - 3.0).abs() < 1e-12);
        let t_one = total_loss(&mut g, &intra, Some(cmd), 1.0).unwrap();
        // linear in the weight with slope = cmd value
        let slope = (g.value(t_one).item() - g.value(t_half).item()) / 0.5;
        assert!((slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_names_non_finite_component() {
        let mut g = Graph::new();
        let scl = g.scalar_const(f64::NAN);
        let intra = vec![ModalityLosses {
            modality: Modality::Motion,
            scl,
            cluster_scl: None,
            imd: None,
        }];
        let err = total_loss(&mut g, &intra, None, 0.5).unwrap_err().to_string();
        assert!(err.contains("scl[motion]"), "{err}");
    }

    // ── degeneracy to positive mining ─────────────────────────────────────

    /// Teacher bank whose similarities to `[1, 0]` are random but separated
    /// by at least `min_gap`, so the argmax is unambiguous at every epsilon.
    fn separated_sim_bank(n: usize, min_gap: f64, seed: u64) -> MemoryBank {
        let mut rng = rng_for(23, &[seed]);
        let mut sims: Vec<f64> = Vec::new();
        while sims.len() < n {
            let s: f64 = rng.gen_range(-0.95..0.95);
            if sims.iter().all(|&x: &f64| (x - s).abs() >= min_gap) {
                sims.push(s);
            }
        }
        let keys: Vec<Vec<f64>> = sims
            .iter()
            .map(|&s| {
                let y = (1.0 - s * s).sqrt() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                vec![s, y]
            })
            .collect();
        MemoryBank::from_keys(keys, (0..n as u64).collect())
    }

    #[test]
    fn positive_mining_converges_on_random_toy_states() {
        for seed in 0..10u64 {
            let t_bank = separated_sim_bank(32, 0.02, seed);
            let mut rng = rng_for(24, &[seed]);
            let s_keys: Vec<Vec<f64>> = (0..32).map(|_| unit_vec(&mut rng, 2)).collect();
            let s_bank = MemoryBank::from_keys(s_keys, (0..32).collect());
            let zt = vec![1.0, 0.0];
            let zs = unit_vec(&mut rng, 2);
            let report =
                positive_mining_equivalence_check(&zt, &t_bank, &zs, &s_bank, 0.1).unwrap();
            assert!(report.monotone, "seed {seed}: gaps {:?}", report.gaps);
            assert!(report.final_gap_ok, "seed {seed}: gaps {:?}", report.gaps);
        }
    }

    #[test]
    fn positive_mining_exact_for_one_hot_teacher() {
        // big similarity gaps underflow the teacher softmax to an exact
        // one-hot at epsilon = 1e-4
        let keys = vec![
            vec![1.0, 0.0],
            vec![0.5, 0.75_f64.sqrt()],
            vec![-0.3, -(1.0_f64 - 0.09).sqrt()],
            vec![0.1, (1.0_f64 - 0.01).sqrt()],
        ];
        let bank = MemoryBank::from_keys(keys, vec![0, 1, 2, 3]);
        let zt = vec![1.0, 0.0];
        let zs = vec![0.6, 0.8];
        let report = positive_mining_equivalence_check(&zt, &bank, &zs, &bank, 0.1).unwrap();
        assert!(report.gaps[2] < 1e-12, "gaps {:?}", report.gaps);
        assert_eq!(report.mined_slot, 0);
    }

    #[test]
    fn positive_mining_finds_enqueued_positive_slot() {
        // the true positive (the teacher key itself) sits at slot 5
        let mut rng = rng_for(25, &[]);
        let mut keys: Vec<Vec<f64>> = (0..12).map(|_| unit_vec(&mut rng, 4)).collect();
        let zt = unit_vec(&mut rng, 4);
        keys[5] = zt.clone();
        let bank = MemoryBank::from_keys(keys, (0..12).collect());
        let zs = unit_vec(&mut rng, 4);
        let report = positive_mining_equivalence_check(&zt, &bank, &zs, &bank, 0.1).unwrap();
        assert_eq!(report.mined_slot, 5);
    }

    #[test]
    fn positive_mining_rejects_ties() {
        let keys = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let bank = MemoryBank::from_keys(keys, vec![0, 1, 2]);
        let err = positive_mining_equivalence_check(&[1.0, 0.0], &bank, &[0.0, 1.0], &bank, 0.1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("tie"), "{err}");
    }

    // ── gradients ─────────────────────────────────────────────────────────

    #[test]
    fn info_nce_gradient_matches_finite_differences() {
        let mut rng = rng_for(26, &[]);
        let negatives_rows: Vec<Vec<f64>> = (0..6).map(|_| unit_vec(&mut rng, 4)).collect();
        let negatives = Tensor::matrix(6, 4, negatives_rows.concat()).unwrap();
        let zk = unit_vec(&mut rng, 4);
        let raw = Tensor::row(&unit_vec(&mut rng, 4));
        let report = grad_check(
            |g, vars| {
                let z = g.l2_normalize(vars[0])?;
                info_nce(g, z, &zk, &negatives, 0.07)
            },
            &[raw],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn md_loss_gradient_matches_finite_differences() {
        let mut rng = rng_for(27, &[]);
        let bank_t = toy_bank(&mut rng, 16, 4);
        let bank_s = MemoryBank::from_keys(
            (0..16).map(|_| unit_vec(&mut rng, 4)).collect(),
            (0..16).collect(),
        );
        let zt = unit_vec(&mut rng, 4);
        let raw = Tensor::row(&unit_vec(&mut rng, 4));
        let report = grad_check(
            |g, vars| {
                let z = g.l2_normalize(vars[0])?;
                md_loss(g, &zt, &bank_t, z, &bank_s, 8, 0.05, 0.1)
            },
            &[raw],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn student_gets_gradient_teacher_stays_detached() {
        let mut rng = rng_for(28, &[]);
        let bank = toy_bank(&mut rng, 16, 4);
        let zt = unit_vec(&mut rng, 4);
        let mut g = Graph::new();
        let student_raw = g.leaf(Tensor::row(&unit_vec(&mut rng, 4)), true);
        let z = g.l2_normalize(student_raw).unwrap();
        let loss = md_loss(&mut g, &zt, &bank, z, &bank, 8, 0.05, 0.1).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(student_raw).expect("student gradient populated");
        assert!(grad.data().iter().any(|&v| v != 0.0));
    }
}
