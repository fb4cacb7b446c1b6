//! Verification suites behind the `verify` CLI command and the acceptance
//! tests: finite-difference gradient checks, the distillation-to-positive-
//! mining degeneracy, and brute-force oracle equivalences.
//!
//! Every oracle here is a straight-line reimplementation that goes through
//! none of the code paths it checks.

use crate::bank::MemoryBank;
use crate::data::Modality;
use crate::encoder::{encode, EncoderConfig, EncoderParams, EncoderVars};
use crate::losses::{
    cmd_loss, imd_loss, info_nce, kl_div, md_loss, positive_mining_equivalence_check,
    similarity_distribution, similarity_distribution_var, total_loss, EntityState, ModalityLosses,
};
use crate::rng::rng_for;
use crate::tensor::{grad_check, Graph, Result, Tensor, DEFAULT_EPS, DEFAULT_TOL};
use rand::Rng;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_err: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn ok(name: impl Into<String>, max_err: f64, tol: f64) -> Self {
        CheckResult {
            name: name.into(),
            max_err,
            pass: max_err < tol,
            detail: format!("max err {max_err:.3e} (tol {tol:.0e})"),
        }
    }

    fn exact(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            max_err: if pass { 0.0 } else { f64::INFINITY },
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = format!("suite {} ({} checks)\n", self.name, self.checks.len());
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {} — {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out.push_str(&format!(
            "  => {} in {:.2}s\n",
            if self.pass() { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64()
        ));
        out
    }
}

fn unit_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    for x in &mut v {
        *x /= n;
    }
    v
}

fn unit_bank(rng: &mut impl Rng, n: usize, dim: usize) -> MemoryBank {
    MemoryBank::from_keys(
        (0..n).map(|_| unit_vec(rng, dim)).collect(),
        (0..n as u64).collect(),
    )
}

// ── gradient suite ────────────────────────────────────────────────────────

fn check_over_seeds(
    name: &str,
    seeds: usize,
    mut one: impl FnMut(u64) -> Result<f64>,
) -> CheckResult {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        match one(seed) {
            Ok(err) => worst = worst.max(err),
            Err(e) => {
                return CheckResult::exact(name, false, format!("seed {seed}: {e}"));
            }
        }
    }
    CheckResult::ok(name, worst, DEFAULT_TOL)
}

/// Finite-difference checks for every differentiable op and every composite
/// loss, across randomized shapes and seeds.
pub fn gradient_suite(seeds: usize) -> SuiteReport {
    let start = Instant::now();
    let mut checks = Vec::new();

    // safe random tensors: keep relu/log inputs away from their kinks
    let tensor_in = |rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>| {
        let mut t = Tensor::uniform(rng, shape, -2.0, 2.0);
        for v in t.data_mut() {
            if v.abs() < 0.05 {
                *v = 0.1_f64.copysign(*v + 0.01);
            }
        }
        t
    };
    let positive_in = |rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>| {
        Tensor::uniform(rng, shape, 0.1, 3.0)
    };

    checks.push(check_over_seeds("op add", seeds, |s| {
        let mut rng = rng_for(0x100, &[s]);
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let a = tensor_in(&mut rng, vec![r, c]);
        let b = tensor_in(&mut rng, vec![r, c]);
        let rep = grad_check(
            |g, v| {
                let x = g.add(v[0], v[1])?;
                Ok(g.sum(x))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op sub", seeds, |s| {
        let mut rng = rng_for(0x101, &[s]);
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let a = tensor_in(&mut rng, vec![r, c]);
        let b = tensor_in(&mut rng, vec![r, c]);
        let rep = grad_check(
            |g, v| {
                let x = g.sub(v[0], v[1])?;
                Ok(g.mean(x))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op mul", seeds, |s| {
        let mut rng = rng_for(0x102, &[s]);
        let n = rng.gen_range(1..8);
        let a = tensor_in(&mut rng, vec![1, n]);
        let b = tensor_in(&mut rng, vec![1, n]);
        let rep = grad_check(
            |g, v| {
                let x = g.mul(v[0], v[1])?;
                Ok(g.sum(x))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op scale", seeds, |s| {
        let mut rng = rng_for(0x103, &[s]);
        let a = tensor_in(&mut rng, vec![2, 3]);
        let c: f64 = rng.gen_range(-2.0..2.0);
        let rep = grad_check(
            |g, v| {
                let x = g.scale(v[0], c);
                Ok(g.sum(x))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op add_bias", seeds, |s| {
        let mut rng = rng_for(0x104, &[s]);
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let a = tensor_in(&mut rng, vec![r, c]);
        let b = tensor_in(&mut rng, vec![c]);
        let rep = grad_check(
            |g, v| {
                let x = g.add_bias(v[0], v[1])?;
                Ok(g.sum(x))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op exp", seeds, |s| {
        let mut rng = rng_for(0x105, &[s]);
        let a = Tensor::uniform(&mut rng, vec![1, 6], -1.5, 1.5);
        let rep = grad_check(
            |g, v| {
                let x = g.exp(v[0]);
                Ok(g.sum(x))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op log", seeds, |s| {
        let mut rng = rng_for(0x106, &[s]);
        let a = positive_in(&mut rng, vec![1, 6]);
        let rep = grad_check(
            |g, v| {
                let x = g.log(v[0]);
                Ok(g.sum(x))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op relu", seeds, |s| {
        let mut rng = rng_for(0x107, &[s]);
        let a = tensor_in(&mut rng, vec![2, 4]);
        let rep = grad_check(
            |g, v| {
                let x = g.relu(v[0]);
                Ok(g.sum(x))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op matmul", seeds, |s| {
        let mut rng = rng_for(0x108, &[s]);
        let (m, k, n) = (
            rng.gen_range(1..6),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
        );
        let a = tensor_in(&mut rng, vec![m, k]);
        let b = tensor_in(&mut rng, vec![k, n]);
        let rep = grad_check(
            |g, v| {
                let x = g.matmul(v[0], v[1])?;
                Ok(g.sum(x))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op transpose", seeds, |s| {
        let mut rng = rng_for(0x109, &[s]);
        let a = tensor_in(&mut rng, vec![3, 2]);
        let probe = Tensor::uniform(&mut rng, vec![2, 3], -1.0, 1.0);
        let rep = grad_check(
            |g, v| {
                let x = g.transpose(v[0])?;
                let p = g.constant(probe.clone());
                let m = g.mul(x, p)?;
                Ok(g.sum(m))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op softmax", seeds, |s| {
        let mut rng = rng_for(0x10a, &[s]);
        let k = rng.gen_range(2..9);
        let a = Tensor::uniform(&mut rng, vec![2, k], -3.0, 3.0);
        let probe = Tensor::uniform(&mut rng, vec![2, k], -1.0, 1.0);
        let rep = grad_check(
            |g, v| {
                let x = g.softmax(v[0])?;
                let p = g.constant(probe.clone());
                let m = g.mul(x, p)?;
                Ok(g.sum(m))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op l2_normalize", seeds, |s| {
        let mut rng = rng_for(0x10b, &[s]);
        let k = rng.gen_range(2..17);
        let a = Tensor::uniform(&mut rng, vec![2, k], 0.2, 2.0);
        let probe = Tensor::uniform(&mut rng, vec![2, k], -1.0, 1.0);
        let rep = grad_check(
            |g, v| {
                let x = g.l2_normalize(v[0])?;
                let p = g.constant(probe.clone());
                let m = g.mul(x, p)?;
                Ok(g.sum(m))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op layer_norm", seeds, |s| {
        let mut rng = rng_for(0x10c, &[s]);
        let c = rng.gen_range(2..8);
        let x = Tensor::uniform(&mut rng, vec![3, c], -2.0, 2.0);
        let gamma = Tensor::uniform(&mut rng, vec![c], 0.5, 1.5);
        let beta = Tensor::uniform(&mut rng, vec![c], -0.5, 0.5);
        let probe = Tensor::uniform(&mut rng, vec![3, c], -1.0, 1.0);
        let rep = grad_check(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let p = g.constant(probe.clone());
                let m = g.mul(y, p)?;
                Ok(g.sum(m))
            },
            &[x, gamma, beta],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op mean/sum/mean_axis0", seeds, |s| {
        let mut rng = rng_for(0x10d, &[s]);
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let a = tensor_in(&mut rng, vec![r, c]);
        let probe = Tensor::uniform(&mut rng, vec![1, c], -1.0, 1.0);
        let rep = grad_check(
            |g, v| {
                let m0 = g.mean_axis0(v[0])?;
                let p = g.constant(probe.clone());
                let w = g.mul(m0, p)?;
                let s1 = g.sum(w);
                let s2 = g.mean(v[0]);
                g.add(s1, s2)
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op concat rows/cols", seeds, |s| {
        let mut rng = rng_for(0x10e, &[s]);
        let c = rng.gen_range(1..4);
        let a = tensor_in(&mut rng, vec![2, c]);
        let b = tensor_in(&mut rng, vec![1, c]);
        let rep = grad_check(
            |g, v| {
                let rows = g.concat_rows(&[v[0], v[1]])?;
                let t = g.transpose(rows)?;
                let cols = g.concat_cols(&[t, t])?;
                Ok(g.sum(cols))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("op gather_rows", seeds, |s| {
        let mut rng = rng_for(0x10f, &[s]);
        let n = rng.gen_range(3..7);
        let a = tensor_in(&mut rng, vec![n, 3]);
        let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..n)).collect();
        let rep = grad_check(
            |g, v| {
                let x = g.gather_rows(v[0], &idx)?;
                Ok(g.sum(x))
            },
            &[a],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("composite mean(relu(A*B))", seeds, |s| {
        let mut rng = rng_for(0x110, &[s]);
        let a = tensor_in(&mut rng, vec![4, 5]);
        let b = tensor_in(&mut rng, vec![5, 3]);
        let rep = grad_check(
            |g, v| {
                let x = g.matmul(v[0], v[1])?;
                let r = g.relu(x);
                Ok(g.mean(r))
            },
            &[a, b],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));

    // composite losses, differentiated through the student embeddings
    checks.push(check_over_seeds("loss infonce", seeds, |s| {
        let mut rng = rng_for(0x120, &[s]);
        let dim = 6;
        let n = rng.gen_range(2..16);
        let negatives = Tensor::matrix(
            n,
            dim,
            (0..n).flat_map(|_| unit_vec(&mut rng, dim)).collect(),
        )?;
        let zk = unit_vec(&mut rng, dim);
        let raw = Tensor::row(&unit_vec(&mut rng, dim));
        let rep = grad_check(
            |g, v| {
                let z = g.l2_normalize(v[0])?;
                info_nce(g, z, &zk, &negatives, 0.07)
            },
            &[raw],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("loss similarity distribution", seeds, |s| {
        let mut rng = rng_for(0x121, &[s]);
        let dim = 5;
        let k = rng.gen_range(2..10);
        let anchors = Tensor::matrix(
            k,
            dim,
            (0..k).flat_map(|_| unit_vec(&mut rng, dim)).collect(),
        )?;
        let idx: Vec<usize> = (0..k).collect();
        let probe = Tensor::uniform(&mut rng, vec![1, k], -1.0, 1.0);
        let raw = Tensor::row(&unit_vec(&mut rng, dim));
        let rep = grad_check(
            |g, v| {
                let z = g.l2_normalize(v[0])?;
                let d = similarity_distribution_var(g, z, &anchors, &idx, 0.1)?;
                let node = d_node(&d);
                let p = g.constant(probe.clone());
                let m = g.mul(node, p)?;
                Ok(g.sum(m))
            },
            &[raw],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("loss kl divergence", seeds, |s| {
        let mut rng = rng_for(0x122, &[s]);
        let dim = 5;
        let k = 8;
        let anchors = Tensor::matrix(
            k,
            dim,
            (0..k).flat_map(|_| unit_vec(&mut rng, dim)).collect(),
        )?;
        let idx: Vec<usize> = (0..k).collect();
        let teacher = similarity_distribution(&unit_vec(&mut rng, dim), &anchors, &idx, 0.05)?;
        let raw = Tensor::row(&unit_vec(&mut rng, dim));
        let rep = grad_check(
            |g, v| {
                let z = g.l2_normalize(v[0])?;
                let q = similarity_distribution_var(g, z, &anchors, &idx, 0.1)?;
                kl_div(g, &teacher, &q)
            },
            &[raw],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("loss mutual distillation", seeds, |s| {
        let mut rng = rng_for(0x123, &[s]);
        let dim = 5;
        let t_bank = unit_bank(&mut rng, 16, dim);
        let s_bank = unit_bank(&mut rng, 16, dim);
        let zt = unit_vec(&mut rng, dim);
        let raw = Tensor::row(&unit_vec(&mut rng, dim));
        let rep = grad_check(
            |g, v| {
                let z = g.l2_normalize(v[0])?;
                md_loss(g, &zt, &t_bank, z, &s_bank, 6, 0.05, 0.1)
            },
            &[raw],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("loss cross-modal distillation", seeds, |s| {
        let mut rng = rng_for(0x124, &[s]);
        let dim = 5;
        let banks: Vec<MemoryBank> = (0..3).map(|_| unit_bank(&mut rng, 12, dim)).collect();
        let keys: Vec<Vec<f64>> = (0..3).map(|_| unit_vec(&mut rng, dim)).collect();
        let raws: Vec<Tensor> = (0..3).map(|_| Tensor::row(&unit_vec(&mut rng, dim))).collect();
        let rep = grad_check(
            |g, v| {
                let mut entities = Vec::new();
                for i in 0..3 {
                    let z = g.l2_normalize(v[i])?;
                    entities.push((
                        Modality::ALL[i],
                        EntityState {
                            query: z,
                            key: &keys[i],
                            bank: &banks[i],
                        },
                    ));
                }
                cmd_loss(g, &entities, 5, 0.05, 0.1)
            },
            &raws,
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("loss intra-modal distillation", seeds, |s| {
        let mut rng = rng_for(0x125, &[s]);
        let dim = 5;
        let ib = unit_bank(&mut rng, 12, dim);
        let cb = unit_bank(&mut rng, 12, dim);
        let zk = unit_vec(&mut rng, dim);
        let zks = unit_vec(&mut rng, dim);
        let raws = vec![
            Tensor::row(&unit_vec(&mut rng, dim)),
            Tensor::row(&unit_vec(&mut rng, dim)),
        ];
        let rep = grad_check(
            |g, v| {
                let zq = g.l2_normalize(v[0])?;
                let zqs = g.l2_normalize(v[1])?;
                let idb = EntityState { query: zq, key: &zk, bank: &ib };
                let cdb = EntityState { query: zqs, key: &zks, bank: &cb };
                imd_loss(g, &idb, &cdb, 5, 0.05, 0.1)
            },
            &raws,
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("loss full objective (2-sample batch)", seeds, |s| {
        let mut rng = rng_for(0x126, &[s]);
        let dim = 5;
        let idb_banks: Vec<MemoryBank> = (0..3).map(|_| unit_bank(&mut rng, 10, dim)).collect();
        let cdb_banks: Vec<MemoryBank> = (0..3).map(|_| unit_bank(&mut rng, 10, dim)).collect();
        let keys: Vec<Vec<f64>> = (0..6).map(|_| unit_vec(&mut rng, dim)).collect();
        let star_keys: Vec<Vec<f64>> = (0..6).map(|_| unit_vec(&mut rng, dim)).collect();
        // inputs: per sample (2) per modality (3), raw z_q and raw z_q*
        let raws: Vec<Tensor> = (0..12).map(|_| Tensor::row(&unit_vec(&mut rng, dim))).collect();
        let rep = grad_check(
            |g, v| {
                let mut batch_total: Option<crate::tensor::Var> = None;
                for sample in 0..2 {
                    let mut intra = Vec::new();
                    let mut entities = Vec::new();
                    for m in 0..3 {
                        let zq = g.l2_normalize(v[sample * 6 + m * 2])?;
                        let zqs = g.l2_normalize(v[sample * 6 + m * 2 + 1])?;
                        let key = &keys[sample * 3 + m];
                        let skey = &star_keys[sample * 3 + m];
                        let scl = info_nce(g, zq, key, &idb_banks[m].keys_matrix(), 0.07)?;
                        let cscl = info_nce(g, zqs, skey, &cdb_banks[m].keys_matrix(), 0.07)?;
                        let idb = EntityState { query: zq, key, bank: &idb_banks[m] };
                        let cdb = EntityState { query: zqs, key: skey, bank: &cdb_banks[m] };
                        let imd = imd_loss(g, &idb, &cdb, 4, 0.05, 0.1)?;
                        entities.push((Modality::ALL[m], idb));
                        intra.push(ModalityLosses {
                            modality: Modality::ALL[m],
                            scl,
                            cluster_scl: Some(cscl),
                            imd: Some(imd),
                        });
                    }
                    let cmd = cmd_loss(g, &entities, 4, 0.05, 0.1)?;
                    let total = total_loss(g, &intra, Some(cmd), 0.5)?;
                    batch_total = Some(match batch_total {
                        Some(t) => g.add(t, total)?,
                        None => total,
                    });
                }
                Ok(g.scale(batch_total.unwrap(), 0.5))
            },
            &raws,
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));
    checks.push(check_over_seeds("encoder full pipeline", 2.min(seeds), |s| {
        let mut rng = rng_for(0x127, &[s]);
        let topo = crate::data::Topology::new(vec![-1, 0, 1]).unwrap();
        let config = EncoderConfig::toy(3);
        let params = EncoderParams::init(&config, &mut rng)?;
        let coords: Vec<f64> = (0..3 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = crate::data::SkeletonSequence::new(3, 3, coords, 0, 0)?;
        let adj = topo.normalized_adjacency();
        let neighbors = Tensor::uniform(&mut rng, vec![2, 8], -1.0, 1.0);
        let probe = Tensor::uniform(&mut rng, vec![1, 4], -1.0, 1.0);
        let flat: Vec<Tensor> = params.tensors.flatten().into_iter().cloned().collect();
        let rep = grad_check(
            |g, vars| {
                let enc = EncoderVars {
                    config: params.config.clone(),
                    vars: params.tensors.from_flat(vars),
                };
                let n = g.constant(neighbors.clone());
                let (h, z) = encode(g, &enc, &seq, &adj, Some(n))?;
                let p = g.constant(probe.clone());
                let w = g.mul(z, p)?;
                let s1 = g.sum(w);
                let s2 = g.mean(h);
                g.add(s1, s2)
            },
            &flat,
            DEFAULT_EPS,
            DEFAULT_TOL,
        )?;
        Ok(rep.max_rel_err)
    }));

    SuiteReport {
        name: "gradients",
        checks,
        elapsed: start.elapsed(),
    }
}

fn d_node(d: &crate::losses::SimilarityDistribution) -> crate::tensor::Var {
    d.node().expect("student distribution carries a node")
}

// ── degeneracy suite ──────────────────────────────────────────────────────

/// Teacher bank with well-separated similarities to `[1, 0]`: the argmax is
/// unambiguous at every evaluated temperature.
fn separated_bank(rng: &mut impl Rng, n: usize, min_gap: f64) -> MemoryBank {
    let mut sims: Vec<f64> = Vec::new();
    while sims.len() < n {
        let s: f64 = rng.gen_range(-0.95..0.95);
        if sims.iter().all(|&x: &f64| (x - s).abs() >= min_gap) {
            sims.push(s);
        }
    }
    let keys = sims
        .iter()
        .map(|&s| {
            let y = (1.0 - s * s).sqrt() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            vec![s, y]
        })
        .collect();
    MemoryBank::from_keys(keys, (0..n as u64).collect())
}

/// Distillation degenerates to positive mining as the teacher temperature
/// goes to zero. Checks monotone convergence and the closed-form limit on
/// `states` random toy states.
pub fn eq6_suite(states: usize) -> SuiteReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    for seed in 0..states as u64 {
        let mut rng = rng_for(0x130, &[seed]);
        let n = 16 + (seed as usize % 3) * 16; // up to 48 <= 64
        let t_bank = separated_bank(&mut rng, n, 0.02);
        let s_bank = unit_bank(&mut rng, n, 2);
        let zs = unit_vec(&mut rng, 2);
        match positive_mining_equivalence_check(&[1.0, 0.0], &t_bank, &zs, &s_bank, 0.1) {
            Ok(report) => {
                let gaps = report
                    .gaps
                    .iter()
                    .map(|g| format!("{g:.3e}"))
                    .collect::<Vec<_>>()
                    .join(" -> ");
                checks.push(CheckResult {
                    name: format!("toy state {seed} (N={n})"),
                    max_err: *report.gaps.last().unwrap(),
                    pass: report.pass(),
                    detail: format!("gaps {gaps}, mined slot {}", report.mined_slot),
                });
            }
            Err(e) => checks.push(CheckResult::exact(
                format!("toy state {seed}"),
                false,
                e.to_string(),
            )),
        }
    }
    SuiteReport {
        name: "eq6",
        checks,
        elapsed: start.elapsed(),
    }
}

// ── brute-force oracle suite ──────────────────────────────────────────────

fn softmax_line(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn dot_line(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn md_line(
    teacher_key: &[f64],
    teacher_keys: &[Vec<f64>],
    student_query: &[f64],
    student_keys: &[Vec<f64>],
    k_c: usize,
    tau_t: f64,
    tau_s: f64,
) -> f64 {
    let mut scored: Vec<(f64, usize)> = teacher_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (dot_line(teacher_key, k), i))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let slots: Vec<usize> = scored[..k_c].iter().map(|x| x.1).collect();
    let p = softmax_line(
        &slots
            .iter()
            .map(|&i| dot_line(teacher_key, &teacher_keys[i]) / tau_t)
            .collect::<Vec<_>>(),
    );
    let q = softmax_line(
        &slots
            .iter()
            .map(|&i| dot_line(student_query, &student_keys[i]) / tau_s)
            .collect::<Vec<_>>(),
    );
    p.iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi.max(1e-12).ln() - qi.max(1e-12).ln()))
        .sum()
}

/// Exact equivalence of retrieval, FIFO contents, KNN predictions, and every
/// loss value against straight-line reimplementations.
pub fn oracle_suite() -> SuiteReport {
    let start = Instant::now();
    let mut checks = Vec::new();

    // top-k against a full sort, n up to 1024
    {
        let mut worst_ok = true;
        let mut detail = String::new();
        for (i, n) in [17usize, 256, 1024].iter().enumerate() {
            let mut rng = rng_for(0x140, &[i as u64]);
            let dim = 16;
            let keys: Vec<Vec<f64>> = (0..*n).map(|_| unit_vec(&mut rng, dim)).collect();
            let bank = MemoryBank::from_keys(keys.clone(), (0..*n as u64).collect());
            let q = unit_vec(&mut rng, dim);
            let k = (n / 8).max(1);
            let got = bank.top_k(&q, k).expect("top_k");
            let mut all: Vec<(f64, usize)> = keys
                .iter()
                .enumerate()
                .map(|(i, key)| (dot_line(&q, key), i))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
            if got.indices != want {
                worst_ok = false;
                detail = format!("mismatch at n={n}");
                break;
            }
        }
        checks.push(CheckResult::exact(
            "top-k vs full sort (n up to 1024)",
            worst_ok,
            if detail.is_empty() { "exact match".into() } else { detail },
        ));
    }

    // FIFO group contents against a list model
    {
        use crate::bank::{BankBatch, BankGroup};
        let mut rng = rng_for(0x141, &[]);
        let capacity = 64;
        let mut group = BankGroup::new(&[Modality::Joint], capacity, 4, 3);
        let mut model: Vec<(u64, Vec<f64>)> = Vec::new();
        let mut next_id = 0u64;
        let mut ok = true;
        for _ in 0..30 {
            let batch = rng.gen_range(1..=16usize);
            let keys: Vec<Vec<f64>> = (0..batch).map(|_| unit_vec(&mut rng, 4)).collect();
            let values: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let ids: Vec<u64> = (0..batch).map(|i| next_id + i as u64).collect();
            next_id += batch as u64;
            for (i, id) in ids.iter().enumerate() {
                model.push((*id, keys[i].clone()));
            }
            let payload = vec![
                BankBatch {
                    keys: keys.clone(),
                    values: Some(values),
                },
                BankBatch { keys, values: None },
            ];
            group.enqueue_batch(&ids, &payload).expect("enqueue");
        }
        let total = model.len();
        let keep = total.min(capacity);
        let bank = group.bank(Modality::Joint, crate::bank::Branch::Instance);
        if bank.fill_count() != keep {
            ok = false;
        } else {
            for (age, (id, key)) in model[total - keep..].iter().enumerate() {
                let write_index = total - keep + age;
                let slot = write_index % capacity;
                if bank.instance_id(slot) != *id || bank.key(slot) != key.as_slice() {
                    ok = false;
                    break;
                }
            }
        }
        checks.push(CheckResult::exact(
            "FIFO banks vs list model",
            ok,
            format!("{total} writes into capacity {capacity}"),
        ));
    }

    // KNN predictions against a double loop
    {
        let mut rng = rng_for(0x142, &[]);
        let dim = 8;
        let make = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            crate::eval::FeatureSet::new(Tensor::matrix(n, dim, data).unwrap(), labels, "oracle")
                .unwrap()
        };
        let train = make(&mut rng, 300);
        let test = make(&mut rng, 100);
        let got = crate::eval::knn_predict(&train, &test).expect("knn");
        let mut ok = true;
        for i in 0..test.len() {
            let q = test.features.row_slice(i);
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut best = (f64::NEG_INFINITY, 0usize);
            for j in 0..train.len() {
                let t = train.features.row_slice(j);
                let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = dot_line(q, t) / (qn * tn);
                if s > best.0 {
                    best = (s, j);
                }
            }
            if got[i] != train.labels[best.1] {
                ok = false;
                break;
            }
        }
        checks.push(CheckResult::exact(
            "KNN vs double loop (300x100)",
            ok,
            "predictions identical",
        ));
    }

    // loss values against straight-line reimplementations, to 1e-10
    {
        let mut rng = rng_for(0x143, &[]);
        let dim = 6;
        let tol = 1e-10;

        // infonce
        let n = 24;
        let neg_rows: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut rng, dim)).collect();
        let negatives = Tensor::matrix(n, dim, neg_rows.concat()).unwrap();
        let zq = unit_vec(&mut rng, dim);
        let zk = unit_vec(&mut rng, dim);
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(&zq));
        let got = info_nce(&mut g, q, &zk, &negatives, 0.07).unwrap();
        let got = g.value(got).item();
        let mut logits = vec![dot_line(&zq, &zk) / 0.07];
        for r in &neg_rows {
            logits.push(dot_line(&zq, r) / 0.07);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let want = lse - logits[0];
        checks.push(CheckResult::ok("infonce vs direct formula", (got - want).abs(), tol));

        // similarity distribution
        let k = 9;
        let anchor_rows: Vec<Vec<f64>> = (0..k).map(|_| unit_vec(&mut rng, dim)).collect();
        let anchors = Tensor::matrix(k, dim, anchor_rows.concat()).unwrap();
        let idx: Vec<usize> = (0..k).collect();
        let z = unit_vec(&mut rng, dim);
        let d = similarity_distribution(&z, &anchors, &idx, 0.1).unwrap();
        let want_probs = softmax_line(
            &anchor_rows
                .iter()
                .map(|a| dot_line(&z, a) / 0.1)
                .collect::<Vec<_>>(),
        );
        let simdist_err = d
            .probs()
            .iter()
            .zip(&want_probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        checks.push(CheckResult::ok("similarity distribution vs softmax", simdist_err, tol));

        // kl
        let za = unit_vec(&mut rng, dim);
        let zb = unit_vec(&mut rng, dim);
        let p = similarity_distribution(&za, &anchors, &idx, 0.05).unwrap();
        let qd = similarity_distribution(&zb, &anchors, &idx, 0.1).unwrap();
        let mut g = Graph::new();
        let got = kl_div(&mut g, &p, &qd).unwrap();
        let got = g.value(got).item();
        let want: f64 = p
            .probs()
            .iter()
            .zip(qd.probs())
            .map(|(&pi, &qi)| pi * (pi.max(1e-12).ln() - qi.max(1e-12).ln()))
            .sum();
        checks.push(CheckResult::ok("kl vs direct sum", (got - want).abs(), tol));

        // md, imd, cmd and the total objective on a random toy state
        let n = 32;
        let banks: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| (0..n).map(|_| unit_vec(&mut rng, dim)).collect())
            .collect();
        let mem: Vec<MemoryBank> = banks
            .iter()
            .map(|keys| MemoryBank::from_keys(keys.clone(), (0..n as u64).collect()))
            .collect();
        let zqs: Vec<Vec<f64>> = (0..3).map(|_| unit_vec(&mut rng, dim)).collect();
        let zks: Vec<Vec<f64>> = (0..3).map(|_| unit_vec(&mut rng, dim)).collect();
        let k_c = 8;

        let mut g = Graph::new();
        let qvars: Vec<crate::tensor::Var> =
            zqs.iter().map(|z| g.constant(Tensor::row(z))).collect();
        let got_md = {
            let v = md_loss(&mut g, &zks[0], &mem[0], qvars[1], &mem[1], k_c, 0.05, 0.1).unwrap();
            g.value(v).item()
        };
        let want_md = md_line(&zks[0], &banks[0], &zqs[1], &banks[1], k_c, 0.05, 0.1);
        checks.push(CheckResult::ok("md vs reimplementation", (got_md - want_md).abs(), tol));

        let entities: Vec<(Modality, EntityState)> = (0..3)
            .map(|i| {
                (
                    Modality::ALL[i],
                    EntityState {
                        query: qvars[i],
                        key: &zks[i],
                        bank: &mem[i],
                    },
                )
            })
            .collect();
        let got_cmd = {
            let v = cmd_loss(&mut g, &entities, k_c, 0.05, 0.1).unwrap();
            g.value(v).item()
        };
        let mut want_cmd = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            want_cmd += md_line(&zks[i], &banks[i], &zqs[j], &banks[j], k_c, 0.05, 0.1);
            want_cmd += md_line(&zks[j], &banks[j], &zqs[i], &banks[i], k_c, 0.05, 0.1);
        }
        checks.push(CheckResult::ok("cmd vs pair sums", (got_cmd - want_cmd).abs(), tol));

        let idb = EntityState {
            query: qvars[0],
            key: &zks[0],
            bank: &mem[0],
        };
        let star_q = g.constant(Tensor::row(&zqs[2]));
        let cdb = EntityState {
            query: star_q,
            key: &zks[2],
            bank: &mem[3],
        };
        let got_imd = {
            let v = imd_loss(&mut g, &idb, &cdb, k_c, 0.05, 0.1).unwrap();
            g.value(v).item()
        };
        let want_imd = md_line(&zks[2], &banks[3], &zqs[0], &banks[0], k_c, 0.05, 0.1)
            + md_line(&zks[0], &banks[0], &zqs[2], &banks[3], k_c, 0.05, 0.1);
        checks.push(CheckResult::ok("imd vs reimplementation", (got_imd - want_imd).abs(), tol));

        // total objective equals the hand-built sum
        let scl = g.scalar_const(0.7);
        let cscl = g.scalar_const(0.3);
        let imd_c = g.scalar_const(0.2);
        let cmd_c = g.scalar_const(1.1);
        let intra = vec![ModalityLosses {
            modality: Modality::Joint,
            scl,
            cluster_scl: Some(cscl),
            imd: Some(imd_c),
        }];
        let got_total = {
            let v = total_loss(&mut g, &intra, Some(cmd_c), 0.5).unwrap();
            g.value(v).item()
        };
        checks.push(CheckResult::ok(
            "total objective vs hand sum",
            (got_total - (0.7 + 0.3 + 0.2 + 0.5 * 1.1)).abs(),
            tol,
        ));
    }

    SuiteReport {
        name: "oracles",
        checks,
        elapsed: start.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes_with_few_seeds() {
        let report = gradient_suite(3);
        assert!(report.pass(), "{}", report.render());
    }

    #[test]
    fn eq6_suite_passes() {
        let report = eq6_suite(3);
        assert!(report.pass(), "{}", report.render());
    }

    #[test]
    fn oracle_suite_passes() {
        let report = oracle_suite();
        assert!(report.pass(), "{}", report.render());
    }
}
