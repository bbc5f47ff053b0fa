//! Training objectives: point-wise BCE over positive/negative pairs, the
//! bidirectional InfoNCE loss that aligns ID-based and content-based user
//! embeddings, and their weighted sum.
//!
//! Every loss exists twice: as a plain f64 function (used by tests as an
//! independent route and by reporting), and as a graph builder over
//! [`crate::numcore::Graph`] vars (used by training, where gradients come
//! from the tape). The two must agree to near machine precision; the unit
//! tests pin that down together with hand-computed oracle values.

use crate::error::{MolarError, Result};
use crate::numcore::graph::{Graph, Var};
use crate::numcore::tensor::Tensor;

/// Probabilities are clamped away from {0, 1} before the log.
pub const PROB_EPS: f64 = 1e-7;

/// One positive/negative probability pair for the BCE loss; the implied
/// label vector is `[1, 0]`.
#[derive(Clone, Copy, Debug)]
pub struct BcePair {
    pub x_pos: f64,
    pub x_neg: f64,
}

/// A batch of paired user embeddings for the alignment loss.
///
/// Index `i` in both lists refers to the same user. Each anchor is compared
/// against `k` instances: its own positive plus `k - 1` in-batch negatives
/// taken cyclically from the following users.
#[derive(Clone, Debug)]
pub struct AlignBatch {
    pub id_embeddings: Vec<Vec<f64>>,
    pub content_embeddings: Vec<Vec<f64>>,
    pub tau: f64,
    pub k: usize,
}

impl AlignBatch {
    pub fn new(
        id_embeddings: Vec<Vec<f64>>,
        content_embeddings: Vec<Vec<f64>>,
        tau: f64,
        k: usize,
    ) -> Result<Self> {
        let u = id_embeddings.len();
        if u < 2 {
            return Err(MolarError::Numeric(format!(
                "alignment batch needs at least 2 users, got {u}"
            )));
        }
        if content_embeddings.len() != u {
            return Err(MolarError::Shape(format!(
                "alignment batch: {u} id embeddings vs {} content embeddings",
                content_embeddings.len()
            )));
        }
        if tau <= 0.0 {
            return Err(MolarError::Config(format!(
                "temperature must be > 0, got {tau}"
            )));
        }
        if k < 2 || k > u {
            return Err(MolarError::Config(format!(
                "comparative set size k={k} must be in [2, {u}]"
            )));
        }
        Ok(Self {
            id_embeddings,
            content_embeddings,
            tau,
            k,
        })
    }

    /// Full in-batch negatives (k = |U|).
    pub fn full(
        id_embeddings: Vec<Vec<f64>>,
        content_embeddings: Vec<Vec<f64>>,
        tau: f64,
    ) -> Result<Self> {
        let k = id_embeddings.len();
        Self::new(id_embeddings, content_embeddings, tau, k)
    }
}

/// Cosine similarity; errors on a zero-norm input.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MolarError::Shape(format!(
            "cosine: lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Err(MolarError::Numeric(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Per-pair BCE: `-(log x_pos + log(1 - x_neg))` with clamped probabilities.
pub fn bce_loss(pair: BcePair) -> f64 {
    let xp = pair.x_pos.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let xn = pair.x_neg.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(xp.ln() + (1.0 - xn).ln())
}

/// Mean BCE over a batch of pairs.
pub fn bce_loss_batch(pairs: &[BcePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&p| bce_loss(p)).sum::<f64>() / pairs.len() as f64
}

/// Bidirectional InfoNCE alignment loss (pure route).
///
/// For each user the positive is their own opposite-modality embedding and
/// the denominator runs over the comparative set at temperature `tau`; the
/// two directions (id->content and content->id) are averaged over users and
/// summed.
pub fn align_loss(batch: &AlignBatch) -> Result<f64> {
    let u = batch.id_embeddings.len();
    let k = batch.k;
    // cosine matrix: sim[i][j] = cos(id_i, con_j)
    let mut sim = vec![vec![0.0; u]; u];
    for i in 0..u {
        for j in 0..u {
            sim[i][j] = cosine_similarity(&batch.id_embeddings[i], &batch.content_embeddings[j])?;
        }
    }
    let mut total = 0.0;
    for i in 0..u {
        // id -> content: positive on the diagonal, negatives cyclic
        total += log_softmax_at_zero((0..k).map(|off| sim[i][(i + off) % u] / batch.tau));
        // content -> id
        total += log_softmax_at_zero((0..k).map(|off| sim[(i + off) % u][i] / batch.tau));
    }
    Ok(-total / u as f64)
}

/// log(exp(x_0) / sum_j exp(x_j)) computed stably; the positive sits at
/// index zero of the iterator.
fn log_softmax_at_zero(scores: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = scores.collect();
    let max = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    xs[0] - lse
}

/// Weighted total: `bce + alpha * align`.
pub fn total_loss(bce: f64, align: f64, alpha: f64) -> f64 {
    bce + alpha * align
}

// ── graph builders ──────────────────────────────────────────────────

/// BCE over stacked scores: `pos_scores`/`neg_scores` are `[B]` (or `[B,1]`)
/// vars of raw dot-product scores; probabilities go through a logistic and
/// the clamp before the log. Returns the scalar mean loss.
pub fn bce_loss_graph(g: &mut Graph, pos_scores: Var, neg_scores: Var) -> Result<Var> {
    let p_pos = g.sigmoid(pos_scores);
    let p_neg = g.sigmoid(neg_scores);
    let p_pos = g.clamp(p_pos, PROB_EPS, 1.0 - PROB_EPS);
    let p_neg = g.clamp(p_neg, PROB_EPS, 1.0 - PROB_EPS);
    let one_minus_neg = g.affine(p_neg, -1.0, 1.0);
    let lp = g.log(p_pos);
    let ln = g.log(one_minus_neg);
    let sum = g.add(lp, ln)?;
    let mean = g.mean_all(sum);
    Ok(g.scale(mean, -1.0))
}

/// Alignment loss over stacked embeddings: `id_emb`/`con_emb` are `[U, d]`
/// vars. `k` selects the comparative-set size (`k = U` for full in-batch
/// negatives). Returns the scalar loss; gradients flow into both stacks.
pub fn align_loss_graph(
    g: &mut Graph,
    id_emb: Var,
    con_emb: Var,
    tau: f64,
    k: usize,
) -> Result<Var> {
    let u = g.value(id_emb).rows();
    if u < 2 {
        return Err(MolarError::Numeric(format!(
            "alignment batch needs at least 2 users, got {u}"
        )));
    }
    if k < 2 || k > u {
        return Err(MolarError::Config(format!(
            "comparative set size k={k} must be in [2, {u}]"
        )));
    }
    let nid = g.l2_normalize_rows(id_emb)?;
    let ncon = g.l2_normalize_rows(con_emb)?;
    let cont = g.transpose(ncon)?;
    let sim = g.matmul(nid, cont)?; // sim[i][j] = cos(id_i, con_j)
    let sim = g.scale(sim, 1.0 / tau);

    let mask = (k < u).then(|| comparative_mask(u, k));
    // id -> content over rows of sim
    let a = {
        let s = match &mask {
            Some(m) => g.add_const(sim, m)?,
            None => sim,
        };
        let ls = g.log_softmax_rows(s)?;
        g.take_diag(ls)?
    };
    // content -> id over rows of sim^T
    let b = {
        let st = g.transpose(sim)?;
        let s = match &mask {
            Some(m) => g.add_const(st, m)?,
            None => st,
        };
        let ls = g.log_softmax_rows(s)?;
        g.take_diag(ls)?
    };
    let both = g.add(a, b)?;
    let sum = g.sum_all(both);
    Ok(g.scale(sum, -1.0 / u as f64))
}

/// Additive mask keeping, per row `i`, the cyclic set {i, .., i+k-1 mod u}.
fn comparative_mask(u: usize, k: usize) -> Tensor {
    let mut data = vec![-1e30; u * u];
    for i in 0..u {
        for off in 0..k {
            data[i * u + (i + off) % u] = 0.0;
        }
    }
    Tensor::matrix(u, u, data).expect("square mask")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::graph::Graph;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn cosine_oracles() {
        let v = vec![0.3, -1.2, 0.4];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0])
            .unwrap()
            .abs()
            < 1e-15);
        // ([1,2],[2,1]) -> 4/5
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bce_oracles() {
        let l = bce_loss(BcePair {
            x_pos: 0.5,
            x_neg: 0.5,
        });
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let perfect = bce_loss(BcePair {
            x_pos: 1.0,
            x_neg: 0.0,
        });
        assert!(perfect <= 2e-7 + 1e-12);

        let l = bce_loss(BcePair {
            x_pos: 0.9,
            x_neg: 0.2,
        });
        let expected = -(0.9f64.ln() + 0.8f64.ln());
        assert!((l - expected).abs() < 1e-12);
        assert!((expected - 0.328504).abs() < 1e-6);
    }

    #[test]
    fn bce_monotonicity() {
        // decreasing in x_pos, increasing in x_neg
        let base = bce_loss(BcePair {
            x_pos: 0.6,
            x_neg: 0.4,
        });
        assert!(
            bce_loss(BcePair {
                x_pos: 0.7,
                x_neg: 0.4
            }) < base
        );
        assert!(
            bce_loss(BcePair {
                x_pos: 0.6,
                x_neg: 0.5
            }) > base
        );
    }

    #[test]
    fn align_orthogonal_identical_pair_oracle() {
        // |U|=2, tau=1, id == content, users orthogonal unit vectors:
        // each direction term is ln(1 + e^-1), four terms over two users.
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        let batch = AlignBatch::full(vec![e1.clone(), e2.clone()], vec![e1, e2], 1.0).unwrap();
        let l = align_loss(&batch).unwrap();
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
    }

    #[test]
    fn align_identical_embeddings_give_two_ln_k() {
        let v = vec![0.5, 0.5, 0.1];
        for u in [2usize, 4, 6] {
            let batch = AlignBatch::full(vec![v.clone(); u], vec![v.clone(); u], 0.07).unwrap();
            let l = align_loss(&batch).unwrap();
            assert!((l - 2.0 * (u as f64).ln()).abs() < 1e-12);
        }
        // sub-sampled comparative set: 2 ln k
        let batch = AlignBatch::new(vec![v.clone(); 6], vec![v.clone(); 6], 0.07, 4).unwrap();
        let l = align_loss(&batch).unwrap();
        assert!((l - 2.0 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn align_invariant_under_positive_scaling() {
        let id = vec![unit(vec![0.3, 0.9, -0.2]), unit(vec![-0.5, 0.1, 0.8])];
        let con = vec![unit(vec![0.2, 0.8, 0.1]), unit(vec![-0.4, 0.2, 0.7])];
        let base = align_loss(&AlignBatch::full(id.clone(), con.clone(), 0.2).unwrap()).unwrap();
        let mut scaled = id.clone();
        for v in scaled[0].iter_mut() {
            *v *= 37.5;
        }
        let l = align_loss(&AlignBatch::full(scaled, con, 0.2).unwrap()).unwrap();
        assert!((l - base).abs() <= 1e-12);
    }

    #[test]
    fn align_symmetric_under_role_swap() {
        let id = vec![
            vec![0.3, 0.9, -0.2],
            vec![-0.5, 0.1, 0.8],
            vec![0.7, 0.7, 0.0],
        ];
        let con = vec![
            vec![0.2, 0.8, 0.1],
            vec![-0.4, 0.2, 0.7],
            vec![0.1, -0.6, 0.4],
        ];
        let a = align_loss(&AlignBatch::full(id.clone(), con.clone(), 0.1).unwrap()).unwrap();
        let b = align_loss(&AlignBatch::full(con, id, 0.1).unwrap()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn align_decreases_as_positive_cosine_rises() {
        // rotate the first content embedding toward its id partner while the
        // other pair stays fixed; loss must strictly decrease.
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut last = f64::INFINITY;
        for step in 0..5 {
            let angle = 1.2 - 0.25 * step as f64; // radians away from id_0
            let con = vec![vec![angle.cos(), angle.sin()], vec![-0.2, 0.9]];
            let l = align_loss(&AlignBatch::full(id.clone(), con, 0.3).unwrap()).unwrap();
            assert!(l < last, "loss did not decrease: {l} vs {last}");
            last = l;
        }
    }

    #[test]
    fn align_rejects_tiny_batches() {
        let v = vec![1.0, 0.0];
        assert!(AlignBatch::full(vec![v.clone()], vec![v.clone()], 0.1).is_err());
    }

    #[test]
    fn total_loss_oracles() {
        assert_eq!(total_loss(1.25, 0.5, 0.0), 1.25);
        assert!((total_loss(1.0, 0.5, 1.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn graph_bce_matches_pure_route() {
        let pos = vec![0.8, -0.3, 1.5];
        let neg = vec![0.2, 0.9, -1.1];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let pairs: Vec<BcePair> = pos
            .iter()
            .zip(&neg)
            .map(|(&p, &n)| BcePair {
                x_pos: sig(p),
                x_neg: sig(n),
            })
            .collect();
        let pure = bce_loss_batch(&pairs);

        let mut g = Graph::new();
        let pv = g.leaf(Tensor::from_vec(pos));
        let nv = g.leaf(Tensor::from_vec(neg));
        let loss = bce_loss_graph(&mut g, pv, nv).unwrap();
        assert!((g.value(loss).item() - pure).abs() < 1e-12);
    }

    #[test]
    fn graph_align_matches_pure_route() {
        let id = vec![
            vec![0.3, 0.9, -0.2, 0.5],
            vec![-0.5, 0.1, 0.8, 0.2],
            vec![0.7, 0.7, 0.0, -0.3],
            vec![0.1, -0.2, 0.6, 0.9],
        ];
        let con = vec![
            vec![0.2, 0.8, 0.1, 0.4],
            vec![-0.4, 0.2, 0.7, 0.1],
            vec![0.5, 0.6, -0.1, -0.2],
            vec![0.0, -0.1, 0.5, 1.0],
        ];
        for k in [4usize, 3, 2] {
            let pure =
                align_loss(&AlignBatch::new(id.clone(), con.clone(), 0.07, k).unwrap()).unwrap();
            let mut g = Graph::new();
            let idv = g.leaf(Tensor::matrix(4, 4, id.concat()).unwrap());
            let conv = g.leaf(Tensor::matrix(4, 4, con.concat()).unwrap());
            let loss = align_loss_graph(&mut g, idv, conv, 0.07, k).unwrap();
            assert!(
                (g.value(loss).item() - pure).abs() < 1e-12,
                "k={k}: {} vs {pure}",
                g.value(loss).item()
            );
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // gradient of total = bce + alpha*align w.r.t. the embedding stacks,
        // FD oracle on the graph value at 1e-6 relative tolerance.
        let d = 4;
        let u = 3;
        let id0: Vec<f64> = (0..u * d)
            .map(|i| 0.4 * ((i as f64) * 0.9).sin() + 0.1)
            .collect();
        let con0: Vec<f64> = (0..u * d)
            .map(|i| 0.5 * ((i as f64) * 1.3).cos() - 0.05)
            .collect();
        let alpha = 0.7;
        let tau = 0.2;

        let build = |idd: &[f64], cond: &[f64]| -> (Graph, Var, Var, Var) {
            let mut g = Graph::new();
            let idv = g.param(Tensor::matrix(u, d, idd.to_vec()).unwrap());
            let conv = g.param(Tensor::matrix(u, d, cond.to_vec()).unwrap());
            // scores for bce: row dots between the two stacks and a shifted pair
            let pos = g.row_dot(conv, idv).unwrap();
            let shifted = g.gather_rows(idv, &[1, 2, 0]).unwrap();
            let neg = g.row_dot(conv, shifted).unwrap();
            let bce = bce_loss_graph(&mut g, pos, neg).unwrap();
            let align = align_loss_graph(&mut g, idv, conv, tau, u).unwrap();
            let scaled = g.scale(align, alpha);
            let total = g.add(bce, scaled).unwrap();
            (g, idv, conv, total)
        };

        let f = |idd: &[f64], cond: &[f64]| -> f64 {
            let (g, _, _, t) = build(idd, cond);
            g.value(t).item()
        };

        let (mut g, idv, conv, total) = build(&id0, &con0);
        let grads = g.backward(total).unwrap();

        let h = 1e-6;
        for (vals, var, name) in [(&id0, idv, "id"), (&con0, conv, "con")] {
            let analytic = grads.get(var).unwrap();
            for j in 0..vals.len() {
                let mut p = vals.to_vec();
                let mut m = vals.to_vec();
                p[j] += h;
                m[j] -= h;
                let (fp, fm) = if name == "id" {
                    (f(&p, &con0), f(&m, &con0))
                } else {
                    (f(&id0, &p), f(&id0, &m))
                };
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-6, "{name}[{j}]: analytic {a} vs numeric {numeric}");
            }
        }
    }
}
