//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raga_ncd::ncd::{
    bce_loss_grad, build_pseudo_labels, consistency_loss_grad, contrastive_loss_grad, total_loss,
};
use raga_ncd::numkit::{grad_check, Activation, AttentionBlock, Conv1d, Dense, LayerNorm, Mode, Parameterized, Tensor2};

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn unflatten(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(|c| c.to_vec()).collect()
}

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Gradient check of `Σ w ⊙ layer(x)` with respect to the layer parameters
/// and the input together. `run` maps (params, x, upstream grad) to
/// (output, param grads, input grad).
fn check_layer<L: Parameterized + Clone>(
    layer: &L,
    x: &Tensor2,
    out_len: usize,
    rng: &mut impl Rng,
    run: impl Fn(&L, &Tensor2, &Tensor2) -> (Tensor2, Vec<f64>, Tensor2),
) -> f64 {
    let w: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n_params = layer.param_count();
    let mut start = layer.flat_params();
    start.extend_from_slice(x.data());
    let (rows, cols) = x.shape();
    grad_check(
        |p| {
            let mut l = layer.clone();
            l.set_flat_params(&p[..n_params]).unwrap();
            let xin = Tensor2::from_vec(rows, cols, p[n_params..].to_vec()).unwrap();
            let (out, _, _) = run(&l, &xin, &Tensor2::zeros(1, 1));
            let g_out = Tensor2::from_vec(out.rows(), out.cols(), w.clone()).unwrap();
            let (out, mut g, gx) = run(&l, &xin, &g_out);
            g.extend_from_slice(gx.data());
            (out.data().iter().zip(&w).map(|(a, b)| a * b).sum(), g)
        },
        &start,
        FD_STEP,
    )
    .unwrap()
}

pub fn dense_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, i, o) = (r.gen_range(1..5), r.gen_range(1..9), r.gen_range(1..9));
    let act = if r.gen_bool(0.5) { Activation::Relu } else { Activation::Linear };
    let dropout = if r.gen_bool(0.5) { 0.3 } else { 0.0 };
    let mut layer = Dense::init(i, o, act, dropout, &mut r).unwrap();
    let bias: Vec<f64> = layer.flat_params().iter().map(|_| r.gen_range(-0.5..0.5)).collect();
    let mut p = layer.flat_params();
    let nw = i * o;
    p[nw..].copy_from_slice(&bias[nw..]);
    layer.set_flat_params(&p).unwrap();
    let x = random_tensor(n, i, &mut r);
    let mode = if dropout > 0.0 { Mode::Train(seed) } else { Mode::Eval };
    check_layer(&layer, &x, n * o, &mut r, |l, x, g_out| {
        let (y, cache) = l.forward_cached(x, mode).unwrap();
        let mut g = vec![0.0; l.param_count()];
        if g_out.shape() != y.shape() {
            return (y, g, Tensor2::zeros(1, 1));
        }
        let gx = l.backward(&cache, g_out, &mut g);
        (y, g, gx)
    })
}

pub fn conv_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cin, cout, k) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..4));
    let t = k + r.gen_range(0..6);
    let act = if r.gen_bool(0.5) { Activation::Relu } else { Activation::Linear };
    let layer = Conv1d::init(cin, cout, k, act, &mut r).unwrap();
    let x = random_tensor(t, cin, &mut r);
    check_layer(&layer, &x, (t + 1 - k) * cout, &mut r, |l, x, g_out| {
        let (y, cache) = l.forward_cached(x).unwrap();
        let mut g = vec![0.0; l.param_count()];
        if g_out.shape() != y.shape() {
            return (y, g, Tensor2::zeros(1, 1));
        }
        let gx = l.backward(&cache, g_out, &mut g);
        (y, g, gx)
    })
}

pub fn layer_norm_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, d) = (r.gen_range(1..5), r.gen_range(2..9));
    let mut layer = LayerNorm::new(d);
    let p: Vec<f64> = (0..2 * d).map(|_| r.gen_range(-1.5..1.5)).collect();
    layer.set_flat_params(&p).unwrap();
    let x = random_tensor(n, d, &mut r);
    check_layer(&layer, &x, n * d, &mut r, |l, x, g_out| {
        let (y, cache) = l.forward_cached(x).unwrap();
        let mut g = vec![0.0; l.param_count()];
        if g_out.shape() != y.shape() {
            return (y, g, Tensor2::zeros(1, 1));
        }
        let gx = l.backward(&cache, g_out, &mut g);
        (y, g, gx)
    })
}

pub fn attention_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let heads = r.gen_range(1..3);
    let dim = heads * r.gen_range(1..4);
    let (tokens, ff) = (r.gen_range(1..5), r.gen_range(1..7));
    let block = AttentionBlock::init(dim, heads, ff, &mut r).unwrap();
    let x = random_tensor(tokens, dim, &mut r);
    check_layer(&block, &x, tokens * dim, &mut r, |b, x, g_out| {
        let (y, cache) = b.forward_cached(x).unwrap();
        let mut g = vec![0.0; b.param_count()];
        if g_out.shape() != y.shape() {
            return (y, g, Tensor2::zeros(1, 1));
        }
        let gx = b.backward(&cache, g_out, &mut g);
        (y, g, gx)
    })
}

pub fn bce_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, d) = (r.gen_range(2..7), r.gen_range(2..7));
    let z = random_rows(m, d, &mut r);
    let sources: Vec<u64> = (0..m).map(|_| r.gen_range(0..3)).collect();
    let pairs = build_pseudo_labels(&z, &sources, r.gen_range(-0.5..0.9)).unwrap();
    grad_check(
        |p| {
            let (l, g) = bce_loss_grad(&pairs, &unflatten(p, d)).unwrap();
            (l, flatten(&g))
        },
        &flatten(&z),
        FD_STEP,
    )
    .unwrap()
}

pub fn consistency_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (nl, nu, d) = (r.gen_range(0..4), r.gen_range(1..5), r.gen_range(1..7));
    let rows = random_rows(2 * (nl + nu), d, &mut r);
    grad_check(
        |p| {
            let rows = unflatten(p, d);
            let (a, rest) = rows.split_at(nl);
            let (b, rest) = rest.split_at(nl);
            let (c, e) = rest.split_at(nu);
            let (l, g) = consistency_loss_grad(a, b, c, e).unwrap();
            let mut flat = flatten(&g.zl);
            flat.extend(flatten(&g.zl_t));
            flat.extend(flatten(&g.zu));
            flat.extend(flatten(&g.zu_t));
            (l, flat)
        },
        &flatten(&rows),
        FD_STEP,
    )
    .unwrap()
}

pub fn contrastive_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (np, nn, d) = (r.gen_range(1..4), r.gen_range(0..5), r.gen_range(2..7));
    let tau = r.gen_range(0.1..2.0);
    let rows = random_rows(1 + np + nn, d, &mut r);
    grad_check(
        |p| {
            let rows = unflatten(p, d);
            let g = contrastive_loss_grad(&rows[0], &rows[1..1 + np], &rows[1 + np..], tau).unwrap();
            let mut flat = g.anchor;
            flat.extend(flatten(&g.positives));
            flat.extend(flatten(&g.negatives));
            (g.loss, flat)
        },
        &flatten(&rows),
        FD_STEP,
    )
    .unwrap()
}

/// Weighted sum of all three terms over one small batch: pair BCE over the
/// unlabeled rows, a contrastive term per unlabeled anchor with its view as
/// positive and the other rows as negatives, and consistency over both sets.
pub fn total_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, nl, d) = (r.gen_range(2..5), r.gen_range(0..3), r.gen_range(2..6));
    let (beta, gamma, tau) = (r.gen_range(0.0..2.0), r.gen_range(0.0..2.0), r.gen_range(0.2..1.0));
    let rows = random_rows(2 * m + 2 * nl, d, &mut r);
    let sources: Vec<u64> = (0..m as u64).collect();
    let pairs = build_pseudo_labels(&rows[..m], &sources, 0.3).unwrap();
    grad_check(
        |p| {
            let rows = unflatten(p, d);
            let (zu, rest) = rows.split_at(m);
            let (zu_t, rest) = rest.split_at(m);
            let (zl, zl_t) = rest.split_at(nl);
            let mut grad = vec![vec![0.0; d]; rows.len()];
            let (bce, gb) = bce_loss_grad(&pairs, zu).unwrap();
            for (g, v) in grad.iter_mut().zip(&gb) {
                g.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            let mut cl = 0.0;
            for i in 0..m {
                let negs: Vec<Vec<f64>> = (0..m).filter(|&j| j != i).map(|j| zu[j].clone()).collect();
                let c = contrastive_loss_grad(&zu[i], &[zu_t[i].clone()], &negs, tau).unwrap();
                cl += c.loss / m as f64;
                let s = beta / m as f64;
                grad[i].iter_mut().zip(&c.anchor).for_each(|(a, b)| *a += s * b);
                grad[m + i].iter_mut().zip(&c.positives[0]).for_each(|(a, b)| *a += s * b);
                for (k, j) in (0..m).filter(|&j| j != i).enumerate() {
                    grad[j].iter_mut().zip(&c.negatives[k]).for_each(|(a, b)| *a += s * b);
                }
            }
            let (mse, gm) = consistency_loss_grad(zl, zl_t, zu, zu_t).unwrap();
            let blocks = [(2 * m, &gm.zl), (2 * m + nl, &gm.zl_t), (0, &gm.zu), (m, &gm.zu_t)];
            for (offset, g) in blocks {
                for (k, v) in g.iter().enumerate() {
                    grad[offset + k].iter_mut().zip(v).for_each(|(a, b)| *a += gamma * b);
                }
            }
            (total_loss(bce, cl, mse, beta, gamma).unwrap(), flatten(&grad))
        },
        &flatten(&rows),
        FD_STEP,
    )
    .unwrap()
}

/// Every set partition of `n` points as a restricted growth string.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for c in 0..=next {
            prefix.push(c);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

/// Adjusted Rand index from brute-force pair classification.
pub fn ari_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (truth[i] == truth[j], pred[i] == pred[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let denom = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (n00 * n11 - n01 * n10) / denom
}

/// Mutual information (nats) as an average of pointwise terms, with every
/// count obtained by a scan over the points.
pub fn mi_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let count = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&k| f(k)).count() as f64;
    (0..pred.len())
        .map(|i| {
            let joint = count(&|k| pred[k] == pred[i] && truth[k] == truth[i]);
            let pp = count(&|k| pred[k] == pred[i]);
            let pt = count(&|k| truth[k] == truth[i]);
            (n * joint / (pp * pt)).ln() / n
        })
        .sum::<f64>()
        .max(0.0)
}

/// Per-class accuracy, overall accuracy and validity by direct enumeration
/// of class/cluster overlaps.
pub fn acc_oracle(pred: &[usize], truth: &[usize]) -> (Vec<(usize, f64)>, f64, bool) {
    let mut classes: Vec<usize> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut clusters: Vec<usize> = pred.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut per = Vec::new();
    let mut chosen = Vec::new();
    let mut mass = 0usize;
    for &c in &classes {
        let size = truth.iter().filter(|&&t| t == c).count();
        let mut best = (0usize, usize::MAX);
        for &p in &clusters {
            let overlap = (0..pred.len()).filter(|&k| truth[k] == c && pred[k] == p).count();
            if overlap > best.0 || (overlap == best.0 && p < best.1) {
                best = (overlap, p);
            }
        }
        per.push((c, 100.0 * best.0 as f64 / size as f64));
        chosen.push(best.1);
        mass += best.0;
    }
    let mut sorted = chosen.clone();
    sorted.sort_unstable();
    sorted.dedup();
    (per, 100.0 * mass as f64 / pred.len() as f64, sorted.len() == chosen.len())
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Reachability matrix of the similarity graph by Floyd–Warshall closure.
pub fn closure_oracle(z: &[Vec<f64>], th: f64) -> Vec<Vec<bool>> {
    let n = z.len();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || cos(&z[i], &z[j]) > th).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// True when `labels` induces exactly the equivalence given by `reach`.
pub fn same_partition(labels: &[usize], reach: &[Vec<bool>]) -> bool {
    (0..labels.len()).all(|i| (0..labels.len()).all(|j| (labels[i] == labels[j]) == reach[i][j]))
}

/// Two tight blobs far apart: `n` points each around ±`sep` on the first axis.
pub fn two_blobs(n: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut z = Vec::new();
    let mut truth = Vec::new();
    for k in 0..2 * n {
        let side = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut p: Vec<f64> = (0..d).map(|_| r.gen_range(-0.1..0.1)).collect();
        p[0] += side * sep;
        z.push(p);
        truth.push(k % 2);
    }
    (z, truth)
}
