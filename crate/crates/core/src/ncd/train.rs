use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderCache, EncoderModel};
use super::losses::{bce_loss_grad, consistency_loss_grad, contrastive_loss_grad};
use super::mining::{lowest, sibling_indices};
use super::similarity::{build_pseudo_labels, unit_rows, PairOrigin, PairPseudoLabel};
use super::{LossMask, NcdConfig};
use crate::classifier::ClassifierModel;
use crate::error::{Error, Result, ResultExt};
use crate::features::{make_views, ChromaClip, SourceContext};
use crate::numkit::optim::Adam;
use crate::numkit::{dot, Parameterized};
use crate::rng;

/// Feature-space inputs of encoder training: embeddings of the unlabeled
/// clips and the labeled training clips, each with two augmented views.
#[derive(Clone, Debug, PartialEq)]
pub struct NcdInputs {
    pub y_u: Vec<Vec<f64>>,
    pub y_u_views: Vec<[Vec<f64>; 2]>,
    pub sources_u: Vec<u64>,
    pub y_l: Vec<Vec<f64>>,
    pub y_l_views: Vec<[Vec<f64>; 2]>,
}

/// Embed clips and their views with the classifier's feature extractor.
pub fn prepare_inputs(
    model: &ClassifierModel,
    unlabeled: &[&ChromaClip],
    labeled: &[&ChromaClip],
    contexts: &[SourceContext],
    config: &NcdConfig,
) -> Result<NcdInputs> {
    let by_source: BTreeMap<u64, &SourceContext> = contexts.iter().map(|c| (c.source_id, c)).collect();
    let params = config.view_params();
    let embed = |clips: &[&ChromaClip]| -> Result<(Vec<Vec<f64>>, Vec<[Vec<f64>; 2]>)> {
        let mut ys = Vec::with_capacity(clips.len());
        let mut views = Vec::with_capacity(clips.len());
        for clip in clips {
            let ctx = by_source.get(&clip.source_id).ok_or_else(|| {
                Error::Input(format!("no recording context for clip {} (source {})", clip.clip_id, clip.source_id))
            })?;
            ys.push(model.extract_embedding(clip).context(format!("embedding clip {}", clip.clip_id))?);
            let (a, b) = make_views(clip, ctx, &params).context(format!("views of clip {}", clip.clip_id))?;
            views.push([model.extract_embedding(&a)?, model.extract_embedding(&b)?]);
        }
        Ok((ys, views))
    };
    let (y_u, y_u_views) = embed(unlabeled).context("extracting unlabeled features")?;
    let (y_l, y_l_views) = embed(labeled).context("extracting labeled features")?;
    Ok(NcdInputs {
        y_u,
        y_u_views,
        sources_u: unlabeled.iter().map(|c| c.source_id).collect(),
        y_l,
        y_l_views,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcdEpochLog {
    pub epoch: usize,
    pub bce: f64,
    pub cl: f64,
    pub mse: f64,
    /// Weighted objective actually optimized under the loss mask.
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NcdLog {
    pub epochs: Vec<NcdEpochLog>,
    pub positive_pairs: usize,
    pub same_source_pairs: usize,
}

impl NcdLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,bce,cl,mse,total\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.bce, e.cl, e.mse, e.total));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    U(usize),
    UView(usize, usize),
    L(usize),
    LView(usize, usize),
}

/// Distinct encoder inputs touched by one batch, in first-use order.
struct Registry {
    m: usize,
    slot: Vec<usize>,
    nodes: Vec<Node>,
}

impl Registry {
    fn new(m: usize, l: usize) -> Self {
        Self {
            m,
            slot: vec![usize::MAX; 3 * (m + l)],
            nodes: Vec::new(),
        }
    }

    fn key(&self, n: Node) -> usize {
        match n {
            Node::U(i) => 3 * i,
            Node::UView(i, v) => 3 * i + 1 + v,
            Node::L(j) => 3 * (self.m + j),
            Node::LView(j, v) => 3 * (self.m + j) + 1 + v,
        }
    }

    fn get(&mut self, n: Node) -> usize {
        let k = self.key(n);
        if self.slot[k] == usize::MAX {
            self.slot[k] = self.nodes.len();
            self.nodes.push(n);
        }
        self.slot[k]
    }

    fn clear(&mut self) {
        for i in 0..self.nodes.len() {
            let k = self.key(self.nodes[i]);
            self.slot[k] = usize::MAX;
        }
        self.nodes.clear();
    }
}

fn input_of(inputs: &NcdInputs, n: Node) -> &[f64] {
    match n {
        Node::U(i) => &inputs.y_u[i],
        Node::UView(i, v) => &inputs.y_u_views[i][v],
        Node::L(j) => &inputs.y_l[j],
        Node::LView(j, v) => &inputs.y_l_views[j][v],
    }
}

/// For each unlabeled anchor, its `h` least similar candidates among all
/// other unlabeled and labeled items. Candidate `c < m` is unlabeled item
/// `c`; larger values index the labeled items from `m`.
fn mine_negatives(u: &[Vec<f64>], l: &[Vec<f64>], h: usize) -> Result<Vec<Vec<usize>>> {
    let all: Vec<Vec<f64>> = u.iter().chain(l).cloned().collect();
    let units = unit_rows(&all)?;
    let m = u.len();
    Ok((0..m)
        .map(|i| {
            let sims: Vec<f64> = units.iter().map(|c| dot(&units[i], c)).collect();
            lowest(&sims, h, |c| c != i)
        })
        .collect())
}

fn add(dst: &mut [f64], w: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

/// Train the encoder on prepared inputs. Pseudo-labels come from the
/// feature space; hard negatives are ranked in feature space for the first
/// epoch and in the current encoder space afterwards.
pub fn train_encoder(inputs: &NcdInputs, config: &NcdConfig, seed: u64) -> Result<(EncoderModel, NcdLog)> {
    config.validate()?;
    let m = inputs.y_u.len();
    let l = inputs.y_l.len();
    if m < 2 {
        return Err(Error::Input(format!("novel class discovery needs at least 2 unlabeled clips, got {m}")));
    }
    if inputs.y_u_views.len() != m || inputs.sources_u.len() != m || inputs.y_l_views.len() != l {
        return Err(Error::Input("embedding, view and source counts disagree".into()));
    }
    if config.hard_negatives > m - 1 + l {
        return Err(Error::Input(format!(
            "{} hard negatives requested but only {} candidates exist",
            config.hard_negatives,
            m - 1 + l
        )));
    }
    let input_dim = inputs.y_u[0].len();
    let mut encoder = EncoderModel::init(input_dim, &config.encoder, seed)?;

    let pairs = build_pseudo_labels(&inputs.y_u, &inputs.sources_u, config.delta).context("building pseudo-labels")?;
    let mut target = vec![false; m * m];
    let mut log = NcdLog::default();
    for p in &pairs {
        target[p.i * m + p.j] = p.t;
        target[p.j * m + p.i] = p.t;
        log.positive_pairs += p.t as usize;
        log.same_source_pairs += (p.origin == PairOrigin::SameSource) as usize;
    }
    drop(pairs);
    let siblings: Vec<Vec<usize>> = (0..m).map(|i| sibling_indices(i, &inputs.sources_u)).collect();
    let mut negatives =
        mine_negatives(&inputs.y_u, &inputs.y_l, config.hard_negatives).context("mining hard negatives")?;

    let mask = config.mask;
    let w_bce = if mask.bce { 1.0 } else { 0.0 };
    let w_cl = if mask.cl { config.beta } else { 0.0 };
    let w_mse = if mask.mse { config.gamma } else { 0.0 };

    let mut params = encoder.flat_params();
    let mut opt = Adam::new(config.lr, params.len());
    let mut reg = Registry::new(m, l);
    let mut anchors_order: Vec<usize> = (0..m).collect();
    let mut labeled_order: Vec<usize> = (0..l).collect();

    for epoch in 1..=config.epochs {
        if epoch > 1 {
            let zu = encode_all(&encoder, &inputs.y_u)?;
            let zl = encode_all(&encoder, &inputs.y_l)?;
            negatives = mine_negatives(&zu, &zl, config.hard_negatives)
                .context(format!("re-ranking hard negatives for epoch {epoch}"))?;
        }
        anchors_order.shuffle(&mut rng::rng(seed, &[0xba7c, epoch as u64]));
        labeled_order.shuffle(&mut rng::rng(seed, &[0x1abe, epoch as u64]));
        let mut sums = [0.0; 3];
        let mut bce_batches = 0usize;
        let mut n_batches = 0usize;
        for (b, anchors) in anchors_order.chunks(config.batch_size).enumerate() {
            let labeled: Vec<usize> = if l == 0 {
                Vec::new()
            } else {
                (0..anchors.len()).map(|k| labeled_order[(b * config.batch_size + k) % l]).collect()
            };
            reg.clear();
            let a_nodes: Vec<usize> = anchors.iter().map(|&i| reg.get(Node::U(i))).collect();
            let a_views: Vec<[usize; 2]> = anchors
                .iter()
                .map(|&i| [reg.get(Node::UView(i, 0)), reg.get(Node::UView(i, 1))])
                .collect();
            let a_sibs: Vec<Vec<usize>> = anchors
                .iter()
                .map(|&i| siblings[i].iter().map(|&j| reg.get(Node::U(j))).collect())
                .collect();
            let a_negs: Vec<Vec<usize>> = anchors
                .iter()
                .map(|&i| {
                    negatives[i]
                        .iter()
                        .map(|&c| reg.get(if c < m { Node::U(c) } else { Node::L(c - m) }))
                        .collect()
                })
                .collect();
            let l_nodes: Vec<usize> = labeled.iter().map(|&j| reg.get(Node::L(j))).collect();
            let l_views: Vec<[usize; 2]> = labeled
                .iter()
                .map(|&j| [reg.get(Node::LView(j, 0)), reg.get(Node::LView(j, 1))])
                .collect();

            let mut z = Vec::with_capacity(reg.nodes.len());
            let mut caches: Vec<EncoderCache> = Vec::with_capacity(reg.nodes.len());
            for &n in &reg.nodes {
                let (out, c) = encoder.forward_cached(input_of(inputs, n))?;
                z.push(out);
                caches.push(c);
            }
            let mut grads: Vec<Vec<f64>> = z.iter().map(|v| vec![0.0; v.len()]).collect();
            let batch_err = |e: Error| e.context(format!("encoder training epoch {epoch}, batch {b}"));

            // pairwise pseudo-label agreement within the batch
            let mut bce = 0.0;
            if anchors.len() >= 2 {
                let mut local = Vec::with_capacity(anchors.len() * (anchors.len() - 1) / 2);
                for x in 0..anchors.len() {
                    for y in x + 1..anchors.len() {
                        local.push(PairPseudoLabel {
                            i: x,
                            j: y,
                            t: target[anchors[x] * m + anchors[y]],
                            origin: PairOrigin::Threshold,
                        });
                    }
                }
                let za: Vec<Vec<f64>> = a_nodes.iter().map(|&k| z[k].clone()).collect();
                let (loss, g) = bce_loss_grad(&local, &za).map_err(batch_err)?;
                bce = loss;
                bce_batches += 1;
                if w_bce != 0.0 {
                    for (&k, gk) in a_nodes.iter().zip(&g) {
                        add(&mut grads[k], w_bce, gk);
                    }
                }
            }

            // contrastive term, averaged over anchors
            let mut cl = 0.0;
            let scale = 1.0 / anchors.len() as f64;
            for k in 0..anchors.len() {
                let pos_nodes: Vec<usize> = a_sibs[k].iter().copied().chain(a_views[k]).collect();
                let pos: Vec<Vec<f64>> = pos_nodes.iter().map(|&n| z[n].clone()).collect();
                let neg: Vec<Vec<f64>> = a_negs[k].iter().map(|&n| z[n].clone()).collect();
                let g = contrastive_loss_grad(&z[a_nodes[k]], &pos, &neg, config.tau).map_err(batch_err)?;
                cl += scale * g.loss;
                if w_cl != 0.0 {
                    let w = w_cl * scale;
                    add(&mut grads[a_nodes[k]], w, &g.anchor);
                    for (&n, gp) in pos_nodes.iter().zip(&g.positives) {
                        add(&mut grads[n], w, gp);
                    }
                    for (&n, gn) in a_negs[k].iter().zip(&g.negatives) {
                        add(&mut grads[n], w, gn);
                    }
                }
            }

            // consistency between each item and both of its views
            let twin = |orig: &[usize], views: &[[usize; 2]]| -> (Vec<usize>, Vec<usize>) {
                let mut a = Vec::with_capacity(2 * orig.len());
                let mut t = Vec::with_capacity(2 * orig.len());
                for (&o, v) in orig.iter().zip(views) {
                    for &vn in v {
                        a.push(o);
                        t.push(vn);
                    }
                }
                (a, t)
            };
            let (lu, lu_t) = twin(&l_nodes, &l_views);
            let (uu, uu_t) = twin(&a_nodes, &a_views);
            let gather = |ix: &[usize]| -> Vec<Vec<f64>> { ix.iter().map(|&k| z[k].clone()).collect() };
            let (mse, g) = consistency_loss_grad(&gather(&lu), &gather(&lu_t), &gather(&uu), &gather(&uu_t))
                .map_err(batch_err)?;
            if w_mse != 0.0 {
                for (ix, gs) in [(&lu, &g.zl), (&lu_t, &g.zl_t), (&uu, &g.zu), (&uu_t, &g.zu_t)] {
                    for (&k, gk) in ix.iter().zip(gs) {
                        add(&mut grads[k], w_mse, gk);
                    }
                }
            }

            if !(bce.is_finite() && cl.is_finite() && mse.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite encoder loss at epoch {epoch}, batch {b}: bce={bce}, cl={cl}, mse={mse}"
                )));
            }
            sums[0] += bce;
            sums[1] += cl;
            sums[2] += mse;
            n_batches += 1;

            let mut pgrads = vec![0.0; params.len()];
            for ((c, g), _) in caches.iter().zip(&grads).zip(&reg.nodes) {
                if g.iter().any(|v| *v != 0.0) {
                    encoder.backward(c, g, &mut pgrads);
                }
            }
            opt.step(&mut params, &pgrads).map_err(batch_err)?;
            encoder.set_flat_params(&params)?;
        }
        let bce = sums[0] / bce_batches.max(1) as f64;
        let cl = sums[1] / n_batches as f64;
        let mse = sums[2] / n_batches as f64;
        log.epochs.push(NcdEpochLog {
            epoch,
            bce,
            cl,
            mse,
            total: w_bce * bce + w_cl * cl + w_mse * mse,
        });
    }
    Ok((encoder, log))
}

/// Full training from clips: embed, build views, then fit the encoder.
pub fn train_ncd(
    model: &ClassifierModel,
    unlabeled: &[&ChromaClip],
    labeled: &[&ChromaClip],
    contexts: &[SourceContext],
    config: &NcdConfig,
    seed: u64,
) -> Result<(EncoderModel, NcdLog)> {
    let inputs = prepare_inputs(model, unlabeled, labeled, contexts, config)?;
    train_encoder(&inputs, config, seed)
}

pub fn encode_all(encoder: &EncoderModel, ys: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    ys.iter().map(|y| encoder.forward(y)).collect()
}

impl LossMask {
    pub const FULL: Self = Self {
        bce: true,
        cl: true,
        mse: true,
    };
    pub const CL: Self = Self {
        bce: false,
        cl: true,
        mse: false,
    };
    pub const BCE: Self = Self {
        bce: true,
        cl: false,
        mse: false,
    };
    pub const BCE_CL: Self = Self {
        bce: true,
        cl: true,
        mse: false,
    };

    /// Short name such as `bce+cl` or `full`.
    pub fn name(&self) -> String {
        if *self == Self::FULL {
            return "full".into();
        }
        let parts: Vec<&str> = [(self.bce, "bce"), (self.cl, "cl"), (self.mse, "mse")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        if name == "full" {
            return Ok(Self::FULL);
        }
        let mut mask = Self {
            bce: false,
            cl: false,
            mse: false,
        };
        for part in name.split('+') {
            match part.trim() {
                "bce" => mask.bce = true,
                "cl" => mask.cl = true,
                "mse" => mask.mse = true,
                other => return Err(Error::Config(format!("unknown loss term {other:?} in mask {name:?}"))),
            }
        }
        Ok(mask)
    }
}
