//! Orthogonal Householder network anonymizer.
//!
//! The anonymizer is a chain of `K` Householder reflections
//! `H(v) x = x - 2 (v·x)/(v·v) v`. Every parameter setting gives an exactly
//! orthogonal map, so training is plain unconstrained gradient descent on the
//! reflection vectors. Class prototypes exist only for the training loss: an
//! additive angular margin softmax over anonymized embeddings, plus a cosine
//! hinge that keeps anonymized embeddings away from the originals and from
//! each other.
//!
//! Parameter files are little-endian binary:
//!
//! ```text
//! "OHN1" | u32 dim | u32 K | u32 N | u64 init_seed | K×dim f64 | N×dim f64
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{dot, l2_norm, normalize, speaker_centroid, Corpus, Embedding};
use crate::error::{Error, LossComponent, Result};
use crate::rng::item_rng;

pub const PARAMS_MAGIC: &[u8; 4] = b"OHN1";

/// Reflection vectors at or below this norm are rejected.
pub const MIN_REFLECTION_NORM: f64 = 1e-8;

/// Seed used for parameter initialization unless overridden.
pub const DEFAULT_INIT_SEED: u64 = 50;

/// Reflects `x` across the hyperplane orthogonal to `v`.
pub fn householder_apply(v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if v.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            actual: x.len(),
        });
    }
    let vv = dot(v, v);
    if vv.is_nan() || vv.sqrt() <= MIN_REFLECTION_NORM {
        return Err(Error::DegenerateReflection { norm: vv.sqrt() });
    }
    let mut out = x.to_vec();
    reflect_in_place(v, vv, &mut out);
    Ok(out)
}

#[inline]
fn reflect_in_place(v: &[f64], vv: f64, x: &mut [f64]) {
    let coef = 2.0 * dot(v, x) / vv;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= coef * vi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OhnnParams {
    dim: usize,
    num_reflections: usize,
    num_classes: usize,
    init_seed: u64,
    /// Row-major `K × dim`.
    reflections: Vec<f64>,
    /// Row-major `N × dim`.
    prototypes: Vec<f64>,
}

impl OhnnParams {
    pub fn from_raw(
        dim: usize,
        num_reflections: usize,
        num_classes: usize,
        init_seed: u64,
        reflections: Vec<f64>,
        prototypes: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || num_reflections == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig(
                "dim, K and N must all be positive".into(),
            ));
        }
        if reflections.len() != num_reflections * dim {
            return Err(Error::DimensionMismatch {
                expected: num_reflections * dim,
                actual: reflections.len(),
            });
        }
        if prototypes.len() != num_classes * dim {
            return Err(Error::DimensionMismatch {
                expected: num_classes * dim,
                actual: prototypes.len(),
            });
        }
        let params = OhnnParams {
            dim,
            num_reflections,
            num_classes,
            init_seed,
            reflections,
            prototypes,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks finiteness and the minimum reflection norm.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.reflections.iter().chain(&self.prototypes).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        for k in 0..self.num_reflections {
            let norm = l2_norm(self.reflection(k));
            if norm.is_nan() || norm <= MIN_REFLECTION_NORM {
                return Err(Error::DegenerateReflection { norm });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_reflections(&self) -> usize {
        self.num_reflections
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn reflection(&self, k: usize) -> &[f64] {
        &self.reflections[k * self.dim..(k + 1) * self.dim]
    }

    pub fn prototype(&self, j: usize) -> &[f64] {
        &self.prototypes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn reflections(&self) -> &[f64] {
        &self.reflections
    }

    pub fn prototypes(&self) -> &[f64] {
        &self.prototypes
    }

    /// Raw mutable access for optimizers and finite-difference checks.
    /// Callers are responsible for keeping reflections non-degenerate.
    pub fn reflections_mut(&mut self) -> &mut [f64] {
        &mut self.reflections
    }

    pub fn prototypes_mut(&mut self) -> &mut [f64] {
        &mut self.prototypes
    }

    /// Applies the reflections in order. `x.len()` must equal `dim`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        let mut h = x.to_vec();
        for k in 0..self.num_reflections {
            let v = self.reflection(k);
            reflect_in_place(v, dot(v, v), &mut h);
        }
        h
    }

    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut states = Vec::with_capacity(self.num_reflections + 1);
        states.push(x.to_vec());
        for k in 0..self.num_reflections {
            let v = self.reflection(k);
            let mut h = states[k].clone();
            reflect_in_place(v, dot(v, v), &mut h);
            states.push(h);
        }
        states
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(24 + 8 * (self.reflections.len() + self.prototypes.len()));
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_reflections as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        for v in self.reflections.iter().chain(&self.prototypes) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], name: &str) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::binary(name, bytes.len() as u64, "truncated header"));
        }
        if &bytes[..4] != PARAMS_MAGIC {
            return Err(Error::binary(name, 0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (dim, k, n) = (u32_at(4), u32_at(8), u32_at(12));
        let init_seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expected = 24 + 8 * (k + n) * dim;
        if bytes.len() < expected {
            return Err(Error::binary(name, bytes.len() as u64, "truncated parameters"));
        }
        if bytes.len() > expected {
            return Err(Error::binary(name, expected as u64, "trailing bytes"));
        }
        let values: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (refl, proto) = values.split_at(k * dim);
        OhnnParams::from_raw(dim, k, n, init_seed, refl.to_vec(), proto.to_vec())
            .map_err(|e| Error::binary(name, 24, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }
}

/// Draws reflections then prototypes i.i.d. standard normal from `seed`.
pub fn init_ohnn(dim: usize, num_reflections: usize, num_classes: usize, seed: u64) -> Result<OhnnParams> {
    if dim < 2 {
        return Err(Error::InvalidConfig(format!("dim must be >= 2, got {dim}")));
    }
    if num_reflections == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    if num_classes == 0 {
        return Err(Error::InvalidConfig("N must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let reflections = draw(num_reflections * dim);
    let prototypes = draw(num_classes * dim);
    OhnnParams::from_raw(dim, num_reflections, num_classes, seed, reflections, prototypes)
}

pub fn ohnn_forward(params: &OhnnParams, x: &Embedding) -> Result<Embedding> {
    if x.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: x.dim(),
        });
    }
    Embedding::new(params.forward(x.values()))
}

// ---------------------------------------------------------------------------
// Training configuration and losses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Additive angular margin in radians.
    pub aam_margin: f64,
    pub aam_scale: f64,
    /// Cosine above which the hinge starts to penalize.
    pub dist_margin: f64,
    /// Weight of the distance term in the total loss.
    pub dist_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            learning_rate: 0.05,
            aam_margin: 0.2,
            aam_scale: 30.0,
            dist_margin: 0.25,
            dist_weight: 1.0,
            batch_size: 64,
            seed: DEFAULT_INIT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let finite = [
            self.learning_rate,
            self.aam_margin,
            self.aam_scale,
            self.dist_margin,
            self.dist_weight,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("training hyperparameters must be finite".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.learning_rate < 0.0 {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.aam_margin) {
            return bad(format!("aam_margin must be in [0, pi/2), got {}", self.aam_margin));
        }
        if self.aam_scale <= 0.0 {
            return bad(format!("aam_scale must be positive, got {}", self.aam_scale));
        }
        if !(-1.0..=1.0).contains(&self.dist_margin) {
            return bad(format!("dist_margin must be in [-1, 1], got {}", self.dist_margin));
        }
        if self.dist_weight < 0.0 {
            return bad(format!("dist_weight must be >= 0, got {}", self.dist_weight));
        }
        Ok(())
    }
}

fn check_batch(params: &OhnnParams, batch: &[(Embedding, usize)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for (x, class) in batch {
        if x.dim() != params.dim() {
            return Err(Error::DimensionMismatch {
                expected: params.dim(),
                actual: x.dim(),
            });
        }
        if *class >= params.num_classes() {
            return Err(Error::ClassOutOfRange {
                class: *class,
                num_classes: params.num_classes(),
            });
        }
    }
    Ok(())
}

fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (l2_norm(a) * l2_norm(b))).clamp(-1.0, 1.0)
}

/// `cos(acos(c) + m)` and its derivative in `c`.
fn margin_cos(c: f64, margin: f64) -> (f64, f64) {
    let sin_theta = (1.0 - c * c).max(0.0).sqrt();
    let (sm, cm) = margin.sin_cos();
    let value = c * cm - sin_theta * sm;
    let deriv = cm + sm * c / sin_theta.max(1e-12);
    (value, deriv)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Additive angular margin softmax cross-entropy, averaged over the batch.
///
/// Each embedding is anonymized with `params` and compared by cosine with
/// every normalized prototype; the true class's logit is
/// `scale · cos(θ + margin)`, the others `scale · cos θ`.
pub fn aam_loss(params: &OhnnParams, batch: &[(Embedding, usize)], cfg: &TrainConfig) -> Result<f64> {
    check_batch(params, batch)?;
    let mut total = 0.0;
    for (x, class) in batch {
        let a = params.forward(x.values());
        let logits: Vec<f64> = (0..params.num_classes())
            .map(|j| {
                let c = cosine_raw(&a, params.prototype(j));
                if j == *class {
                    cfg.aam_scale * margin_cos(c, cfg.aam_margin).0
                } else {
                    cfg.aam_scale * c
                }
            })
            .collect();
        total += log_sum_exp(&logits) - logits[*class];
    }
    let loss = (total / batch.len() as f64).max(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            component: LossComponent::Aam,
        });
    }
    Ok(loss)
}

/// Cosine hinge between anonymized and original embeddings.
///
/// Mean of `max(0, cos(a_i, o_j) - margin)` over every anonymized/original
/// pair, plus the same mean over distinct anonymized pairs (empty when there
/// is a single anonymized embedding).
pub fn distance_loss(anonymized: &[Embedding], originals: &[Embedding], dist_margin: f64) -> Result<f64> {
    if anonymized.is_empty() || originals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = anonymized[0].dim();
    for e in anonymized.iter().chain(originals) {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.dim(),
            });
        }
    }
    let hinge = |a: &Embedding, b: &Embedding| (cosine_raw(a.values(), b.values()) - dist_margin).max(0.0);
    let n = anonymized.len();
    let mut cross = 0.0;
    for a in anonymized {
        for o in originals {
            cross += hinge(a, o);
        }
    }
    let mut loss = cross / (n * originals.len()) as f64;
    if n > 1 {
        let mut within = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                within += hinge(&anonymized[i], &anonymized[j]);
            }
        }
        loss += within / (n * (n - 1) / 2) as f64;
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            component: LossComponent::Distance,
        });
    }
    Ok(loss)
}

/// Loss values and their gradient with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OhnnGradient {
    pub aam: f64,
    pub distance: f64,
    pub total: f64,
    /// Same layout as [`OhnnParams::reflections`].
    pub reflections: Vec<f64>,
    /// Same layout as [`OhnnParams::prototypes`].
    pub prototypes: Vec<f64>,
}

impl OhnnGradient {
    pub fn max_abs(&self) -> f64 {
        self.reflections
            .iter()
            .chain(&self.prototypes)
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}

/// `d cos(a, b) / d a` for the given unit `b_hat`, with `a_hat`, `|a|` precomputed.
#[inline]
fn add_cos_grad(out: &mut [f64], scale: f64, a_hat: &[f64], a_norm: f64, b_hat: &[f64], c: f64) {
    for ((o, ah), bh) in out.iter_mut().zip(a_hat).zip(b_hat) {
        *o += scale * (bh - c * ah) / a_norm;
    }
}

/// Exact gradient of `aam_loss + dist_weight · distance_loss` where the
/// distance term compares the batch's anonymized embeddings with the batch's
/// original embeddings.
pub fn ohnn_gradient(params: &OhnnParams, batch: &[(Embedding, usize)], cfg: &TrainConfig) -> Result<OhnnGradient> {
    check_batch(params, batch)?;
    let dim = params.dim();
    let n_cls = params.num_classes();
    let b = batch.len();

    let traces: Vec<Vec<Vec<f64>>> = batch.iter().map(|(x, _)| params.forward_trace(x.values())).collect();
    let outs: Vec<&[f64]> = traces.iter().map(|t| t[params.num_reflections()].as_slice()).collect();
    let out_norms: Vec<f64> = outs.iter().map(|a| l2_norm(a)).collect();
    let out_hat: Vec<Vec<f64>> = outs
        .iter()
        .zip(&out_norms)
        .map(|(a, n)| a.iter().map(|v| v / n).collect())
        .collect();

    let proto_norms: Vec<f64> = (0..n_cls).map(|j| l2_norm(params.prototype(j))).collect();
    let proto_hat: Vec<Vec<f64>> = (0..n_cls)
        .map(|j| params.prototype(j).iter().map(|v| v / proto_norms[j]).collect())
        .collect();

    let mut grad_out = vec![vec![0.0; dim]; b];
    let mut grad_proto_hat = vec![0.0; n_cls * dim];

    // Classification branch.
    let mut aam_total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, (_, class)) in batch.iter().enumerate() {
        let a_hat = &out_hat[i];
        let mut logits = vec![0.0; n_cls];
        let mut dlogit_dc = vec![0.0; n_cls];
        let mut cos = vec![0.0; n_cls];
        for j in 0..n_cls {
            let raw = dot(a_hat, &proto_hat[j]);
            let c = raw.clamp(-1.0, 1.0);
            let clamped = raw != c;
            cos[j] = c;
            if j == *class {
                let (v, d) = margin_cos(c, cfg.aam_margin);
                logits[j] = cfg.aam_scale * v;
                dlogit_dc[j] = if clamped { 0.0 } else { cfg.aam_scale * d };
            } else {
                logits[j] = cfg.aam_scale * c;
                dlogit_dc[j] = if clamped { 0.0 } else { cfg.aam_scale };
            }
        }
        let lse = log_sum_exp(&logits);
        aam_total += lse - logits[*class];
        let mut g_a_hat = vec![0.0; dim];
        for j in 0..n_cls {
            let p = (logits[j] - lse).exp();
            let dz = p - if j == *class { 1.0 } else { 0.0 };
            let dc = dz * dlogit_dc[j] * inv_b;
            if dc == 0.0 {
                continue;
            }
            for d in 0..dim {
                g_a_hat[d] += dc * proto_hat[j][d];
                grad_proto_hat[j * dim + d] += dc * a_hat[d];
            }
        }
        // Project through the normalization of a.
        let radial = dot(&g_a_hat, a_hat);
        for d in 0..dim {
            grad_out[i][d] += (g_a_hat[d] - radial * a_hat[d]) / out_norms[i];
        }
    }
    let aam = aam_total * inv_b;
    if !aam.is_finite() {
        return Err(Error::NonFiniteLoss {
            component: LossComponent::Aam,
        });
    }

    // Distance branch: originals are the batch inputs (constant w.r.t. params).
    let originals_hat: Vec<Vec<f64>> = batch
        .iter()
        .map(|(x, _)| {
            let n = x.norm();
            x.values().iter().map(|v| v / n).collect()
        })
        .collect();
    let mut cross = 0.0;
    let mut within = 0.0;
    let w = cfg.dist_weight;
    let cross_scale = w / (b * b) as f64;
    for i in 0..b {
        for o_hat in &originals_hat {
            let c = dot(&out_hat[i], o_hat).clamp(-1.0, 1.0);
            let h = c - cfg.dist_margin;
            if h > 0.0 {
                cross += h;
                if w != 0.0 {
                    add_cos_grad(&mut grad_out[i], cross_scale, &out_hat[i], out_norms[i], o_hat, c);
                }
            }
        }
    }
    let mut distance = cross / (b * b) as f64;
    if b > 1 {
        let pairs = (b * (b - 1) / 2) as f64;
        let within_scale = w / pairs;
        for i in 0..b {
            for j in (i + 1)..b {
                let c = dot(&out_hat[i], &out_hat[j]).clamp(-1.0, 1.0);
                let h = c - cfg.dist_margin;
                if h > 0.0 {
                    within += h;
                    if w != 0.0 {
                        let (lo, hi) = grad_out.split_at_mut(j);
                        add_cos_grad(&mut lo[i], within_scale, &out_hat[i], out_norms[i], &out_hat[j], c);
                        add_cos_grad(&mut hi[0], within_scale, &out_hat[j], out_norms[j], &out_hat[i], c);
                    }
                }
            }
        }
        distance += within / pairs;
    }
    if !distance.is_finite() {
        return Err(Error::NonFiniteLoss {
            component: LossComponent::Distance,
        });
    }

    // Backpropagate through the reflection chain.
    let k_total = params.num_reflections();
    let mut grad_refl = vec![0.0; k_total * dim];
    for (trace, mut g) in traces.iter().zip(grad_out) {
        for k in (0..k_total).rev() {
            let v = params.reflection(k);
            let h = &trace[k];
            let vv = dot(v, v);
            let vh = dot(v, h);
            let gv = dot(&g, v);
            // f(v) = h - 2 (v·h)/(v·v) v
            let gr = &mut grad_refl[k * dim..(k + 1) * dim];
            for d in 0..dim {
                gr[d] -= 2.0 * (gv / vv * h[d] + vh / vv * g[d] - 2.0 * vh * gv / (vv * vv) * v[d]);
            }
            reflect_in_place(v, vv, &mut g);
        }
    }

    let mut grad_proto = vec![0.0; n_cls * dim];
    for j in 0..n_cls {
        let gq = &grad_proto_hat[j * dim..(j + 1) * dim];
        let radial = dot(gq, &proto_hat[j]);
        for d in 0..dim {
            grad_proto[j * dim + d] = (gq[d] - radial * proto_hat[j][d]) / proto_norms[j];
        }
    }

    Ok(OhnnGradient {
        aam,
        distance,
        total: aam + cfg.dist_weight * distance,
        reflections: grad_refl,
        prototypes: grad_proto,
    })
}

/// Total training objective on one batch, computed without the gradient path.
pub fn total_loss(params: &OhnnParams, batch: &[(Embedding, usize)], cfg: &TrainConfig) -> Result<f64> {
    let aam = aam_loss(params, batch, cfg)?;
    let anonymized = batch
        .iter()
        .map(|(x, _)| ohnn_forward(params, x))
        .collect::<Result<Vec<_>>>()?;
    let originals: Vec<Embedding> = batch.iter().map(|(x, _)| x.clone()).collect();
    let dist = distance_loss(&anonymized, &originals, cfg.dist_margin)?;
    Ok(aam + cfg.dist_weight * dist)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: OhnnParams,
    /// One entry per epoch: mean total loss over the unshuffled mini-batch
    /// partition, evaluated after the epoch's updates.
    pub loss_history: Vec<f64>,
}

/// One `(speaker centroid, class)` example per speaker, classes in speaker-id order.
pub fn training_set(corpus: &Corpus) -> Result<Vec<(Embedding, usize)>> {
    corpus
        .speaker_utterance_indices()
        .keys()
        .enumerate()
        .map(|(class, spk)| Ok((speaker_centroid(corpus, spk)?, class)))
        .collect()
}

fn epoch_loss(params: &OhnnParams, data: &[(Embedding, usize)], cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut batches = 0usize;
    for chunk in data.chunks(cfg.batch_size) {
        let g = ohnn_gradient(params, chunk, cfg).map_err(|e| match e {
            Error::NonFiniteLoss { component } => Error::Diverged { epoch, component },
            other => other,
        })?;
        sum += g.total;
        batches += 1;
    }
    Ok(sum / batches as f64)
}

/// Mini-batch gradient descent on speaker centroids, one pseudo-class per speaker.
pub fn train_ohnn(params: &OhnnParams, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("training corpus is empty".into()));
    }
    if corpus.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: corpus.dim(),
        });
    }
    let data = training_set(corpus)?;
    if data.len() != params.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "params have N = {} classes but the corpus has {} speakers",
            params.num_classes(),
            data.len()
        )));
    }

    let mut params = params.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut rng = item_rng(cfg.seed, &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| data[i].clone()));
            let g = ohnn_gradient(&params, &batch, cfg).map_err(|e| match e {
                Error::NonFiniteLoss { component } => Error::Diverged { epoch, component },
                other => other,
            })?;
            if cfg.learning_rate == 0.0 {
                continue;
            }
            for (p, d) in params.reflections.iter_mut().zip(&g.reflections) {
                *p -= cfg.learning_rate * d;
            }
            for (p, d) in params.prototypes.iter_mut().zip(&g.prototypes) {
                *p -= cfg.learning_rate * d;
            }
        }
        history.push(epoch_loss(&params, &data, cfg, epoch)?);
    }
    params.validate()?;
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// Mean `|cos(f(o_i), o_j)|` over all pairs of training centroids.
pub fn mean_abs_cross_cosine(params: &OhnnParams, originals: &[Embedding]) -> f64 {
    let anon: Vec<Vec<f64>> = originals.iter().map(|o| params.forward(o.values())).collect();
    let mut sum = 0.0;
    for a in &anon {
        for o in originals {
            sum += cosine_raw(a, o.values()).abs();
        }
    }
    sum / (anon.len() * originals.len()).max(1) as f64
}

/// Convenience for callers holding raw vectors.
pub fn anonymize_vector(params: &OhnnParams, x: &[f64]) -> Result<Embedding> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: x.len(),
        });
    }
    normalize(&params.forward(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn householder_examples() {
        assert_eq!(householder_apply(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(householder_apply(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let r = householder_apply(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(r[0].abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn householder_rejects_degenerate() {
        let err = householder_apply(&[1e-10, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("degenerate reflection"));
        assert!(householder_apply(&[1.0, 0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_norm_preserving() {
        let a = init_ohnn(16, 16, 100, 50).unwrap();
        let b = init_ohnn(16, 16, 100, 50).unwrap();
        assert_eq!(a, b);
        let x = normalize(&(0..16).map(|i| (i as f64).sin() + 0.3).collect::<Vec<_>>()).unwrap();
        let y = ohnn_forward(&a, &x).unwrap();
        assert!((y.norm() - 1.0).abs() < 1e-12);
        assert!(init_ohnn(16, 0, 10, 50).is_err());
        assert!(init_ohnn(1, 1, 10, 50).is_err());
    }

    #[test]
    fn forward_single_reflection() {
        let p = OhnnParams::from_raw(3, 1, 1, 0, vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(ohnn_forward(&p, &emb(&[1.0, 0.0, 0.0])).unwrap().values(), &[-1.0, 0.0, 0.0]);
        assert!(matches!(
            ohnn_forward(&p, &emb(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn aam_hand_value() {
        // a = x (identity via two equal reflections), prototype 0 aligned,
        // others orthogonal, margin 0, scale 1 -> logits (1, 0, 0, 0).
        let p = OhnnParams::from_raw(
            4,
            2,
            4,
            0,
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let cfg = TrainConfig {
            aam_margin: 0.0,
            aam_scale: 1.0,
            ..TrainConfig::default()
        };
        let loss = aam_loss(&p, &[(emb(&[1.0, 0.0, 0.0, 0.0]), 0)], &cfg).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e / (e + 3.0)).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn aam_errors() {
        let p = init_ohnn(4, 2, 3, 1).unwrap();
        let cfg = TrainConfig::default();
        assert_eq!(aam_loss(&p, &[], &cfg).unwrap_err().to_string(), "empty batch");
        assert!(matches!(
            aam_loss(&p, &[(emb(&[1.0, 0.0, 0.0, 0.0]), 3)], &cfg),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let o = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        // cos(-1,0 vs originals) = -1, 0: inactive
        assert_eq!(distance_loss(&[emb(&[-1.0, 0.0])], &o, 0.25).unwrap(), 0.0);
        // equal to one original: that pair contributes 0.75, mean over 2 pairs
        let l = distance_loss(&[emb(&[1.0, 0.0])], &o, 0.25).unwrap();
        assert!((l - 0.75 / 2.0).abs() < 1e-15);
        let l = distance_loss(&[emb(&[1.0, 0.0])], &o[..1], 0.25).unwrap();
        assert!((l - 0.75).abs() < 1e-15);
        assert!(distance_loss(&[emb(&[1.0, 0.0, 0.0])], &o, 0.25).is_err());
    }

    #[test]
    fn gradient_drops_distance_term_when_unweighted() {
        let p = init_ohnn(6, 3, 4, 9).unwrap();
        let batch: Vec<_> = (0..4)
            .map(|i| (normalize(&[1.0, i as f64, 0.5, -0.2, 0.1, 0.3]).unwrap(), i))
            .collect();
        let cfg = TrainConfig {
            dist_weight: 0.0,
            dist_margin: -1.0,
            ..TrainConfig::default()
        };
        let g = ohnn_gradient(&p, &batch, &cfg).unwrap();
        assert_eq!(g.total, g.aam);
        assert!(g.distance > 0.0);
    }

    #[test]
    fn param_file_round_trip_and_magic() {
        let p = init_ohnn(5, 3, 2, 50).unwrap();
        let bytes = p.encode();
        assert_eq!(bytes.len(), 24 + 8 * (3 + 2) * 5);
        assert_eq!(OhnnParams::decode(&bytes, "p").unwrap(), p);
        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(OhnnParams::decode(&bad, "p").unwrap_err().to_string().contains("bad magic"));
        assert!(OhnnParams::decode(&bytes[..bytes.len() - 1], "p").is_err());
    }
}
