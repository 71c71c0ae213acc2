//! Executable oracle for packed-computation correctness.
//!
//! A deliberately tiny sequence model (embedding, one masked-attention
//! layer with a residual output projection, cross-entropy loss) in plain
//! `f64`. Small enough that losses and gradients can be computed two
//! independent ways:
//!
//! - unpacked: each trajectory forwarded alone under a standard causal mask;
//! - packed: the flattened packs forwarded once, attention restricted to
//!   ancestor chains, positions taken from depth, losses weighted by the
//!   scaler.
//!
//! If the trie machinery is right the two paths agree to float precision,
//! parameter gradients included. Analytic gradients are hand-written
//! backpropagation; numeric mode re-derives the baseline with central
//! differences so the backprop itself is oracle-checked.

// Indexed loops mirror the matrix equations; iterator chains obscure them.
#![allow(clippy::needless_range_loop)]

use thiserror::Error;

use crate::encoder::{attention_allowed, encode_pack, EncodedPack, Normalization};
use crate::planner::{validate_plan, PackPlan, ValidationReport};
use crate::rng::Lcg;
use crate::trajectory::Trajectory;
use crate::trie::build_trie;

/// Central-difference step for numeric gradients.
pub const NUMERIC_STEP: f64 = 1e-5;

/// Embedding + one masked-attention layer + output projection, all `f64`.
///
/// Weight layout is row-major: `embed` is V×d, the four attention maps are
/// d×d applied as `out[r] = Σ_c w[r*d + c] * in[c]`, and `unembed` is d×V
/// with `logits[v] = Σ_x unembed[x*V + v] * h[x]`. Positions are encoded with
/// the deterministic sinusoid `pe(p)[2k] = sin(p / 10000^(2k/d))`,
/// `pe(p)[2k+1] = cos(p / 10000^(2k/d))`.
#[derive(Debug, Clone)]
pub struct MicroModel {
    pub vocab: usize,
    pub hidden: usize,
    pub embed: Vec<f64>,
    pub w_query: Vec<f64>,
    pub w_key: Vec<f64>,
    pub w_value: Vec<f64>,
    pub w_out: Vec<f64>,
    pub w_unembed: Vec<f64>,
}

/// Per-parameter-block gradients, same layout as [`MicroModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Vec<f64>,
    pub w_query: Vec<f64>,
    pub w_key: Vec<f64>,
    pub w_value: Vec<f64>,
    pub w_out: Vec<f64>,
    pub w_unembed: Vec<f64>,
}

/// Fixed block order used everywhere gradients are compared or reported.
pub const BLOCK_NAMES: [&str; 6] = ["embed", "w_query", "w_key", "w_value", "w_out", "w_unembed"];

impl Gradients {
    fn zeros_like(model: &MicroModel) -> Self {
        Gradients {
            embed: vec![0.0; model.embed.len()],
            w_query: vec![0.0; model.w_query.len()],
            w_key: vec![0.0; model.w_key.len()],
            w_value: vec![0.0; model.w_value.len()],
            w_out: vec![0.0; model.w_out.len()],
            w_unembed: vec![0.0; model.w_unembed.len()],
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("embed", &self.embed),
            ("w_query", &self.w_query),
            ("w_key", &self.w_key),
            ("w_value", &self.w_value),
            ("w_out", &self.w_out),
            ("w_unembed", &self.w_unembed),
        ]
    }
}

impl MicroModel {
    fn block_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "embed" => &mut self.embed,
            "w_query" => &mut self.w_query,
            "w_key" => &mut self.w_key,
            "w_value" => &mut self.w_value,
            "w_out" => &mut self.w_out,
            "w_unembed" => &mut self.w_unembed,
            _ => unreachable!("unknown block {name}"),
        }
    }
}

/// Which baseline the packed gradients are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Unpacked gradients by backpropagation.
    Analytic,
    /// Unpacked gradients by central differences; also oracle-checks the
    /// backprop implementation itself.
    Numeric,
}

impl GradMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GradMode::Analytic => "analytic",
            GradMode::Numeric => "numeric",
        }
    }
}

impl std::str::FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(GradMode::Analytic),
            "numeric" => Ok(GradMode::Numeric),
            other => Err(format!(
                "unknown mode `{other}` (expected analytic or numeric)"
            )),
        }
    }
}

/// Packed-vs-unpacked comparison for one model and plan.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub loss_packed: f64,
    pub loss_unpacked: f64,
    pub loss_rel_err: f64,
    /// Max over all parameters of |g_packed − g_unpacked| / max(1e-12, |g_unpacked|).
    pub max_rel_grad_err: f64,
    /// Per-block maxima in [`BLOCK_NAMES`] order.
    pub block_errors: Vec<(&'static str, f64)>,
    pub mode: GradMode,
}

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("hidden width must be even and positive, got {0}")]
    OddHiddenWidth(usize),
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("token {token} out of vocabulary of size {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("size guard: {0}")]
    SizeGuard(String),
    #[error("inconsistent pack: {0}")]
    InconsistentPack(String),
    #[error(transparent)]
    Trie(#[from] crate::trie::TrieError),
    #[error(transparent)]
    Encode(#[from] crate::encoder::EncodeError),
}

/// Initializes all parameter blocks from the documented LCG, uniform in
/// [−0.1, 0.1], in the order embed, w_query, w_key, w_value, w_out,
/// w_unembed. Identical seeds give bit-identical parameters on every
/// platform.
pub fn init_model(seed: u64, vocab: usize, hidden: usize) -> Result<MicroModel, VerifierError> {
    if vocab < 2 {
        return Err(VerifierError::VocabTooSmall(vocab));
    }
    if hidden == 0 || !hidden.is_multiple_of(2) {
        return Err(VerifierError::OddHiddenWidth(hidden));
    }
    let mut rng = Lcg::new(seed);
    let mut fill = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.uniform(-0.1, 0.1)).collect() };
    Ok(MicroModel {
        vocab,
        hidden,
        embed: fill(vocab * hidden),
        w_query: fill(hidden * hidden),
        w_key: fill(hidden * hidden),
        w_value: fill(hidden * hidden),
        w_out: fill(hidden * hidden),
        w_unembed: fill(hidden * vocab),
    })
}

fn positional_encoding(position: usize, index: usize, hidden: usize) -> f64 {
    let pair = (index / 2) as f64;
    let angle = position as f64 / 10000f64.powf(2.0 * pair / hidden as f64);
    if index.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// A sequence laid out for the shared forward/backward pass: per-token
/// position ids, per-token allowed attention sets (ascending, self-inclusive),
/// and weighted targets. Both the unpacked and the packed path reduce to this.
struct FlatSeq {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    allowed: Vec<Vec<usize>>,
    targets: Vec<(usize, u32, f64)>,
}

fn seq_from_trajectory(
    traj: &Trajectory,
    weight: f64,
    vocab: usize,
) -> Result<FlatSeq, VerifierError> {
    if let Some(&t) = traj.tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(VerifierError::TokenOutOfVocab { token: t, vocab });
    }
    let n = traj.tokens.len();
    let allowed = (0..n).map(|p| (0..=p).collect()).collect();
    let targets = (1..n)
        .filter(|&p| traj.loss_mask[p] == 1)
        .map(|p| (p - 1, traj.tokens[p], weight))
        .collect();
    Ok(FlatSeq {
        tokens: traj.tokens.clone(),
        positions: (0..n).collect(),
        allowed,
        targets,
    })
}

fn seq_from_pack(pack: &EncodedPack, vocab: usize) -> Result<FlatSeq, VerifierError> {
    let n = pack.len();
    for (i, &p) in pack.parent.iter().enumerate() {
        if p >= i as i64 {
            return Err(VerifierError::InconsistentPack(format!(
                "parent[{i}] = {p} is not earlier than its token"
            )));
        }
        let expected = if p < 0 { 0 } else { pack.depth[p as usize] + 1 };
        if pack.depth[i] != expected {
            return Err(VerifierError::InconsistentPack(format!(
                "depth[{i}] = {} does not follow its parent",
                pack.depth[i]
            )));
        }
    }
    if let Some(&t) = pack.tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(VerifierError::TokenOutOfVocab { token: t, vocab });
    }
    for target in &pack.targets {
        if target.context_pos >= n {
            return Err(VerifierError::InconsistentPack(format!(
                "target context {} out of range",
                target.context_pos
            )));
        }
        if target.target_token as usize >= vocab {
            return Err(VerifierError::TokenOutOfVocab {
                token: target.target_token,
                vocab,
            });
        }
    }
    let allowed = (0..n)
        .map(|i| attention_allowed(pack, i).expect("index in range"))
        .collect();
    Ok(FlatSeq {
        tokens: pack.tokens.clone(),
        positions: pack.depth.clone(),
        allowed,
        targets: pack
            .targets
            .iter()
            .map(|t| (t.context_pos, t.target_token, t.weight))
            .collect(),
    })
}

/// Forward activations for one flat sequence.
struct Forward {
    h: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights per position, aligned with `allowed`.
    att: Vec<Vec<f64>>,
    ctx: Vec<f64>,
    /// Post-residual hidden states feeding the unembedding.
    ho: Vec<f64>,
}

fn matvec(w: &[f64], x: &[f64], d: usize, out: &mut [f64]) {
    for r in 0..d {
        let mut acc = 0.0;
        for (c, &xc) in x.iter().enumerate() {
            acc += w[r * d + c] * xc;
        }
        out[r] = acc;
    }
}

fn forward(model: &MicroModel, seq: &FlatSeq) -> Forward {
    let d = model.hidden;
    let n = seq.tokens.len();
    let scale = 1.0 / (d as f64).sqrt();

    let mut h = vec![0.0; n * d];
    for i in 0..n {
        let t = seq.tokens[i] as usize;
        for x in 0..d {
            h[i * d + x] = model.embed[t * d + x] + positional_encoding(seq.positions[i], x, d);
        }
    }

    let mut q = vec![0.0; n * d];
    let mut k = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    for i in 0..n {
        matvec(
            &model.w_query,
            &h[i * d..(i + 1) * d],
            d,
            &mut q[i * d..(i + 1) * d],
        );
        matvec(
            &model.w_key,
            &h[i * d..(i + 1) * d],
            d,
            &mut k[i * d..(i + 1) * d],
        );
        matvec(
            &model.w_value,
            &h[i * d..(i + 1) * d],
            d,
            &mut v[i * d..(i + 1) * d],
        );
    }

    let mut att = Vec::with_capacity(n);
    let mut ctx = vec![0.0; n * d];
    for i in 0..n {
        let js = &seq.allowed[i];
        let mut scores = Vec::with_capacity(js.len());
        for &j in js {
            let mut s = 0.0;
            for x in 0..d {
                s += q[i * d + x] * k[j * d + x];
            }
            scores.push(s * scale);
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= denom;
        }
        for (&j, &a) in js.iter().zip(&weights) {
            for x in 0..d {
                ctx[i * d + x] += a * v[j * d + x];
            }
        }
        att.push(weights);
    }

    let mut ho = vec![0.0; n * d];
    for i in 0..n {
        let mut proj = vec![0.0; d];
        matvec(&model.w_out, &ctx[i * d..(i + 1) * d], d, &mut proj);
        for x in 0..d {
            ho[i * d + x] = h[i * d + x] + proj[x];
        }
    }

    Forward {
        h,
        q,
        k,
        v,
        att,
        ctx,
        ho,
    }
}

/// Cross-entropy of all targets of one sequence; logits recomputed per
/// context from the forward state.
fn seq_loss(model: &MicroModel, seq: &FlatSeq, fwd: &Forward) -> f64 {
    let d = model.hidden;
    let vocab = model.vocab;
    let mut loss = 0.0;
    for &(c, t, w) in &seq.targets {
        let mut logits = vec![0.0; vocab];
        for x in 0..d {
            let hx = fwd.ho[c * d + x];
            for vv in 0..vocab {
                logits[vv] += model.w_unembed[x * vocab + vv] * hx;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += w * (lse - logits[t as usize]);
    }
    loss
}

/// Backpropagates one sequence, accumulating into `grads`; returns the
/// sequence loss.
fn seq_backward(model: &MicroModel, seq: &FlatSeq, grads: &mut Gradients) -> f64 {
    let d = model.hidden;
    let vocab = model.vocab;
    let n = seq.tokens.len();
    let scale = 1.0 / (d as f64).sqrt();
    let fwd = forward(model, seq);

    let mut loss = 0.0;
    let mut dho = vec![0.0; n * d];
    for &(c, t, w) in &seq.targets {
        let mut logits = vec![0.0; vocab];
        for x in 0..d {
            let hx = fwd.ho[c * d + x];
            for vv in 0..vocab {
                logits[vv] += model.w_unembed[x * vocab + vv] * hx;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += w * (lse - logits[t as usize]);

        for vv in 0..vocab {
            let prob = (logits[vv] - lse).exp();
            let dlogit = w * (prob - f64::from(vv == t as usize));
            for x in 0..d {
                grads.w_unembed[x * vocab + vv] += dlogit * fwd.ho[c * d + x];
                dho[c * d + x] += model.w_unembed[x * vocab + vv] * dlogit;
            }
        }
    }

    // Residual and output projection, then attention.
    let mut dh = vec![0.0; n * d];
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    for i in 0..n {
        for x in 0..d {
            dh[i * d + x] += dho[i * d + x];
        }
        let mut dctx = vec![0.0; d];
        for x in 0..d {
            let g = dho[i * d + x];
            if g == 0.0 {
                continue;
            }
            for c in 0..d {
                grads.w_out[x * d + c] += g * fwd.ctx[i * d + c];
                dctx[c] += model.w_out[x * d + c] * g;
            }
        }

        let js = &seq.allowed[i];
        let weights = &fwd.att[i];
        let mut da = Vec::with_capacity(js.len());
        for &j in js {
            let mut acc = 0.0;
            for x in 0..d {
                acc += dctx[x] * fwd.v[j * d + x];
            }
            da.push(acc);
        }
        let weighted_sum: f64 = weights.iter().zip(&da).map(|(a, g)| a * g).sum();
        for ((&j, &a), &g) in js.iter().zip(weights).zip(&da) {
            let ds = a * (g - weighted_sum);
            for x in 0..d {
                dq[i * d + x] += ds * fwd.k[j * d + x] * scale;
                dk[j * d + x] += ds * fwd.q[i * d + x] * scale;
                dv[j * d + x] += a * dctx[x];
            }
        }
    }

    // Projections back to h, then h back to the embedding rows.
    for i in 0..n {
        for r in 0..d {
            let (gq, gk, gv) = (dq[i * d + r], dk[i * d + r], dv[i * d + r]);
            for c in 0..d {
                let hc = fwd.h[i * d + c];
                grads.w_query[r * d + c] += gq * hc;
                grads.w_key[r * d + c] += gk * hc;
                grads.w_value[r * d + c] += gv * hc;
                dh[i * d + c] += model.w_query[r * d + c] * gq
                    + model.w_key[r * d + c] * gk
                    + model.w_value[r * d + c] * gv;
            }
        }
        let t = seq.tokens[i] as usize;
        for x in 0..d {
            grads.embed[t * d + x] += dh[i * d + x];
        }
    }

    loss
}

fn unpacked_seqs(
    model: &MicroModel,
    trajectories: &[Trajectory],
    normalization: Normalization,
) -> Result<Vec<FlatSeq>, VerifierError> {
    let weight = match normalization {
        Normalization::TrajectoryMean => 1.0 / trajectories.len() as f64,
        Normalization::TokenMean => {
            let m: usize = trajectories
                .iter()
                .map(|t| (1..t.len()).filter(|&p| t.loss_mask[p] == 1).count())
                .sum();
            if m == 0 {
                0.0
            } else {
                1.0 / m as f64
            }
        }
    };
    trajectories
        .iter()
        .map(|t| seq_from_trajectory(t, weight, model.vocab))
        .collect()
}

fn total_loss(model: &MicroModel, seqs: &[FlatSeq]) -> f64 {
    seqs.iter()
        .map(|seq| {
            let fwd = forward(model, seq);
            seq_loss(model, seq, &fwd)
        })
        .sum()
}

fn total_grad(model: &MicroModel, seqs: &[FlatSeq]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    let loss = seqs
        .iter()
        .map(|seq| seq_backward(model, seq, &mut grads))
        .sum();
    (loss, grads)
}

/// Reference loss: every trajectory forwarded independently under a causal
/// mask, targets combined per the normalization mode.
pub fn loss_unpacked(
    model: &MicroModel,
    trajectories: &[Trajectory],
    normalization: Normalization,
) -> Result<f64, VerifierError> {
    let seqs = unpacked_seqs(model, trajectories, normalization)?;
    Ok(total_loss(model, &seqs))
}

/// Packed loss: attention restricted to ancestor chains, positions from
/// depth, targets pre-weighted by the scaler.
pub fn loss_packed(model: &MicroModel, packs: &[EncodedPack]) -> Result<f64, VerifierError> {
    let seqs: Result<Vec<FlatSeq>, _> = packs
        .iter()
        .map(|p| seq_from_pack(p, model.vocab))
        .collect();
    Ok(total_loss(model, &seqs?))
}

/// Unpacked loss and analytic gradients.
pub fn grad_unpacked(
    model: &MicroModel,
    trajectories: &[Trajectory],
    normalization: Normalization,
) -> Result<(f64, Gradients), VerifierError> {
    let seqs = unpacked_seqs(model, trajectories, normalization)?;
    Ok(total_grad(model, &seqs))
}

/// Packed loss and analytic gradients.
pub fn grad_packed(
    model: &MicroModel,
    packs: &[EncodedPack],
) -> Result<(f64, Gradients), VerifierError> {
    let seqs: Result<Vec<FlatSeq>, _> = packs
        .iter()
        .map(|p| seq_from_pack(p, model.vocab))
        .collect();
    Ok(total_grad(model, &seqs?))
}

/// Unpacked gradients by central differences with the given step.
pub fn numeric_grad_unpacked(
    model: &MicroModel,
    trajectories: &[Trajectory],
    normalization: Normalization,
    step: f64,
) -> Result<Gradients, VerifierError> {
    let seqs = unpacked_seqs(model, trajectories, normalization)?;
    let mut probe = model.clone();
    let mut grads = Gradients::zeros_like(model);
    for name in BLOCK_NAMES {
        let len = probe.block_mut(name).len();
        for idx in 0..len {
            let original = probe.block_mut(name)[idx];
            probe.block_mut(name)[idx] = original + step;
            let plus = total_loss(&probe, &seqs);
            probe.block_mut(name)[idx] = original - step;
            let minus = total_loss(&probe, &seqs);
            probe.block_mut(name)[idx] = original;
            let block = match name {
                "embed" => &mut grads.embed,
                "w_query" => &mut grads.w_query,
                "w_key" => &mut grads.w_key,
                "w_value" => &mut grads.w_value,
                "w_out" => &mut grads.w_out,
                "w_unembed" => &mut grads.w_unembed,
                _ => unreachable!(),
            };
            block[idx] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

fn rel_err(candidate: f64, baseline: f64) -> f64 {
    (candidate - baseline).abs() / baseline.abs().max(1e-12)
}

/// Per-block and overall max relative error of `candidate` against
/// `baseline`, per parameter with a 1e-12 denominator floor.
pub fn compare_gradients(
    candidate: &Gradients,
    baseline: &Gradients,
) -> (f64, Vec<(&'static str, f64)>) {
    compare_gradients_floored(candidate, baseline, 1e-12)
}

/// Like [`compare_gradients`] with an explicit denominator floor.
///
/// Against a central-difference baseline the floor must absorb the finite
/// difference noise (about eps·|loss|/(2·step) in absolute terms); a floor of
/// the step size keeps the comparison meaningful for every gradient the
/// differences can actually resolve.
pub fn compare_gradients_floored(
    candidate: &Gradients,
    baseline: &Gradients,
    floor: f64,
) -> (f64, Vec<(&'static str, f64)>) {
    let mut overall = 0.0f64;
    let mut blocks = Vec::with_capacity(6);
    for ((name, cand), (_, base)) in candidate.blocks().iter().zip(baseline.blocks().iter()) {
        let mut worst = 0.0f64;
        for (c, b) in cand.iter().zip(base.iter()) {
            worst = worst.max((c - b).abs() / b.abs().max(floor));
        }
        overall = overall.max(worst);
        blocks.push((*name, worst));
    }
    (overall, blocks)
}

/// Overrides every target weight with one uniform value, as if each
/// materialized continuation belonged to a single trajectory. This disables
/// the scaler at branch points and demonstrates why plain prefix reuse
/// miscomputes gradients.
pub fn set_uniform_weights(packs: &mut [EncodedPack], weight: f64) {
    for pack in packs {
        for target in &mut pack.targets {
            target.weight = weight;
        }
    }
}

fn check_size_guard(model: &MicroModel, trajectories: &[Trajectory]) -> Result<(), VerifierError> {
    if model.vocab > 16 {
        return Err(VerifierError::SizeGuard(format!(
            "vocabulary {} exceeds 16",
            model.vocab
        )));
    }
    if model.hidden > 8 {
        return Err(VerifierError::SizeGuard(format!(
            "hidden width {} exceeds 8",
            model.hidden
        )));
    }
    if trajectories.len() > 8 {
        return Err(VerifierError::SizeGuard(format!(
            "{} trajectories exceed 8",
            trajectories.len()
        )));
    }
    if let Some(t) = trajectories.iter().find(|t| t.len() > 16) {
        return Err(VerifierError::SizeGuard(format!(
            "trajectory `{}` has {} tokens, over 16",
            t.traj_id,
            t.len()
        )));
    }
    Ok(())
}

/// Encodes the plan's packs, computes gradients along both paths, and
/// reports the worst per-parameter relative disagreement.
///
/// Sizes are guarded to desk scale (V ≤ 16, d ≤ 8, ≤ 8 trajectories of ≤ 16
/// tokens) so even numeric mode stays fast.
pub fn grad_check(
    model: &MicroModel,
    trajectories: &[Trajectory],
    plan: &PackPlan,
    normalization: Normalization,
    mode: GradMode,
) -> Result<GradReport, VerifierError> {
    check_size_guard(model, trajectories)?;
    let trie = build_trie(trajectories)?;
    if let ValidationReport::Violation(v) = validate_plan(plan, &trie) {
        return Err(VerifierError::InconsistentPack(v.to_string()));
    }

    let packs: Vec<EncodedPack> = plan
        .packs
        .iter()
        .map(|pack| encode_pack(&trie, pack, normalization, trajectories.len()))
        .collect::<Result<_, _>>()?;

    let (loss_packed, grads_packed) = grad_packed(model, &packs)?;
    let (loss_unpacked, grads_unpacked) = grad_unpacked(model, trajectories, normalization)?;
    let (baseline, floor) = match mode {
        GradMode::Analytic => (grads_unpacked, 1e-12),
        GradMode::Numeric => (
            numeric_grad_unpacked(model, trajectories, normalization, NUMERIC_STEP)?,
            NUMERIC_STEP,
        ),
    };

    let (max_rel_grad_err, block_errors) =
        compare_gradients_floored(&grads_packed, &baseline, floor);
    Ok(GradReport {
        loss_packed,
        loss_unpacked,
        loss_rel_err: rel_err(loss_packed, loss_unpacked),
        max_rel_grad_err,
        block_errors,
        mode,
    })
}
