//! The dual-input denoising backbone and its reduced-scale parallel
//! branches.
//!
//! The backbone takes the RGB image and the noised mask embedding,
//! merges their stem embeddings, runs a four-stage encoder (residual
//! conv block, bilinear downsample, attention block per stage) into an
//! H/32 bottleneck, and mirrors the path back up with skip
//! concatenations. Every residual block receives the sinusoidal time
//! embedding through a learned channel-wise projection. The head
//! predicts the per-step mask increment at C×H×W.
//!
//! A branch is a three-stage replica of the same pattern running on the
//! mask embedding bilinearly reduced to 1/8 (half scale) or 1/16
//! (quarter scale) of the input; its three decoder features, sized
//! H/32, H/16 and H/8, are fused into the matching decoding points of
//! the backbone by channel concatenation plus a learned 1×1 reduction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head, AttentionConfig, MultiHeadParams};
use crate::error::Result;
use crate::rng::stream;
use crate::tensor::{GradMap, Tape, Tensor};
use crate::{config_err, contract_err, dim_err, index_err};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchScale {
    Half,
    Quarter,
}

impl BranchScale {
    /// Divisor applied to H and W for the branch input resize.
    pub fn input_divisor(self) -> usize {
        match self {
            BranchScale::Half => 8,
            BranchScale::Quarter => 16,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            BranchScale::Half => "half",
            BranchScale::Quarter => "quarter",
        }
    }
}

/// Which parallel branches are attached to the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BranchSet {
    pub half: bool,
    pub quarter: bool,
}

impl BranchSet {
    pub const NONE: BranchSet = BranchSet { half: false, quarter: false };
    pub const HALF: BranchSet = BranchSet { half: true, quarter: false };
    pub const HALF_QUARTER: BranchSet = BranchSet { half: true, quarter: true };

    pub fn enabled(&self) -> Vec<BranchScale> {
        let mut v = Vec::new();
        if self.half {
            v.push(BranchScale::Half);
        }
        if self.quarter {
            v.push(BranchScale::Quarter);
        }
        v
    }

    pub fn any(&self) -> bool {
        self.half || self.quarter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder stage widths, shallow to deep.
    pub stage_channels: [usize; 4],
    pub input_image_channels: usize,
    pub num_classes: usize,
    /// Variant and head count for every attention block; d_model is the
    /// stage width at each block, with d_k = d_v = width / heads.
    pub attention: AttentionConfig,
    pub branches: BranchSet,
    pub time_embed_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.input_image_channels == 0 {
            return Err(config_err!("image channel count must be positive"));
        }
        for pair in self.stage_channels.windows(2) {
            if pair[1] < pair[0] {
                return Err(config_err!(
                    "stage widths must be nondecreasing, got {:?}",
                    self.stage_channels
                ));
            }
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(config_err!(
                "time embedding dim must be even and positive, got {}",
                self.time_embed_dim
            ));
        }
        self.attention.validate()?;
        for &width in &self.stage_channels {
            if width % self.attention.heads != 0 {
                return Err(config_err!(
                    "stage width {} not divisible by {} attention heads",
                    width,
                    self.attention.heads
                ));
            }
        }
        Ok(())
    }
}

/// Named parameter collection with deterministic (sorted) iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamMap(BTreeMap<String, Tensor>);

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.0
            .get(name)
            .ok_or_else(|| contract_err!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// Total scalar count across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.0.values().map(Tensor::numel).sum()
    }
}

/// Serialized model state: config, parameters and the optimizer step
/// counter.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamMap,
    pub step: u64,
}

impl Checkpoint {
    /// Every parameter the model expects must exist with the right shape.
    pub fn validate(&self) -> Result<()> {
        let model = Model::new(self.config.clone())?;
        for (name, shape) in model.param_specs() {
            let got = self.params.get(&name)?;
            if got.shape() != shape.as_slice() {
                return Err(contract_err!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    shape
                ));
            }
        }
        Ok(())
    }
}

/// Sinusoidal step embedding: (sin, cos) pairs at geometrically spaced
/// frequencies of t/T.
pub fn time_embed(t: usize, dim: usize, steps: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(config_err!("time embedding dim must be even and positive, got {dim}"));
    }
    if t > steps {
        return Err(index_err!("step {t} beyond schedule length {steps}"));
    }
    const MAX_FREQ: f64 = 1000.0;
    let tau = t as f64 / steps.max(1) as f64;
    let half = dim / 2;
    let mut data = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            Float::powf(MAX_FREQ, i as f64 / (half - 1) as f64)
        };
        data.push(Float::sin(freq * tau));
        data.push(Float::cos(freq * tau));
    }
    Tensor::from_vec(vec![dim], data)
}

/// Channel-concatenate a backbone feature with a branch feature and
/// reduce back to the backbone width with a learned 1×1 convolution.
pub fn fuse(tape: &Tape, backbone: &Tensor, branch: &Tensor, reduce: &Tensor) -> Result<Tensor> {
    if backbone.rank() != 3 || branch.rank() != 3 {
        return Err(dim_err!(
            "fuse expects c×h×w features, got {:?} and {:?}",
            backbone.shape(),
            branch.shape()
        ));
    }
    if backbone.shape()[1..] != branch.shape()[1..] {
        return Err(dim_err!(
            "fuse spatial extents differ: {:?} vs {:?}",
            backbone.shape(),
            branch.shape()
        ));
    }
    let joined = tape.concat_axis(backbone, branch, 0)?;
    tape.conv2d(&joined, reduce, 1, 0)
}

/// Parameters registered on a tape for one forward pass.
pub struct LiveParams {
    map: BTreeMap<String, Tensor>,
}

impl LiveParams {
    /// Watch every parameter on `tape` when `trainable`, or pass them
    /// through untracked for inference.
    pub fn register(tape: &Tape, params: &ParamMap, trainable: bool) -> Self {
        let map = params
            .iter()
            .map(|(name, value)| {
                let live = if trainable { tape.watch(value) } else { value.clone() };
                (name.clone(), live)
            })
            .collect();
        Self { map }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| contract_err!("missing parameter {name}"))
    }

    /// Replace one live parameter, e.g. to probe the gradient of a
    /// single tensor while the rest stay constant.
    pub fn set(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    /// Collect per-parameter gradients after a backward pass.
    pub fn grads(&self, grads: &GradMap) -> Result<BTreeMap<String, Tensor>> {
        self.map
            .iter()
            .map(|(name, live)| Ok((name.clone(), grads.grad(live)?)))
            .collect()
    }
}

enum ParamKind {
    ConvWeight,
    Bias,
    Projection,
}

/// The network: a validated config plus the derived parameter layout.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
}

/// Widths entering/leaving each backbone decoder stage.
///   enc residual blocks: cin per stage, cout = stage width.
///   dec residual blocks: cin = upsampled width + skip width.
struct Layout {
    enc_cin: [usize; 4],
    dec_cin: [usize; 4],
    dec_cout: [usize; 4],
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn layout(&self) -> Layout {
        let sc = self.config.stage_channels;
        Layout {
            enc_cin: [sc[0], sc[0], sc[1], sc[2]],
            dec_cin: [2 * sc[3], 2 * sc[2], 2 * sc[1], 2 * sc[0]],
            dec_cout: [sc[2], sc[1], sc[0], sc[0]],
        }
    }

    /// Branch stage widths reuse the three shallow backbone widths.
    fn branch_widths(&self) -> [usize; 3] {
        let sc = self.config.stage_channels;
        [sc[0], sc[1], sc[2]]
    }

    fn branch_dec_cout(&self) -> [usize; 3] {
        let sc = self.config.stage_channels;
        [sc[1], sc[0], sc[0]]
    }

    /// Backbone widths at the three fusion points: the bottleneck output
    /// and the first two decoder stage outputs.
    fn fusion_widths(&self) -> [usize; 3] {
        let sc = self.config.stage_channels;
        [sc[3], sc[2], sc[1]]
    }

    /// Enumerate every parameter with its shape and init fan-in. This is
    /// the single source of truth for the parameter layout.
    fn for_each_param(&self, mut f: impl FnMut(String, Vec<usize>, usize, ParamKind)) {
        let sc = self.config.stage_channels;
        let classes = self.config.num_classes;
        let tdim = self.config.time_embed_dim;
        let heads = self.config.attention.heads;
        let layout = self.layout();

        let res_block = |prefix: &str, cin: usize, cout: usize, with_time: bool,
                             f: &mut dyn FnMut(String, Vec<usize>, usize, ParamKind)| {
            f(format!("{prefix}.res.w1"), vec![cout, cin, 3, 3], cin * 9, ParamKind::ConvWeight);
            f(format!("{prefix}.res.b1"), vec![cout], cout, ParamKind::Bias);
            f(format!("{prefix}.res.w2"), vec![cout, cout, 3, 3], cout * 9, ParamKind::ConvWeight);
            f(format!("{prefix}.res.b2"), vec![cout], cout, ParamKind::Bias);
            if with_time {
                f(format!("{prefix}.res.wt"), vec![tdim, cout], tdim, ParamKind::Projection);
            }
            if cin != cout {
                f(format!("{prefix}.res.wskip"), vec![cout, cin, 1, 1], cin, ParamKind::ConvWeight);
            }
        };
        let attn_block = |prefix: &str, width: usize,
                              f: &mut dyn FnMut(String, Vec<usize>, usize, ParamKind)| {
            let per_head = width / heads;
            for h in 0..heads {
                for proj in ["wq", "wk", "wv"] {
                    f(
                        format!("{prefix}.attn.h{h}.{proj}"),
                        vec![width, per_head],
                        width,
                        ParamKind::Projection,
                    );
                }
            }
            f(format!("{prefix}.attn.wo"), vec![width, width], width, ParamKind::Projection);
        };

        f(
            "backbone.stem_img.w".into(),
            vec![sc[0], self.config.input_image_channels, 3, 3],
            self.config.input_image_channels * 9,
            ParamKind::ConvWeight,
        );
        f("backbone.stem_img.b".into(), vec![sc[0]], sc[0], ParamKind::Bias);
        f("backbone.stem_mask.w".into(), vec![sc[0], classes, 3, 3], classes * 9, ParamKind::ConvWeight);
        f("backbone.stem_mask.b".into(), vec![sc[0]], sc[0], ParamKind::Bias);

        for (i, (&cin, &width)) in layout.enc_cin.iter().zip(sc.iter()).enumerate() {
            let prefix = format!("backbone.enc{i}");
            res_block(&prefix, cin, width, true, &mut f);
            attn_block(&prefix, width, &mut f);
        }
        for j in 0..4 {
            let prefix = format!("backbone.dec{j}");
            res_block(&prefix, layout.dec_cin[j], layout.dec_cout[j], true, &mut f);
            attn_block(&prefix, layout.dec_cout[j], &mut f);
        }
        f("backbone.head.w1".into(), vec![sc[0], sc[0], 3, 3], sc[0] * 9, ParamKind::ConvWeight);
        f("backbone.head.b1".into(), vec![sc[0]], sc[0], ParamKind::Bias);
        f("backbone.head.w2".into(), vec![classes, sc[0], 1, 1], sc[0], ParamKind::ConvWeight);
        f("backbone.head.b2".into(), vec![classes], classes, ParamKind::Bias);

        for scale in self.config.branches.enabled() {
            let bw = self.branch_widths();
            let dec_cout = self.branch_dec_cout();
            let key = scale.key();
            f(
                format!("branch.{key}.stem.w"),
                vec![bw[0], classes, 3, 3],
                classes * 9,
                ParamKind::ConvWeight,
            );
            f(format!("branch.{key}.stem.b"), vec![bw[0]], bw[0], ParamKind::Bias);
            let enc_cin = [bw[0], bw[0], bw[1]];
            for i in 0..3 {
                let prefix = format!("branch.{key}.enc{i}");
                res_block(&prefix, enc_cin[i], bw[i], false, &mut f);
                attn_block(&prefix, bw[i], &mut f);
            }
            let dec_cin = [2 * bw[2], 2 * bw[1], 2 * bw[0]];
            for j in 0..3 {
                let prefix = format!("branch.{key}.dec{j}");
                res_block(&prefix, dec_cin[j], dec_cout[j], false, &mut f);
                attn_block(&prefix, dec_cout[j], &mut f);
            }
            for (point, (&wc, &bc)) in self.fusion_widths().iter().zip(dec_cout.iter()).enumerate() {
                f(
                    format!("fuse.{key}.{point}.w"),
                    vec![wc, wc + bc, 1, 1],
                    wc + bc,
                    ParamKind::ConvWeight,
                );
            }
        }
    }

    /// Names and shapes of every parameter, in layout order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        self.for_each_param(|name, shape, _, _| specs.push((name, shape)));
        specs
    }

    /// Deterministic initialization: uniform(−1/√fan_in, 1/√fan_in) for
    /// weights, zeros for biases, drawn from the (seed, "init") stream.
    pub fn init_params(&self, seed: u64) -> ParamMap {
        let mut rng = stream(seed, "init", 0);
        let mut params = ParamMap::new();
        self.for_each_param(|name, shape, fan_in, kind| {
            let value = match kind {
                ParamKind::Bias => Tensor::zeros(shape),
                ParamKind::ConvWeight | ParamKind::Projection => {
                    let bound = 1.0 / Float::sqrt(fan_in as f64);
                    Tensor::rand_uniform(shape, -bound, bound, &mut rng)
                }
            };
            params.insert(name, value);
        });
        params
    }

    pub fn init_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint { config: self.config.clone(), params: self.init_params(seed), step: 0 }
    }

    fn res_block(
        &self,
        tape: &Tape,
        live: &LiveParams,
        prefix: &str,
        x: &Tensor,
        time: Option<&Tensor>,
    ) -> Result<Tensor> {
        let w1 = live.get(&format!("{prefix}.res.w1"))?;
        let mut h = tape.conv2d(x, w1, 1, 1)?;
        h = tape.bias_add(&h, live.get(&format!("{prefix}.res.b1"))?, 0)?;
        if let Some(emb) = time {
            let wt = live.get(&format!("{prefix}.res.wt"))?;
            let dim = wt.shape()[0];
            let cout = wt.shape()[1];
            let row = tape.reshape(emb, [1, dim])?;
            let proj = tape.reshape(&tape.matmul(&row, wt)?, [cout])?;
            h = tape.bias_add(&h, &proj, 0)?;
        }
        h = tape.silu(&h);
        let w2 = live.get(&format!("{prefix}.res.w2"))?;
        h = tape.conv2d(&h, w2, 1, 1)?;
        h = tape.bias_add(&h, live.get(&format!("{prefix}.res.b2"))?, 0)?;
        h = tape.silu(&h);
        let skip_name = format!("{prefix}.res.wskip");
        let skip = match live.get(&skip_name) {
            Ok(wskip) => tape.conv2d(x, wskip, 1, 0)?,
            Err(_) => x.clone(),
        };
        tape.add(&h, &skip)
    }

    fn attn_block(&self, tape: &Tape, live: &LiveParams, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let heads = self.config.attention.heads;
        let cfg = AttentionConfig::for_width(self.config.attention.variant, heads, c);
        let mut wq = Vec::with_capacity(heads);
        let mut wk = Vec::with_capacity(heads);
        let mut wv = Vec::with_capacity(heads);
        for head in 0..heads {
            wq.push(live.get(&format!("{prefix}.attn.h{head}.wq"))?.clone());
            wk.push(live.get(&format!("{prefix}.attn.h{head}.wk"))?.clone());
            wv.push(live.get(&format!("{prefix}.attn.h{head}.wv"))?.clone());
        }
        let params = MultiHeadParams { wq, wk, wv, wo: live.get(&format!("{prefix}.attn.wo"))?.clone() };
        let rows = tape.transpose2(&tape.reshape(x, [c, h * w])?)?;
        let grid = tape.reshape(&rows, [h, w, c])?;
        let out = multi_head(tape, &grid, &cfg, &params)?;
        let cols = tape.transpose2(&tape.reshape(&out, [h * w, c])?)?;
        let back = tape.reshape(&cols, [c, h, w])?;
        tape.add(x, &back)
    }

    fn stem(&self, tape: &Tape, live: &LiveParams, name: &str, x: &Tensor) -> Result<Tensor> {
        let y = tape.conv2d(x, live.get(&format!("{name}.w"))?, 1, 1)?;
        tape.bias_add(&y, live.get(&format!("{name}.b"))?, 0)
    }

    /// Backbone pass: returns the predicted increment and the encoder
    /// skip features (shallow to deep).
    pub fn backbone_forward(
        &self,
        tape: &Tape,
        live: &LiveParams,
        img: &Tensor,
        m_t: &Tensor,
        t: usize,
        steps: usize,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        self.forward_impl(tape, live, img, m_t, t, steps, &[])
    }

    fn check_inputs(&self, img: &Tensor, m_t: &Tensor, need32: bool) -> Result<(usize, usize)> {
        if img.rank() != 3 || img.shape()[0] != self.config.input_image_channels {
            return Err(dim_err!(
                "image must be {}×H×W, got {:?}",
                self.config.input_image_channels,
                img.shape()
            ));
        }
        if m_t.rank() != 3 || m_t.shape()[0] != self.config.num_classes {
            return Err(dim_err!(
                "mask embedding must be {}×H×W, got {:?}",
                self.config.num_classes,
                m_t.shape()
            ));
        }
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if m_t.shape()[1] != h || m_t.shape()[2] != w {
            return Err(dim_err!(
                "image {:?} and mask {:?} spatial extents differ",
                img.shape(),
                m_t.shape()
            ));
        }
        let div = if need32 { 32 } else { 16 };
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(dim_err!("H and W must be positive multiples of {div}, got {h}×{w}"));
        }
        Ok((h, w))
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_impl(
        &self,
        tape: &Tape,
        live: &LiveParams,
        img: &Tensor,
        m_t: &Tensor,
        t: usize,
        steps: usize,
        branch_feats: &[(BranchScale, [Tensor; 3])],
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let (h, w) = self.check_inputs(img, m_t, false)?;
        let emb = time_embed(t, self.config.time_embed_dim, steps)?;

        let stems = tape.add(
            &self.stem(tape, live, "backbone.stem_img", img)?,
            &self.stem(tape, live, "backbone.stem_mask", m_t)?,
        )?;
        let mut x = tape.bilinear_resize(&stems, half_extent(h), half_extent(w))?;

        let mut skips = Vec::with_capacity(4);
        for i in 0..4 {
            let prefix = format!("backbone.enc{i}");
            x = self.res_block(tape, live, &prefix, &x, Some(&emb))?;
            skips.push(x.clone());
            x = tape.bilinear_resize(
                &x,
                half_extent(x.shape()[1]),
                half_extent(x.shape()[2]),
            )?;
            x = self.attn_block(tape, live, &prefix, &x)?;
        }

        x = self.apply_fusion(tape, live, 0, x, branch_feats)?;
        for j in 0..4 {
            let skip = &skips[3 - j];
            let prefix = format!("backbone.dec{j}");
            x = tape.bilinear_resize(&x, skip.shape()[1], skip.shape()[2])?;
            x = tape.concat_axis(&x, skip, 0)?;
            x = self.res_block(tape, live, &prefix, &x, Some(&emb))?;
            x = self.attn_block(tape, live, &prefix, &x)?;
            if j < 2 {
                x = self.apply_fusion(tape, live, j + 1, x, branch_feats)?;
            }
        }

        x = tape.bilinear_resize(&x, h, w)?;
        x = tape.conv2d(&x, live.get("backbone.head.w1")?, 1, 1)?;
        x = tape.bias_add(&x, live.get("backbone.head.b1")?, 0)?;
        x = tape.silu(&x);
        x = tape.conv2d(&x, live.get("backbone.head.w2")?, 1, 0)?;
        x = tape.bias_add(&x, live.get("backbone.head.b2")?, 0)?;
        Ok((x, skips))
    }

    fn apply_fusion(
        &self,
        tape: &Tape,
        live: &LiveParams,
        point: usize,
        mut x: Tensor,
        branch_feats: &[(BranchScale, [Tensor; 3])],
    ) -> Result<Tensor> {
        for (scale, feats) in branch_feats {
            let reduce = live.get(&format!("fuse.{}.{point}.w", scale.key()))?;
            x = fuse(tape, &x, &feats[point], reduce)?;
        }
        Ok(x)
    }

    /// Run one reduced-scale branch on the (noised) mask embedding and
    /// return its three decoder features at H/32, H/16 and H/8.
    pub fn branch_forward(
        &self,
        tape: &Tape,
        live: &LiveParams,
        coarse: &Tensor,
        scale: BranchScale,
    ) -> Result<[Tensor; 3]> {
        if coarse.rank() != 3 || coarse.shape()[0] != self.config.num_classes {
            return Err(dim_err!(
                "branch input must be {}×H×W, got {:?}",
                self.config.num_classes,
                coarse.shape()
            ));
        }
        let (h, w) = (coarse.shape()[1], coarse.shape()[2]);
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(dim_err!("branch needs H,W divisible by 32, got {h}×{w}"));
        }
        let s = scale.input_divisor();
        // The deepest decoder target is H/(4s); below one pixel the
        // three-halving ladder has collapsed.
        if h / (4 * s) == 0 || w / (4 * s) == 0 {
            return Err(dim_err!(
                "{}-scale branch collapses below 1×1 on {h}×{w} input",
                scale.key()
            ));
        }
        let key = scale.key();
        let mut x = tape.bilinear_resize(coarse, h / s, w / s)?;
        x = self.stem(tape, live, &format!("branch.{key}.stem"), &x)?;

        let mut skips = Vec::with_capacity(3);
        for i in 0..3 {
            let prefix = format!("branch.{key}.enc{i}");
            x = self.res_block(tape, live, &prefix, &x, None)?;
            skips.push(x.clone());
            x = tape.bilinear_resize(&x, half_extent(x.shape()[1]), half_extent(x.shape()[2]))?;
            x = self.attn_block(tape, live, &prefix, &x)?;
        }

        let mut outs = Vec::with_capacity(3);
        for j in 0..3 {
            let skip = &skips[2 - j];
            let prefix = format!("branch.{key}.dec{j}");
            x = tape.bilinear_resize(&x, skip.shape()[1], skip.shape()[2])?;
            x = tape.concat_axis(&x, skip, 0)?;
            x = self.res_block(tape, live, &prefix, &x, None)?;
            x = self.attn_block(tape, live, &prefix, &x)?;
            outs.push(x.clone());
        }

        // Align to the backbone fusion sizes (identity for the half
        // branch, a 2× upsample for the quarter branch).
        let targets = [(h / 32, w / 32), (h / 16, w / 16), (h / 8, w / 8)];
        let mut aligned = Vec::with_capacity(3);
        for (out, (th, tw)) in outs.into_iter().zip(targets) {
            aligned.push(tape.bilinear_resize(&out, th, tw)?);
        }
        Ok([aligned.remove(0), aligned.remove(0), aligned.remove(0)])
    }

    /// Full forward: backbone plus the configured parallel branches
    /// fused into the three deepest decoding points. With no branches
    /// this is exactly [`Model::backbone_forward`].
    pub fn pmsdiff_forward(
        &self,
        tape: &Tape,
        live: &LiveParams,
        img: &Tensor,
        m_t: &Tensor,
        t: usize,
        steps: usize,
    ) -> Result<Tensor> {
        let mut feats = Vec::new();
        if self.config.branches.any() {
            self.check_inputs(img, m_t, true)?;
            // The branch denoises the same noised mask the backbone sees.
            for scale in self.config.branches.enabled() {
                feats.push((scale, self.branch_forward(tape, live, m_t, scale)?));
            }
        }
        let (pred, _) = self.forward_impl(tape, live, img, m_t, t, steps, &feats)?;
        Ok(pred)
    }
}

fn half_extent(n: usize) -> usize {
    (n / 2).max(1)
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: [16, 32, 64, 128],
            input_image_channels: 3,
            num_classes: 3,
            attention: AttentionConfig::for_width(
                crate::attention::AttentionVariant::CblaCompact,
                2,
                16,
            ),
            branches: BranchSet::HALF,
            time_embed_dim: 16,
        }
    }
}
