//! Teacher-student training harness around the toy segmentor.
//!
//! One iteration picks an axis, builds weak/strong views of every case, asks
//! the EMA teacher for pseudo-labels and confidences, computes the layer
//! losses through a shuffle/recover round trip and the displacement loss on
//! the patch-exchanged batch, then takes an SGD step and updates the teacher.
//!
//! Every random decision draws from its own ChaCha stream keyed by
//! `(seed, purpose, iteration)`, so ablation arms that skip a step still see
//! the same batches, axes and noise as the arms that run it.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::displace::{compute_stats, confidence_gap, displace, patchify, topk_select, StreamStack};
use crate::error::{Error, Result};
use crate::grid::{Axis, Batch, ConfidenceGrid, Grid, LabelGrid, Lattice, ProbGrid, SupervisionGrid, VolumeGrid};
use crate::losses::{loss_with_grad, total_loss, LossKind, LossWeights};
use crate::metrics::{mean_dice_over, MetricReport};
use crate::model::{backprop, forward, SegmentorParams};
use crate::phantom::{generate_cases, PhantomSpec};
use crate::schedule::{consistency_rampup, ema_update, poly_lr, ScheduleConfig};
use crate::shuffle::{block_count, choose_axis, recover_batch, shuffle_batch, split_batch, ShuffleMatrix, ShufflePlan};

/// Ablation arms. Each adds one ingredient on top of the pseudo-label baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Mean teacher on raw inputs.
    Baseline,
    /// Adds weak/strong augmentation.
    Aug,
    /// Augmentation plus slice-block shuffling.
    Sbs,
    /// Augmentation plus confidence-guided displacement.
    Cgd,
    /// Augmentation, shuffling and displacement.
    Full,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::Aug, Mode::Sbs, Mode::Cgd, Mode::Full];

    pub fn augments(self) -> bool {
        self != Mode::Baseline
    }

    pub fn shuffles(self) -> bool {
        matches!(self, Mode::Sbs | Mode::Full)
    }

    pub fn displaces(self) -> bool {
        matches!(self, Mode::Cgd | Mode::Full)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Aug => "aug",
            Mode::Sbs => "sbs",
            Mode::Cgd => "cgd",
            Mode::Full => "full",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected baseline, aug, sbs, cgd or full")))
    }
}

/// How the per-iteration axis is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AxisPolicy {
    Random,
    Fixed(Axis),
}

impl FromStr for AxisPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("random") {
            Ok(AxisPolicy::Random)
        } else {
            Ok(AxisPolicy::Fixed(s.parse()?))
        }
    }
}

impl TryFrom<String> for AxisPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AxisPolicy> for String {
    fn from(p: AxisPolicy) -> String {
        match p {
            AxisPolicy::Random => "random".into(),
            AxisPolicy::Fixed(a) => a.to_string(),
        }
    }
}

/// Loss on the recovered labeled predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisedLoss {
    /// Soft Dice only.
    #[default]
    Dice,
    /// `½ CE + ½ Dice`.
    CeDice,
}

impl SupervisedLoss {
    fn kind(self) -> LossKind {
        match self {
            SupervisedLoss::Dice => LossKind::Dice,
            SupervisedLoss::CeDice => LossKind::Hybrid,
        }
    }
}

/// Intensity perturbation of one stream: `v ← s·v + t (+ noise)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamAugment {
    pub scale: [f64; 2],
    /// Shift is drawn from `[−shift, shift]`.
    pub shift: f64,
    pub noise_sigma: f64,
}

impl StreamAugment {
    pub fn weak() -> Self {
        StreamAugment { scale: [0.95, 1.05], shift: 0.05, noise_sigma: 0.0 }
    }

    pub fn strong() -> Self {
        StreamAugment { scale: [0.8, 1.2], shift: 0.2, noise_sigma: 0.1 }
    }

    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite() && self.shift >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("invalid stream augmentation {self:?}")));
        }
        Ok(())
    }

    fn within(&self, other: &StreamAugment) -> bool {
        self.scale[0] >= other.scale[0]
            && self.scale[1] <= other.scale[1]
            && self.shift <= other.shift
            && self.noise_sigma <= other.noise_sigma
    }

    pub fn apply<R: Rng + ?Sized>(&self, volume: &VolumeGrid, rng: &mut R) -> Result<VolumeGrid> {
        let s = rng.random_range(self.scale[0]..=self.scale[1]);
        let t = rng.random_range(-self.shift..=self.shift);
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::value(e.to_string()))?;
            volume.map(|_, v| (s * f64::from(v) + t + noise.sample(rng)) as f32)
        } else {
            volume.map(|_, v| (s * f64::from(v) + t) as f32)
        }
    }
}

/// Weak and strong views; flips along `flip_axes` are drawn once per case
/// and shared by both views and the label so that they stay aligned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub weak: StreamAugment,
    pub strong: StreamAugment,
    pub flip_axes: Vec<Axis>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec { weak: StreamAugment::weak(), strong: StreamAugment::strong(), flip_axes: Vec::new() }
    }
}

impl AugmentationSpec {
    /// Both streams valid and the weak ranges a strict subset of the strong ones.
    pub fn validate(&self) -> Result<()> {
        self.weak.validate()?;
        self.strong.validate()?;
        if !self.weak.within(&self.strong) || self.weak == self.strong {
            return Err(Error::Config("weak augmentation ranges must be a strict subset of the strong ones".into()));
        }
        Ok(())
    }

    /// Returns `(weak, strong, label)` for one case.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        volume: &VolumeGrid,
        label: Option<&LabelGrid>,
        rng: &mut R,
    ) -> Result<(VolumeGrid, VolumeGrid, Option<LabelGrid>)> {
        let mut volume = volume.clone();
        let mut label = label.cloned();
        for &axis in &self.flip_axes {
            if rng.random_bool(0.5) {
                volume = volume.flipped(axis);
                label = label.map(|l| l.flipped(axis));
            }
        }
        let weak = self.weak.apply(&volume, rng)?;
        let strong = self.strong.apply(&volume, rng)?;
        Ok((weak, strong, label))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub schedule: ScheduleConfig,
    pub lambda_disp: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub axis: AxisPolicy,
    /// Slice-block and patch-layer thickness p.
    pub thickness: usize,
    /// In-plane patch grid n.
    pub grid: usize,
    pub top_k: usize,
    pub mode: Mode,
    pub teacher_noise_sigma: f64,
    pub teacher_noise_clamp: f64,
    pub augmentation: AugmentationSpec,
    pub supervised_loss: SupervisedLoss,
    /// Standard deviation of the initial student weights.
    pub init_scale: f64,
    pub seed: u64,
    /// Overrides the ramp-up schedule for α when set.
    pub fixed_alpha: Option<f64>,
}

impl TrainerConfig {
    /// Defaults for everything except the thickness p, which has none.
    pub fn new(thickness: usize) -> Self {
        TrainerConfig {
            schedule: ScheduleConfig::default(),
            lambda_disp: 0.25,
            momentum: 0.9,
            weight_decay: 1e-4,
            axis: AxisPolicy::Random,
            thickness,
            grid: 2,
            top_k: 2,
            mode: Mode::Full,
            teacher_noise_sigma: 0.1,
            teacher_noise_clamp: 0.2,
            augmentation: AugmentationSpec::default(),
            supervised_loss: SupervisedLoss::Dice,
            init_scale: 0.01,
            seed: 0,
            fixed_alpha: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.augmentation.validate()?;
        LossWeights::new(self.fixed_alpha.unwrap_or(0.0), self.lambda_disp)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.thickness == 0 || self.grid == 0 || self.top_k == 0 {
            return Err(Error::Config("p, n and K must all be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be nonnegative".into()));
        }
        if self.teacher_noise_sigma < 0.0 || self.teacher_noise_clamp < 0.0 {
            return Err(Error::Config("teacher noise σ and clamp must be nonnegative".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init scale must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Purpose {
    Init = 0,
    Axis = 1,
    Shuffle = 2,
    Augment = 3,
    TeacherNoise = 4,
    Sampling = 5,
}

fn stream_rng(seed: u64, purpose: Purpose, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng.set_word_pos(u128::from(iter) << 40);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    student: SegmentorParams,
    teacher: SegmentorParams,
    momentum: Vec<f64>,
    iter: u64,
    config: TrainerConfig,
}

impl TrainerState {
    /// Random student, teacher copied from it, zero momentum.
    pub fn new(config: TrainerConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let student =
            SegmentorParams::random(num_classes, config.init_scale, &mut stream_rng(config.seed, Purpose::Init, 0))?;
        Ok(Self::from_student(config, student))
    }

    pub fn from_student(config: TrainerConfig, student: SegmentorParams) -> Self {
        let momentum = vec![0.0; student.values().len()];
        TrainerState { teacher: student.clone(), student, momentum, iter: 0, config }
    }

    pub fn student(&self) -> &SegmentorParams {
        &self.student
    }

    pub fn teacher(&self) -> &SegmentorParams {
        &self.teacher
    }

    pub fn momentum_buffers(&self) -> &[f64] {
        &self.momentum
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    /// α at the current iteration.
    pub fn alpha(&self) -> f64 {
        self.config.fixed_alpha.unwrap_or_else(|| consistency_rampup(self.iter, &self.config.schedule))
    }

    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        sgd_step(
            self.student.values_mut(),
            &mut self.momentum,
            grad,
            lr,
            self.config.momentum,
            self.config.weight_decay,
        )
    }
}

/// `buf ← μ·buf + (g + λθ)`, `θ ← θ − lr·buf`.
pub fn sgd_step(
    params: &mut [f64],
    buffers: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != buffers.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} buffers",
            params.len(),
            grad.len(),
            buffers.len()
        )));
    }
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::value(format!("learning rate {lr} must be nonnegative")));
    }
    for ((theta, buf), &g) in params.iter_mut().zip(buffers.iter_mut()).zip(grad) {
        *buf = momentum * *buf + (g + weight_decay * *theta);
        *theta -= lr * *buf;
    }
    Ok(())
}

/// One draw of `N(0, σ²)` clamped to `[−clamp, clamp]`.
pub fn clamped_noise<R: Rng + ?Sized>(rng: &mut R, normal: &Normal<f64>, clamp: f64) -> f64 {
    normal.sample(rng).clamp(-clamp, clamp)
}

/// Teacher argmax labels and max-probability confidences on a noised input.
pub fn pseudo_label<R: Rng + ?Sized>(
    teacher: &SegmentorParams,
    volume: &VolumeGrid,
    rng: &mut R,
    sigma: f64,
    clamp: f64,
) -> Result<(LabelGrid, ConfidenceGrid)> {
    if !(sigma >= 0.0 && clamp >= 0.0) {
        return Err(Error::value("teacher noise σ and clamp must be nonnegative"));
    }
    let input = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::value(e.to_string()))?;
        volume.map(|_, v| (f64::from(v) + clamped_noise(rng, &normal, clamp)) as f32)?
    } else {
        volume.clone()
    };
    Ok(forward(teacher, &input).argmax())
}

/// Loss components of one iteration and the plan they were computed with.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iteration: u64,
    pub axis: Axis,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub loss_layer_labeled: f64,
    pub loss_layer_unlabeled: f64,
    pub loss_disp: f64,
    pub loss_total: f64,
    /// Number of exchanged patch locations.
    pub swaps: usize,
    pub shuffle_axis: Option<Axis>,
    pub displace_axis: Option<Axis>,
}

struct Views {
    weak: Vec<VolumeGrid>,
    strong: Vec<VolumeGrid>,
    labels: Vec<LabelGrid>,
}

fn build_views(state: &TrainerState, batch: &Batch) -> Result<Views> {
    let cfg = &state.config;
    let b = batch.half_size();
    let mut views =
        Views { weak: Vec::with_capacity(2 * b), strong: Vec::with_capacity(2 * b), labels: Vec::with_capacity(b) };
    let cases = batch.labeled().iter().map(|(v, l)| (v, Some(l))).chain(batch.unlabeled().iter().map(|v| (v, None)));
    if !cfg.mode.augments() {
        for (v, l) in cases {
            views.weak.push(v.clone());
            views.strong.push(v.clone());
            views.labels.extend(l.cloned());
        }
        return Ok(views);
    }
    let mut rng = stream_rng(cfg.seed, Purpose::Augment, state.iter);
    for (v, l) in cases {
        let (weak, strong, label) = cfg.augmentation.apply(v, l, &mut rng)?;
        views.weak.push(weak);
        views.strong.push(strong);
        views.labels.extend(label);
    }
    Ok(views)
}

fn as_grids(grads: Vec<Vec<f64>>, preds: &[ProbGrid], scale: f64) -> Result<Vec<Grid<f64>>> {
    grads
        .into_iter()
        .zip(preds)
        .map(|(mut g, p)| {
            if scale != 1.0 {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            Grid::from_vec(p.dims(), p.num_classes(), g)
        })
        .collect()
}

/// Runs one full iteration on `batch` and advances the state.
pub fn train_iteration(state: &mut TrainerState, batch: &Batch) -> Result<IterationReport> {
    let cfg = state.config.clone();
    let it = state.iter;
    let b = batch.half_size();
    let dims = batch.dims();
    if batch.num_classes() != state.student.num_classes() {
        return Err(Error::shape(format!(
            "batch has {} classes, model {}",
            batch.num_classes(),
            state.student.num_classes()
        )));
    }

    // (1) one axis for both steps
    let axis = match cfg.axis {
        AxisPolicy::Random => choose_axis(&mut stream_rng(cfg.seed, Purpose::Axis, it)),
        AxisPolicy::Fixed(a) => a,
    };
    let blocks = block_count(axis, dims.extent(axis), cfg.thickness)?;

    // (2) streams
    let views = build_views(state, batch)?;

    // (3) teacher outputs: unlabeled weak first, then labeled weak, then strong
    let mut noise_rng = stream_rng(cfg.seed, Purpose::TeacherNoise, it);
    let mut teach = |v: &VolumeGrid| {
        pseudo_label(&state.teacher, v, &mut noise_rng, cfg.teacher_noise_sigma, cfg.teacher_noise_clamp)
    };
    let unlabeled_weak: Vec<_> = views.weak[b..].iter().map(&mut teach).collect::<Result<_>>()?;
    let extra = if cfg.mode.displaces() {
        let labeled_weak: Vec<_> = views.weak[..b].iter().map(&mut teach).collect::<Result<_>>()?;
        let strong: Vec<_> = views.strong.iter().map(&mut teach).collect::<Result<_>>()?;
        Some((labeled_weak, strong))
    } else {
        None
    };

    // (4) layer losses through shuffle / recover
    let plan = if cfg.mode.shuffles() {
        ShufflePlan::sample(
            &mut stream_rng(cfg.seed, Purpose::Shuffle, it),
            axis,
            dims.extent(axis),
            cfg.thickness,
            2 * b,
        )?
    } else {
        ShufflePlan::new(axis, cfg.thickness, ShuffleMatrix::identity(2 * b, blocks)?)?
    };
    let shuffled = shuffle_batch(&views.strong, &plan)?;
    let preds: Vec<ProbGrid> = shuffled.iter().map(|v| forward(&state.student, v)).collect();
    let (rec_l, rec_u) = split_batch(recover_batch(&preds, &plan)?)?;
    let pseudo_u: Vec<LabelGrid> = unlabeled_weak.iter().map(|(l, _)| l.clone()).collect();
    let (loss_l, grad_l) = loss_with_grad(cfg.supervised_loss.kind(), &rec_l, &views.labels)?;
    let (loss_u, grad_u) = loss_with_grad(LossKind::Dice, &rec_u, &pseudo_u)?;

    let alpha = state.alpha();
    let weights = LossWeights::new(alpha, cfg.lambda_disp)?;
    let mut rec_grads = as_grids(grad_l, &rec_l, 1.0)?;
    rec_grads.extend(as_grids(grad_u, &rec_u, alpha)?);
    let shuffled_grads: Vec<Vec<f64>> = shuffle_batch(&rec_grads, &plan)?.into_iter().map(Grid::into_vec).collect();
    let mut grad = backprop(&state.student, &shuffled, &preds, &shuffled_grads)?;

    // (5) displacement loss
    let (mut loss_disp, mut swaps) = (0.0, 0);
    if let Some((labeled_weak, strong)) = extra {
        let k = batch.num_classes();
        let weak_out = labeled_weak.iter().chain(&unlabeled_weak);
        let mut volumes = Vec::with_capacity(4 * b);
        let mut labels = Vec::with_capacity(4 * b);
        let mut confidence = Vec::with_capacity(4 * b);
        let mut supervision = Vec::with_capacity(4 * b);
        let mut pseudo = Vec::with_capacity(4 * b);
        for (i, (w, s)) in weak_out.zip(&strong).enumerate() {
            let truth = match views.labels.get(i) {
                Some(l) => l.clone(),
                None => LabelGrid::zeros(dims, k)?,
            };
            let g = SupervisionGrid::uniform(dims, i < b);
            for (vol, (pl, conf)) in [(&views.weak[i], w), (&views.strong[i], s)] {
                volumes.push(vol.clone());
                labels.push(truth.clone());
                confidence.push(conf.clone());
                supervision.push(g.clone());
                pseudo.push(pl.clone());
            }
        }
        let stack = StreamStack::new(volumes, labels, confidence, supervision)?.with_composite_labels(&pseudo)?;
        let dec = patchify(&stack, axis, cfg.thickness, cfg.grid)?;
        let stats = compute_stats(&dec);
        let selection = topk_select(&confidence_gap(&stats), cfg.top_k)?;
        let displaced = displace(&dec, &stats, &selection)?;
        swaps = displaced.swaps.len();
        let preds: Vec<ProbGrid> = displaced.volumes.iter().map(|v| forward(&state.student, v)).collect();
        let (l, mut g) = loss_with_grad(LossKind::Hybrid, &preds, &displaced.labels)?;
        loss_disp = l;
        let beta = weights.beta();
        g.iter_mut().flatten().for_each(|x| *x *= beta);
        for (acc, d) in grad.iter_mut().zip(backprop(&state.student, &displaced.volumes, &preds, &g)?) {
            *acc += d;
        }
    }

    // (6) – (9)
    let loss_total = total_loss(loss_l, loss_u, loss_disp, weights);
    let lr = poly_lr(it, &cfg.schedule);
    state.sgd_step(&grad, lr)?;
    ema_update(state.teacher.values_mut(), state.student.values(), cfg.schedule.ema_decay)?;
    state.iter += 1;

    Ok(IterationReport {
        iteration: it,
        axis,
        alpha,
        beta: weights.beta(),
        lr,
        loss_layer_labeled: loss_l,
        loss_layer_unlabeled: loss_u,
        loss_disp,
        loss_total,
        swaps,
        shuffle_axis: cfg.mode.shuffles().then_some(plan.axis()),
        displace_axis: cfg.mode.displaces().then_some(axis),
    })
}

/// Labeled and unlabeled training pools plus a held-out evaluation set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub labeled: Vec<(VolumeGrid, LabelGrid)>,
    pub unlabeled: Vec<VolumeGrid>,
    pub eval: Vec<(VolumeGrid, LabelGrid)>,
}

impl Dataset {
    /// Draws the three pools from separate streams of the phantom seed.
    pub fn phantom(spec: &PhantomSpec, labeled: usize, unlabeled: usize, eval: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Dataset {
            labeled: generate_cases(spec, labeled, 0)?,
            unlabeled: generate_cases(spec, unlabeled, 1)?.into_iter().map(|(v, _)| v).collect(),
            eval: generate_cases(spec, eval, 2)?,
        })
    }

    /// Samples `half` labeled and `half` unlabeled cases without replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, half: usize, rng: &mut R) -> Result<Batch> {
        if half == 0 || half > self.labeled.len() || half > self.unlabeled.len() {
            return Err(Error::Config(format!(
                "batch half-size {half} needs 1..={} labeled and unlabeled cases",
                self.labeled.len().min(self.unlabeled.len())
            )));
        }
        let labeled =
            index::sample(rng, self.labeled.len(), half).into_iter().map(|i| self.labeled[i].clone()).collect();
        let unlabeled =
            index::sample(rng, self.unlabeled.len(), half).into_iter().map(|i| self.unlabeled[i].clone()).collect();
        Batch::new(labeled, unlabeled)
    }
}

/// Whole-volume predictions of `params` scored against each reference.
pub fn evaluate(
    params: &SegmentorParams,
    cases: &[(VolumeGrid, LabelGrid)],
    with_asd: bool,
) -> Result<Vec<MetricReport>> {
    cases.iter().map(|(v, l)| MetricReport::evaluate(&forward(params, v).argmax().0, l, with_asd)).collect()
}

/// Held-out Dice of the student after `iteration` completed updates.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub mean_dice: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub state: TrainerState,
    pub reports: Vec<IterationReport>,
    pub history: Vec<EvalRecord>,
}

impl TrainingRun {
    pub fn final_dice(&self) -> Option<f64> {
        self.history.last().map(|r| r.mean_dice)
    }
}

/// Trains for `iters` iterations on batches of `half` + `half` cases,
/// evaluating every `eval_interval` iterations and after the last one.
pub fn run_training(
    config: TrainerConfig,
    dataset: &Dataset,
    half: usize,
    iters: u64,
    eval_interval: u64,
) -> Result<TrainingRun> {
    if iters == 0 || eval_interval == 0 {
        return Err(Error::Config("iterations and evaluation interval must be at least 1".into()));
    }
    let first = dataset.labeled.first().ok_or_else(|| Error::Config("no labeled cases".into()))?;
    let mut state = TrainerState::new(config, first.1.num_classes())?;
    let mut reports = Vec::with_capacity(iters as usize);
    let mut history = Vec::new();
    for _ in 0..iters {
        let mut rng = stream_rng(state.config.seed, Purpose::Sampling, state.iter);
        let batch = dataset.sample_batch(half, &mut rng)?;
        reports.push(train_iteration(&mut state, &batch)?);
        let done = state.iter;
        if done % eval_interval == 0 || done == iters {
            let reports = evaluate(&state.student, &dataset.eval, false)?;
            history.push(EvalRecord { iteration: done, mean_dice: mean_dice_over(&reports).unwrap_or(0.0) });
        }
    }
    Ok(TrainingRun { state, reports, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use crate::losses::{cross_entropy_loss, soft_dice_loss, DICE_SMOOTHING};

    fn tiny_dataset() -> Dataset {
        Dataset::phantom(&PhantomSpec::desk(3), 2, 2, 2).unwrap()
    }

    fn config(mode: Mode) -> TrainerConfig {
        TrainerConfig { mode, seed: 5, init_scale: 0.1, ..TrainerConfig::new(2) }
    }

    #[test]
    fn mode_and_axis_policy_parse() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("mixup".parse::<Mode>().is_err());
        assert_eq!("random".parse::<AxisPolicy>().unwrap(), AxisPolicy::Random);
        assert_eq!("H".parse::<AxisPolicy>().unwrap(), AxisPolicy::Fixed(Axis::H));
    }

    #[test]
    fn default_augmentation_is_nested() {
        AugmentationSpec::default().validate().unwrap();
        let swapped =
            AugmentationSpec { weak: StreamAugment::strong(), strong: StreamAugment::weak(), flip_axes: vec![] };
        assert!(swapped.validate().is_err());
        let equal = AugmentationSpec { weak: StreamAugment::strong(), ..Default::default() };
        assert!(equal.validate().is_err());
    }

    #[test]
    fn flips_are_shared_by_views_and_label() {
        let d = Dims::new(2, 3, 4).unwrap();
        let v = VolumeGrid::new(d, (0..24).map(|i| i as f32).collect()).unwrap();
        let l = LabelGrid::new(d, 24, (0..24).collect()).unwrap();
        let identity = StreamAugment { scale: [1.0, 1.0], shift: 0.0, noise_sigma: 0.0 };
        let spec = AugmentationSpec { weak: identity, strong: identity, flip_axes: vec![Axis::D, Axis::W] };
        for seed in 0..8 {
            let (w, s, lab) = spec.apply(&v, Some(&l), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(w, s);
            let lab = lab.unwrap();
            for (&a, &b) in w.data().iter().zip(lab.data()) {
                assert_eq!(a, f32::from(b));
            }
        }
    }

    #[test]
    fn augmented_intensities_stay_in_range() {
        let d = Dims::cube(4).unwrap();
        let v = VolumeGrid::new(d, vec![1.0; 64]).unwrap();
        let spec = AugmentationSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (w, _, _) = spec.apply(&v, None, &mut rng).unwrap();
            let x = f64::from(w.data()[0]);
            assert!((0.9 - 1e-6..=1.1 + 1e-6).contains(&x));
            assert!(w.data().iter().all(|&y| y == w.data()[0]));
        }
    }

    #[test]
    fn sgd_reference_steps() {
        let (mut p, mut b) = (vec![0.0], vec![0.0]);
        sgd_step(&mut p, &mut b, &[0.0], 0.01, 0.9, 1e-4).unwrap();
        assert_eq!(p, [0.0]);

        let (mut p, mut b) = (vec![1.0], vec![0.0]);
        sgd_step(&mut p, &mut b, &[0.0], 0.01, 0.9, 1e-4).unwrap();
        assert!((p[0] - 0.999999).abs() < 1e-15);

        // Without weight decay the buffer after two steps is g + 0.9 g.
        let (mut p, mut b) = (vec![0.0], vec![0.0]);
        sgd_step(&mut p, &mut b, &[2.0], 0.1, 0.9, 0.0).unwrap();
        assert_eq!(b[0], 2.0);
        sgd_step(&mut p, &mut b, &[2.0], 0.1, 0.9, 0.0).unwrap();
        assert!((b[0] - 3.8).abs() < 1e-15);
        assert!((p[0] - -(0.2 + 0.38)).abs() < 1e-15);
        assert!(sgd_step(&mut p, &mut b, &[1.0, 2.0], 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn clamped_noise_never_exceeds_bound() {
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hit_bound = false;
        for _ in 0..1_000_000 {
            let x = clamped_noise(&mut rng, &normal, 0.2);
            assert!(x.abs() <= 0.2);
            hit_bound |= x.abs() == 0.2;
        }
        assert!(hit_bound);
    }

    #[test]
    fn pseudo_labels_of_a_uniform_teacher() {
        let d = Dims::cube(3).unwrap();
        let v = VolumeGrid::new(d, vec![0.5; 27]).unwrap();
        let teacher = SegmentorParams::zeros(4).unwrap();
        let (l, c) = pseudo_label(&teacher, &v, &mut ChaCha8Rng::seed_from_u64(0), 0.1, 0.2).unwrap();
        assert!(l.data().iter().all(|&x| x == 0));
        assert!(c.data().iter().all(|&x| (x - 0.25).abs() < 1e-7));
    }

    #[test]
    fn noiseless_pseudo_labels_are_reproducible() {
        let d = Dims::cube(3).unwrap();
        let v = VolumeGrid::new(d, (0..27).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let teacher = SegmentorParams::random(3, 2.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let a = pseudo_label(&teacher, &v, &mut ChaCha8Rng::seed_from_u64(0), 0.0, 0.2).unwrap();
        let b = pseudo_label(&teacher, &v, &mut ChaCha8Rng::seed_from_u64(1), 0.0, 0.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let data = tiny_dataset();
        let a = run_training(config(Mode::Full), &data, 1, 3, 1).unwrap();
        let b = run_training(config(Mode::Full), &data, 1, 3, 1).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.state, b.state);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn report_recombines_and_records_one_axis() {
        let data = tiny_dataset();
        let run = run_training(config(Mode::Full), &data, 2, 4, 2).unwrap();
        for r in &run.reports {
            let w = LossWeights::new(r.alpha, 0.25).unwrap();
            assert_eq!(r.loss_total, total_loss(r.loss_layer_labeled, r.loss_layer_unlabeled, r.loss_disp, w));
            assert_eq!(r.beta, r.alpha * 0.25);
            assert_eq!(r.shuffle_axis, Some(r.axis));
            assert_eq!(r.displace_axis, Some(r.axis));
        }
        let its: Vec<u64> = run.history.iter().map(|h| h.iteration).collect();
        assert_eq!(its, [2, 4]);
    }

    #[test]
    fn single_iteration_single_history_entry() {
        let run = run_training(config(Mode::Baseline), &tiny_dataset(), 1, 1, 1).unwrap();
        assert_eq!(run.state.iteration(), 1);
        assert_eq!(run.reports.len(), 1);
        assert_eq!(run.history.len(), 1);
        assert_eq!(run.reports[0].shuffle_axis, None);
        assert_eq!(run.reports[0].displace_axis, None);
        assert_eq!(run.reports[0].loss_disp, 0.0);
    }

    #[test]
    fn teacher_moves_only_by_ema() {
        let data = tiny_dataset();
        let mut state = TrainerState::new(config(Mode::Full), 4).unwrap();
        let batch = data.sample_batch(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for _ in 0..3 {
            let before = state.teacher().values().to_vec();
            train_iteration(&mut state, &batch).unwrap();
            let mut expect = before;
            ema_update(&mut expect, state.student().values(), 0.99).unwrap();
            assert_eq!(state.teacher().values(), &expect[..]);
        }
    }

    #[test]
    fn zero_alpha_reduces_to_supervised_dice() {
        let data = tiny_dataset();
        let cfg = TrainerConfig { fixed_alpha: Some(0.0), ..config(Mode::Full) };
        let mut state = TrainerState::new(cfg.clone(), 4).unwrap();
        let batch = data.sample_batch(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let start = state.student().clone();
        let report = train_iteration(&mut state, &batch).unwrap();
        assert_eq!(report.beta, 0.0);

        // Standalone supervised step on the same strong labeled views.
        let views = build_views(&TrainerState::from_student(cfg.clone(), start.clone()), &batch).unwrap();
        let (loss, grad) = crate::model::backward(&start, &views.strong[..2], &views.labels, LossKind::Dice).unwrap();
        assert!((loss - report.loss_layer_labeled).abs() < 1e-12);
        let mut expect = TrainerState::from_student(cfg, start);
        expect.sgd_step(&grad, report.lr).unwrap();
        for (a, b) in state.student().values().iter().zip(expect.student().values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shuffle_is_transparent_to_a_per_voxel_model() {
        let data = tiny_dataset();
        let batch = data.sample_batch(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut a = TrainerState::new(config(Mode::Aug), 4).unwrap();
        let mut b = TrainerState::new(config(Mode::Sbs), 4).unwrap();
        let ra = train_iteration(&mut a, &batch).unwrap();
        let rb = train_iteration(&mut b, &batch).unwrap();
        assert!((ra.loss_total - rb.loss_total).abs() < 1e-12);
        for (x, y) in a.student().values().iter().zip(b.student().values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_losses_match_direct_evaluation() {
        let data = tiny_dataset();
        let batch = data.sample_batch(1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let cfg = TrainerConfig { supervised_loss: SupervisedLoss::CeDice, ..config(Mode::Baseline) };
        let mut state = TrainerState::new(cfg, 4).unwrap();
        let student = state.student().clone();
        let r = train_iteration(&mut state, &batch).unwrap();
        let p = vec![forward(&student, &batch.labeled()[0].0)];
        let y = vec![batch.labeled()[0].1.clone()];
        let expect = 0.5 * cross_entropy_loss(&p, &y).unwrap() + 0.5 * soft_dice_loss(&p, &y, DICE_SMOOTHING).unwrap();
        assert!((r.loss_layer_labeled - expect).abs() < 1e-12);
    }

    #[test]
    fn bad_thickness_is_a_shape_error() {
        let data = tiny_dataset();
        let err =
            run_training(TrainerConfig { mode: Mode::Full, ..TrainerConfig::new(5) }, &data, 1, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        assert!(err.to_string().contains("p=5") && err.to_string().contains("L_a=24"), "{err}");
    }
}
