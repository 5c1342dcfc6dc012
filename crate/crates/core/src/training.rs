//! Training loops on the ring mixture: OT-GAN (unconditional and
//! conditional), a standard GAN baseline, and two ablations.
//!
//! Iterations are numbered from 1. Iteration `t` updates the critic when
//! `t mod (n_gen + 1) = 0` and the generator otherwise, so each iteration
//! moves exactly one player. Once `critic_freeze_iteration` has passed, the
//! critic slot becomes a generator update as well.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{mode_coverage, one_hot, sample_mixture, write_samples_csv, CoverageReport, RingMixture};
use crate::distance::{
    embed_quad, evaluate_terms, BatchQuad, LossBreakdown, LossForm, Matcher, RandomMatcher, SinkhornMatcher,
};
use crate::error::{Error, Result};
use crate::neural::{
    adam_step, init_mlp, loss_gradients, AdamConfig, AdamState, Direction, Gradients, InitScheme, LossInputs, Mlp,
    OutputHead,
};
use crate::numerics::{Matrix, Rng};
use crate::transport::{CostSpec, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Otgan,
    OtganConditional,
    BaselineGan,
    AblationRandomMatch,
    AblationFixedCost,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Otgan => "otgan",
            Mode::OtganConditional => "otgan-conditional",
            Mode::BaselineGan => "baseline-gan",
            Mode::AblationRandomMatch => "ablation-random-match",
            Mode::AblationFixedCost => "ablation-fixed-cost",
        }
    }

    /// The cost actually used, whatever the configured one.
    fn effective_cost(self, configured: CostSpec) -> CostSpec {
        match self {
            Mode::AblationFixedCost => CostSpec::RawCosine,
            _ => configured,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Mode::Otgan,
            Mode::OtganConditional,
            Mode::BaselineGan,
            Mode::AblationRandomMatch,
            Mode::AblationFixedCost,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub iterations: u64,
    /// Generator updates per critic update.
    pub n_gen: u64,
    pub adam: AdamConfig,
    pub sinkhorn: SinkhornConfig,
    pub cost: CostSpec,
    /// Last iteration at which the critic may update.
    pub critic_freeze_iteration: Option<u64>,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub coverage_threshold: f64,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Embedding width of the critic (the discriminator of `baseline-gan` has one logit).
    pub critic_dim: usize,
    /// Standard deviation of the critic's first-layer biases at initialization.
    /// Zero biases make the critic positively homogeneous, so a cosine cost on
    /// its output cannot see the radius of a sample.
    pub critic_input_bias_std: f64,
    pub mixture: RingMixture,
    /// Write measured seconds into `metrics.csv`; when off the column is 0 so
    /// reruns are byte-identical. Timings always go to `timing.csv`.
    pub record_wall_time: bool,
    /// Sample dumps every this many iterations (besides freeze and end); 0 disables.
    pub dump_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Otgan,
            batch_size: 50,
            iterations: 8000,
            n_gen: 5,
            adam: AdamConfig { learning_rate: 1.5e-4, ..AdamConfig::default() },
            sinkhorn: SinkhornConfig::with_epsilon(0.01),
            cost: CostSpec::LearnedCosine,
            critic_freeze_iteration: Some(3000),
            seed: 0,
            eval_every: 100,
            eval_samples: 2000,
            coverage_threshold: 3.0,
            latent_dim: 2,
            generator_hidden: vec![128, 128],
            critic_hidden: vec![128, 128],
            critic_dim: 32,
            critic_input_bias_std: 2.0,
            mixture: RingMixture::default(),
            record_wall_time: false,
            dump_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_gen < 1 {
            return bad("n_gen must be ≥ 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be ≥ 2, got {}", self.batch_size));
        }
        if let Some(f) = self.critic_freeze_iteration {
            if f > self.iterations {
                return bad(format!("critic_freeze_iteration {f} exceeds iterations {}", self.iterations));
            }
        }
        if self.eval_every < 1 {
            return bad("eval_every must be ≥ 1".into());
        }
        if self.eval_samples < 1 {
            return bad("eval_samples must be ≥ 1".into());
        }
        if self.latent_dim < 1 || self.critic_dim < 1 {
            return bad("latent_dim and critic_dim must be ≥ 1".into());
        }
        if !(self.critic_input_bias_std >= 0.0 && self.critic_input_bias_std.is_finite()) {
            return bad(format!("critic_input_bias_std must be finite and ≥ 0, got {}", self.critic_input_bias_std));
        }
        if self.generator_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden layer widths must be ≥ 1".into());
        }
        if !(self.adam.learning_rate >= 0.0 && self.adam.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and ≥ 0, got {}", self.adam.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        self.sinkhorn.validate()?;
        self.mixture.validate()
    }

    fn conditioning_width(&self) -> usize {
        match self.mode {
            Mode::OtganConditional => self.mixture.n_modes,
            _ => 0,
        }
    }

    pub fn generator_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.latent_dim + self.conditioning_width()];
        s.extend(&self.generator_hidden);
        s.push(2);
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![2 + self.conditioning_width()];
        s.extend(&self.critic_hidden);
        s.push(match self.mode {
            Mode::BaselineGan => 1,
            _ => self.critic_dim,
        });
        s
    }

    fn critic_head(&self) -> OutputHead {
        match self.mode {
            Mode::BaselineGan => OutputHead::Identity,
            _ => OutputHead::L2Normalize,
        }
    }
}

/// Which player iteration `t` updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Player {
    Critic,
    Generator,
}

/// The update schedule for iteration `t` (1-based).
pub fn scheduled_player(t: u64, n_gen: u64, freeze: Option<u64>) -> Player {
    let frozen = freeze.is_some_and(|f| t > f);
    if t % (n_gen + 1) == 0 && !frozen {
        Player::Critic
    } else {
        Player::Generator
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: u64,
    pub loss: f64,
    pub w_xy: f64,
    pub w_xy2: f64,
    pub w_x2y: f64,
    pub w_x2y2: f64,
    pub w_xx2: f64,
    pub w_yy2: f64,
    pub covered_modes: usize,
    pub hq_fraction: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "iteration,loss,w_xy,w_xy2,w_x2y,w_x2y2,w_xx2,w_yy2,covered_modes,hq_fraction,seconds";

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.loss,
            self.w_xy,
            self.w_xy2,
            self.w_x2y,
            self.w_x2y2,
            self.w_xx2,
            self.w_yy2,
            self.covered_modes,
            self.hq_fraction,
            self.seconds
        )
    }
}

pub fn write_metrics_csv(w: &mut impl Write, records: &[MetricRecord]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Loss readout of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum StepLoss {
    Transport(LossBreakdown),
    /// Discriminator objective (maximized) and non-saturating generator loss.
    Gan { discriminator: f64, generator: f64 },
}

impl StepLoss {
    fn fill(&self, r: &mut MetricRecord) {
        match self {
            StepLoss::Transport(b) => {
                r.loss = b.total;
                r.w_xy = b.w_xy;
                r.w_xy2 = b.w_xy2;
                r.w_x2y = b.w_x2y;
                r.w_x2y2 = b.w_x2y2;
                r.w_xx2 = b.w_xx2;
                r.w_yy2 = b.w_yy2;
            }
            StepLoss::Gan { generator, .. } => r.loss = *generator,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub iteration: u64,
    /// Players whose parameters moved this iteration.
    pub updated: Vec<Player>,
    pub loss: StepLoss,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: Mlp,
    pub generator_adam: AdamState,
    /// Critic for the transport modes, discriminator for `baseline-gan`.
    pub critic: Mlp,
    pub critic_adam: AdamState,
    /// Last completed iteration.
    pub iteration: u64,
    pub rng: Rng,
    pub history: Vec<MetricRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let generator = init_mlp(&mut rng, &cfg.generator_sizes(), InitScheme::HeNormal, OutputHead::Identity)?;
        let mut critic = init_mlp(&mut rng, &cfg.critic_sizes(), InitScheme::HeNormal, cfg.critic_head())?;
        if cfg.critic_input_bias_std > 0.0 {
            for b in critic.layers_mut()[0].bias.iter_mut() {
                *b = cfg.critic_input_bias_std * rng.normal();
            }
        }
        Ok(Self {
            generator_adam: AdamState::for_net(cfg.adam, &generator),
            critic_adam: AdamState::for_net(cfg.adam, &critic),
            generator,
            critic,
            iteration: 0,
            rng,
            history: Vec::new(),
        })
    }
}

fn latents(rng: &mut Rng, cfg: &TrainConfig, labels: Option<&[usize]>) -> Result<Matrix> {
    let z = rng.uniform(cfg.batch_size, cfg.latent_dim, -1.0, 1.0)?;
    match labels {
        Some(l) => z.hconcat(&one_hot(l, cfg.mixture.n_modes)?),
        None => Ok(z),
    }
}

/// One iteration of OT-GAN or one of its ablations.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig) -> Result<StepOutcome> {
    if !matches!(cfg.mode, Mode::Otgan | Mode::AblationRandomMatch | Mode::AblationFixedCost) {
        return Err(Error::InvalidArgument(format!("train_step cannot run mode {}", cfg.mode.name())));
    }
    let t = state.iteration + 1;
    let (x, _) = sample_mixture(&cfg.mixture, &mut state.rng, cfg.batch_size)?;
    let (x2, _) = sample_mixture(&cfg.mixture, &mut state.rng, cfg.batch_size)?;
    let z = latents(&mut state.rng, cfg, None)?;
    let z2 = latents(&mut state.rng, cfg, None)?;
    let inputs = LossInputs { x: &x, x2: &x2, z: &z, z2: &z2, side: None };
    let cost = cfg.mode.effective_cost(cfg.cost);
    let critic = cost.uses_critic().then_some(&state.critic);

    let out = match cfg.mode {
        Mode::AblationRandomMatch => {
            let mut m = RandomMatcher(&mut state.rng);
            loss_gradients(inputs, &state.generator, critic, cost, LossForm::SixTerm, &mut m)?
        }
        _ => {
            let mut m = SinkhornMatcher(cfg.sinkhorn);
            loss_gradients(inputs, &state.generator, critic, cost, LossForm::SixTerm, &mut m)?
        }
    };
    let updated = apply_transport_update(state, cfg, t, &out.generator, out.critic.as_ref())?;
    state.iteration = t;
    Ok(StepOutcome { iteration: t, updated, loss: StepLoss::Transport(out.loss) })
}

fn apply_transport_update(
    state: &mut TrainState,
    cfg: &TrainConfig,
    t: u64,
    gen_grads: &Gradients,
    critic_grads: Option<&Gradients>,
) -> Result<Vec<Player>> {
    match (scheduled_player(t, cfg.n_gen, cfg.critic_freeze_iteration), critic_grads) {
        (Player::Critic, Some(g)) => {
            adam_step(&mut state.critic, g, &mut state.critic_adam, Direction::Maximize)?;
            Ok(vec![Player::Critic])
        }
        // the fixed-cost ablation has nothing to train in the critic slot
        (Player::Critic, None) => Ok(Vec::new()),
        (Player::Generator, _) => {
            adam_step(&mut state.generator, gen_grads, &mut state.generator_adam, Direction::Minimize)?;
            Ok(vec![Player::Generator])
        }
    }
}

/// Side-information columns for the four batches `X, X′, Y, Y′`: `Y` shares
/// the labels `S` of `X`, `Y′` those of `X′`.
fn side_columns(s: &[usize], s2: &[usize], n_classes: usize) -> Result<[Matrix; 4]> {
    let a = one_hot(s, n_classes)?;
    let b = one_hot(s2, n_classes)?;
    Ok([a.clone(), b.clone(), a, b])
}

/// One iteration of conditional OT-GAN with the four-term loss.
pub fn train_step_conditional(state: &mut TrainState, cfg: &TrainConfig) -> Result<StepOutcome> {
    if cfg.mode != Mode::OtganConditional {
        return Err(Error::InvalidArgument(format!(
            "train_step_conditional cannot run mode {}",
            cfg.mode.name()
        )));
    }
    let t = state.iteration + 1;
    let (x, s) = sample_mixture(&cfg.mixture, &mut state.rng, cfg.batch_size)?;
    let (x2, s2) = sample_mixture(&cfg.mixture, &mut state.rng, cfg.batch_size)?;
    let z = latents(&mut state.rng, cfg, Some(&s))?;
    let z2 = latents(&mut state.rng, cfg, Some(&s2))?;
    let side = side_columns(&s, &s2, cfg.mixture.n_modes)?;
    let inputs = LossInputs {
        x: &x,
        x2: &x2,
        z: &z,
        z2: &z2,
        side: Some([&side[0], &side[1], &side[2], &side[3]]),
    };
    let critic = cfg.cost.uses_critic().then_some(&state.critic);
    let out = loss_gradients(
        inputs,
        &state.generator,
        critic,
        cfg.cost,
        LossForm::FourTerm,
        &mut SinkhornMatcher(cfg.sinkhorn),
    )?;
    let updated = apply_transport_update(state, cfg, t, &out.generator, out.critic.as_ref())?;
    state.iteration = t;
    Ok(StepOutcome { iteration: t, updated, loss: StepLoss::Transport(out.loss) })
}

/// Four-term conditional loss on given batches and labels, without gradients.
pub fn conditional_loss(
    quad: &BatchQuad,
    s: &[usize],
    s2: &[usize],
    n_classes: usize,
    cost: CostSpec,
    cfg: &SinkhornConfig,
    critic: Option<&Mlp>,
) -> Result<LossBreakdown> {
    let side = side_columns(s, s2, n_classes)?;
    let b = quad.as_array();
    let augmented = BatchQuad::new(
        b[0].hconcat(&side[0])?,
        b[1].hconcat(&side[1])?,
        b[2].hconcat(&side[2])?,
        b[3].hconcat(&side[3])?,
    )?;
    let feats = embed_quad(&augmented, cost, critic)?;
    let mut matcher = SinkhornMatcher(*cfg);
    let (loss, _) = evaluate_terms(
        [&feats[0], &feats[1], &feats[2], &feats[3]],
        LossForm::FourTerm,
        cost,
        &mut matcher as &mut dyn Matcher,
    )?;
    Ok(loss)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

const LOG_FLOOR: f64 = 1e-7;

fn guarded_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Discriminator objective `mean log d(x) + mean log(1 − d(y))` and its
/// gradient with respect to the two logit columns.
pub fn discriminator_objective(real_logits: &Matrix, fake_logits: &Matrix) -> (f64, Matrix, Matrix) {
    let kr = real_logits.rows() as f64;
    let kf = fake_logits.rows() as f64;
    let mut value = 0.0;
    for &l in real_logits.data() {
        value += guarded_ln(sigmoid(l)) / kr;
    }
    for &l in fake_logits.data() {
        value += guarded_ln(1.0 - sigmoid(l)) / kf;
    }
    let gr = real_logits.map(|l| (1.0 - sigmoid(l)) / kr);
    let gf = fake_logits.map(|l| -sigmoid(l) / kf);
    (value, gr, gf)
}

/// Non-saturating generator loss `−mean log d(y)` and its logit gradient.
pub fn generator_gan_loss(fake_logits: &Matrix) -> (f64, Matrix) {
    let k = fake_logits.rows() as f64;
    let value = -fake_logits.data().iter().map(|&l| guarded_ln(sigmoid(l))).sum::<f64>() / k;
    let grad = fake_logits.map(|l| -(1.0 - sigmoid(l)) / k);
    (value, grad)
}

/// Generator gradient of the non-saturating loss through a fixed discriminator.
pub fn baseline_generator_gradients(generator: &Mlp, discriminator: &Mlp, z: &Matrix) -> Result<(f64, Gradients)> {
    let (y, gen_tape) = generator.forward(z)?;
    let (logits, d_tape) = discriminator.forward(&y)?;
    let (value, dl) = generator_gan_loss(&logits);
    let (_, dy) = discriminator.backward(&d_tape, &dl)?;
    let (grads, _) = generator.backward(&gen_tape, &dy)?;
    Ok((value, grads))
}

/// One iteration of the baseline GAN: a discriminator ascent step (until the
/// freeze) followed by a generator step on fresh latents.
pub fn train_baseline_gan(state: &mut TrainState, cfg: &TrainConfig) -> Result<StepOutcome> {
    if cfg.mode != Mode::BaselineGan {
        return Err(Error::InvalidArgument(format!("train_baseline_gan cannot run mode {}", cfg.mode.name())));
    }
    let t = state.iteration + 1;
    let (x, _) = sample_mixture(&cfg.mixture, &mut state.rng, cfg.batch_size)?;
    let z = latents(&mut state.rng, cfg, None)?;
    let z2 = latents(&mut state.rng, cfg, None)?;
    let mut updated = Vec::with_capacity(2);

    let y = state.generator.predict(&z)?;
    let (real, real_tape) = state.critic.forward(&x)?;
    let (fake, fake_tape) = state.critic.forward(&y)?;
    let (d_value, gr, gf) = discriminator_objective(&real, &fake);
    if !cfg.critic_freeze_iteration.is_some_and(|f| t > f) {
        let (mut g, _) = state.critic.backward(&real_tape, &gr)?;
        let (g2, _) = state.critic.backward(&fake_tape, &gf)?;
        g.add_assign(&g2)?;
        adam_step(&mut state.critic, &g, &mut state.critic_adam, Direction::Maximize)?;
        updated.push(Player::Critic);
    }

    let (g_value, grads) = baseline_generator_gradients(&state.generator, &state.critic, &z2)?;
    adam_step(&mut state.generator, &grads, &mut state.generator_adam, Direction::Minimize)?;
    updated.push(Player::Generator);
    state.iteration = t;
    Ok(StepOutcome {
        iteration: t,
        updated,
        loss: StepLoss::Gan { discriminator: d_value, generator: g_value },
    })
}

/// Runs whichever step function `cfg.mode` calls for.
pub fn step(state: &mut TrainState, cfg: &TrainConfig) -> Result<StepOutcome> {
    match cfg.mode {
        Mode::Otgan | Mode::AblationRandomMatch | Mode::AblationFixedCost => train_step(state, cfg),
        Mode::OtganConditional => train_step_conditional(state, cfg),
        Mode::BaselineGan => train_baseline_gan(state, cfg),
    }
}

/// Stream for evaluation draws at `iteration`, independent of the training stream.
fn eval_rng(seed: u64, iteration: u64) -> Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    h = (h ^ iteration).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 31;
    Rng::new(h)
}

/// Generator samples used for evaluation at `iteration`, with their labels
/// in the conditional mode.
pub fn eval_samples(state: &TrainState, cfg: &TrainConfig, iteration: u64) -> Result<(Matrix, Option<Vec<usize>>)> {
    let mut rng = eval_rng(cfg.seed, iteration);
    let n = cfg.eval_samples;
    let z = rng.uniform(n, cfg.latent_dim, -1.0, 1.0)?;
    match cfg.mode {
        Mode::OtganConditional => {
            let labels: Vec<usize> = (0..n).map(|_| rng.below(cfg.mixture.n_modes)).collect();
            let input = z.hconcat(&one_hot(&labels, cfg.mixture.n_modes)?)?;
            Ok((state.generator.predict(&input)?, Some(labels)))
        }
        _ => Ok((state.generator.predict(&z)?, None)),
    }
}

pub fn evaluate(state: &TrainState, cfg: &TrainConfig, iteration: u64) -> Result<CoverageReport> {
    let (samples, _) = eval_samples(state, cfg, iteration)?;
    mode_coverage(&samples, &cfg.mixture, cfg.coverage_threshold)
}

/// Fraction of high-quality conditional samples that land on the mode they
/// were conditioned on.
pub fn conditional_accuracy(state: &TrainState, cfg: &TrainConfig, iteration: u64) -> Result<f64> {
    let (samples, labels) = eval_samples(state, cfg, iteration)?;
    let labels = labels.ok_or_else(|| Error::InvalidArgument("conditional accuracy needs the conditional mode".into()))?;
    let threshold = cfg.coverage_threshold * cfg.mixture.sigma;
    let (mut hq, mut hit) = (0usize, 0usize);
    for (row, &l) in samples.row_iter().zip(&labels) {
        let (mode, d) = cfg.mixture.nearest_mode([row[0], row[1]]);
        if d <= threshold {
            hq += 1;
            hit += usize::from(mode == l);
        }
    }
    Ok(if hq == 0 { 0.0 } else { hit as f64 / hq as f64 })
}

/// Loss readout at iteration 0, on batches from the evaluation stream.
fn initial_loss(state: &TrainState, cfg: &TrainConfig) -> Result<StepLoss> {
    let mut probe = state.clone();
    probe.rng = eval_rng(cfg.seed, u64::MAX);
    let frozen = TrainConfig {
        adam: AdamConfig { learning_rate: 0.0, ..cfg.adam },
        ..cfg.clone()
    };
    Ok(step(&mut probe, &frozen)?.loss)
}

/// Drives a [`TrainState`] and records metrics at evaluation points.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: TrainState,
    started: Instant,
    timings: Vec<(u64, f64)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let state = TrainState::new(&cfg)?;
        Ok(Self::resume(cfg, state))
    }

    pub fn resume(cfg: TrainConfig, state: TrainState) -> Self {
        Self { cfg, state, started: Instant::now(), timings: Vec::new() }
    }

    /// Wall-clock seconds per recorded iteration since this trainer was built.
    pub fn timings(&self) -> &[(u64, f64)] {
        &self.timings
    }

    fn record(&mut self, iteration: u64, loss: &StepLoss) -> Result<MetricRecord> {
        let cov = evaluate(&self.state, &self.cfg, iteration)?;
        let elapsed = self.started.elapsed().as_secs_f64();
        self.timings.push((iteration, elapsed));
        let mut r = MetricRecord {
            iteration,
            loss: 0.0,
            w_xy: 0.0,
            w_xy2: 0.0,
            w_x2y: 0.0,
            w_x2y2: 0.0,
            w_xx2: 0.0,
            w_yy2: 0.0,
            covered_modes: cov.covered_modes,
            hq_fraction: cov.high_quality_fraction,
            seconds: if self.cfg.record_wall_time { elapsed } else { 0.0 },
        };
        loss.fill(&mut r);
        self.state.history.push(r.clone());
        Ok(r)
    }

    /// Records the iteration-0 metrics if nothing has run yet.
    pub fn record_initial(&mut self) -> Result<()> {
        if self.state.iteration == 0 && self.state.history.is_empty() {
            let loss = initial_loss(&self.state, &self.cfg)?;
            self.record(0, &loss)?;
        }
        Ok(())
    }

    /// Runs iterations up to and including `until`, calling `on_eval` after
    /// each recorded evaluation.
    pub fn run_until(&mut self, until: u64, mut on_eval: impl FnMut(&Self, &MetricRecord) -> Result<()>) -> Result<()> {
        self.record_initial()?;
        let until = until.min(self.cfg.iterations);
        while self.state.iteration < until {
            let out = step(&mut self.state, &self.cfg)?;
            if let StepLoss::Transport(b) = &out.loss {
                if !b.unconverged.is_empty() {
                    log::debug!("iteration {}: unconverged terms {:?}", out.iteration, b.unconverged);
                }
            }
            let t = out.iteration;
            if t % self.cfg.eval_every == 0 || t == self.cfg.iterations {
                let r = self.record(t, &out.loss)?;
                on_eval(self, &r)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.iterations, |_, _| Ok(()))
    }
}

/// Coverage readout of one training arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub mode: Mode,
    pub covered_at_freeze: Option<usize>,
    pub covered_at_end: usize,
    /// Smallest coverage over evaluations after the freeze.
    pub min_covered_after_freeze: Option<usize>,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub seconds: f64,
    pub history: Vec<MetricRecord>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|()| w.flush()).map_err(|e| io_err(path, e))
}

/// Trains one arm to completion, writing metrics, sample dumps and a final
/// checkpoint under `out_dir` when given.
pub fn run_arm(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<ArmReport> {
    let started = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    let freeze = cfg.critic_freeze_iteration;
    let dump_due = |t: u64| {
        t == 0 || Some(t) == freeze || t == cfg.iterations || (cfg.dump_every > 0 && t % cfg.dump_every == 0)
    };
    let dump = |trainer: &Trainer, t: u64| -> Result<()> {
        let Some(dir) = out_dir else { return Ok(()) };
        if !dump_due(t) {
            return Ok(());
        }
        let (samples, labels) = eval_samples(&trainer.state, &trainer.cfg, t)?;
        write_file(&dir.join(format!("samples_{t}.csv")), |w| {
            write_samples_csv(w, &samples, labels.as_deref())
        })
    };
    trainer.record_initial()?;
    dump(&trainer, 0)?;
    trainer.run_until(cfg.iterations, |tr, r| dump(tr, r.iteration))?;

    let history = trainer.state.history.clone();
    let at = |t: u64| history.iter().find(|r| r.iteration == t).map(|r| r.covered_modes);
    let covered_at_end = history.last().map_or(0, |r| r.covered_modes);
    let min_after = freeze.and_then(|f| history.iter().filter(|r| r.iteration > f).map(|r| r.covered_modes).min());

    let (mut metrics_path, mut checkpoint_path) = (None, None);
    if let Some(dir) = out_dir {
        let p = dir.join("metrics.csv");
        write_file(&p, |w| write_metrics_csv(w, &history))?;
        metrics_path = Some(p);
        let timing = dir.join("timing.csv");
        write_file(&timing, |w| {
            writeln!(w, "iteration,seconds")?;
            for (t, s) in trainer.timings() {
                writeln!(w, "{t},{s}")?;
            }
            Ok(())
        })?;
        let p = dir.join("checkpoint.json");
        crate::checkpoint::Checkpoint::capture(&trainer.state).save(&p)?;
        checkpoint_path = Some(p);
    }
    Ok(ArmReport {
        mode: cfg.mode,
        covered_at_freeze: freeze.and_then(at),
        covered_at_end,
        min_covered_after_freeze: min_after,
        metrics_path,
        checkpoint_path,
        seconds: started.elapsed().as_secs_f64(),
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub arms: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn arm(&self, mode: Mode) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.mode == mode)
    }
}

fn finish_report(config: TrainConfig, arms: Vec<ArmReport>, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let report = ExperimentReport { config, arms };
    if let Some(dir) = out_dir {
        let p = dir.join("report.json");
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&p, json).map_err(|e| io_err(&p, e))?;
    }
    Ok(report)
}

/// Trains an OT-GAN arm and a baseline GAN arm with the same seed and
/// freeze schedule, each in its own subdirectory of `out_dir`.
pub fn run_consistency_experiment(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let mut arms = Vec::with_capacity(2);
    for mode in [Mode::Otgan, Mode::BaselineGan] {
        let arm_cfg = TrainConfig { mode, ..cfg.clone() };
        let dir = out_dir.map(|d| d.join(mode.name()));
        arms.push(run_arm(&arm_cfg, dir.as_deref())?);
    }
    finish_report(cfg.clone(), arms, out_dir)
}

/// Trains the configured mode alone and writes `report.json` next to its outputs.
pub fn run_single(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let arm = run_arm(cfg, out_dir)?;
    finish_report(cfg.clone(), vec![arm], out_dir)
}


#[cfg(test)]
mod schedule_props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn critic_count_follows_the_rule(n in 0u64..3000, g in 1u64..12, freeze in proptest::option::of(0u64..3000)) {
            let critic = (1..=n).filter(|&t| scheduled_player(t, g, freeze) == Player::Critic).count() as u64;
            let last = freeze.map_or(n, |f| f.min(n));
            prop_assert_eq!(critic, last / (g + 1));
            let after = (1..=n).filter(|&t| freeze.is_some_and(|f| t > f))
                .all(|t| scheduled_player(t, g, freeze) == Player::Generator);
            prop_assert!(after);
        }
    }
}
