//! Finite-difference validation of the loss gradients.
//!
//! The analytic gradients hold every transport plan fixed, which makes them
//! the exact derivative of the entropic transport value
//! `min_M ⟨M, C⟩ − ε·H(M)` summed over the loss terms. The oracle below
//! re-solves every plan at each perturbed parameter vector and evaluates
//! that value, so plan sensitivity is fully included on the oracle side.
//!
//! Central differences are only meaningful where the networks are smooth.
//! The step is shrunk whenever a perturbation flips a ReLU, and the
//! coordinate is skipped if no step down to `min_step` avoids a kink.

use serde::{Deserialize, Serialize};

use crate::data::{sample_mixture, RingMixture};
use crate::distance::{evaluate_terms, BatchQuad, LossForm, SinkhornMatcher, TermOutcome};
use crate::error::{Error, Result};
use crate::neural::{init_mlp, loss_gradients, Gradients, InitScheme, LossInputs, Mlp, OutputHead};
use crate::numerics::{Matrix, Rng};
use crate::transport::{CostSpec, SinkhornConfig, SinkhornDomain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub batch_size: usize,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_dim: usize,
    pub epsilon: f64,
    /// Iteration budget for each perturbed re-solve.
    pub max_iters: usize,
    /// Iteration budget for the plans the analytic gradient is built from.
    pub analytic_max_iters: usize,
    pub marginal_tol: f64,
    pub step: f64,
    pub min_step: f64,
    pub tolerance: f64,
    /// Errors are taken relative to `max(|analytic|, |numeric|, floor · max|analytic|)`.
    pub relative_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            latent_dim: 2,
            generator_hidden: vec![8, 8],
            critic_hidden: vec![16, 16],
            critic_dim: 8,
            epsilon: 0.01,
            max_iters: 20_000,
            analytic_max_iters: 2_000_000,
            marginal_tol: 1e-12,
            step: 1e-5,
            min_step: 1e-9,
            tolerance: 1e-3,
            relative_floor: 1e-3,
        }
    }
}

impl GradCheckConfig {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            marginal_tol: self.marginal_tol,
            domain: SinkhornDomain::Stabilized,
        }
    }

    fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component: String,
    pub params: usize,
    pub checked: usize,
    /// Coordinates where every step down to `min_step` crossed a ReLU kink.
    pub skipped: usize,
    pub worst: Option<Mismatch>,
    /// Coordinates over tolerance.
    pub failures: Vec<Mismatch>,
}

impl ComponentReport {
    pub fn worst_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |m| m.relative_error)
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub components: Vec<ComponentReport>,
    /// Terms whose plan missed `marginal_tol` at the unperturbed point.
    pub unconverged: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(ComponentReport::passed)
    }

    pub fn worst_error(&self) -> f64 {
        self.components.iter().map(ComponentReport::worst_error).fold(0.0, f64::max)
    }
}

/// Entropic transport value of each term, weighted and summed.
///
/// Uses the dual form, which for a Gibbs-structured plan `M = exp((f ⊕ g − C)/ε)`
/// is `Σf + Σg − ε·ΣM + ε·K`, with `Σf + Σg = mean_i Σ_j (C + ε log M)`.
/// The dual is flat at the optimum, so residual marginal error enters only
/// at second order.
pub fn entropic_value(outcomes: &[TermOutcome], epsilon: f64) -> f64 {
    outcomes
        .iter()
        .map(|o| {
            let c = &o.cost;
            let m = o.matched.plan.matrix();
            let k = c.rows() as f64;
            let mut potentials = 0.0;
            let mut mass = 0.0;
            for (&cv, &mv) in c.data().iter().zip(m.data()) {
                potentials += cv + epsilon * mv.ln();
                mass += mv;
            }
            o.term.weight * (potentials / k - epsilon * mass + epsilon * k)
        })
        .sum()
}

/// A fixed instance: networks, data batches and latents.
#[derive(Clone, Debug)]
pub struct Instance {
    pub generator: Mlp,
    pub critic: Mlp,
    pub x: Matrix,
    pub x2: Matrix,
    pub z: Matrix,
    pub z2: Matrix,
}

impl Instance {
    /// Draws networks and batches from `seed`, redrawing while some critic
    /// embedding is exactly zero (a sector where every last-hidden ReLU is off).
    pub fn sample(seed: u64, cfg: &GradCheckConfig) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let mut attempts = 0;
        loop {
            let inst = Self::draw(&mut rng, cfg)?;
            attempts += 1;
            match inst.objective(&inst.generator, &inst.critic, &cfg.sinkhorn()) {
                Err(Error::Term { source, .. }) if matches!(*source, Error::ZeroNormRow { .. }) && attempts < 100 => {}
                Err(e) => return Err(e),
                Ok(_) => return Ok(inst),
            }
        }
    }

    fn draw(rng: &mut Rng, cfg: &GradCheckConfig) -> Result<Self> {
        let generator = init_mlp(
            rng,
            &GradCheckConfig::sizes(cfg.latent_dim, &cfg.generator_hidden, 2),
            InitScheme::HeNormal,
            OutputHead::Identity,
        )?;
        let critic = init_mlp(
            rng,
            &GradCheckConfig::sizes(2, &cfg.critic_hidden, cfg.critic_dim),
            InitScheme::HeNormal,
            OutputHead::L2Normalize,
        )?;
        let mix = RingMixture::default();
        let k = cfg.batch_size;
        let (x, _) = sample_mixture(&mix, rng, k)?;
        let (x2, _) = sample_mixture(&mix, rng, k)?;
        let z = rng.uniform(k, cfg.latent_dim, -1.0, 1.0)?;
        let z2 = rng.uniform(k, cfg.latent_dim, -1.0, 1.0)?;
        Ok(Self { generator, critic, x, x2, z, z2 })
    }

    fn inputs(&self) -> LossInputs<'_> {
        LossInputs { x: &self.x, x2: &self.x2, z: &self.z, z2: &self.z2, side: None }
    }

    /// Entropic loss value and the ReLU pattern of every forward pass.
    pub fn objective(&self, generator: &Mlp, critic: &Mlp, cfg: &SinkhornConfig) -> Result<(f64, Vec<bool>)> {
        let (y, ty) = generator.forward(&self.z)?;
        let (y2, ty2) = generator.forward(&self.z2)?;
        let quad = BatchQuad::new(self.x.clone(), self.x2.clone(), y, y2)?;
        let mut pattern = ty.relu_pattern();
        pattern.extend(ty2.relu_pattern());
        let mut feats = Vec::with_capacity(4);
        for b in quad.as_array() {
            let (f, t) = critic.forward(b)?;
            pattern.extend(t.relu_pattern());
            feats.push(f);
        }
        let (_, outcomes) = evaluate_terms(
            [&feats[0], &feats[1], &feats[2], &feats[3]],
            LossForm::SixTerm,
            CostSpec::LearnedCosine,
            &mut SinkhornMatcher(*cfg),
        )?;
        Ok((entropic_value(&outcomes, cfg.epsilon), pattern))
    }

    /// Analytic `(∇θ, ∇η)` and the unconverged term names.
    pub fn analytic(&self, cfg: &SinkhornConfig) -> Result<(Gradients, Gradients, Vec<String>)> {
        let out = loss_gradients(
            self.inputs(),
            &self.generator,
            Some(&self.critic),
            CostSpec::LearnedCosine,
            LossForm::SixTerm,
            &mut SinkhornMatcher(*cfg),
        )?;
        let critic = out.critic.expect("learned cost yields critic gradients");
        Ok((out.generator, critic, out.loss.unconverged))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Which {
    Generator,
    Critic,
}

fn check_component(
    inst: &Instance,
    which: Which,
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> Result<ComponentReport> {
    let sk = cfg.sinkhorn();
    let base = match which {
        Which::Generator => inst.generator.params_flat(),
        Which::Critic => inst.critic.params_flat(),
    };
    let (_, base_pattern) = inst.objective(&inst.generator, &inst.critic, &sk)?;
    let eval = |i: usize, delta: f64| -> Result<(f64, Vec<bool>)> {
        let mut p = base.clone();
        p[i] += delta;
        let (mut g, mut c) = (inst.generator.clone(), inst.critic.clone());
        match which {
            Which::Generator => g.set_params_flat(&p)?,
            Which::Critic => c.set_params_flat(&p)?,
        }
        inst.objective(&g, &c, &sk)
    };
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = cfg.relative_floor * scale;

    let mut report = ComponentReport {
        component: match which {
            Which::Generator => "generator".into(),
            Which::Critic => "critic".into(),
        },
        params: base.len(),
        checked: 0,
        skipped: 0,
        worst: None,
        failures: Vec::new(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        let mut h = cfg.step;
        let numeric = loop {
            let (up, pu) = eval(i, h)?;
            let (down, pd) = eval(i, -h)?;
            if pu == base_pattern && pd == base_pattern {
                break Some((up - down) / (2.0 * h));
            }
            h /= 10.0;
            if h < cfg.min_step {
                break None;
            }
        };
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let denom = a.abs().max(numeric.abs()).max(floor);
        let relative_error = if denom == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
        let m = Mismatch { index: i, analytic: a, numeric, relative_error };
        if relative_error > cfg.tolerance {
            report.failures.push(m.clone());
        }
        if report.worst.as_ref().map_or(true, |w| relative_error > w.relative_error) {
            report.worst = Some(m);
        }
    }
    Ok(report)
}

/// Runs the check on a freshly sampled instance.
pub fn run_gradcheck(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    run_gradcheck_with(seed, cfg, |_, _| {})
}

/// As [`run_gradcheck`], letting `tamper` alter the analytic gradients before
/// comparison.
pub fn run_gradcheck_with(
    seed: u64,
    cfg: &GradCheckConfig,
    tamper: impl FnOnce(&mut Gradients, &mut Gradients),
) -> Result<GradCheckReport> {
    let inst = Instance::sample(seed, cfg)?;
    let (mut gen, mut critic, unconverged) = inst.analytic(&SinkhornConfig { max_iters: cfg.analytic_max_iters, ..cfg.sinkhorn() })?;
    tamper(&mut gen, &mut critic);
    let components = vec![
        check_component(&inst, Which::Generator, &gen.to_flat(), cfg)?,
        check_component(&inst, Which::Critic, &critic.to_flat(), cfg)?,
    ];
    Ok(GradCheckReport { seed, components, unconverged })
}
