//! Gradients of the mini-batch energy distance loss.
//!
//! Transport plans are solved outside the differentiated computation and
//! enter the backward pass as constants: since each plan minimizes its
//! transport objective, its own sensitivity contributes nothing to first
//! order. `∂L/∂C` for a term with weight `w` is then just `w·M`, which is
//! pulled back through the cost function, the critic and the generator.

use super::mlp::{Gradients, Mlp, Tape};
use crate::distance::{evaluate_terms, BatchQuad, LossBreakdown, LossForm, Matcher};
use crate::error::{dim_err, Error, Result};
use crate::numerics::Matrix;
use crate::transport::{pairwise_cost_backward, CostSpec};

/// Everything a loss evaluation consumes besides the networks.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    /// Data mini-batches.
    pub x: &'a Matrix,
    pub x2: &'a Matrix,
    /// Generator inputs for `Y` and `Y′` (latents, plus any conditioning columns).
    pub z: &'a Matrix,
    pub z2: &'a Matrix,
    /// Extra columns appended to `X, X′, Y, Y′` before the cost is measured
    /// (one-hot side information in the conditional variant).
    pub side: Option<[&'a Matrix; 4]>,
}

#[derive(Clone, Debug)]
pub struct LossGradients {
    pub generator: Gradients,
    /// `None` when the cost has no critic.
    pub critic: Option<Gradients>,
    pub loss: LossBreakdown,
    /// The batches the loss was evaluated on, `Y` and `Y′` as generated.
    pub quad: BatchQuad,
}

fn feature_inputs(batches: [&Matrix; 4], side: Option<[&Matrix; 4]>) -> Result<[Matrix; 4]> {
    let join = |i: usize| match side {
        Some(s) => batches[i].hconcat(s[i]),
        None => Ok(batches[i].clone()),
    };
    Ok([join(0)?, join(1)?, join(2)?, join(3)?])
}

/// Loss value and gradients for both players.
///
/// Gradients are of `total` as reported, with each plan held fixed.
pub fn loss_gradients(
    inputs: LossInputs<'_>,
    generator: &Mlp,
    critic: Option<&Mlp>,
    cost: CostSpec,
    form: LossForm,
    matcher: &mut dyn Matcher,
) -> Result<LossGradients> {
    let (y, gen_tape) = generator.forward(inputs.z)?;
    let (y2, gen_tape2) = generator.forward(inputs.z2)?;
    let quad = BatchQuad::new(inputs.x.clone(), inputs.x2.clone(), y, y2)?;
    let data_dim = quad.x.cols();

    let feats_in = feature_inputs(quad.as_array(), inputs.side)?;
    let critic = match (cost.uses_critic(), critic) {
        (true, None) => {
            return Err(Error::InvalidArgument("learned-cosine cost needs a critic network".into()))
        }
        (true, Some(c)) => Some(c),
        (false, _) => None,
    };

    let mut tapes: Vec<Tape> = Vec::new();
    let features: [Matrix; 4] = match critic {
        Some(net) => {
            let mut out = Vec::with_capacity(4);
            for f in &feats_in {
                let (e, t) = net.forward(f)?;
                out.push(e);
                tapes.push(t);
            }
            out.try_into().expect("four embeddings")
        }
        None => feats_in,
    };

    let (loss, outcomes) = evaluate_terms(
        [&features[0], &features[1], &features[2], &features[3]],
        form,
        cost,
        matcher,
    )?;
    if !loss.unconverged.is_empty() {
        log::debug!("sinkhorn did not reach tolerance for {:?}", loss.unconverged);
    }

    // ∂L/∂features
    let mut feat_grads: Vec<Matrix> = features.iter().map(|f| Matrix::zeros(f.rows(), f.cols())).collect();
    for o in &outcomes {
        let grad_c = o.matched.plan.matrix().scale(o.term.weight);
        let (a, b) = (o.term.a as usize, o.term.b as usize);
        let (ga, gb) = pairwise_cost_backward(&features[a], &features[b], cost, &grad_c)?;
        feat_grads[a].add_assign(&ga)?;
        feat_grads[b].add_assign(&gb)?;
    }

    // back through the critic, collecting input gradients for Y and Y′
    let mut critic_grads = None;
    let input_grads: Vec<Matrix> = match critic {
        Some(net) => {
            let mut acc = Gradients::zeros_like(net);
            let mut input_grads = Vec::with_capacity(4);
            for (tape, g) in tapes.iter().zip(&feat_grads) {
                let (pg, ig) = net.backward(tape, g)?;
                acc.add_assign(&pg)?;
                input_grads.push(ig);
            }
            critic_grads = Some(acc);
            input_grads
        }
        None => feat_grads,
    };
    let strip = |m: &Matrix| -> Result<Matrix> {
        if m.cols() < data_dim {
            return Err(dim_err("loss_gradients", "feature gradient narrower than data"));
        }
        Ok(m.col_slice(0, data_dim))
    };
    let gy = strip(&input_grads[2])?;
    let gy2 = strip(&input_grads[3])?;

    let (mut gen_grads, _) = generator.backward(&gen_tape, &gy)?;
    let (gen_grads2, _) = generator.backward(&gen_tape2, &gy2)?;
    gen_grads.add_assign(&gen_grads2)?;

    Ok(LossGradients {
        generator: gen_grads,
        critic: critic_grads,
        loss,
        quad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{med_loss, SinkhornMatcher};
    use crate::neural::{init_mlp, InitScheme, OutputHead};
    use crate::numerics::Rng;
    use crate::transport::SinkhornConfig;

    #[test]
    fn loss_matches_med_loss() {
        let mut rng = Rng::new(1);
        let gen = init_mlp(&mut rng, &[2, 8, 2], InitScheme::HeNormal, OutputHead::Identity).unwrap();
        let critic = init_mlp(&mut rng, &[2, 8, 4], InitScheme::HeNormal, OutputHead::L2Normalize).unwrap();
        let x = rng.standard_normal(6, 2).unwrap();
        let x2 = rng.standard_normal(6, 2).unwrap();
        let z = rng.uniform(6, 2, -1.0, 1.0).unwrap();
        let z2 = rng.uniform(6, 2, -1.0, 1.0).unwrap();
        let cfg = SinkhornConfig::default();
        let out = loss_gradients(
            LossInputs { x: &x, x2: &x2, z: &z, z2: &z2, side: None },
            &gen,
            Some(&critic),
            CostSpec::LearnedCosine,
            LossForm::SixTerm,
            &mut SinkhornMatcher(cfg),
        )
        .unwrap();
        let direct = med_loss(&out.quad, CostSpec::LearnedCosine, &cfg, Some(&critic)).unwrap();
        assert_eq!(out.loss, direct);
        assert_eq!(out.generator.len(), gen.num_params());
        assert_eq!(out.critic.unwrap().len(), critic.num_params());
    }

    #[test]
    fn generator_equal_to_data_cancels() {
        // A single linear layer with W = I, b = 0 fed the data itself, so all
        // four batches coincide and each Y, Y′ contribution is matched by an
        // opposite one from the within-generator term.
        let mut rng = Rng::new(2);
        let mut gen = init_mlp(&mut rng, &[2, 2], InitScheme::Zeros, OutputHead::Identity).unwrap();
        gen.layers_mut()[0].weight = Matrix::identity(2);
        let critic = init_mlp(&mut rng, &[2, 16, 8], InitScheme::HeNormal, OutputHead::L2Normalize).unwrap();
        let x = rng.standard_normal(8, 2).unwrap();
        let out = loss_gradients(
            LossInputs { x: &x, x2: &x, z: &x, z2: &x, side: None },
            &gen,
            Some(&critic),
            CostSpec::LearnedCosine,
            LossForm::SixTerm,
            &mut SinkhornMatcher(SinkhornConfig::default()),
        )
        .unwrap();
        assert!(out.loss.total.abs() < 1e-9);
        assert!(out.generator.max_abs() < 1e-9, "{}", out.generator.max_abs());
    }

    #[test]
    fn raw_cost_has_no_critic_gradient() {
        let mut rng = Rng::new(3);
        let gen = init_mlp(&mut rng, &[2, 8, 2], InitScheme::HeNormal, OutputHead::Identity).unwrap();
        let x = rng.standard_normal(5, 2).unwrap();
        let z = rng.uniform(5, 2, -1.0, 1.0).unwrap();
        let out = loss_gradients(
            LossInputs { x: &x, x2: &x, z: &z, z2: &z, side: None },
            &gen,
            None,
            CostSpec::RawCosine,
            LossForm::SixTerm,
            &mut SinkhornMatcher(SinkhornConfig::default()),
        )
        .unwrap();
        assert!(out.critic.is_none());
        assert!(matches!(
            loss_gradients(
                LossInputs { x: &x, x2: &x, z: &z, z2: &z, side: None },
                &gen,
                None,
                CostSpec::LearnedCosine,
                LossForm::SixTerm,
                &mut SinkhornMatcher(SinkhornConfig::default()),
            ),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn critic_ascent_step_increases_loss() {
        let cfg = SinkhornConfig::default();
        let mut increased = 0;
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let gen = init_mlp(&mut rng, &[2, 32, 2], InitScheme::HeNormal, OutputHead::Identity).unwrap();
            let mut critic =
                init_mlp(&mut rng, &[2, 32, 32, 8], InitScheme::HeNormal, OutputHead::L2Normalize).unwrap();
            let x = rng.standard_normal(16, 2).unwrap();
            let x2 = rng.standard_normal(16, 2).unwrap();
            let z = rng.uniform(16, 2, -1.0, 1.0).unwrap();
            let z2 = rng.uniform(16, 2, -1.0, 1.0).unwrap();
            let inputs = LossInputs { x: &x, x2: &x2, z: &z, z2: &z2, side: None };
            let before = loss_gradients(inputs, &gen, Some(&critic), CostSpec::LearnedCosine, LossForm::SixTerm, &mut SinkhornMatcher(cfg))
                .unwrap();
            let g = before.critic.unwrap();
            critic.apply_update(&g, 1e-4 / g.max_abs()).unwrap();
            let after = med_loss(&before.quad, CostSpec::LearnedCosine, &cfg, Some(&critic)).unwrap();
            if after.total > before.loss.total {
                increased += 1;
            }
        }
        assert_eq!(increased, 10);
    }
}
