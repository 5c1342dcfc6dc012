//! Energy distances: the plain Euclidean energy distance between sample sets,
//! and the mini-batch energy distance built from transport distances between
//! whole mini-batches.
//!
//! The training loss is the six-term single-draw estimator
//!
//! ```text
//! L = W(X,Y) + W(X,Y′) + W(X′,Y) + W(X′,Y′) − 2·W(X,X′) − 2·W(Y,Y′)
//! ```
//!
//! whose expectation is twice the squared mini-batch energy distance. No
//! square root is taken. The conditional variant uses four terms,
//! `W(X,Y′) + W(X′,Y) − W(X,X′) − W(Y,Y′)`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::neural::Mlp;
use crate::numerics::{Matrix, Rng};
use crate::transport::{
    exact_assignment, pairwise_cost, random_matching, sinkhorn, CostSpec, SinkhornConfig, TransportPlan,
};

/// Two independent data mini-batches `X, X′` and two generated ones `Y, Y′`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchQuad {
    pub x: Matrix,
    pub x2: Matrix,
    pub y: Matrix,
    pub y2: Matrix,
}

impl BatchQuad {
    pub fn new(x: Matrix, x2: Matrix, y: Matrix, y2: Matrix) -> Result<Self> {
        let quad = Self { x, x2, y, y2 };
        quad.validate()?;
        Ok(quad)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.x.shape();
        for (name, m) in [("x2", &self.x2), ("y", &self.y), ("y2", &self.y2)] {
            if m.shape() != shape {
                return Err(dim_err(
                    "BatchQuad",
                    format!("{name} is {:?}, x is {:?}", m.shape(), shape),
                ));
            }
        }
        if shape.0 == 0 {
            return Err(Error::InvalidArgument("empty mini-batches".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.x.rows()
    }

    pub fn get(&self, slot: Slot) -> &Matrix {
        match slot {
            Slot::X => &self.x,
            Slot::X2 => &self.x2,
            Slot::Y => &self.y,
            Slot::Y2 => &self.y2,
        }
    }

    pub fn as_array(&self) -> [&Matrix; 4] {
        [&self.x, &self.x2, &self.y, &self.y2]
    }

    /// The same quad with data and generator roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            x2: self.y2.clone(),
            y: self.x.clone(),
            y2: self.x2.clone(),
        }
    }
}

/// Position of a mini-batch within a [`BatchQuad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    X = 0,
    X2 = 1,
    Y = 2,
    Y2 = 3,
}

/// One transport distance in the loss, with its signed weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub name: &'static str,
    pub a: Slot,
    pub b: Slot,
    pub weight: f64,
}

const fn term(name: &'static str, a: Slot, b: Slot, weight: f64) -> Term {
    Term { name, a, b, weight }
}

/// Which combination of transport distances forms the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// Unconditional estimator: four cross terms, two within terms weighted −2.
    SixTerm,
    /// Conditional estimator: two cross terms, two within terms weighted −1.
    FourTerm,
}

pub const SIX_TERMS: [Term; 6] = [
    term("w_xy", Slot::X, Slot::Y, 1.0),
    term("w_xy2", Slot::X, Slot::Y2, 1.0),
    term("w_x2y", Slot::X2, Slot::Y, 1.0),
    term("w_x2y2", Slot::X2, Slot::Y2, 1.0),
    term("w_xx2", Slot::X, Slot::X2, -2.0),
    term("w_yy2", Slot::Y, Slot::Y2, -2.0),
];

pub const FOUR_TERMS: [Term; 4] = [
    term("w_xy2", Slot::X, Slot::Y2, 1.0),
    term("w_x2y", Slot::X2, Slot::Y, 1.0),
    term("w_xx2", Slot::X, Slot::X2, -1.0),
    term("w_yy2", Slot::Y, Slot::Y2, -1.0),
];

impl LossForm {
    pub fn terms(self) -> &'static [Term] {
        match self {
            LossForm::SixTerm => &SIX_TERMS,
            LossForm::FourTerm => &FOUR_TERMS,
        }
    }
}

/// Per-term transport distances and their combination.
///
/// For the four-term form `w_xy` and `w_x2y2` are unused and hold zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub form: LossForm,
    pub w_xy: f64,
    pub w_xy2: f64,
    pub w_x2y: f64,
    pub w_x2y2: f64,
    pub w_xx2: f64,
    pub w_yy2: f64,
    pub total: f64,
    /// Terms whose Sinkhorn solve stopped before reaching the marginal tolerance.
    #[serde(default)]
    pub unconverged: Vec<String>,
}

impl LossBreakdown {
    pub fn six_term(w_xy: f64, w_xy2: f64, w_x2y: f64, w_x2y2: f64, w_xx2: f64, w_yy2: f64) -> Self {
        let total = w_xy + w_xy2 + w_x2y + w_x2y2 - 2.0 * w_xx2 - 2.0 * w_yy2;
        Self {
            form: LossForm::SixTerm,
            w_xy,
            w_xy2,
            w_x2y,
            w_x2y2,
            w_xx2,
            w_yy2,
            total,
            unconverged: Vec::new(),
        }
    }

    pub fn four_term(w_xy2: f64, w_x2y: f64, w_xx2: f64, w_yy2: f64) -> Self {
        let total = w_xy2 + w_x2y - w_xx2 - w_yy2;
        Self {
            form: LossForm::FourTerm,
            w_xy: 0.0,
            w_xy2,
            w_x2y,
            w_x2y2: 0.0,
            w_xx2,
            w_yy2,
            total,
            unconverged: Vec::new(),
        }
    }

    /// Combines per-term distances given in `form.terms()` order.
    pub fn from_terms(form: LossForm, w: &[f64]) -> Self {
        match form {
            LossForm::SixTerm => Self::six_term(w[0], w[1], w[2], w[3], w[4], w[5]),
            LossForm::FourTerm => Self::four_term(w[0], w[1], w[2], w[3]),
        }
    }
}

/// Outcome of matching two mini-batches under one cost matrix.
#[derive(Clone, Debug)]
pub struct Matched {
    pub plan: TransportPlan,
    pub distance: f64,
    pub converged: bool,
}

/// Strategy for matching the samples of two mini-batches.
pub trait Matcher {
    fn solve(&mut self, cost: &Matrix) -> Result<Matched>;
}

/// Entropic optimal transport.
#[derive(Clone, Copy, Debug)]
pub struct SinkhornMatcher(pub SinkhornConfig);

impl Matcher for SinkhornMatcher {
    fn solve(&mut self, cost: &Matrix) -> Result<Matched> {
        let r = sinkhorn(cost, &self.0)?;
        Ok(Matched {
            plan: r.plan,
            distance: r.distance,
            converged: r.converged,
        })
    }
}

/// Exact (unregularized) optimal matching.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactMatcher;

impl Matcher for ExactMatcher {
    fn solve(&mut self, cost: &Matrix) -> Result<Matched> {
        let a = exact_assignment(cost)?;
        Ok(Matched {
            plan: TransportPlan::from_permutation(&a.permutation),
            distance: a.distance,
            converged: true,
        })
    }
}

/// Uniformly random matching; turns the loss into a generalized energy
/// distance over mean pairwise costs.
#[derive(Debug)]
pub struct RandomMatcher<'a>(pub &'a mut Rng);

impl Matcher for RandomMatcher<'_> {
    fn solve(&mut self, cost: &Matrix) -> Result<Matched> {
        let a = random_matching(cost, self.0)?;
        Ok(Matched {
            plan: TransportPlan::from_permutation(&a.permutation),
            distance: a.distance,
            converged: true,
        })
    }
}

/// One evaluated loss term.
#[derive(Clone, Debug)]
pub struct TermOutcome {
    pub term: Term,
    pub cost: Matrix,
    pub matched: Matched,
}

/// Evaluates every term of `form` on already-embedded features, in term order.
pub fn evaluate_terms(
    features: [&Matrix; 4],
    form: LossForm,
    cost: CostSpec,
    matcher: &mut dyn Matcher,
) -> Result<(LossBreakdown, Vec<TermOutcome>)> {
    let mut outcomes = Vec::with_capacity(form.terms().len());
    for &t in form.terms() {
        let wrap = |e: Error| Error::Term {
            term: t.name,
            source: Box::new(e),
        };
        let c = pairwise_cost(features[t.a as usize], features[t.b as usize], cost).map_err(wrap)?;
        let matched = matcher.solve(&c).map_err(wrap)?;
        outcomes.push(TermOutcome {
            term: t,
            cost: c,
            matched,
        });
    }
    let distances: Vec<f64> = outcomes.iter().map(|o| o.matched.distance).collect();
    let mut breakdown = LossBreakdown::from_terms(form, &distances);
    breakdown.unconverged = outcomes
        .iter()
        .filter(|o| !o.matched.converged)
        .map(|o| o.term.name.to_string())
        .collect();
    Ok((breakdown, outcomes))
}

/// Maps the four batches into the space the cost is measured in.
pub fn embed_quad(quad: &BatchQuad, cost: CostSpec, critic: Option<&Mlp>) -> Result<[Matrix; 4]> {
    quad.validate()?;
    match (cost.uses_critic(), critic) {
        (true, None) => Err(Error::InvalidArgument(
            "learned-cosine cost needs a critic network".into(),
        )),
        (true, Some(net)) => Ok([
            net.predict(&quad.x)?,
            net.predict(&quad.x2)?,
            net.predict(&quad.y)?,
            net.predict(&quad.y2)?,
        ]),
        (false, _) => Ok([quad.x.clone(), quad.x2.clone(), quad.y.clone(), quad.y2.clone()]),
    }
}

fn loss_with(
    quad: &BatchQuad,
    form: LossForm,
    cost: CostSpec,
    critic: Option<&Mlp>,
    matcher: &mut dyn Matcher,
) -> Result<LossBreakdown> {
    let f = embed_quad(quad, cost, critic)?;
    evaluate_terms([&f[0], &f[1], &f[2], &f[3]], form, cost, matcher).map(|(b, _)| b)
}

/// Six-term mini-batch energy distance estimator with Sinkhorn transport.
pub fn med_loss(quad: &BatchQuad, cost: CostSpec, cfg: &SinkhornConfig, critic: Option<&Mlp>) -> Result<LossBreakdown> {
    loss_with(quad, LossForm::SixTerm, cost, critic, &mut SinkhornMatcher(*cfg))
}

/// Four-term (conditional) combination with Sinkhorn transport, on batches
/// that already carry any side information as extra columns.
pub fn four_term_loss(
    quad: &BatchQuad,
    cost: CostSpec,
    cfg: &SinkhornConfig,
    critic: Option<&Mlp>,
) -> Result<LossBreakdown> {
    loss_with(quad, LossForm::FourTerm, cost, critic, &mut SinkhornMatcher(*cfg))
}

/// Six-term loss with exact assignments in place of Sinkhorn plans.
pub fn med_loss_exact(quad: &BatchQuad, cost: CostSpec, critic: Option<&Mlp>) -> Result<LossBreakdown> {
    loss_with(quad, LossForm::SixTerm, cost, critic, &mut ExactMatcher)
}

/// Six-term loss with every transport distance replaced by a random matching.
pub fn ged_random_matching(
    quad: &BatchQuad,
    cost: CostSpec,
    critic: Option<&Mlp>,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    loss_with(quad, LossForm::SixTerm, cost, critic, &mut RandomMatcher(rng))
}

/// Plug-in Euclidean energy distance between two sample sets (rows).
///
/// Within-set means run over ordered distinct pairs, and are zero for a
/// singleton set. The radicand is clamped at zero.
pub fn energy_distance_euclidean(xs: &Matrix, ys: &Matrix) -> Result<f64> {
    if xs.rows() == 0 || ys.rows() == 0 {
        return Err(Error::InvalidArgument("energy distance of an empty sample set".into()));
    }
    if xs.cols() != ys.cols() {
        return Err(dim_err(
            "energy_distance_euclidean",
            format!("{} vs {} columns", xs.cols(), ys.cols()),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };
    let mut cross = 0.0;
    for a in xs.row_iter() {
        for b in ys.row_iter() {
            cross += dist(a, b);
        }
    }
    let cross = cross / (xs.rows() * ys.rows()) as f64;
    let within = |m: &Matrix| -> f64 {
        let n = m.rows();
        if n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += dist(m.row(i), m.row(j));
            }
        }
        // each unordered pair counted twice among n(n-1) ordered pairs
        2.0 * s / (n * (n - 1)) as f64
    };
    Ok((2.0 * cross - within(xs) - within(ys)).max(0.0).sqrt())
}
