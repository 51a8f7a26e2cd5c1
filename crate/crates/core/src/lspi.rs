//! Least-squares policy iteration over a scalar state and a two-component
//! timing action, with the six-term pure quadratic basis.
//!
//! The Q-function is `Q(x, u) = zᵀ P z` for `z = (x, u₁, u₂)`, stored as the
//! six distinct monomial coefficients `(x², x·u₁, x·u₂, u₁², u₁·u₂, u₂²)`.

use nalgebra::{Matrix2, Matrix6, SymmetricEigen, Vector2, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const WEIGHT_DIM: usize = 6;

/// Increment applied to `(t_peak, t_offset)`, in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RlAction {
    pub d_peak: f64,
    pub d_offset: f64,
}

impl RlAction {
    pub const ZERO: Self = Self {
        d_peak: 0.0,
        d_offset: 0.0,
    };

    pub fn new(d_peak: f64, d_offset: f64) -> Self {
        Self { d_peak, d_offset }
    }

    fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.d_peak, self.d_offset)
    }
}

/// Symmetric box `[-max_step, max_step]²` on the action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub max_step: f64,
}

impl ActionBounds {
    pub fn new(max_step: f64) -> Result<Self> {
        if !(max_step > 0.0 && max_step.is_finite()) {
            return Err(invalid(format!(
                "max_step must be positive, got {max_step}"
            )));
        }
        Ok(Self { max_step })
    }

    pub fn clip(&self, u: RlAction) -> RlAction {
        let m = self.max_step;
        RlAction::new(u.d_peak.clamp(-m, m), u.d_offset.clamp(-m, m))
    }

    pub fn contains(&self, u: &RlAction) -> bool {
        u.d_peak.abs() <= self.max_step && u.d_offset.abs() <= self.max_step
    }
}

/// Quadratic stage-cost weights `r_x·x² + uᵀ R_u u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub r_x: f64,
    pub r_u: [[f64; 2]; 2],
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            r_x: 1.0,
            r_u: [[0.01, 0.0], [0.0, 0.01]],
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.r_u;
        if !(self.r_x > 0.0) {
            return Err(Error::Config(format!(
                "r_x must be positive, got {}",
                self.r_x
            )));
        }
        if b != c {
            return Err(Error::Config("r_u must be symmetric".into()));
        }
        if !(a > 0.0 && a * d - b * c > 0.0) {
            return Err(Error::Config("r_u must be positive definite".into()));
        }
        Ok(())
    }

    /// Smallest eigenvalue of `r_u`.
    pub fn min_action_eigenvalue(&self) -> f64 {
        min_eigenvalue(&Matrix2::from(self.r_u))
    }
}

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub u: RlAction,
    pub cost: f64,
    pub x_next: f64,
}

/// Coefficients of `(x², x·u₁, x·u₂, u₁², u₁·u₂, u₂²)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub [f64; WEIGHT_DIM]);

impl WeightVector {
    pub fn zeros() -> Self {
        Self([0.0; WEIGHT_DIM])
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.map(|w| c * w))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }

    /// Action block `P_uu` of the symmetric kernel.
    pub fn action_block(&self) -> Matrix2<f64> {
        let w = &self.0;
        Matrix2::new(w[3], 0.5 * w[4], 0.5 * w[4], w[5])
    }

    /// Cross block `P_ux`.
    pub fn cross_block(&self) -> Vector2<f64> {
        Vector2::new(0.5 * self.0[1], 0.5 * self.0[2])
    }

    /// Shifts the diagonal of `P_uu` so its smallest eigenvalue is at least
    /// `floor`. Returns the applied shift.
    pub fn lift_action_block(&mut self, floor: f64) -> f64 {
        let shift = (floor - min_eigenvalue(&self.action_block())).max(0.0);
        self.0[3] += shift;
        self.0[5] += shift;
        shift
    }

    /// Uniform draw in `[-1, 1]⁶` with the action block lifted to `min_eig`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, min_eig: f64) -> Self {
        let mut w = Self(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)));
        w.lift_action_block(min_eig);
        w
    }
}

fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

pub fn features(x: f64, u: &RlAction) -> [f64; WEIGHT_DIM] {
    let (a, b) = (u.d_peak, u.d_offset);
    [x * x, x * a, x * b, a * a, a * b, b * b]
}

pub fn stage_cost(x: f64, u: &RlAction, cw: &CostWeights) -> f64 {
    let v = u.as_vector();
    cw.r_x * x * x + v.dot(&(Matrix2::from(cw.r_u) * v))
}

pub fn q_value(w: &WeightVector, x: f64, u: &RlAction) -> f64 {
    features(x, u).iter().zip(&w.0).map(|(f, w)| f * w).sum()
}

/// Minimiser of `Q(x, ·)` over the action box.
///
/// For a positive-definite action block the unconstrained stationary point
/// is returned when it lies inside the box. Otherwise the minimum sits on
/// the boundary, and each edge is a one-dimensional quadratic minimised in
/// closed form; the best of the edge candidates wins.
pub fn greedy_action(w: &WeightVector, x: f64, bounds: &ActionBounds) -> RlAction {
    let p_uu = w.action_block();
    let linear = w.cross_block() * x;

    if p_uu[(0, 0)] > 0.0 && p_uu.determinant() > 0.0 {
        if let Some(inv) = p_uu.try_inverse() {
            let u = -(inv * linear);
            let candidate = RlAction::new(u[0], u[1]);
            if bounds.contains(&candidate) {
                return candidate;
            }
        }
    }

    let m = bounds.max_step;
    let mut best = RlAction::ZERO;
    let mut best_q = f64::INFINITY;
    let mut consider = |u: RlAction| {
        let q = q_value(w, x, &u);
        if q < best_q {
            best_q = q;
            best = u;
        }
    };
    for fixed in 0..2 {
        let free = 1 - fixed;
        for side in [-m, m] {
            // q(t) = a t² + b t + const along the edge u[fixed] = side
            let a = p_uu[(free, free)];
            let b = 2.0 * (p_uu[(fixed, free)] * side + linear[free]);
            let mut ts = vec![-m, m];
            if a > 0.0 {
                let t = -b / (2.0 * a);
                if t.abs() <= m {
                    ts.push(t);
                }
            }
            for t in ts {
                let mut u = [0.0; 2];
                u[fixed] = side;
                u[free] = t;
                consider(RlAction::new(u[0], u[1]));
            }
        }
    }
    best
}

/// Gaussian perturbation of `greedy`, clipped back into the box.
pub fn explore_action<R: Rng + ?Sized>(
    greedy: RlAction,
    sigma: f64,
    bounds: &ActionBounds,
    rng: &mut R,
) -> RlAction {
    if sigma <= 0.0 {
        return greedy;
    }
    let noise = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    bounds.clip(RlAction::new(
        greedy.d_peak + noise.sample(rng),
        greedy.d_offset + noise.sample(rng),
    ))
}

/// Minimum batch size for a weight solve: more than twice the weight dimension.
pub const MIN_SAMPLES: usize = 2 * WEIGHT_DIM + 1;

/// Condition numbers above this are reported as ill-conditioned.
pub const MAX_CONDITION: f64 = 1e13;

/// LSTD-Q: solves `(A + ridge·I) w = b` with
/// `A = Σ φ(x,u) (φ(x,u) − γ φ(x', π(x')))ᵀ` and `b = Σ φ(x,u) · cost`,
/// where `π` is greedy with respect to `policy`.
pub fn lstdq_solve(
    samples: &[Sample],
    policy: &WeightVector,
    bounds: &ActionBounds,
    gamma: f64,
    ridge: f64,
) -> Result<WeightVector> {
    if samples.len() < MIN_SAMPLES {
        return Err(invalid(format!(
            "LSTD-Q needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!("discount must be in [0, 1), got {gamma}")));
    }
    if !(ridge >= 0.0) {
        return Err(invalid(format!("ridge must be non-negative, got {ridge}")));
    }

    let mut a = Matrix6::<f64>::identity() * ridge;
    let mut b = Vector6::<f64>::zeros();
    for s in samples {
        let phi = Vector6::from(features(s.x, &s.u));
        let next_u = greedy_action(policy, s.x_next, bounds);
        let phi_next = Vector6::from(features(s.x_next, &next_u));
        a += phi * (phi - phi_next * gamma).transpose();
        b += phi * s.cost;
    }

    let singular = a.singular_values();
    let (hi, lo) = (singular.max(), singular.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let w = a
        .lu()
        .solve(&b)
        .ok_or(Error::IllConditioned { condition })?;
    let w = WeightVector(w.into());
    if !w.is_finite() {
        return Err(Error::IllConditioned { condition });
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> ActionBounds {
        ActionBounds::new(2.0).unwrap()
    }

    #[test]
    fn feature_examples() {
        let u = RlAction::new(2.0, 3.0);
        assert_eq!(features(1.0, &u), [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(features(0.0, &RlAction::ZERO), [0.0; 6]);
        assert_eq!(
            features(-1.5, &RlAction::new(-2.0, -3.0)),
            features(1.5, &RlAction::new(2.0, 3.0))
        );
    }

    #[test]
    fn stage_cost_examples() {
        let cw = CostWeights {
            r_x: 1.0,
            r_u: [[1.0, 0.0], [0.0, 1.0]],
        };
        assert_eq!(stage_cost(0.0, &RlAction::ZERO, &cw), 0.0);
        assert!((stage_cost(0.5, &RlAction::new(0.1, -0.2), &cw) - 0.30).abs() < 1e-15);
        let cw = CostWeights {
            r_x: 2.0,
            r_u: [[3.0, 0.0], [0.0, 3.0]],
        };
        assert_eq!(stage_cost(1.0, &RlAction::new(1.0, 1.0), &cw), 8.0);
    }

    #[test]
    fn cost_weight_validation() {
        assert!(CostWeights::default().validate().is_ok());
        let mut cw = CostWeights {
            r_u: [[1.0, 2.0], [2.0, 1.0]],
            ..CostWeights::default()
        };
        assert!(cw.validate().is_err());
        cw.r_u = [[1.0, 0.1], [0.0, 1.0]];
        assert!(cw.validate().is_err());
        cw = CostWeights {
            r_x: 0.0,
            ..CostWeights::default()
        };
        assert!(cw.validate().is_err());
    }

    #[test]
    fn q_value_examples() {
        let w = WeightVector([1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let u = RlAction::new(2.0, 3.0);
        assert_eq!(q_value(&w, 1.0, &u), 14.0);
        assert_eq!(q_value(&WeightVector::zeros(), 0.7, &u), 0.0);
        assert_eq!(q_value(&w.scaled(2.5), 1.0, &u), 2.5 * 14.0);
    }

    #[test]
    fn greedy_examples() {
        let w = WeightVector([1.0, 2.0, 0.0, 1.0, 0.0, 1.0]);
        let u = greedy_action(&w, 0.5, &bounds());
        assert!((u.d_peak + 0.5).abs() < 1e-15 && u.d_offset.abs() < 1e-15);

        let w = WeightVector([0.3, -0.4, 0.9, 2.0, 0.5, 1.0]);
        assert_eq!(greedy_action(&w, 0.0, &bounds()), RlAction::ZERO);
    }

    #[test]
    fn greedy_saturates_on_box() {
        // unconstrained optimum far outside the box, coupled action block
        let w = WeightVector([1.0, 40.0, -10.0, 1.0, 1.2, 1.0]);
        let u = greedy_action(&w, 1.0, &bounds());
        assert!(bounds().contains(&u));
        assert_eq!(u.d_peak, -2.0);
    }

    #[test]
    fn exploration_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = RlAction::new(0.3, -1.0);
        assert_eq!(explore_action(g, 0.0, &bounds(), &mut rng), g);
        let corner = RlAction::new(2.0, -2.0);
        for _ in 0..1000 {
            assert!(bounds().contains(&explore_action(corner, 1.5, &bounds(), &mut rng)));
        }
    }

    #[test]
    fn exploration_spread_matches_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<RlAction> = (0..10_000)
            .map(|_| explore_action(RlAction::ZERO, 0.5, &bounds(), &mut rng))
            .collect();
        let peak: Vec<f64> = draws.iter().map(|u| u.d_peak).collect();
        let offset: Vec<f64> = draws.iter().map(|u| u.d_offset).collect();
        for s in [crate::stats::std_dev(&peak), crate::stats::std_dev(&offset)] {
            assert!((s - 0.5).abs() < 0.02, "std {s}");
        }
    }

    #[test]
    fn random_weights_have_positive_definite_action_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let w = WeightVector::random(&mut rng, 0.1);
            assert!(min_eigenvalue(&w.action_block()) >= 0.1 - 1e-12);
            assert!(w.0.iter().all(|v| v.abs() <= 1.0 + 2.0));
        }
    }

    fn synthetic_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cw = CostWeights::default();
        (0..n)
            .map(|_| {
                let x = rng.random_range(-1.5..1.5);
                let u = RlAction::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let x_next =
                    x + 0.07 * u.d_peak + 0.08 * u.d_offset + rng.random_range(-0.05..0.05);
                Sample {
                    x,
                    u,
                    cost: stage_cost(x, &u, &cw),
                    x_next,
                }
            })
            .collect()
    }

    #[test]
    fn lstdq_zero_costs_give_zero_weights() {
        let mut samples = synthetic_samples(20, 1);
        for s in &mut samples {
            s.cost = 0.0;
        }
        let w = lstdq_solve(&samples, &WeightVector::zeros(), &bounds(), 0.9, 1e-6).unwrap();
        assert!(w.0.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn lstdq_rejects_small_batches_and_bad_discount() {
        let samples = synthetic_samples(12, 1);
        assert!(matches!(
            lstdq_solve(&samples, &WeightVector::zeros(), &bounds(), 0.9, 1e-6),
            Err(Error::InvalidArgument(_))
        ));
        let samples = synthetic_samples(13, 1);
        assert!(lstdq_solve(&samples, &WeightVector::zeros(), &bounds(), 0.9, 1e-6).is_ok());
        assert!(lstdq_solve(&samples, &WeightVector::zeros(), &bounds(), 1.0, 1e-6).is_err());
    }

    #[test]
    fn lstdq_reports_singular_systems() {
        // identical samples give a rank-one A
        let s = Sample {
            x: 0.5,
            u: RlAction::new(1.0, -1.0),
            cost: 0.3,
            x_next: 0.4,
        };
        let samples = vec![s; 20];
        let err = lstdq_solve(&samples, &WeightVector::zeros(), &bounds(), 0.5, 0.0).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn lift_action_block_only_touches_indefinite_blocks() {
        let mut w = WeightVector([1.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
        assert_eq!(w.lift_action_block(0.01), 0.0);
        let mut w2 = WeightVector([1.0, 0.0, 0.0, 1.0, 4.0, 1.0]);
        let shift = w2.lift_action_block(0.01);
        assert!((shift - 1.01).abs() < 1e-12);
        assert!((min_eigenvalue(&w2.action_block()) - 0.01).abs() < 1e-12);
        w.0[0] = 3.0;
        assert_eq!(w.0[0], 3.0);
    }

    fn pd_weights() -> impl Strategy<Value = WeightVector> {
        (
            prop::array::uniform3(-1.0..1.0f64),
            0.05..2.0f64,
            -1.0..1.0f64,
            0.05..2.0f64,
        )
            .prop_map(|(head, l11, l21, l22)| {
                // P_uu = L Lᵀ
                let p11 = l11 * l11;
                let p12 = l11 * l21;
                let p22 = l21 * l21 + l22 * l22;
                WeightVector([head[0], head[1], head[2], p11, 2.0 * p12, p22])
            })
    }

    proptest! {
        #[test]
        fn stage_cost_positive_away_from_origin(x in -5.0..5.0f64, a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let cw = CostWeights::default();
            let c = stage_cost(x, &RlAction::new(a, b), &cw);
            prop_assert!(c >= 0.0);
            if x != 0.0 || a != 0.0 || b != 0.0 {
                prop_assert!(c > 0.0);
            }
        }

        #[test]
        fn greedy_beats_random_actions(w in pd_weights(), x in -3.0..3.0f64, seed in any::<u64>()) {
            let g = greedy_action(&w, x, &bounds());
            let qg = q_value(&w, x, &g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let u = RlAction::new(rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
                prop_assert!(qg <= q_value(&w, x, &u) + 1e-12);
            }
        }

        #[test]
        fn greedy_is_scale_invariant(w in prop::array::uniform6(-1.0..1.0f64), x in -3.0..3.0f64, c in 0.1..50.0f64) {
            let w = WeightVector(w);
            let a = greedy_action(&w, x, &bounds());
            let b = greedy_action(&w.scaled(c), x, &bounds());
            prop_assert!((a.d_peak - b.d_peak).abs() < 1e-9 && (a.d_offset - b.d_offset).abs() < 1e-9,
                "{:?} vs {:?}", a, b);
        }
    }
}
