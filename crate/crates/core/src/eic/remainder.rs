//! Second-order remainder `R₂(P, P₀) = Ψ(P) − Ψ(P₀) + P₀ D*(P)` for ATE and VTE.
//!
//! Both expectations run over the same weighted sample of `W` (Monte-Carlo
//! draws or the strata of a discrete law), so `E` and `E₀` share the covariate
//! distribution. With `c(W)` the doubly-robust cross term
//!
//! ```text
//! c = (g₀(1) − g(1))/g(1) · (Q̄₀(1) − Q̄(1)) − (g₀(0) − g(0))/g(0) · (Q̄₀(0) − Q̄(0))
//! r2_ate = E₀ c
//! r2_vte = (E₀b₀ − E b)² + E₀[2 (b − E b) c] − E₀(b₀ − b)²
//! ```

use crate::error::{Error, Result};

/// Outcome means under each arm and `g(1|W)` at a set of covariate points.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmValues {
    pub qbar1: Vec<f64>,
    pub qbar0: Vec<f64>,
    pub g1: Vec<f64>,
}

impl ArmValues {
    fn len(&self) -> usize {
        self.qbar1.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Remainder {
    pub r2_ate: f64,
    pub r2_vte: f64,
}

/// `weights` are probabilities of the points (uniform when `None`).
pub fn remainder_r2(estimated: &ArmValues, truth: &ArmValues, weights: Option<&[f64]>) -> Result<Remainder> {
    let m = estimated.len();
    let lens = [
        estimated.qbar0.len(),
        estimated.g1.len(),
        truth.qbar1.len(),
        truth.qbar0.len(),
        truth.g1.len(),
    ];
    if m == 0 || lens.iter().any(|&l| l != m) || weights.is_some_and(|w| w.len() != m) {
        return Err(Error::DimensionMismatch("remainder inputs differ in length".into()));
    }
    let uniform = 1.0 / m as f64;
    let wt = |i: usize| weights.map_or(uniform, |w| w[i]);
    let total: f64 = (0..m).map(wt).sum();
    let e = |f: &dyn Fn(usize) -> f64| (0..m).map(|i| wt(i) * f(i)).sum::<f64>() / total;

    let b = |i: usize| estimated.qbar1[i] - estimated.qbar0[i];
    let b0 = |i: usize| truth.qbar1[i] - truth.qbar0[i];
    let cross = |i: usize| {
        let g1 = estimated.g1[i];
        let g0_1 = truth.g1[i];
        ((g0_1 - g1) / g1) * (truth.qbar1[i] - estimated.qbar1[i])
            - (((1.0 - g0_1) - (1.0 - g1)) / (1.0 - g1)) * (truth.qbar0[i] - estimated.qbar0[i])
    };
    let eb = e(&b);
    let eb0 = e(&b0);
    let r2_ate = e(&cross);
    let r2_vte = (eb0 - eb).powi(2) + e(&|i| 2.0 * (b(i) - eb) * cross(i)) - e(&|i| (b0(i) - b(i)).powi(2));
    Ok(Remainder { r2_ate, r2_vte })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eic::oracle::{DiscreteDistribution, EicMutation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_arms(rng: &mut ChaCha8Rng, k: usize) -> ArmValues {
        ArmValues {
            qbar1: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
            qbar0: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
            g1: (0..k).map(|_| rng.random_range(0.1..0.9)).collect(),
        }
    }

    #[test]
    fn zero_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_arms(&mut rng, 50);
        let r = remainder_r2(&t, &t, None).unwrap();
        assert_eq!((r.r2_ate, r.r2_vte), (0.0, 0.0));
    }

    #[test]
    fn known_g_drops_cross_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_arms(&mut rng, 40);
        let mut est = random_arms(&mut rng, 40);
        est.g1 = t.g1.clone();
        let r = remainder_r2(&est, &t, None).unwrap();
        let b: Vec<f64> = (0..40).map(|i| est.qbar1[i] - est.qbar0[i]).collect();
        let b0: Vec<f64> = (0..40).map(|i| t.qbar1[i] - t.qbar0[i]).collect();
        let eb = b.iter().sum::<f64>() / 40.0;
        let eb0 = b0.iter().sum::<f64>() / 40.0;
        let sq = b.iter().zip(&b0).map(|(x, y)| (y - x).powi(2)).sum::<f64>() / 40.0;
        assert!(r.r2_ate.abs() < 1e-15);
        assert!((r.r2_vte - ((eb0 - eb).powi(2) - sq)).abs() < 1e-15);
        assert!(r.r2_vte <= (eb0 - eb).powi(2));
    }

    #[test]
    fn shifted_blip_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_arms(&mut rng, 30);
        let mut est = t.clone();
        // shift Q̄(1) by a constant: b = b₀ + c
        est.qbar1.iter_mut().for_each(|q| *q += 0.03);
        let r = remainder_r2(&est, &t, None).unwrap();
        assert!(r.r2_vte.abs() < 1e-15);
    }

    /// `R₂` equals `Ψ(P) − Ψ(P₀) + P₀ D*(P)` computed exactly on finite supports
    /// where `P` and `P₀` share the covariate law.
    #[test]
    fn matches_exact_expansion_on_discrete_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let k = rng.random_range(1..=4);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p_w: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let t = random_arms(&mut rng, k);
            let e = random_arms(&mut rng, k);
            let p0 = DiscreteDistribution::from_factors(&p_w, &t.g1, &t.qbar1, &t.qbar0).unwrap();
            let p = DiscreteDistribution::from_factors(&p_w, &e.g1, &e.qbar1, &e.qbar0).unwrap();
            let (psi1, psi2) = p.psi();
            let (psi01, psi02) = p0.psi();
            let d = p.eic(EicMutation::None);
            let p0d1 = p0.expect(&d.iter().map(|x| x.0).collect::<Vec<_>>());
            let p0d2 = p0.expect(&d.iter().map(|x| x.1).collect::<Vec<_>>());
            let r = remainder_r2(&e, &t, Some(&p_w)).unwrap();
            assert!((r.r2_ate - (psi1 - psi01 + p0d1)).abs() < 1e-12);
            assert!((r.r2_vte - (psi2 - psi02 + p0d2)).abs() < 1e-12);
        }
    }
}
