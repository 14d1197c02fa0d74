//! Training losses on a soft assignment `X` against a 0/1 target `X*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight on false-positive mass.
    pub alpha: f64,
    /// Weight on false-negative mass.
    pub beta: f64,
    /// Cross-entropy clamps its arguments to `[clip_eps, 1 − clip_eps]`;
    /// `0` disables clamping entirely.
    pub clip_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.1,
            clip_eps: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.clip_eps) {
            return Err(Error::invalid("clip_eps must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    FalseMatching,
    CrossEntropy,
}

fn check_shapes(x: &Mat, target: &Mat) -> Result<()> {
    if x.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "assignment shape {:?} differs from target shape {:?}",
            x.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// False-positive and false-negative mass `(S₊, S₋)`.
pub fn false_match_sums(x: &Mat, target: &Mat) -> Result<(f64, f64)> {
    check_shapes(x, target)?;
    let (mut fp, mut fn_) = (0.0, 0.0);
    for (v, t) in x.iter().zip(target.iter()) {
        fp += v * (1.0 - t);
        fn_ += t * (1.0 - v);
    }
    Ok((fp, fn_))
}

/// `exp(α S₊) + exp(β S₋)`.
pub fn false_matching_loss(x: &Mat, target: &Mat, cfg: &LossConfig) -> Result<f64> {
    let (fp, fn_) = false_match_sums(x, target)?;
    Ok((cfg.alpha * fp).exp() + (cfg.beta * fn_).exp())
}

pub fn false_matching_loss_grad(x: &Mat, target: &Mat, cfg: &LossConfig) -> Result<Mat> {
    let (fp, fn_) = false_match_sums(x, target)?;
    let a = cfg.alpha * (cfg.alpha * fp).exp();
    let b = cfg.beta * (cfg.beta * fn_).exp();
    Ok(target.map(|t| a * (1.0 - t) - b * t))
}

fn clamp(v: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        v
    } else {
        v.clamp(eps, 1.0 - eps)
    }
}

/// Binary cross-entropy summed over all entries.
pub fn cross_entropy_loss(x: &Mat, target: &Mat, cfg: &LossConfig) -> Result<f64> {
    check_shapes(x, target)?;
    let mut total = 0.0;
    for (&v, &t) in x.iter().zip(target.iter()) {
        let v = clamp(v, cfg.clip_eps);
        // Skip zero-weight terms so that 0·log 0 contributes nothing.
        if t != 0.0 {
            total -= t * v.ln();
        }
        if t != 1.0 {
            total -= (1.0 - t) * (1.0 - v).ln();
        }
    }
    Ok(total)
}

/// Gradient of [`cross_entropy_loss`]; zero where the clamp is active.
pub fn cross_entropy_loss_grad(x: &Mat, target: &Mat, cfg: &LossConfig) -> Result<Mat> {
    check_shapes(x, target)?;
    let eps = cfg.clip_eps;
    Ok(x.zip_map(target, |v, t| {
        if eps > 0.0 && (v < eps || v > 1.0 - eps) {
            return 0.0;
        }
        let mut g = 0.0;
        if t != 0.0 {
            g -= t / v;
        }
        if t != 1.0 {
            g += (1.0 - t) / (1.0 - v);
        }
        g
    }))
}

/// Loss value and its gradient for the chosen kind.
pub fn loss_and_grad(
    kind: LossKind,
    x: &Mat,
    target: &Mat,
    cfg: &LossConfig,
) -> Result<(f64, Mat)> {
    match kind {
        LossKind::FalseMatching => Ok((
            false_matching_loss(x, target, cfg)?,
            false_matching_loss_grad(x, target, cfg)?,
        )),
        LossKind::CrossEntropy => Ok((
            cross_entropy_loss(x, target, cfg)?,
            cross_entropy_loss_grad(x, target, cfg)?,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projections::{sinkhorn, Permutation, SinkhornConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(f: impl Fn(&Mat) -> f64, x: &Mat, h: f64) -> Mat {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            let mut p = x.clone();
            p[(i, j)] += h;
            let mut m = x.clone();
            m[(i, j)] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
    }

    fn random_ds(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let m = Mat::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0));
        sinkhorn(&m, &SinkhornConfig::default()).unwrap().matrix
    }

    fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Permutation {
        use rand::seq::SliceRandom;
        let mut cols: Vec<usize> = (0..n).collect();
        cols.shuffle(rng);
        Permutation::from_vec(cols).unwrap()
    }

    #[test]
    fn exact_match_costs_two() {
        let cfg = LossConfig::default();
        let p = Permutation::from_vec(vec![2, 0, 1]).unwrap().to_matrix();
        assert_eq!(false_matching_loss(&p, &p, &cfg).unwrap(), 2.0);
        let one = Mat::from_element(1, 1, 1.0);
        assert_eq!(false_matching_loss(&one, &one, &cfg).unwrap(), 2.0);
    }

    #[test]
    fn single_misplaced_row() {
        let target = Mat::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let x = Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let got = false_matching_loss(&x, &target, &LossConfig::default()).unwrap();
        assert_abs_diff_eq!(got, 2f64.exp() + 0.1f64.exp(), epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = LossConfig::default();
        let (a, b) = (Mat::zeros(2, 2), Mat::zeros(3, 3));
        assert!(false_matching_loss(&a, &b, &cfg).is_err());
        assert!(false_matching_loss_grad(&a, &b, &cfg).is_err());
        assert!(cross_entropy_loss(&a, &b, &cfg).is_err());
    }

    #[test]
    fn gradient_at_target() {
        let cfg = LossConfig::default();
        let p = Permutation::from_vec(vec![1, 0, 2]).unwrap().to_matrix();
        let g = false_matching_loss_grad(&p, &p, &cfg).unwrap();
        let expected = p.map(|t| 2.0 * (1.0 - t) - 0.1 * t);
        assert_abs_diff_eq!(g, expected, epsilon = 1e-15);
    }

    #[test]
    fn gradient_without_false_negative_weight() {
        let cfg = LossConfig {
            beta: 0.0,
            ..LossConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_ds(&mut rng, 4);
        let p = random_perm(&mut rng, 4).to_matrix();
        let g = false_matching_loss_grad(&x, &p, &cfg).unwrap();
        for (gv, t) in g.iter().zip(p.iter()) {
            if *t == 1.0 {
                assert_eq!(*gv, 0.0);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = LossConfig::default();
        for n in 2..=8 {
            let x = random_ds(&mut rng, n);
            let t = random_perm(&mut rng, n).to_matrix();
            let g = false_matching_loss_grad(&x, &t, &cfg).unwrap();
            let fd = fd_gradient(|m| false_matching_loss(m, &t, &cfg).unwrap(), &x, 1e-6);
            assert!((&g - &fd).norm() / fd.norm() < 1e-6, "L_fm n={n}");

            let g = cross_entropy_loss_grad(&x, &t, &cfg).unwrap();
            let fd = fd_gradient(|m| cross_entropy_loss(m, &t, &cfg).unwrap(), &x, 1e-7);
            assert!((&g - &fd).norm() / fd.norm() < 1e-5, "CE n={n}");
        }
    }

    #[test]
    fn cross_entropy_of_exact_target_is_zero() {
        let cfg = LossConfig {
            clip_eps: 0.0,
            ..LossConfig::default()
        };
        let p = Permutation::from_vec(vec![2, 1, 0]).unwrap().to_matrix();
        assert_eq!(cross_entropy_loss(&p, &p, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform() {
        let n = 5;
        let nf = n as f64;
        let x = Mat::from_element(n, n, 1.0 / nf);
        let t = Permutation::from_vec(vec![3, 0, 4, 1, 2])
            .unwrap()
            .to_matrix();
        let got = cross_entropy_loss(&x, &t, &LossConfig::default()).unwrap();
        let expected = -(nf * (1.0 / nf).ln() + (nf * nf - nf) * (1.0 - 1.0 / nf).ln());
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_diverges_without_clamping() {
        let t = Mat::identity(3, 3);
        let x = Mat::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]);
        let tiny = LossConfig {
            clip_eps: 1e-300,
            ..LossConfig::default()
        };
        assert!(cross_entropy_loss(&x, &t, &tiny).unwrap() > 1e3);
        let unclamped = LossConfig {
            clip_eps: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(
            cross_entropy_loss(&x, &t, &unclamped).unwrap(),
            f64::INFINITY
        );
        // The clamped default stays finite and so does the bounded loss.
        assert!(cross_entropy_loss(&x, &t, &LossConfig::default()).unwrap() < 100.0);
        assert!(false_matching_loss(&x, &t, &tiny).unwrap().is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            clip_eps: 0.6,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn bounded_on_the_birkhoff_polytope(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = LossConfig::default();
            let x = random_ds(&mut rng, n);
            let t = random_perm(&mut rng, n).to_matrix();
            let l = false_matching_loss(&x, &t, &cfg).unwrap();
            let nf = n as f64;
            prop_assert!(l >= 2.0);
            prop_assert!(l <= (cfg.alpha * nf).exp() + (cfg.beta * nf).exp());
        }

        #[test]
        fn invariant_under_joint_relabeling(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = LossConfig::default();
            let x = random_ds(&mut rng, n);
            let t = random_perm(&mut rng, n).to_matrix();
            let r = random_perm(&mut rng, n).to_matrix();
            let c = random_perm(&mut rng, n).to_matrix();
            let a = false_matching_loss(&x, &t, &cfg).unwrap();
            let b = false_matching_loss(&(&r * &x * &c), &(&r * &t * &c), &cfg).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }
    }
}
