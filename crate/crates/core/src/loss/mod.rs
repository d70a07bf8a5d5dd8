//! Pairwise ranking objectives and their gradients with respect to the two
//! stream outputs `h(x)` and `h(x')`.
//!
//! The plain objective is the binary cross-entropy of
//! `p = sigmoid(h(x) - h(x'))` against the pair label. The privileged
//! objective blends it with two bounded score-matching terms:
//!
//! ```text
//! lambda * BCE + (1 - lambda) * [tanh((h(x) - g(z))^2 / tau) + tanh((h(x') - g(z'))^2 / tau)]
//! ```

mod surface;

pub use surface::{export_surface, read_surface_rows, AxisSpec, SurfaceGrid, SurfacePanel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Plain,
    Lupi,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(LossVariant::Plain),
            "lupi" => Ok(LossVariant::Lupi),
            other => Err(Error::Config(format!(
                "unknown loss variant '{other}' (expected plain|lupi)"
            ))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Plain => "plain",
            LossVariant::Lupi => "lupi",
        })
    }
}

/// Selects the objective. `lambda` and `tau` are ignored by the plain variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub lambda: f64,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::plain()
    }
}

impl LossConfig {
    pub fn plain() -> Self {
        LossConfig {
            variant: LossVariant::Plain,
            lambda: 1.0,
            tau: 1.0,
        }
    }

    pub fn lupi(lambda: f64, tau: f64) -> Result<Self> {
        let cfg = LossConfig {
            variant: LossVariant::Lupi,
            lambda,
            tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == LossVariant::Plain {
            return Ok(());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0,1], got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Loss of one pair and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLossResult {
    pub loss: f64,
    /// d loss / d h(x)
    pub grad_hx: f64,
    /// d loss / d h(x')
    pub grad_hxp: f64,
}

/// Stream outputs, label and teacher scores for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTerms {
    pub hx: f64,
    pub hxp: f64,
    pub t: u8,
    pub gz: f64,
    pub gzp: f64,
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_label(t: u8) -> Result<f64> {
    match t {
        0 => Ok(0.0),
        1 => Ok(1.0),
        other => Err(Error::Input(format!("pair label must be 0 or 1, got {other}"))),
    }
}

fn check_finite(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(())
}

/// Binary cross-entropy of `sigmoid(hx - hxp)` against `t`.
pub fn bce_pair_loss(hx: f64, hxp: f64, t: u8) -> Result<PairLossResult> {
    let target = check_label(t)?;
    check_finite(&[("h(x)", hx), ("h(x')", hxp)])?;
    Ok(bce_unchecked(hx, hxp, target))
}

#[inline]
fn bce_unchecked(hx: f64, hxp: f64, target: f64) -> PairLossResult {
    let s = hx - hxp;
    let loss = target * softplus(-s) + (1.0 - target) * softplus(s);
    let g = sigmoid(s) - target;
    PairLossResult {
        loss,
        grad_hx: g,
        grad_hxp: -g,
    }
}

/// `tanh(d^2 / tau)` and its derivative with respect to `d`.
#[inline]
fn bounded_residual(d: f64, tau: f64) -> (f64, f64) {
    let u = d * d / tau;
    let sech = 1.0 / u.cosh();
    (u.tanh(), sech * sech * 2.0 * d / tau)
}

/// Privileged-information loss for one pair.
pub fn lupi_pair_loss(hx: f64, hxp: f64, t: u8, gz: f64, gzp: f64, cfg: &LossConfig) -> Result<PairLossResult> {
    if cfg.variant != LossVariant::Lupi {
        return Err(Error::Config("lupi_pair_loss called with a plain loss config".into()));
    }
    cfg.validate()?;
    let target = check_label(t)?;
    check_finite(&[("h(x)", hx), ("h(x')", hxp), ("g(z)", gz), ("g(z')", gzp)])?;
    Ok(lupi_unchecked(hx, hxp, target, gz, gzp, cfg.lambda, cfg.tau))
}

#[inline]
fn lupi_unchecked(hx: f64, hxp: f64, target: f64, gz: f64, gzp: f64, lambda: f64, tau: f64) -> PairLossResult {
    let bce = bce_unchecked(hx, hxp, target);
    let (phi, dphi) = bounded_residual(hx - gz, tau);
    let (phi_p, dphi_p) = bounded_residual(hxp - gzp, tau);
    let mu = 1.0 - lambda;
    PairLossResult {
        loss: lambda * bce.loss + mu * (phi + phi_p),
        grad_hx: lambda * bce.grad_hx + mu * dphi,
        grad_hxp: lambda * bce.grad_hxp + mu * dphi_p,
    }
}

/// Only the `(1 - lambda) * (phi + phi')` part of the privileged loss.
pub fn privileged_component(hx: f64, hxp: f64, gz: f64, gzp: f64, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_finite(&[("h(x)", hx), ("h(x')", hxp), ("g(z)", gz), ("g(z')", gzp)])?;
    let (phi, _) = bounded_residual(hx - gz, cfg.tau);
    let (phi_p, _) = bounded_residual(hxp - gzp, cfg.tau);
    Ok((1.0 - cfg.lambda) * (phi + phi_p))
}

/// Per-pair loss for either variant.
pub fn pair_loss(terms: &PairTerms, cfg: &LossConfig) -> Result<PairLossResult> {
    match cfg.variant {
        LossVariant::Plain => bce_pair_loss(terms.hx, terms.hxp, terms.t),
        LossVariant::Lupi => lupi_pair_loss(terms.hx, terms.hxp, terms.t, terms.gz, terms.gzp, cfg),
    }
}

/// Mean per-pair loss over a batch; the privileged terms are averaged
/// together with the cross-entropy.
pub fn batch_risk(pairs: &[PairTerms], cfg: &LossConfig) -> Result<(f64, Vec<PairLossResult>)> {
    if pairs.is_empty() {
        return Err(Error::Input("batch_risk needs at least one pair".into()));
    }
    let per_pair = pairs.iter().map(|p| pair_loss(p, cfg)).collect::<Result<Vec<_>>>()?;
    let mean = per_pair.iter().map(|r| r.loss).sum::<f64>() / pairs.len() as f64;
    Ok((mean, per_pair))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const LN_SIGMOID_4: f64 = 0.018_149_927_917_809_74; // -ln sigmoid(4)

    fn cfg(lambda: f64, tau: f64) -> LossConfig {
        LossConfig::lupi(lambda, tau).unwrap()
    }

    #[test]
    fn bce_at_origin() {
        let r = bce_pair_loss(0.0, 0.0, 1).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.grad_hx, -0.5);
        assert_eq!(r.grad_hxp, 0.5);
    }

    #[test]
    fn bce_closed_form() {
        let r = bce_pair_loss(4.0, 0.0, 1).unwrap();
        assert!((r.loss - LN_SIGMOID_4).abs() < 1e-15);
    }

    #[test]
    fn bce_swap_symmetry() {
        let mut rng = crate::seed::rng(1);
        for _ in 0..200 {
            let (a, b) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let l1 = bce_pair_loss(a, b, 1).unwrap().loss;
            let l0 = bce_pair_loss(b, a, 0).unwrap().loss;
            assert_eq!(l1, l0);
        }
    }

    #[test]
    fn bce_stable_at_extremes() {
        for (hx, hxp) in [(500.0, 0.0), (0.0, 500.0), (-250.0, 250.0)] {
            for t in [0, 1] {
                let r = bce_pair_loss(hx, hxp, t).unwrap();
                assert!(r.loss.is_finite() && r.grad_hx.is_finite() && r.grad_hxp.is_finite());
                assert!(r.loss >= 0.0);
            }
        }
        assert_eq!(bce_pair_loss(0.0, 500.0, 1).unwrap().loss, 500.0);
    }

    #[test]
    fn bce_rejects_bad_input() {
        assert!(matches!(bce_pair_loss(f64::NAN, 0.0, 1), Err(Error::NonFinite(_))));
        assert!(matches!(bce_pair_loss(0.0, 0.0, 2), Err(Error::Input(_))));
    }

    #[test]
    fn lupi_matched_scores_leave_only_bce() {
        let c = cfg(0.3, 0.7);
        let r = lupi_pair_loss(2.0, -1.0, 1, 2.0, -1.0, &c).unwrap();
        let b = bce_pair_loss(2.0, -1.0, 1).unwrap();
        assert_eq!(r.loss, 0.3 * b.loss);
        assert_eq!(privileged_component(2.0, -1.0, 2.0, -1.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn lupi_anchor_value() {
        let r = lupi_pair_loss(8.0, 4.0, 1, 8.0, 4.0, &cfg(0.5, 1.0)).unwrap();
        assert!((r.loss - 0.5 * LN_SIGMOID_4).abs() < 1e-15);
    }

    #[test]
    fn lupi_lambda_one_is_bce() {
        let mut rng = crate::seed::rng(2);
        for _ in 0..500 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let t = rng.random_range(0..2u8);
            let a = lupi_pair_loss(v[0], v[1], t, v[2], v[3], &cfg(1.0, rng.random_range(0.1..3.0))).unwrap();
            let b = bce_pair_loss(v[0], v[1], t).unwrap();
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.grad_hx.to_bits(), b.grad_hx.to_bits());
            assert_eq!(a.grad_hxp.to_bits(), b.grad_hxp.to_bits());
        }
    }

    #[test]
    fn lupi_bounds() {
        let mut rng = crate::seed::rng(3);
        for _ in 0..500 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let c = cfg(rng.random_range(0.0..=1.0), rng.random_range(0.1..3.0));
            let t = rng.random_range(0..2u8);
            let r = lupi_pair_loss(v[0], v[1], t, v[2], v[3], &c).unwrap();
            let bce = bce_pair_loss(v[0], v[1], t).unwrap().loss;
            assert!(r.loss >= c.lambda * bce);
            let extra = privileged_component(v[0], v[1], v[2], v[3], &c).unwrap();
            assert!(extra >= 0.0 && extra < 2.0 * (1.0 - c.lambda) + 1e-15);
        }
    }

    #[test]
    fn lupi_stable_at_extremes() {
        let r = lupi_pair_loss(500.0, -500.0, 0, 0.0, 0.0, &cfg(0.5, 1.0)).unwrap();
        assert!(r.loss.is_finite() && r.grad_hx.is_finite() && r.grad_hxp.is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::lupi(0.5, 0.0).is_err());
        assert!(LossConfig::lupi(0.5, -1.0).is_err());
        assert!(LossConfig::lupi(1.5, 1.0).is_err());
        let bad = LossConfig {
            variant: LossVariant::Lupi,
            lambda: 0.5,
            tau: 0.0,
        };
        assert!(matches!(
            lupi_pair_loss(0.0, 0.0, 1, 0.0, 0.0, &bad),
            Err(Error::Config(_))
        ));
        assert!(lupi_pair_loss(0.0, 0.0, 1, 0.0, 0.0, &LossConfig::plain()).is_err());
    }

    #[test]
    fn batch_risk_reductions() {
        let c = cfg(0.5, 1.0);
        let p = PairTerms {
            hx: 1.0,
            hxp: 3.0,
            t: 1,
            gz: 2.0,
            gzp: 0.0,
        };
        let single = lupi_pair_loss(1.0, 3.0, 1, 2.0, 0.0, &c).unwrap().loss;
        assert_eq!(batch_risk(&[p], &c).unwrap().0, single);
        let (mean, per) = batch_risk(&[p; 7], &c).unwrap();
        assert!((mean - single).abs() < 1e-15);
        assert_eq!(per.len(), 7);
        assert!(matches!(batch_risk(&[], &c), Err(Error::Input(_))));
    }

    #[test]
    fn batch_risk_matches_naive_sum() {
        // independent closed form, no shared helpers
        fn naive(p: &PairTerms, lambda: f64, tau: f64) -> f64 {
            let prob = 1.0 / (1.0 + (-(p.hx - p.hxp)).exp());
            let t = p.t as f64;
            let bce = -(t * prob.ln() + (1.0 - t) * (1.0 - prob).ln());
            let a = ((p.hx - p.gz).powi(2) / tau).tanh();
            let b = ((p.hxp - p.gzp).powi(2) / tau).tanh();
            lambda * bce + (1.0 - lambda) * (a + b)
        }
        let mut rng = crate::seed::rng(4);
        for _ in 0..50 {
            let m = rng.random_range(1..40);
            let c = cfg(rng.random_range(0.0..=1.0), rng.random_range(0.2..3.0));
            let pairs: Vec<PairTerms> = (0..m)
                .map(|_| PairTerms {
                    hx: rng.random_range(-5.0..5.0),
                    hxp: rng.random_range(-5.0..5.0),
                    t: rng.random_range(0..2u8),
                    gz: rng.random_range(-5.0..5.0),
                    gzp: rng.random_range(-5.0..5.0),
                })
                .collect();
            let mut total = 0.0;
            for p in &pairs {
                total += naive(p, c.lambda, c.tau);
            }
            let (mean, _) = batch_risk(&pairs, &c).unwrap();
            assert!((mean - total / m as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(5);
        let h = 1e-6;
        for _ in 0..1000 {
            let p = PairTerms {
                hx: rng.random_range(-10.0..10.0),
                hxp: rng.random_range(-10.0..10.0),
                t: rng.random_range(0..2u8),
                gz: rng.random_range(-10.0..10.0),
                gzp: rng.random_range(-10.0..10.0),
            };
            let c = cfg(rng.random_range(0.0..=1.0), rng.random_range(0.5..2.0));
            for variant in [LossVariant::Plain, LossVariant::Lupi] {
                let c = LossConfig { variant, ..c };
                let r = pair_loss(&p, &c).unwrap();
                let f = |hx: f64, hxp: f64| pair_loss(&PairTerms { hx, hxp, ..p }, &c).unwrap().loss;
                let n_hx = (f(p.hx + h, p.hxp) - f(p.hx - h, p.hxp)) / (2.0 * h);
                let n_hxp = (f(p.hx, p.hxp + h) - f(p.hx, p.hxp - h)) / (2.0 * h);
                for (a, n) in [(r.grad_hx, n_hx), (r.grad_hxp, n_hxp)] {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                    assert!(rel < 1e-6, "{p:?} {c:?}: analytic {a} numeric {n}");
                }
            }
        }
    }
}
