//! Location-and-scale source densities on a disk `B_β(θ)`.
//!
//! A profile is described by `ψ`, with base shape `Ψ(r) = exp(-ψ(r))` on
//! `[0, 1]` and density `φ(x; θ, β) = Ψ(|x - θ| / β) / (C β²)`. Initial
//! conditions are drawn uniformly on the support and carry an importance
//! weight that turns uniform averages into `φ`-averages.

use std::f64::consts::{E, PI, TAU};
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::vec2::Vec2;

/// Spatial dimension. Only the planar case is supported.
pub const DIM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Constant density on the disk.
    Uniform,
    /// `ψ(r) = 1 / (1 - r²)`; vanishes smoothly at the support boundary.
    Bump,
}

impl Profile {
    /// `ψ'(r)` for `r` in `[0, 1)`.
    pub fn psi_prime(self, r: f64) -> f64 {
        match self {
            Profile::Uniform => 0.0,
            Profile::Bump => {
                let s = 1.0 - r * r;
                2.0 * r / (s * s)
            }
        }
    }

    /// Base shape `Ψ(r)`, zero outside the unit interval.
    pub fn shape(self, r: f64) -> f64 {
        if r > 1.0 {
            return 0.0;
        }
        match self {
            Profile::Uniform => (-1.0f64).exp(),
            Profile::Bump => {
                if r >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - r * r)).exp()
                }
            }
        }
    }

    /// `Ψ(1)`, the one-sided limit at the support boundary.
    pub fn boundary_shape(self) -> f64 {
        self.shape(1.0)
    }

    /// Normalization constant `C = 2π ∫₀¹ Ψ(r) r dr`.
    pub fn normalization(self) -> f64 {
        match self {
            Profile::Uniform => PI / E,
            Profile::Bump => {
                static BUMP: OnceLock<f64> = OnceLock::new();
                *BUMP.get_or_init(|| {
                    normalization_constant(Profile::Bump)
                        .expect("bump normalization converges")
                })
            }
        }
    }

    /// Density of the unit-scale, origin-centered member at radius `r`.
    pub fn unit_density(self, r: f64) -> f64 {
        match self {
            Profile::Uniform if r <= 1.0 => 1.0 / PI,
            Profile::Uniform => 0.0,
            Profile::Bump => self.shape(r) / self.normalization(),
        }
    }
}

/// Computes `C` for `profile` in two dimensions (uncached).
pub fn normalization_constant(profile: Profile) -> Result<f64> {
    match profile {
        Profile::Uniform => Ok(PI / E),
        Profile::Bump => {
            let integral =
                quadrature::integrate(|r| Profile::Bump.shape(r) * r, 0.0, 1.0, 1e-15, 1e-12)?;
            Ok(TAU * integral)
        }
    }
}

/// An admissible source `φ(·; θ, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub theta: Vec2,
    pub beta: f64,
    pub profile: Profile,
}

impl SourceSpec {
    pub fn new(theta: Vec2, beta: f64, profile: Profile) -> Result<Self> {
        let s = SourceSpec { theta, beta, profile };
        s.validate()?;
        Ok(s)
    }

    /// Checks `β > 0` and `B_β(θ) ⊂ Ω` strictly.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidSource(format!("beta = {} must be positive", self.beta)));
        }
        if !(self.theta.norm() + self.beta < 1.0) {
            return Err(Error::InvalidSource(format!(
                "support B_{}({:?}) is not inside the unit disk",
                self.beta,
                self.theta.to_array()
            )));
        }
        Ok(())
    }

    pub fn with_theta(&self, theta: Vec2) -> SourceSpec {
        SourceSpec { theta, ..*self }
    }

    /// `φ(x; θ, β)`.
    pub fn density(&self, x: Vec2) -> f64 {
        let r = (x - self.theta).norm() / self.beta;
        match self.profile {
            // Ψ and C share the e^{-1} factor; cancel it exactly.
            Profile::Uniform if r <= 1.0 => 1.0 / (PI * self.beta * self.beta),
            Profile::Uniform => 0.0,
            Profile::Bump => self.profile.shape(r) / (self.profile.normalization() * self.beta * self.beta),
        }
    }

    /// Density on the support boundary, `Ψ(1) / (C β²)`.
    pub fn boundary_density(&self) -> f64 {
        match self.profile {
            Profile::Uniform => 1.0 / (PI * self.beta * self.beta),
            Profile::Bump => 0.0,
        }
    }

    /// Whether the shape derivative has a support-boundary contribution.
    pub fn has_boundary_term(&self) -> bool {
        self.boundary_density() > 0.0
    }

    /// Point `θ + β (cos α, sin α)` on the support boundary.
    pub fn support_point(&self, alpha: f64) -> Vec2 {
        self.theta + Vec2::from_polar(self.beta, alpha)
    }

    /// Draws a uniform point of the support and its importance weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SourceDraw {
        let u = uniform_ball(rng);
        self.draw_from_unit(u)
    }

    /// Builds the draw for a fixed unit-ball point `u`.
    pub fn draw_from_unit(&self, u: Vec2) -> SourceDraw {
        let weight = match self.profile {
            Profile::Uniform => 1.0,
            Profile::Bump => PI * self.profile.unit_density(u.norm()),
        };
        SourceDraw {
            position: self.theta + u * self.beta,
            unit: u,
            weight,
        }
    }

    /// Interior θ-score `ψ'(|U|) U / (β |U|)` for a draw at unit-ball point `u`.
    pub fn grad_log_density_factor(&self, u: Vec2) -> Vec2 {
        let r = u.norm();
        if r == 0.0 || self.profile == Profile::Uniform {
            return Vec2::ZERO;
        }
        u * (self.profile.psi_prime(r) / (self.beta * r))
    }

    /// Interior β-score `(|U| ψ'(|U|) - d) / β`.
    pub fn beta_log_density_factor(&self, u: Vec2) -> f64 {
        let r = u.norm();
        (r * self.profile.psi_prime(r) - DIM) / self.beta
    }
}

/// Initial condition drawn uniformly on `B_β(θ)` with its importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceDraw {
    /// `θ + β U`.
    pub position: Vec2,
    /// The unit-ball point `U`.
    pub unit: Vec2,
    /// `π φ(U; 0, 1)`, so that `E_unif[f · weight] = ∫ f φ`.
    pub weight: f64,
}

impl SourceDraw {
    /// A deterministic start at `position` with unit weight.
    pub fn at(position: Vec2) -> Self {
        SourceDraw {
            position,
            unit: Vec2::ZERO,
            weight: 1.0,
        }
    }
}

/// Uniform point on the unit disk by the polar method.
pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R) -> Vec2 {
    let r = rng.random::<f64>().sqrt();
    let a = TAU * rng.random::<f64>();
    Vec2::from_polar(r, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    // ∫₀¹ e^{-1/(1-r²)} r dr = ½ ∫₀¹ e^{-1/u} du = ½ (e^{-1} - E₁(1)),
    // with E₁(1) = 0.219383934395520273677163775460121649031047293406908...
    fn bump_c_closed_form() -> f64 {
        let e1_of_1 = 0.219_383_934_395_520_27_f64;
        PI * ((-1.0f64).exp() - e1_of_1)
    }

    fn spec(profile: Profile) -> SourceSpec {
        SourceSpec::new(Vec2::new(-0.4, 0.1), 0.15, profile).unwrap()
    }

    #[test]
    fn normalization_constants() {
        assert_relative_eq!(Profile::Uniform.normalization(), PI * (-1.0f64).exp(), epsilon = 1e-15);
        let c = Profile::Bump.normalization();
        assert_relative_eq!(c, bump_c_closed_form(), max_relative = 1e-10);
        assert_relative_eq!(c, 0.466_5, epsilon = 1e-4);
    }

    #[test]
    fn density_examples() {
        let u = spec(Profile::Uniform);
        assert_relative_eq!(u.density(u.theta), 1.0 / (PI * 0.0225), epsilon = 1e-12);
        let b = SourceSpec::new(Vec2::ZERO, 0.15, Profile::Bump).unwrap();
        assert_eq!(b.density(Vec2::new(0.15, 0.0)), 0.0);
        assert_eq!(b.density(Vec2::new(0.2, 0.0)), 0.0);
        assert_relative_eq!(
            b.density(Vec2::ZERO),
            (-1.0f64).exp() / (bump_c_closed_form() * 0.0225),
            max_relative = 1e-10
        );
    }

    #[test]
    fn density_integrates_to_one_by_polar_quadrature() {
        for profile in [Profile::Uniform, Profile::Bump] {
            let s = spec(profile);
            let (x, w) = quadrature::gauss_legendre(64);
            let mut total = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                let r = 0.5 * s.beta * (xi + 1.0);
                let ring = s.density(s.theta + Vec2::new(r, 0.0)) * TAU * r;
                total += 0.5 * s.beta * wi * ring;
            }
            assert_relative_eq!(total, 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn sampling_weights() {
        let u = spec(Profile::Uniform);
        let b = spec(Profile::Bump);
        let mut s = rng::stream(1, &[0]);
        for _ in 0..100 {
            assert_eq!(u.sample(&mut s).weight, 1.0);
        }
        let at_center = b.draw_from_unit(Vec2::ZERO);
        assert_relative_eq!(at_center.weight, PI * (-1.0f64).exp() / bump_c_closed_form(), max_relative = 1e-10);
        assert_eq!(at_center.position, b.theta);
    }

    #[test]
    fn mean_weight_is_one() {
        let n = 1_000_000;
        for profile in [Profile::Uniform, Profile::Bump] {
            let s = spec(profile);
            let mut r = rng::stream(2, &[profile as u64]);
            let (mut m, mut m2) = (0.0, 0.0);
            for _ in 0..n {
                let w = s.sample(&mut r).weight;
                m += w;
                m2 += w * w;
            }
            let mean = m / n as f64;
            let se = ((m2 / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - 1.0).abs() <= 3.0 * se.max(1e-15), "{profile:?}: {mean} ± {se}");
        }
    }

    #[test]
    fn gradient_factor_examples() {
        let u = spec(Profile::Uniform);
        assert_eq!(u.grad_log_density_factor(Vec2::new(0.3, -0.2)), Vec2::ZERO);
        let b = spec(Profile::Bump);
        let g = b.grad_log_density_factor(Vec2::new(0.5, 0.0));
        assert_relative_eq!(g.x, (1.0 / 0.15) * (1.0 / 0.5625), epsilon = 1e-12);
        assert_eq!(g.y, 0.0);
        assert_eq!(b.grad_log_density_factor(Vec2::ZERO), Vec2::ZERO);
        // density × score vanishes at the support edge
        let near = Vec2::new(1.0 - 1e-6, 0.0);
        let prod = b.draw_from_unit(near).weight * b.grad_log_density_factor(near).norm();
        assert!(prod < 1e-100);
    }

    #[test]
    fn gradient_factor_matches_finite_difference_of_log_density() {
        let b = spec(Profile::Bump);
        let mut r = rng::stream(3, &[]);
        let h = 1e-6;
        for _ in 0..20 {
            let u = uniform_ball(&mut r) * 0.95;
            let x = b.theta + u * b.beta;
            let ana = b.grad_log_density_factor(u);
            let ld = |t: Vec2| b.with_theta(t).density(x).ln();
            let fd = Vec2::new(
                (ld(b.theta + Vec2::new(h, 0.0)) - ld(b.theta - Vec2::new(h, 0.0))) / (2.0 * h),
                (ld(b.theta + Vec2::new(0.0, h)) - ld(b.theta - Vec2::new(0.0, h))) / (2.0 * h),
            );
            let scale = ana.norm().max(1.0);
            assert!((ana - fd).norm() / scale <= 1e-5, "{ana:?} vs {fd:?}");
        }
    }

    #[test]
    fn density_is_radially_symmetric() {
        let b = spec(Profile::Bump);
        let v = Vec2::new(0.05, 0.07);
        for k in 0..8 {
            let a = k as f64 * 0.7;
            let rot = Vec2::new(v.x * a.cos() - v.y * a.sin(), v.x * a.sin() + v.y * a.cos());
            assert_abs_diff_eq!(b.density(b.theta + rot), b.density(b.theta + v), epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_sources() {
        assert!(SourceSpec::new(Vec2::ZERO, 0.0, Profile::Bump).is_err());
        assert!(SourceSpec::new(Vec2::new(0.9, 0.0), 0.1, Profile::Bump).is_err());
        assert!(SourceSpec::new(Vec2::new(0.85, 0.0), 0.1, Profile::Bump).is_ok());
    }
}
