//! Pointwise viscous-plastic constitutive kernels.
//!
//! All kernels operate on a single quadrature point. Strain rates are in 1/s,
//! stresses and ice strength are vertically integrated (N/m), viscosities are
//! N s/m.  The yield curve is the standard ellipse with aspect ratio `e`; the
//! viscous regularization is controlled by `delta_min` and the replacement
//! pressure keeps stationary ice stress-free.

use serde::{Deserialize, Serialize};

/// Symmetric 2x2 strain-rate tensor (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StrainRate {
    pub e11: f64,
    pub e22: f64,
    pub e12: f64,
}

impl StrainRate {
    pub fn new(e11: f64, e22: f64, e12: f64) -> Self {
        Self { e11, e22, e12 }
    }

    /// Trace of the tensor (divergence of the velocity field).
    pub fn div(&self) -> f64 {
        self.e11 + self.e22
    }

    /// Shear deformation sqrt((e11-e22)^2 + 4 e12^2), the quantity used for
    /// kinematic-feature maps.
    pub fn shear(&self) -> f64 {
        ((self.e11 - self.e22).powi(2) + 4.0 * self.e12 * self.e12).sqrt()
    }
}

/// Symmetric 2x2 vertically integrated stress tensor (N/m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stress {
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
}

impl Stress {
    pub const ZERO: Stress = Stress {
        s11: 0.0,
        s22: 0.0,
        s12: 0.0,
    };

    /// Frobenius-like magnitude used for relative comparisons.
    pub fn norm(&self) -> f64 {
        (self.s11 * self.s11 + self.s22 * self.s22 + 2.0 * self.s12 * self.s12).sqrt()
    }
}

/// Material constants of the viscous-plastic rheology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RheologyParams {
    /// Ice density (kg/m^3).
    pub rho_ice: f64,
    /// Ice strength coefficient P* (N/m^2).
    pub p_star: f64,
    /// Concentration sensitivity of the ice strength (dimensionless).
    pub c_strength: f64,
    /// Yield-ellipse aspect ratio.
    pub e: f64,
    /// Viscous regularization threshold for the deformation measure (1/s).
    pub delta_min: f64,
    /// Multiplier on the replacement pressure; 1.0 keeps the baseline
    /// normalization, 2.0 selects the common alternative.
    pub pressure_factor: f64,
}

impl Default for RheologyParams {
    fn default() -> Self {
        Self {
            rho_ice: 900.0,
            p_star: 27_500.0,
            c_strength: 20.0,
            e: 2.0,
            delta_min: 2e-9,
            pressure_factor: 1.0,
        }
    }
}

/// Viscosities and pressure evaluated at one quadrature point.
#[derive(Debug, Clone, Copy, Default)]
pub struct RheologyEval {
    /// Ice strength P0 (N/m).
    pub p0: f64,
    /// Regularized deformation measure (1/s).
    pub delta: f64,
    /// Bulk viscosity (N s/m).
    pub zeta: f64,
    /// Shear viscosity (N s/m).
    pub eta: f64,
    /// Replacement pressure (N/m).
    pub p: f64,
}

/// Deformation measure Delta for the elliptic yield curve.
///
/// The radicand is non-negative for every symmetric tensor; tiny negative
/// values from round-off are clamped to zero before the square root.
pub fn delta(params: &RheologyParams, eps: &StrainRate) -> f64 {
    let k = 1.0 / (params.e * params.e);
    let radicand = (eps.e11 * eps.e11 + eps.e22 * eps.e22) * (1.0 + k)
        + 4.0 * eps.e12 * eps.e12 * k
        + 2.0 * eps.e11 * eps.e22 * (1.0 - k);
    radicand.max(0.0).sqrt()
}

/// Ice strength P0 = P* H exp(-C (1 - A)) in N/m.
pub fn ice_strength(params: &RheologyParams, h: f64, a: f64) -> f64 {
    params.p_star * h * (-params.c_strength * (1.0 - a)).exp()
}

/// Full constitutive evaluation at one point: Delta, viscosities, and
/// replacement pressure, given thickness and concentration.
pub fn evaluate(params: &RheologyParams, eps: &StrainRate, h: f64, a: f64) -> RheologyEval {
    evaluate_with_strength(params, eps, ice_strength(params, h, a))
}

/// Constitutive evaluation with a precomputed ice strength, so that callers
/// subcycling on frozen tracers can hoist the exponential out of the loop.
pub fn evaluate_with_strength(params: &RheologyParams, eps: &StrainRate, p0: f64) -> RheologyEval {
    let d = delta(params, eps);
    // Smooth regularization: the effective Delta never drops below delta_min,
    // which caps zeta at p0 / (2 delta_min).
    let zeta = 0.5 * p0 / (d * d + params.delta_min * params.delta_min).sqrt();
    let eta = zeta / (params.e * params.e);
    let p = params.pressure_factor * 0.5 * p0 * d / (d + params.delta_min);
    RheologyEval {
        p0,
        delta: d,
        zeta,
        eta,
        p,
    }
}

/// Viscous-plastic stress sigma = 2 eta eps + (zeta - eta) tr(eps) I - P/2 I.
pub fn vp_stress(eval: &RheologyEval, eps: &StrainRate) -> Stress {
    let tr = eps.div();
    let iso = (eval.zeta - eval.eta) * tr - 0.5 * eval.p;
    Stress {
        s11: 2.0 * eval.eta * eps.e11 + iso,
        s22: 2.0 * eval.eta * eps.e22 + iso,
        s12: 2.0 * eval.eta * eps.e12,
    }
}

/// One semi-implicit pseudo-time step of the elastic-viscous-plastic stress
/// equation
///
///   d sigma/dt + e^2/(2 T) sigma + (1 - e^2)/(4 T) tr(sigma) I + P/(4 T) I
///     = zeta / T * eps
///
/// The update is exact in the isotropic/deviatoric split and its fixed point
/// is the viscous-plastic stress, independent of `t_evp` and `dt_sub`.
pub fn evp_stress_update(
    params: &RheologyParams,
    eval: &RheologyEval,
    sigma: &Stress,
    eps: &StrainRate,
    t_evp: f64,
    dt_sub: f64,
) -> Stress {
    let e2 = params.e * params.e;
    let r = dt_sub / t_evp;
    // Isotropic part: d sigma_i/dt + sigma_i/(2T) = (zeta eps_i - P/4)/T.
    let eps_i = 0.5 * eps.div();
    let sig_i = 0.5 * (sigma.s11 + sigma.s22);
    let sig_i_new = (sig_i + r * (eval.zeta * eps_i - 0.25 * eval.p)) / (1.0 + 0.5 * r);
    // Deviatoric parts relax with e^2/(2T).
    let denom = 1.0 + 0.5 * e2 * r;
    let eps_ii = 0.5 * (eps.e11 - eps.e22);
    let sig_ii = 0.5 * (sigma.s11 - sigma.s22);
    let sig_ii_new = (sig_ii + r * eval.zeta * eps_ii) / denom;
    let s12_new = (sigma.s12 + r * eval.zeta * eps.e12) / denom;
    Stress {
        s11: sig_i_new + sig_ii_new,
        s22: sig_i_new - sig_ii_new,
        s12: s12_new,
    }
}

/// One mEVP stress relaxation: sigma <- sigma + (sigma_vp - sigma) / alpha.
pub fn mevp_stress_update(
    eval: &RheologyEval,
    sigma: &Stress,
    eps: &StrainRate,
    alpha: f64,
) -> Stress {
    let target = vp_stress(eval, eps);
    let w = 1.0 / alpha;
    Stress {
        s11: sigma.s11 + w * (target.s11 - sigma.s11),
        s22: sigma.s22 + w * (target.s22 - sigma.s22),
        s12: sigma.s12 + w * (target.s12 - sigma.s12),
    }
}
