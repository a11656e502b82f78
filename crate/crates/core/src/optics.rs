//! Twisted standing-wave intensities, state-dependent potentials and trap feasibility.
//!
//! Frequencies here are angular frequencies (ħ = 1). Positions are in units of
//! `d = λ/2`, so the lattice wavenumber is `k = π/d`.

use std::f64::consts::PI;
use std::io::{self, Write};

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig;
use crate::geometry::Vec2;

/// Wavenumber of the lattice light in units of `1/d`.
pub const K_LATTICE: f64 = PI;

/// Rabi-to-detuning ratio above which the dispersive approximation is flagged.
const PERTURBATIVE_LIMIT: f64 = 0.5;

const HBAR: f64 = 1.054_571_817e-34;
const AMU: f64 = 1.660_539_066_60e-27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    /// Circular; sees the unrotated square pattern.
    Sigma,
    /// Linear; sees the pattern rotated by θ.
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityProfile {
    pub kind: Polarization,
    pub theta: f64,
    pub k: f64,
}

impl IntensityProfile {
    pub fn new(kind: Polarization, theta: f64) -> Self {
        IntensityProfile {
            kind,
            theta,
            k: K_LATTICE,
        }
    }
}

/// Time-averaged intensity, in `[0, 2]`.
pub fn intensity(profile: &IntensityProfile, r: Vec2) -> f64 {
    let k = profile.k;
    match profile.kind {
        Polarization::Sigma => (k * r.x).sin().powi(2) + (k * r.y).sin().powi(2),
        Polarization::Pi => {
            let (s, c) = profile.theta.sin_cos();
            (k * (r.x * s - r.y * c)).sin().powi(2) + (k * (r.x * c + r.y * s)).sin().powi(2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeParams {
    /// Two independently dressed ground states with two-photon detuning `delta_2ph`.
    Ideal {
        omega_a: f64,
        omega_b: f64,
        delta_a: f64,
        delta_b: f64,
        delta_2ph: f64,
        gamma_g: f64,
    },
    /// Hyperfine ground states split by `delta_g`.
    Hyperfine {
        omega_a: f64,
        omega_b: f64,
        delta_a: f64,
        delta_b: f64,
        delta_g: f64,
    },
    /// Two-photon dressing through an intermediate fine-structure level.
    FineStructure {
        omega_p: f64,
        delta_p: f64,
        omega_a: f64,
        omega_b: f64,
        delta_a: f64,
        delta_b: f64,
        gamma_g: f64,
    },
    /// Clock states with one lattice at a turnout wavelength. Wavelengths in metres.
    /// `lambda_m` (the magic wavelength of the vertical trap) is recorded only.
    Turnout {
        lambda1: f64,
        lambda2: f64,
        gamma_e: f64,
        delta: f64,
        omega: f64,
        lambda_m: Option<f64>,
    },
}

fn nonzero(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Input(format!("{name} must be finite, got {x}")));
    }
    if x == 0.0 {
        return Err(Error::SingularParameter(format!("{name} must be nonzero")));
    }
    Ok(())
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} must be finite, got {x}")))
    }
}

fn check_dispersive(name: &str, omega: f64, delta: f64) {
    if (omega / delta).abs() > PERTURBATIVE_LIMIT {
        warn!("|{name}| = {:.3} exceeds {PERTURBATIVE_LIMIT}; dispersive approximation is poor", (omega / delta).abs());
    }
}

impl SchemeParams {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeParams::Ideal { .. } => "ideal",
            SchemeParams::Hyperfine { .. } => "hyperfine",
            SchemeParams::FineStructure { .. } => "fine_structure",
            SchemeParams::Turnout { .. } => "turnout",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchemeParams::Ideal {
                omega_a,
                omega_b,
                delta_a,
                delta_b,
                delta_2ph,
                gamma_g,
            } => {
                finite("omega_a", omega_a)?;
                finite("omega_b", omega_b)?;
                finite("gamma_g", gamma_g)?;
                nonzero("delta_a", delta_a)?;
                nonzero("delta_b", delta_b)?;
                nonzero("two-photon detuning", delta_2ph)
            }
            SchemeParams::Hyperfine {
                omega_a,
                omega_b,
                delta_a,
                delta_b,
                delta_g,
            } => {
                finite("omega_a", omega_a)?;
                finite("omega_b", omega_b)?;
                nonzero("delta_a", delta_a)?;
                nonzero("delta_b", delta_b)?;
                finite("delta_g", delta_g)?;
                nonzero("delta_a + delta_g", delta_a + delta_g)?;
                nonzero("delta_b + delta_g", delta_b + delta_g)
            }
            SchemeParams::FineStructure {
                omega_p,
                delta_p,
                omega_a,
                omega_b,
                delta_a,
                delta_b,
                gamma_g,
            } => {
                finite("omega_p", omega_p)?;
                finite("omega_a", omega_a)?;
                finite("omega_b", omega_b)?;
                finite("gamma_g", gamma_g)?;
                nonzero("delta_p", delta_p)?;
                nonzero("delta_a", delta_a)?;
                nonzero("delta_b", delta_b)
            }
            SchemeParams::Turnout {
                lambda1,
                lambda2,
                gamma_e,
                delta,
                omega,
                lambda_m,
            } => {
                finite("gamma_e", gamma_e)?;
                finite("omega", omega)?;
                nonzero("delta", delta)?;
                if !(lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite()) {
                    return Err(Error::Input("wavelengths must be positive".into()));
                }
                if lambda2 >= lambda1 {
                    return Err(Error::Input(format!(
                        "turnout scheme needs lambda2 < lambda1, got {lambda2} >= {lambda1}"
                    )));
                }
                if matches!(lambda_m, Some(l) if !(l > 0.0)) {
                    return Err(Error::Input("magic wavelength must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Rabi frequency for state `b` that gives it the same depth as state `a`.
pub fn balanced_omega_b(omega_a: f64, delta_a: f64, delta_b: f64) -> Result<f64> {
    nonzero("delta_a", delta_a)?;
    nonzero("delta_b", delta_b)?;
    let ratio = delta_b / delta_a;
    if ratio < 0.0 {
        return Err(Error::Input("detunings of opposite sign cannot be balanced".into()));
    }
    Ok(omega_a.abs() * ratio.sqrt())
}

/// `(V_a, V_b)` for the ideal scheme. State `a` sees the σ pattern and `b`
/// the π pattern rotated by `theta`.
pub fn potential_ideal(params: &SchemeParams, theta: f64, r: Vec2) -> Result<(f64, f64)> {
    let SchemeParams::Ideal {
        omega_a,
        omega_b,
        delta_a,
        delta_b,
        ..
    } = *params
    else {
        return Err(Error::Input(format!("expected ideal scheme, got {}", params.name())));
    };
    params.validate()?;
    check_dispersive("omega_a/delta_a", omega_a, delta_a);
    check_dispersive("omega_b/delta_b", omega_b, delta_b);
    let ia = intensity(&IntensityProfile::new(Polarization::Sigma, theta), r);
    let ib = intensity(&IntensityProfile::new(Polarization::Pi, theta), r);
    Ok((-omega_a * omega_a / delta_a * ia, -omega_b * omega_b / delta_b * ib))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperfinePotential {
    pub v_a: f64,
    pub v_b: f64,
    pub residual_a: f64,
    pub residual_b: f64,
}

/// Hyperfine-scheme potentials: each state feels its wanted pattern plus a
/// fraction `residual` of the other one.
pub fn potential_hyperfine(params: &SchemeParams, r: Vec2, theta: f64) -> Result<HyperfinePotential> {
    let SchemeParams::Hyperfine {
        omega_a,
        delta_a,
        delta_b,
        delta_g,
        ..
    } = *params
    else {
        return Err(Error::Input(format!("expected hyperfine scheme, got {}", params.name())));
    };
    params.validate()?;
    let (residual_a, residual_b) = hyperfine_residuals(delta_a, delta_b, delta_g);
    let v_d = omega_a * omega_a / delta_a;
    let pi = intensity(&IntensityProfile::new(Polarization::Pi, theta), r);
    let sigma = intensity(&IntensityProfile::new(Polarization::Sigma, theta), r);
    Ok(HyperfinePotential {
        v_a: -v_d * (pi + residual_a * sigma),
        v_b: -v_d * (sigma + residual_b * pi),
        residual_a,
        residual_b,
    })
}

fn hyperfine_residuals(delta_a: f64, delta_b: f64, delta_g: f64) -> (f64, f64) {
    (delta_b / (delta_a + delta_g), delta_a / (delta_b + delta_g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrapParameters {
    pub omega_t: f64,
    pub l0_over_d: f64,
    pub j_ratio_diag: f64,
    pub u_estimate: Option<f64>,
}

/// Harmonic approximation of the `−V_D sin²` well.
///
/// `a_s` and `lz` are in units of `d`; the interaction estimate is returned in
/// the units of `e_r`.
pub fn trap_parameters(v_d: f64, e_r: f64, a_s: Option<f64>, lz: Option<f64>) -> Result<TrapParameters> {
    if !(v_d.is_finite() && e_r.is_finite() && e_r > 0.0) {
        return Err(Error::Input(format!("need finite V_D and positive E_R, got {v_d}, {e_r}")));
    }
    if v_d <= e_r {
        return Err(Error::ShallowTrap { depth: v_d, recoil: e_r });
    }
    let omega_t = 2.0 * (v_d * e_r).sqrt();
    let l0 = (e_r / v_d).powf(0.25) / PI;
    let j_ratio_diag = (-1.0 / (4.0 * l0 * l0)).exp();
    let u_estimate = match (a_s, lz) {
        (Some(a), Some(z)) if z > 0.0 => {
            Some(8.0 * a / (PI * (2.0 * PI).powf(1.5) * l0 * l0 * z) * e_r)
        }
        (Some(_), Some(z)) => {
            return Err(Error::Input(format!("vertical width must be positive, got {z}")))
        }
        _ => None,
    };
    Ok(TrapParameters {
        omega_t,
        l0_over_d: l0,
        j_ratio_diag,
        u_estimate,
    })
}

/// Recoil energy `ħk²/2m` as an angular frequency (rad/s).
pub fn recoil_angular_frequency(mass_amu: f64, wavelength_m: f64) -> Result<f64> {
    if !(mass_amu > 0.0 && wavelength_m > 0.0) {
        return Err(Error::Input("mass and wavelength must be positive".into()));
    }
    let k = 2.0 * PI / wavelength_m;
    Ok(HBAR * k * k / (2.0 * mass_amu * AMU))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityFlags {
    pub depth_ok: bool,
    pub leakage_ok: bool,
    pub coherence_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub scheme: &'static str,
    pub v_d: f64,
    pub e_r: f64,
    pub eps_2ph: f64,
    pub gamma_star: f64,
    pub omega_t: Option<f64>,
    pub l0_over_d: Option<f64>,
    pub j_ratio_diag: Option<f64>,
    pub u_estimate: Option<f64>,
    /// Unwanted-pattern fraction, hyperfine scheme only.
    pub residual: Option<f64>,
    /// Out-of-plane tilt in radians, turnout scheme only.
    pub tilt_alpha: Option<f64>,
    pub flags: FeasibilityFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityOptions {
    pub e_r: f64,
    pub a_s: Option<f64>,
    pub lz: Option<f64>,
    /// Largest acceptable `Γ*` in rad/s.
    pub max_gamma_star: f64,
    pub max_eps_2ph: f64,
    pub max_residual: f64,
}

impl FeasibilityOptions {
    pub fn new(e_r: f64) -> Self {
        FeasibilityOptions {
            e_r,
            a_s: None,
            lz: None,
            max_gamma_star: 2.0 * PI,
            max_eps_2ph: 0.01,
            max_residual: 0.1,
        }
    }
}

/// Trap depth, leakage and decoherence budget for one implementation scheme.
///
/// Regimes that break the scheme's assumptions come back as a report with
/// false flags; only malformed parameters are errors.
pub fn feasibility(params: &SchemeParams, opts: &FeasibilityOptions) -> Result<FeasibilityReport> {
    params.validate()?;
    let mut residual = None;
    let mut tilt_alpha = None;
    let mut eps_2ph = 0.0;
    let (v_d, gamma_star, leakage_ok) = match *params {
        SchemeParams::Ideal {
            omega_a,
            omega_b,
            delta_a,
            delta_b,
            delta_2ph,
            gamma_g,
        } => {
            check_dispersive("omega_a/delta_a", omega_a, delta_a);
            check_dispersive("omega_b/delta_b", omega_b, delta_b);
            let v_d = (omega_a * omega_a / delta_a).min(omega_b * omega_b / delta_b);
            eps_2ph = (v_d / delta_2ph).powi(2);
            let delta_min = delta_a.abs().min(delta_b.abs());
            (v_d, v_d.abs() / delta_min * gamma_g, eps_2ph <= opts.max_eps_2ph)
        }
        SchemeParams::Hyperfine {
            omega_a,
            omega_b,
            delta_a,
            delta_b,
            delta_g,
        } => {
            let v_d = (omega_a * omega_a / delta_a).min(omega_b * omega_b / delta_b);
            let (ra, rb) = hyperfine_residuals(delta_a, delta_b, delta_g);
            let worst = ra.abs().max(rb.abs());
            residual = Some(worst);
            (v_d, 0.0, worst <= opts.max_residual)
        }
        SchemeParams::FineStructure {
            omega_p,
            delta_p,
            omega_a,
            omega_b,
            delta_a,
            delta_b,
            gamma_g,
        } => {
            check_dispersive("omega_p/delta_p", omega_p, delta_p);
            let dressing = (omega_p / delta_p).powi(2);
            let v_d = dressing * (omega_a * omega_a / delta_a).min(omega_b * omega_b / delta_b);
            (v_d, dressing * gamma_g, true)
        }
        SchemeParams::Turnout {
            lambda1,
            lambda2,
            gamma_e,
            delta,
            omega,
            ..
        } => {
            check_dispersive("omega/delta", omega, delta);
            tilt_alpha = Some((lambda2 / lambda1).acos());
            (omega * omega / delta, (omega / delta).powi(2) * gamma_e, true)
        }
    };
    let depth_ok = v_d > opts.e_r;
    let trap = if depth_ok {
        Some(trap_parameters(v_d, opts.e_r, opts.a_s, opts.lz)?)
    } else {
        None
    };
    Ok(FeasibilityReport {
        scheme: params.name(),
        v_d,
        e_r: opts.e_r,
        eps_2ph,
        gamma_star,
        omega_t: trap.map(|t| t.omega_t),
        l0_over_d: trap.map(|t| t.l0_over_d),
        j_ratio_diag: trap.map(|t| t.j_ratio_diag),
        u_estimate: trap.and_then(|t| t.u_estimate),
        residual,
        tilt_alpha,
        flags: FeasibilityFlags {
            depth_ok,
            leakage_ok,
            coherence_ok: gamma_star <= opts.max_gamma_star,
        },
    })
}

/// Writes `x,y,V_a,V_b` on an `n × n` grid over `[0, extent)²` (units of `d`),
/// potentials in units of the scheme's depth.
pub fn write_potential_map<W: Write>(
    mut w: W,
    params: &SchemeParams,
    theta: f64,
    n: usize,
    extent: f64,
) -> Result<()> {
    params.validate()?;
    let v_d = match *params {
        SchemeParams::Ideal {
            omega_a, delta_a, ..
        }
        | SchemeParams::Hyperfine {
            omega_a, delta_a, ..
        } => omega_a * omega_a / delta_a,
        _ => {
            return Err(Error::Input(format!(
                "potential maps are available for the ideal and hyperfine schemes, not {}",
                params.name()
            )))
        }
    };
    let unit = if v_d != 0.0 { v_d.abs() } else { 1.0 };
    let io = |e: io::Error| Error::Input(format!("write failed: {e}"));
    writeln!(w, "x,y,V_a,V_b").map_err(io)?;
    for i in 0..n {
        for j in 0..n {
            let r = Vec2::new(extent * i as f64 / n as f64, extent * j as f64 / n as f64);
            let (va, vb) = match params {
                SchemeParams::Ideal { .. } => potential_ideal(params, theta, r)?,
                _ => {
                    let p = potential_hyperfine(params, r, theta)?;
                    (p.v_a, p.v_b)
                }
            };
            writeln!(w, "{},{},{},{}", sig(r.x, 9), sig(r.y, 9), sig(va / unit, 9), sig(vb / unit, 9))
                .map_err(io)?;
        }
    }
    Ok(())
}
