//! A quantum emitter coupled to the bilayer bath, single-excitation sector.
//!
//! The emitter has energy `Δ` and couples with real strength `g` to one layer-`a`
//! site. Bath and emitter together form a sparse real Hamiltonian that is
//! propagated with a Chebyshev expansion; gap physics (bound states and
//! effective couplings) comes from the bath Green's function on the Bloch grid.

use std::f64::consts::PI;
use std::io::{self, Write};

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig;
use crate::geometry::{Layer, MoireCell, TiledLattice, Vec2};
use crate::model::{
    bloch_matrix_unchecked, eigh, neighbor_table, real_space_hamiltonian, BondTable, HoppingModel,
    RealSpaceOperator,
};

/// Largest tolerated `max |1 − ⟨ψ|ψ⟩|` over a run.
pub const NORM_LIMIT: f64 = 1e-6;

/// Chebyshev coefficients below this magnitude are dropped.
const CHEBYSHEV_FLOOR: f64 = 1e-17;

/// Angular half-width of the anisotropy sectors.
pub const SECTOR_HALF_WIDTH: f64 = 15.0 * PI / 180.0;

/// Radial window (units of the Moiré diagonal) for localisation fits.
pub const FIT_WINDOW: (f64, f64) = (2.0, 10.0);

/// Shell thickness (units of the Moiré diagonal) for the decay envelope.
pub const SHELL_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmitterSpec {
    pub g: f64,
    /// Emitter energy measured from the on-site reference.
    pub delta: f64,
    /// Moiré-cell site index (layer `a`) the emitter couples to, in the
    /// central supercell. `None` picks the coincidence site.
    pub attach: Option<usize>,
    /// On-site interaction of the emitter level; inert with one excitation.
    pub u_c: f64,
}

impl EmitterSpec {
    pub fn new(g: f64, delta: f64) -> Self {
        EmitterSpec {
            g,
            delta,
            attach: None,
            u_c: 0.0,
        }
    }

    pub fn at(self, site: usize) -> Self {
        EmitterSpec {
            attach: Some(site),
            ..self
        }
    }

    /// Validated Moiré-cell site index of the attachment.
    pub fn attach_site(&self, cell: &MoireCell) -> Result<usize> {
        if !(self.g.is_finite() && self.delta.is_finite()) {
            return Err(Error::Input("g and delta must be finite".into()));
        }
        let s = self.attach.unwrap_or_else(|| cell.coincidence_site());
        match cell.sites.get(s) {
            Some(site) if site.layer == Layer::A => Ok(s),
            Some(_) => Err(Error::Input(format!("attach site {s} is not on layer a"))),
            None => Err(Error::Input(format!("attach site {s} outside the cell"))),
        }
    }

    /// Index of the attachment in the tiled lattice.
    pub fn tiled_site(&self, lattice: &TiledLattice) -> Result<usize> {
        let s = self.attach_site(&lattice.cell)?;
        let [c1, c2] = lattice.central_cell();
        Ok(lattice.index(c1, c2, s))
    }
}

/// Bessel functions `J_0(x) … J_kmax(x)` by Miller's backward recurrence,
/// normalised with `J_0 + 2 Σ J_2k = 1`.
pub fn bessel_j(x: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let mut start = kmax.max(ax.ceil() as usize) + 20 + (10.0 * ax.sqrt()) as usize;
    start += start % 2;
    let mut j = vec![0.0; start + 2];
    j[start] = 1e-30;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / ax * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e200 {
            j[k - 1..].iter_mut().for_each(|v| *v *= 1e-200);
        }
    }
    let norm = j[0] + 2.0 * j[2..=start].iter().step_by(2).sum::<f64>();
    for (k, o) in out.iter_mut().enumerate() {
        let sign = if x < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
        *o = sign * j[k] / norm;
    }
    out
}

/// `e^{−iH dt}` as a Chebyshev series on the Gershgorin interval of `H`.
#[derive(Debug, Clone)]
pub struct Propagator {
    op: RealSpaceOperator,
    center: f64,
    half_width: f64,
    coeffs: Vec<Complex64>,
    phase: Complex64,
    pub dt: f64,
}

impl Propagator {
    pub fn new(op: RealSpaceOperator, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Input(format!("time step must be finite and nonzero, got {dt}")));
        }
        let (lo, hi) = op.gershgorin_bounds();
        let center = 0.5 * (hi + lo);
        let half_width = (0.5 * (hi - lo)).max(1e-12) * (1.0 + 1e-3);
        let x = half_width * dt;
        let kmax = x.abs().ceil() as usize + 64;
        let jk = bessel_j(x, kmax);
        let mut coeffs: Vec<Complex64> = jk
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                let mi = Complex64::new(0.0, -1.0).powu(k as u32);
                mi * if k == 0 { j } else { 2.0 * j }
            })
            .collect();
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.norm() < CHEBYSHEV_FLOOR) {
            coeffs.pop();
        }
        Ok(Propagator {
            op,
            center,
            half_width,
            coeffs,
            phase: Complex64::from_polar(1.0, -center * dt),
            dt,
        })
    }

    pub fn operator(&self) -> &RealSpaceOperator {
        &self.op
    }

    pub fn terms(&self) -> usize {
        self.coeffs.len()
    }

    fn scaled_apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.op.apply(x, y);
        let (b, a) = (self.center, self.half_width);
        y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi = (*yi - xi * b) / a);
    }

    /// Advances `psi` by one step.
    pub fn step(&self, psi: &mut [Complex64]) {
        let n = psi.len();
        let mut prev = psi.to_vec();
        let mut cur = vec![Complex64::default(); n];
        let mut next = vec![Complex64::default(); n];
        let mut acc: Vec<Complex64> = prev.iter().map(|v| v * self.coeffs[0]).collect();
        if self.coeffs.len() > 1 {
            self.scaled_apply(&prev, &mut cur);
            let c1 = self.coeffs[1];
            acc.par_iter_mut().zip(cur.par_iter()).for_each(|(a, v)| *a += v * c1);
        }
        for &ck in self.coeffs.iter().skip(2) {
            self.scaled_apply(&cur, &mut next);
            next.par_iter_mut()
                .zip(prev.par_iter())
                .zip(acc.par_iter_mut())
                .for_each(|((nx, p), a)| {
                    *nx = *nx * 2.0 - p;
                    *a += *nx * ck;
                });
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        psi.par_iter_mut().zip(acc.par_iter()).for_each(|(p, a)| *p = a * self.phase);
    }

    /// `⟨ψ|H|ψ⟩`.
    pub fn energy(&self, psi: &[Complex64]) -> f64 {
        let mut h = vec![Complex64::default(); psi.len()];
        self.op.apply(psi, &mut h);
        psi.iter().zip(&h).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

// Sequential on purpose: a parallel reduction would make results depend on scheduling.
fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionResult {
    pub times: Vec<f64>,
    pub c_e: Vec<Complex64>,
    /// Bath amplitudes at the final time, indexed like the tiled lattice.
    pub final_field: Vec<Complex64>,
    pub norm_drift: f64,
    /// Tiled-lattice index of the attachment site.
    pub attach: usize,
}

impl EmissionResult {
    pub fn populations(&self) -> Vec<f64> {
        self.c_e.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Writes `tJ,re_Ce,im_Ce,pop`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "tJ,re_Ce,im_Ce,pop")?;
        for (t, c) in self.times.iter().zip(&self.c_e) {
            writeln!(w, "{},{},{},{}", sig(*t, 9), sig(c.re, 9), sig(c.im, 9), sig(c.norm_sqr(), 9))?;
        }
        Ok(())
    }
}

/// Bath plus emitter; the emitter is the last basis state.
pub fn emitter_hamiltonian(
    lattice: &TiledLattice,
    model: &HoppingModel,
    emitter: &EmitterSpec,
) -> Result<(RealSpaceOperator, usize)> {
    let site = emitter.tiled_site(lattice)?;
    let bath = real_space_hamiltonian(lattice, model)?;
    Ok((bath.with_emitter(site, emitter.g, emitter.delta)?, site))
}

/// Evolves `|e⟩` to `tmax`, recording `C_e` every `dt`.
pub fn evolve(
    lattice: &TiledLattice,
    model: &HoppingModel,
    emitter: &EmitterSpec,
    dt: f64,
    tmax: f64,
) -> Result<EmissionResult> {
    if !(dt > 0.0 && tmax >= 0.0 && tmax.is_finite()) {
        return Err(Error::Input(format!("need dt > 0 and tmax >= 0, got {dt}, {tmax}")));
    }
    let (op, attach) = emitter_hamiltonian(lattice, model, emitter)?;
    let e = op.dim - 1;
    let prop = Propagator::new(op, dt)?;
    let steps = (tmax / dt).round() as usize;
    let mut psi = vec![Complex64::default(); e + 1];
    psi[e] = Complex64::new(1.0, 0.0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut c_e = Vec::with_capacity(steps + 1);
    times.push(0.0);
    c_e.push(psi[e]);
    let mut drift: f64 = 0.0;
    for s in 1..=steps {
        prop.step(&mut psi);
        drift = drift.max((1.0 - norm_sqr(&psi)).abs());
        times.push(s as f64 * dt);
        c_e.push(psi[e]);
    }
    if drift > NORM_LIMIT {
        return Err(Error::IntegratorAccuracy {
            drift,
            limit: NORM_LIMIT,
        });
    }
    psi.pop();
    Ok(EmissionResult {
        times,
        c_e,
        final_field: psi,
        norm_drift: drift,
        attach,
    })
}

/// Least-squares line `y = slope·x + intercept` with its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = x[..n].iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y[..n].iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Exponential decay rate of `pop(t)` fitted on `t ≤ t_end`, with R² of the log fit.
pub fn fit_decay_rate(times: &[f64], pops: &[f64], t_end: f64) -> Option<(f64, f64)> {
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(pops)
        .filter(|(t, p)| **t <= t_end && **p > 0.0)
        .map(|(t, p)| (*t, p.ln()))
        .unzip();
    linear_fit(&x, &y).map(|(slope, _, r2)| (-slope, r2))
}

/// Bloch eigenpairs on the grid `k = (p1 B1 + p2 B2)/n`, flattened as `p1 * n + p2`.
struct ModeGrid {
    n: usize,
    sites: usize,
    energies: Vec<Vec<f64>>,
    vectors: Vec<DMatrix<Complex64>>,
}

impl ModeGrid {
    fn new(cell: &MoireCell, table: &BondTable, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("k-grid size must be positive".into()));
        }
        let pairs = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let k = cell.k_from_fractional((idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64);
                eigh(bloch_matrix_unchecked(cell, table, k)).ok_or(Error::Eigensolver { kx: k.x, ky: k.y })
            })
            .collect::<Result<Vec<_>>>()?;
        let (energies, vectors) = pairs.into_iter().unzip();
        Ok(ModeGrid {
            n,
            sites: cell.site_count(),
            energies,
            vectors,
        })
    }

    fn nk(&self) -> f64 {
        (self.n * self.n) as f64
    }

    /// `(ω, |u(s)|²)` for every mode.
    fn weights(&self, s: usize) -> Vec<(f64, f64)> {
        self.energies
            .iter()
            .zip(&self.vectors)
            .flat_map(|(e, v)| e.iter().enumerate().map(move |(j, &w)| (w, v[(s, j)].norm_sqr())))
            .collect()
    }

    fn band_edges(&self) -> Vec<(f64, f64)> {
        (0..self.sites)
            .map(|b| {
                self.energies.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                    (lo.min(e[b]), hi.max(e[b]))
                })
            })
            .collect()
    }

    /// `(1/N_k) Σ_{k,j} u_j(k;s) u_j*(k;s0) e^{ik·ΔR} f(ω_j(k))` for every
    /// cell offset `ΔR = (d1 T1 + d2 T2)` with `d1, d2` in `0..n`, and every `s`.
    /// Returns `out[(d1 * n + d2) * sites + s]`.
    fn lattice_sum(&self, s0: usize, f: impl Fn(f64) -> f64 + Sync) -> Vec<Complex64> {
        let (n, ns) = (self.n, self.sites);
        // a[(p1 * n + p2) * ns + s]
        let a: Vec<Complex64> = (0..n * n)
            .into_par_iter()
            .flat_map_iter(|idx| {
                let (e, v) = (&self.energies[idx], &self.vectors[idx]);
                let f = &f;
                (0..ns).map(move |s| {
                    (0..ns)
                        .map(|j| v[(s, j)] * v[(s0, j)].conj() * f(e[j]))
                        .sum::<Complex64>()
                })
            })
            .collect();
        let twiddle: Vec<Complex64> = (0..n)
            .map(|q| Complex64::from_polar(1.0, 2.0 * PI * q as f64 / n as f64))
            .collect();
        // Transform over p2, then p1.
        let mut b = vec![Complex64::default(); n * n * ns];
        b.par_chunks_mut(n * ns).enumerate().for_each(|(p1, row)| {
            for d2 in 0..n {
                for p2 in 0..n {
                    let w = twiddle[(p2 * d2) % n];
                    let src = &a[(p1 * n + p2) * ns..(p1 * n + p2 + 1) * ns];
                    for (o, x) in row[d2 * ns..(d2 + 1) * ns].iter_mut().zip(src) {
                        *o += x * w;
                    }
                }
            }
        });
        let nk = self.nk();
        let mut out = vec![Complex64::default(); n * n * ns];
        out.par_chunks_mut(n * ns).enumerate().for_each(|(d1, row)| {
            for p1 in 0..n {
                let w = twiddle[(p1 * d1) % n];
                for (o, x) in row.iter_mut().zip(&b[p1 * n * ns..(p1 + 1) * n * ns]) {
                    *o += x * w;
                }
            }
            row.iter_mut().for_each(|o| *o /= nk);
        });
        out
    }
}

fn gaussian(x: f64, eta: f64) -> f64 {
    (-(x * x) / (2.0 * eta * eta)).exp() / (eta * (2.0 * PI).sqrt())
}

/// Default broadening: twice the histogram bin width `2πJ/n`.
pub fn default_eta(j: f64, n: usize) -> f64 {
    2.0 * 2.0 * PI * j / n as f64
}

/// Golden-rule decay rate `2πg² ρ_s0(Δ)` with a Gaussian of width `eta`
/// standing in for the delta function, on an `n × n` grid.
pub fn markov_rate(
    cell: &MoireCell,
    model: &HoppingModel,
    emitter: &EmitterSpec,
    eta: f64,
    n: usize,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Input(format!("broadening must be positive, got {eta}")));
    }
    let s0 = emitter.attach_site(cell)?;
    if emitter.g == 0.0 {
        return Ok(0.0);
    }
    let table = neighbor_table(cell, model)?;
    let modes = ModeGrid::new(cell, &table, n)?;
    let rho: f64 = modes
        .weights(s0)
        .iter()
        .map(|&(w, u2)| u2 * gaussian(emitter.delta - w, eta))
        .sum::<f64>()
        / modes.nk();
    Ok(2.0 * PI * emitter.g * emitter.g * rho)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundState {
    pub energy: f64,
    pub emitter_weight: f64,
    /// Bath amplitudes, indexed like the tiled lattice.
    pub field: Vec<Complex64>,
    /// Amplitude decay length in units of the Moiré diagonal `|T1 + T2|`.
    pub xi: f64,
    pub fit_r2: f64,
    pub anisotropy: f64,
}

/// Solves `E − Δ = Σ(E)` in the gap containing `Δ` and rebuilds the
/// eigenvector from the bath Green's function.
pub fn bound_state(lattice: &TiledLattice, model: &HoppingModel, emitter: &EmitterSpec) -> Result<BoundState> {
    let cell = &lattice.cell;
    let s0 = emitter.attach_site(cell)?;
    let table = neighbor_table(cell, model)?;
    let modes = ModeGrid::new(cell, &table, lattice.nc)?;
    let delta = emitter.delta;
    for (band, &(lo, hi)) in modes.band_edges().iter().enumerate() {
        if delta >= lo && delta <= hi {
            return Err(Error::NotInGap { delta, band, lo, hi });
        }
    }
    let g2 = emitter.g * emitter.g;
    let weights: Vec<(f64, f64)> = modes.weights(s0).into_iter().filter(|&(_, u)| u > 1e-14).collect();
    let nk = modes.nk();
    let sigma = |e: f64| g2 * weights.iter().map(|&(w, u)| u / (e - w)).sum::<f64>() / nk;
    let dsigma = |e: f64| weights.iter().map(|&(w, u)| u / (e - w).powi(2)).sum::<f64>() / nk;
    let f = |e: f64| e - delta - sigma(e);

    let below = weights.iter().map(|p| p.0).filter(|&w| w < delta).fold(f64::NEG_INFINITY, f64::max);
    let above = weights.iter().map(|p| p.0).filter(|&w| w > delta).fold(f64::INFINITY, f64::min);
    let span = 1.0 + emitter.g.abs();
    let mut lo = if below.is_finite() { below } else { delta - span };
    let mut hi = if above.is_finite() { above } else { delta + span };
    while !below.is_finite() && f(lo) > 0.0 {
        lo -= 2.0 * (delta - lo);
    }
    while !above.is_finite() && f(hi) < 0.0 {
        hi += 2.0 * (hi - delta);
    }
    let energy = if g2 == 0.0 {
        delta
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let emitter_weight = 1.0 / (1.0 + g2 * dsigma(energy));
    let ce = emitter_weight.sqrt();
    let green = modes.lattice_sum(s0, |w| 1.0 / (energy - w));
    let ns = cell.site_count();
    let n = lattice.nc;
    let [c01, c02] = lattice.central_cell();
    let mut field = vec![Complex64::default(); lattice.len()];
    for (i, site) in lattice.sites.iter().enumerate() {
        let d1 = (site.cell[0] + n - c01) % n;
        let d2 = (site.cell[1] + n - c02) % n;
        field[i] = green[(d1 * n + d2) * ns + site.basis] * (emitter.g * ce);
    }
    // Renormalise against rounding in the lattice sums.
    let total = ce * ce + norm_sqr(&field);
    let scale = 1.0 / total.sqrt();
    field.iter_mut().for_each(|c| *c *= scale);
    let emitter_weight = emitter_weight / total;

    let origin = emitter.tiled_site(lattice)?;
    let (xi, fit_r2) = localisation_length(lattice, origin, &field);
    let anisotropy = anisotropy(lattice, origin, field.iter().map(|c| c.norm_sqr()));
    Ok(BoundState {
        energy,
        emitter_weight,
        field,
        xi,
        fit_r2,
        anisotropy,
    })
}

/// Decay length and R² of a log-linear fit to the shell-maximum envelope of
/// `|field|` over [`FIT_WINDOW`].
pub fn localisation_length(lattice: &TiledLattice, origin: usize, field: &[Complex64]) -> (f64, f64) {
    let unit = lattice.cell.diagonal_length();
    let shells = ((FIT_WINDOW.1 - FIT_WINDOW.0) / SHELL_WIDTH).round() as usize;
    let mut envelope = vec![0.0f64; shells];
    for (i, c) in field.iter().enumerate() {
        let r = lattice.displacement(origin, i).norm() / unit;
        if r < FIT_WINDOW.0 || r >= FIT_WINDOW.1 {
            continue;
        }
        let s = ((r - FIT_WINDOW.0) / SHELL_WIDTH) as usize;
        envelope[s.min(shells - 1)] = envelope[s.min(shells - 1)].max(c.norm());
    }
    let (x, y): (Vec<f64>, Vec<f64>) = envelope
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 1e-300)
        .map(|(s, a)| (FIT_WINDOW.0 + (s as f64 + 0.5) * SHELL_WIDTH, a.ln()))
        .unzip();
    match linear_fit(&x, &y) {
        Some((slope, _, r2)) if slope < 0.0 => (-1.0 / slope, r2),
        Some((_, _, r2)) => (f64::INFINITY, r2),
        None => (f64::NAN, 0.0),
    }
}

/// Probability within ±15° of the Moiré diagonals `T1 ± T2` divided by the
/// probability within ±15° of the supercell axes `T1`, `T2`. The origin site
/// itself is excluded.
pub fn anisotropy(lattice: &TiledLattice, origin: usize, prob: impl Iterator<Item = f64>) -> f64 {
    let cell = &lattice.cell;
    let diagonals = [cell.t1 + cell.t2, cell.t1 - cell.t2];
    let axes = [cell.t1, cell.t2];
    let near = |r: &Vec2, dirs: &[Vec2; 2]| {
        dirs.iter().any(|d| {
            let cos = (r.dot(d) / (r.norm() * d.norm())).abs().min(1.0);
            cos.acos() <= SECTOR_HALF_WIDTH
        })
    };
    let (mut diag, mut axis) = (0.0, 0.0);
    for (i, p) in prob.enumerate() {
        if i == origin {
            continue;
        }
        let r = lattice.displacement(origin, i);
        if r.norm() < 1e-9 {
            continue;
        }
        if near(&r, &diagonals) {
            diag += p;
        } else if near(&r, &axes) {
            axis += p;
        }
    }
    if axis == 0.0 {
        if diag == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diag / axis
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotPoint {
    /// Displacement from the emitter, minimal image, units of `d`.
    pub x: f64,
    pub y: f64,
    pub layer: Layer,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub points: Vec<SnapshotPoint>,
    pub anisotropy: f64,
    pub bath_probability: f64,
}

/// Bath probabilities at the end of a run, centred on the emitter.
pub fn snapshot(result: &EmissionResult, lattice: &TiledLattice) -> Result<Snapshot> {
    if result.final_field.len() != lattice.len() {
        return Err(Error::Input(format!(
            "field has {} sites, lattice has {}",
            result.final_field.len(),
            lattice.len()
        )));
    }
    let points: Vec<SnapshotPoint> = result
        .final_field
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = lattice.displacement(result.attach, i);
            SnapshotPoint {
                x: r.x,
                y: r.y,
                layer: lattice.layer(i),
                prob: c.norm_sqr(),
            }
        })
        .collect();
    let anisotropy = anisotropy(lattice, result.attach, points.iter().map(|p| p.prob));
    Ok(Snapshot {
        time: result.times.last().copied().unwrap_or(0.0),
        bath_probability: points.iter().map(|p| p.prob).sum(),
        points,
        anisotropy,
    })
}

impl Snapshot {
    /// Writes `x,y,layer,prob`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,layer,prob")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", sig(p.x, 9), sig(p.y, 9), p.layer, sig(p.prob, 9))?;
        }
        Ok(())
    }
}

/// Emitter position: a supercell offset and a Moiré-cell site index (layer `a`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EmitterPosition {
    pub cell: [i64; 2],
    pub site: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingMatrix {
    pub positions: Vec<EmitterPosition>,
    pub jij: DMatrix<f64>,
    pub gammaij: DMatrix<f64>,
}

impl CouplingMatrix {
    /// Writes `i,j,dx,dy,Jij_over_J,gammaij_over_J` for `i <= j`.
    pub fn write_csv<W: Write>(&self, mut w: W, cell: &MoireCell, j_unit: f64) -> io::Result<()> {
        writeln!(w, "i,j,dx,dy,Jij_over_J,gammaij_over_J")?;
        for i in 0..self.positions.len() {
            for j in i..self.positions.len() {
                let d = position_of(cell, &self.positions[i]) - position_of(cell, &self.positions[j]);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    i,
                    j,
                    sig(d.x, 9),
                    sig(d.y, 9),
                    sig(self.jij[(i, j)] / j_unit, 9),
                    sig(self.gammaij[(i, j)] / j_unit, 9)
                )?;
            }
        }
        Ok(())
    }
}

fn position_of(cell: &MoireCell, p: &EmitterPosition) -> Vec2 {
    cell.t1 * p.cell[0] as f64 + cell.t2 * p.cell[1] as f64 + cell.sites[p.site].position
}

/// Bath-mediated exchange `J_ij` and collective decay `γ_ij` between emitters,
/// summed over an `n × n` Bloch grid.
pub fn effective_couplings(
    cell: &MoireCell,
    model: &HoppingModel,
    g: f64,
    delta: f64,
    positions: &[EmitterPosition],
    n: usize,
    eta: f64,
) -> Result<CouplingMatrix> {
    if positions.is_empty() {
        return Err(Error::Input("need at least one emitter position".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::Input(format!("broadening must be positive, got {eta}")));
    }
    for p in positions {
        EmitterSpec::new(g, delta).at(p.site).attach_site(cell)?;
    }
    let table = neighbor_table(cell, model)?;
    let modes = ModeGrid::new(cell, &table, n)?;
    let closest = modes
        .energies
        .iter()
        .flatten()
        .map(|w| (delta - w).abs())
        .fold(f64::INFINITY, f64::min);
    if closest < eta {
        warn!("delta lies within eta = {eta} of a bath level; J_ij is ill-conditioned");
    }
    let m = positions.len();
    let g2 = g * g;
    let nk = modes.nk();
    let mut jij = DMatrix::zeros(m, m);
    let mut gammaij = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let (pa, pb) = (positions[a], positions[b]);
            let dr = cell.t1 * (pa.cell[0] - pb.cell[0]) as f64 + cell.t2 * (pa.cell[1] - pb.cell[1]) as f64;
            let (mut jsum, mut gsum) = (0.0, 0.0);
            for idx in 0..modes.energies.len() {
                let k = cell.k_from_fractional((idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64);
                let phase = Complex64::from_polar(1.0, k.dot(&dr));
                let v = &modes.vectors[idx];
                for (jb, &w) in modes.energies[idx].iter().enumerate() {
                    let amp = (v[(pa.site, jb)] * v[(pb.site, jb)].conj() * phase).re;
                    jsum += amp / (delta - w);
                    gsum += amp * gaussian(delta - w, eta);
                }
            }
            jij[(a, b)] = g2 * jsum / nk;
            jij[(b, a)] = jij[(a, b)];
            gammaij[(a, b)] = 2.0 * PI * g2 * gsum / nk;
            gammaij[(b, a)] = gammaij[(a, b)];
        }
    }
    Ok(CouplingMatrix {
        positions: positions.to_vec(),
        jij,
        gammaij,
    })
}
