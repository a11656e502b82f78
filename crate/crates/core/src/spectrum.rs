//! Band structures, densities of states and band metrics.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig;
use crate::geometry::{LatticeKind, MoireCell, Vec2};
use crate::model::{bloch_eigenvalues, neighbor_table, BondTable, HoppingModel};

/// Eigenvalues closer than this (units of J) count as touching.
pub const TOUCHING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KPoint {
    pub label: String,
    /// Fractional coordinates in the `(B1, B2)` basis.
    pub frac: [f64; 2],
}

impl KPoint {
    fn new(label: &str, f1: f64, f2: f64) -> Self {
        KPoint {
            label: label.to_string(),
            frac: [f1, f2],
        }
    }
}

/// High-symmetry points of the Moiré Brillouin zone.
///
/// Square: Γ, X = B1/2, M = (B1 + B2)/2. Honeycomb: Γ, M = B1/2 and the zone corner K.
pub fn symmetry_points(cell: &MoireCell) -> Vec<KPoint> {
    match cell.kind() {
        LatticeKind::Square => vec![
            KPoint::new("G", 0.0, 0.0),
            KPoint::new("X", 0.5, 0.0),
            KPoint::new("M", 0.5, 0.5),
        ],
        LatticeKind::Honeycomb => {
            let k = if cell.b1.dot(&cell.b2) < 0.0 {
                KPoint::new("K", 2.0 / 3.0, 1.0 / 3.0)
            } else {
                KPoint::new("K", 1.0 / 3.0, 1.0 / 3.0)
            };
            vec![KPoint::new("G", 0.0, 0.0), KPoint::new("M", 0.5, 0.0), k]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KPath {
    pub waypoints: Vec<KPoint>,
    pub samples_per_segment: usize,
}

impl KPath {
    /// Γ-X-M-Γ for square cells, Γ-M-K-Γ for honeycomb cells.
    pub fn standard(cell: &MoireCell, samples_per_segment: usize) -> Self {
        let mut waypoints = symmetry_points(cell);
        waypoints.push(waypoints[0].clone());
        KPath {
            waypoints,
            samples_per_segment,
        }
    }

    /// Cumulative path length and Cartesian wavevector of every sample.
    pub fn sample(&self, cell: &MoireCell) -> (Vec<f64>, Vec<Vec2>) {
        let per = self.samples_per_segment.max(1);
        let mut s = Vec::new();
        let mut ks = Vec::new();
        let mut travelled = 0.0;
        let at = |p: &KPoint| cell.k_from_fractional(p.frac[0], p.frac[1]);
        for (seg, pair) in self.waypoints.windows(2).enumerate() {
            let (a, b) = (at(&pair[0]), at(&pair[1]));
            let len = (b - a).norm();
            let start = if seg == 0 { 0 } else { 1 };
            for i in start..=per {
                let t = i as f64 / per as f64;
                s.push(travelled + t * len);
                ks.push(a + (b - a) * t);
            }
            travelled += len;
        }
        if self.waypoints.len() == 1 {
            s.push(0.0);
            ks.push(at(&self.waypoints[0]));
        }
        (s, ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandStructure {
    pub s: Vec<f64>,
    pub k: Vec<Vec2>,
    /// `omega[sample][band]`, ascending within each sample.
    pub omega: Vec<Vec<f64>>,
    /// Path position of each waypoint.
    pub ticks: Vec<(String, f64)>,
}

impl BandStructure {
    pub fn band_count(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }

    /// Writes `s,kx,ky,band_1..band_N` with energies in units of `j`.
    pub fn write_csv<W: Write>(&self, mut w: W, j: f64) -> io::Result<()> {
        let header: Vec<String> = (1..=self.band_count()).map(|b| format!("band_{b}")).collect();
        writeln!(w, "s,kx,ky,{}", header.join(","))?;
        for ((s, k), row) in self.s.iter().zip(&self.k).zip(&self.omega) {
            let vals: Vec<String> = row.iter().map(|x| sig(x / j, 9)).collect();
            writeln!(w, "{},{},{},{}", sig(*s, 9), sig(k.x, 9), sig(k.y, 9), vals.join(","))?;
        }
        Ok(())
    }
}

pub fn bands(cell: &MoireCell, model: &HoppingModel, path: &KPath) -> Result<BandStructure> {
    if path.waypoints.is_empty() {
        return Err(Error::Input("k-path has no waypoints".into()));
    }
    let table = neighbor_table(cell, model)?;
    let (s, k) = path.sample(cell);
    let omega = k
        .par_iter()
        .map(|&kk| bloch_eigenvalues(cell, &table, kk))
        .collect::<Result<Vec<_>>>()?;
    let per = path.samples_per_segment.max(1);
    let ticks = path
        .waypoints
        .iter()
        .enumerate()
        .map(|(i, p)| (p.label.clone(), s[(i * per).min(s.len() - 1)]))
        .collect();
    Ok(BandStructure { s, k, omega, ticks })
}

/// Eigenvalues on an `n × n` grid of the Moiré Brillouin zone.
///
/// Point `(i1, i2)` sits at fractional coordinates `((i1 + offset)/n, (i2 + offset)/n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandGrid {
    pub n: usize,
    pub offset: f64,
    /// `omega[i1 * n + i2][band]`, ascending.
    pub omega: Vec<Vec<f64>>,
}

pub fn band_grid(cell: &MoireCell, model: &HoppingModel, n: usize, offset: f64) -> Result<BandGrid> {
    let table = neighbor_table(cell, model)?;
    band_grid_with_table(cell, &table, n, offset)
}

pub fn band_grid_with_table(cell: &MoireCell, table: &BondTable, n: usize, offset: f64) -> Result<BandGrid> {
    if n == 0 {
        return Err(Error::Input("k-grid size must be positive".into()));
    }
    let omega = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i1, i2) = (idx / n, idx % n);
            let k = cell.k_from_fractional((i1 as f64 + offset) / n as f64, (i2 as f64 + offset) / n as f64);
            bloch_eigenvalues(cell, table, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BandGrid { n, offset, omega })
}

impl BandGrid {
    pub fn band_count(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }

    pub fn band_min(&self, band: usize) -> f64 {
        self.omega.iter().map(|w| w[band]).fold(f64::INFINITY, f64::min)
    }

    pub fn band_max(&self, band: usize) -> f64 {
        self.omega.iter().map(|w| w[band]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Eigenvalues at fractional `(f1, f2)` if that point lies on the grid.
    pub fn at_fractional(&self, f1: f64, f2: f64) -> Option<&[f64]> {
        let n = self.n as f64;
        let idx = |f: f64| {
            let x = f * n - self.offset;
            let r = x.round();
            ((x - r).abs() < 1e-9).then(|| (r as i64).rem_euclid(self.n as i64) as usize)
        };
        Some(&self.omega[idx(f1)? * self.n + idx(f2)?])
    }

    /// `min ω_top − max ω_{top−1}`; positive when the top band is isolated.
    pub fn top_gap(&self) -> f64 {
        let b = self.band_count();
        if b < 2 {
            return f64::INFINITY;
        }
        self.band_min(b - 1) - self.band_max(b - 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DosResult {
    pub n: usize,
    pub bin_width: f64,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
}

/// Histogram of the band energies over the `n × n` grid with offset 0, bin width `2πJ/n`.
pub fn dos(cell: &MoireCell, model: &HoppingModel, n: usize) -> Result<DosResult> {
    let grid = band_grid(cell, model, n, 0.0)?;
    DosResult::from_grid(&grid, model.j)
}

impl DosResult {
    /// Bins are centred on integer multiples of the width, with one empty bin
    /// added at each end so the trapezoid rule integrates the density to one.
    pub fn from_grid(grid: &BandGrid, j: f64) -> Result<DosResult> {
        if !(j > 0.0) {
            return Err(Error::Input("the density of states needs J > 0 to set the bin width".into()));
        }
        let w = 2.0 * std::f64::consts::PI * j / grid.n as f64;
        let all = grid.omega.iter().flatten();
        let bin = |x: f64| (x / w).round() as i64;
        let lo = all.clone().map(|&x| bin(x)).min().unwrap_or(0) - 1;
        let hi = all.clone().map(|&x| bin(x)).max().unwrap_or(0) + 1;
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for &x in all {
            counts[(bin(x) - lo) as usize] += 1;
        }
        let total: u64 = counts.iter().sum();
        let density = counts.iter().map(|&c| c as f64 / (total as f64 * w)).collect();
        let bin_centers = (lo..=hi).map(|i| i as f64 * w).collect();
        Ok(DosResult {
            n: grid.n,
            bin_width: w,
            bin_centers,
            counts,
            density,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trapezoid_integral(&self) -> f64 {
        self.density
            .windows(2)
            .map(|p| 0.5 * (p[0] + p[1]) * self.bin_width)
            .sum()
    }

    /// Density at the bin containing `omega`, zero outside the histogram.
    pub fn density_at(&self, omega: f64) -> f64 {
        let first = self.bin_centers.first().copied().unwrap_or(0.0);
        let i = ((omega - first) / self.bin_width).round();
        if i < 0.0 || i as usize >= self.density.len() {
            0.0
        } else {
            self.density[i as usize]
        }
    }

    /// Bin centre with the largest density inside `[lo, hi]`.
    pub fn peak_in(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        self.bin_centers
            .iter()
            .zip(&self.density)
            .filter(|(w, _)| (lo..=hi).contains(*w))
            .fold(None, |best: Option<(f64, f64)>, (&w, &d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((w, d)),
            })
    }

    /// Writes `omega_over_J,count,density`.
    pub fn write_csv<W: Write>(&self, mut w: W, j: f64) -> io::Result<()> {
        writeln!(w, "omega_over_J,count,density")?;
        for ((c, n), d) in self.bin_centers.iter().zip(&self.counts).zip(&self.density) {
            writeln!(w, "{},{},{}", sig(c / j, 9), n, sig(d * j, 9))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Touching {
    pub omega: f64,
    pub label: String,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMetrics {
    pub bandwidths: Vec<f64>,
    /// `gaps[j] = min ω_{j+1} − max ω_j`; negative when bands overlap.
    pub gaps: Vec<f64>,
    pub isolated_top: bool,
    /// Number of bands in the topmost group connected by non-positive gaps.
    pub top_group: usize,
    pub top_group_width: f64,
    pub touchings: Vec<Touching>,
}

/// Bandwidths, gaps and degeneracies at the symmetry points present on the grid.
pub fn band_metrics(cell: &MoireCell, grid: &BandGrid) -> BandMetrics {
    let nb = grid.band_count();
    let mins: Vec<f64> = (0..nb).map(|b| grid.band_min(b)).collect();
    let maxs: Vec<f64> = (0..nb).map(|b| grid.band_max(b)).collect();
    let bandwidths = mins.iter().zip(&maxs).map(|(lo, hi)| hi - lo).collect();
    let gaps: Vec<f64> = (1..nb).map(|b| mins[b] - maxs[b - 1]).collect();
    let isolated_top = gaps.last().is_some_and(|&g| g > 0.0);
    let top_group = 1 + gaps.iter().rev().take_while(|&&g| g <= 0.0).count();
    let top_group_width = if nb == 0 {
        0.0
    } else {
        maxs[nb - 1] - mins[nb - top_group..].iter().copied().fold(f64::INFINITY, f64::min)
    };

    let mut touchings = Vec::new();
    for p in symmetry_points(cell) {
        let Some(ev) = grid.at_fractional(p.frac[0], p.frac[1]) else {
            continue;
        };
        let mut start = 0;
        for i in 1..=ev.len() {
            if i == ev.len() || ev[i] - ev[i - 1] > TOUCHING_TOL {
                if i - start >= 2 {
                    touchings.push(Touching {
                        omega: ev[start..i].iter().sum::<f64>() / (i - start) as f64,
                        label: p.label.clone(),
                        multiplicity: i - start,
                    });
                }
                start = i;
            }
        }
    }
    BandMetrics {
        bandwidths,
        gaps,
        isolated_top,
        top_group,
        top_group_width,
        touchings,
    }
}

/// Top-band gap as a function of `J_perp` on an `n × n` grid.
pub fn top_gap(cell: &MoireCell, model: &HoppingModel, n: usize) -> Result<f64> {
    Ok(band_grid(cell, model, n, 0.0)?.top_gap())
}

/// Bisects the `J_perp/J` at which the top band detaches, to within `tol`.
///
/// `base` supplies `J` and the range mode; its `j_perp` is ignored.
pub fn critical_ratio(
    cell: &MoireCell,
    base: &HoppingModel,
    range: (f64, f64),
    tol: f64,
    n: usize,
) -> Result<f64> {
    let (mut lo, mut hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && tol > 0.0) {
        return Err(Error::Input(format!("bad search interval [{lo}, {hi}] or tolerance {tol}")));
    }
    let j = base.j;
    let gap = |r: f64| top_gap(cell, &base.with_j_perp(r * j), n);
    let (g_lo, g_hi) = (gap(lo)?, gap(hi)?);
    if !(g_lo <= 0.0 && g_hi > 0.0) {
        return Err(Error::Bracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_moire_cell, commensurate_angle};

    fn cell(m: i64, n: i64) -> MoireCell {
        build_moire_cell(commensurate_angle(LatticeKind::Square, m, n).unwrap()).unwrap()
    }

    #[test]
    fn path_samples() {
        let c = cell(2, 1);
        let path = KPath::standard(&c, 10);
        let (s, k) = path.sample(&c);
        assert_eq!(s.len(), 31);
        assert_eq!(k[0], Vec2::zeros());
        assert!((k[10] - c.b1 * 0.5).norm() < 1e-12);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(k[30].norm() < 1e-12);
    }

    #[test]
    fn gamma_bands_and_periodicity() {
        let c = cell(2, 1);
        let model = HoppingModel::minimal(1.0, 0.0);
        let path = KPath {
            waypoints: vec![KPoint::new("G", 0.0, 0.0), KPoint::new("G'", 1.0, 0.0)],
            samples_per_segment: 1,
        };
        let b = bands(&c, &model, &path).unwrap();
        assert_eq!(b.band_count(), 10);
        for (x, y) in b.omega[0].iter().zip(&b.omega[1]) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((b.omega[0][0] + 4.0).abs() < 1e-10 && (b.omega[0][1] + 4.0).abs() < 1e-10);
    }

    #[test]
    fn strong_coupling_isolates_top_band() {
        let c = cell(2, 1);
        let grid = band_grid(&c, &HoppingModel::minimal(1.0, 4.0), 16, 0.0).unwrap();
        let m = band_metrics(&c, &grid);
        assert!(m.isolated_top);
        assert!(*m.gaps.last().unwrap() > 0.0);
        let flat = band_grid(&c, &HoppingModel::minimal(1.0, 0.0), 16, 0.0).unwrap();
        assert!(!band_metrics(&c, &flat).isolated_top);
    }

    #[test]
    fn dos_counts_and_normalisation() {
        let c = cell(2, 1);
        let d = dos(&c, &HoppingModel::minimal(1.0, 0.0), 32).unwrap();
        assert_eq!(d.total(), 32 * 32 * 10);
        assert!((d.trapezoid_integral() - 1.0).abs() < 1e-12);
        assert_eq!(*d.counts.first().unwrap(), 0);
        assert_eq!(*d.counts.last().unwrap(), 0);
        let mut buf = Vec::new();
        d.write_csv(&mut buf, 1.0).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("omega_over_J,count,density\n"));
    }

    #[test]
    fn dos_symmetric_at_zero_coupling() {
        let c = cell(2, 1);
        let d = dos(&c, &HoppingModel::minimal(1.0, 0.0), 64).unwrap();
        let (w, _) = d.peak_in(-10.0, 10.0).unwrap();
        assert!(w.abs() < 1e-12);
        for (x, dens) in d.bin_centers.iter().zip(&d.density) {
            assert!((dens - d.density_at(-x)).abs() < 1e-12);
        }
    }

    #[test]
    fn critical_ratio_bracket_error() {
        let c = cell(2, 1);
        let r = critical_ratio(&c, &HoppingModel::minimal(1.0, 0.0), (0.0, 0.1), 0.01, 8);
        assert!(matches!(r, Err(Error::Bracket { .. })));
    }

    #[test]
    fn touchings_at_gamma_without_coupling() {
        let c = cell(2, 1);
        let grid = band_grid(&c, &HoppingModel::minimal(1.0, 0.0), 4, 0.0).unwrap();
        let m = band_metrics(&c, &grid);
        let at_gamma: Vec<_> = m.touchings.iter().filter(|t| t.label == "G").collect();
        assert_eq!(at_gamma.len(), 2);
        assert_eq!(at_gamma[0].multiplicity, 2);
        assert_eq!(at_gamma[1].multiplicity, 8);
    }

    #[test]
    fn bands_csv_shape() {
        let c = cell(2, 1);
        let b = bands(&c, &HoppingModel::minimal(1.0, 4.0), &KPath::standard(&c, 5)).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf, 1.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 13);
        assert_eq!(text.lines().count(), 17);
    }
}
