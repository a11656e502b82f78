//! Tight-binding Hamiltonians on the Moiré cell and on finite tilings.
//!
//! Sign convention `H = −Σ J c†c` with on-site energies at zero, so the
//! monolayer square dispersion is `−2J(cos kx + cos ky)`.

use std::io::{self, Write};

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig;
use crate::geometry::{MoireCell, TiledLattice, Vec2};

/// Amplitudes below this fraction of the bare hopping are dropped in Gaussian mode.
const GAUSSIAN_FLOOR: f64 = 1e-14;

/// Default cap on the memory held by a sparse real-space operator.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

/// Operators above this dimension apply themselves in parallel.
const PARALLEL_DIM: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RangeMode {
    /// Nearest-neighbour intralayer hopping and interlayer hopping between
    /// coincident sites only.
    Minimal,
    /// Gaussian-overlap hoppings between all pairs within `cutoff_over_d`.
    Gaussian { l0_over_d: f64, cutoff_over_d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoppingModel {
    pub j: f64,
    pub j_perp: f64,
    pub range: RangeMode,
}

impl HoppingModel {
    pub fn minimal(j: f64, j_perp: f64) -> Self {
        HoppingModel {
            j,
            j_perp,
            range: RangeMode::Minimal,
        }
    }

    pub fn gaussian(j: f64, j_perp: f64, l0_over_d: f64, cutoff_over_d: f64) -> Self {
        HoppingModel {
            j,
            j_perp,
            range: RangeMode::Gaussian {
                l0_over_d,
                cutoff_over_d,
            },
        }
    }

    pub fn with_j_perp(self, j_perp: f64) -> Self {
        HoppingModel { j_perp, ..self }
    }

    /// `J = 0` is accepted so that the zero operator can be built.
    pub fn validate(&self) -> Result<()> {
        if !self.j.is_finite() || self.j < 0.0 {
            return Err(Error::Input(format!("J must be finite and non-negative, got {}", self.j)));
        }
        if !self.j_perp.is_finite() || self.j_perp < 0.0 {
            return Err(Error::Input(format!(
                "J_perp must be finite and non-negative, got {}",
                self.j_perp
            )));
        }
        if let RangeMode::Gaussian {
            l0_over_d,
            cutoff_over_d,
        } = self.range
        {
            if !(l0_over_d.is_finite() && l0_over_d > 0.0) {
                return Err(Error::Input(format!("L0/d must be positive, got {l0_over_d}")));
            }
            if !(cutoff_over_d.is_finite() && cutoff_over_d >= 1.0) {
                return Err(Error::Input(format!("cutoff/d must be at least 1, got {cutoff_over_d}")));
            }
        }
        Ok(())
    }

    /// Gershgorin radius of the minimal model: `|ω| ≤ 4J + J_perp` on the square lattice.
    pub fn scale(&self) -> f64 {
        4.0 * self.j + self.j_perp
    }
}

/// Directed hopping `i → j`, where the partner sits at `position(j) + shift·T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub shift: [i64; 2],
    pub amplitude: f64,
}

/// Every bond is stored in both directions.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BondTable {
    pub bonds: Vec<Bond>,
}

impl BondTable {
    pub fn len(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bonds.is_empty()
    }

    pub fn interlayer<'a>(&'a self, cell: &'a MoireCell) -> impl Iterator<Item = &'a Bond> + 'a {
        self.bonds
            .iter()
            .filter(|b| cell.sites[b.i].layer != cell.sites[b.j].layer)
    }

    pub fn intralayer<'a>(&'a self, cell: &'a MoireCell) -> impl Iterator<Item = &'a Bond> + 'a {
        self.bonds
            .iter()
            .filter(|b| cell.sites[b.i].layer == cell.sites[b.j].layer)
    }

    /// Writes `i,j,shift1,shift2,amplitude_over_J`.
    pub fn write_csv<W: Write>(&self, mut w: W, j: f64) -> io::Result<()> {
        writeln!(w, "i,j,shift1,shift2,amplitude_over_J")?;
        let scale = if j != 0.0 { j } else { 1.0 };
        for b in &self.bonds {
            writeln!(
                w,
                "{},{},{},{},{}",
                b.i,
                b.j,
                b.shift[0],
                b.shift[1],
                sig(b.amplitude / scale, 9)
            )?;
        }
        Ok(())
    }
}

pub fn neighbor_table(cell: &MoireCell, model: &HoppingModel) -> Result<BondTable> {
    model.validate()?;
    let mut bonds = match model.range {
        RangeMode::Minimal => minimal_bonds(cell, model)?,
        RangeMode::Gaussian {
            l0_over_d,
            cutoff_over_d,
        } => gaussian_bonds(cell, model, l0_over_d, cutoff_over_d),
    };
    bonds.sort_by(|a, b| (a.i, a.j, a.shift).cmp(&(b.i, b.j, b.shift)));
    Ok(BondTable { bonds })
}

fn minimal_bonds(cell: &MoireCell, model: &HoppingModel) -> Result<Vec<Bond>> {
    let mut bonds = Vec::new();
    if model.j != 0.0 {
        for (i, site) in cell.sites.iter().enumerate() {
            let rot = cell.layer_rotation(site.layer);
            for v in cell.kind().neighbor_vectors(site.basis_index) {
                let target = site.position + rot * v;
                let (j, shift) = cell.locate(site.layer, target).ok_or_else(|| {
                    Error::Consistency(format!("neighbour of site {i} at {target:?} not found"))
                })?;
                bonds.push(Bond {
                    i,
                    j,
                    shift,
                    amplitude: model.j,
                });
            }
        }
    }
    if model.j_perp != 0.0 {
        if cell.coincidences.is_empty() {
            warn!("no coincident sites: the layers stay decoupled");
        }
        for &(a, b) in &cell.coincidences {
            let fa = cell.sites[a].frac;
            let fb = cell.sites[b].frac;
            let shift = [(fa[0] - fb[0]).round() as i64, (fa[1] - fb[1]).round() as i64];
            bonds.push(Bond {
                i: a,
                j: b,
                shift,
                amplitude: model.j_perp,
            });
            bonds.push(Bond {
                i: b,
                j: a,
                shift: [-shift[0], -shift[1]],
                amplitude: model.j_perp,
            });
        }
    }
    Ok(bonds)
}

fn gaussian_bonds(cell: &MoireCell, model: &HoppingModel, l0: f64, cutoff: f64) -> Vec<Bond> {
    let lat = cell.lattice_matrix();
    let inv = lat.try_inverse().expect("supercell is non-degenerate");
    let reach = |row: usize| (cutoff * inv.row(row).norm()).ceil() as i64 + 1;
    let (r1, r2) = (reach(0), reach(1));
    let d_nn2 = cell.kind().nearest_neighbor_distance().powi(2);
    let four_l2 = 4.0 * l0 * l0;
    let mut bonds = Vec::new();
    for (i, si) in cell.sites.iter().enumerate() {
        for (j, sj) in cell.sites.iter().enumerate() {
            let same = si.layer == sj.layer;
            let bare = if same { model.j } else { model.j_perp };
            if bare == 0.0 {
                continue;
            }
            for s1 in -r1..=r1 {
                for s2 in -r2..=r2 {
                    let d = sj.position + lat * Vec2::new(s1 as f64, s2 as f64) - si.position;
                    let r2_ = d.norm_squared();
                    if r2_ > cutoff * cutoff + 1e-12 || (same && r2_ < 1e-18) {
                        continue;
                    }
                    let factor = if same {
                        (-(r2_ - d_nn2) / four_l2).exp()
                    } else {
                        (-r2_ / four_l2).exp()
                    };
                    if factor < GAUSSIAN_FLOOR {
                        continue;
                    }
                    bonds.push(Bond {
                        i,
                        j,
                        shift: [s1, s2],
                        amplitude: bare * factor,
                    });
                }
            }
        }
    }
    bonds
}

/// Bloch Hamiltonian at Cartesian `k` (units 1/d).
///
/// Phases come from supercell translations only, so `H(k + B) = H(k)`.
pub fn bloch_matrix(cell: &MoireCell, table: &BondTable, k: Vec2) -> Result<DMatrix<Complex64>> {
    if !(k.x.is_finite() && k.y.is_finite()) {
        return Err(Error::Input(format!("non-finite wavevector {k:?}")));
    }
    Ok(bloch_matrix_unchecked(cell, table, k))
}

pub(crate) fn bloch_matrix_unchecked(cell: &MoireCell, table: &BondTable, k: Vec2) -> DMatrix<Complex64> {
    let n = cell.site_count();
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    for b in &table.bonds {
        let r = cell.t1 * b.shift[0] as f64 + cell.t2 * b.shift[1] as f64;
        h[(b.i, b.j)] -= Complex64::from_polar(b.amplitude, k.dot(&r));
    }
    h
}

/// Eigenvalues (ascending) and matching eigenvector columns of a Hermitian matrix.
pub fn eigh(h: DMatrix<Complex64>) -> Option<(Vec<f64>, DMatrix<Complex64>)> {
    let n = h.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(h, 1e-14, 10_000)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Some((values, vectors))
}

/// Ascending eigenvalues of the Bloch Hamiltonian.
pub fn bloch_eigenvalues(cell: &MoireCell, table: &BondTable, k: Vec2) -> Result<Vec<f64>> {
    let h = bloch_matrix(cell, table, k)?;
    eigh(h)
        .map(|(v, _)| v)
        .ok_or(Error::Eigensolver { kx: k.x, ky: k.y })
}

/// Real symmetric sparse operator in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSpaceOperator {
    pub dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl RealSpaceOperator {
    fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        RealSpaceOperator {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, amplitude)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// Appends an emitter as the last basis state: energy `delta`, coupling `g` to `site`.
    pub fn with_emitter(&self, site: usize, g: f64, delta: f64) -> Result<RealSpaceOperator> {
        if site >= self.dim {
            return Err(Error::Input(format!("attach site {site} outside 0..{}", self.dim)));
        }
        let e = self.dim;
        let mut entries: Vec<(usize, usize, f64)> = (0..self.dim)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect();
        entries.push((e, e, delta));
        if g != 0.0 {
            entries.push((site, e, g));
            entries.push((e, site, g));
        }
        Ok(RealSpaceOperator::from_triplets(self.dim + 1, entries))
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let row = |r: usize| -> Complex64 { self.row(r).map(|(c, v)| x[c] * v).sum() };
        if self.dim > PARALLEL_DIM {
            y.par_iter_mut().enumerate().for_each(|(r, out)| *out = row(r));
        } else {
            y.iter_mut().enumerate().for_each(|(r, out)| *out = row(r));
        }
    }

    /// Lower and upper spectral bounds from Gershgorin discs.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..self.dim {
            let (mut diag, mut radius) = (0.0, 0.0);
            for (c, v) in self.row(r) {
                if c == r {
                    diag += v;
                } else {
                    radius += v.abs();
                }
            }
            lo = lo.min(diag - radius);
            hi = hi.max(diag + radius);
        }
        if self.dim == 0 {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|r| {
            self.row(r).all(|(c, v)| {
                let back: f64 = self.row(c).filter(|&(cc, _)| cc == r).map(|(_, w)| w).sum();
                (back - v).abs() <= tol
            })
        })
    }
}

pub fn real_space_hamiltonian(lattice: &TiledLattice, model: &HoppingModel) -> Result<RealSpaceOperator> {
    real_space_hamiltonian_with_budget(lattice, model, DEFAULT_MEMORY_BUDGET)
}

/// As [`real_space_hamiltonian`], failing with a capacity error when the
/// operator would need more than `budget` bytes.
pub fn real_space_hamiltonian_with_budget(
    lattice: &TiledLattice,
    model: &HoppingModel,
    budget: usize,
) -> Result<RealSpaceOperator> {
    let cell = &lattice.cell;
    let table = neighbor_table(cell, model)?;
    let nc = lattice.nc as i64;
    let ncells = lattice.nc * lattice.nc;
    let nnz = table.len().saturating_mul(ncells);
    let bytes = nnz
        .saturating_mul(std::mem::size_of::<(usize, usize, f64)>())
        .saturating_add(lattice.len().saturating_mul(std::mem::size_of::<usize>()));
    if bytes > budget {
        return Err(Error::Capacity(format!(
            "operator with {nnz} entries needs ~{bytes} bytes, budget is {budget}"
        )));
    }
    let mut entries = Vec::with_capacity(nnz);
    for c1 in 0..lattice.nc {
        for c2 in 0..lattice.nc {
            for b in &table.bonds {
                let t1 = (c1 as i64 + b.shift[0]).rem_euclid(nc) as usize;
                let t2 = (c2 as i64 + b.shift[1]).rem_euclid(nc) as usize;
                entries.push((lattice.index(c1, c2, b.i), lattice.index(t1, t2, b.j), -b.amplitude));
            }
        }
    }
    Ok(RealSpaceOperator::from_triplets(lattice.len(), entries))
}
