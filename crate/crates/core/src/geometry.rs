//! Commensurate twisted-bilayer geometry.
//!
//! Both layers share a lattice site at the origin, which is also the rotation
//! center. Layer `a` is unrotated and layer `b` is rotated counter-clockwise
//! by the commensurate angle. All lengths are in units of the monolayer
//! lattice constant `d`.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use log::warn;
use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig;

pub type Vec2 = Vector2<f64>;

/// Absolute tolerance (units of `d`) for identifying coincident sites.
pub const COINCIDENCE_TOL: f64 = 1e-9;

/// Largest site count a tiled lattice may address.
pub const MAX_TILED_SITES: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Square,
    Honeycomb,
}

impl LatticeKind {
    /// Primitive vectors of one monolayer.
    pub fn primitive_vectors(self) -> (Vec2, Vec2) {
        match self {
            LatticeKind::Square => (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)),
            LatticeKind::Honeycomb => (Vec2::new(1.0, 0.0), Vec2::new(0.5, 3f64.sqrt() / 2.0)),
        }
    }

    /// Basis offsets inside a primitive cell.
    pub fn basis(self) -> Vec<Vec2> {
        match self {
            LatticeKind::Square => vec![Vec2::zeros()],
            LatticeKind::Honeycomb => {
                let (a1, a2) = self.primitive_vectors();
                vec![Vec2::zeros(), (a1 + a2) / 3.0]
            }
        }
    }

    /// Intralayer nearest-neighbour vectors leaving a site of the given basis index.
    pub fn neighbor_vectors(self, basis_index: usize) -> Vec<Vec2> {
        match self {
            LatticeKind::Square => vec![
                Vec2::new(1.0, 0.0),
                Vec2::new(-1.0, 0.0),
                Vec2::new(0.0, 1.0),
                Vec2::new(0.0, -1.0),
            ],
            LatticeKind::Honeycomb => {
                let (a1, a2) = self.primitive_vectors();
                let d = (a1 + a2) / 3.0;
                let v = [d, d - a1, d - a2];
                let sign = if basis_index == 0 { 1.0 } else { -1.0 };
                v.iter().map(|x| x * sign).collect()
            }
        }
    }

    pub fn nearest_neighbor_distance(self) -> f64 {
        match self {
            LatticeKind::Square => 1.0,
            LatticeKind::Honeycomb => 1.0 / 3f64.sqrt(),
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeKind::Square => write!(f, "square"),
            LatticeKind::Honeycomb => write!(f, "honeycomb"),
        }
    }
}

impl FromStr for LatticeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(LatticeKind::Square),
            "honeycomb" | "hc" => Ok(LatticeKind::Honeycomb),
            other => Err(Error::Input(format!("unknown lattice kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    A,
    B,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::A => write!(f, "a"),
            Layer::B => write!(f, "b"),
        }
    }
}

/// A validated commensurate twist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommensurateAngle {
    pub kind: LatticeKind,
    pub m: u32,
    pub n: u32,
    /// Twist angle in radians.
    pub theta: f64,
}

impl CommensurateAngle {
    pub fn degrees(&self) -> f64 {
        self.theta.to_degrees()
    }

    /// `(cos θ, sin θ)` from the exact rational (square) or surd (honeycomb) forms.
    pub fn cos_sin(&self) -> (f64, f64) {
        cos_sin(self.kind, self.m as i64, self.n as i64)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (c, s) = self.cos_sin();
        Matrix2::new(c, -s, s, c)
    }

    /// Closed-form number of sites (both layers) in the Moiré cell built for this angle.
    ///
    /// Square pairs with both indices odd have a coincidence lattice of half the
    /// usual area, so their primitive cell holds `m² + n²` sites.
    pub fn expected_site_count(&self) -> usize {
        let (m, n) = (self.m as usize, self.n as usize);
        match self.kind {
            LatticeKind::Square if m % 2 == 1 && n % 2 == 1 => m * m + n * n,
            LatticeKind::Square => 2 * (m * m + n * n),
            LatticeKind::Honeycomb => 4 * (m * m + m * n + n * n),
        }
    }
}

impl fmt::Display for CommensurateAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} θ({},{}) = {:.4}°", self.kind, self.m, self.n, self.degrees())
    }
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

fn cos_sin(kind: LatticeKind, m: i64, n: i64) -> (f64, f64) {
    let (m, n) = (m as f64, n as f64);
    match kind {
        LatticeKind::Square => {
            let den = m * m + n * n;
            (2.0 * m * n / den, (m * m - n * n) / den)
        }
        LatticeKind::Honeycomb => {
            let den = 2.0 * (m * m + m * n + n * n);
            ((n * n + 4.0 * n * m + m * m) / den, 3f64.sqrt() * (m * m - n * n) / den)
        }
    }
}

/// Validates an `(m, n)` pair and computes the commensurate twist angle.
///
/// Non-coprime pairs are reduced by their gcd. Square pairs whose angle lands
/// at or above π/4 are mapped to the equivalent pair `(m + n, m − n)`, whose
/// angle is `π/2 − θ`.
pub fn commensurate_angle(kind: LatticeKind, m: i64, n: i64) -> Result<CommensurateAngle> {
    if m <= 0 || n <= 0 {
        return Err(Error::InvalidIndex(format!(
            "m and n must be positive, got ({m}, {n})"
        )));
    }
    if n > m {
        return Err(Error::InvalidIndex(format!("require m >= n, got ({m}, {n})")));
    }
    let (mut m, mut n) = (m, n);
    let g = gcd(m, n);
    if g > 1 {
        warn!("({m}, {n}) is not coprime; reducing by {g}");
        m /= g;
        n /= g;
    }
    let (mut c, mut s) = cos_sin(kind, m, n);
    if kind == LatticeKind::Square && s.atan2(c) >= FRAC_PI_4 {
        let (fm, fn_) = (m + n, m - n);
        let g = gcd(fm, fn_);
        warn!(
            "square θ({m},{n}) is not below π/4; using the equivalent pair ({}, {})",
            fm / g,
            fn_ / g
        );
        m = fm / g;
        n = fn_ / g;
        (c, s) = cos_sin(kind, m, n);
    }
    let m = u32::try_from(m).map_err(|_| Error::InvalidIndex(format!("m = {m} too large")))?;
    let n = u32::try_from(n).map_err(|_| Error::InvalidIndex(format!("n = {n} too large")))?;
    Ok(CommensurateAngle {
        kind,
        m,
        n,
        theta: s.atan2(c),
    })
}

/// All commensurate angles with `m <= max_index`, largest angle first.
///
/// Square pairs whose angle is not below π/4 are skipped: they duplicate a
/// pair already in the list (or one with a larger index).
pub fn enumerate_angles(kind: LatticeKind, max_index: i64) -> Result<Vec<CommensurateAngle>> {
    if max_index < 1 {
        return Err(Error::Input(format!(
            "max_index must be at least 1, got {max_index}"
        )));
    }
    let mut out: Vec<CommensurateAngle> = Vec::new();
    for m in 1..=max_index {
        for n in 1..=m {
            if gcd(m, n) != 1 {
                continue;
            }
            let (c, s) = cos_sin(kind, m, n);
            if kind == LatticeKind::Square && s.atan2(c) >= FRAC_PI_4 {
                continue;
            }
            let angle = commensurate_angle(kind, m, n)?;
            if !out.iter().any(|a| (a.theta - angle.theta).abs() < 1e-12) {
                out.push(angle);
            }
        }
    }
    out.sort_by(|a, b| b.theta.total_cmp(&a.theta));
    Ok(out)
}

/// One lattice site inside the Moiré cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Site {
    pub layer: Layer,
    /// Integer coordinates of the primitive cell in the layer's own frame.
    pub lattice_point: [i64; 2],
    pub basis_index: usize,
    pub position: Vec2,
    /// Coordinates in the `(T1, T2)` basis, each in `[0, 1)`.
    pub frac: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoireCell {
    pub angle: CommensurateAngle,
    pub t1: Vec2,
    pub t2: Vec2,
    pub b1: Vec2,
    pub b2: Vec2,
    /// Layer-`a` sites first, then layer `b`.
    pub sites: Vec<Site>,
    /// `(a-site, b-site)` index pairs occupying the same position.
    pub coincidences: Vec<(usize, usize)>,
}

fn supercell_vectors(angle: &CommensurateAngle) -> (Vec2, Vec2) {
    let (m, n) = (angle.m as f64, angle.n as f64);
    match angle.kind {
        LatticeKind::Square if angle.m % 2 == 1 && angle.n % 2 == 1 => (
            Vec2::new((m + n) / 2.0, (m - n) / 2.0),
            Vec2::new(-(m - n) / 2.0, (m + n) / 2.0),
        ),
        // R(θ) maps (m, n) to (n, m), so (n, m) is a coincidence vector.
        LatticeKind::Square => (Vec2::new(n, m), Vec2::new(-m, n)),
        LatticeKind::Honeycomb => {
            let (a1, a2) = angle.kind.primitive_vectors();
            let t1 = a1 * n + a2 * m;
            let r60 = Matrix2::new(0.5, -(3f64.sqrt()) / 2.0, 3f64.sqrt() / 2.0, 0.5);
            (t1, r60 * t1)
        }
    }
}

/// Builds the Moiré supercell for a commensurate angle.
pub fn build_moire_cell(angle: CommensurateAngle) -> Result<MoireCell> {
    let (t1, t2) = supercell_vectors(&angle);
    let lat = Matrix2::from_columns(&[t1, t2]);
    let inv = lat
        .try_inverse()
        .ok_or_else(|| Error::Consistency("degenerate supercell vectors".into()))?;
    let b1 = Vec2::new(inv[(0, 0)], inv[(0, 1)]) * (2.0 * PI);
    let b2 = Vec2::new(inv[(1, 0)], inv[(1, 1)]) * (2.0 * PI);

    let (a1, a2) = angle.kind.primitive_vectors();
    let prim = Matrix2::from_columns(&[a1, a2]);
    let prim_inv = prim.try_inverse().expect("primitive vectors are independent");
    let basis = angle.kind.basis();

    let mut sites = Vec::with_capacity(angle.expected_site_count());
    for (layer, rot) in [(Layer::A, Matrix2::identity()), (Layer::B, angle.rotation())] {
        // Bounding box of the supercell expressed in this layer's integer frame.
        let to_frame = prim_inv * rot.transpose();
        let corners = [Vec2::zeros(), t1, t2, t1 + t2].map(|c| to_frame * c);
        let lo = |i: usize| corners.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min).floor() as i64 - 2;
        let hi = |i: usize| corners.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max).ceil() as i64 + 2;
        for i in lo(0)..=hi(0) {
            for j in lo(1)..=hi(1) {
                for (bi, offset) in basis.iter().enumerate() {
                    let local = a1 * i as f64 + a2 * j as f64 + offset;
                    let position = rot * local;
                    let f = inv * position;
                    let inside = |x: f64| x >= -COINCIDENCE_TOL && x < 1.0 - COINCIDENCE_TOL;
                    if inside(f[0]) && inside(f[1]) {
                        let snap = |x: f64| if x.abs() < COINCIDENCE_TOL { 0.0 } else { x };
                        sites.push(Site {
                            layer,
                            lattice_point: [i, j],
                            basis_index: bi,
                            position,
                            frac: [snap(f[0]), snap(f[1])],
                        });
                    }
                }
            }
        }
    }

    let expected = angle.expected_site_count();
    if sites.len() != expected {
        return Err(Error::Consistency(format!(
            "{angle}: enumerated {} sites, closed form gives {expected}",
            sites.len()
        )));
    }

    let mut coincidences = Vec::new();
    for (i, sa) in sites.iter().enumerate().filter(|(_, s)| s.layer == Layer::A) {
        for (j, sb) in sites.iter().enumerate().filter(|(_, s)| s.layer == Layer::B) {
            let mut df = Vec2::new(sa.frac[0] - sb.frac[0], sa.frac[1] - sb.frac[1]);
            df.apply(|x| *x -= x.round());
            if (lat * df).norm() < COINCIDENCE_TOL {
                coincidences.push((i, j));
            }
        }
    }

    Ok(MoireCell {
        angle,
        t1,
        t2,
        b1,
        b2,
        sites,
        coincidences,
    })
}

impl MoireCell {
    pub fn kind(&self) -> LatticeKind {
        self.angle.kind
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    /// Matrix with `T1`, `T2` as columns.
    pub fn lattice_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_columns(&[self.t1, self.t2])
    }

    pub fn area(&self) -> f64 {
        (self.t1.x * self.t2.y - self.t1.y * self.t2.x).abs()
    }

    /// Length of the `T1 + T2` diagonal; the unit for localisation lengths.
    pub fn diagonal_length(&self) -> f64 {
        (self.t1 + self.t2).norm()
    }

    pub fn layer_rotation(&self, layer: Layer) -> Matrix2<f64> {
        match layer {
            Layer::A => Matrix2::identity(),
            Layer::B => self.angle.rotation(),
        }
    }

    pub fn to_fractional(&self, r: Vec2) -> Vec2 {
        self.lattice_matrix()
            .try_inverse()
            .expect("supercell is non-degenerate")
            * r
    }

    /// Converts fractional reciprocal coordinates to a Cartesian wavevector (units 1/d).
    pub fn k_from_fractional(&self, f1: f64, f2: f64) -> Vec2 {
        self.b1 * f1 + self.b2 * f2
    }

    /// Fractional reciprocal coordinates of a Cartesian wavevector.
    pub fn k_to_fractional(&self, k: Vec2) -> Vec2 {
        Vec2::new(k.dot(&self.t1), k.dot(&self.t2)) / (2.0 * PI)
    }

    /// The layer-`a` site of the first coincidence pair, falling back to site 0.
    pub fn coincidence_site(&self) -> usize {
        self.coincidences.first().map(|&(a, _)| a).unwrap_or(0)
    }

    /// Finds the site index and supercell shift of the lattice point at `r`, if any.
    pub fn locate(&self, layer: Layer, r: Vec2) -> Option<(usize, [i64; 2])> {
        let lat = self.lattice_matrix();
        let f = self.to_fractional(r);
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.layer == layer)
            .find_map(|(j, s)| {
                let d = f - Vec2::new(s.frac[0], s.frac[1]);
                let shift = d.map(f64::round);
                ((lat * (d - shift)).norm() < 1e-7).then(|| (j, [shift[0] as i64, shift[1] as i64]))
            })
    }

    /// Writes `layer,basis_index,x,y,frac1,frac2` with 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "layer,basis_index,x,y,frac1,frac2")?;
        for s in &self.sites {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.layer,
                s.basis_index,
                sig(s.position.x, 12),
                sig(s.position.y, 12),
                sig(s.frac[0], 12),
                sig(s.frac[1], 12)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiledSite {
    pub cell: [usize; 2],
    /// Index into the Moiré cell's site list.
    pub basis: usize,
    pub position: Vec2,
}

/// `nc × nc` copies of a Moiré cell with periodic wrap.
///
/// Site `(c1, c2, s)` has index `(c1 * nc + c2) * N_M + s`, where `s` indexes
/// the Moiré cell's site list.
#[derive(Debug, Clone)]
pub struct TiledLattice {
    pub cell: MoireCell,
    pub nc: usize,
    pub sites: Vec<TiledSite>,
}

pub fn tile_lattice(cell: &MoireCell, nc: usize) -> Result<TiledLattice> {
    if nc == 0 {
        return Err(Error::Input("tiling needs at least one supercell".into()));
    }
    let total = nc
        .checked_mul(nc)
        .and_then(|x| x.checked_mul(cell.site_count()))
        .filter(|&x| x <= MAX_TILED_SITES)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "{nc}x{nc} tiling of {} sites exceeds {MAX_TILED_SITES}",
                cell.site_count()
            ))
        })?;
    let mut sites = Vec::with_capacity(total);
    for c1 in 0..nc {
        for c2 in 0..nc {
            let origin = cell.t1 * c1 as f64 + cell.t2 * c2 as f64;
            sites.extend(cell.sites.iter().enumerate().map(|(s, site)| TiledSite {
                cell: [c1, c2],
                basis: s,
                position: origin + site.position,
            }));
        }
    }
    Ok(TiledLattice {
        cell: cell.clone(),
        nc,
        sites,
    })
}

impl TiledLattice {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index(&self, c1: usize, c2: usize, s: usize) -> usize {
        (c1 * self.nc + c2) * self.cell.site_count() + s
    }

    pub fn central_cell(&self) -> [usize; 2] {
        [self.nc / 2, self.nc / 2]
    }

    /// Layer-`a` coincidence site of the central supercell.
    pub fn default_emitter_site(&self) -> usize {
        let [c1, c2] = self.central_cell();
        self.index(c1, c2, self.cell.coincidence_site())
    }

    pub fn layer(&self, i: usize) -> Layer {
        self.cell.sites[self.sites[i].basis].layer
    }

    /// Shortest periodic image of a displacement.
    pub fn minimal_image(&self, r: Vec2) -> Vec2 {
        let mut f = self.cell.to_fractional(r) / self.nc as f64;
        f.apply(|x| *x -= x.round());
        self.cell.lattice_matrix() * f * self.nc as f64
    }

    /// Displacement of site `i` from site `origin`, wrapped to the nearest image.
    pub fn displacement(&self, origin: usize, i: usize) -> Vec2 {
        self.minimal_image(self.sites[i].position - self.sites[origin].position)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sq(m: i64, n: i64) -> MoireCell {
        build_moire_cell(commensurate_angle(LatticeKind::Square, m, n).unwrap()).unwrap()
    }

    #[test]
    fn square_two_one_angle() {
        let a = commensurate_angle(LatticeKind::Square, 2, 1).unwrap();
        assert!((a.theta - 0.6435011087932844).abs() < 1e-12);
        assert!((a.degrees() - 36.8699).abs() < 1e-4);
    }

    #[test]
    fn untwisted_and_honeycomb() {
        assert_eq!(commensurate_angle(LatticeKind::Square, 1, 1).unwrap().theta, 0.0);
        let hc = commensurate_angle(LatticeKind::Honeycomb, 2, 1).unwrap();
        assert!((hc.theta - (13.0f64 / 14.0).acos()).abs() < 1e-12);
        assert!((hc.degrees() - 21.7868).abs() < 1e-4);
    }

    #[test]
    fn invalid_and_reduced_indices() {
        assert!(matches!(
            commensurate_angle(LatticeKind::Square, 0, 1),
            Err(Error::InvalidIndex(_))
        ));
        assert!(matches!(
            commensurate_angle(LatticeKind::Square, 2, -1),
            Err(Error::InvalidIndex(_))
        ));
        assert!(matches!(
            commensurate_angle(LatticeKind::Square, 1, 2),
            Err(Error::InvalidIndex(_))
        ));
        let r = commensurate_angle(LatticeKind::Square, 4, 2).unwrap();
        assert_eq!((r.m, r.n), (2, 1));
        // θ(3,1) ≈ 53.13° folds onto θ(2,1).
        let f = commensurate_angle(LatticeKind::Square, 3, 1).unwrap();
        assert_eq!((f.m, f.n), (2, 1));
    }

    #[test]
    fn enumerate_examples() {
        let a = enumerate_angles(LatticeKind::Square, 3).unwrap();
        let deg: Vec<f64> = a.iter().map(|x| x.degrees()).collect();
        assert!(deg.iter().any(|d| (d - 36.8699).abs() < 1e-3));
        assert!(deg.iter().any(|d| (d - 22.6199).abs() < 1e-3));
        assert!(deg.windows(2).all(|w| w[0] > w[1]));

        let one = enumerate_angles(LatticeKind::Square, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].theta, 0.0);

        let hc = enumerate_angles(LatticeKind::Honeycomb, 2).unwrap();
        assert!(hc.iter().any(|x| (x.degrees() - 21.7868).abs() < 1e-3));
        assert!(enumerate_angles(LatticeKind::Square, 0).is_err());
    }

    #[test]
    fn enumerate_strictly_decreasing() {
        for kind in [LatticeKind::Square, LatticeKind::Honeycomb] {
            let a = enumerate_angles(kind, 12).unwrap();
            assert!(a.windows(2).all(|w| w[0].theta > w[1].theta));
        }
    }

    #[test]
    fn two_one_cell_has_ten_sites() {
        let c = sq(2, 1);
        assert_eq!(c.site_count(), 10);
        assert_eq!(c.sites.iter().filter(|s| s.layer == Layer::A).count(), 5);
        assert!((c.area() - 5.0).abs() < 1e-12);
    }

    /// Brute force: lay down both full layers in a large disk and count
    /// coincident pairs whose position falls inside one supercell.
    fn brute_force_coincidences(cell: &MoireCell) -> usize {
        let (a1, a2) = cell.kind().primitive_vectors();
        let basis = cell.kind().basis();
        let rot = cell.angle.rotation();
        let reach = 4 + (cell.t1.norm() + cell.t2.norm()).ceil() as i64 * 2;
        let mut layer_a = Vec::new();
        let mut layer_b = Vec::new();
        for i in -reach..=reach {
            for j in -reach..=reach {
                for off in &basis {
                    let p = a1 * i as f64 + a2 * j as f64 + off;
                    layer_a.push(p);
                    layer_b.push(rot * p);
                }
            }
        }
        let inv = cell.lattice_matrix().try_inverse().unwrap();
        let in_cell = |p: &Vec2| {
            let f = inv * p;
            (-1e-9..1.0 - 1e-9).contains(&f.x) && (-1e-9..1.0 - 1e-9).contains(&f.y)
        };
        let a_in: Vec<_> = layer_a.iter().filter(|p| in_cell(p)).collect();
        a_in.iter()
            .map(|pa| layer_b.iter().filter(|pb| (*pa - *pb).norm() < 1e-9).count())
            .sum()
    }

    #[test]
    fn two_one_single_coincidence_matches_brute_force() {
        let c = sq(2, 1);
        assert_eq!(c.coincidences.len(), 1);
        assert_eq!(brute_force_coincidences(&c), 1);
    }

    #[test]
    fn honeycomb_two_one_site_count_brute_force() {
        let angle = commensurate_angle(LatticeKind::Honeycomb, 2, 1).unwrap();
        let c = build_moire_cell(angle).unwrap();
        assert_eq!(c.site_count(), 28);
        // Independent count: scan a large patch of each layer for points in the cell.
        let (a1, a2) = LatticeKind::Honeycomb.primitive_vectors();
        let inv = c.lattice_matrix().try_inverse().unwrap();
        let mut count = 0;
        for rot in [Matrix2::identity(), angle.rotation()] {
            for i in -30i64..=30 {
                for j in -30i64..=30 {
                    for off in LatticeKind::Honeycomb.basis() {
                        let f = inv * (rot * (a1 * i as f64 + a2 * j as f64 + off));
                        if (-1e-9..1.0 - 1e-9).contains(&f.x) && (-1e-9..1.0 - 1e-9).contains(&f.y) {
                            count += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(count, 28);
        assert_eq!(brute_force_coincidences(&c), c.coincidences.len());
    }

    #[test]
    fn square_site_count_exhaustive() {
        for m in 1..=8i64 {
            for n in 1..=m {
                if gcd(m, n) != 1 {
                    continue;
                }
                let (c, s) = cos_sin(LatticeKind::Square, m, n);
                if s.atan2(c) >= FRAC_PI_4 {
                    continue;
                }
                let cell = sq(m, n);
                let mixed = (m + n) % 2 == 1;
                let expected = if mixed { 2 * (m * m + n * n) } else { m * m + n * n } as usize;
                assert_eq!(cell.site_count(), expected, "({m},{n})");
                assert_eq!(cell.coincidences.len(), 1, "({m},{n})");
                assert_eq!(brute_force_coincidences(&cell), 1, "({m},{n})");
                if mixed {
                    assert!((cell.area() - (m * m + n * n) as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn tiling_counts() {
        let c21 = sq(2, 1);
        assert_eq!(tile_lattice(&c21, 4).unwrap().len(), 160);
        assert_eq!(tile_lattice(&c21, 64).unwrap().len(), 40960);
        let hc = build_moire_cell(commensurate_angle(LatticeKind::Honeycomb, 2, 1).unwrap()).unwrap();
        assert_eq!(tile_lattice(&hc, 2).unwrap().len(), 112);
        assert!(matches!(tile_lattice(&c21, 1 << 14), Err(Error::Capacity(_))));
    }

    #[test]
    fn tiled_indexing_and_wrap() {
        let t = tile_lattice(&sq(2, 1), 4).unwrap();
        let i = t.index(3, 1, 7);
        assert_eq!(t.sites[i].cell, [3, 1]);
        assert_eq!(t.sites[i].basis, 7);
        // Translating by a full period is the identity under minimal image.
        let period = t.cell.t1 * 4.0;
        assert!(t.minimal_image(period + Vec2::new(0.3, 0.1)).metric_distance(&Vec2::new(0.3, 0.1)) < 1e-12);
        let e = t.default_emitter_site();
        assert_eq!(t.layer(e), Layer::A);
        assert_eq!(t.sites[e].cell, [2, 2]);
    }

    #[test]
    fn csv_export_header_and_rows() {
        let mut buf = Vec::new();
        sq(2, 1).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("layer,basis_index,x,y,frac1,frac2"));
        assert_eq!(lines.count(), 10);
    }

    proptest! {
        #[test]
        fn commensurability_and_reciprocity(m in 1i64..12, n in 1i64..12, hc in any::<bool>()) {
            prop_assume!(m >= n && gcd(m, n) == 1);
            let kind = if hc { LatticeKind::Honeycomb } else { LatticeKind::Square };
            let cell = build_moire_cell(commensurate_angle(kind, m, n).unwrap()).unwrap();
            let back = cell.angle.rotation().transpose();
            let (a1, a2) = kind.primitive_vectors();
            let prim_inv = Matrix2::from_columns(&[a1, a2]).try_inverse().unwrap();
            for s in cell.sites.iter().filter(|s| s.layer == Layer::B) {
                let off = kind.basis()[s.basis_index];
                let q = prim_inv * (back * s.position - off);
                prop_assert!((q.x - q.x.round()).abs() < 1e-9 && (q.y - q.y.round()).abs() < 1e-9);
            }
            let t = [cell.t1, cell.t2];
            let b = [cell.b1, cell.b2];
            for i in 0..2 {
                for j in 0..2 {
                    let target = if i == j { 2.0 * PI } else { 0.0 };
                    prop_assert!((b[i].dot(&t[j]) - target).abs() < 1e-12);
                }
            }
            prop_assert_eq!(cell.site_count(), cell.angle.expected_site_count());
        }
    }
}
