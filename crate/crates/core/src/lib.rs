//! Cold atoms in twisted bilayer optical lattices.
//!
//! Units: `J = 1`, `ħ = 1`, and lengths in the monolayer lattice constant `d`,
//! except in [`optics`], which works in angular frequencies.
//!
//! ```
//! use twistlab::geometry::{build_moire_cell, commensurate_angle, LatticeKind};
//!
//! let angle = commensurate_angle(LatticeKind::Square, 2, 1).unwrap();
//! let cell = build_moire_cell(angle).unwrap();
//! assert_eq!(cell.site_count(), 10);
//! assert_eq!(cell.coincidences.len(), 1);
//! ```

pub mod emission;
pub mod error;
pub mod format;
pub mod geometry;
pub mod model;
pub mod optics;
pub mod spectrum;

pub use error::{Error, Result};
pub use geometry::{
    build_moire_cell, commensurate_angle, enumerate_angles, tile_lattice, CommensurateAngle,
    LatticeKind, MoireCell, TiledLattice, Vec2,
};
pub use model::{HoppingModel, RangeMode};
