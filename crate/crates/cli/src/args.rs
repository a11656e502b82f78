//! Command-line surface. Energies are in units of `J` (ħ = 1, d = 1) except
//! for `feasibility`, which takes frequencies in MHz/2π.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use twistlab::{HoppingModel, LatticeKind};

#[derive(Debug, Parser, Serialize)]
#[command(name = "twistlab", version, about = "Twisted bilayer optical lattices: geometry, bands and emitter dynamics")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Directory that receives artifacts and the manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for k-grids and sparse products (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key = value` file; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Validate and print the resolved parameters without computing.
    #[arg(long, global = true)]
    pub dry_run: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// List commensurate angles up to an index bound.
    Angles(AnglesArgs),
    /// Moiré unit cell sites and hopping table.
    Cell(CellArgs),
    /// Optical potential map of a dressing scheme.
    Potential(PotentialArgs),
    /// Trap depth, leakage and decoherence budget.
    Feasibility(FeasibilityArgs),
    /// Band structure along the high-symmetry path.
    Bands(BandsArgs),
    /// Density of states histogram.
    Dos(GridArgs),
    /// Bandwidths, gaps and band touchings.
    Metrics(GridArgs),
    /// Interlayer ratio at which the top band detaches.
    Critical(CriticalArgs),
    /// Time evolution of an emitter coupled to the bath.
    Emit(EmitArgs),
    /// Emitter-bath bound state in a band gap.
    Bound(BoundArgs),
    /// Bath-mediated couplings between emitters.
    Couplings(CouplingsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Angles(_) => "angles",
            Command::Cell(_) => "cell",
            Command::Potential(_) => "potential",
            Command::Feasibility(_) => "feasibility",
            Command::Bands(_) => "bands",
            Command::Dos(_) => "dos",
            Command::Metrics(_) => "metrics",
            Command::Critical(_) => "critical",
            Command::Emit(_) => "emit",
            Command::Bound(_) => "bound",
            Command::Couplings(_) => "couplings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Lattice {
    Square,
    Honeycomb,
}

impl From<Lattice> for LatticeKind {
    fn from(l: Lattice) -> Self {
        match l {
            Lattice::Square => LatticeKind::Square,
            Lattice::Honeycomb => LatticeKind::Honeycomb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    Minimal,
    Gaussian,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AngleArgs {
    #[arg(long, value_enum, default_value_t = Lattice::Square)]
    pub lattice: Lattice,
    #[arg(long, allow_negative_numbers = true)]
    pub m: i64,
    #[arg(long, allow_negative_numbers = true)]
    pub n: i64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Intralayer hopping.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub j: f64,
    /// Interlayer hopping.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub jperp: f64,
    #[arg(long, value_enum, default_value_t = Range::Minimal)]
    pub range: Range,
    /// Wannier width for the gaussian range, units of d.
    #[arg(long, default_value_t = 0.2)]
    pub l0: f64,
    /// Hopping cutoff for the gaussian range, units of d.
    #[arg(long, default_value_t = 2.5)]
    pub cutoff: f64,
}

impl ModelArgs {
    pub fn model(&self) -> HoppingModel {
        match self.range {
            Range::Minimal => HoppingModel::minimal(self.j, self.jperp),
            Range::Gaussian => HoppingModel::gaussian(self.j, self.jperp, self.l0, self.cutoff),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AnglesArgs {
    #[arg(long, value_enum, default_value_t = Lattice::Square)]
    pub lattice: Lattice,
    #[arg(long, allow_negative_numbers = true)]
    pub max_index: i64,
    #[arg(long, default_value = "angles.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CellArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "cell.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "bonds.csv")]
    pub bonds_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ideal,
    Hyperfine,
    FineStructure,
    Turnout,
}

/// Laser parameters shared by `potential` and `feasibility`, MHz/2π.
#[derive(Debug, Clone, Args, Serialize)]
pub struct LaserArgs {
    #[arg(long, value_enum, default_value_t = Scheme::Ideal)]
    pub scheme: Scheme,
    /// Rabi frequency of the state-a dressing beam.
    #[arg(long, allow_negative_numbers = true)]
    pub omega: f64,
    /// Rabi frequency for state b (default: same depth as state a).
    #[arg(long, allow_negative_numbers = true)]
    pub omega_b: Option<f64>,
    /// Detuning of the state-a dressing beam.
    #[arg(long, allow_negative_numbers = true)]
    pub delta_detuning: f64,
    /// Detuning for state b (default: same as state a).
    #[arg(long, allow_negative_numbers = true)]
    pub delta_b: Option<f64>,
    /// Two-photon detuning (ideal) or ground-state splitting (hyperfine).
    #[arg(long, allow_negative_numbers = true, default_value_t = 2.0)]
    pub splitting: f64,
    /// Linewidth of the dressed excited level.
    #[arg(long, default_value_t = 0.0075)]
    pub gamma_g: f64,
    /// Pump Rabi frequency (fine-structure scheme).
    #[arg(long, allow_negative_numbers = true)]
    pub omega_p: Option<f64>,
    /// Pump detuning (fine-structure scheme).
    #[arg(long, allow_negative_numbers = true)]
    pub delta_p: Option<f64>,
    /// Lattice wavelength of state a, nm (turnout scheme).
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Turnout wavelength of state b, nm (turnout scheme).
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Magic wavelength of the vertical confinement, nm (recorded only).
    #[arg(long)]
    pub lambda_m: Option<f64>,
    /// Linewidth of the clock excited state (turnout scheme).
    #[arg(long, default_value_t = 0.0)]
    pub gamma_e: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PotentialArgs {
    #[command(flatten)]
    pub laser: LaserArgs,
    #[command(flatten)]
    pub angle: AngleArgs,
    /// Grid points per side.
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    /// Side of the square window, units of d.
    #[arg(long, default_value_t = 4.0)]
    pub extent: f64,
    #[arg(long, default_value = "potential.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeasibilityArgs {
    #[command(flatten)]
    pub laser: LaserArgs,
    /// Atomic mass in amu (default: strontium-88).
    #[arg(long, default_value_t = 87.905_612)]
    pub mass_amu: f64,
    /// Lattice wavelength in nm.
    #[arg(long, default_value_t = 813.4)]
    pub wavelength_nm: f64,
    /// Recoil energy in kHz/2π; overrides mass and wavelength.
    #[arg(long)]
    pub recoil_khz: Option<f64>,
    /// s-wave scattering length in nm, for the interaction estimate.
    #[arg(long)]
    pub a_s_nm: Option<f64>,
    /// Vertical confinement width in nm, for the interaction estimate.
    #[arg(long)]
    pub lz_nm: Option<f64>,
    /// Largest acceptable dressing-induced decoherence rate, Hz/2π.
    #[arg(long, default_value_t = 1.0)]
    pub max_gamma_star_hz: f64,
    #[arg(long, default_value = "feasibility.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BandsArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Samples per segment of the G-X-M-G (square) or G-M-K-G (honeycomb) path.
    #[arg(long, default_value_t = 100)]
    pub kpoints: usize,
    #[arg(long, default_value = "bands.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// k-grid points per reciprocal direction.
    #[arg(long, default_value_t = 128)]
    pub nk: usize,
    /// Artifact name (default: dos.csv or metrics.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CriticalArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Lower end of the J_perp/J search interval.
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    /// Upper end of the J_perp/J search interval.
    #[arg(long, default_value_t = 4.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[arg(long, default_value_t = 128)]
    pub nk: usize,
    #[arg(long, default_value = "critical.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmitterArgs {
    /// Emitter-bath coupling.
    #[arg(long, allow_negative_numbers = true)]
    pub g: f64,
    /// Emitter energy.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    /// Layer-a site of the Moiré cell the emitter couples to (default: coincidence site).
    #[arg(long)]
    pub attach: Option<usize>,
    /// Supercells per direction of the bath (or k-grid size for couplings).
    #[arg(long, default_value_t = 64)]
    pub cells: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EmitArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub emitter: EmitterArgs,
    /// Recorded time step.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Final time (default: Nc/2, before excitations wrap around the bath).
    #[arg(long)]
    pub tmax: Option<f64>,
    /// k-grid size for the golden-rule rate reported in the manifest.
    #[arg(long, default_value_t = 128)]
    pub nk: usize,
    #[arg(long, default_value = "emit.csv")]
    pub out: PathBuf,
    /// Bath probabilities at the final time.
    #[arg(long, default_value = "snapshot.csv")]
    pub snapshot_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub emitter: EmitterArgs,
    /// Bath probabilities of the bound state.
    #[arg(long, default_value = "bound.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CouplingsArgs {
    #[command(flatten)]
    pub angle: AngleArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub emitter: EmitterArgs,
    /// Emitter positions `c1,c2[,site]` separated by `;` (site defaults to the
    /// coincidence site).
    #[arg(long, default_value = "0,0;1,1;2,2;3,3")]
    pub positions: String,
    /// Gaussian width standing in for the delta function in γ_ij (default: twice the DOS bin width).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value = "couplings.csv")]
    pub out: PathBuf,
}
