use thiserror::Error;

/// Errors raised by the lattice, spectrum, optics and emission routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice index: {0}")]
    InvalidIndex(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("singular parameter: {0}")]
    SingularParameter(String),

    #[error("trap too shallow: V_D = {depth:.4e} does not exceed E_R = {recoil:.4e}")]
    ShallowTrap { depth: f64, recoil: f64 },

    #[error("eigensolver did not converge at k = ({kx:.6}, {ky:.6})")]
    Eigensolver { kx: f64, ky: f64 },

    #[error("interval [{lo}, {hi}] does not bracket a sign change of the top gap")]
    Bracket { lo: f64, hi: f64 },

    #[error("detuning {delta} lies inside bath band {band} = [{lo}, {hi}]")]
    NotInGap {
        delta: f64,
        band: usize,
        lo: f64,
        hi: f64,
    },

    #[error("norm drift {drift:.3e} exceeds {limit:.1e}; reduce the time step")]
    IntegratorAccuracy { drift: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
