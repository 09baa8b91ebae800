use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        context: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{0}: non-finite entry")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("{context}: ill-conditioned matrix (condition estimate {cond:.3e})")]
    IllConditioned { context: &'static str, cond: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {needed} trajectories, got {got}")]
    TooFewTrajectories { needed: usize, got: usize },

    #[error("(I - phi) singular in {attempts} consecutive draws")]
    SingularDraws { attempts: usize },

    #[error("simulation produced a non-finite value at trajectory {traj}, step {step}")]
    Overflow { traj: usize, step: usize },

    #[error("Riccati solution became non-finite at grid step {step}")]
    RiccatiBlowUp { step: usize },

    #[error("filter produced a non-finite value at trajectory {traj}, step {step}")]
    FilterBlowUp { traj: usize, step: usize },

    #[error("Hamiltonian is not diagonalizable with a clean eigenvalue split: {0}")]
    NotDiagonalizable(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to a distinct exit code
    /// in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::IllConditioned { .. }
                | Error::SingularDraws { .. }
                | Error::Overflow { .. }
                | Error::RiccatiBlowUp { .. }
                | Error::FilterBlowUp { .. }
                | Error::NotDiagonalizable(_)
        )
    }
}
