use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("hybrid time {0} is outside the stored domain")]
    OutOfDomain(String),
    #[error("empty hybrid time domain")]
    EmptyDomain,
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("branch enumeration exceeded {0} branches")]
    BranchLimitExceeded(usize),
    #[error("infeasible input: {0}")]
    InfeasibleInput(String),
    #[error("specification has no timer thresholds")]
    MissingTimer,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("certificate violated: {0}")]
    CertificateViolated(String),
    #[error("Riccati ODE blew up at tau = {tau} (norm {norm:e})")]
    BlowUp { tau: f64, norm: f64 },
    #[error("R_v is singular: {0}")]
    SingularRv(String),
    #[error("definiteness condition violated: {0}")]
    DefinitenessViolated(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Riccati equations are inconsistent (residual stagnates at {residual:e})")]
    InconsistentEquations { residual: f64 },
    #[error("flow condition 2x'PF(x) = 0 violated (max residual {max_residual:e})")]
    FlowConditionViolated { max_residual: f64 },
    #[error("numeric min-max needs an input box")]
    NoInputBox,
    #[error("HJBI residual too large ({max_residual:e} > {tol:e})")]
    ResidualTooLarge { max_residual: f64, tol: f64 },
    #[error("no value certificate available")]
    CertificateMissing,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
