use thiserror::Error;

/// Every failure mode surfaced by the simulators and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid driving function: {0}")]
    InvalidDriving(String),
    #[error("could not resolve swallowing of point {point} near t = {time}")]
    SwallowResolution { point: usize, time: f64 },
    #[error("inverse map did not converge at z = {re}+{im}i (t = {time})")]
    Inversion { re: f64, im: f64, time: f64 },
    #[error("bubble map with f'(0) = {0} is not contractive")]
    NotContractive(f64),
    #[error("drift too stiff: |drift|*step = {0} exceeds the barrier guard")]
    Stiffness(f64),
    #[error("cot integral diverges across an interior zero of theta at t = {0}")]
    CotDivergence(f64),
    #[error("requested resolution {requested} is below grid resolution {grid}")]
    Resolution { requested: f64, grid: f64 },
    #[error("theta path never reached the top barrier within t_max = {0}")]
    NoTopHit(f64),
    #[error("bad Bessel dimension {0}; expected a value in [1, 2)")]
    BadDimension(f64),
    #[error("requested loop level {requested} exceeds simulated horizon (reached {reached})")]
    HorizonExceeded { requested: usize, reached: usize },
    #[error("ambiguous colour at the separation pinch point (margin {0})")]
    ColorAmbiguity(f64),
    #[error("targets do not separate within the horizon")]
    NotSeparated,
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
    #[error("boundary mass numerically degenerate ({0})")]
    DegenerateSample(f64),
    #[error("no qualifying cone excursion after {0} windows")]
    WindowExhausted(usize),
    #[error("too few samples: {0}")]
    SampleTooSmall(String),
    #[error("empty sample")]
    EmptySample,
    #[error("insufficient dynamic range: {0}")]
    Range(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
