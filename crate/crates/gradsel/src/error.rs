//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bandwidth components must lie in (0, 1], got {0:?}")]
    InvalidBandwidth(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel has unbounded Fourier support; deconvolution under noise requires a band-limited kernel")]
    NonBandLimited,
    #[error("grid too coarse: Nyquist frequency {nyquist:.3} < required {required:.3}")]
    GridTooCoarse { nyquist: f64, required: f64 },
    #[error("L{q}-norm of kernel `{kernel}` diverges")]
    DivergentNorm { kernel: String, q: f64 },
    #[error("bandwidth net bounds invalid: h_minus {h_minus} must be < h_plus {h_plus}, both in (0, 1)")]
    InvalidBounds { h_minus: f64, h_plus: f64 },
    #[error("bandwidth net is empty")]
    EmptyNet,
    #[error("net ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("codebook is degenerate: two centroids closer than {0:e}")]
    DegenerateCodebook(f64),
    #[error("Voronoi cell {cell} has no positive mass after {restarts} restarts")]
    EmptyCell { cell: usize, restarts: usize },
    #[error("exact label matching supported up to k = 8, got k = {0}")]
    KTooLargeForExactMatching(usize),
    #[error("operation requires d = 2, got d = {0}")]
    UnsupportedDimension(usize),
    #[error("Hessian is numerically singular: lambda_min = {0:e}")]
    SingularHessian(f64),
    #[error("all kernel weights vanish at x0 = {0:?}")]
    EmptyWindow(Vec<f64>),
    #[error("q must be >= 1, got {0}")]
    InvalidQ(f64),
    #[error("local regression needs a nonnegative kernel (epanechnikov or gaussian), got `{0}`")]
    KernelNotNonnegative(String),
    #[error("missing labels: clustering error needs labelled samples")]
    MissingLabels,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
