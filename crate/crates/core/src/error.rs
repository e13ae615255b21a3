use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown link id `{0}`")]
    UnknownLink(String),
    #[error("unknown route id `{0}`")]
    UnknownRoute(String),
    #[error("unknown source id `{0}`")]
    UnknownSource(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("route `{0}` has no hops")]
    EmptyRoute(String),
    #[error("source `{0}` owns no routes")]
    SourceWithoutRoutes(String),
    #[error("route `{route}` is claimed by sources `{first}` and `{second}`")]
    RouteOwnership {
        route: String,
        first: String,
        second: String,
    },
    #[error("route `{route}` hop on `{link}`: forward {forward} s + backward {backward} s != round trip {round_trip} s")]
    HopDelayMismatch {
        route: String,
        link: String,
        forward: f64,
        backward: f64,
        round_trip: f64,
    },
    #[error("invalid value for {what}: {value}")]
    InvalidValue { what: &'static str, value: f64 },
    #[error("argument must be positive, got {0}")]
    NonPositiveArgument(f64),
    #[error("price domain violated for source {source_index}: need min route price {min_route_price} > source price {source_price} > 0")]
    PriceDomainViolation {
        source_index: usize,
        min_route_price: f64,
        source_price: f64,
    },
    #[error("non-finite state at t = {time} s")]
    NonFiniteState { time: f64 },
    #[error("delay {delay} s is not an integer multiple of dt = {dt} s")]
    DelayGridMismatch { delay: f64, dt: f64 },
    #[error("assumption H violated for source {source_index}: alpha * p = {product} <= 1")]
    AssumptionHViolated { source_index: usize, product: f64 },
    #[error("link {0} is almost saturated (zero price, load equal to capacity)")]
    AlmostSaturatedLink(usize),
    #[error("link {0} carries no traffic; average round-trip time undefined")]
    UnloadedLink(usize),
    #[error("solver did not converge after {iterations} iterations (best KKT residual {best_residual:e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
