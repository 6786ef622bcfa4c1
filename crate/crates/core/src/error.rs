use thiserror::Error;

/// Errors raised by emulator construction, prediction and history matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Column or parameter names do not line up with what an operation expects.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parameter `{name}` value {value} lies outside its range [{lower}, {upper}]")]
    Domain {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate range: column `{0}` has zero spread")]
    DegenerateRange(String),

    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),

    #[error(
        "Var[D] is not positive definite for output `{output}`; \
         near-duplicate training points usually cause this, consider raising the nugget"
    )]
    Conditioning { output: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("output `{output}`: {source}")]
    Output {
        output: String,
        #[source]
        source: Box<Error>,
    },

    /// No acceptable point was found even at the loosest cutoff tried.
    #[error(
        "no acceptable points found at cutoff {cutoff} (relaxed as far as {loosest}); \
         the model and the observations may conflict"
    )]
    EmptySpace { cutoff: f64, loosest: f64 },

    #[error("simulator failure: {0}")]
    Simulator(String),

    #[error("wave state is flagged: {0}")]
    Flagged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach the name of the output being processed.
    pub fn for_output(self, output: &str) -> Error {
        match self {
            e @ Error::Output { .. } => e,
            e => Error::Output {
                output: output.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by malformed input rather than failed computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Schema(_)
            | Error::Domain { .. }
            | Error::Argument(_)
            | Error::Hyperparameter(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Io(_) => true,
            Error::Output { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
