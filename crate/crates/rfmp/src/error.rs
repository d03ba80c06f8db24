use thiserror::Error;

/// Library-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// A scalar argument left its mathematical domain.
    #[error("{name} = {value} outside domain: {constraint}")]
    Domain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// An infinite series hit its term cap before the stopping rule fired.
    #[error("series did not converge within {max_terms} terms")]
    SeriesNotConverged { max_terms: usize },

    /// The objective denominator vanished for this element.
    #[error("degenerate dictionary element: objective denominator {denominator}")]
    DegenerateElement { denominator: f64 },

    /// Pursuit cannot run on an empty dictionary.
    #[error("dictionary is empty")]
    EmptyDictionary,

    /// Text-format parse failure with location.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, constraint: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            constraint,
        }
    }
}
