use thiserror::Error;

/// Errors raised by the estimation, geometry and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} is not positive definite")]
    SingularMatrix { what: &'static str },

    #[error("numerical failure: non-finite {field}")]
    NonFinite { field: &'static str },

    #[error("covariance lost positive semi-definiteness (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("degenerate carrier frequencies: f1 == f2 == {0} Hz")]
    DegenerateFrequency(f64),

    #[error("satellite below the horizon (elevation {elevation} rad)")]
    BelowHorizon { elevation: f64 },

    #[error("position too close to the geocenter (|p| = {norm} m)")]
    DegeneratePosition { norm: f64 },

    #[error("satellite {sat_id}: {source}")]
    Satellite {
        sat_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("epoch {index}: {source}")]
    Epoch {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn for_satellite(self, sat_id: &str) -> Self {
        Error::Satellite {
            sat_id: sat_id.to_owned(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_epoch(self, index: usize) -> Self {
        Error::Epoch {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
