use std::fmt;

/// Bad or missing user input.
#[derive(Debug)]
pub struct InputError(pub String);

/// Artifacts were written but the estimator did not converge.
#[derive(Debug)]
pub struct NotConverged(pub String);

/// Every candidate failed numerically.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

/// A rerun produced outputs that differ from the manifest.
#[derive(Debug)]
pub struct Mismatch(pub Vec<String>);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did not converge: {}", self.0)
    }
}

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rerun outputs differ from the manifest: {}", self.0.join(", "))
    }
}

impl std::error::Error for InputError {}
impl std::error::Error for NotConverged {}
impl std::error::Error for NumericalFailure {}
impl std::error::Error for Mismatch {}

pub const SUCCESS: u8 = 0;
pub const FAILURE: u8 = 1;
pub const INPUT: u8 = 2;
pub const NOT_CONVERGED: u8 = 3;
pub const NUMERICAL: u8 = 4;

/// Maps the first recognized cause in the chain to an exit status.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NotConverged>() {
            return NOT_CONVERGED;
        }
        if cause.is::<NumericalFailure>() {
            return NUMERICAL;
        }
        if cause.is::<InputError>() || cause.is::<std::io::Error>() || cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return INPUT;
        }
        if let Some(e) = cause.downcast_ref::<regime_switch::Error>() {
            return if e.is_numerical() { NUMERICAL } else { INPUT };
        }
        if cause.is::<Mismatch>() {
            return FAILURE;
        }
    }
    FAILURE
}
