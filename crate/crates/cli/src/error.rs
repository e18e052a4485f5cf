use thiserror::Error;

/// Failures of a run, grouped by what the user has to fix.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status: 2 config, 3 data, 4 numeric, 5 optimizer, 6 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Optimizer(_) => 5,
            CliError::Io(_) => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Optimizer(_) => "optimizer",
            CliError::Io(_) => "io",
        }
    }
}

impl From<fracgp::Error> for CliError {
    fn from(e: fracgp::Error) -> Self {
        use fracgp::Error::*;
        match e {
            Parameter(_) | Configuration(_) | Unsupported(_) => CliError::Config(e.to_string()),
            Numeric(_) | Factorization { .. } => CliError::Numeric(e.to_string()),
            Optimizer { .. } => CliError::Optimizer(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes: Vec<i32> = [
            CliError::Config(String::new()),
            CliError::Data(String::new()),
            CliError::Numeric(String::new()),
            CliError::Optimizer(String::new()),
            CliError::Io(String::new()),
        ]
        .iter()
        .map(CliError::exit_code)
        .collect();
        let mut sorted = codes.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(codes.iter().all(|&c| c != 0));
    }

    #[test]
    fn core_errors_map_by_kind() {
        assert_eq!(CliError::from(fracgp::Error::Parameter("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(fracgp::Error::Factorization { minor: 1, jitter: 0.0 }).exit_code(), 4);
        let opt = fracgp::Error::Optimizer { message: "x".into(), snapshot: vec![] };
        assert_eq!(CliError::from(opt).exit_code(), 5);
    }
}
