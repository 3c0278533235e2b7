use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Numerical(bregtik::Error),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for usage and config problems, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<bregtik::Error> for CliError {
    fn from(e: bregtik::Error) -> Self {
        use bregtik::Error as E;
        match e {
            E::InvalidGrid(_)
            | E::InvalidParameter(_)
            | E::NotInvertible(_)
            | E::NotSmooth(_)
            | E::DimensionMismatch { .. }
            | E::SpacingMismatch(..)
            | E::MembershipFailure(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::from(bregtik::Error::InvalidParameter("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(bregtik::Error::SingularSystem).exit_code(), 1);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
    }
}
