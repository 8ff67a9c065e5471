use std::fmt;

#[derive(Debug)]
pub enum Failure {
    Usage {
        field: String,
        message: String,
    },
    /// The model or its derived objects violate a standing requirement.
    Invalid(String),
    NoConvergence(String),
    Verification(String),
    Runtime(String),
}

impl Failure {
    pub const USAGE: u8 = 64;

    pub fn usage(field: &str, message: impl Into<String>) -> Self {
        Self::Usage {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 1,
            Self::NoConvergence(_) => 2,
            Self::Verification(_) => 3,
            Self::Runtime(_) => 4,
            Self::Usage { .. } => Self::USAGE,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage { field, message } => write!(f, "{field}: {message}"),
            Self::Invalid(m) | Self::NoConvergence(m) | Self::Verification(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let all = [
            Failure::usage("--x", "m"),
            Failure::Invalid(String::new()),
            Failure::NoConvergence(String::new()),
            Failure::Verification(String::new()),
            Failure::Runtime(String::new()),
        ];
        let mut codes: Vec<u8> = all.iter().map(Failure::code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes, vec![1, 2, 3, 4, 64]);
        assert_eq!(all[0].to_string(), "--x: m");
    }
}
