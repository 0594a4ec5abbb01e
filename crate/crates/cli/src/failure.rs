//! Error classes and their process exit codes.

use std::fmt;

use inmerge_core::Error as CoreError;

/// Attached as `anyhow` context to route an error to its exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Config => "config error",
            Category::Data => "data error",
            Category::Numeric => "numeric failure",
        })
    }
}

/// Numeric failures win over any outer label: a diverging run inside an
/// otherwise valid command still exits with 4.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(CoreError::NonFiniteLoss { .. } | CoreError::NonFinite(_)) =
            cause.downcast_ref::<CoreError>()
        {
            return Category::Numeric.exit_code();
        }
    }
    match err.downcast_ref::<Category>() {
        Some(c) => c.exit_code(),
        None => 1,
    }
}
