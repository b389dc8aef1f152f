//! Exit-code contract: 0 success, 1 internal error, 2 user or config error.

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USER: i32 = 2;

/// A failure caused by the invocation: bad flags, config or input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

/// Exit code of a failed command: user errors anywhere in the chain win.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let user = err.chain().any(|e| {
        e.downcast_ref::<UserError>().is_some()
            || e
                .downcast_ref::<vidcf_core::Error>()
                .is_some_and(|c| c.is_user_error())
    });
    if user {
        EXIT_USER
    } else {
        EXIT_INTERNAL
    }
}
