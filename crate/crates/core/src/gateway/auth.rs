//! Static bearer tokens.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::error::{ErrorClass, ErrorCode};
use crate::principal::Principal;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("invalid or unknown bearer token")]
    InvalidToken,
    #[error("invalid token table: {0}")]
    InvalidTable(String),
}

impl ErrorCode for AuthError {
    fn code(&self) -> &'static str {
        match self {
            AuthError::InvalidToken => "InvalidToken",
            AuthError::InvalidTable(_) => "InvalidConfig",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            AuthError::InvalidToken => ErrorClass::Unauthenticated,
            AuthError::InvalidTable(_) => ErrorClass::Validation,
        }
    }
}

/// Token to user id. Each user holds at most one token.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    users: BTreeMap<String, String>,
}

impl TokenTable {
    pub fn new(tokens: BTreeMap<String, String>) -> Result<Self, AuthError> {
        let mut seen = BTreeSet::new();
        for (token, user) in &tokens {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(AuthError::InvalidTable(format!("token for `{user}` is empty or contains whitespace")));
            }
            if user.is_empty() {
                return Err(AuthError::InvalidTable("empty user id".into()));
            }
            if !seen.insert(user.as_str()) {
                return Err(AuthError::InvalidTable(format!("user `{user}` has more than one token")));
            }
        }
        Ok(TokenTable { users: tokens })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, AuthError> {
        Self::new(pairs.into_iter().map(|(t, u)| (t.to_string(), u.to_string())).collect())
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Maps an `Authorization` header value to a principal.
    pub fn authenticate(&self, header: Option<&str>) -> Result<Principal, AuthError> {
        let Some(header) = header else {
            return Ok(Principal::Anonymous);
        };
        let (scheme, token) = header.trim().split_once(' ').ok_or(AuthError::InvalidToken)?;
        if !scheme.eq_ignore_ascii_case("bearer") {
            return Err(AuthError::InvalidToken);
        }
        self.users.get(token.trim()).map(|u| Principal::user(u.clone())).ok_or(AuthError::InvalidToken)
    }
}
