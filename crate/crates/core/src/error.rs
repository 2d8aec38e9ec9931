/// Broad failure classes used to map module errors onto gateway statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Unauthenticated,
    NotFound,
    Remote,
    Internal,
}

impl ErrorClass {
    pub fn status(self) -> u16 {
        match self {
            ErrorClass::Validation => 400,
            ErrorClass::Unauthenticated => 401,
            ErrorClass::NotFound => 404,
            ErrorClass::Remote => 502,
            ErrorClass::Internal => 500,
        }
    }
}

/// Stable machine-readable error code plus its class.
pub trait ErrorCode: std::error::Error {
    fn code(&self) -> &'static str;
    fn class(&self) -> ErrorClass;
}
