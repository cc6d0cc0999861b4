use std::net::SocketAddr;
use std::path::PathBuf;

use factweave::retrieval::DEFAULT_THRESHOLD;

use crate::error::ApiError;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";
pub const DEFAULT_BODY_LIMIT: usize = 16 * 1024 * 1024;
pub const PROVIDER: &str = "hashed-char-trigram";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Loaded at startup when present; default target of snapshot save/load.
    pub snapshot: Option<PathBuf>,
    pub provider: String,
    pub threshold: f64,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: DEFAULT_ADDR.parse().expect("valid default address"),
            snapshot: None,
            provider: PROVIDER.to_owned(),
            threshold: DEFAULT_THRESHOLD,
            max_body_bytes: DEFAULT_BODY_LIMIT,
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by `FACTWEAVE_ADDR`, `FACTWEAVE_SNAPSHOT` and
    /// `FACTWEAVE_THRESHOLD`.
    pub fn from_env() -> Result<Self, ApiError> {
        let mut c = ServiceConfig::default();
        if let Ok(a) = std::env::var("FACTWEAVE_ADDR") {
            c.addr = a
                .parse()
                .map_err(|e| ApiError::invalid(format!("FACTWEAVE_ADDR {a:?}: {e}")))?;
        }
        if let Ok(p) = std::env::var("FACTWEAVE_SNAPSHOT") {
            c.snapshot = Some(PathBuf::from(p));
        }
        if let Ok(t) = std::env::var("FACTWEAVE_THRESHOLD") {
            c.threshold = t
                .parse()
                .map_err(|e| ApiError::invalid(format!("FACTWEAVE_THRESHOLD {t:?}: {e}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ApiError> {
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(ApiError::invalid(format!(
                "threshold {} outside [-1, 1]",
                self.threshold
            )));
        }
        if self.provider != PROVIDER {
            return Err(ApiError::invalid(format!(
                "unknown embedding provider {:?}",
                self.provider
            )));
        }
        if self.max_body_bytes == 0 {
            return Err(ApiError::invalid("max_body_bytes must be positive"));
        }
        Ok(())
    }
}
