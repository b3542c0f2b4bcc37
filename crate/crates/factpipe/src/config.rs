//! Run-configuration resolution.
//!
//! Precedence: command-line flags > config file > environment > built-in
//! defaults. The config file is flat `key = value` text with `#` comments.

use crate::types::RunConfig;
use std::collections::HashMap;
use std::path::PathBuf;
use thiserror::Error;

/// Environment variable naming the chat-completions endpoint.
pub const ENDPOINT_ENV: &str = "FACTPIPE_ENDPOINT";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {line}: expected 'key = value', got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("config key '{key}': {message}")]
    Value { key: String, message: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
}

/// Parse `key = value` text. Blank lines and `#` comments are ignored.
pub fn parse_key_values(text: &str) -> Result<HashMap<String, String>, ConfigError> {
    let mut entries = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        entries.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(entries)
}

/// Flag-level overrides collected from the command line.
#[derive(Debug, Default, Clone)]
pub struct ConfigOverrides {
    pub model_name: Option<String>,
    pub endpoint_url: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
    pub top_k: Option<usize>,
    pub concurrency_limit: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub nli_threshold: Option<f64>,
    pub embed_endpoint: Option<String>,
}

/// Fully resolved configuration: the run parameters plus the optional
/// embedding endpoint.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub run: RunConfig,
    pub embed_endpoint: Option<String>,
}

/// Apply precedence: defaults, then environment, then config file entries,
/// then flags.
pub fn resolve(
    file_entries: Option<&HashMap<String, String>>,
    overrides: &ConfigOverrides,
) -> Result<ResolvedConfig, ConfigError> {
    let mut run = RunConfig::default();
    let mut embed_endpoint: Option<String> = None;

    if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
        if !endpoint.is_empty() {
            run.endpoint_url = endpoint;
        }
    }

    if let Some(entries) = file_entries {
        for (key, value) in entries {
            apply_entry(&mut run, &mut embed_endpoint, key, value)?;
        }
    }

    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = &overrides.$field {
                run.$field = v.clone();
            }
        };
    }
    flag!(model_name);
    flag!(endpoint_url);
    flag!(cache_dir);
    if let Some(v) = overrides.temperature {
        run.temperature = v;
    }
    if let Some(v) = overrides.top_p {
        run.top_p = v;
    }
    if let Some(v) = overrides.max_tokens {
        run.max_tokens = v;
    }
    if let Some(v) = overrides.top_k {
        run.top_k = v;
    }
    if let Some(v) = overrides.concurrency_limit {
        run.concurrency_limit = v;
    }
    if let Some(v) = overrides.nli_threshold {
        run.nli_threshold = v;
    }
    if let Some(v) = &overrides.embed_endpoint {
        embed_endpoint = Some(v.clone());
    }

    Ok(ResolvedConfig {
        run,
        embed_endpoint,
    })
}

fn apply_entry(
    run: &mut RunConfig,
    embed_endpoint: &mut Option<String>,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let bad = |message: String| ConfigError::Value {
        key: key.to_string(),
        message,
    };
    match key {
        "model_name" => run.model_name = value.to_string(),
        "endpoint_url" => run.endpoint_url = value.to_string(),
        "embed_endpoint" => *embed_endpoint = Some(value.to_string()),
        "temperature" => run.temperature = value.parse().map_err(|e| bad(format!("{e}")))?,
        "top_p" => run.top_p = value.parse().map_err(|e| bad(format!("{e}")))?,
        "max_tokens" => run.max_tokens = value.parse().map_err(|e| bad(format!("{e}")))?,
        "top_k" => run.top_k = value.parse().map_err(|e| bad(format!("{e}")))?,
        "concurrency_limit" => {
            run.concurrency_limit = value.parse().map_err(|e| bad(format!("{e}")))?
        }
        "cache_dir" => run.cache_dir = PathBuf::from(value),
        "nli_threshold" => run.nli_threshold = value.parse().map_err(|e| bad(format!("{e}")))?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_value_lines() {
        let entries = parse_key_values("# comment\nmodel_name = gpt-4o\n\ntop_k=5\n").unwrap();
        assert_eq!(entries["model_name"], "gpt-4o");
        assert_eq!(entries["top_k"], "5");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_key_values("model_name = ok\nnot a pair\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Syntax {
                line: 2,
                text: "not a pair".into()
            }
        );
    }

    #[test]
    fn flags_beat_file_entries() {
        let entries = parse_key_values("model_name = from-file\ntop_k = 5").unwrap();
        let overrides = ConfigOverrides {
            model_name: Some("from-flag".into()),
            ..ConfigOverrides::default()
        };
        let resolved = resolve(Some(&entries), &overrides).unwrap();
        assert_eq!(resolved.run.model_name, "from-flag");
        assert_eq!(resolved.run.top_k, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let entries = parse_key_values("mystery = 1").unwrap();
        let err = resolve(Some(&entries), &ConfigOverrides::default()).unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("mystery".into()));
    }

    #[test]
    fn defaults_match_run_defaults() {
        let resolved = resolve(None, &ConfigOverrides::default()).unwrap();
        assert_eq!(resolved.run.temperature, 0.0);
        assert_eq!(resolved.run.top_p, 1.0);
        assert_eq!(resolved.run.max_tokens, 256);
        assert_eq!(resolved.run.top_k, 10);
        assert_eq!(resolved.run.nli_threshold, 0.8);
    }
}
