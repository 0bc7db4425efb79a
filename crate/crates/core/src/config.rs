//! Small helpers for JSON configuration sections.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CoreError, Result};

/// Parses a JSON object into `T`, taking missing keys from `T::default()`.
///
/// Every key that `T` does not declare is reported at once, so a config with
/// several typos fails with one message naming all of them.
pub fn parse_section<T>(value: &Value) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut merged = serde_json::to_value(T::default())?;
    let obj = match value {
        Value::Null => return Ok(T::default()),
        Value::Object(obj) => obj,
        other => {
            return Err(CoreError::Config(format!(
                "expected a JSON object, found {other}"
            )))
        }
    };
    let known = merged
        .as_object()
        .ok_or_else(|| CoreError::Config("section defaults are not an object".into()))?;
    let mut unknown: Vec<String> = obj
        .keys()
        .filter(|k| !known.contains_key(k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(CoreError::UnknownKeys(unknown));
    }
    if let Some(target) = merged.as_object_mut() {
        for (k, v) in obj {
            target.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| CoreError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    struct Section {
        width: usize,
        rate: f64,
        label: Option<String>,
    }

    #[test]
    fn missing_keys_take_defaults() {
        let s: Section = parse_section(&serde_json::json!({"width": 4})).unwrap();
        assert_eq!(s, Section { width: 4, ..Default::default() });
        let s: Section = parse_section(&Value::Null).unwrap();
        assert_eq!(s, Section::default());
    }

    #[test]
    fn all_unknown_keys_are_listed() {
        let err = parse_section::<Section>(&serde_json::json!({"widht": 4, "rte": 1.0}))
            .unwrap_err();
        match err {
            CoreError::UnknownKeys(keys) => assert_eq!(keys, vec!["rte", "widht"]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn wrong_types_are_config_errors() {
        let err = parse_section::<Section>(&serde_json::json!({"width": "four"})).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }
}
