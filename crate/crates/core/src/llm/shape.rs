//! A small structural schema for model responses.
//!
//! A shape is written as JSON: `"string"`, `"number"`, `"boolean"` and
//! `"any"` name scalar types, `[shape]` is an array whose elements all match
//! `shape`, and `{"key": shape}` is an object that must carry every listed
//! key. Extra keys are allowed.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    String,
    Number,
    Boolean,
    Any,
    Array(Box<Shape>),
    Object(Vec<(String, Shape)>),
}

impl Shape {
    pub fn parse(text: &str) -> Result<Shape, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Shape::from_value(&value)
    }

    fn from_value(value: &Value) -> Result<Shape, String> {
        match value {
            Value::String(s) => match s.as_str() {
                "string" => Ok(Shape::String),
                "number" => Ok(Shape::Number),
                "boolean" => Ok(Shape::Boolean),
                "any" => Ok(Shape::Any),
                other => Err(format!("unknown scalar type {other:?}")),
            },
            Value::Array(items) if items.len() == 1 => {
                Ok(Shape::Array(Box::new(Shape::from_value(&items[0])?)))
            }
            Value::Array(_) => Err("array shapes take exactly one element shape".into()),
            Value::Object(map) => map
                .iter()
                .map(|(k, v)| Ok((k.clone(), Shape::from_value(v)?)))
                .collect::<Result<_, String>>()
                .map(Shape::Object),
            other => Err(format!("unsupported shape {other}")),
        }
    }

    /// Checks `value`, reporting the first mismatch with its JSON path.
    pub fn validate(&self, value: &Value) -> Result<(), String> {
        self.check(value, "$")
    }

    fn check(&self, value: &Value, path: &str) -> Result<(), String> {
        let ok = match (self, value) {
            (Shape::Any, _) => true,
            (Shape::String, Value::String(_)) => true,
            (Shape::Number, Value::Number(_)) => true,
            (Shape::Boolean, Value::Bool(_)) => true,
            (Shape::Array(inner), Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    inner.check(item, &format!("{path}[{i}]"))?;
                }
                true
            }
            (Shape::Object(fields), Value::Object(map)) => {
                for (key, shape) in fields {
                    let child = format!("{path}.{key}");
                    match map.get(key) {
                        Some(v) => shape.check(v, &child)?,
                        None => return Err(format!("missing field {child}")),
                    }
                }
                true
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "{path}: expected {}, got {}",
                self.describe(),
                kind(value)
            ))
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Shape::String => "string",
            Shape::Number => "number",
            Shape::Boolean => "boolean",
            Shape::Any => "any",
            Shape::Array(_) => "array",
            Shape::Object(_) => "object",
        }
    }
}

fn kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_validation() {
        let shape = Shape::parse(
            r#"{"entities": [{"name": "string", "label": "string"}], "references": ["string"]}"#,
        )
        .unwrap();
        assert!(shape
            .validate(&json!({"entities": [{"name": "ladder", "label": "Equipment", "extra": 1}], "references": []}))
            .is_ok());
        let err = shape
            .validate(&json!({"entities": [{"name": "ladder"}], "references": []}))
            .unwrap_err();
        assert_eq!(err, "missing field $.entities[0].label");
        let err = shape
            .validate(&json!({"entities": "x", "references": []}))
            .unwrap_err();
        assert!(err.starts_with("$.entities: expected array"));
    }

    #[test]
    fn bad_shapes() {
        assert!(Shape::parse(r#""integer""#).is_err());
        assert!(Shape::parse(r#"["string", "number"]"#).is_err());
        assert!(Shape::parse("not json").is_err());
    }
}
