//! Catalog item records and their JSONL serialization.
//!
//! Wire format, one object per line:
//! `{"item_id": int, "title": str, "attributes": {str: str}, "image_features": [float]}`
//! with `image_features` optional. Attribute order is preserved end to end.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{MolarError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ItemRecord {
    pub item_id: u64,
    pub title: String,
    /// Ordered key -> value metadata (price, material, ...). Keys are unique.
    pub attributes: Vec<(String, String)>,
    pub image_features: Option<Vec<f64>>,
}

impl ItemRecord {
    pub fn new(item_id: u64, title: impl Into<String>) -> Self {
        Self {
            item_id,
            title: title.into(),
            attributes: Vec::new(),
            image_features: None,
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((key.into(), value.into()));
        self
    }

    pub fn with_image_features(mut self, features: Vec<f64>) -> Self {
        self.image_features = Some(features);
        self
    }

    pub fn has_image(&self) -> bool {
        self.image_features.is_some()
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("item_id".into(), Value::from(self.item_id));
        obj.insert("title".into(), Value::from(self.title.clone()));
        let mut attrs = Map::new();
        for (k, v) in &self.attributes {
            attrs.insert(k.clone(), Value::from(v.clone()));
        }
        obj.insert("attributes".into(), Value::Object(attrs));
        if let Some(f) = &self.image_features {
            obj.insert(
                "image_features".into(),
                Value::Array(f.iter().map(|&v| Value::from(v)).collect()),
            );
        }
        Value::Object(obj)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| MolarError::Format("item record is not a JSON object".into()))?;
        let item_id = obj
            .get("item_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| MolarError::Format("item record missing integer 'item_id'".into()))?;
        let title = obj
            .get("title")
            .and_then(Value::as_str)
            .ok_or_else(|| MolarError::Format(format!("item {item_id} missing 'title'")))?
            .to_string();
        let mut attributes = Vec::new();
        if let Some(attrs) = obj.get("attributes") {
            let map = attrs.as_object().ok_or_else(|| {
                MolarError::Format(format!("item {item_id}: 'attributes' is not an object"))
            })?;
            for (k, v) in map {
                let vs = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                attributes.push((k.clone(), vs));
            }
        }
        let image_features = match obj.get("image_features") {
            None | Some(Value::Null) => None,
            Some(Value::Array(a)) => {
                let mut f = Vec::with_capacity(a.len());
                for v in a {
                    f.push(v.as_f64().ok_or_else(|| {
                        MolarError::Format(format!("item {item_id}: non-numeric image feature"))
                    })?);
                }
                Some(f)
            }
            Some(_) => {
                return Err(MolarError::Format(format!(
                    "item {item_id}: 'image_features' is not an array"
                )))
            }
        };
        Ok(Self {
            item_id,
            title,
            attributes,
            image_features,
        })
    }
}

pub fn read_items_jsonl(path: &Path) -> Result<Vec<ItemRecord>> {
    let file = std::fs::File::open(path).map_err(|e| {
        MolarError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| {
            MolarError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(ItemRecord::from_json(&value)?);
    }
    Ok(records)
}

pub fn write_items_jsonl(path: &Path, records: &[ItemRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, &r.to_json())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_preserves_attribute_order() {
        let rec = ItemRecord::new(7, "Red Shirt")
            .with_attribute("price", "10")
            .with_attribute("color", "red")
            .with_attribute("material", "cotton")
            .with_image_features(vec![0.25, -1.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        write_items_jsonl(&path, &[rec.clone()]).unwrap();
        let back = read_items_jsonl(&path).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn missing_fields_are_format_errors() {
        let v: Value = serde_json::from_str(r#"{"title": "x"}"#).unwrap();
        assert!(ItemRecord::from_json(&v).is_err());
        let v: Value = serde_json::from_str(r#"{"item_id": 3}"#).unwrap();
        assert!(ItemRecord::from_json(&v).is_err());
    }
}
