//! MovieLens-100K item-metadata ingestion.
//!
//! The classic `u.item` layout is pipe-separated:
//! `id | title | release date | video release date | url | 19 genre flags`.
//! MovieLens ships no images, so the genre indicator vector plus a
//! normalized release year stands in as the per-item visual feature vector
//! (dimension 20), giving the encoder a second modality that is not
//! derivable from the title text.

use std::path::Path;

use crate::error::{MolarError, Result};
use crate::itemrep::record::ItemRecord;

pub const ML100K_GENRES: [&str; 19] = [
    "unknown",
    "action",
    "adventure",
    "animation",
    "children",
    "comedy",
    "crime",
    "documentary",
    "drama",
    "fantasy",
    "film-noir",
    "horror",
    "musical",
    "mystery",
    "romance",
    "sci-fi",
    "thriller",
    "war",
    "western",
];

/// Feature dimension produced by the converter: 19 genre flags + year.
pub const ML100K_IMAGE_DIM: usize = 20;

/// True when the file looks like `u.item` rather than items JSONL.
pub fn looks_like_ml100k_items(content: &str) -> bool {
    content
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| !l.trim_start().starts_with('{') && l.matches('|').count() >= 5)
        .unwrap_or(false)
}

pub fn read_ml100k_items(path: &Path) -> Result<Vec<ItemRecord>> {
    // u.item is latin-1; decode bytes permissively
    let bytes = std::fs::read(path)?;
    let content: String = bytes.iter().map(|&b| b as char).collect();
    parse_ml100k_items(&content)
}

pub fn parse_ml100k_items(content: &str) -> Result<Vec<ItemRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 5 + ML100K_GENRES.len() {
            return Err(MolarError::Format(format!(
                "u.item line {}: expected {} pipe-separated fields, got {}",
                lineno + 1,
                5 + ML100K_GENRES.len(),
                fields.len()
            )));
        }
        let item_id: u64 = fields[0].trim().parse().map_err(|_| {
            MolarError::Format(format!("u.item line {}: bad item id", lineno + 1))
        })?;
        let title = fields[1].trim().to_string();
        let release = fields[2].trim();
        let year = release
            .rsplit('-')
            .next()
            .and_then(|y| y.parse::<f64>().ok())
            .unwrap_or(0.0);

        let flags = &fields[fields.len() - ML100K_GENRES.len()..];
        let mut features = Vec::with_capacity(ML100K_IMAGE_DIM);
        let mut genres = Vec::new();
        for (name, flag) in ML100K_GENRES.iter().zip(flags) {
            let on = flag.trim() == "1";
            features.push(if on { 1.0 } else { 0.0 });
            if on {
                genres.push(*name);
            }
        }
        // normalized year keeps the feature scale comparable to the flags
        features.push(if year > 0.0 { (year - 1900.0) / 100.0 } else { 0.0 });

        let mut record = ItemRecord::new(item_id, title)
            .with_attribute("genres", genres.join("|"))
            .with_image_features(features);
        if !release.is_empty() {
            record = record.with_attribute("year", format!("{year:.0}"));
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "1|Toy Story (1995)|01-Jan-1995||http://x|0|0|0|1|1|1|0|0|0|0|0|0|0|0|0|0|0|0|0\n\
2|GoldenEye (1995)|01-Jan-1995||http://x|0|1|1|0|0|0|0|0|0|0|0|0|0|0|0|0|1|0|0\n";

    #[test]
    fn parses_titles_genres_and_features() {
        let records = parse_ml100k_items(SAMPLE).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].title, "Toy Story (1995)");
        let (_, genres) = &records[0].attributes[0];
        assert_eq!(genres, "animation|children|comedy");
        let f = records[0].image_features.as_ref().unwrap();
        assert_eq!(f.len(), ML100K_IMAGE_DIM);
        assert_eq!(f[3], 1.0); // animation flag
        assert!((f[19] - 0.95).abs() < 1e-12); // 1995 normalized
    }

    #[test]
    fn detection_distinguishes_jsonl() {
        assert!(looks_like_ml100k_items(SAMPLE));
        assert!(!looks_like_ml100k_items(
            r#"{"item_id": 1, "title": "x"}"#
        ));
    }

    #[test]
    fn short_lines_are_format_errors() {
        assert!(parse_ml100k_items("1|only|three|fields\n").is_err());
    }
}
