//! Dataset manifests: one CSV row per image with its cube path, class
//! label, location, and acquisition date.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Two-class vocabulary of the prospectivity task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Gold,
    NonGold,
}

impl Label {
    /// 1 for gold, 0 for non-gold: the positive class of the classifier.
    pub fn as_binary(self) -> u8 {
        match self {
            Label::Gold => 1,
            Label::NonGold => 0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Gold => "gold",
            Label::NonGold => "non_gold",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(Label::Gold),
            "non_gold" => Ok(Label::NonGold),
            other => Err(Error::Data(format!(
                "label {other:?} not in {{gold, non_gold}}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Cube path as written in the manifest; relative paths resolve
    /// against the manifest's directory.
    pub path: String,
    pub label: Label,
    pub latitude: f64,
    pub longitude: f64,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: PathBuf) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|p| p.image_id == e.image_id) {
                return Err(Error::Data(format!("duplicate image_id {:?}", e.image_id)));
            }
            if !(-90.0..=90.0).contains(&e.latitude) {
                return Err(Error::Data(format!(
                    "image {:?}: latitude {} outside [-90, 90]",
                    e.image_id, e.latitude
                )));
            }
            if !(-180.0..=180.0).contains(&e.longitude) {
                return Err(Error::Data(format!(
                    "image {:?}: longitude {} outside [-180, 180]",
                    e.image_id, e.longitude
                )));
            }
        }
        Ok(DatasetManifest { entries, base_dir })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Absolute (or base-relative) path to an entry's cube file.
    pub fn cube_path(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn entry_by_id(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// A manifest restricted to the given image ids, in manifest order.
    pub fn subset(&self, ids: &[String]) -> DatasetManifest {
        let entries = self
            .entries
            .iter()
            .filter(|e| ids.contains(&e.image_id))
            .cloned()
            .collect();
        DatasetManifest {
            entries,
            base_dir: self.base_dir.clone(),
        }
    }
}

const HEADER: [&str; 6] = ["image_id", "path", "label", "lat", "lon", "date"];

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Format(format!(
            "{}: expected header {:?}, got {:?}",
            path.display(),
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() != HEADER.len() {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line + 2,
                record.len(),
                HEADER.len()
            )));
        }
        let parse_f64 = |field: usize, name: &str| -> Result<f64> {
            record[field].parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "{}: row {}: {name} {:?} is not a number",
                    path.display(),
                    line + 2,
                    &record[field]
                ))
            })
        };
        let date = NaiveDate::parse_from_str(&record[5], "%Y-%m-%d").map_err(|_| {
            Error::Data(format!(
                "{}: row {}: date {:?} is not an ISO-8601 day",
                path.display(),
                line + 2,
                &record[5]
            ))
        })?;
        entries.push(ManifestEntry {
            image_id: record[0].to_string(),
            path: record[1].to_string(),
            label: record[2].parse()?,
            latitude: parse_f64(3, "lat")?,
            longitude: parse_f64(4, "lon")?,
            date,
        });
    }
    let base = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    DatasetManifest::new(entries, base)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&HEADER.join(","));
    out.push('\n');
    for e in manifest.entries() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.image_id,
            e.path,
            e.label,
            e.latitude,
            e.longitude,
            e.date.format("%Y-%m-%d")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: Label) -> ManifestEntry {
        ManifestEntry {
            image_id: id.to_string(),
            path: format!("{id}.mscube"),
            label,
            latitude: 10.0,
            longitude: 20.0,
            date: NaiveDate::from_ymd_opt(2023, 7, 15).unwrap(),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = DatasetManifest::new(
            vec![entry("a", Label::Gold), entry("a", Label::NonGold)],
            PathBuf::from("."),
        );
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let mut e = entry("a", Label::Gold);
        e.latitude = 91.0;
        assert!(matches!(
            DatasetManifest::new(vec![e], PathBuf::from(".")),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join("aurum_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.csv");
        let manifest = DatasetManifest::new(
            vec![entry("img_one", Label::Gold), entry("img_two", Label::NonGold)],
            dir.clone(),
        )
        .unwrap();
        write_manifest(&manifest, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.entries(), manifest.entries());
        assert_eq!(
            back.cube_path(&back.entries()[0]),
            dir.join("img_one.mscube")
        );
    }

    #[test]
    fn bad_label_is_data_error() {
        let dir = std::env::temp_dir().join("aurum_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("badlabel.csv");
        std::fs::write(
            &path,
            "image_id,path,label,lat,lon,date\nx,x.mscube,silver,0,0,2023-01-01\n",
        )
        .unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
    }

    #[test]
    fn wrong_header_is_format_error() {
        let dir = std::env::temp_dir().join("aurum_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("badheader.csv");
        std::fs::write(&path, "id,path,label,lat,lon,date\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Format(_))));
    }
}
