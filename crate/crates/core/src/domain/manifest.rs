//! Line-delimited dataset manifests.
//!
//! One record per line, tab separated:
//! `volume_id<TAB>slice_index<TAB>image_path<TAB>label`, where `label` is one
//! of `pass`, `questionable`, `fail` or `unlabeled`. Lines starting with `#`
//! are comments; a `# split: <tag>` comment sets the manifest's split. The
//! ground-truth sidecar uses the same columns plus a trailing `true_label`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::domain::QualityLabel;
use crate::error::{Error, Result};

const UNLABELED: &str = "unlabeled";
const SPLIT_DIRECTIVE: &str = "split:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub volume_id: String,
    pub slice_index: usize,
    pub image_path: PathBuf,
    /// `None` means unlabeled.
    pub label: Option<QualityLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert((r.volume_id.as_str(), r.slice_index)) {
                return Err(Error::invalid(format!(
                    "duplicate record ({}, {})",
                    r.volume_id, r.slice_index
                )));
            }
        }
        Ok(DatasetManifest { records, split })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labeled(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.label.is_some())
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.label.is_none())
    }

    /// Records grouped by volume, slices in index order, volumes in id order.
    pub fn volumes(&self) -> BTreeMap<&str, Vec<&ManifestRecord>> {
        let mut map: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.volume_id.as_str()).or_default().push(r);
        }
        for slices in map.values_mut() {
            slices.sort_by_key(|r| r.slice_index);
        }
        map
    }

    /// Volume-wise label of each labeled volume: the most frequent slice
    /// label (slices normally all carry their volume's label).
    pub fn volume_labels(&self) -> BTreeMap<String, QualityLabel> {
        let mut out = BTreeMap::new();
        for (vid, slices) in self.volumes() {
            let mut counts = [0usize; 3];
            for r in slices {
                if let Some(l) = r.label {
                    counts[l.index()] += 1;
                }
            }
            if counts.iter().sum::<usize>() > 0 {
                let best = (0..3).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
                out.insert(vid.to_string(), QualityLabel::ALL[best]);
            }
        }
        out
    }

    /// Reads every record's image onto a `canvas`-sized square; relative
    /// paths are taken from `base`.
    pub fn load_images(
        &self,
        base: &Path,
        canvas: usize,
    ) -> Result<Vec<crate::domain::SliceImage>> {
        self.records
            .iter()
            .map(|r| super::pgm::load_slice(resolve(base, &r.image_path), canvas))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {SPLIT_DIRECTIVE} {}", self.split.as_str());
        for r in &self.records {
            let _ = writeln!(out, "{}", format_record(r));
        }
        out
    }
}

/// A sidecar row: the clean record plus the slice's true quality class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRecord {
    pub record: ManifestRecord,
    pub true_label: QualityLabel,
}

fn format_record(r: &ManifestRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        r.volume_id,
        r.slice_index,
        r.image_path.display(),
        r.label.map_or(UNLABELED, QualityLabel::as_str)
    )
}

fn parse_label(token: &str, line: usize) -> Result<Option<QualityLabel>> {
    if token == UNLABELED {
        return Ok(None);
    }
    token
        .parse()
        .map(Some)
        .map_err(|_| Error::format(line, format!("unknown label token {token:?}")))
}

fn parse_record(fields: &[&str], line: usize) -> Result<ManifestRecord> {
    let volume_id = fields[0];
    if volume_id.is_empty() {
        return Err(Error::format(line, "empty volume id"));
    }
    let slice_index = fields[1]
        .parse()
        .map_err(|_| Error::format(line, format!("bad slice index {:?}", fields[1])))?;
    Ok(ManifestRecord {
        volume_id: volume_id.to_string(),
        slice_index,
        image_path: PathBuf::from(fields[2]),
        label: parse_label(fields[3], line)?,
    })
}

/// Parses the rows of a manifest-like file, handing each record's fields to
/// `row` and enforcing key uniqueness. Returns the `# split:` directive if any.
fn parse_rows(
    text: &str,
    columns: usize,
    mut row: impl FnMut(&[&str], usize) -> Result<(String, usize)>,
) -> Result<Option<Split>> {
    let mut split = None;
    let mut seen: HashSet<(String, usize)> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(tag) = comment.trim().strip_prefix(SPLIT_DIRECTIVE) {
                split =
                    Some(tag.trim().parse().map_err(|_| {
                        Error::format(line, format!("unknown split {:?}", tag.trim()))
                    })?);
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != columns {
            return Err(Error::format(
                line,
                format!(
                    "expected {columns} tab-separated fields, got {}",
                    fields.len()
                ),
            ));
        }
        let key = row(&fields, line)?;
        if !seen.insert(key.clone()) {
            return Err(Error::format(
                line,
                format!("duplicate record ({}, {})", key.0, key.1),
            ));
        }
    }
    Ok(split)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let split = parse_rows(text, 4, |fields, line| {
        let r = parse_record(fields, line)?;
        let key = (r.volume_id.clone(), r.slice_index);
        records.push(r);
        Ok(key)
    })?;
    let split = split.unwrap_or_else(|| {
        if !records.is_empty() && records.iter().all(|r| r.label.is_none()) {
            Split::Unlabeled
        } else {
            Split::Train
        }
    });
    Ok(DatasetManifest { records, split })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Resolves a record's image path against the directory holding its manifest.
pub(crate) fn resolve(base: &Path, image_path: &Path) -> PathBuf {
    if image_path.is_absolute() {
        image_path.to_path_buf()
    } else {
        base.join(image_path)
    }
}

fn check_paths<'a>(base: &Path, paths: impl Iterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        let full = resolve(base, p);
        if !full.is_file() {
            return Err(Error::file(
                full,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "image referenced by manifest not found",
                ),
            ));
        }
    }
    Ok(())
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

/// Loads a manifest and checks that every image path (relative paths are
/// taken from the manifest's directory) exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let manifest = parse_manifest(&read_text(path)?)?;
    check_paths(
        parent_dir(path),
        manifest.records.iter().map(|r| r.image_path.as_path()),
    )?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_text()).map_err(|e| Error::file(path, e))
}

pub fn parse_truth(text: &str) -> Result<Vec<TruthRecord>> {
    let mut out = Vec::new();
    parse_rows(text, 5, |fields, line| {
        let record = parse_record(&fields[..4], line)?;
        let true_label = fields[4]
            .parse()
            .map_err(|_| Error::format(line, format!("unknown true label {:?}", fields[4])))?;
        let key = (record.volume_id.clone(), record.slice_index);
        out.push(TruthRecord { record, true_label });
        Ok(key)
    })?;
    Ok(out)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    parse_truth(&read_text(path.as_ref())?)
}

pub fn save_truth(records: &[TruthRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("# volume_id\tslice_index\timage_path\tlabel\ttrue_label\n");
    for t in records {
        let _ = writeln!(out, "{}\t{}", format_record(&t.record), t.true_label);
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(vid: &str, idx: usize, label: Option<QualityLabel>) -> ManifestRecord {
        ManifestRecord {
            volume_id: vid.into(),
            slice_index: idx,
            image_path: PathBuf::from(format!("images/{vid}_{idx:03}.pgm")),
            label,
        }
    }

    #[test]
    fn round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            vec![
                record("v1", 0, Some(QualityLabel::Pass)),
                record("v1", 1, Some(QualityLabel::Fail)),
            ],
            Split::Train,
        )
        .unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        for r in &m.records {
            fs::write(dir.path().join(&r.image_path), b"P5\n1 1\n255\n\0").unwrap();
        }
        let path = dir.path().join("m.tsv");
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn unlabeled_token_maps_to_unlabeled_split() {
        let m = parse_manifest("v1\t0\ta.pgm\tunlabeled\nv1\t1\tb.pgm\tunlabeled\n").unwrap();
        assert_eq!(m.split, Split::Unlabeled);
        assert_eq!(m.unlabeled().count(), 2);
        assert!(m.records.iter().all(|r| r.label.is_none()));
    }

    #[test]
    fn duplicate_key_reports_line() {
        let text = "# split: train\nv1\t0\ta.pgm\tpass\nv1\t1\tb.pgm\tpass\nv1\t0\tc.pgm\tfail\n";
        match parse_manifest(text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_format_error() {
        assert!(matches!(
            parse_manifest("v1\t0\ta.pgm\tgood\n"),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn missing_image_fails_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "v1\t0\tnope.pgm\tpass\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::File { .. })));
    }

    #[test]
    fn split_directive_is_honored() {
        let m = parse_manifest("# split: test\nv\t0\ta\tpass\n").unwrap();
        assert_eq!(m.split, Split::Test);
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            TruthRecord {
                record: record("v1", 0, Some(QualityLabel::Pass)),
                true_label: QualityLabel::Questionable,
            },
            TruthRecord {
                record: record("v2", 3, None),
                true_label: QualityLabel::Fail,
            },
        ];
        let path = dir.path().join("truth.tsv");
        save_truth(&rows, &path).unwrap();
        assert_eq!(load_truth(&path).unwrap(), rows);
    }
}
