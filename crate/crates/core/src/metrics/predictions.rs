use std::fmt::Write as _;
use std::path::Path;

use crate::domain::{QualityLabel, SlicePrediction};
use crate::error::{Error, Result};

/// Slice-index column value marking a whole-volume prediction.
pub const VOLUME_ROW: &str = "volume";

/// One line of a prediction file:
/// `volume_id<TAB>slice_index<TAB>p_pass<TAB>p_ques<TAB>p_fail<TAB>label`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub volume_id: String,
    /// `None` for the volume rating.
    pub slice_index: Option<usize>,
    pub prediction: SlicePrediction,
}

pub fn format_predictions(records: &[PredictionRecord]) -> String {
    let mut s = String::from("# volume_id\tslice_index\tp_pass\tp_ques\tp_fail\tlabel\n");
    for r in records {
        let p = r.prediction.probabilities();
        let idx = r
            .slice_index
            .map_or_else(|| VOLUME_ROW.to_string(), |i| i.to_string());
        // shortest round-trip form keeps the file lossless
        let _ = writeln!(
            s,
            "{}\t{idx}\t{:?}\t{:?}\t{:?}\t{}",
            r.volume_id,
            p[0],
            p[1],
            p[2],
            r.prediction.label()
        );
    }
    s
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::format(
                no,
                format!("expected 6 tab-separated fields, got {}", f.len()),
            ));
        }
        let slice_index = if f[1] == VOLUME_ROW {
            None
        } else {
            Some(
                f[1].parse()
                    .map_err(|_| Error::format(no, format!("bad slice index {:?}", f[1])))?,
            )
        };
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            *v = f[2 + k]
                .parse()
                .map_err(|_| Error::format(no, format!("bad probability {:?}", f[2 + k])))?;
        }
        let prediction = SlicePrediction::new(p).map_err(|e| Error::format(no, e.to_string()))?;
        let label: QualityLabel = f[5]
            .parse()
            .map_err(|_| Error::format(no, format!("bad label {:?}", f[5])))?;
        if label != prediction.label() {
            return Err(Error::format(
                no,
                format!("label {label} is not the argmax of the probabilities"),
            ));
        }
        out.push(PredictionRecord {
            volume_id: f[0].to_string(),
            slice_index,
            prediction,
        });
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_predictions(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            PredictionRecord {
                volume_id: "v1".into(),
                slice_index: Some(3),
                prediction: SlicePrediction::new([0.1, 0.2, 0.7]).unwrap(),
            },
            PredictionRecord {
                volume_id: "v1".into(),
                slice_index: None,
                prediction: SlicePrediction::new([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap(),
            },
        ];
        assert_eq!(parse_predictions(&format_predictions(&recs)).unwrap(), recs);
        assert!(parse_predictions("v\t0\t0.5\t0.5\t0\tfail\n").is_err());
    }
}
