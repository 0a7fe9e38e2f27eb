use std::io::Read;

use super::DatasetStore;
use crate::error::{Error, Result};

/// Load a point set from CSV rows `x,y[,label]`. A header row is detected
/// and skipped when its first field is not numeric.
pub fn load_csv(reader: impl Read) -> Result<DatasetStore> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut with_labels: Option<bool> = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if line == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let has_label = match record.len() {
            2 => false,
            3 => true,
            n => {
                return Err(Error::Format(format!(
                    "line {}: expected 2 or 3 fields, found {n}",
                    line + 1
                )))
            }
        };
        if *with_labels.get_or_insert(has_label) != has_label {
            return Err(Error::Consistency(format!(
                "line {}: label column present on some rows only",
                line + 1
            )));
        }
        for field in record.iter().take(2) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad number {field:?}", line + 1)))?;
            data.push(v);
        }
        if has_label {
            let field = &record[2];
            let l: u32 = field
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad label {field:?}", line + 1)))?;
            labels.push(l);
        }
    }
    let labels = with_labels.unwrap_or(false).then_some(labels);
    DatasetStore::from_flat(data, 2, None, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn with_and_without_header() {
        let a = load_csv("x,y,label\n0.5,1.0,0\n-1,2,1\n".as_bytes()).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.sample(1), &[-1.0, 2.0]);
        assert_eq!(a.labels(), Some(vec![0, 1]));
        let b = load_csv("0.5,1.0\n-1,2\n".as_bytes()).unwrap();
        assert_eq!(b.len(), 2);
        assert!(!b.has_labels());
    }

    #[test]
    fn malformed_rows() {
        assert!(load_csv("1,2,3,4\n".as_bytes()).is_err());
        assert!(load_csv("1,2\n1,2,0\n".as_bytes()).is_err());
        assert!(load_csv("1,abc\n".as_bytes()).is_err());
        assert!(load_csv("x,y\n".as_bytes()).is_err());
    }
}
