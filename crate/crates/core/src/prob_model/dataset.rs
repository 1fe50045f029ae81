use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Hypothesis, ModelSpec, Observation};
use crate::error::{check_dim, Error, Result};

/// Labelled observations behind the training objective F(θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    labels: Vec<Hypothesis>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, labels: Vec<Hypothesis>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim("label count", observations.len(), labels.len())?;
        let d = observations[0].dim();
        for o in &observations {
            check_dim("observation", d, o.dim())?;
        }
        Ok(Self {
            observations,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    /// Always false; a dataset holds at least one row.
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.observations[0].dim()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn labels(&self) -> &[Hypothesis] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Observation, Hypothesis)> {
        self.observations.iter().zip(self.labels.iter().copied())
    }

    pub fn check_compatible(&self, model: &ModelSpec) -> Result<()> {
        check_dim("observation", model.feature_dim(), self.feature_dim())?;
        for h in &self.labels {
            if h.0 >= model.class_count() {
                return Err(Error::LabelOutOfRange {
                    label: h.0,
                    classes: model.class_count(),
                });
            }
        }
        Ok(())
    }

    /// Writes `f1,…,fd,label` with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let d = self.feature_dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        out.write_record(&header)?;
        for (o, h) in self.iter() {
            let mut row: Vec<String> = o.features().iter().map(|v| format!("{v:?}")).collect();
            row.push(h.0.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`Dataset::write_csv`], validating the
    /// feature count and label range against `model`.
    pub fn read_csv<R: Read>(reader: R, model: &ModelSpec) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let d = model.feature_dim();
        let header = input.headers()?.clone();
        if header.len() != d + 1 {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected {} columns, found {}", d + 1, header.len()),
            });
        }
        let mut observations = Vec::new();
        let mut labels = Vec::new();
        for (idx, record) in input.records().enumerate() {
            let line = idx + 2;
            let record = record?;
            if record.len() != d + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} columns, found {}", d + 1, record.len()),
                });
            }
            let features = record
                .iter()
                .take(d)
                .map(|field| {
                    field.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("bad feature {field:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let label_field = record[d].trim();
            let label = label_field.parse::<usize>().map_err(|e| Error::Parse {
                line,
                message: format!("bad label {label_field:?}: {e}"),
            })?;
            if label >= model.class_count() {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: model.class_count(),
                });
            }
            observations.push(Observation::from_slice(&features)?);
            labels.push(Hypothesis(label));
        }
        Self::new(observations, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(
            vec![
                Observation::from_slice(&[0.1, -2.5]).unwrap(),
                Observation::from_slice(&[1e-7, 3.0]).unwrap(),
            ],
            vec![Hypothesis(1), Hypothesis(0)],
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(matches!(Dataset::new(vec![], vec![]), Err(Error::EmptyDataset)));
        assert!(Dataset::new(
            vec![Observation::from_slice(&[1.0]).unwrap()],
            vec![Hypothesis(0), Hypothesis(1)]
        )
        .is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let data = sample();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f1,f2,label\n"));
        let model = ModelSpec::binary_logistic(2).unwrap();
        assert_eq!(Dataset::read_csv(buf.as_slice(), &model).unwrap(), data);
    }

    #[test]
    fn csv_rejects_label_out_of_range() {
        let model = ModelSpec::binary_logistic(2).unwrap();
        let text = "f1,f2,label\n0.5,0.5,2\n";
        assert!(matches!(
            Dataset::read_csv(text.as_bytes(), &model),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn csv_rejects_wrong_width() {
        let model = ModelSpec::binary_logistic(3).unwrap();
        let text = "f1,f2,label\n0.5,0.5,1\n";
        assert!(matches!(
            Dataset::read_csv(text.as_bytes(), &model),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
