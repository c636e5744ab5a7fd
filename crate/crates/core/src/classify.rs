use crate::corpus::Document;
use crate::error::Result;
use crate::metrics::EvalRecord;

/// Anything that maps a document to a distribution over classes.
pub trait Classifier {
    fn class_probs(&self, doc: &Document) -> Result<Vec<f64>>;
}

/// Arg-max with ties to the lowest class index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores every document; `groups` resolves group names to indices.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    docs: &[Document],
    groups: &[String],
) -> Result<Vec<EvalRecord>> {
    docs.iter()
        .map(|d| {
            let scores = model.class_probs(d)?;
            Ok(EvalRecord {
                label: d.label,
                predicted: argmax(&scores),
                group: groups.iter().position(|g| *g == d.group).unwrap_or(0),
                scores,
            })
        })
        .collect()
}
