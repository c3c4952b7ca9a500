use super::ImagePromptPair;
use crate::error::{Error, Result};

/// Similarity threshold used to clean scraped image-prompt pairs.
pub const DEFAULT_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Pairs at or above the threshold, in input order.
    pub kept: Vec<ImagePromptPair>,
    /// Cosine per input pair; `None` when an embedding was degenerate.
    pub similarity: Vec<Option<f64>>,
    /// `(id, reason)` for every dropped pair.
    pub rejected: Vec<(String, String)>,
}

/// Plain cosine; refuses vectors with norm below `1e-12`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::Degenerate(format!("zero-norm embedding ({na:e}, {nb:e})")));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Keeps the pairs whose image and text embeddings have cosine similarity
/// `>= threshold`.
pub fn filter_pairs<F, G>(
    pairs: &[ImagePromptPair],
    mut image_embed: F,
    mut text_embed: G,
    threshold: f64,
) -> Result<FilterOutcome>
where
    F: FnMut(&ImagePromptPair) -> Result<Vec<f64>>,
    G: FnMut(&ImagePromptPair) -> Result<Vec<f64>>,
{
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [-1, 1]")));
    }
    let mut out = FilterOutcome {
        kept: Vec::new(),
        similarity: Vec::with_capacity(pairs.len()),
        rejected: Vec::new(),
    };
    for p in pairs {
        let sim = match cosine_similarity(&image_embed(p)?, &text_embed(p)?) {
            Ok(s) => s,
            Err(Error::Degenerate(reason)) => {
                out.similarity.push(None);
                out.rejected.push((p.id.clone(), reason));
                continue;
            }
            Err(e) => return Err(e),
        };
        out.similarity.push(Some(sim));
        if sim >= threshold {
            out.kept.push(p.clone());
        } else {
            out.rejected
                .push((p.id.clone(), format!("similarity {sim:.6} below {threshold}")));
        }
    }
    Ok(out)
}
