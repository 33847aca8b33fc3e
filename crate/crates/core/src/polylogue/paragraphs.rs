use std::ops::Range;

use crate::store::ActivationTrace;

pub const SEPARATOR: &str = "\n\n";

/// Token ranges of a response's paragraphs. The ranges are contiguous,
/// non-overlapping and cover `[0, T)`; a range is empty when two separators
/// complete inside the same token or the text ends on a separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphSegmentation {
    pub trace_id: String,
    pub ranges: Vec<Range<usize>>,
}

impl ParagraphSegmentation {
    pub fn num_paragraphs(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// 0-based paragraph index of every token.
    pub fn paragraph_of_tokens(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_tokens());
        for (p, range) in self.ranges.iter().enumerate() {
            out.extend(std::iter::repeat_n(p, range.len()));
        }
        out
    }
}

/// Splits a token sequence into paragraphs on non-overlapping `"\n\n"`
/// occurrences of the concatenated text. The token that completes a
/// separator closes the paragraph it belongs to.
pub fn segment_tokens(tokens: &[String]) -> Vec<Range<usize>> {
    let mut ends = Vec::with_capacity(tokens.len());
    let mut text = String::new();
    for tok in tokens {
        text.push_str(tok);
        ends.push(text.len());
    }
    let mut ranges = Vec::new();
    let mut start = 0;
    for (idx, sep) in text.match_indices(SEPARATOR) {
        let last_byte = idx + sep.len() - 1;
        // first token whose end lies past the separator's final byte
        let completing = ends.partition_point(|&e| e <= last_byte);
        ranges.push(start..completing + 1);
        start = completing + 1;
    }
    ranges.push(start..tokens.len());
    ranges
}

pub fn segment_paragraphs(trace: &ActivationTrace) -> ParagraphSegmentation {
    ParagraphSegmentation {
        trace_id: trace.trace_id().to_string(),
        ranges: segment_tokens(trace.tokens()),
    }
}

/// Bin of 0-based paragraph `p` out of `num_paragraphs`: `floor(p·n_b/P)`,
/// clipped to `n_b - 1`.
pub fn paragraph_bin(p: usize, num_paragraphs: usize, n_bins: usize) -> usize {
    debug_assert!(num_paragraphs >= 1 && n_bins >= 1);
    ((p * n_bins) / num_paragraphs).min(n_bins - 1)
}

pub fn bin_paragraphs(num_paragraphs: usize, n_bins: usize) -> Vec<usize> {
    (0..num_paragraphs)
        .map(|p| paragraph_bin(p, num_paragraphs, n_bins))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_paragraphs() {
        let r = segment_tokens(&toks(&["intro", "\n\n", "body", "\n", "\n", "end"]));
        assert_eq!(r, vec![0..2, 2..5, 5..6]);
    }

    #[test]
    fn greedy_non_overlap() {
        let r = segment_tokens(&toks(&["a\n\n\nb"]));
        assert_eq!(r.len(), 2);
        let r = segment_tokens(&toks(&["a", "\n", "\n", "\n", "b"]));
        assert_eq!(r, vec![0..3, 3..5]);
    }

    #[test]
    fn no_separator() {
        assert_eq!(segment_tokens(&toks(&["a", "b", "c"])), vec![0..3]);
    }

    #[test]
    fn empty_paragraphs_keep_partition() {
        let r = segment_tokens(&toks(&["x\n\n\n\ny", "z\n\n"]));
        assert_eq!(r, vec![0..1, 1..1, 1..2, 2..2]);
    }

    #[test]
    fn bins() {
        assert_eq!(bin_paragraphs(5, 20), vec![0, 4, 8, 12, 16]);
        assert_eq!(bin_paragraphs(20, 20), (0..20).collect::<Vec<_>>());
        assert_eq!(bin_paragraphs(1, 20), vec![0]);
        assert_eq!(bin_paragraphs(40, 20)[39], 19);
        assert_eq!(bin_paragraphs(3, 1), vec![0, 0, 0]);
    }
}
