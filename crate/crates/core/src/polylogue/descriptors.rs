use super::PolylogueMatrix;

/// Whole-response summary of one polylogue.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub mean: Vec<f64>,
    pub volatility: Vec<f64>,
    pub final_sim: Vec<f64>,
    pub dominance_share: Vec<f64>,
    pub dominance_entropy: f64,
    pub switching_rate: f64,
    /// Whether the descriptors were computed on whitened scores.
    pub whitened: bool,
}

/// `argmax_k s[k,t]` per step; ties go to the lowest index.
pub fn dominant_personas(scores: &PolylogueMatrix) -> Vec<usize> {
    scores
        .scores
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for k in 1..col.len() {
                if col[k] > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn descriptors(scores: &PolylogueMatrix) -> DescriptorSet {
    let k_count = scores.num_personas();
    let t_count = scores.num_tokens();
    assert!(t_count >= 1, "descriptors need at least one step");
    let n = t_count as f64;

    let mut mean = Vec::with_capacity(k_count);
    let mut volatility = Vec::with_capacity(k_count);
    let mut final_sim = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let row = scores.scores.row(k);
        let m = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n;
        mean.push(m);
        volatility.push(var.sqrt());
        final_sim.push(row[t_count - 1]);
    }

    let dominant = dominant_personas(scores);
    let mut counts = vec![0usize; k_count];
    for &k in &dominant {
        counts[k] += 1;
    }
    let dominance_share: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let dominance_entropy = if k_count > 1 {
        let h: f64 = dominance_share
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        (h / (k_count as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let switching_rate = if t_count > 1 {
        let switches = dominant.windows(2).filter(|w| w[0] != w[1]).count();
        switches as f64 / (t_count - 1) as f64
    } else {
        0.0
    };

    DescriptorSet {
        mean,
        volatility,
        final_sim,
        dominance_share,
        dominance_entropy,
        switching_rate,
        whitened: scores.whitened,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn matrix(k: usize, t: usize, f: impl Fn(usize, usize) -> f64) -> PolylogueMatrix {
        PolylogueMatrix {
            trace_id: "x".into(),
            scores: DMatrix::from_fn(k, t, f),
            whitened: false,
        }
    }

    #[test]
    fn single_dominant_persona() {
        let d = descriptors(&matrix(8, 10, |k, t| if k == 3 { 5.0 } else { t as f64 * 0.1 }));
        assert_eq!(d.dominance_entropy, 0.0);
        assert_eq!(d.switching_rate, 0.0);
        assert_eq!(d.dominance_share[3], 1.0);
    }

    #[test]
    fn uniform_dominance() {
        let d = descriptors(&matrix(8, 8, |k, t| if k == t { 1.0 } else { 0.0 }));
        assert!((d.dominance_entropy - 1.0).abs() < 1e-12);
        assert_eq!(d.switching_rate, 1.0);
    }

    #[test]
    fn two_way_split() {
        // dominant sequence A, A, B, B over K = 8
        let d = descriptors(&matrix(8, 4, |k, t| match (k, t) {
            (0, 0 | 1) | (1, 2 | 3) => 1.0,
            _ => 0.0,
        }));
        assert!((d.switching_rate - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.dominance_entropy - 2f64.ln() / 8f64.ln()).abs() < 1e-12);
        assert!((d.dominance_entropy - 1.0 / 3.0).abs() < 1e-12);
        let total: f64 = d.dominance_share.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = matrix(3, 2, |k, _| if k == 0 { 0.0 } else { 1.0 });
        assert_eq!(dominant_personas(&m), vec![1, 1]);
        let flat = matrix(3, 1, |_, _| 0.5);
        assert_eq!(dominant_personas(&flat), vec![0]);
    }

    #[test]
    fn moments_and_final() {
        let d = descriptors(&matrix(1, 2, |_, t| [0.0, 2.0][t]));
        assert_eq!(d.mean, vec![1.0]);
        assert_eq!(d.volatility, vec![1.0]);
        assert_eq!(d.final_sim, vec![2.0]);
        assert_eq!(d.dominance_entropy, 0.0);
    }

    #[test]
    fn single_step() {
        let d = descriptors(&matrix(4, 1, |k, _| k as f64));
        assert_eq!(d.switching_rate, 0.0);
        assert_eq!(d.volatility, vec![0.0; 4]);
    }
}
