use super::TrainError;
use crate::moe::MoeModel;
use crate::semantic::Verdict;
use crate::taxonomy::NULL_CODE;

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(max(p[target], PROB_FLOOR))`.
pub fn level_loss(probs: &[f64], target: usize) -> Result<f64, TrainError> {
    let p = probs.get(target).ok_or(TrainError::TargetRange { index: target, width: probs.len() })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `ω_c · Σ_{ℓ≠d} L_ℓ + (1 − ω_c) · L_d` with `d` 1-based.
pub fn hierarchical_loss(level_losses: &[f64], leaf_level: usize, omega_c: f64) -> Result<f64, TrainError> {
    if leaf_level == 0 || leaf_level > level_losses.len() {
        return Err(TrainError::LeafLevel { level: leaf_level, levels: level_losses.len() });
    }
    let others: f64 = level_losses.iter().enumerate().filter(|(i, _)| i + 1 != leaf_level).map(|(_, l)| l).sum();
    Ok(omega_c * others + (1.0 - omega_c) * level_losses[leaf_level - 1])
}

/// Cross-entropy against the verdict class; U contributes nothing.
pub fn semantic_loss(probs: &[f64], target: Verdict) -> f64 {
    match target {
        Verdict::U => 0.0,
        v => -probs[v.class_index()].max(PROB_FLOOR).ln(),
    }
}

pub fn total_loss(l_c: f64, l_s: f64, omega_s: f64) -> f64 {
    omega_s * l_c + (1.0 - omega_s) * l_s
}

/// Per-level target label indices of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelTargets {
    /// `None` marks an unsupervised level (beyond the path when NULL is
    /// disabled).
    pub indices: Vec<Option<usize>>,
    /// Depth `d` of the annotated path.
    pub leaf_level: usize,
}

/// Targets from an annotated path: the code at each position must be a
/// label of that level; deeper levels get NULL.
pub fn level_targets(model: &MoeModel, label_path: &[String]) -> Result<LevelTargets, String> {
    let levels = model.config.levels;
    let d = label_path.len();
    if d == 0 || d > levels {
        return Err(format!("path depth {d} outside 1..={levels}"));
    }
    let mut indices = Vec::with_capacity(levels);
    for (l, code) in label_path.iter().enumerate() {
        let idx = (code != NULL_CODE)
            .then(|| model.label_index(l + 1, code))
            .flatten()
            .ok_or_else(|| format!("`{code}` is not a level-{} label", l + 1))?;
        indices.push(Some(idx));
    }
    for l in d + 1..=levels {
        indices.push(model.label_index(l, NULL_CODE));
    }
    Ok(LevelTargets { indices, leaf_level: d })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_loss_cases() {
        let u = [0.2; 5];
        assert!((level_loss(&u, 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert_eq!(level_loss(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((level_loss(&[0.7, 0.2, 0.1], 1).unwrap() - 1.6094379124341003).abs() < 1e-12);
        assert_eq!(level_loss(&[1.0], 1), Err(TrainError::TargetRange { index: 1, width: 1 }));
        assert_eq!(level_loss(&[0.0, 1.0], 0).unwrap(), -(1e-12f64).ln());
    }

    #[test]
    fn hierarchical_collapses() {
        let l = [0.3, 1.7, 0.9, 2.2];
        assert_eq!(hierarchical_loss(&l, 3, 0.0).unwrap(), 0.9);
        assert_eq!(hierarchical_loss(&l, 3, 1.0).unwrap(), 0.3 + 1.7 + 2.2);
        assert!((hierarchical_loss(&[1.0, 2.0, 3.0], 3, 0.2).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(hierarchical_loss(&l, 5, 0.2), Err(TrainError::LeafLevel { .. })));
        assert!(matches!(hierarchical_loss(&l, 0, 0.2), Err(TrainError::LeafLevel { .. })));
    }

    #[test]
    fn semantic_cases() {
        assert_eq!(semantic_loss(&[0.1, 0.1, 0.8], Verdict::U), 0.0);
        assert!((semantic_loss(&[1.0 / 3.0; 3], Verdict::Y) - 3f64.ln()).abs() < 1e-12);
        assert!((semantic_loss(&[0.1, 0.8, 0.1], Verdict::N) - 0.2231435513142097).abs() < 1e-12);
    }

    #[test]
    fn total_cases() {
        assert_eq!(total_loss(2.5, 7.0, 1.0), 2.5);
        assert_eq!(total_loss(2.5, 7.0, 0.0), 7.0);
        assert!((total_loss(2.0, 1.0, 0.2) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn targets_from_path() {
        let m = crate::moe::tests::small_model(2, 0);
        // Levels: [A, B, ∅], [A1, A2, B1, ∅], [B11, ∅].
        let t = level_targets(&m, &["B".to_string(), "B1".to_string()]).unwrap();
        assert_eq!(t.indices, vec![Some(1), Some(2), Some(1)]);
        assert_eq!(t.leaf_level, 2);
        assert!(level_targets(&m, &["A1".to_string()]).is_err());
        assert!(level_targets(&m, &[]).is_err());
    }
}
