use crate::error::{Error, Result};
use crate::numerics::{c, Scalar, Tape, Var};

fn row_weights<T: Scalar>(mask: &[bool]) -> Result<Vec<T>> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Contract("loss over a fully masked input".into()));
    }
    let w = T::one() / c::<T>(count as f64);
    Ok(mask.iter().map(|&m| if m { w } else { T::zero() }).collect())
}

fn check_rows(tape: &Tape<impl Scalar>, logits: Var, mask: &[bool]) -> Result<usize> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape[0] != mask.len() {
        return Err(Error::Dimension(format!("loss expects [{}, classes] logits, got {:?}", mask.len(), shape)));
    }
    Ok(shape[1])
}

/// Mean over unmasked rows of `−log softmax(logits)[label]`.
pub fn cross_entropy_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
    let classes = check_rows(tape, logits, mask)?;
    if labels.len() != mask.len() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), mask.len())));
    }
    if let Some((&l, _)) = labels.iter().zip(mask).find(|(&l, &m)| m && l >= classes) {
        return Err(Error::Index { what: "classes", index: l, size: classes });
    }
    let weights = row_weights(mask)?;
    let labels = labels.iter().zip(mask).map(|(&l, &m)| if m { l } else { 0 }).collect();
    let logp = tape.log_softmax(logits)?;
    tape.nll_pick(logp, labels, weights)
}

/// Mean over unmasked rows of `Σ y (log y − log softmax(logits))`, with
/// `0·log 0 = 0`. `soft` is row-major `[rows, classes]`.
pub fn kl_divergence_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, soft: &[T], mask: &[bool]) -> Result<Var> {
    let classes = check_rows(tape, logits, mask)?;
    if soft.len() != mask.len() * classes {
        return Err(Error::Dimension(format!("{} soft labels for {} rows of {classes}", soft.len(), mask.len())));
    }
    let weights: Vec<T> = row_weights(mask)?;
    let mut neg_entropy = 0.0;
    for (r, (&m, &w)) in mask.iter().zip(&weights).enumerate() {
        if !m {
            continue;
        }
        let row = &soft[r * classes..(r + 1) * classes];
        let total: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
        if (total - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < T::zero()) {
            return Err(Error::Contract(format!("soft label row {r} is not a distribution (sum {total})")));
        }
        let h: f64 = row.iter().map(|v| v.to_f64_lossy()).filter(|&y| y > 0.0).map(|y| y * y.ln()).sum();
        neg_entropy += w.to_f64_lossy() * h;
    }
    let logp = tape.log_softmax(logits)?;
    let cross = tape.soft_nll(logp, soft.to_vec(), weights)?;
    tape.add_const(cross, &[c(neg_entropy)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn value(logits: Vec<f64>, classes: usize, f: impl FnOnce(&mut Tape<f64>, Var) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let rows = logits.len() / classes;
        let x = tape.leaf(Tensor::new(vec![rows, classes], logits).unwrap());
        let l = f(&mut tape, x).unwrap();
        tape.data(l)[0]
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = value(vec![0.3; 4], 4, |t, x| cross_entropy_loss(t, x, &[2], &[true]));
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        let peaked = value(vec![0.0, 60.0], 2, |t, x| cross_entropy_loss(t, x, &[1], &[true]));
        assert!(peaked < 1e-20);
        let closed = value(vec![0.0, 3f64.ln()], 2, |t, x| cross_entropy_loss(t, x, &[1], &[true]));
        assert!((closed + 0.75f64.ln()).abs() < 1e-12);
        assert!((closed - 0.28768).abs() < 1e-5);
    }

    #[test]
    fn masked_rows_are_ignored() {
        let a = value(vec![0.0, 3f64.ln(), 5.0, -5.0], 2, |t, x| cross_entropy_loss(t, x, &[1, 1], &[true, false]));
        assert!((a + 0.75f64.ln()).abs() < 1e-12);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        assert!(matches!(cross_entropy_loss(&mut tape, x, &[0], &[false]), Err(Error::Contract(_))));
        assert!(matches!(cross_entropy_loss(&mut tape, x, &[2], &[true]), Err(Error::Index { .. })));
    }

    #[test]
    fn kl_examples() {
        let same = value(vec![0.2f64.ln(), 0.8f64.ln()], 2, |t, x| kl_divergence_loss(t, x, &[0.2, 0.8], &[true]));
        assert!(same.abs() < 1e-12);
        let closed = value(vec![0.0, 0.0], 2, |t, x| kl_divergence_loss(t, x, &[0.2, 0.8], &[true]));
        assert!((closed - (0.2 * 0.4f64.ln() + 0.8 * 1.6f64.ln())).abs() < 1e-12);
        assert!((closed - 0.19274).abs() < 1e-5);
        let logits = vec![0.4, -1.0, 2.0];
        let kl = value(logits.clone(), 3, |t, x| kl_divergence_loss(t, x, &[0.0, 1.0, 0.0], &[true]));
        let ce = value(logits, 3, |t, x| cross_entropy_loss(t, x, &[1], &[true]));
        assert!((kl - ce).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_non_distributions() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        assert!(matches!(kl_divergence_loss(&mut tape, x, &[0.5, 0.6], &[true]), Err(Error::Contract(_))));
    }
}
