use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Float};

/// Per-row negative log-likelihood in nats: `-log softmax(logits[r])[targets[r]]`.
///
/// Rows are already aligned: row `r` holds the logits that predict
/// `targets[r]`.
pub fn next_token_nll<T: Float>(logits: &[T], vocab: usize, targets: &[u32]) -> Result<Vec<f64>> {
    if logits.len() != targets.len() * vocab {
        return Err(Error::Contract(format!(
            "{} logit rows for {} targets",
            logits.len() / vocab.max(1),
            targets.len()
        )));
    }
    logits
        .chunks_exact(vocab)
        .zip(targets)
        .map(|(row, &t)| {
            let t = t as usize;
            if t >= vocab {
                return Err(Error::Contract(format!("target {t} outside vocabulary {vocab}")));
            }
            Ok((log_sum_exp(row) - row[t]).to_f64())
        })
        .collect()
}

/// NLL of one row and `d/dlogits`, scaled by `weight`, written into `grad`.
pub(crate) fn nll_with_grad<T: Float>(row: &[T], target: usize, weight: T, grad: &mut [T]) -> T {
    let lse = log_sum_exp(row);
    for (g, &v) in grad.iter_mut().zip(row) {
        *g = (v - lse).exp() * weight;
    }
    grad[target] -= weight;
    lse - row[target]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = vec![0.3f64; 20 * 5];
        let nll = next_token_nll(&logits, 20, &[0, 3, 19, 7, 1]).unwrap();
        for v in nll {
            assert!((v - 20f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_give_zero() {
        let mut logits = vec![0.0f64; 4];
        logits[2] = 60.0;
        let nll = next_token_nll(&logits, 4, &[2]).unwrap();
        assert!(nll[0] < 1e-20);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches!(next_token_nll(&[0.0f32; 8], 4, &[1]), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let row = [0.5f64, -1.0, 2.0];
        let mut g = [0.0; 3];
        nll_with_grad(&row, 1, 1.0, &mut g);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((g[0] - row[0].exp() / z).abs() < 1e-12);
        assert!((g[1] - (row[1].exp() / z - 1.0)).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }
}
