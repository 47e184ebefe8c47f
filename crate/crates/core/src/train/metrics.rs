use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn check_lengths(pred: usize, target: usize) -> Result<()> {
    if pred != target {
        return Err(Error::dim("metric", &[pred], &[target]));
    }
    if pred == 0 {
        return Err(Error::Shape("metric over empty vectors".into()));
    }
    Ok(())
}

/// Differentiable mean squared error of `pred: [n]` against `target`.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    check_lengths(tape.value(pred)?.len(), target.len())?;
    let t = tape.constant(Tensor::new(tape.shape(pred)?.to_vec(), target.to_vec())?);
    let r = tape.sub(pred, t)?;
    let sq = tape.square(r)?;
    tape.mean(sq, None, false)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Mean and population standard deviation. This is the only place either
/// is computed, so reports can be recomputed exactly from their values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(base - new) / base` in percent.
pub fn relative_improvement(base: f64, new: f64) -> f64 {
    (base - new) / base * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 1.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
        assert_eq!(mae(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn loss_value_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let l = mse_loss(&mut tape, p, &[1.0, 4.0]).unwrap();
        assert_eq!(tape.value(l).unwrap().item().unwrap(), 2.0);
        tape.backward(l).unwrap();
        // 2 (pred - target) / n
        assert_eq!(tape.grad(p).unwrap().unwrap().data(), &[0.0, -2.0]);
    }

    #[test]
    fn improvements() {
        assert_eq!(relative_improvement(5.0, 5.0), 0.0);
        assert!((relative_improvement(38.07, 37.13) - 2.47).abs() < 0.005);
    }

    #[test]
    fn mean_std_degenerate() {
        assert_eq!(mean_std(&[2.5]), (2.5, 0.0));
        assert_eq!(mean_std(&[1.0, 1.0, 1.0]).1, 0.0);
    }
}
