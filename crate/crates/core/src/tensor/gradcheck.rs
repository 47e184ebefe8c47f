use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Relative-error denominators never drop below this.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input, flat coordinate) of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// and returns the largest relative error over all coordinates.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(report.max_rel_error)
}

/// Multi-input variant: every tensor in `inputs` is perturbed coordinate by
/// coordinate.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Precondition(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.cloned().expect("params always get a grad")))
        .collect::<Result<_>>()?;
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = rel;
                report.worst = (which, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Tolerance used by [`primitive_suite`] and the model checks.
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn sample(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep values away from 0 so relu's kink is never straddled.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

type Primitive = (&'static str, Vec<Vec<usize>>, fn(&mut Tape, &[Var]) -> Result<Var>);

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn probe(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y)?.to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::from_parts(shape, (0..n).map(|i| 0.5 + ((i * 7) % 11) as f64 / 10.0).collect());
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p, None, false)
}

fn primitives() -> Vec<Primitive> {
    vec![
        ("add", vec![vec![2, 3, 4], vec![3, 4]], |t, v| t.add(v[0], v[1])),
        ("add_inner_broadcast", vec![vec![2, 3, 1], vec![3, 4]], |t, v| t.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![4]], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3, 1], vec![3, 4]], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![vec![3, 2]], |t, v| t.scale(v[0], -1.7)),
        ("add_scalar", vec![vec![3, 2]], |t, v| t.add_scalar(v[0], 0.3)),
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], |t, v| t.matmul(v[0], v[1])),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |t, v| t.bmm(v[0], v[1], false)),
        ("bmm_trans_b", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, v| t.bmm(v[0], v[1], true)),
        ("sum_axis", vec![vec![2, 3, 4]], |t, v| t.sum(v[0], Some(1), false)),
        ("mean_axis", vec![vec![2, 3, 4]], |t, v| t.mean(v[0], Some(2), true)),
        ("mean_all", vec![vec![2, 3]], |t, v| t.mean(v[0], None, false)),
        ("softmax", vec![vec![2, 3, 5]], |t, v| t.softmax(v[0])),
        ("layer_norm", vec![vec![2, 3, 6], vec![6], vec![6]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("relu", vec![vec![4, 3]], |t, v| t.relu(v[0])),
        ("gelu", vec![vec![4, 3]], |t, v| t.gelu(v[0])),
        ("tanh", vec![vec![4, 3]], |t, v| t.tanh(v[0])),
        ("square", vec![vec![4, 3]], |t, v| t.square(v[0])),
        ("gather", vec![vec![5, 3]], |t, v| t.gather(v[0], &[4, 0, 4, 2], "table")),
        ("reshape", vec![vec![2, 6]], |t, v| t.reshape(v[0], &[3, 4])),
        ("permute", vec![vec![2, 3, 4, 2]], |t, v| t.permute(v[0], &[0, 2, 1, 3])),
        ("permute_last", vec![vec![2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1])),
        ("concat", vec![vec![2, 2, 3], vec![2, 4, 3]], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("narrow", vec![vec![2, 5, 3]], |t, v| t.narrow(v[0], 1, 1, 3)),
        ("dropout", vec![vec![4, 5]], |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            t.dropout(v[0], 0.3, &mut rng)
        }),
    ]
}

/// Gradient-checks every differentiable tape primitive on seeded random
/// inputs. Returns `(name, max relative error)` per primitive.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitives()
        .into_iter()
        .map(|(name, shapes, f)| {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| sample(&mut rng, s)).collect();
            let report = grad_check_many(
                |tape, vars| {
                    let y = f(tape, vars)?;
                    probe(tape, y)
                },
                &inputs,
                1e-5,
            )?;
            Ok((name, report.max_rel_error))
        })
        .collect()
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v)?;
    if t.len() != 1 {
        return Err(Error::Shape(format!("grad_check needs a scalar function, got shape {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let c = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let err = grad_check(
            |tape, x| {
                let c = tape.constant(c.clone());
                let p = tape.mul(c, x)?;
                tape.sum(p, None, false)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn every_primitive_passes() {
        for (name, err) in primitive_suite(3).unwrap() {
            assert!(err < GRAD_TOLERANCE, "{name}: {err}");
        }
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let x = Tensor::scalar(1.0);
        let f = |tape: &mut Tape, x: Var| tape.square(x);
        assert!(matches!(grad_check(f, &x, 1e-2), Err(Error::Precondition(_))));
        assert!(matches!(grad_check(f, &x, 1e-9), Err(Error::Precondition(_))));
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let f = |tape: &mut Tape, x: Var| tape.square(x);
        assert!(matches!(grad_check(f, &x, 1e-5), Err(Error::Shape(_))));
    }
}
