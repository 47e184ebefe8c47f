//! Trailing-dimension broadcasting for binary elementwise ops.

use super::{strides, Tensor};
use crate::error::{Error, Result};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::dim(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Walks every row of the last axis of `out_shape`, calling
/// `f(out_start, a_offset, b_offset)` with the offsets of the row start.
fn for_each_row(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let Some((&w, outer_shape)) = out_shape.split_last() else {
        f(0, 0, 0);
        return;
    };
    let rank = outer_shape.len();
    let rows: usize = outer_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for r in 0..rows {
        f(r * w, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < outer_shape[ax] {
                break;
            }
            oa -= sa[ax] * outer_shape[ax];
            ob -= sb[ax] * outer_shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    if is_suffix(&b.shape, &a.shape) {
        let mut data = Vec::with_capacity(a.len());
        for chunk in a.data.chunks(b.len()) {
            data.extend(chunk.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
        }
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    if is_suffix(&a.shape, &b.shape) {
        let mut data = Vec::with_capacity(b.len());
        for chunk in b.data.chunks(a.len()) {
            data.extend(a.data.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
        return Ok(Tensor::from_parts(b.shape.clone(), data));
    }
    let out_shape = broadcast_shape(op, &a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let w = *out_shape.last().unwrap_or(&1);
    let (la, lb) = (*sa.last().unwrap_or(&0), *sb.last().unwrap_or(&0));
    let mut data = vec![0.0; out_shape.iter().product()];
    for_each_row(&out_shape, &sa, &sb, |start, oa, ob| {
        let row = &mut data[start..start + w];
        match (la, lb) {
            (1, 0) => {
                let y = b.data[ob];
                for (o, &x) in row.iter_mut().zip(&a.data[oa..oa + w]) {
                    *o = f(x, y);
                }
            }
            (0, 1) => {
                let x = a.data[oa];
                for (o, &y) in row.iter_mut().zip(&b.data[ob..ob + w]) {
                    *o = f(x, y);
                }
            }
            _ => {
                for (j, o) in row.iter_mut().enumerate() {
                    *o = f(a.data[oa + j * la], b.data[ob + j * lb]);
                }
            }
        }
    });
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sums `grad` (shaped like a broadcast result) back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let numel: usize = shape.iter().product();
    let mut out = vec![0.0; numel];
    if is_suffix(shape, &grad.shape) {
        for chunk in grad.data.chunks(numel) {
            for (o, g) in out.iter_mut().zip(chunk) {
                *o += g;
            }
        }
    } else {
        let sa = broadcast_strides(shape, &grad.shape);
        let w = *grad.shape.last().unwrap_or(&1);
        let la = *sa.last().unwrap_or(&0);
        for_each_row(&grad.shape, &sa, &sa, |start, oa, _| {
            let row = &grad.data[start..start + w];
            if la == 0 {
                out[oa] += row.iter().sum::<f64>();
            } else {
                for (j, g) in row.iter().enumerate() {
                    out[oa + j * la] += g;
                }
            }
        });
    }
    Tensor::from_parts(shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_broadcast_matches_manual() {
        let a = Tensor::new(vec![2, 3, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).unwrap();
        let c = zip_broadcast("mul", &a, &b, |x, y| x * y).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.at(&[1, 2, 1]), 6.0 * 60.0);
        assert_eq!(c.at(&[0, 1, 0]), 2.0 * 30.0);
    }

    #[test]
    fn reduce_inverts_broadcast_counts() {
        let g = Tensor::ones(&[2, 3, 2]);
        assert_eq!(reduce_to_shape(&g, &[3, 2]).data(), &[2.0; 6]);
        assert_eq!(reduce_to_shape(&g, &[2, 3, 1]).data(), &[2.0; 6]);
        assert_eq!(reduce_to_shape(&g, &[1]).data(), &[12.0]);
        assert_eq!(reduce_to_shape(&g, &[]).data(), &[12.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        assert!(broadcast_shape("add", &[2, 3], &[2]).is_err());
        assert_eq!(broadcast_shape("add", &[4, 1], &[3]).unwrap(), vec![4, 3]);
    }
}
