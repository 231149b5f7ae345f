use crate::error::{Error, Result};
use crate::tensor::Real;

/// Mean squared error over `[H, W, 3]` frames.
///
/// With a `[H, W]` visibility mask only pixels marked `1` participate, each
/// contributing its three channels.
pub fn l2_loss<T: Real>(pred: &[T], target: &[T], mask: Option<&[u8]>) -> Result<T> {
    l2_loss_with_grad(pred, target, mask).map(|(loss, _)| loss)
}

/// Loss and its gradient with respect to `pred`; hidden pixels get exactly zero gradient.
pub fn l2_loss_with_grad<T: Real>(
    pred: &[T],
    target: &[T],
    mask: Option<&[u8]>,
) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let channels = 3;
    let count = match mask {
        None => pred.len(),
        Some(m) => {
            if m.len() * channels != pred.len() {
                return Err(Error::ShapeMismatch(format!(
                    "mask has {} pixels, frame has {}",
                    m.len(),
                    pred.len() / channels
                )));
            }
            m.iter().filter(|&&v| v != 0).count() * channels
        }
    };
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let n = T::lit(count as f64);
    let scale = T::lit(2.0) / n;
    let mut total = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for (i, ((&p, &t), g)) in pred.iter().zip(target).zip(grad.iter_mut()).enumerate() {
        if mask.is_some_and(|m| m[i / channels] == 0) {
            continue;
        }
        let d = p - t;
        total += d * d;
        *g = scale * d;
    }
    Ok((total / n, grad))
}
