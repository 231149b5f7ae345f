use crate::decoder::{ParamRole, ParameterStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PruneResult {
    pub store: ParameterStore<f32>,
    /// `(tensor name, keep mask)` for every pruned tensor; `false` marks a zeroed entry.
    pub masks: Vec<(String, Vec<bool>)>,
    /// Zeroed fraction of the prunable weights.
    pub sparsity: f64,
}

/// Zeroes the `round(sparsity · N)` smallest-magnitude entries across `tensors`,
/// breaking ties by tensor order and then index. Returns the number zeroed.
pub fn prune_global(tensors: &mut [&mut [f32]], sparsity: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidConfig(format!(
            "sparsity must lie in [0, 1), got {sparsity}"
        )));
    }
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    let k = (sparsity * total as f64).round() as usize;
    if k == 0 {
        return Ok(0);
    }
    let mut order: Vec<(f32, usize, usize)> = tensors
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| t.iter().enumerate().map(move |(i, v)| (v.abs(), ti, i)))
        .collect();
    order.select_nth_unstable_by(k - 1, |a, b| {
        a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    for &(_, ti, i) in &order[..k] {
        tensors[ti][i] = 0.0;
    }
    Ok(k)
}

/// Global magnitude pruning of decoder convolution weights; codes and biases are kept.
pub fn prune(store: &ParameterStore<f32>, sparsity: f64) -> Result<PruneResult> {
    let mut store = store.clone();
    let (names, pruned, total) = {
        let mut targets: Vec<_> = store
            .tensors_mut()
            .into_iter()
            .filter(|p| p.role == ParamRole::Weight)
            .collect();
        let names: Vec<String> = targets.iter().map(|p| p.name.clone()).collect();
        let mut slices: Vec<&mut [f32]> = targets.iter_mut().map(|p| p.tensor.data_mut()).collect();
        let total: usize = slices.iter().map(|s| s.len()).sum();
        let pruned = prune_global(&mut slices, sparsity)?;
        (names, pruned, total)
    };
    let masks = store
        .tensors()
        .into_iter()
        .filter(|p| names.contains(&p.name))
        .map(|p| (p.name, p.tensor.data().iter().map(|&v| v != 0.0).collect()))
        .collect();
    Ok(PruneResult {
        store,
        masks,
        sparsity: if total == 0 {
            0.0
        } else {
            pruned as f64 / total as f64
        },
    })
}
