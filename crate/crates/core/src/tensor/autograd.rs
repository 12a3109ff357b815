use std::collections::{HashMap, HashSet};

use super::{with_grad_mode, Shape, Tensor};
use crate::error::{Error, Result};

enum Targets<'a> {
    Leaves,
    Tensors(&'a HashSet<u64>),
}

/// Post-order over the tracked part of the graph (inputs before outputs).
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for input in node.inputs.iter().rev() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

fn accumulate(map: &mut HashMap<u64, Tensor>, id: u64, g: Tensor) {
    match map.remove(&id) {
        Some(prev) => {
            map.insert(id, prev.add_unchecked(&g));
        }
        None => {
            map.insert(id, g);
        }
    }
}

/// Core reverse sweep. Returns gradients for every target reached.
fn sweep(
    root: &Tensor,
    seed: Tensor,
    targets: Targets<'_>,
    create_graph: bool,
    consume: bool,
) -> Result<(Vec<Tensor>, HashMap<u64, Tensor>)> {
    let order = topo_order(root);

    let is_target = |t: &Tensor| match &targets {
        Targets::Leaves => t.is_leaf() && t.requires_grad(),
        Targets::Tensors(ids) => ids.contains(&t.id()),
    };

    let mut reach: HashMap<u64, bool> = HashMap::with_capacity(order.len());
    for t in &order {
        let mut r = is_target(t);
        if let Some(node) = t.node() {
            if consume && node.consumed.get() {
                return Err(Error::GraphConsumed);
            }
            r |= node
                .inputs
                .iter()
                .any(|i| reach.get(&i.id()).copied().unwrap_or(false));
        }
        reach.insert(t.id(), r);
    }

    let reached_targets: Vec<Tensor> = order.iter().filter(|t| is_target(t)).cloned().collect();
    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    grads.insert(root.id(), seed);

    with_grad_mode(create_graph, || {
        for t in order.iter().rev() {
            let Some(node) = t.node() else { continue };
            if !reach[&t.id()] {
                continue;
            }
            let g = if is_target(t) {
                grads.get(&t.id()).cloned()
            } else {
                grads.remove(&t.id())
            };
            let Some(g) = g else { continue };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|i| i.requires_grad() && reach.get(&i.id()).copied().unwrap_or(false))
                .collect();
            let input_grads = (node.backward)(&g, t, &node.inputs, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((input, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                if let (Some(gi), true) = (gi, *need) {
                    debug_assert_eq!(gi.shape(), input.shape(), "grad shape from {}", node.name);
                    accumulate(&mut grads, input.id(), gi);
                }
            }
        }
    });

    if consume {
        for t in &order {
            if let Some(node) = t.node() {
                node.consumed.set(true);
            }
        }
    }
    Ok((reached_targets, grads))
}

pub(crate) fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::NonScalar(loss.shape()));
    }
    if !loss.requires_grad() {
        return Err(Error::NoGraph);
    }
    let seed = Tensor::ones(loss.shape());
    let (leaves, grads) = sweep(loss, seed, Targets::Leaves, false, true)?;
    for leaf in leaves {
        if let Some(g) = grads.get(&leaf.id()) {
            leaf.accumulate_grad(&g.data());
        }
    }
    Ok(())
}

/// Gradient of `sum(output)` with respect to each of `inputs`.
///
/// Leaf `.grad` buffers are left untouched and the graph is not consumed.
/// With `create_graph` the returned tensors are themselves differentiable.
/// Inputs the output does not depend on get a zero gradient.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    let zeros = |s: Shape| Tensor::zeros(s);
    if !output.requires_grad() {
        return Ok(inputs.iter().map(|t| zeros(t.shape())).collect());
    }
    let ids: HashSet<u64> = inputs.iter().map(|t| t.id()).collect();
    let seed = Tensor::ones(output.shape());
    let (_, grads) = sweep(output, seed, Targets::Tensors(&ids), create_graph, false)?;
    Ok(inputs
        .iter()
        .map(|t| {
            grads
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| zeros(t.shape()))
        })
        .collect())
}
