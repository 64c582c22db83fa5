//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// A leaf input to a checked graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckInput {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl CheckInput {
    pub fn new(dims: impl Into<Vec<usize>>, values: Vec<f64>) -> Self {
        Self {
            dims: dims.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(max|analytic|, max|numeric|)` over all
    /// inputs; 0 when both gradients vanish.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

fn evaluate<F>(build: &F, inputs: &[CheckInput]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves = inputs
        .iter()
        .map(|i| g.leaf(i.dims.clone(), i.values.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &leaves)?;
    if g.value(out).len() != 1 {
        return Err(Error::shape(format!(
            "gradient check needs a scalar output, got {:?}",
            g.dims(out)
        )));
    }
    Ok((g, leaves, out))
}

/// Compare the reverse-mode gradient of `build` with central differences of
/// step `h` at every input element.
pub fn grad_check<F>(build: F, inputs: &[CheckInput], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, leaves, out) = evaluate(&build, inputs)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&l| grads.get_or_zeros(&g, l)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[i].values.len());
        for j in 0..inputs[i].values.len() {
            let x = inputs[i].values[j];
            work[i].values[j] = x + h;
            let (gp, _, op) = evaluate(&build, &work)?;
            work[i].values[j] = x - h;
            let (gm, _, om) = evaluate(&build, &work)?;
            work[i].values[j] = x;
            col.push((gp.scalar(op) - gm.scalar(om)) / (2.0 * h));
        }
        numeric.push(col);
    }

    let flat_a = analytic.iter().flatten();
    let flat_n = numeric.iter().flatten();
    let scale = flat_a.clone().chain(flat_n.clone()).fold(0.0f64, |m, v| m.max(v.abs()));
    let max_abs = flat_a.zip(flat_n).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let max_rel = if scale > 0.0 { max_abs / scale } else { 0.0 };
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked: inputs.iter().map(|i| i.values.len()).sum(),
        tol,
        passed: max_rel < tol,
    })
}
