use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Compares tape gradients against central differences.
///
/// `f` builds the scalar on a fresh graph from the given parameters. The
/// return value is the largest `|analytic - numeric| / max(|analytic|, 1e-8)`
/// over every coordinate of every trainable entry.
pub fn finite_diff_gradcheck<F>(f: F, params: &ParamStore, h: f64) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    let mut work = params.snapshot();
    let mut g = Graph::new();
    let loss = f(&work, &mut g)?;
    g.backward(loss, &mut work)?;

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = f(p, &mut g)?;
        Ok(g.item(v))
    };

    let names: Vec<String> = work
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    let mut worst = 0.0_f64;
    for name in names {
        let analytic = work.tensor(&name)?.grad().expect("backward set it").to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work.tensor(&name)?.data()[i];
            work.get_mut(&name)?.tensor.data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(&name)?.tensor.data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(&name)?.tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
