use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error, `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(input, element)` of the worst error.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at `worst`.
    pub worst_values: Option<(f64, f64)>,
    /// First `(input, element)` whose comparison was not finite.
    pub non_finite: Option<(usize, usize)>,
    pub n_checked: usize,
    /// `(analytic, numeric)` per input, per element.
    pub values: Vec<Vec<(f64, f64)>>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite.is_none() && self.max_rel_error <= tol
    }

    /// Elementwise `|a - n| <= rel * max(|a|, |n|) + abs`. Central differences
    /// carry an absolute rounding floor, so tiny gradients need the `abs` term.
    pub fn passed_with_floor(&self, rel: f64, abs: f64) -> bool {
        self.non_finite.is_none()
            && self.values.iter().flatten().all(|&(a, n)| {
                (a - n).abs() <= rel * a.abs().max(n.abs()) + abs
            })
    }
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor], requires_grad: bool) -> Result<(Graph, Var, Vec<Var>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone(), requires_grad))
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Dimension(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.shape(out)
        )));
    }
    Ok((g, out, vars))
}

/// Compares reverse-mode gradients of `f` against
/// `(f(x + eps) - f(x - eps)) / (2 eps)` for every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let (mut g, out, vars) = eval_scalar(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        non_finite: None,
        n_checked: 0,
        values: Vec::with_capacity(inputs.len()),
    };
    let mut probe = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        report.values.push(Vec::with_capacity(input.len()));
        for ei in 0..input.len() {
            let x0 = input.data()[ei];
            let mut side = |delta: f64| -> Result<Option<f64>> {
                probe[ti].data_mut()[ei] = x0 + delta;
                let r = eval_scalar(&f, &probe, false);
                probe[ti].data_mut()[ei] = x0;
                match r {
                    Ok((g, out, _)) => Ok(Some(g.value(out).data()[0])),
                    Err(Error::NonFinite { .. } | Error::Degenerate(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            };
            let (plus, minus) = (side(eps)?, side(-eps)?);
            report.n_checked += 1;
            let numeric = match (plus, minus) {
                (Some(p), Some(m)) => (p - m) / (2.0 * eps),
                _ => f64::NAN,
            };
            let a = analytic[ti][ei];
            report.values[ti].push((a, numeric));
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if !rel.is_finite() {
                report.non_finite.get_or_insert((ti, ei));
                continue;
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ti, ei));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}
