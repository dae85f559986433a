use super::{Graph, NodeId, NumError, ParamStore};

/// Worst relative error found for one parameter tensor.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Result of [`grad_check`]: per-parameter worst-case errors, sorted by
/// parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradCheckResult {
    pub reports: Vec<GradReport>,
}

impl GradCheckResult {
    pub fn max_rel_err(&self) -> f64 {
        self.reports
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

fn run_loss(
    build: &mut dyn FnMut(&mut Graph, &ParamStore) -> Result<NodeId, NumError>,
    store: &ParamStore,
) -> Result<(Graph, NodeId), NumError> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    if !g.value(loss).is_scalar() {
        return Err(NumError::NonScalarLoss {
            shape: g.value(loss).shape().to_vec(),
        });
    }
    Ok((g, loss))
}

/// Compare the analytic gradient of a scalar loss against central finite
/// differences for every entry of every parameter in `store`.
///
/// `build` must construct the loss from scratch each call; it is invoked
/// twice up front with identical parameters and the two loss values must
/// be bitwise equal, otherwise the builder is reading state outside the
/// store and the comparison would be meaningless.
///
/// Relative error per entry is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(
    mut build: impl FnMut(&mut Graph, &ParamStore) -> Result<NodeId, NumError>,
    store: &mut ParamStore,
    eps: f64,
) -> Result<GradCheckResult, NumError> {
    if eps <= 0.0 {
        return Err(NumError::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }

    let (mut g1, loss1) = run_loss(&mut build, store)?;
    let l1 = g1.value(loss1).item();
    let (g2, loss2) = run_loss(&mut build, store)?;
    let l2 = g2.value(loss2).item();
    if l1.to_bits() != l2.to_bits() {
        return Err(NumError::NonDeterministic {
            first: l1,
            second: l2,
        });
    }

    g1.backward(loss1, store)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let analytic: Vec<Vec<f64>> = names
        .iter()
        .map(|n| store.grad(n).map(|a| a.data().to_vec()))
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::with_capacity(names.len());
    for (name, grads) in names.iter().zip(&analytic) {
        let mut worst = GradReport {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in grads.iter().enumerate() {
            let orig = store.get(name)?.data()[i];

            store.get_mut(name)?.data_mut()[i] = orig + eps;
            let (gp, lp) = run_loss(&mut build, store)?;
            let plus = gp.value(lp).item();

            store.get_mut(name)?.data_mut()[i] = orig - eps;
            let (gm, lm) = run_loss(&mut build, store)?;
            let minus = gm.value(lm).item();

            store.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        reports.push(worst);
    }
    Ok(GradCheckResult { reports })
}
