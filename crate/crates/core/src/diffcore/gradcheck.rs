use super::ParameterSet;

/// Central finite-difference step.
const STEP: f64 = 1e-5;
/// Denominator floor so entries with vanishing gradients are judged on
/// absolute error.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per layer, in parameter order.
    pub per_parameter: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn grad_check<F>(
    params: &ParameterSet,
    analytic: &ParameterSet,
    loss: F,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&ParameterSet) -> f64,
{
    let mut per_parameter = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for (name, layer) in params.iter() {
        let count = layer.weight.len() + layer.bias.len();
        let grads: Vec<f64> = analytic
            .get(name)
            .map(|g| g.weight.data().iter().chain(g.bias.data()).copied().collect())
            .unwrap_or_else(|| vec![0.0; count]);
        let mut worst = 0.0_f64;
        for (k, &a) in grads.iter().enumerate() {
            let orig = *slot(&mut probe, name, k);
            *slot(&mut probe, name, k) = orig + STEP;
            let up = loss(&probe);
            *slot(&mut probe, name, k) = orig - STEP;
            let down = loss(&probe);
            *slot(&mut probe, name, k) = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
        per_parameter.push((name.to_string(), worst));
    }
    let max_rel_error = per_parameter.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    GradCheckReport {
        per_parameter,
        max_rel_error,
        tolerance,
    }
}

/// Entry `k` of a layer, counting weights before biases.
fn slot<'a>(params: &'a mut ParameterSet, name: &str, k: usize) -> &'a mut f64 {
    let layer = params.get_mut(name).expect("probe mirrors params");
    let n_weight = layer.weight.len();
    if k < n_weight {
        &mut layer.weight.data_mut()[k]
    } else {
        &mut layer.bias.data_mut()[k - n_weight]
    }
}
