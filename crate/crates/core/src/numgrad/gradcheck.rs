use super::{Graph, NodeId, NumError, Tensor};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// `(param index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose ±h perturbation changed some ReLU activation pattern.
    pub skipped_kinks: usize,
    /// Some ReLU input was exactly zero at the unperturbed point.
    pub kink_at_base: bool,
    pub passed: bool,
}

/// Relative error with a floor on the denominator so that coordinates with
/// near-zero gradients are compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor used by [`grad_check`].
pub const REL_FLOOR: f64 = 1e-3;

/// Checks `build`'s analytic gradients against central differences.
///
/// `build` receives a fresh graph and the parameter node ids (one per entry
/// of `params`, in order) and returns the scalar loss node. It must be
/// deterministic. Each coordinate is perturbed by `±h` in storage precision;
/// the difference quotient divides by the step actually realized.
pub fn grad_check<F>(params: &[Tensor], build: F, h: f64, tol: f64) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NumError>,
{
    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<bool>), NumError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g.scalar(loss), g.relu_signature().0))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p)).collect();
    let loss = build(&mut g, &ids)?;
    let (_, kink_at_base) = g.relu_signature();
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        kink_at_base,
        passed: true,
    };

    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.data(ids[pi]);
        for ei in 0..p.len() {
            let base = p.data()[ei];
            let plus = (base as f64 + h) as f32;
            let minus = (base as f64 - h) as f32;

            let mut data = p.data().to_vec();
            data[ei] = plus;
            work[pi] = Tensor::new(p.shape().to_vec(), data.clone())?;
            let (f_plus, sig_plus) = eval(&work)?;
            data[ei] = minus;
            work[pi] = Tensor::new(p.shape().to_vec(), data)?;
            let (f_minus, sig_minus) = eval(&work)?;
            work[pi] = p.clone();

            if sig_plus != sig_minus {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (plus as f64 - minus as f64);
            let err = relative_error(analytic[ei], numeric, REL_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, ei));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_squared_output() {
        // y = w·x, loss = y²; dloss/dw = 2·w·x².
        let w = Tensor::new(vec![1, 1], vec![0.75]).unwrap();
        let report = grad_check(
            &[w],
            |g, ids| {
                let x = g.constant(&Tensor::new(vec![1, 1], vec![2.0]).unwrap());
                let y = g.matmul(x, ids[0])?;
                let sq = g.mul(y, y)?;
                Ok(g.sum(sq))
            },
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn relu_kink_is_flagged_and_skipped() {
        // Pre-activation x·w = 0 exactly at w = 0.
        let w = Tensor::new(vec![1, 2], vec![0.0, 1.5]).unwrap();
        let report = grad_check(
            &[w],
            |g, ids| {
                let r = g.relu(ids[0]);
                Ok(g.sum(r))
            },
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.kink_at_base);
        assert_eq!(report.skipped_kinks, 1);
        assert_eq!(report.checked, 1);
        assert!(report.passed);
    }

    #[test]
    fn softplus_matches_finite_differences() {
        let w = Tensor::new(vec![1, 4], vec![-3.0, -0.2, 0.4, 2.5]).unwrap();
        let report = grad_check(
            &[w],
            |g, ids| {
                let s = g.softplus(ids[0]);
                let sq = g.mul(s, s)?;
                Ok(g.sum(sq))
            },
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 4);
    }
}
