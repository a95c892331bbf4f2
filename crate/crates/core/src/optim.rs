//! Derivative-free Nelder-Mead simplex minimizer used by the error-model
//! maximum-likelihood fits.

pub(crate) struct OptimResult {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Minimize `f` from `start` with an initial simplex of edge `step`.
/// Terminates when the simplex function values collapse within `fatol` or
/// after `max_iter` reflections.
pub(crate) fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    step: f64,
    max_iter: usize,
    fatol: f64,
) -> OptimResult {
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += step;
        let v = f(&p);
        simplex.push((p, v));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[dim].1 - simplex[0].1).abs() < fatol {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(p, _)| p[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let at = |coef: f64| -> Vec<f64> {
            (0..dim)
                .map(|j| centroid[j] + coef * (centroid[j] - worst.0[j]))
                .collect()
        };

        let reflected = at(1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = at(2.0);
            let fe = f(&expanded);
            simplex[dim] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 { at(0.5) } else { at(-0.5) };
            let fc = f(&contracted);
            if fc < worst.1.min(fr) {
                simplex[dim] = (contracted, fc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for j in 0..dim {
                        entry.0[j] = best[j] + 0.5 * (entry.0[j] - best[j]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    OptimResult {
        point: simplex[0].0.clone(),
        value: simplex[0].1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let f = |p: &[f64]| (p[0] - 1.5).powi(2) + 3.0 * (p[1] + 0.5).powi(2) + 2.0;
        let r = nelder_mead(&f, &[0.0, 0.0], 0.5, 2000, 1e-14);
        assert!((r.point[0] - 1.5).abs() < 1e-6);
        assert!((r.point[1] + 0.5).abs() < 1e-6);
        assert!((r.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let r = nelder_mead(&f, &[-1.2, 1.0], 0.5, 10_000, 1e-15);
        assert!((r.point[0] - 1.0).abs() < 1e-4, "x = {}", r.point[0]);
        assert!((r.point[1] - 1.0).abs() < 1e-4, "y = {}", r.point[1]);
    }
}
