//! Central finite-difference verification of tape gradients.

use crate::error::Result;

use super::{ParameterStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compare analytic gradients of a scalar loss against central differences
/// for every element of every tensor in `store`.
///
/// `build` must construct the forward pass on the given tape and return the
/// scalar loss node; it is re-run for each perturbed evaluation.
pub fn check_gradients<F>(store: &ParameterStore, build: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var>,
{
    // Analytic pass.
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&analytic, &mut tape)?;
    tape.backward(loss, 1.0, &mut analytic)?;

    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(store, &mut tape)?;
        Ok(tape.scalar(loss))
    };

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: None,
    };
    let mut probe = store.clone();
    for name in &names {
        let n = store.get(name).len();
        for i in 0..n {
            let orig = store.get(name).data[i];
            probe.get_mut(name).data[i] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name).data[i] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name).data[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic.grad(name)[i];
            let denom = exact.abs().max(numeric.abs()).max(1e-6);
            let rel = (exact - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn checks_a_small_mlp() {
        let mut rng = Rng::seed_from_u64(7);
        let mut store = ParameterStore::new();
        store.add_uniform("w1", &[4, 3], &mut rng);
        store.add_uniform("b1", &[4], &mut rng);
        store.add_uniform("w2", &[5, 4], &mut rng);
        let report = check_gradients(
            &store,
            |s, tape| {
                let w1 = tape.param(s, "w1");
                let b1 = tape.param(s, "b1");
                let w2 = tape.param(s, "w2");
                let x = tape.constant(vec![0.2, -0.4, 0.9]);
                let h = tape.affine(w1, b1, x, 4, 3)?;
                let h = tape.relu(h);
                let logits = tape.matvec(w2, h, 5, 4)?;
                tape.categorical_log_prob(logits, 2)
            },
            1e-3,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_error);
        assert_eq!(report.checked, 4 * 3 + 4 + 5 * 4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // The analytic pass sees loss = w0 but every finite-difference
        // evaluation sees loss = 2·w0, so the checker must report a large
        // relative error.
        use std::cell::Cell;
        let mut store = ParameterStore::new();
        store.add_zeros("w", &[1]);
        store.get_mut("w").data[0] = 0.3;
        let calls = Cell::new(0usize);
        let report = check_gradients(
            &store,
            |s, tape| {
                let first = calls.get() == 0;
                calls.set(calls.get() + 1);
                let w = tape.param(s, "w");
                let w0 = tape.slice(w, 0, 1);
                Ok(if first { w0 } else { tape.scale(w0, 2.0) })
            },
            1e-3,
        )
        .unwrap();
        assert!(!report.passes(1e-4));
    }
}
