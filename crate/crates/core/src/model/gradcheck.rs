//! Central finite-difference gradient checker (double precision).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::graph::{Graph, ParamSet, Var};

/// Result of probing analytic gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
    /// `(tensor, index, analytic, numeric)` of the worst probe.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with an absolute floor. Structurally zero gradients (e.g.
/// key biases) show ~1e-10 of finite-difference roundoff; the floor keeps
/// that noise from reading as a relative error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Compare `loss`'s analytic gradient with central differences on
/// `n_probes` randomly chosen coordinates.
pub fn grad_check<F>(params: &ParamSet<f64>, loss: F, n_probes: usize, fd_eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        g.backward(l)
    };
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(p);
        let l = loss(&mut g)?;
        Ok(g.scalar(l))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, probes: 0, worst: None };
    for _ in 0..n_probes {
        let id = rng.gen_range(0..params.len());
        let idx = rng.gen_range(0..params.get(id).len());
        let orig = params.get(id).data()[idx];
        work.get_mut(id).data_mut()[idx] = orig + fd_eps;
        let up = eval(&work)?;
        work.get_mut(id).data_mut()[idx] = orig - fd_eps;
        let down = eval(&work)?;
        work.get_mut(id).data_mut()[idx] = orig;
        let numeric = (up - down) / (2.0 * fd_eps);
        let an = analytic.get(id).map_or(0.0, |t| t.data()[idx]);
        let e = rel_err(an, numeric);
        report.probes += 1;
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = Some((params.name(id).to_string(), idx, an, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tensor::Tensor;

    #[test]
    fn square_function() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::scalar(1.0));
        let r = grad_check(
            &p,
            |g| {
                let x = g.param(0);
                Ok(g.mul(x, x))
            },
            4,
            1e-5,
            0,
        )
        .unwrap();
        let (_, _, an, num) = r.worst.unwrap();
        assert_eq!(an, 2.0);
        assert!((num - 2.0).abs() < 1e-8);
        assert!(r.max_rel_err < 1e-8);
    }
}
