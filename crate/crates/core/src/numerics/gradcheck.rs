use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Largest relative error between reverse-mode gradients of `f` and central
/// finite differences, over every coordinate of every input.
///
/// `f` must build a scalar from the given leaves. The relative error of a
/// coordinate is `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Shape("grad_check needs a scalar-valued function".into()));
    }
    if !g.value(out).data()[0].is_finite() {
        return Err(Error::Evaluation("function value is not finite".into()));
    }
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{AttentionMask, Rng};

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(v).unwrap().data(), &[2.0, 4.0, 6.0]);

        let err = grad_check(
            |g, xs| {
                let sq = g.mul(xs[0], xs[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_softmax_cross_entropy() {
        let mut rng = Rng::new(21);
        let x = rng.normal_tensor(&[4, 4]);
        let w = rng.normal_tensor(&[4, 4]);
        let mut onehot = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            onehot.data_mut()[i * 4 + (i * 3) % 4] = 1.0;
        }
        let err = grad_check(
            move |g, xs| {
                let logits = g.matmul(xs[0], xs[1])?;
                let p = g.softmax_rows(logits);
                let lp = g.ln(p)?;
                let t = g.constant(onehot.clone());
                let picked = g.mul(lp, t)?;
                let s = g.sum(picked);
                Ok(g.scale(s, -0.25))
            },
            &[x, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let a = rng.normal_tensor(&[6, 4]);
        let b = rng.normal_tensor(&[6, 4]);
        let row = rng.normal_tensor(&[1, 4]);
        let pos = a.map(|v| v.abs() + 0.5);
        let err = grad_check(
            |g, xs| {
                let s = g.add(xs[0], xs[1])?;
                let d = g.sub(s, xs[1])?;
                let m = g.mul(d, xs[1])?;
                let ar = g.add_row(m, xs[2])?;
                let mr = g.mul_row(ar, xs[2])?;
                let act = g.silu(mr);
                let l = g.ln(xs[3])?;
                let cat = g.concat_cols(act, l)?;
                let ln = g.layernorm(cat, 1e-5);
                let sm = g.softmax_rows(ln);
                let rep = g.repeat_rows(sm, 2);
                let til = g.tile_rows(rep, 2);
                let sl = g.slice_rows(til, 3, 17)?;
                let sc = g.scale(sl, 1.7);
                let w = g.slice_rows(xs[0], 0, 4)?;
                let wide = g.tile_rows(w, 2);
                let proj = g.matmul(sc, wide)?;
                let sq = g.mul(proj, proj)?;
                Ok(g.mean(sq))
            },
            &[a, b, row, pos],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn attention_gradients() {
        let mut rng = Rng::new(8);
        let q = rng.normal_tensor(&[6, 8]);
        let k = rng.normal_tensor(&[6, 8]);
        let v = rng.normal_tensor(&[6, 8]);
        let w = rng.normal_tensor(&[6, 8]);
        for mask in [AttentionMask::Full, AttentionMask::Grouped { tokens_per_group: 3 }] {
            let wt = w.clone();
            let err = grad_check(
                move |g, xs| {
                    let o = g.attention(xs[0], xs[1], xs[2], 2, mask)?;
                    let c = g.constant(wt.clone());
                    let p = g.mul(o, c)?;
                    Ok(g.sum(p))
                },
                &[q.clone(), k.clone(), v.clone()],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{mask:?}: {err}");
        }
    }

    #[test]
    fn grouped_mask_isolates_groups() {
        let mut rng = Rng::new(2);
        let q = rng.normal_tensor(&[4, 4]);
        let mut v = rng.normal_tensor(&[4, 4]);
        let run = |v: &Tensor| {
            let mut g = Graph::new();
            let (qv, vv) = (g.constant(q.clone()), g.constant(v.clone()));
            let o = g
                .attention(qv, qv, vv, 1, AttentionMask::Grouped { tokens_per_group: 2 })
                .unwrap();
            g.value(o).clone()
        };
        let before = run(&v);
        for j in 8..16 {
            v.data_mut()[j] += 1.0;
        }
        let after = run(&v);
        assert_eq!(before.row(0), after.row(0));
        assert_eq!(before.row(1), after.row(1));
        assert_ne!(before.row(2), after.row(2));
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let x = [Tensor::scalar(1.0)];
        assert!(matches!(
            grad_check(|g, xs| Ok(g.sum(xs[0])), &x, 1.0),
            Err(Error::Config(_))
        ));
        let err = grad_check(
            |g, xs| {
                let big = g.scale(xs[0], f64::MAX);
                let s = g.scale(big, 10.0);
                Ok(g.sum(s))
            },
            &x,
            1e-5,
        );
        assert!(matches!(err, Err(Error::Evaluation(_))));
    }
}
