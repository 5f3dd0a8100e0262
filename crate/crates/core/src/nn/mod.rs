//! Minimal differentiable building blocks.

pub mod params;
pub mod tape;

pub use params::{Adam, Grads, ParamStore};
pub use tape::{Tape, Var};

/// Largest relative error between an analytic gradient and central finite
/// differences of `loss` over the listed `(slot, entry)` coordinates.
///
/// The relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    store: &ParamStore,
    analytic: &Grads,
    coords: &[(usize, usize)],
    eps: f64,
    floor: f64,
    loss: impl Fn(&ParamStore) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for &(slot, entry) in coords {
        let orig = store.get_at(slot).data()[entry];
        probe.get_at_mut(slot).data_mut()[entry] = orig + eps;
        let plus = loss(&probe);
        probe.get_at_mut(slot).data_mut()[entry] = orig - eps;
        let minus = loss(&probe);
        probe.get_at_mut(slot).data_mut()[entry] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(slot).map_or(0.0, |g| g.data()[entry]);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Exercises every tape op in one scalar graph.
    fn graph(store: &ParamStore, tape: &mut Tape) -> Var {
        let x = tape.param(store, "x");
        let w = tape.param(store, "w");
        let b = tape.param(store, "b");
        let k = tape.param(store, "k");
        let h = tape.linear(x, w, b);
        let h = tape.silu(h);
        let att = tape.matmul_nt(h, k);
        let att = tape.softmax_rows(att);
        let v = tape.matmul(att, k);
        let t = tape.tanh(v);
        let m = tape.mul_row(t, b);
        let both = tape.concat_cols(&[m, h]);
        let both = tape.stack_rows(&[both, both]);
        let both = tape.slice_rows(both, 2, 4);
        let g = tape.gather_cols(both, &[0, 5, 5, 2]);
        let s = tape.slice_rows(g, 1, 3);
        let n = tape.normalize_rows(s);
        let mr = tape.mean_rows(n);
        let br = tape.broadcast_rows(mr, 3);
        let d = tape.sub(br, s);
        let e = tape.mul(d, s);
        let mask = Mat::from_fn(3, 4, |r, c| ((r + c) % 2) as f64);
        let f = tape.mul_const(e, mask);
        let q = tape.add(f, s);
        let q = tape.scale(q, 0.7);
        tape.mean_square(q)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut store = ParamStore::new();
            store.insert("x", random(&mut rng, 4, 3));
            store.insert("w", random(&mut rng, 3, 3));
            store.insert("b", random(&mut rng, 1, 3));
            store.insert("k", random(&mut rng, 5, 3));
            let mut tape = Tape::new();
            let loss = graph(&store, &mut tape);
            let grads = tape.backward(loss, store.len());
            let coords: Vec<(usize, usize)> =
                (0..store.len()).flat_map(|s| (0..store.get_at(s).len()).map(move |e| (s, e))).collect();
            let err = gradient_check(&store, &grads, &coords, 1e-5, 1e-6, |p| {
                let mut t = Tape::new();
                let l = graph(p, &mut t);
                t.scalar(l)
            });
            assert!(err < 1e-6, "relative error {err}");
        }
    }

    #[test]
    fn shared_parameters_accumulate() {
        let mut store = ParamStore::new();
        store.insert("a", Mat::scalar(3.0));
        let mut tape = Tape::new();
        let a1 = tape.param(&store, "a");
        let a2 = tape.param(&store, "a");
        let p = tape.mul(a1, a2);
        let g = tape.backward(p, 1);
        assert_eq!(g.get(0).unwrap().data()[0], 6.0);
    }
}
