use keyplan_tensor::{Axis, Graph, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-20.0f64..20.0, r * c).prop_map(move |data| Tensor::from_vec(r, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(x in matrix(), shift in -50.0f64..50.0) {
        let s = x.softmax(Axis::Rows);
        for total in s.sum_axis(Axis::Rows).data() {
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        let shifted = x.map(|v| v + shift).softmax(Axis::Rows);
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_scaled_loss_scales_gradient(x in matrix(), k in -3.0f64..3.0) {
        let grad = |scale: f64| {
            let mut g = Graph::new();
            let v = g.input(x.clone());
            let t = g.tanh(v);
            let s = g.sum(t);
            let out = g.scale(s, scale);
            g.backward(out).unwrap().wrt(v).unwrap().clone()
        };
        let base = grad(1.0);
        let scaled = grad(k);
        for (a, b) in base.data().iter().zip(scaled.data()) {
            prop_assert!((a * k - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_an_involution(x in matrix()) {
        prop_assert_eq!(x.transpose().transpose(), x);
    }
}
