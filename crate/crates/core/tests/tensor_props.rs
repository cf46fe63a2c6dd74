use mimo_sense::tensor::{fold, frobenius_norm, hadamard, khatri_rao, unfold, Matrix, Mode, RealTensor3, C64};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = [usize; 3]> {
    (1usize..=6, 1usize..=6, 1usize..=6).prop_map(|(a, b, c)| [a, b, c])
}

fn tensor() -> impl Strategy<Value = RealTensor3> {
    dims().prop_flat_map(|d| {
        prop::collection::vec(-10.0f64..10.0, d[0] * d[1] * d[2])
            .prop_map(move |v| RealTensor3::from_vec(d, v).unwrap())
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-4.0f64..4.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

// Unfolding written straight from the index definition, independent of the library.
fn unfold_oracle(t: &RealTensor3, mode: Mode) -> Vec<Vec<f64>> {
    let [d1, d2, d3] = t.dims();
    let (rows, cols) = match mode {
        Mode::One => (d1, d2 * d3),
        Mode::Two => (d2, d1 * d3),
        Mode::Three => (d3, d1 * d2),
    };
    let mut out = vec![vec![0.0; cols]; rows];
    for i in 0..d1 {
        for j in 0..d2 {
            for k in 0..d3 {
                let (r, c) = match mode {
                    Mode::One => (i, j + k * d2),
                    Mode::Two => (j, i + k * d1),
                    Mode::Three => (k, i + j * d1),
                };
                out[r][c] = t.get(i, j, k);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unfold_matches_index_oracle_and_round_trips(t in tensor()) {
        for mode in Mode::ALL {
            let u = unfold(&t, mode);
            let oracle = unfold_oracle(&t, mode);
            for (r, row) in oracle.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    prop_assert_eq!(u.get(r, c), v);
                }
            }
            prop_assert_eq!(&fold(&u, mode, t.dims()).unwrap(), &t);
            let a = frobenius_norm(&t);
            let b = frobenius_norm(&u);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }

    #[test]
    fn norm_matches_loop(t in tensor()) {
        let mut s = 0.0;
        for &v in t.data() {
            s += v * v;
        }
        let n = frobenius_norm(&t);
        prop_assert!((n - s.sqrt()).abs() <= 1e-12 * n.max(1e-300));
    }

    #[test]
    fn khatri_rao_matches_kronecker_loop(
        (a, b) in (1usize..=5, 1usize..=5, 1usize..=4)
            .prop_flat_map(|(ra, rb, c)| (matrix(ra, c), matrix(rb, c)))
    ) {
        let kr = khatri_rao(&a, &b).unwrap();
        prop_assert_eq!(kr.shape(), (a.rows() * b.rows(), a.cols()));
        for l in 0..a.cols() {
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    prop_assert_eq!(kr.get(i * b.rows() + j, l), a.get(i, l) * b.get(j, l));
                }
            }
        }
    }

    #[test]
    fn khatri_rao_of_unit_columns_is_unit(
        (a, b) in (1usize..=6, 1usize..=6, 1usize..=3)
            .prop_flat_map(|(ra, rb, c)| (matrix(ra, c), matrix(rb, c)))
    ) {
        let unit = |m: &Matrix<f64>| {
            Matrix::from_fn(m.rows(), m.cols(), |r, c| {
                let n = m.column(c).iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 { f64::from(u8::from(r == 0)) } else { m.get(r, c) / n }
            })
            .unwrap()
        };
        let kr = khatri_rao(&unit(&a), &unit(&b)).unwrap();
        for l in 0..kr.cols() {
            let n = kr.column(l).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn hadamard_is_commutative_and_associative(
        v in prop::collection::vec((-50i32..50, -50i32..50, -50i32..50), 1..=30)
    ) {
        let col = |f: fn(&(i32, i32, i32)) -> i32| {
            Matrix::from_vec(v.len(), 1, v.iter().map(|x| f64::from(f(x))).collect()).unwrap()
        };
        let (a, b, c) = (col(|x| x.0), col(|x| x.1), col(|x| x.2));
        prop_assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
        prop_assert_eq!(
            hadamard(&hadamard(&a, &b).unwrap(), &c).unwrap(),
            hadamard(&a, &hadamard(&b, &c).unwrap()).unwrap()
        );
        let ones = Matrix::from_fn(a.rows(), 1, |_, _| 1.0).unwrap();
        prop_assert_eq!(hadamard(&a, &ones).unwrap(), a);
    }

    #[test]
    fn complex_hadamard_matches_loop(
        v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 9)
    ) {
        let a = Matrix::from_fn(3, 3, |r, c| C64::new(v[r + 3 * c].0, v[r + 3 * c].1)).unwrap();
        let b = Matrix::from_fn(3, 3, |r, c| C64::new(v[r + 3 * c].2, v[r + 3 * c].3)).unwrap();
        let h = hadamard(&a, &b).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                prop_assert_eq!(h.get(r, c), a.get(r, c) * b.get(r, c));
            }
        }
    }
}
