use mimo_sense::cp::AlsConfig;
use mimo_sense::features::{
    amp_phase_tensors, assemble_input, corr_per_antenna, corr_per_subcarrier, corr_per_time, extract_features,
    normalized_complex, unwrap_1d, CorrelationSet, WindowStatus,
};
use mimo_sense::tensor::{ComplexTensor3, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_window(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> ComplexTensor3 {
    ComplexTensor3::from_fn(dims, |_, _, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).unwrap()
}

fn window() -> impl Strategy<Value = ComplexTensor3> {
    (1usize..=8, 1usize..=8, 1usize..=8, any::<u64>())
        .prop_map(|(t, f, m, seed)| random_window(&mut ChaCha8Rng::seed_from_u64(seed), [t, f, m]))
}

/// `out(i, j, s) = Σ_k a(i, k, s) · conj(a(j, k, s))`, by explicit triple loop.
fn gram_oracle(rows: usize, inner: usize, slices: usize, a: impl Fn(usize, usize, usize) -> C64) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); rows * rows * slices];
    for s in 0..slices {
        for i in 0..rows {
            for j in 0..rows {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..inner {
                    acc += a(i, k, s) * a(j, k, s).conj();
                }
                out[i + rows * (j + rows * s)] = acc;
            }
        }
    }
    out
}

fn assert_close(got: &ComplexTensor3, want: &[C64], tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(got.len(), want.len());
    for (g, w) in got.data().iter().zip(want) {
        prop_assert!((g - w).norm() <= tol * w.norm().max(1.0), "{} vs {}", g, w);
    }
    Ok(())
}

/// Complex Cholesky of `slice + shift·I`; succeeds iff the shifted matrix is positive definite.
fn cholesky_ok(c: &ComplexTensor3, s: usize, shift: f64) -> bool {
    let n = c.dims()[0];
    let mut l = vec![C64::new(0.0, 0.0); n * n];
    for j in 0..n {
        let mut d = c.get(j, j, s).re + shift;
        for k in 0..j {
            d -= l[j + n * k].norm_sqr();
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        l[j + n * j] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut v = c.get(i, j, s);
            for k in 0..j {
                v -= l[i + n * k] * l[j + n * k].conj();
            }
            l[i + n * j] = v / d;
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn correlations_match_triple_loops(g in window()) {
        let [tw, f, m] = g.dims();
        let (c_f_m, c_tw_m) = corr_per_antenna(&g);
        assert_close(&c_f_m, &gram_oracle(tw, f, m, |t, fi, s| g.get(t, fi, s)), 1e-12)?;
        assert_close(&c_tw_m, &gram_oracle(f, tw, m, |fi, t, s| g.get(t, fi, s).conj()), 1e-12)?;
        let (c_m_f, c_tw_f) = corr_per_subcarrier(&g);
        assert_close(&c_m_f, &gram_oracle(tw, m, f, |t, mi, s| g.get(t, s, mi)), 1e-12)?;
        assert_close(&c_tw_f, &gram_oracle(m, tw, f, |mi, t, s| g.get(t, s, mi).conj()), 1e-12)?;
        let (c_m_tw, c_f_tw) = corr_per_time(&g);
        assert_close(&c_m_tw, &gram_oracle(f, m, tw, |fi, mi, s| g.get(s, fi, mi)), 1e-12)?;
        assert_close(&c_f_tw, &gram_oracle(m, f, tw, |mi, fi, s| g.get(s, fi, mi).conj()), 1e-12)?;
    }

    #[test]
    fn correlations_are_hermitian_psd(g in window()) {
        let set = CorrelationSet::new(&g);
        for c in set.members() {
            let [n, n2, slices] = c.dims();
            prop_assert_eq!(n, n2);
            for s in 0..slices {
                let mut trace = 0.0;
                for i in 0..n {
                    trace += c.get(i, i, s).re;
                    for j in 0..n {
                        prop_assert_eq!(c.get(i, j, s), c.get(j, i, s).conj());
                    }
                }
                prop_assert!(cholesky_ok(c, s, 1e-8 * trace.max(1e-300)));
            }
        }
    }

    #[test]
    fn gram_traces_agree(g in window()) {
        let [tw, f, m] = g.dims();
        let (a, b) = corr_per_antenna(&g);
        for s in 0..m {
            let ta: f64 = (0..tw).map(|i| a.get(i, i, s).re).sum();
            let tb: f64 = (0..f).map(|i| b.get(i, i, s).re).sum();
            let fro: f64 = (0..tw).flat_map(|t| (0..f).map(move |fi| (t, fi))).map(|(t, fi)| g.get(t, fi, s).norm_sqr()).sum();
            prop_assert!((ta - tb).abs() <= 1e-10 * fro.max(1.0));
            prop_assert!((ta - fro).abs() <= 1e-10 * fro.max(1.0));
        }
        for (x, y) in [corr_per_subcarrier(&g), corr_per_time(&g)] {
            let [n, _, slices] = x.dims();
            let k = y.dims()[0];
            for s in 0..slices {
                let tx: f64 = (0..n).map(|i| x.get(i, i, s).re).sum();
                let ty: f64 = (0..k).map(|i| y.get(i, i, s).re).sum();
                prop_assert!((tx - ty).abs() <= 1e-10 * tx.abs().max(1.0));
            }
        }
    }

    #[test]
    fn normalized_complex_matches_division(g in window()) {
        let (c, _) = corr_per_antenna(&g);
        let (re, im, amp) = normalized_complex(&c);
        let [n, _, slices] = c.dims();
        for s in 0..slices {
            let norm = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| c.get(i, j, s).norm_sqr()).sum::<f64>().sqrt();
            let mut unit = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let w = c.get(i, j, s) / norm;
                    prop_assert!((re.get(i, j, s) - w.re).abs() <= 1e-12);
                    prop_assert!((im.get(i, j, s) - w.im).abs() <= 1e-12);
                    prop_assert!((amp.get(i, j, s) - w.norm()).abs() <= 1e-12);
                    unit += re.get(i, j, s).powi(2) + im.get(i, j, s).powi(2);
                }
            }
            prop_assert!((unit - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn global_scale_leaves_normalized_tensors_unchanged(g in window(), alpha in 0.05f64..20.0) {
        let scaled = g.scale(C64::new(alpha, 0.0));
        let (a, b) = (CorrelationSet::new(&g), CorrelationSet::new(&scaled));
        for (x, y) in a.members().into_iter().zip(b.members()) {
            let (ax, px) = amp_phase_tensors(x);
            let (ay, py) = amp_phase_tensors(y);
            let (rx, ix, nx) = normalized_complex(x);
            let (ry, iy, ny) = normalized_complex(y);
            for (u, v) in [(ax, ay), (px, py), (rx, ry), (ix, iy), (nx, ny)] {
                for (p, q) in u.data().iter().zip(v.data()) {
                    prop_assert!((p - q).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn unwrap_leaves_no_jumps(v in prop::collection::vec(-std::f64::consts::PI..std::f64::consts::PI, 1..40)) {
        let mut u = v.clone();
        unwrap_1d(&mut u);
        for w in u.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= std::f64::consts::PI + 1e-12);
        }
        for (a, b) in u.iter().zip(&v) {
            let k = (a - b) / std::f64::consts::TAU;
            prop_assert!((k - k.round()).abs() <= 1e-9);
        }
    }
}

fn als(seed: u64) -> AlsConfig {
    AlsConfig { r_max: 4, max_iters: 200, rel_tol: 1e-12, seed }
}

#[test]
fn scale_changes_only_the_raw_amplitude_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let g = random_window(&mut rng, [6, 4, 3]);
        let base = extract_features(&g, &als(9)).unwrap();
        for alpha in [0.1, 10.0] {
            let s = extract_features(&g.scale(C64::new(alpha, 0.0)), &als(9)).unwrap();
            assert_eq!(s.status, WindowStatus::Valid);
            for (x, y) in base.lambdas[0].iter().zip(&s.lambdas[0]) {
                assert!((alpha * x - y).abs() <= 1e-6 * y.abs().max(1e-12));
            }
            for i in 1..31 {
                for (x, y) in base.lambdas[i].iter().zip(&s.lambdas[i]) {
                    assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12), "feature {} {x} {y}", i + 1);
                }
            }
            let (a, b) = (assemble_input(&base, true).unwrap(), assemble_input(&s, true).unwrap());
            let block = base.r_max() - 1;
            for (x, y) in a[block..].iter().zip(&b[block..]) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
            }
        }
    }
}

#[test]
fn per_antenna_phase_leaves_antenna_correlations_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_window(&mut rng, [6, 4, 3]);
    let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let rotated = ComplexTensor3::from_fn(g.dims(), |t, f, m| g.get(t, f, m) * C64::from_polar(1.0, phases[m])).unwrap();
    let (a, b) = (corr_per_antenna(&g), corr_per_antenna(&rotated));
    for (x, y) in [(&a.0, &b.0), (&a.1, &b.1)] {
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).norm() <= 1e-12 * p.norm().max(1.0));
        }
    }
    let base = extract_features(&g, &als(2)).unwrap();
    let rot = extract_features(&rotated, &als(2)).unwrap();
    for i in 1..11 {
        for (x, y) in base.lambdas[i].iter().zip(&rot.lambdas[i]) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "feature {}", i + 1);
        }
    }
}

#[test]
fn rank_one_window_leading_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let u: Vec<C64> = (0..7).map(|_| C64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..6.0))).collect();
        let v: Vec<C64> = (0..4).map(|_| C64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..6.0))).collect();
        let w: Vec<C64> = (0..5).map(|_| C64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..6.0))).collect();
        let sigma = rng.random_range(0.5..4.0);
        let g = ComplexTensor3::from_fn([7, 4, 5], |t, f, m| u[t] * v[f] * w[m] * sigma).unwrap();
        let norm = |x: &[C64]| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let expected = sigma * norm(&u) * norm(&v) * norm(&w);
        // A single component: higher ranks may split it into equal copies.
        let fs = extract_features(&g, &AlsConfig { r_max: 1, ..als(1) }).unwrap();
        let l = &fs.lambdas[0];
        assert!((l[0] - expected).abs() <= 1e-4 * expected, "{} vs {expected}", l[0]);
    }
}

#[test]
fn features_are_deterministic() {
    let g = random_window(&mut ChaCha8Rng::seed_from_u64(6), [5, 3, 4]);
    assert_eq!(extract_features(&g, &als(8)).unwrap(), extract_features(&g, &als(8)).unwrap());
}
