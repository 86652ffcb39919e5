use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;

use dsm_minmax::lmi::{hermitian_max_eigenvalue, max_eigenvalue, real_embedding};
use dsm_minmax::lti::{hinf_norm, l1_norm, FirFilter};
use dsm_minmax::metrics::{n_average, n_worst, snr_pp};
use dsm_minmax::sim::{check_certificates, random_input, simulate, simulate_linearized, UniformQuantizer};
use dsm_minmax::stability::{
    beta_envelope, cascade_realization, hinf_condition, input_bound, l1_condition, loop_l1_condition,
    noise_to_state_l1, ntf_l1_condition, QuantizerSpec,
};

fn loop_filter(max_order: usize, scale: f64) -> impl Strategy<Value = FirFilter> {
    prop::collection::vec(-scale..scale, 1..=max_order).prop_map(|t| FirFilter::strictly_causal(&t).unwrap())
}

fn unit_l1(max_order: usize) -> impl Strategy<Value = FirFilter> {
    prop::collection::vec(-1.0..1.0f64, 1..=max_order + 1).prop_filter_map("zero filter", |mut c| {
        let s: f64 = c.iter().map(|v| v.abs()).sum();
        if s < 1e-3 {
            return None;
        }
        c.iter_mut().for_each(|v| *v /= s);
        FirFilter::new(c).ok()
    })
}

fn band() -> impl Strategy<Value = (f64, f64)> {
    (0.0..PI, 0.01..PI).prop_map(|(a, w)| (a, (a + w).min(PI))).prop_filter("width", |(a, b)| b - a > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn average_never_exceeds_worst(f in prop::collection::vec(-2.0..2.0f64, 1..12), (lo, hi) in band()) {
        let f = FirFilter::new(f).unwrap();
        let avg = n_average(&f, lo, hi).unwrap();
        let worst = n_worst(&f, lo, hi).unwrap();
        prop_assert!(avg <= worst * (1.0 + 1e-9) + 1e-12, "{avg} > {worst}");
    }

    #[test]
    fn average_matches_trigonometric_closed_form(f in prop::collection::vec(-2.0..2.0f64, 1..10), (lo, hi) in band()) {
        // |T|^2 = sum_{k,l} t_k t_l cos((k - l) w)
        let c = f.clone();
        let mut integral = 0.0;
        for (k, a) in c.iter().enumerate() {
            for (l, b) in c.iter().enumerate() {
                let d = k as f64 - l as f64;
                integral += a * b * if k == l { hi - lo } else { ((d * hi).sin() - (d * lo).sin()) / d };
            }
        }
        let want = (integral / (hi - lo)).max(0.0).sqrt();
        let got = n_average(&FirFilter::new(f).unwrap(), lo, hi).unwrap();
        prop_assert!((got - want).abs() <= 1e-8 * want.max(1e-6), "{got} vs {want}");
    }

    #[test]
    fn quantizer_error_is_bounded_in_range(psi in -1.0..1.0f64, half in 1usize..6, delta in 0.01..2.0f64) {
        let q = UniformQuantizer::new(delta, 2 * half).unwrap();
        let psi = psi * q.no_overload();
        let y = q.quantize(psi);
        prop_assert!((y - psi).abs() <= delta * (1.0 + 1e-12));
        let k = (y / delta).round();
        prop_assert!((y - k * delta).abs() < 1e-12 && (k as i64).rem_euclid(2) == 1);
    }

    #[test]
    fn envelope_is_monotone_and_converges(r in loop_filter(6, 1.0), m in 1usize..=3, delta in 0.1..1.0f64) {
        let cl = cascade_realization(&FirFilter::identity(), &r, m).unwrap();
        let env = beta_envelope(&cl.a_cl, &cl.b_n, delta, 200).unwrap();
        prop_assert!(env.values[0] == 0.0);
        prop_assert!(env.values.windows(2).all(|w| w[1] >= w[0]));
        let limit = delta * noise_to_state_l1(&cl.a_cl, &cl.b_n).unwrap();
        prop_assert!((env.limit - limit).abs() <= 1e-10 * (1.0 + limit));
        // the loop is FIR, so the envelope is flat after (N + 1) m terms
        prop_assert!((env.values[199] - env.limit).abs() <= 1e-10 * (1.0 + limit));
    }

    #[test]
    fn admissible_inputs_never_overload(
        r in loop_filter(6, 0.4),
        p in unit_l1(3),
        m in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let q = UniformQuantizer::new(0.5, 4).unwrap();
        let reff = dsm_minmax::stability::effective_loop_filter(&r, m).unwrap();
        let bound = input_bound(&p, &reff, &q.spec().unwrap()).unwrap();
        prop_assume!(bound > 0.0);
        let u = random_input(bound, 600, seed).unwrap();
        let c = check_certificates(&p, &r, m, &q, &u).unwrap();
        prop_assert!(c.holds(), "{c:?}");
    }

    #[test]
    fn simulation_is_deterministic(r in loop_filter(8, 1.0), seed in any::<u64>()) {
        let q = UniformQuantizer::new(0.5, 4).unwrap();
        let u = random_input(1.0, 300, seed).unwrap();
        let a = simulate(&FirFilter::identity(), &r, &q, &u).unwrap();
        let b = simulate(&FirFilter::identity(), &r, &q, &u).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cascade_norm_is_submultiplicative(r in loop_filter(8, 1.0), m in 1usize..=4) {
        let ntf = FirFilter::ntf_from_loop_filter(&r).unwrap();
        prop_assert!(hinf_norm(&ntf.pow(m)) <= hinf_norm(&ntf).powi(m as i32) * (1.0 + 1e-9));
    }

    #[test]
    fn linearized_cascade_is_exact(r in loop_filter(5, 1.0), m in 1usize..=3, seed in any::<u64>()) {
        let w = random_input(0.5, 120, seed).unwrap();
        let u = random_input(1.0, 120, seed ^ 1).unwrap();
        let y = simulate_linearized(&FirFilter::identity(), &r, m, &u, &w).unwrap();
        let t = FirFilter::ntf_from_loop_filter(&r).unwrap().pow(m);
        for k in 0..120 {
            let tw: f64 = t.coeffs().iter().take(k + 1).enumerate().map(|(i, c)| c * w[k - i]).sum();
            prop_assert!((y[k] - u[k] - tw).abs() <= 1e-10 * (1.0 + tw.abs()));
        }
    }

    #[test]
    fn halving_noise_power_gains_three_db(seed in any::<u64>()) {
        let len = 4096;
        let u = dsm_minmax::metrics::snap_to_bin(0.1, len);
        let u = dsm_minmax::sim::sine(0.5, u, len);
        let w = random_input(1e-3, len, seed).unwrap();
        let y1: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + b).collect();
        let y2: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + b / 2f64.sqrt()).collect();
        let gain = snr_pp(&y2, &u, 0.0, 0.5).unwrap() - snr_pp(&y1, &u, 0.0, 0.5).unwrap();
        prop_assert!((gain - 10.0 * 2f64.log10()).abs() < 1e-6, "{gain}");
    }

    #[test]
    fn snr_pp_ignores_rotation_of_periodic_records(
        bins in prop::sample::subsequence((3usize..30).filter(|j| *j != 16).collect::<Vec<_>>(), 1..5),
        levels in prop::collection::vec((1e-6..1e-3f64, 0.0..6.3f64), 5),
        periods in 1usize..64,
    ) {
        // tone with a 64-sample period plus on-bin spurs four or more bins apart, so
        // every signal is periodic in the record and no two Hann main lobes overlap
        let spurs: Vec<(usize, f64, f64)> = bins.iter().zip(&levels).map(|(j, (a, ph))| (4 * j, *a, *ph)).collect();
        let len = 4096;
        let tone = |k: usize| 0.5 * (2.0 * PI * 64.0 * k as f64 / len as f64).sin();
        let u: Vec<f64> = (0..len).map(tone).collect();
        let y: Vec<f64> = (0..len)
            .map(|k| {
                let e: f64 = spurs
                    .iter()
                    .map(|(b, a, ph)| a * (2.0 * PI * *b as f64 * k as f64 / len as f64 + ph).cos())
                    .sum();
                tone(k) + e
            })
            .collect();
        let base = snr_pp(&y, &u, 0.0, PI / 4.0).unwrap();
        let (mut yr, mut ur) = (y.clone(), u.clone());
        yr.rotate_left(64 * periods);
        ur.rotate_left(64 * periods);
        let rot = snr_pp(&yr, &ur, 0.0, PI / 4.0).unwrap();
        prop_assert!((rot - base).abs() < 0.1, "{rot} vs {base}");
    }

    #[test]
    fn hermitian_embedding_keeps_definiteness(
        n in 1usize..=6,
        entries in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 36),
        shift in -3.0..3.0f64,
    ) {
        let mut h = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = entries[i * 6 + j];
            Complex::new(a, b)
        });
        h = (&h + h.adjoint()) * Complex::new(0.5, 0.0);
        for i in 0..n {
            h[(i, i)] -= Complex::new(shift, 0.0);
        }
        let e = real_embedding(&h).unwrap();
        prop_assert_eq!(&e, &e.transpose());
        let lc = hermitian_max_eigenvalue(&h);
        let lr = max_eigenvalue(&e);
        prop_assert!((lc - lr).abs() < 1e-10);
        prop_assert_eq!(lc < 0.0, lr < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sufficient_conditions_chain(
        r in loop_filter(10, 1.0),
        m in 0.0..4.0f64,
        delta in 0.05..1.0f64,
        u_inf in 0.0..3.0f64,
    ) {
        let q = QuantizerSpec::new(m, delta).unwrap();
        let ntf = FirFilter::ntf_from_loop_filter(&r).unwrap();
        let p = FirFilter::identity();
        let c23 = hinf_condition(&ntf, &q, u_inf);
        let c22 = ntf_l1_condition(&ntf, &q, u_inf);
        let c21 = loop_l1_condition(&r, &q, u_inf);
        let c19 = l1_condition(&p, &r, &q, u_inf);
        prop_assert!(!c23 || c22);
        prop_assert_eq!(c22, c21);
        prop_assert_eq!(c21, c19);
        prop_assert!((l1_norm(&ntf) - 1.0 - l1_norm(&r)).abs() < 1e-12);
    }
}
