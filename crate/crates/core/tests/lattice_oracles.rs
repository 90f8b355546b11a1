use pamlab::lattice::{
    green_function_origin, heat_kernel, laplacian_apply, return_and_neighbor, rw_sample_path, unit_rate_kappa,
    Field, Torus,
};
use pamlab::RngStream;
use proptest::prelude::*;

/// Dense generator of the rate-2dκ walk.
fn generator(torus: Torus, kappa: f64) -> Vec<Vec<f64>> {
    let n = torus.sites();
    let mut q = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in torus.neighbors(x) {
            q[x][y] += kappa;
            q[x][x] -= kappa;
        }
    }
    q
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// `exp(A)` by scaling to norm < 1/2, a 30-term Taylor series and squaring.
fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scale = 2f64.powi(-s);
    let scaled: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    let mut term = result.clone();
    for k in 1..30 {
        term = matmul(&term, &scaled);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

fn expm_row0(torus: Torus, kappa: f64, t: f64) -> Vec<f64> {
    let q: Vec<Vec<f64>> = generator(torus, kappa)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v * t).collect())
        .collect();
    expm(&q).swap_remove(0)
}

#[test]
fn heat_kernel_matches_matrix_exponential() {
    for (d, l, kappa, t) in [(1, 8, 0.5, 1.0), (2, 4, 0.3, 2.5), (1, 5, 1.0, 0.1)] {
        let torus = Torus::new(d, l).unwrap();
        let oracle = expm_row0(torus, kappa, t);
        let p = heat_kernel(torus, kappa, t).unwrap();
        for x in 0..torus.sites() {
            assert!(
                (p.get(x) - oracle[x]).abs() < 1e-8,
                "d={d} L={l} x={x}: {} vs {}",
                p.get(x),
                oracle[x]
            );
        }
    }
}

#[test]
fn isrw_neighbor_correlation_value_matches_oracle() {
    // ρ p_1(e) for rate-1 particles on the ring of 8
    let torus = Torus::new(1, 8).unwrap();
    let oracle = expm_row0(torus, unit_rate_kappa(1), 1.0)[1];
    let c = pamlab::stats::correlation_exact(pamlab::EnvKind::Isrw, 1, 1.0, 1.0, torus, None).unwrap();
    assert!((c - oracle).abs() < 1e-8);
}

fn convolve(a: &Field, b: &Field) -> Vec<f64> {
    let torus = a.torus();
    let d = torus.dim();
    let l = torus.side();
    (0..torus.sites())
        .map(|x| {
            let cx = torus.coords(x);
            (0..torus.sites())
                .map(|y| {
                    let cy = torus.coords(y);
                    let diff: Vec<usize> = (0..d).map(|k| (cx[k] + l - cy[k]) % l).collect();
                    a.get(y) * b.get(torus.site_of(&diff))
                })
                .sum()
        })
        .collect()
}

#[test]
fn semigroup_property() {
    for (d, l) in [(1, 9), (2, 6)] {
        let torus = Torus::new(d, l).unwrap();
        let ps = heat_kernel(torus, 0.4, 0.7).unwrap();
        let pt = heat_kernel(torus, 0.4, 1.6).unwrap();
        let pst = heat_kernel(torus, 0.4, 2.3).unwrap();
        for (x, v) in convolve(&ps, &pt).into_iter().enumerate() {
            assert!((v - pst.get(x)).abs() < 1e-8);
        }
    }
}

#[test]
fn laplacian_is_time_derivative_of_heat_kernel() {
    let torus = Torus::new(2, 6).unwrap();
    let (kappa, t) = (0.6, 0.8);
    let p = heat_kernel(torus, kappa, t).unwrap();
    let lap = laplacian_apply(&p, kappa);
    let err = |h: f64| {
        let q = heat_kernel(torus, kappa, t + h).unwrap();
        (0..torus.sites())
            .map(|x| ((q.get(x) - p.get(x)) / h - lap.get(x)).abs())
            .fold(0.0, f64::max)
    };
    let (e3, e4) = (err(1e-3), err(1e-4));
    // forward difference: error shrinks tenfold with h
    assert!(e3 < 1e-2 && e4 < 1e-3, "{e3} {e4}");
    assert!((e3 / e4 - 10.0).abs() < 1.0, "ratio {}", e3 / e4);
}

/// `∫_0^{t_cut} p_t(0) dt` on the torus of side `l` by Simpson quadrature of
/// the per-axis return probability, linear on `[0, 1]` and logarithmic above.
fn green_quadrature(d: usize, l: usize, t_cut: f64) -> f64 {
    let axis0 = |t: f64| {
        (0..l)
            .map(|m| (-(t / d as f64) * (1.0 - (2.0 * std::f64::consts::PI * m as f64 / l as f64).cos())).exp())
            .sum::<f64>()
            / l as f64
    };
    let f = |t: f64| axis0(t).powi(d as i32);
    let simpson = |g: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * g(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    simpson(&f, 0.0, 1.0, 400) + simpson(&|s: f64| f(s.exp()) * s.exp(), 0.0, t_cut.ln(), 4000)
}

#[test]
fn green_function_against_larger_torus_quadrature() {
    let g = green_function_origin(Torus::new(3, 64).unwrap(), 2000.0).unwrap();
    let oracle = green_quadrature(3, 128, 2000.0);
    assert!((g.value / oracle - 1.0).abs() < 0.02, "{} vs {oracle}", g.value);
    assert!(g.tail_bound > 0.0 && g.tail_bound < 0.1);
    assert!(g.wrap_mass <= pamlab::lattice::GREEN_WRAP_BOUND);

    let doubled = green_function_origin(Torus::new(3, 64).unwrap(), 4000.0);
    // the doubled cutoff breaks the wrap guard at L=64; use L=80
    assert!(doubled.is_err());
    let g80 = green_function_origin(Torus::new(3, 80).unwrap(), 2000.0).unwrap();
    let g80x2 = green_function_origin(Torus::new(3, 80).unwrap(), 4000.0).unwrap();
    assert!(g80x2.value > g80.value);

    let g4 = green_function_origin(Torus::new(4, 24).unwrap(), 2000.0).unwrap();
    let oracle4 = green_quadrature(4, 24, 2000.0);
    assert!((g4.value / oracle4 - 1.0).abs() < 1e-3);
    assert!(g4.value < g.value);
}

#[test]
fn green_rejects_low_dimension_and_small_torus() {
    assert!(green_function_origin(Torus::new(2, 64).unwrap(), 10.0).is_err());
    assert!(green_function_origin(Torus::new(3, 8).unwrap(), 2000.0).is_err());
}

#[test]
fn walk_endpoint_chi_squared() {
    let torus = Torus::new(1, 8).unwrap();
    let p = heat_kernel(torus, 0.5, 1.0).unwrap();
    let n = 100_000;
    let mut rng = RngStream::new(2024, 0);
    let mut counts = vec![0usize; 8];
    for _ in 0..n {
        counts[rw_sample_path(torus, 0.5, 1.0, &mut rng).end_site()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .enumerate()
        .map(|(x, &c)| {
            let e = n as f64 * p.get(x);
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 0.999 quantile of chi-squared with 7 degrees of freedom
    assert!(chi2 < 24.3219, "chi2 = {chi2}");
}

#[test]
fn walk_jump_count_mean() {
    let torus = Torus::new(1, 16).unwrap();
    let mut rng = RngStream::new(5, 0);
    let n = 100_000;
    let jumps: Vec<f64> = (0..n)
        .map(|_| rw_sample_path(torus, 1.0, 10.0, &mut rng).jump_count() as f64)
        .collect();
    let est = pamlab::Estimate::from_samples(&jumps).unwrap();
    assert!((est.mean - 20.0).abs() < 3.0 * est.std_error, "{est:?}");
}

#[test]
fn return_probability_matches_field() {
    let torus = Torus::new(3, 6).unwrap();
    let p = heat_kernel(torus, 0.2, 3.0).unwrap();
    let (p0, pe) = return_and_neighbor(torus, 0.2, 3.0);
    assert!((p0 - p.get(0)).abs() < 1e-15);
    assert!((pe - p.get(torus.unit(2))).abs() < 1e-15);
}

proptest! {
    #[test]
    fn laplacian_conserves_mass(values in proptest::collection::vec(-10.0f64..10.0, 64), kappa in 0.0f64..5.0) {
        let torus = Torus::new(2, 8).unwrap();
        let u = Field::from_values(torus, values).unwrap();
        let v = laplacian_apply(&u, kappa);
        let scale: f64 = u.values().iter().map(|x| x.abs()).sum::<f64>() * kappa * 8.0 + 1.0;
        prop_assert!(v.sum().abs() <= 1e-12 * scale);
    }

    #[test]
    fn heat_kernel_mass_symmetry_and_peak(kappa in 0.0f64..3.0, t in 0.0f64..20.0, d in 1usize..4, l in 4usize..9) {
        let torus = Torus::new(d, l).unwrap();
        let p = heat_kernel(torus, kappa, t).unwrap();
        prop_assert!((p.sum() - 1.0).abs() <= 1e-10);
        prop_assert!(p.values().iter().all(|&v| v >= 0.0));
        for x in 0..torus.sites() {
            prop_assert!((p.get(x) - p.get(torus.negate(x))).abs() <= 1e-14);
        }
        prop_assert!(p.get(0) >= p.get(torus.unit(0)));
    }

    #[test]
    fn neighbor_relation_is_symmetric(d in 1usize..4, l in 4usize..8, seed in 0u64..1000) {
        let torus = Torus::new(d, l).unwrap();
        let x = (seed as usize * 7919) % torus.sites();
        let ns: Vec<usize> = torus.neighbors(x).collect();
        prop_assert_eq!(ns.len(), 2 * d);
        for y in ns {
            prop_assert!(torus.neighbors(y).any(|z| z == x));
        }
        prop_assert_eq!(torus.site_of(&torus.coords(x)), x);
    }
}
