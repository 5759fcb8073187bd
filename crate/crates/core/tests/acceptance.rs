//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p quasilinear-core --test acceptance`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use quasilinear::domain::{build_domain, DomainGrid, DomainSpec, Field};
use quasilinear::experiments::{
    barycenter_census, concentration_probe, level_sweep, multiplicity_census, ConcentrationOptions,
    LocalizationOptions, MultiplicityOptions, SweepOptions,
};
use quasilinear::functional::{ExponentParams, Functional};
use quasilinear::kernel::{certify_inequalities, f_of, inv_f, CertifyOptions, SampleGrids, GROWTH_CONSTANT};
use quasilinear::nehari::{ground_state, project, reduced_energy, Init, Preset, SolverOptions};
use quasilinear::spectra::{morse_index_with, EigenMethod, MorseOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Outcome of one criterion: pass flag and a short measurement summary.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn ball(r: f64, n: usize) -> Arc<DomainGrid> {
    build_domain(&DomainSpec::ball(3, r, n)).unwrap()
}

fn annulus(dim: usize, n: usize) -> Arc<DomainGrid> {
    build_domain(&DomainSpec::annulus(dim, 0.2, 0.5, n)).unwrap()
}

fn fractions(list: &[f64], dim: usize, cap: Option<f64>) -> Vec<ExponentParams> {
    list.iter().map(|f| ExponentParams::at_fraction(*f, dim, cap).unwrap()).collect()
}

fn random_field(grid: &Arc<DomainGrid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
    let v = (0..grid.n_interior()).map(|_| rng.random_range(lo..hi)).collect();
    Field::new(grid, v).unwrap()
}

// ---------------------------------------------------------------------------

fn kernel_certificate() -> Verdict {
    let t0 = Instant::now();
    let cert = certify_inequalities(&SampleGrids::standard(), CertifyOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = cert.summaries.iter().map(|s| s.worst_margin).fold(f64::INFINITY, f64::min);
    verdict(
        cert.all_pass && worst >= -1e-12 && cert.total_samples >= 10_000 && secs < 5.0,
        format!(
            "{} inequalities, {} samples, worst margin {worst:.3e}, {secs:.2}s",
            cert.summaries.len(),
            cert.total_samples
        ),
    )
}

fn round_trip_and_growth() -> Verdict {
    let grids = SampleGrids::standard();
    let mut worst = 0.0f64;
    for &t in &grids.t {
        let s = f_of(t).unwrap().f;
        let back = inv_f(s).unwrap();
        worst = worst.max((back - t).abs() / t.abs().max(1.0));
    }
    let t = 1e8;
    let s = f_of(t).unwrap().f;
    let ratio = s / t.sqrt();
    let target = 2f64.powf(0.25);
    // quadrature oracle: t = ∫_0^{f(t)} √(1 + 2σ²) dσ, composite Simpson
    let n = 200_000;
    let h = s / n as f64;
    let g = |x: f64| (1.0 + 2.0 * x * x).sqrt();
    let mut acc = g(0.0) + g(s);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    let quad = acc * h / 3.0;
    let quad_ok = (quad - t).abs() <= 1e-9 * t;
    verdict(
        worst <= 1e-10 && (ratio - target).abs() <= 1e-4 && quad_ok && GROWTH_CONSTANT == target,
        format!(
            "max round-trip error {worst:.2e}; f(1e8)/1e4 = {ratio:.9} vs 2^(1/4) = {target:.9}; quadrature rel. error {:.1e}",
            (quad - t).abs() / t
        ),
    )
}

fn finite_differences() -> Verdict {
    let t0 = Instant::now();
    let grids = [
        ("9^3 rectangle", build_domain(&DomainSpec::unit_cube(3, 9)).unwrap()),
        ("12^3 ball", ball(0.5, 12)),
    ];
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (_, g) in &grids {
        for p in [6.0, 10.0] {
            let fun = Functional::new(ExponentParams::new(p, 3).unwrap());
            for _ in 0..10 {
                let v = random_field(g, &mut rng, -1.5, 1.5);
                let w = random_field(g, &mut rng, -1.0, 1.0);
                let eps = 1e-5;
                let shift = |s: f64| Field::new(g, v.values.iter().zip(&w.values).map(|(a, b)| a + s * b).collect()).unwrap();
                let (plus, minus) = (shift(eps), shift(-eps));
                let fd = (fun.energy(&plus) - fun.energy(&minus)) / (2.0 * eps);
                let grad = fun.gradient(&v);
                let an = g.cell_volume() * grad.values.iter().zip(&w.values).map(|(a, b)| a * b).sum::<f64>();
                worst_g = worst_g.max((fd - an).abs() / an.abs());
                let (gp, gm) = (fun.gradient(&plus), fun.gradient(&minus));
                let hw = fun.hessian_apply(&v, &w).unwrap();
                let num: f64 = gp.values.iter().zip(&gm.values).zip(&hw.values)
                    .map(|((a, b), h)| ((a - b) / (2.0 * eps) - h).powi(2))
                    .sum();
                let den: f64 = hw.values.iter().map(|h| h * h).sum();
                worst_h = worst_h.max((num / den).sqrt());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst_g <= 1e-5 && worst_h <= 1e-5 && secs < 30.0,
        format!("40 fields; worst gradient error {worst_g:.2e}, Hessian error {worst_h:.2e}, {secs:.2}s"),
    )
}

fn nehari_projection() -> Verdict {
    let g = ball(0.5, 12);
    let prm = ExponentParams::new(7.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_fixed = 0.0f64;
    for _ in 0..5 {
        let v = random_field(&g, &mut rng, 0.0, 2.0);
        let t = project(&v, &prm).unwrap().t;
        let again = project(&v.scaled(t), &prm).unwrap().t;
        worst_fixed = worst_fixed.max((again - 1.0).abs());
    }

    // single node: root of the Nehari function located by scan and bisection
    let cube = build_domain(&DomainSpec::unit_cube(3, 9)).unwrap();
    let (p, c) = (9.0, 1.3);
    let mut v = Field::zeros(&cube);
    v.values[cube.n_interior() / 2] = c;
    let h = cube.spacing;
    let hn = h.powi(3);
    let a = 6.0 * c * c / (h * h) * hn;
    let phi = |t: f64| {
        let s = f_of(t * c).unwrap();
        hn * s.f.abs().powf(p - 2.0) * s.f * s.fp * c / t - a
    };
    let ts: Vec<f64> = (0..20_000).map(|k| 10f64.powf(-3.0 + 9.0 * k as f64 / 19_999.0)).collect();
    let k = ts.windows(2).position(|w| phi(w[0]) < 0.0 && phi(w[1]) >= 0.0).unwrap();
    let (mut lo, mut hi) = (ts[k], ts[k + 1]);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if phi(m) < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    let t_proj = project(&v, &ExponentParams::new(p, 3).unwrap()).unwrap().t;
    let scan_err = (t_proj - lo).abs() / lo;

    let w = Field::from_fn(&g, |x| (1.0 + x[0]) * (0.3 - x.iter().map(|a| a * a).sum::<f64>()));
    let e = reduced_energy(&w, &prm).unwrap();
    let mut worst_scale = 0.0f64;
    for lam in [0.1, 0.5, 2.0, 10.0] {
        worst_scale = worst_scale.max((reduced_energy(&w.scaled(lam), &prm).unwrap() - e).abs() / e.abs());
    }
    verdict(
        worst_fixed <= 1e-10 && scan_err <= 1e-8 && worst_scale <= 1e-10,
        format!("|t-1| {worst_fixed:.1e}; scan oracle rel. error {scan_err:.1e}; scale invariance {worst_scale:.1e}"),
    )
}

fn asymmetry(grid: &DomainGrid, v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (0..grid.dim)
        .map(|k| {
            let map = grid.reflection_map(k).expect("symmetric grid");
            map.iter().enumerate().map(|(i, &j)| (v[j] - v[i]).abs()).fold(0.0, f64::max) / max
        })
        .fold(0.0, f64::max)
}

fn ground_state_ball(json: &mut Vec<Value>) -> Verdict {
    let t0 = Instant::now();
    let g = ball(0.5, 16);
    let prm = ExponentParams::new(6.0, 3).unwrap();
    let opts = SolverOptions::default();
    let mut rep = ground_state(&g, &prm, &Init::Preset(Preset::Torsion), &opts).unwrap();
    let morse = rep.attach_morse(6, &MorseOptions::default()).unwrap().clone();
    let asym = asymmetry(&g, &rep.field.values);
    let drift = rep.barycenter.iter().map(|b| b * b).sum::<f64>().sqrt();

    // dense cross-check on a 12^3 ball
    let g12 = ball(0.5, 12);
    let r12 = ground_state(&g12, &prm, &Init::Preset(Preset::Torsion), &opts).unwrap();
    let fun = Functional::positive(prm);
    let dense = morse_index_with(&fun, &r12.field, 6, &MorseOptions { method: EigenMethod::Dense, ..Default::default() }).unwrap();
    let lanczos = morse_index_with(&fun, &r12.field, 6, &MorseOptions { method: EigenMethod::Lanczos, ..Default::default() }).unwrap();
    let agree = dense.eigenvalues.iter().zip(&lanczos.eigenvalues).all(|(a, b)| (a - b).abs() <= 1e-8);
    let secs = t0.elapsed().as_secs_f64();
    json.push(serde_json::to_value(&rep).unwrap());
    let pass = rep.converged
        && rep.positive
        && asym <= 1e-6
        && drift <= g.spacing
        && morse.index == 1
        && !morse.saturated
        && dense.index == 1
        && lanczos.index == 1
        && agree
        && secs < 120.0;
    verdict(
        pass,
        format!(
            "converged={} positive={} asymmetry {asym:.1e}, barycenter offset {drift:.1e} (h={:.3}), Morse {} ({:?}); 12^3 dense {} / Lanczos {} agree={agree}; {secs:.1}s",
            rep.converged, rep.positive, g.spacing, morse.index, morse.method, dense.index, lanczos.index
        ),
    )
}

fn level_sweep_criterion(json: &mut Vec<Value>, info: bool) -> Verdict {
    let t0 = Instant::now();
    let ex = fractions(&[0.90, 0.95, 0.98, 0.99], 3, None);
    let s = level_sweep(&ball(50.0, 16), &ex, &SweepOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let t = &s.trends;
    json.push(serde_json::to_value(&s).unwrap());
    if info {
        let small = level_sweep(&ball(0.5, 16), &ex, &SweepOptions::default()).unwrap();
        println!(
            "      info: radius 0.5 gives m_p increasing={} |t*-1| decreasing={} gap decreasing={} (levels {:?})",
            small.trends.m_increasing,
            small.trends.t_gap_decreasing,
            small.trends.level_gap_decreasing,
            small.records.iter().map(|r| (r.m_p * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    verdict(
        t.all_converged && t.m_increasing && t.t_gap_decreasing && t.final_t_gap <= 0.05 && t.norm_bounded && t.level_gap_decreasing && secs < 600.0,
        format!(
            "radius 50: m_p {:?}; final |t*-1| {:.2e}; norm max/median {:.3}; gaps {:?}; {secs:.1}s",
            s.records.iter().map(|r| (r.m_p * 1e4).round() / 1e4).collect::<Vec<_>>(),
            t.final_t_gap,
            t.norm_max_over_median,
            s.records.iter().map(|r| format!("{:.2e}", r.level_gap)).collect::<Vec<_>>()
        ),
    )
}

fn localization(json: &mut Vec<Value>) -> Verdict {
    let t0 = Instant::now();
    let opts = LocalizationOptions::default();
    let two = barycenter_census(&annulus(2, 40), &fractions(&[0.98], 2, Some(12.0))[0], &opts).unwrap();
    let three = barycenter_census(&annulus(3, 20), &fractions(&[0.98], 3, None)[0], &opts).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    json.push(serde_json::to_value(&two).unwrap());
    json.push(serde_json::to_value(&three).unwrap());
    let ok = |r: &quasilinear::experiments::LocalizationReport| !r.inconclusive && r.fraction == Some(1.0);
    verdict(
        ok(&two) && ok(&three) && secs < 600.0,
        format!(
            "2D (cap 12): {}/{} inside r+={}; 3D 20^3: {}/{} inside r+={}; {secs:.1}s",
            two.n_inside, two.n_passed, two.r_plus, three.n_inside, three.n_passed, three.r_plus
        ),
    )
}

fn multiplicity(json: &mut Vec<Value>) -> Verdict {
    let t0 = Instant::now();
    let ann = multiplicity_census(&annulus(3, 20), &fractions(&[0.98], 3, None)[0], &MultiplicityOptions::default()).unwrap();
    let b = multiplicity_census(&ball(0.5, 16), &ExponentParams::new(6.0, 3).unwrap(), &MultiplicityOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    json.push(serde_json::to_value(&ann).unwrap());
    json.push(serde_json::to_value(&b).unwrap());
    verdict(
        ann.found_positive >= 2 && b.found == 1 && secs < 1200.0,
        format!(
            "annulus: {} positive solutions in {} symmetry classes (Morse {:?}); ball: {} cluster; {secs:.1}s",
            ann.found_positive,
            ann.symmetry_classes,
            ann.solutions.iter().map(|s| s.morse_index).collect::<Vec<_>>(),
            b.found
        ),
    )
}

fn concentration() -> Verdict {
    let t0 = Instant::now();
    let ex = fractions(&[0.90, 0.95, 0.98], 3, None);
    let c = concentration_probe(&ball(50.0, 24), &ex, &ConcentrationOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let small = concentration_probe(&ball(0.5, 24), &ex, &ConcentrationOptions::default()).unwrap();
    println!(
        "      info: radius 0.5 gives width decreasing={} sup increasing={} (sup {:?})",
        small.width_decreasing,
        small.sup_increasing,
        small.rows.iter().map(|r| (r.sup_norm * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    let reported = c.rows.iter().all(|r| r.pohozaev_residual.is_finite());
    verdict(
        c.width_decreasing && c.sup_increasing && reported && c.rows.iter().all(|r| r.converged) && secs < 900.0,
        format!(
            "radius 50: width/h {:?}; sup {:?}; Pohozaev {:?}; {secs:.1}s",
            c.rows.iter().map(|r| (r.width_over_h * 1e4).round() / 1e4).collect::<Vec<_>>(),
            c.rows.iter().map(|r| (r.sup_norm * 1e4).round() / 1e4).collect::<Vec<_>>(),
            c.rows.iter().map(|r| format!("{:.3e}", r.pohozaev_residual)).collect::<Vec<_>>()
        ),
    )
}

/// Largest difference between numeric leaves; `None` if the structures differ.
fn max_numeric_diff(a: &Value, b: &Value) -> Option<f64> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64()?, y.as_f64()?);
            Some((x - y).abs() / x.abs().max(1.0))
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(p, q)| max_numeric_diff(p, q)).try_fold(0.0f64, |m, d| Some(m.max(d?)))
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x
            .iter()
            .map(|(k, p)| max_numeric_diff(p, y.get(k)?))
            .try_fold(0.0f64, |m, d| Some(m.max(d?))),
        _ => (a == b).then_some(0.0),
    }
}

fn determinism(first: &[Value]) -> Verdict {
    let mut again = Vec::new();
    ground_state_ball(&mut again);
    level_sweep_criterion(&mut again, false);
    localization(&mut again);
    multiplicity(&mut again);
    let diff = if first.len() == again.len() {
        first.iter().zip(&again).map(|(a, b)| max_numeric_diff(a, b)).try_fold(0.0f64, |m, d| Some(m.max(d?)))
    } else {
        None
    };
    verdict(
        diff.is_some_and(|d| d <= 1e-12),
        format!("{} reports compared; max difference {:?}", first.len(), diff),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        println!("[{}] criterion {n:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failures += 1;
        }
    };
    report(1, "kernel certificate", kernel_certificate());
    report(2, "round trip and growth constant", round_trip_and_growth());
    report(3, "finite differences", finite_differences());
    report(4, "Nehari projection", nehari_projection());
    let mut json = Vec::new();
    report(5, "ground state on the ball", ground_state_ball(&mut json));
    report(6, "level sweep", level_sweep_criterion(&mut json, true));
    report(7, "barycenter localization", localization(&mut json));
    report(8, "multiplicity census", multiplicity(&mut json));
    report(9, "concentration probe", concentration());
    report(10, "determinism", determinism(&json));
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
