//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always visible in `cargo test` output.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use fpsel_core::bd::{bd_delta, RdCurve};
use fpsel_core::codec::Codec;
use fpsel_core::energy::{
    ci_half_width, ci_test, measure_command, read_energy_delta, CiPolicy, EnergyMeter, MockMeter, MockMeterConfig, RaplMeter,
    SimulatedWorkload,
};
use fpsel_core::features::{
    extract_feature_vector, frame_difference, glcm_stats, optical_flow, squared_frame_difference, write_feature_csv, FeatureConfig,
    FlowParams,
};
use fpsel_core::ml::{
    self, chi_square_scores, evaluate, fit_bagging, train, Dataset, EvalParams, Protocol, TrainParams, TreeParams, CLASSES, N_CLASSES,
};
use fpsel_core::pareto::{pareto_front, pareto_front_indices, select_policy, EnergyAxis, RdePoint};
use fpsel_core::pipeline::{self, DeltaEReport, DeltaERow, MeasurementStore, PolicyReport, RunConfig};
use fpsel_core::quality::{frame_hold_upsample, mpsnr, psnr};
use fpsel_core::resample::{downsample, generate_weights};
use fpsel_core::video::{self, generate_synthetic, Frame, FrameRate, PixelFormat, Plane, SyntheticKind, SyntheticParams, VideoSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LADDER: [u64; 9] = [120, 100, 60, 50, 40, 30, 25, 24, 15];
const SUBSET: [u8; 4] = [18, 23, 28, 33];

fn fr(f: u64) -> FrameRate {
    FrameRate::integer(f)
}

fn pt(fps: u64, crf: u8, e: f64, q: f64) -> RdePoint {
    RdePoint {
        fps: fr(fps),
        crf,
        mpsnr_db: q,
        bitrate_kbps: e * 10.0,
        e_enc_j: e,
        e_dec_j: e / 4.0,
    }
}

fn seq_from(frames: &[Vec<u16>], width: usize, fps: u64) -> VideoSequence {
    let frames = frames
        .iter()
        .map(|d| {
            let luma = Plane {
                width,
                height: d.len() / width,
                data: d.clone(),
            };
            Frame::from_luma(luma, PixelFormat::YUV420P8).unwrap()
        })
        .collect();
    VideoSequence::new("t", fr(fps), frames).unwrap()
}

fn random_seq(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize, fps: u64) -> VideoSequence {
    let frames: Vec<Vec<u16>> = (0..n).map(|_| (0..w * h).map(|_| rng.gen_range(0..256)).collect()).collect();
    seq_from(&frames, w, fps)
}

fn psnr_db(sse: f64, samples: f64) -> f64 {
    10.0 * (255.0 * 255.0 / (sse / samples)).log10()
}

// 1 ----------------------------------------------------------------------

fn pareto_oracle(points: &[RdePoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().any(|p| {
                let q = &points[i];
                p.mpsnr_db >= q.mpsnr_db && p.e_enc_j <= q.e_enc_j && (p.mpsnr_db > q.mpsnr_db || p.e_enc_j < q.e_enc_j)
            })
        })
        .collect()
}

fn criterion_1() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sets: Vec<Vec<RdePoint>> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(0..=200);
            // a coarse lattice on half the sets forces ties on both axes
            let coarse = rng.gen_bool(0.5);
            (0..n)
                .map(|_| {
                    let (e, q) = if coarse {
                        (rng.gen_range(0..12) as f64, rng.gen_range(0..12) as f64)
                    } else {
                        (rng.gen_range(0.0..100.0), rng.gen_range(20.0..50.0))
                    };
                    pt(120, 0, e, q)
                })
                .collect()
        })
        .collect();
    let start = Instant::now();
    let fronts: Vec<Vec<usize>> = sets.iter().map(|s| pareto_front_indices(s, EnergyAxis::Enc)).collect();
    let elapsed = start.elapsed().as_secs_f64();
    for (k, (set, mut got)) in sets.iter().zip(fronts).enumerate() {
        got.sort_unstable();
        if got != pareto_oracle(set) {
            return Err(format!("set {k}: front differs from the O(n^2) filter"));
        }
    }
    if elapsed >= 5.0 {
        return Err(format!("took {elapsed:.2} s"));
    }
    Ok(())
}

// 2 ----------------------------------------------------------------------

fn criterion_2() -> Result<(), String> {
    // (energy J, quality dB) per rate at CRF 18, 23, 28, 33
    let rows: [(u64, [(f64, f64); 4]); 4] = [
        (120, [(100.0, 40.0), (60.0, 37.0), (35.0, 33.0), (20.0, 29.0)]),
        (60, [(50.0, 38.0), (30.0, 36.0), (18.0, 33.5), (10.0, 30.0)]),
        (30, [(25.0, 37.2), (15.0, 36.5), (9.0, 34.0), (5.0, 31.0)]),
        (15, [(12.0, 35.0), (8.0, 34.2), (4.0, 33.6), (2.0, 31.5)]),
    ];
    let grid: Vec<RdePoint> = rows
        .iter()
        .flat_map(|(f, cells)| SUBSET.iter().zip(cells).map(move |(&c, &(e, q))| pt(*f, c, e, q)))
        .collect();
    // Trace: CRF 18 takes the best quality (120 at 40 dB). At CRF 23, 60 fps is
    // dominated by 30 fps at CRF 18, leaving 30 (36.5) and 15 (34.2) on the
    // front; 30 is closest to the 37.0 dB anchor. At CRF 28 only 15 fps is
    // efficient. At CRF 33 the anchor 15 fps is itself efficient.
    let front = pareto_front(&grid, EnergyAxis::Enc);
    let at = |c: u8| -> Vec<u64> { front.iter().filter(|p| p.crf == c).map(|p| p.fps.num()).collect() };
    if at(23) != [30, 15] || at(28) != [15] || at(33) != [15] {
        return Err(format!("fronts: 23 {:?}, 28 {:?}, 33 {:?}", at(23), at(28), at(33)));
    }
    let policy = select_policy(&grid, &SUBSET, EnergyAxis::Enc).map_err(|e| e.to_string())?;
    if policy.to_string() != "{120,30,15,15}" {
        return Err(format!("policy {policy}"));
    }
    Ok(())
}

// 3 ----------------------------------------------------------------------

/// Piecewise cubic Hermite interpolant with the harmonic-mean slope rule and
/// the shape-preserving three-point end condition, evaluated pointwise.
struct HermiteOracle {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl HermiteOracle {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            if del[k - 1].signum() == del[k].signum() && del[k - 1] != 0.0 && del[k] != 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let v = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if v.signum() != d0.signum() {
                0.0
            } else if d0.signum() != d1.signum() && v.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                v
            }
        };
        d[0] = end(h[0], h[1], del[0], del[1]);
        d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        HermiteOracle {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let k = self.x.windows(2).position(|w| t <= w[1]).unwrap_or(self.x.len() - 2);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (h00, h10, h01, h11) = (
            2.0 * s.powi(3) - 3.0 * s * s + 1.0,
            s.powi(3) - 2.0 * s * s + s,
            -2.0 * s.powi(3) + 3.0 * s * s,
            s.powi(3) - s * s,
        );
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

/// BD percentage by midpoint integration on a 200 000-interval grid.
fn bd_fine_grid(r: &[(f64, f64)], t: &[(f64, f64)]) -> f64 {
    let prep = |c: &[(f64, f64)]| {
        let (q, m): (Vec<f64>, Vec<f64>) = c.iter().copied().unzip();
        (q.clone(), HermiteOracle::new(&q, &m.iter().map(|v| v.log10()).collect::<Vec<_>>()))
    };
    let ((qr, fr_), (qt, ft)) = (prep(r), prep(t));
    let lo = qr[0].max(qt[0]);
    let hi = qr[qr.len() - 1].min(qt[qt.len() - 1]);
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let sum: f64 = (0..n).map(|i| lo + (i as f64 + 0.5) * h).map(|q| ft.eval(q) - fr_.eval(q)).sum();
    (10f64.powf(sum * h / (hi - lo)) - 1.0) * 100.0
}

fn random_monotone_curve(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.gen_range(4..=8);
    let mut q = rng.gen_range(26.0..32.0);
    let mut m: f64 = rng.gen_range(20.0..200.0);
    (0..n)
        .map(|_| {
            let p = (q, m);
            q += rng.gen_range(0.5..4.0);
            m *= rng.gen_range(1.05..2.5);
            p
        })
        .collect()
}

fn criterion_3() -> Result<(), String> {
    let a = RdCurve::new(vec![(30.0, 100.0), (34.0, 210.0), (38.0, 390.0), (42.0, 850.0)]);
    let scaled = |k: f64| RdCurve::new(a.points.iter().map(|&(q, m)| (q, m * k)).collect());
    let bd = |r: &RdCurve, t: &RdCurve| bd_delta(r, t).map(|v| v.bd_percent).map_err(|e| e.to_string());
    if bd(&a, &a)? != 0.0 {
        return Err("bd(A, A) is not exactly zero".into());
    }
    let (up, down) = (bd(&a, &scaled(2.0))?, bd(&a, &scaled(0.5))?);
    if (up - 100.0).abs() > 1e-6 || (down + 50.0).abs() > 1e-6 {
        return Err(format!("constant ratio: {up}, {down}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 100 {
        let (r, t) = (random_monotone_curve(&mut rng), random_monotone_curve(&mut rng));
        let lo = r[0].0.max(t[0].0);
        let hi = r[r.len() - 1].0.min(t[t.len() - 1].0);
        if hi - lo < 2.0 {
            continue;
        }
        checked += 1;
        let (rc, tc) = (RdCurve::new(r.clone()), RdCurve::new(t.clone()));
        let (fwd, back) = (bd(&rc, &tc)?, bd(&tc, &rc)?);
        // quasi-inverse: the two ratios are reciprocal
        let product = (1.0 + fwd / 100.0) * (1.0 + back / 100.0);
        if (product - 1.0).abs() > 1e-6 {
            return Err(format!("curve {checked}: (1+a)(1+b) = {product}"));
        }
        let oracle = bd_fine_grid(&r, &t);
        if (fwd - oracle).abs() > 0.01 {
            return Err(format!("curve {checked}: {fwd} vs fine-grid {oracle}"));
        }
    }
    Ok(())
}

// 4 ----------------------------------------------------------------------

fn criterion_4() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reference = random_seq(&mut rng, 6, 4, 120, 120);
    for f in LADDER.iter().copied().filter(|&f| 120 % f == 0 && f < 120) {
        let k = (120 / f) as usize;
        // a noisy test sequence at the lower rate, so the errors are not structured
        let down = downsample(&reference, fr(f)).map_err(|e| e.to_string())?;
        let noisy: Vec<Vec<u16>> = down
            .frames()
            .iter()
            .map(|fr| {
                fr.luma()
                    .data
                    .iter()
                    .map(|&v| (v as i32 + rng.gen_range(-9..=9)).clamp(0, 255) as u16)
                    .collect()
            })
            .collect();
        let test = seq_from(&noisy, 6, f);
        let m = mpsnr(&reference, &test).map_err(|e| e.to_string())?;
        let p = psnr(&reference, &frame_hold_upsample(&test, k)).map_err(|e| e.to_string())?;
        if m.value_db.to_bits() != p.value_db.to_bits() {
            return Err(format!("{f} fps: mpsnr {} vs frame-hold psnr {}", m.value_db, p.value_db));
        }
    }

    // 120 -> 100: enumerate the 600 Hz grid explicitly
    for (w, h) in [(1, 1), (5, 3)] {
        let reference = random_seq(&mut rng, w, h, 60, 120);
        let test = random_seq(&mut rng, w, h, 50, 100);
        let got = mpsnr(&reference, &test).map_err(|e| e.to_string())?.value_db;
        let mut sse = 0.0;
        let ticks = 60 * 5;
        for tick in 0..ticks {
            let (a, b) = (&reference.frames()[tick / 5], &test.frames()[tick / 6]);
            sse += a
                .luma()
                .data
                .iter()
                .zip(&b.luma().data)
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>();
        }
        let want = psnr_db(sse, (ticks * w * h) as f64);
        if (got - want).abs() > 1e-9 {
            return Err(format!("120 vs 100 at {w}x{h}: {got} vs brute force {want}"));
        }
    }
    Ok(())
}

// 5 ----------------------------------------------------------------------

fn criterion_5() -> Result<(), String> {
    for (i, &src) in LADDER.iter().enumerate() {
        for &dst in &LADDER[i..] {
            let table = generate_weights(fr(src), fr(dst), 240).map_err(|e| e.to_string())?;
            for o in 0..table.len() {
                let s: f64 = table.weights(o).iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(format!("{src}->{dst} output {o}: weights sum to {s}"));
                }
            }
        }
    }
    let table = generate_weights(fr(120), fr(100), 6).map_err(|e| e.to_string())?;
    if table.entries[0].source_start != 0 || table.weights(0) != [5.0 / 6.0, 1.0 / 6.0] {
        return Err(format!("120->100 output 0: {:?}", table.entries[0]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = random_seq(&mut rng, 8, 6, 10, 120);
    let same = downsample(&seq, fr(120)).map_err(|e| e.to_string())?;
    if same.frames() != seq.frames() {
        return Err("identity factor changed samples".into());
    }
    Ok(())
}

// 6 ----------------------------------------------------------------------

/// Student-t CDF in closed form for 1 and 3 degrees of freedom.
fn t_cdf(t: f64, df: u32) -> f64 {
    use std::f64::consts::PI;
    match df {
        1 => 0.5 + t.atan() / PI,
        3 => {
            let u = t / 3f64.sqrt();
            0.5 + (u / (1.0 + u * u) + u.atan()) / PI
        }
        _ => unreachable!(),
    }
}

fn t_quantile(p: f64, df: u32) -> f64 {
    let (mut lo, mut hi) = (0.0, 1000.0);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

fn criterion_6() -> Result<(), String> {
    let mut meter = MockMeter::with_watts(30.0, 5.0);
    let mut work = SimulatedWorkload {
        seconds: 2.0,
        class: "encode".into(),
    };
    let m = measure_command(&mut meter, &mut work, &CiPolicy::default(), None).map_err(|e| e.to_string())?;
    if m.e_net != 50.0 {
        return Err(format!("mock e_net {}", m.e_net));
    }
    let mut wrapping = MockMeter::new(MockMeterConfig {
        max_range_joules: 100.0,
        ..Default::default()
    })
    .with_offset(80.0);
    let w = measure_command(&mut wrapping, &mut work, &CiPolicy::default(), None).map_err(|e| e.to_string())?;
    if w.e_net != 50.0 {
        return Err(format!("wrapped mock e_net {}", w.e_net));
    }

    // RAPL counter files: 262143.0 J, then 1.0 J after the counter wrapped
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(dir.path().join("max_energy_range_uj"), "262143328850\n").unwrap();
    fs::write(dir.path().join("energy_uj"), "262143000000\n").unwrap();
    let mut rapl = RaplMeter::open(dir.path()).map_err(|e| e.to_string())?;
    let t0 = rapl.read_joules().map_err(|e| e.to_string())?;
    fs::write(dir.path().join("energy_uj"), "1000000\n").unwrap();
    let t1 = rapl.read_joules().map_err(|e| e.to_string())?;
    let d = read_energy_delta(rapl.max_range(), t0, t1).map_err(|e| e.to_string())?;
    if (d - 1.32885).abs() > 1e-6 {
        return Err(format!("wrapped RAPL delta {d}"));
    }

    for (samples, alpha, beta) in [
        (vec![50.0, 51.0], 0.99, 0.02),
        (vec![10.0, 10.2, 9.8, 10.1], 0.99, 0.02),
        (vec![10.0, 10.2, 9.8, 10.1], 0.95, 0.05),
        (vec![100.0, 100.5, 99.8, 100.1], 0.99, 0.02),
    ] {
        let m = samples.len();
        let mean = samples.iter().sum::<f64>() / m as f64;
        let s = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        let want = s * t_quantile(1.0 - (1.0 - alpha) / 2.0, (m - 1) as u32) / (m as f64).sqrt();
        let got = ci_half_width(&samples, alpha).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-9 {
            return Err(format!("{samples:?}: half-width {got} vs {want}"));
        }
        let pass = ci_test(&samples, alpha, beta).map_err(|e| e.to_string())?;
        if pass != (want <= beta * mean) {
            return Err(format!("{samples:?}: ci_test {pass}"));
        }
    }
    Ok(())
}

// 7 ----------------------------------------------------------------------

fn criterion_7() -> Result<(), String> {
    let constant = generate_synthetic(
        SyntheticKind::Constant,
        &SyntheticParams {
            width: 32,
            height: 32,
            frames: 6,
            value: 77,
            ..Default::default()
        },
    )
    .unwrap();
    let v = extract_feature_vector(&constant, 23, &FeatureConfig::default()).map_err(|e| e.to_string())?;
    let temporal = [
        ("meanFD", v.mean_fd),
        ("meanSFD", v.mean_sfd),
        ("maxTI", v.max_ti),
        ("meanOF_mag", v.mean_of_mag),
        ("stdOF_mag", v.std_of_mag),
        ("meanNFD", v.mean_nfd),
        ("meanh", v.mean_h),
        ("stdGLCM_con", v.std_glcm_con),
        ("stdGLCM_ene", v.std_glcm_ene),
        ("stdGLCM_hom", v.std_glcm_hom),
        ("stdGLCM_ent", v.std_glcm_ent),
    ];
    if let Some((name, x)) = temporal.iter().find(|(_, x)| *x != 0.0) {
        return Err(format!("constant video: {name} = {x}"));
    }

    let e = |r: Result<f64, _>| r.map_err(|e: fpsel_core::features::FeatureError| e.to_string());
    let sfd_a = e(squared_frame_difference(&seq_from(&[vec![10], vec![13]], 1, 120)))?;
    let sfd_b = e(squared_frame_difference(&seq_from(&[vec![0, 0], vec![2, 4]], 2, 120)))?;
    let fd = e(frame_difference(&seq_from(&[vec![10], vec![13], vec![10]], 1, 120)))?;
    if (sfd_a, sfd_b, fd) != (9.0, 10.0, 3.0) {
        return Err(format!("hand cases: SFD {sfd_a}, {sfd_b}; FD {fd}"));
    }

    let g = glcm_stats(&seq_from(&[vec![0, 255, 0, 255]], 4, 120), 8).map_err(|e| e.to_string())?;
    let got = (g.mean.contrast, g.mean.homogeneity, g.mean.energy, g.mean.entropy);
    if got != (49.0, 0.125, 0.5, 1.0) {
        return Err(format!("alternating-row GLCM {got:?}"));
    }

    let shifted = generate_synthetic(
        SyntheticKind::GlobalTranslation,
        &SyntheticParams {
            frames: 2,
            dx: 1,
            dy: 0,
            value: 80,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let flow = optical_flow(&shifted.frames()[0], &shifted.frames()[1], &FlowParams::default()).map_err(|e| e.to_string())?;
    let m = flow.mean_magnitude();
    if !(0.8..=1.2).contains(&m) {
        return Err(format!("1-px shift: mean |flow| {m}"));
    }
    Ok(())
}

// 8 ----------------------------------------------------------------------

fn planted(n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for k in 0..N_CLASSES {
        for _ in 0..n_per_class {
            rows.push(vec![rng.gen(), k as f64 * 3.0 + rng.gen_range(0.0..1.0), rng.gen(), rng.gen()]);
            labels.push(k);
        }
    }
    Dataset {
        feature_names: (0..4).map(|i| format!("x{i}")).collect(),
        rows,
        labels,
    }
}

fn criterion_8() -> Result<(), String> {
    fn e<T>(r: Result<T, ml::MlError>) -> Result<T, String> {
        r.map_err(|e| e.to_string())
    }
    let single = Dataset {
        feature_names: vec!["a".into(), "b".into()],
        rows: (0..10).map(|i| vec![i as f64, (i * 7 % 3) as f64]).collect(),
        labels: vec![3; 10],
    };
    let model = e(train(
        &single,
        &TrainParams {
            k: 2,
            n_estimators: 5,
            ..Default::default()
        },
    ))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        if e(model.predict_full(&[rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0)]))? != 3 {
            return Err("single-class model predicted another class".into());
        }
    }

    let data = planted(10, 8);
    let tp = TrainParams {
        k: 2,
        n_estimators: 25,
        ..Default::default()
    };
    for protocol in [Protocol::RandomSplits, Protocol::KFold] {
        let ev = e(evaluate(
            &data,
            &tp,
            &EvalParams {
                protocol,
                ..Default::default()
            },
        ))?;
        let off_diagonal: u32 = (0..N_CLASSES)
            .flat_map(|i| (0..N_CLASSES).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| ev.confusion[i][j])
            .sum();
        if ev.accuracy != 1.0 || off_diagonal != 0 || (0..N_CLASSES).any(|k| ev.confusion[k][k] == 0) {
            return Err(format!("{protocol:?}: accuracy {} confusion {:?}", ev.accuracy, ev.confusion));
        }
    }
    if CLASSES != [120, 60, 30, 24, 15] {
        return Err(format!("class order {CLASSES:?}"));
    }

    let a = e(fit_bagging(&data, &[0, 1, 2, 3], 30, 99, &TreeParams::default()))?;
    let b = e(fit_bagging(&data, &[0, 1, 2, 3], 30, 99, &TreeParams::default()))?;
    if a.to_json() != b.to_json() {
        return Err("bagging with a fixed seed is not reproducible".into());
    }

    let sep = Dataset {
        feature_names: vec!["sep".into()],
        rows: (0..20).map(|i| vec![if i < 10 { 1.0 } else { 2.0 }]).collect(),
        labels: (0..20).map(|i| if i < 10 { 0 } else { 4 }).collect(),
    };
    let score = e(chi_square_scores(&sep, 10))?;
    if score != [20.0] {
        return Err(format!("separating feature chi-square {score:?}"));
    }
    Ok(())
}

// 9 ----------------------------------------------------------------------

struct E2eOutputs {
    files: Vec<(String, Vec<u8>)>,
    policies: Vec<(String, String)>,
    static_bdee: f64,
    static_delta_e: f64,
}

fn e2e_run(root: &Path) -> Result<E2eOutputs, String> {
    let e = |err: pipeline::PipelineError| err.to_string();
    let sources: Vec<PathBuf> = [
        ("static", SyntheticKind::LocalMotion, 0),
        ("local", SyntheticKind::LocalMotion, 2),
        ("full", SyntheticKind::GlobalTranslation, 3),
    ]
    .iter()
    .map(|&(name, kind, dx)| {
        let seq = generate_synthetic(
            kind,
            &SyntheticParams {
                frames: 32,
                dx,
                value: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let p = root.join(format!("{name}.y4m"));
        video::write_y4m(&seq, &p).unwrap();
        p
    })
    .collect();
    let cfg = RunConfig {
        ladder: [120, 60, 30, 15].map(fr).to_vec(),
        crf_subset: SUBSET.to_vec(),
        codec: Codec::QuantizingStub,
        work_dir: root.join("work"),
        ..Default::default()
    };

    let mut store = MeasurementStore::open(root.join("measurements.csv")).map_err(e)?;
    let summary = pipeline::pipeline_measure(&cfg, &sources, &mut store).map_err(e)?;
    if !summary.failures.is_empty() {
        return Err(format!("{} cells failed: {:?}", summary.failures.len(), summary.failures[0]));
    }
    let labels = pipeline::pipeline_label(&cfg, &store).map_err(e)?;
    let report = pipeline::policy_report(&cfg, &labels);
    let features = pipeline::pipeline_features(&cfg, &sources).map_err(e)?;
    let mut features_csv = Vec::new();
    write_feature_csv(&mut features_csv, &features).map_err(|err| err.to_string())?;
    let labels_csv = pipeline::labels_to_csv(&labels);
    let data = pipeline::build_dataset(&pipeline::labels_from_csv(&labels_csv).map_err(e)?, &features).map_err(e)?;
    let (model, train_report) = pipeline::pipeline_train(&cfg, &data).map_err(e)?;
    let details = sources
        .iter()
        .map(|s| pipeline::delta_e_select(&cfg, &store, &model, s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let delta = DeltaEReport::new(
        details
            .iter()
            .map(|d| DeltaERow {
                sequence: d.sequence.clone(),
                delta_e_percent: d.delta_e_percent,
            })
            .collect(),
    );

    let mut files = vec![
        ("measurements.csv".to_string(), fs::read(root.join("measurements.csv")).unwrap()),
        ("policy.csv".into(), report.to_csv().into_bytes()),
        ("policy.md".into(), report.to_markdown().into_bytes()),
        ("labels.csv".into(), labels_csv.into_bytes()),
        ("features.csv".into(), features_csv),
        ("model.json".into(), model.to_json().into_bytes()),
        ("evaluation.json".into(), serde_json::to_vec_pretty(&train_report).unwrap()),
        ("delta_e.csv".into(), delta.to_csv().into_bytes()),
        ("delta_e.json".into(), serde_json::to_vec_pretty(&details).unwrap()),
    ];
    for l in &labels {
        files.push((
            format!("{}.dat", l.sequence),
            pipeline::curve_data(&store, &l.sequence, cfg.energy_axis).map_err(e)?.into_bytes(),
        ));
    }
    let find = |name: &str| labels.iter().find(|l| l.sequence == name).ok_or(format!("no label for {name}"));
    Ok(E2eOutputs {
        files,
        policies: labels.iter().map(|l| (l.sequence.clone(), l.policy.to_string())).collect(),
        static_bdee: find("static")?.bd.bdee,
        static_delta_e: details
            .iter()
            .find(|d| d.sequence == "static")
            .ok_or("no delta for static")?
            .delta_e_percent,
    })
}

fn criterion_9() -> Result<(), String> {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = e2e_run(a.path())?;
    let elapsed = start.elapsed().as_secs_f64();
    let second = e2e_run(b.path())?;

    let policy = |name: &str| {
        first
            .policies
            .iter()
            .find(|(s, _)| s == name)
            .map(|(_, p)| p.clone())
            .unwrap_or_default()
    };
    let rates = |p: &str| -> Vec<u64> { p.trim_matches(['{', '}']).split(',').map(|v| v.parse().unwrap()).collect() };
    let still = rates(&policy("static"));
    if still.len() != 4 || still[1..].iter().any(|&f| f > 30) {
        return Err(format!("static policy {}", policy("static")));
    }
    if policy("full") != "{120,120,120,120}" {
        return Err(format!("full-motion policy {}", policy("full")));
    }
    if !(first.static_bdee < 0.0) || !(first.static_delta_e < 0.0) {
        return Err(format!("static BDEE {} delta-E {}", first.static_bdee, first.static_delta_e));
    }
    for ((name, x), (_, y)) in first.files.iter().zip(&second.files) {
        if x != y {
            return Err(format!("{name} differs between runs"));
        }
    }
    if elapsed >= 120.0 {
        return Err(format!("one run took {elapsed:.1} s"));
    }
    let names: BTreeSet<&str> = first.policies.iter().map(|(s, _)| s.as_str()).collect();
    if names.len() != 3 {
        return Err(format!("sequences {names:?}"));
    }
    Ok(())
}

// 10 ---------------------------------------------------------------------

fn criterion_10() -> Result<(), String> {
    let table1 = "sequence,policy,bdr,bdee,bdde\ncatch,\"{120,30,15,15}\",-16.03,-69.45,-64.60\n";
    let policy = PolicyReport::from_csv(table1).map_err(|e| e.to_string())?;
    let row = &policy.rows[0];
    if (row.bdr, row.bdee, row.bdde) != (-16.03, -69.45, -64.60) || row.policy != "{120,30,15,15}" {
        return Err(format!("parsed {row:?}"));
    }
    if policy.to_csv() != table1 {
        return Err(format!("re-rendered as {:?}", policy.to_csv()));
    }
    if !policy
        .to_markdown()
        .contains("| catch | {120,30,15,15} | -16.03 | -69.45 | -64.60 |")
    {
        return Err("markdown row differs".into());
    }
    let via_json: PolicyReport = serde_json::from_str(&serde_json::to_string(&policy).unwrap()).map_err(|e| e.to_string())?;
    if via_json != policy {
        return Err("policy report JSON round trip".into());
    }

    let table5 = "sequence,delta_e_percent\ncatch,-54.85\n";
    let delta = DeltaEReport::from_csv(table5).map_err(|e| e.to_string())?;
    if delta.rows[0].delta_e_percent != -54.85 || delta.to_csv() != table5 {
        return Err(format!("delta-E fixture {:?}", delta.to_csv()));
    }
    let via_json: DeltaEReport = serde_json::from_str(&serde_json::to_string(&delta).unwrap()).map_err(|e| e.to_string())?;
    if via_json != delta {
        return Err("delta-E report JSON round trip".into());
    }

    let full = PolicyReport::new(vec![policy.rows[0].clone(), {
        let mut r = policy.rows[0].clone();
        r.sequence = "other".into();
        r.policy = "{120,120,120,120}".into();
        r.bdr = 0.0;
        r.bdee = 0.0;
        r.bdde = 0.0;
        r.downsampled = false;
        r
    }]);
    let back = PolicyReport::from_csv(&full.to_csv()).map_err(|e| e.to_string())?;
    if back.to_csv() != full.to_csv() || back.averages[0].bdee != -34.73 {
        return Err(format!("averages {:?}", back.averages));
    }
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<(), String>); 10] = [
        ("Pareto front equals the O(n^2) filter on 1000 random sets in < 5 s", criterion_1),
        ("planted crossover grid selects {120,30,15,15}", criterion_2),
        ("BD zero, constant ratio, quasi-inverse and fine-grid oracle", criterion_3),
        ("mPSNR equals frame-hold PSNR and the 120->100 tick enumeration", criterion_4),
        ("resampler weights sum to 1, 120->100 is [5/6,1/6], identity is exact", criterion_5),
        ("mock 50 J, RAPL wraparound and t-interval hand cases", criterion_6),
        ("feature nulls, hand cases, GLCM and 1-px flow", criterion_7),
        ("single class, planted mapping, reproducible bagging, chi-square 20", criterion_8),
        (
            "hermetic end-to-end run: content-dependent policies, savings, reproducibility",
            criterion_9,
        ),
        ("report fixtures round-trip", criterion_10),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS  criterion {:>2}: {name} ({secs:.2} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {:>2}: {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
