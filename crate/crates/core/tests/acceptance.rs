//! Acceptance suite. Runs every gated criterion, prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.
//!
//! Built without the default test harness so the summary lines always show:
//!
//! ```text
//! cargo test -p sparsedict --test acceptance
//! ```

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparsedict::classify::{score_frame_sdr, Classifier, Measure, SDR_CAP_DB};
use sparsedict::corpus::{
    evaluate, split_signals, synth, train, write_report, Split, SplitPosition,
};
use sparsedict::dictlearn::{ConcatDictionary, LearnConfig, LearnedDictionary};
use sparsedict::features::{frame_signal, normalize, AudioSignal, FeatureVector, FramingConfig};
use sparsedict::oracle::solve_oracle;
use sparsedict::solver::{gradient, hessian, objective, solve_weights, SolverConfig};
use sparsedict::store::to_bytes;

const SR: u32 = 16_000;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn kl(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter()
        .zip(yhat)
        .map(|(&a, &b)| {
            let b = b.max(1e-12);
            if a > 0.0 {
                a * (a / b).ln() - a + b
            } else {
                b
            }
        })
        .sum()
}

fn matvec(d: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..d.nrows())
        .map(|i| (0..d.ncols()).map(|j| d[(i, j)] * x[j]).sum())
        .collect()
}

fn kkt(y: &[f64], d: &DMatrix<f64>, x: &[f64]) -> f64 {
    let yhat: Vec<f64> = matvec(d, x).into_iter().map(|v| v.max(1e-12)).collect();
    (0..d.ncols())
        .map(|j| {
            let g: f64 = (0..d.nrows())
                .map(|i| d[(i, j)] * (1.0 - y[i] / yhat[i]))
                .sum();
            if x[j] > 0.0 {
                g.abs()
            } else {
                (-g).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn random_atoms(rng: &mut ChaCha8Rng, p: usize, k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::from_fn(p, k, |_, _| rng.gen::<f64>());
    for mut c in d.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    d
}

fn synthetic_split(set: Vec<(String, synth::SyntheticSourceSpec)>, test_seconds: f64) -> Split {
    let signals: Vec<(String, AudioSignal)> = set
        .into_iter()
        .map(|(label, spec)| {
            let sig = synth::generate_synthetic(&spec, SR).expect("valid synthetic spec");
            (label, sig)
        })
        .collect();
    split_signals(
        &signals,
        test_seconds,
        SplitPosition::TailTest,
        &FramingConfig::default(),
    )
    .expect("split")
}

/// The six-source desk-scale pipeline shared by criteria 2, 3 and 6.
struct Pipeline {
    split: Split,
    dict: ConcatDictionary,
}

fn pipeline() -> Pipeline {
    let split = synthetic_split(synth::six_source_set(65.0, 7), 5.0);
    let cfg = LearnConfig {
        t_intra: 0.95,
        t_inter: 0.95,
        n_atoms: 50,
        rng_seed: 7,
    };
    let (dict, _) = train(&split, &cfg).expect("train");
    Pipeline { split, dict }
}

fn solver_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SolverConfig::default();
    let (mut worst_gap, mut worst_kkt, mut unconverged) = (0.0f64, 0.0f64, 0);
    for case in 0..100 {
        let d = random_atoms(&mut rng, 32, 8);
        let y: Vec<f64> = (0..32).map(|_| rng.gen_range(0.01..1.0)).collect();
        let (x, report) = solve_weights(&y, &d, &cfg).map_err(|e| e.to_string())?;
        let xo = solve_oracle(&y, &d, 1_000_000).map_err(|e| e.to_string())?;
        let f = kl(&y, &matvec(&d, x.as_slice()));
        let fo = kl(&y, &matvec(&d, xo.as_slice()));
        let gap = (f - fo).abs();
        check(gap <= 1e-5, || {
            format!("case {case}: objective {f} vs oracle {fo}")
        })?;
        worst_gap = worst_gap.max(gap);
        if report.converged {
            let r = kkt(&y, &d, x.as_slice());
            check(r <= 1e-6, || format!("case {case}: KKT residual {r:e}"))?;
            worst_kkt = worst_kkt.max(r);
        } else {
            unconverged += 1;
        }
    }
    Ok(format!(
        "max |objective gap| {worst_gap:.2e}, max KKT {worst_kkt:.2e}, {unconverged} unconverged"
    ))
}

fn exact_atoms_are_recovered(p: &Pipeline) -> Outcome {
    let classifier =
        Classifier::new(p.dict.clone(), SolverConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let col = rng.gen_range(0..p.dict.total_atoms());
        let owner = p.dict.source_of(col);
        let y = FeatureVector::new(p.dict.atoms().column(col).iter().copied().collect())
            .map_err(|e| e.to_string())?;
        let s = classifier
            .score(&y)
            .map_err(|e| e.to_string())?
            .ok_or("atom scored as silent")?;
        check(s.sdr[owner] == SDR_CAP_DB, || {
            format!("atom {col}: own SDR {} dB", s.sdr[owner])
        })?;
        for m in Measure::FRAME {
            let got = s.predicted.get(m).expect("frame measure");
            check(got == owner, || {
                format!("atom {col} of source {owner}: {} predicts {got}", m.name())
            })?;
        }
    }
    Ok("100 atoms: SDR capped, all three measures pick the owner".into())
}

fn desk_scale_pipeline(p: &Pipeline) -> Outcome {
    let classifier =
        Classifier::new(p.dict.clone(), SolverConfig::default()).map_err(|e| e.to_string())?;
    let report =
        evaluate(&classifier, &p.split.test_sets(), &p.split.meta).map_err(|e| e.to_string())?;
    let acc = |m| report.measure(m).expect("measure present").overall_frames;
    let (sdr, nnz, sw) = (acc(Measure::Sdr), acc(Measure::Nnz), acc(Measure::Sw));
    let detail = format!(
        "SDR {sdr:.2}%, NNZ {nnz:.2}%, SW {sw:.2}%, MASDR min P {:?}",
        report.masdr.min_window
    );
    check(sdr >= 90.0, || format!("SDR below 90%: {detail}"))?;
    check(sdr >= nnz && sdr >= sw, || {
        format!("SDR does not lead: {detail}")
    })?;
    for (label, w) in report.labels.iter().zip(&report.masdr.min_window) {
        check(matches!(w, Some(w) if *w <= 6), || {
            format!("{label} needs MASDR window {w:?}: {detail}")
        })?;
    }
    Ok(detail)
}

fn five_seconds_is_330_frames() -> Outcome {
    let sig = AudioSignal::new(vec![0.1; 5 * SR as usize], SR).map_err(|e| e.to_string())?;
    let n = frame_signal(&sig, &FramingConfig::default())
        .map_err(|e| e.to_string())?
        .len();
    check(n == 330, || format!("{n} frames"))?;
    Ok("330 frames".into())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn twelve_source_structure() -> Outcome {
    let split = synthetic_split(synth::twelve_source_set(12.0, 3), 2.0);
    let cfg = LearnConfig {
        t_intra: 0.95,
        t_inter: 0.95,
        n_atoms: 100,
        rng_seed: 3,
    };
    let (dict, learned): (ConcatDictionary, Vec<LearnedDictionary>) =
        train(&split, &cfg).map_err(|e| e.to_string())?;
    check(dict.total_atoms() == 1200, || {
        format!("{} atoms", dict.total_atoms())
    })?;
    let limit = 0.95 + 1e-12;
    let mut appended = 0;
    for (k, l) in learned.iter().enumerate() {
        let d = &l.dictionary;
        appended += l.appended();
        for a in 0..l.accepted {
            for b in 0..a {
                let c = cosine(d.atom(a), d.atom(b));
                check(c <= limit, || {
                    format!("{}: intra CS {c} between atoms {a} and {b}", d.label())
                })?;
            }
            for earlier in &learned[..k] {
                let e = &earlier.dictionary;
                for b in 0..e.n_atoms() {
                    let c = cosine(d.atom(a), e.atom(b));
                    check(c <= limit, || {
                        format!(
                            "{} atom {a} vs {} atom {b}: inter CS {c}",
                            d.label(),
                            e.label()
                        )
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "1200 atoms, thresholds hold, {appended} appended by fallback"
    ))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm
}

fn numerical_hygiene(p: &Pipeline) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let floor = 1e-12;
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let d = random_atoms(&mut rng, 32, 8);
        let y: Vec<f64> = (0..32).map(|_| rng.gen_range(0.01..1.0)).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(0.05..1.0)).collect();
        let g = gradient(&y, &d, &x, floor);
        let h = 1e-6;
        let fd: Vec<f64> = (0..8)
            .map(|j| {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[j] += h;
                down[j] -= h;
                (objective(&y, &d, &up, floor) - objective(&y, &d, &down, floor)) / (2.0 * h)
            })
            .collect();
        let eg = rel_err(&g, &fd);
        check(eg <= 1e-5, || {
            format!("case {case}: gradient rel err {eg:e}")
        })?;
        worst_g = worst_g.max(eg);

        let cols: Vec<usize> = (0..8).collect();
        let hm = hessian(&y, &d, &x, floor, &cols);
        let mut hfd = Vec::with_capacity(64);
        for j in 0..8 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[j] += h;
            down[j] -= h;
            let (gu, gd) = (gradient(&y, &d, &up, floor), gradient(&y, &d, &down, floor));
            hfd.extend(gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)));
        }
        let eh = rel_err(hm.as_slice(), &hfd);
        check(eh <= 1e-4, || {
            format!("case {case}: Hessian rel err {eh:e}")
        })?;
        worst_h = worst_h.max(eh);
    }

    let cfg = SolverConfig::default();
    let frames: Vec<Vec<f64>> = p
        .split
        .sources
        .iter()
        .flat_map(|s| s.test.frames.iter().step_by(33))
        .filter_map(|f| normalize(f).unit())
        .map(|f| f.into_inner())
        .collect();
    let mut steps = 0;
    for (i, y) in frames.iter().enumerate() {
        let (_, report) = solve_weights(y, p.dict.atoms(), &cfg).map_err(|e| e.to_string())?;
        for w in report.history.windows(2) {
            check(w[1] <= w[0] + 1e-12, || {
                format!("frame {i}: objective rose from {} to {}", w[0], w[1])
            })?;
        }
        steps += report.history.len().saturating_sub(1);
        let base = score_frame_sdr(y, p.dict.sources(), &cfg)
            .map_err(|e| e.to_string())?
            .predicted;
        for alpha in [0.1, 10.0] {
            let scaled: Vec<f64> = y.iter().map(|v| v * alpha).collect();
            let got = score_frame_sdr(&scaled, p.dict.sources(), &cfg)
                .map_err(|e| e.to_string())?
                .predicted;
            check(got == base, || {
                format!("frame {i}: SDR pick {base} becomes {got} at scale {alpha}")
            })?;
        }
    }
    Ok(format!(
        "gradient err {worst_g:.1e}, Hessian err {worst_h:.1e}, {steps} monotone steps over {} frames, scale-invariant picks",
        frames.len()
    ))
}

fn run_once(dir: &std::path::Path) -> Result<(Vec<u8>, String), String> {
    let split = synthetic_split(synth::six_source_set(14.0, 5), 3.0);
    let cfg = LearnConfig {
        n_atoms: 30,
        rng_seed: 5,
        ..LearnConfig::default()
    };
    let (dict, _) = train(&split, &cfg).map_err(|e| e.to_string())?;
    let bytes = to_bytes(&dict).map_err(|e| e.to_string())?;
    let classifier = Classifier::new(dict, SolverConfig::default()).map_err(|e| e.to_string())?;
    let report =
        evaluate(&classifier, &split.test_sets(), &split.meta).map_err(|e| e.to_string())?;
    write_report(dir, &report).map_err(|e| e.to_string())?;
    Ok((bytes, report.to_json().map_err(|e| e.to_string())?))
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("report dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("report file"),
            )
        })
        .collect();
    files.sort();
    files
}

fn deterministic_runs() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (dict_a, json_a) = run_once(&a)?;
    let (dict_b, json_b) = run_once(&b)?;
    check(dict_a == dict_b, || "dictionary bytes differ".into())?;
    check(json_a == json_b, || "report JSON differs".into())?;
    let (fa, fb) = (read_dir_bytes(&a), read_dir_bytes(&b));
    check(fa == fb, || "report files differ".into())?;
    Ok(format!(
        "dictionary ({} bytes) and {} report files identical",
        dict_a.len(),
        fa.len()
    ))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failures += 1;
                println!("criterion {id} FAIL {name} ({secs:.1} s): {why}");
            }
        }
    };

    report(1, "solver matches oracle", &mut solver_matches_oracle);
    let start = Instant::now();
    let p = pipeline();
    println!(
        "six-source dictionary trained in {:.1} s",
        start.elapsed().as_secs_f64()
    );
    report(2, "exact atoms recovered", &mut || {
        exact_atoms_are_recovered(&p)
    });
    report(3, "desk-scale pipeline", &mut || desk_scale_pipeline(&p));
    report(4, "330 frames in 5 s", &mut five_seconds_is_330_frames);
    report(
        5,
        "12-source dictionary structure",
        &mut twelve_source_structure,
    );
    report(6, "numerical hygiene", &mut || numerical_hygiene(&p));
    report(7, "deterministic train and eval", &mut deterministic_runs);
    println!("criterion 8 SKIP full reproduction on the recorded 12-source corpus: data-dependent, run `sparsedict eval --sweep` on it by hand");

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
