//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion does. Reference values come from oracles written here,
//! independent of the library code under test.
//!
//! Run with `cargo test -p topp-harness --test acceptance`.

use std::fs;
use std::io::Write;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use topp_core::pipeline::{
    memory_overhead, model_speedup, model_speedup_ratio, run_group, run_head, EstimatorMode,
    KvContext, PipelineConfig,
};
use topp_core::quant::{
    dequantize_row, pack_bits, page_metadata, quantize_row, unpack_bits, QuantBits,
};
use topp_core::selectors::{group_union, quest_page_score, Budget, SelectorConfig, SelectorKind};
use topp_core::{
    attend, attention_weights, binary_search_top_p, sparse_attention, AttentionWeights,
    BinarySearchConfig, Matrix, TokenSelection, MASS_SLACK,
};
use topp_harness::{Workload, WorkloadKind, WorkloadSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::new(rows, cols, normals(rng, rows * cols)).unwrap()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference softmax of `q . k / sqrt(d)`, in f64.
fn reference_weights(q: &[f64], keys: &[Vec<f64>]) -> Vec<f64> {
    let scale = 1.0 / (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn rows_f64<F: topp_core::Real>(m: &Matrix<F>) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect()
}

/// Sort descending and accumulate until the mass reaches `p`.
fn sort_oracle_budget(w: &[f64], p: f64) -> usize {
    let mut s = w.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut mass = 0.0;
    for (i, x) in s.iter().enumerate() {
        if mass >= p - MASS_SLACK {
            return i;
        }
        mass += x;
    }
    s.len()
}

fn shannon(w: &[f64]) -> f64 {
    -w.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pruner_matches_oracle() -> Outcome {
    const NS: [usize; 5] = [16, 64, 256, 1024, 4096];
    const PS: [f64; 6] = [0.5, 0.8, 0.85, 0.9, 0.95, 0.99];
    const TEMPS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut rng = rng(1);
    let start = Instant::now();
    let (mut checks, mut tied, mut failures) = (0usize, 0usize, Vec::new());
    for trial in 0..10_000 {
        let n = NS[trial % NS.len()];
        let logits: Vec<f64> = if trial % 10 == 9 {
            (0..n).map(|_| rng.random_range(0..4) as f64).collect()
        } else {
            let t = TEMPS[rng.random_range(0..TEMPS.len())];
            normals(&mut rng, n).into_iter().map(|z| z / t).collect()
        };
        let w = AttentionWeights::from_logits(&logits).unwrap();
        let ws = w.as_slice();
        let mut sorted = ws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let distinct = sorted.windows(2).all(|p| p[0] != p[1]);
        tied += !distinct as usize;
        for p in PS {
            checks += 1;
            let out = binary_search_top_p(ws, &BinarySearchConfig::new(p).unwrap()).unwrap();
            let sel = out.selection.indices();
            let mass: f64 = sel.iter().map(|&i| ws[i]).sum();
            let budget = sort_oracle_budget(ws, p);
            let ok = if mass < p - MASS_SLACK {
                false
            } else if distinct {
                sel.len() == budget
            } else {
                // Any excess must be made of tokens tied at the threshold.
                let threshold = sel.iter().map(|&i| ws[i]).fold(f64::INFINITY, f64::min);
                let above = ws.iter().filter(|&&x| x > threshold).count();
                let at = ws.iter().filter(|&&x| x == threshold).count();
                sel.len() >= budget && sel.len() <= above + at && above < budget
            };
            if !ok {
                failures.push(format!("trial {trial} p {p}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        failures.is_empty() && secs < 30.0,
        format!(
            "{checks} checks over 10000 vectors ({tied} with ties), {} failures {:?}, {secs:.2} s",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn residual_bound_holds() -> Outcome {
    let mut rng = rng(2);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..1_000 {
        let n = rng.random_range(1..400);
        let d = rng.random_range(1..48);
        let dv = rng.random_range(1..48);
        let q: Vec<f64> = normals(&mut rng, d).iter().map(|x| x * 2.0).collect();
        let k = matrix(&mut rng, n, d);
        let v = matrix(&mut rng, n, dv);
        let keep = rng.random_range(0.0..1.0);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(keep)).collect();
        let sel = TokenSelection::from_mask(mask.clone());

        let w = attention_weights(&q, &k).unwrap();
        let o = attend(&w, &v).unwrap();
        let o_hat = sparse_attention(&w, &v, &sel, false).unwrap();
        let err = o
            .iter()
            .zip(&o_hat)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();

        let reference = reference_weights(&q, &rows_f64(&k));
        let mass: f64 = (0..n).filter(|&i| mask[i]).map(|i| reference[i]).sum();
        let fro = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        let gap = err - (1.0 - mass) * fro;
        worst = worst.max(gap);
        violations += (gap > 1e-12) as usize;
    }
    check(
        violations == 0,
        format!("1000 instances, {violations} violations, max(err - bound) = {worst:.3e}"),
    )
}

fn cost_model_is_exact() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for n in [64u64, 1024, 4096, 131_072] {
        // Scaled by 64: (4n + 16n) / (4n + 4n + n) = 20 / 9.
        let ratio = model_speedup_ratio(n, n / 4, n / 64).unwrap();
        let float = model_speedup(
            n as usize,
            n as usize / 4,
            n as usize / 64,
            1.0 / 16.0,
            0.25,
        )
        .unwrap();
        ok &= ratio == (20, 9) && float == 20.0 / 9.0;
        detail.push(format!("N={n}: {}/{}", ratio.0, ratio.1));
    }
    let overhead = memory_overhead(4).unwrap();
    ok &= overhead == 0.125;
    check(
        ok,
        format!("{}, memory_overhead(4) = {overhead}", detail.join(", ")),
    )
}

fn quantization_roundtrip_and_packing() -> Outcome {
    let mut rng = rng(4);
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    for _ in 0..10_000 {
        let k = normals(&mut rng, 128);
        for bits in [QuantBits::Two, QuantBits::Four, QuantBits::Eight] {
            let (codes, params) = quantize_row(&k, bits).unwrap();
            for (x, y) in k.iter().zip(dequantize_row(&codes, &params)) {
                let excess = (x - y).abs() - (params.scale as f64 / 2.0 + 1e-6);
                worst = worst.max(excess);
                bad += (excess > 0.0) as usize;
            }
        }
    }
    let mut bijective = true;
    for bits in [QuantBits::Two, QuantBits::Four, QuantBits::Eight] {
        let per = (8 / bits.bits()) as usize;
        let mut seen = [false; 256];
        for byte in 0..=255u8 {
            let codes = unpack_bits(&[byte], per, bits).unwrap();
            // Independent LSB-first decode.
            let expect: Vec<u8> = (0..per)
                .map(|i| (byte >> (i as u32 * bits.bits())) & bits.max_code())
                .collect();
            bijective &= codes == expect;
            let packed = pack_bits(&codes, bits).unwrap();
            bijective &= packed == [byte] && !seen[packed[0] as usize];
            seen[packed[0] as usize] = true;
        }
        bijective &= seen.iter().all(|&s| s);
    }
    check(
        bad == 0 && bijective,
        format!(
            "10000 rows d=128 at 2/4/8 bits, {bad} elements over scale/2 + 1e-6 (max excess {worst:.3e}); \
             256-pattern bijection for 2/4/8 bits: {bijective}"
        ),
    )
}

fn int4_tracks_true_mass() -> Outcome {
    let mut rng = rng(5);
    let cfg = |bits| PipelineConfig {
        selector: SelectorConfig::full(),
        prune: BinarySearchConfig::new(0.85).unwrap(),
        estimator: EstimatorMode::Quantized(bits),
        bypass_layers: Vec::new(),
        ..PipelineConfig::default()
    };
    let (c4, c2) = (cfg(QuantBits::Four), cfg(QuantBits::Two));
    let trials = 200;
    let (mut int4_ok, mut int2_below) = (0, 0);
    let mut masses = (0.0, 0.0);
    for _ in 0..trials {
        let q: Vec<f32> = to_f32(&normals(&mut rng, 128));
        let keys = Matrix::new(8192, 128, to_f32(&normals(&mut rng, 8192 * 128))).unwrap();
        // Output values do not affect the selection; one column suffices.
        let values = Matrix::new(8192, 1, to_f32(&normals(&mut rng, 8192))).unwrap();
        let reference = reference_weights(&to_f64(&q), &rows_f64(&keys));
        let true_mass = |c: &PipelineConfig| {
            let ctx = KvContext::build(&keys, &values, c).unwrap();
            let run = run_head(&q, &ctx, c).unwrap();
            run.outcome
                .selection
                .indices()
                .iter()
                .map(|&i| reference[i])
                .sum::<f64>()
        };
        let (m4, m2) = (true_mass(&c4), true_mass(&c2));
        masses.0 += m4 / trials as f64;
        masses.1 += m2 / trials as f64;
        int4_ok += (m4 >= 0.80) as usize;
        int2_below += (m2 < m4) as usize;
    }
    check(
        int4_ok * 100 >= trials * 95 && int2_below * 100 >= trials * 95,
        format!(
            "INT4 mass >= 0.80 on {int4_ok}/{trials}, INT2 < INT4 on {int2_below}/{trials} \
             (mean INT4 {:.4}, INT2 {:.4})",
            masses.0, masses.1
        ),
    )
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn budgets_track_entropy() -> Outcome {
    let mut entropies = Vec::new();
    let mut budgets = Vec::new();
    let mut means = Vec::new();
    for (i, temperature) in [4.0, 2.0, 1.0, 0.5].into_iter().enumerate() {
        let spec = WorkloadSpec {
            kind: WorkloadKind::LogitTemperature,
            n: 2048,
            d: 64,
            count: 100,
            temperature,
            seed: 60 + i as u64,
            ..WorkloadSpec::default()
        };
        let mut sum = 0.0;
        for item in Workload::new(&spec).unwrap().iter() {
            let w = reference_weights(&to_f64(&item.queries[0]), &rows_f64(&item.keys));
            let b = sort_oracle_budget(&w, 0.9) as f64;
            entropies.push(shannon(&w));
            budgets.push(b);
            sum += b;
        }
        means.push(sum / 100.0);
    }
    let decreasing = means.windows(2).all(|m| m[0] > m[1]);
    let rho = spearman(&entropies, &budgets);
    check(
        decreasing && rho >= 0.9,
        format!(
            "mean budget at tau 4/2/1/0.5 = {:.1}/{:.1}/{:.1}/{:.1}, spearman {rho:.4} over {}",
            means[0],
            means[1],
            means[2],
            means[3],
            budgets.len()
        ),
    )
}

fn degenerate_pipeline_is_exact() -> Outcome {
    let mut rng = rng(7);
    let cfg = PipelineConfig {
        selector: SelectorConfig::full(),
        prune: BinarySearchConfig::new(1.0).unwrap(),
        estimator: EstimatorMode::Exact,
        renormalize_output: true,
        bypass_layers: Vec::new(),
        ..PipelineConfig::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..2048);
        let d = rng.random_range(1..=128);
        let q = to_f32(&normals(&mut rng, d));
        let k = Matrix::new(n, d, to_f32(&normals(&mut rng, n * d))).unwrap();
        let v = Matrix::new(n, d, to_f32(&normals(&mut rng, n * d))).unwrap();
        let ctx = KvContext::build(&k, &v, &cfg).unwrap();
        let out = run_head(&q, &ctx, &cfg).unwrap().output;
        let w = reference_weights(&to_f64(&q), &rows_f64(&k));
        let vr = rows_f64(&v);
        for (c, &x) in out.iter().enumerate() {
            let exact: f64 = w.iter().zip(&vr).map(|(wi, row)| wi * row[c]).sum();
            worst = worst.max((x as f64 - exact).abs());
        }
    }
    check(
        worst <= 1e-5,
        format!("100 instances, max |o - o_full| = {worst:.3e}"),
    )
}

fn quest_scores_are_upper_bounds() -> Outcome {
    let mut rng = rng(8);
    let (mut pages, mut violations) = (0, 0);
    while pages < 10_000 {
        let d = rng.random_range(1..=128);
        let page_size = rng.random_range(1..=32);
        let n = page_size * rng.random_range(1..8) + rng.random_range(0..page_size);
        let scale = rng.random_range(0.1..10.0);
        let k = Matrix::new(
            n,
            d,
            normals(&mut rng, n * d).iter().map(|x| x * scale).collect(),
        )
        .unwrap();
        let q = normals(&mut rng, d);
        for meta in page_metadata(&k, page_size).unwrap() {
            let score = quest_page_score(&q, &meta);
            for t in meta.tokens() {
                let logit = dot(&q, k.row(t));
                let tol = 1e-12
                    * q.iter()
                        .zip(k.row(t))
                        .map(|(a, b)| (a * b).abs())
                        .sum::<f64>();
                violations += (logit > score + tol) as usize;
            }
            pages += 1;
        }
    }
    check(
        violations == 0,
        format!("{pages} pages, {violations} violations"),
    )
}

fn grouping_never_loses_mass() -> Outcome {
    let mut rng = rng(9);
    let (mut union_drops, mut pipeline_drops, mut heads) = (0, 0, 0);
    for g in 0..1_000 {
        let n = 16 * rng.random_range(4..40);
        let d = [16, 32, 64][g % 3];
        let estimator = if g % 2 == 0 {
            EstimatorMode::Exact
        } else {
            EstimatorMode::Quantized(QuantBits::Four)
        };
        let cfg = PipelineConfig {
            selector: SelectorConfig {
                kind: SelectorKind::Quest,
                budget: Budget::Fraction(0.25),
                ..SelectorConfig::default()
            },
            prune: BinarySearchConfig::new(rng.random_range(0.5..0.99)).unwrap(),
            estimator,
            group_size: 4,
            bypass_layers: Vec::new(),
            ..PipelineConfig::default()
        };
        let k = Matrix::new(n, d, to_f32(&normals(&mut rng, n * d))).unwrap();
        let v = Matrix::new(n, d, to_f32(&normals(&mut rng, n * d))).unwrap();
        let qs: Vec<Vec<f32>> = (0..4).map(|_| to_f32(&normals(&mut rng, d))).collect();
        let ctx = KvContext::build(&k, &v, &cfg).unwrap();
        let krows = rows_f64(&k);
        let weights: Vec<Vec<f64>> = qs
            .iter()
            .map(|q| reference_weights(&to_f64(q), &krows))
            .collect();
        let mass = |w: &[f64], s: &TokenSelection| s.indices().iter().map(|&i| w[i]).sum::<f64>();

        let solo: Vec<TokenSelection> = qs
            .iter()
            .map(|q| run_head(q, &ctx, &cfg).unwrap().outcome.selection)
            .collect();
        let union = group_union(&solo).unwrap();
        let grouped = run_group(&qs, &ctx, &cfg).unwrap();
        for (w, own) in weights.iter().zip(&solo) {
            heads += 1;
            union_drops += (mass(w, &union) < mass(w, own)) as usize;
            pipeline_drops += (mass(w, &grouped.selection) < mass(w, own) - 1e-12) as usize;
        }
    }
    check(
        union_drops == 0 && pipeline_drops == 0,
        format!(
            "1000 groups of 4 ({heads} heads): union drops {union_drops}, \
             grouped pipeline drops {pipeline_drops}"
        ),
    )
}

fn run_is_deterministic() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[workload]\nkind = \"gaussian_qk\"\nn = 1024\nd = 64\nheads = 4\ngroup_size = 2\n\
         layers = 3\ncount = 3\nseed = 1234\n\
         [selector]\nkind = \"quest\"\n[prune]\np = 0.9\n\
         [pipeline]\nestimator = \"4\"\nbypass_layers = [0]\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_topp"))
            .args(["run", "--seed", "42", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        fs::read(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
    check(
        a == b && rows > 0,
        format!("{rows} rows, {} bytes, identical: {}", a.len(), a == b),
    )
}

/// Writes past the test harness's output capture so the lines show in a
/// plain `cargo test` run.
fn report(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("pruner-oracle equivalence", pruner_matches_oracle),
        ("residual error bound", residual_bound_holds),
        ("cost model", cost_model_is_exact),
        (
            "quantization roundtrip and packing",
            quantization_roundtrip_and_packing,
        ),
        ("INT4 vs INT2 selection mass", int4_tracks_true_mass),
        ("budget adaptivity", budgets_track_entropy),
        ("degenerate exactness", degenerate_pipeline_is_exact),
        ("quest soundness", quest_scores_are_upper_bounds),
        ("GQA monotonicity", grouping_never_loses_mass),
        ("run determinism", run_is_deterministic),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(d) => report(format!("PASS {:>2} {name}: {d} [{secs:.1} s]", i + 1)),
            Err(d) => {
                report(format!("FAIL {:>2} {name}: {d} [{secs:.1} s]", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
