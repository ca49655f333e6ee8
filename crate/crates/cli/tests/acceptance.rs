//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use hnlevels_core::metrics::{evaluate_case, LevelMetrics, MetricReport};
use hnlevels_core::nifti::{parse_nifti, to_nifti_bytes, HEADER_SIZE};
use hnlevels_core::phantom::{
    generate_phantom, oracle_metrics, perturb_boundary_jitter, random_label_pair, PhantomConfig,
};
use hnlevels_core::postprocess::{slice_consistency_violations, slice_plane_adjust, SliceAdjustConfig};
use hnlevels_core::stats::{paired_levene, wilcoxon_rank_sum, wilcoxon_signed_rank, Mode, PairedSample};
use hnlevels_core::volume::AxisCodes;
use hnlevels_core::{
    default_schema, read_image, read_labels, write_nifti, ImageVolume, LabelVolume, LevelSchema, Volume,
    VolumeKind, VoxelGrid,
};
use hnlevels_review::{create_plan, CaseInput, ReviewService};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- metrics

/// Relative difference |a - b| / max(|a|, |b|), zero when both are zero.
fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn metrics_rel(a: &LevelMetrics, b: &LevelMetrics) -> Result<f64, String> {
    let hd = match (a.hausdorff_max_mm, b.hausdorff_max_mm) {
        (Some(x), Some(y)) => rel(x, y),
        (None, None) => 0.0,
        _ => return Err("Hausdorff defined on one side only".into()),
    };
    Ok(rel(a.vol_dice, b.vol_dice).max(rel(a.surf_dice, b.surf_dice)).max(hd))
}

fn reports_rel(fast: &MetricReport, oracle: &MetricReport) -> Result<f64, String> {
    let ids = |r: &MetricReport| r.levels.iter().map(|e| e.level).collect::<Vec<_>>();
    if ids(fast) != ids(oracle) {
        return Err(format!("level sets differ: {:?} vs {:?}", ids(fast), ids(oracle)));
    }
    let mut worst = metrics_rel(&fast.union, &oracle.union)?;
    for (a, b) in fast.levels.iter().zip(&oracle.levels) {
        worst = worst.max(metrics_rel(&a.metrics, &b.metrics)?);
    }
    Ok(worst)
}

fn metric_oracle_equivalence() -> Outcome {
    const CASES: u64 = 120;
    const TOLERANCES: [f64; 3] = [0.5, 1.0, 3.0];
    let schema = default_schema();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    for seed in 0..CASES {
        let dims = [rng.random_range(6..=32), rng.random_range(6..=32), rng.random_range(4..=32)];
        let spacing = [rng.random_range(0.4..1.6), rng.random_range(0.4..1.6), rng.random_range(1.0..3.5)];
        let (pred, reference) = random_label_pair(dims, spacing, &schema, seed).map_err(|e| e.to_string())?;
        for tol in TOLERANCES {
            let fast = evaluate_case("c", &pred, &reference, &schema, tol).map_err(|e| e.to_string())?;
            let slow = oracle_metrics("c", &pred, &reference, &schema, Some(tol)).map_err(|e| e.to_string())?;
            let d = reports_rel(&fast, &slow).map_err(|e| format!("seed {seed} tol {tol}: {e}"))?;
            if d > 1e-9 {
                return Err(format!("seed {seed} dims {dims:?} tol {tol}: relative difference {d:e}"));
            }
            worst = worst.max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1} s (limit 60 s)"))?;
    Ok(format!(
        "{CASES} random phantoms <= 32^3, tolerances {TOLERANCES:?} mm, max relative difference {worst:e} (limit 1e-9), {secs:.1} s (limit 60 s)"
    ))
}

// ------------------------------------------------------------ postprocess

fn jittered(seed: u64, shift: usize, schema: &LevelSchema) -> Result<(LabelVolume, LabelVolume), String> {
    let cfg = PhantomConfig {
        seed,
        ..PhantomConfig::default()
    };
    let p = generate_phantom(&cfg, schema).map_err(|e| e.to_string())?;
    let j = perturb_boundary_jitter(&p.labels, schema, shift, seed.wrapping_mul(7919) + 1);
    Ok((p.labels, j))
}

fn slice_adjust_soundness() -> Outcome {
    let schema = default_schema();
    let cfg = SliceAdjustConfig::default();
    let mut with_violations = 0;
    for seed in 0..50u64 {
        let (_, input) = jittered(seed, 1 + (seed % 3) as usize, &schema)?;
        let violating: BTreeSet<usize> = slice_consistency_violations(&input, &schema)
            .iter()
            .map(|v| v.slice)
            .collect();
        with_violations += !violating.is_empty() as usize;
        let (out, report) = slice_plane_adjust(&input, &schema, &cfg).map_err(|e| e.to_string())?;
        let left = slice_consistency_violations(&out, &schema);
        check(left.is_empty(), format!("seed {seed}: {} violations remain", left.len()))?;
        let (again, _) = slice_plane_adjust(&out, &schema, &cfg).map_err(|e| e.to_string())?;
        check(again.labels() == out.labels(), format!("seed {seed}: second application changed voxels"))?;
        for r in &report.exclusion {
            check(
                violating.contains(&r.slice),
                format!("seed {seed}: exclusion record on clean slice {}", r.slice),
            )?;
        }
        // outside violating slices a voxel may only become background
        let n = input.grid().slice_len();
        for (idx, (a, b)) in input.labels().iter().zip(out.labels()).enumerate() {
            if a != b && *b != schema.background_id() && !violating.contains(&(idx / n)) {
                return Err(format!("seed {seed}: slice {} relabeled without a violation", idx / n));
            }
        }
    }
    check(with_violations == 50, format!("only {with_violations}/50 inputs had violations"))?;
    Ok("50 jittered phantoms: zero violations after, bit-exact idempotence, exclusion edits only on violating slices".into())
}

fn dice(a: &LabelVolume, b: &LabelVolume, id: u8) -> f64 {
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        na += (x == id) as u64;
        nb += (y == id) as u64;
        both += (x == id && y == id) as u64;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

fn geometric_near_invariance() -> Outcome {
    let schema = default_schema();
    let cfg = SliceAdjustConfig::default();
    let mut worst = 0.0f64;
    let mut before_total = 0;
    const SEEDS: u64 = 10;
    for seed in 100..100 + SEEDS {
        let (clean, input) = jittered(seed, 1, &schema)?;
        let before = slice_consistency_violations(&input, &schema).len();
        check(before > 0, format!("seed {seed}: jitter produced no violations"))?;
        before_total += before;
        let (out, _) = slice_plane_adjust(&input, &schema, &cfg).map_err(|e| e.to_string())?;
        let after = slice_consistency_violations(&out, &schema).len();
        check(after == 0, format!("seed {seed}: {after} violations after adjustment"))?;
        for l in schema.levels() {
            let d = (dice(&out, &clean, l.id) - dice(&input, &clean, l.id)).abs();
            check(d <= 0.02, format!("seed {seed} level {}: |delta Dice| = {d:.4}", l.name))?;
            worst = worst.max(d);
        }
    }
    Ok(format!(
        "{SEEDS} one-slice-jitter phantoms: max per-level |delta vol Dice| {worst:.4} (limit 0.02), violations {before_total} -> 0"
    ))
}

fn postprocess_runtime() -> Outcome {
    let schema = default_schema();
    let mut cfg = PhantomConfig::scaled([512, 512, 160], [0.9, 0.9, 1.5], 77);
    cfg.table = false;
    let p = generate_phantom(&cfg, &schema).map_err(|e| e.to_string())?;
    let labels = perturb_boundary_jitter(&p.labels, &schema, 1, 78);
    let classes = labels.histogram().iter().filter(|&&c| c > 0).count();
    check(classes == 21, format!("volume has {classes} classes, expected 21"))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let adjust_cfg = SliceAdjustConfig::default();
    let mut times = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        let r = pool.install(|| slice_plane_adjust(&labels, &schema, &adjust_cfg));
        times.push(t.elapsed().as_secs_f64());
        r.map_err(|e| e.to_string())?;
    }
    times.sort_by(f64::total_cmp);
    let median = times[1];
    check(median <= 0.5, format!("median of 3 runs {median:.3} s (limit 0.5 s)"))?;
    Ok(format!("512x512x160, 21 classes, single thread: median of 3 runs {median:.3} s (limit 0.5 s)"))
}

// ------------------------------------------------------------------ stats

/// Doubled mid-ranks of |d| by counting, independent of any sort.
fn doubled_mid_ranks(v: &[f64]) -> Vec<u64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as u64;
            let equal = v.iter().filter(|&&y| y == x).count() as u64;
            2 * less + equal + 1
        })
        .collect()
}

fn signed_rank_by_enumeration(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let r = doubled_mid_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let observed: u64 = (0..n).filter(|&i| nz[i] > 0.0).map(|i| r[i]).sum();
    let (mut lower, mut upper) = (0u128, 0u128);
    for pattern in 0u64..(1 << n) {
        let w: u64 = (0..n).filter(|b| pattern >> b & 1 == 1).map(|b| r[b]).sum();
        lower += (w <= observed) as u128;
        upper += (w >= observed) as u128;
    }
    let p = (2.0 * lower.min(upper) as f64 / 2f64.powi(n as i32)).min(1.0);
    (observed as f64 / 2.0, p)
}

fn rank_sum_by_enumeration(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let r = doubled_mid_ranks(&pooled);
    let m = x.len() as u64;
    let observed_u2: u64 = r[..x.len()].iter().sum::<u64>() - m * (m + 1);
    // all size-m subsets of pooled positions
    fn walk(r: &[u64], start: usize, left: usize, acc: u64, out: &mut Vec<u64>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..=r.len() - left {
            walk(r, i + 1, left - 1, acc + r[i], out);
        }
    }
    let mut sums = Vec::new();
    walk(&r, 0, x.len(), 0, &mut sums);
    let us: Vec<u64> = sums.iter().map(|s| s - m * (m + 1)).collect();
    let lower = us.iter().filter(|&&u| u <= observed_u2).count() as u64;
    let upper = us.iter().filter(|&&u| u >= observed_u2).count() as u64;
    let p = (2.0 * lower.min(upper) as f64 / us.len() as f64).min(1.0);
    (observed_u2 as f64 / 2.0, p)
}

fn statistics_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5717);
    let mut fixtures = 0;
    for n in 1..=12usize {
        for _ in 0..25 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
            let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let s = PairedSample::unnamed(x, y).map_err(|e| e.to_string())?;
            let fast = wilcoxon_signed_rank(&s, Mode::Exact);
            let (stat, p) = signed_rank_by_enumeration(&diffs);
            check(
                fast.statistic == stat && fast.p_value == p,
                format!("signed-rank n={n}: ({}, {}) vs enumeration ({stat}, {p})", fast.statistic, fast.p_value),
            )?;
            fixtures += 1;
        }
    }
    let mut rank_sum = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=8);
        let k = rng.random_range(1..=16 - m);
        let mut pool: Vec<f64> = (1..=64).map(|v| v as f64 * 0.25).collect();
        for i in 0..pool.len() {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let (x, y) = (pool[..m].to_vec(), pool[m..m + k].to_vec());
        let fast = wilcoxon_rank_sum(&x, &y).map_err(|e| e.to_string())?;
        check(fast.method.contains("exact"), "rank-sum did not take the exact path")?;
        let (u, p) = rank_sum_by_enumeration(&x, &y);
        check(
            fast.statistic == u && fast.p_value == p,
            format!("rank-sum {m}v{k}: ({}, {}) vs enumeration ({u}, {p})", fast.statistic, fast.p_value),
        )?;
        rank_sum += 1;
    }
    // fixed 20-pair Levene fixture, t computed by hand
    let x = [
        0.81, 0.79, 0.84, 0.77, 0.80, 0.83, 0.78, 0.82, 0.85, 0.76, 0.80, 0.81, 0.79, 0.83, 0.78, 0.82, 0.80, 0.84,
        0.77, 0.81,
    ];
    let y = [
        0.853, 0.655, 1.157, 0.454, 0.756, 1.053, 0.555, 0.957, 1.254, 0.356, 0.753, 0.855, 0.657, 1.054, 0.556,
        0.953, 0.755, 1.157, 0.454, 0.856,
    ];
    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        (s[9] + s[10]) / 2.0
    };
    let (mx, my) = (median(&x), median(&y));
    let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - mx).abs() - (b - my).abs()).collect();
    let mean = d.iter().sum::<f64>() / 20.0;
    let sd = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 19.0).sqrt();
    let t = mean / (sd / 20f64.sqrt());
    let fast = paired_levene(&PairedSample::unnamed(x.to_vec(), y.to_vec()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    check(
        (fast.statistic - t).abs() <= 1e-9,
        format!("levene t {} vs hand-computed {t}", fast.statistic),
    )?;
    // scipy.stats.ttest_rel on the median-centred absolute deviations
    const SCIPY_T: f64 = -6.737605263452829;
    check(
        (fast.statistic - SCIPY_T).abs() <= 1e-9,
        format!("levene t {} vs scipy {SCIPY_T}", fast.statistic),
    )?;
    Ok(format!(
        "signed-rank exact == 2^n enumeration on {fixtures} fixtures (n <= 12), rank-sum exact == subset enumeration on {rank_sum} fixtures, levene t {t:.9} within 1e-9"
    ))
}

// ------------------------------------------------------------------ NIfTI

fn nifti_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x1f71);
    for n in 0..20 {
        let dims = [rng.random_range(1..24), rng.random_range(1..24), rng.random_range(1..16)];
        let spacing = [rng.random_range(0.3..3.0), rng.random_range(0.3..3.0), rng.random_range(0.5..5.0)];
        let origin = [rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)];
        let grid = VoxelGrid::with_placement(dims, spacing, origin, AxisCodes::RAS).map_err(|e| e.to_string())?;
        let image: ImageVolume = Volume::new(
            grid.clone(),
            (0..grid.len()).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect(),
        )
        .map_err(|e| e.to_string())?;
        let labels = LabelVolume::new(grid.clone(), (0..grid.len()).map(|_| rng.random_range(0..=20)).collect(), "default")
            .map_err(|e| e.to_string())?;
        let ext = if n % 2 == 0 { "nii" } else { "nii.gz" };
        let (ip, lp) = (dir.path().join(format!("i{n}.{ext}")), dir.path().join(format!("l{n}.{ext}")));
        write_nifti(&image, &ip).map_err(|e| e.to_string())?;
        write_nifti(&labels, &lp).map_err(|e| e.to_string())?;
        let bi = read_image(&ip).map_err(|e| e.to_string())?;
        let bl = read_labels(&lp).map_err(|e| e.to_string())?;
        let bits = |v: &ImageVolume| v.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        check(bits(&bi) == bits(&image), format!("volume {n}: image payload differs"))?;
        check(bl.labels() == labels.labels(), format!("volume {n}: label payload differs"))?;
        check(bi.dims() == dims && bl.grid().dims == dims, format!("volume {n}: dims differ"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let base_grid = VoxelGrid::new([7, 5, 3], [0.9, 0.9, 2.5]).map_err(|e| e.to_string())?;
    let base = [
        to_nifti_bytes(&LabelVolume::new(base_grid.clone(), vec![2; base_grid.len()], "default").map_err(|e| e.to_string())?),
        to_nifti_bytes(&Volume::new(base_grid.clone(), vec![-5.0f32; base_grid.len()]).map_err(|e| e.to_string())?),
    ];
    let mut rejected = 0;
    for m in 0..1000 {
        let mut bytes = base[m % 2].clone();
        for _ in 0..rng.random_range(1..6) {
            let pos = rng.random_range(0..HEADER_SIZE + 4);
            bytes[pos] = rng.random();
        }
        if rng.random_bool(0.1) {
            bytes.truncate(rng.random_range(0..bytes.len()));
        }
        let kind = if rng.random_bool(0.5) { VolumeKind::Label } else { VolumeKind::Image };
        match catch_unwind(AssertUnwindSafe(|| parse_nifti(&bytes, kind))) {
            Ok(r) => rejected += r.is_err() as usize,
            Err(_) => return Err(format!("mutation {m} panicked the parser")),
        }
    }
    Ok(format!(
        "20 random image+label volumes bit-identical after write/read, 1000 header mutations without a panic ({rejected} rejected)"
    ))
}

// ----------------------------------------------------------------- review

const SET_IDS: [&str; 3] = ["SETexpertQ7x", "SETmodelRawZ3w", "SETmodelPostK9v"];

struct Study {
    _dir: tempfile::TempDir,
    service: Arc<ReviewService>,
}

fn build_study() -> Result<Study, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let schema = default_schema();
    let mut cases = Vec::new();
    for c in 0..20u64 {
        let cfg = PhantomConfig::scaled([20, 20, 48], [1.2, 1.2, 2.5], 500 + c);
        let p = generate_phantom(&cfg, &schema).map_err(|e| e.to_string())?;
        let id = format!("case{c:02}");
        let image = PathBuf::from(format!("{id}_ct.nii"));
        write_nifti(&p.image, dir.path().join(&image)).map_err(|e| e.to_string())?;
        let mut sets = BTreeMap::new();
        for (n, set) in SET_IDS.iter().enumerate() {
            let labels = if n == 0 { p.labels.clone() } else { perturb_boundary_jitter(&p.labels, &schema, n, c) };
            let rel = PathBuf::from(format!("{id}_{set}.nii.gz"));
            write_nifti(&labels, dir.path().join(&rel)).map_err(|e| e.to_string())?;
            sets.insert(set.to_string(), rel);
        }
        cases.push(CaseInput { id, image, sets });
    }
    let raters = ["rater1", "rater2", "rater3"].map(String::from);
    let plan = create_plan(cases, &raters, &schema, 42, Some(dir.path())).map_err(|e| e.to_string())?;
    let service = ReviewService::new(plan, schema, Some(dir.path().to_path_buf()), &dir.path().join("log.jsonl"))
        .map_err(|e| e.to_string())?;
    Ok(Study {
        _dir: dir,
        service: Arc::new(service),
    })
}

struct Reply {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

fn send(agent: &ureq::Agent, method: &str, url: &str, key: &str, body: Option<&Value>) -> Result<Reply, String> {
    let auth = format!("Bearer {key}");
    let resp = match (method, body) {
        ("GET", _) => agent.get(url).header("Authorization", &auth).call(),
        (_, Some(b)) => agent
            .post(url)
            .header("Authorization", &auth)
            .header("Content-Type", "application/json")
            .send(b.to_string()),
        _ => unreachable!(),
    };
    let mut resp = resp.map_err(|e| e.to_string())?;
    let headers = resp
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
        .collect();
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_vec().map_err(|e| e.to_string())?;
    Ok(Reply { status, headers, body })
}

/// Every string in a JSON value, keys included.
fn json_strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Array(a) => a.iter().for_each(|x| json_strings(x, out)),
        Value::Object(m) => {
            for (k, x) in m {
                out.push(k.clone());
                json_strings(x, out);
            }
        }
        _ => {}
    }
}

#[derive(Default)]
struct Audit {
    responses: usize,
    fields: usize,
    leaks: Vec<String>,
}

impl Audit {
    fn scan(&mut self, what: &str, r: &Reply) {
        self.responses += 1;
        let mut texts: Vec<String> = r.headers.iter().flat_map(|(k, v)| [k.clone(), v.clone()]).collect();
        texts.push(String::from_utf8_lossy(&r.body).into_owned());
        if let Ok(v) = serde_json::from_slice::<Value>(&r.body) {
            json_strings(&v, &mut texts);
        }
        self.fields += texts.len();
        for t in texts {
            let lower = t.to_lowercase();
            for set in SET_IDS {
                if lower.contains(&set.to_lowercase()) {
                    self.leaks.push(format!("{what}: {set}"));
                }
            }
        }
    }
}

/// Drives the full study over HTTP; returns export row count, rating
/// count and the audit.
fn run_study(study: &Study) -> Result<(usize, usize, usize, Audit), String> {
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let svc = study.service.clone();
    let server = std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            addr_tx.send(listener.local_addr().unwrap()).unwrap();
            hnlevels_review::serve(listener, svc, async {
                let _ = stop_rx.await;
            })
            .await
            .unwrap();
        })
    });
    let base = format!("http://{}", addr_rx.recv().map_err(|e| e.to_string())?);
    let plan = study.service.plan().clone();
    let levels = plan.levels.clone();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut audit = Audit::default();
    let mut posted = 0;
    for rater in &plan.raters {
        let mut per_case: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        loop {
            let next = send(&agent, "GET", &format!("{base}/session/{}/next", rater.id), &rater.key, None)?;
            audit.scan("next", &next);
            check(next.status == 200, format!("next returned {}", next.status))?;
            let v: Value = serde_json::from_slice(&next.body).map_err(|e| e.to_string())?;
            if v["status"] == "complete" {
                break;
            }
            let token = v["token"].as_str().ok_or("no token")?.to_string();
            for plane in ["axial", "coronal", "sagittal"] {
                let index = v["slices"][plane].as_u64().ok_or("no slice count")? / 2;
                let url = format!("{base}/render?token={token}&plane={plane}&index={index}&wc=40&ww=400");
                let png = send(&agent, "GET", &url, &rater.key, None)?;
                check(png.status == 200, format!("render returned {}", png.status))?;
                audit.scan("render", &png);
            }
            for &level in &levels {
                let body = json!({ "token": token, "level": level, "score": (level as f64 * 4.7) % 100.0, "time_on_case_s": 30.0 });
                let ack = send(&agent, "POST", &format!("{base}/rating"), &rater.key, Some(&body))?;
                check(ack.status == 200, format!("rating returned {}", ack.status))?;
                audit.scan("rating", &ack);
                posted += 1;
            }
            let progress = send(&agent, "GET", &format!("{base}/progress/{}", rater.id), &rater.key, None)?;
            audit.scan("progress", &progress);
            let mut stripped = v.clone();
            for f in ["token", "position", "completed", "rated_levels"] {
                stripped.as_object_mut().ok_or("payload not an object")?.remove(f);
            }
            per_case.entry(plan.assignments[&token].case.clone()).or_default().push(stripped);
        }
        for (case, payloads) in per_case {
            if payloads.windows(2).any(|w| w[0] != w[1]) {
                audit.leaks.push(format!("next payloads for {case} differ between contour sets"));
            }
        }
    }
    let blinded = send(&agent, "GET", &format!("{base}/export"), &plan.admin_key, None)?;
    check(blinded.status == 200, format!("blinded export returned {}", blinded.status))?;
    audit.scan("blinded export", &blinded);
    let export = send(&agent, "GET", &format!("{base}/export?unblind=true"), &plan.admin_key, None)?;
    let rows = csv::Reader::from_reader(export.body.as_slice()).records().count();
    let _ = stop_tx.send(());
    let _ = server.join();
    let expected = plan.expected_ratings();
    check(posted == expected, format!("posted {posted} ratings, plan expects {expected}"))?;
    Ok((plan.assignments_per_rater(), expected, rows, audit))
}

fn review_criteria() -> (Outcome, Outcome) {
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<_, String> {
        let study = build_study()?;
        run_study(&study)
    }));
    let result = match result {
        Ok(r) => r,
        Err(_) => Err("panicked".to_string()),
    };
    match result {
        Err(e) => (Err(e.clone()), Err(e)),
        Ok((per_rater, expected, rows, audit)) => {
            let protocol = if per_rater == 60 && expected == 3600 && rows == 3600 {
                Ok(format!(
                    "3 raters x 20 cases x 3 sets x 20 levels: {per_rater} assignments per rater, {expected} expected ratings, {rows} export rows after a scripted HTTP study"
                ))
            } else {
                Err(format!("{per_rater} per rater, {expected} expected, {rows} export rows"))
            };
            let blinding = if audit.leaks.is_empty() {
                Ok(format!(
                    "{} responses incl. blinded export, {} header/body/JSON fields scanned, no contour-set identifier found",
                    audit.responses, audit.fields
                ))
            } else {
                Err(format!("{} leaks, first: {}", audit.leaks.len(), audit.leaks[0]))
            };
            (protocol, blinding)
        }
    }
}

// ------------------------------------------------------------------- main

fn guarded(f: fn() -> Outcome) -> Outcome {
    match catch_unwind(f) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("metric-oracle equivalence", guarded(metric_oracle_equivalence)),
        ("slice-adjust soundness", guarded(slice_adjust_soundness)),
        ("geometric near-invariance", guarded(geometric_near_invariance)),
        ("postprocessing runtime", guarded(postprocess_runtime)),
        ("statistics exactness", guarded(statistics_exactness)),
        ("NIfTI round-trip", guarded(nifti_round_trip)),
    ];
    let (protocol, blinding) = review_criteria();
    results.push(("protocol arithmetic", protocol));
    results.push(("blinding audit", blinding));
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
