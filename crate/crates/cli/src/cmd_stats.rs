use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use hnlevels_core::stats::{paired_levene, wilcoxon_rank_sum, wilcoxon_signed_rank, Mode, PairedSample, TestResult};

use crate::failure::{CmdResult, Failure, ResultExt};
use crate::Globals;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TestName {
    /// Wilcoxon signed-rank test on paired values.
    SignedRank,
    /// Wilcoxon rank-sum (Mann-Whitney) test on two independent samples.
    RankSum,
    /// Paired Levene test on median-centered absolute deviations.
    Levene,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Exact,
    Approx,
    Auto,
}

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["csv", "metrics", "ratings"])))]
pub struct Args {
    #[arg(value_enum)]
    test: TestName,
    /// Wide CSV; compare the columns named by --x and --y.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Long CSV written by `evaluate`; compare two sets per case.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Rating export; compare per-case mean scores of two contour sets.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// First column (with --csv) or first set (with --metrics/--ratings).
    #[arg(long)]
    x: String,
    /// Second column or set.
    #[arg(long)]
    y: String,
    /// Metric column for --metrics.
    #[arg(long, default_value = "vol_dice")]
    metric: String,
    /// Level for --metrics: a level id or "union".
    #[arg(long, default_value = "union")]
    level: String,
    /// Signed-rank p-value method.
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

fn reader(path: &Path) -> CmdResult<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).input_err(|| format!("reading {}", path.display()))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> CmdResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Failure::input(format!("{}: no column {name:?}", path.display())))
}

fn number(s: &str, path: &Path, line: usize) -> CmdResult<f64> {
    s.trim()
        .parse::<f64>()
        .input_err(|| format!("{} line {line}: {s:?} is not a number", path.display()))
}

/// Paired or independent columns from a wide CSV. Blank cells are skipped
/// for the rank-sum test and rejected otherwise.
fn from_wide(path: &Path, x: &str, y: &str, paired: bool) -> CmdResult<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().input_err(|| format!("reading {}", path.display()))?.clone();
    let (cx, cy) = (column(&headers, x, path)?, column(&headers, y, path)?);
    let (mut ids, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = rec.input_err(|| format!("reading {}", path.display()))?;
        let (a, b) = (rec.get(cx).unwrap_or(""), rec.get(cy).unwrap_or(""));
        if paired {
            xs.push(number(a, path, line)?);
            ys.push(number(b, path, line)?);
            ids.push(line.to_string());
        } else {
            if !a.trim().is_empty() {
                xs.push(number(a, path, line)?);
            }
            if !b.trim().is_empty() {
                ys.push(number(b, path, line)?);
            }
        }
    }
    Ok((ids, xs, ys))
}

/// Values keyed by (case, set), averaged when a pair occurs more than once.
fn paired_by_case(
    path: &Path,
    set_col: &str,
    value_col: &str,
    filter: Option<(&str, &str)>,
    x: &str,
    y: &str,
) -> CmdResult<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().input_err(|| format!("reading {}", path.display()))?.clone();
    let cc = column(&headers, "case", path)?;
    let cs = column(&headers, set_col, path)?;
    let cv = column(&headers, value_col, path)?;
    let cf = match filter {
        Some((col, _)) => Some(column(&headers, col, path)?),
        None => None,
    };
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.input_err(|| format!("reading {}", path.display()))?;
        if let (Some(c), Some((_, want))) = (cf, filter) {
            if rec.get(c) != Some(want) {
                continue;
            }
        }
        let set = rec.get(cs).unwrap_or("");
        if set != x && set != y {
            continue;
        }
        let raw = rec.get(cv).unwrap_or("");
        if raw.trim().is_empty() {
            continue;
        }
        let v = number(raw, path, n + 2)?;
        let e = acc.entry((rec[cc].to_string(), set.to_string())).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let mut cases: Vec<String> = acc.keys().map(|k| k.0.clone()).collect();
    cases.dedup();
    let (mut ids, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for c in cases {
        let get = |s: &str| acc.get(&(c.clone(), s.to_string())).map(|(sum, k)| sum / *k as f64);
        if let (Some(a), Some(b)) = (get(x), get(y)) {
            ids.push(c);
            xs.push(a);
            ys.push(b);
        }
    }
    if ids.is_empty() {
        return Err(Failure::input(format!(
            "{}: no case has values for both {x:?} and {y:?}",
            path.display()
        )));
    }
    Ok((ids, xs, ys))
}

fn print_result(r: &TestResult, json: bool) -> CmdResult {
    if json {
        println!("{}", serde_json::to_string_pretty(r).internal_err(|| "json")?);
    } else {
        println!("method: {}", r.method);
        println!("n: {}", r.n_effective);
        println!("statistic: {}", r.statistic);
        println!("p_value: {}", r.p_value);
        for n in &r.notes {
            println!("note: {n}");
        }
    }
    Ok(())
}

pub fn run(_g: &Globals, a: Args) -> CmdResult {
    let paired = !matches!(a.test, TestName::RankSum);
    let (ids, x, y) = if let Some(p) = &a.csv {
        from_wide(p, &a.x, &a.y, paired)?
    } else if let Some(p) = &a.metrics {
        paired_by_case(p, "set", &a.metric, Some(("level", a.level.as_str())), &a.x, &a.y)?
    } else if let Some(p) = &a.ratings {
        paired_by_case(p, "contour_set", "score", None, &a.x, &a.y)?
    } else {
        unreachable!("clap requires a source")
    };
    let result = match a.test {
        TestName::RankSum => wilcoxon_rank_sum(&x, &y).input_err(|| "rank-sum test")?,
        TestName::SignedRank | TestName::Levene => {
            let sample = PairedSample::new(ids, x, y).input_err(|| "paired sample")?;
            if matches!(a.test, TestName::Levene) {
                paired_levene(&sample).input_err(|| "paired Levene test")?
            } else {
                let mode = match a.mode {
                    ModeArg::Exact => Mode::Exact,
                    ModeArg::Approx => Mode::Approx,
                    ModeArg::Auto => Mode::Auto,
                };
                wilcoxon_signed_rank(&sample, mode)
            }
        }
    };
    print_result(&result, a.json)
}
