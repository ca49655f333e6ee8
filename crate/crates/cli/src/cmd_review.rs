use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hnlevels_review::{create_plan, CaseInput, ReviewPlan, ReviewService, DATA_ROOT_ENV};

use crate::failure::{CmdResult, Failure, ResultExt};
use crate::manifest::LoadedManifest;
use crate::Globals;

#[derive(clap::Args)]
pub struct PlanArgs {
    /// Case manifest (TOML); every case needs an image.
    #[arg(long)]
    manifest: PathBuf,
    /// Number of raters, named rater1, rater2, ...
    #[arg(long, default_value_t = 3, conflicts_with = "rater_ids")]
    raters: usize,
    /// Explicit rater ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    rater_ids: Option<Vec<String>>,
    /// Plan file (default: plan.json next to the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct ServeArgs {
    /// Plan file written by review-plan.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Rating log (default: ratings.jsonl next to the plan).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Directory relative plan paths resolve against (default: $HNLEVELS_DATA_ROOT, then the plan's directory).
    #[arg(long)]
    data_root: Option<PathBuf>,
}

fn dir_of(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn plan(g: &Globals, a: PlanArgs) -> CmdResult {
    let m = LoadedManifest::load(&a.manifest)?;
    m.check_paths(true)?;
    let raters: Vec<String> = match a.rater_ids {
        Some(ids) => ids,
        None => (1..=a.raters).map(|n| format!("rater{n}")).collect(),
    };
    let cases: Vec<CaseInput> = m
        .manifest
        .cases
        .iter()
        .map(|c| CaseInput {
            id: c.id.clone(),
            image: c.image.clone().expect("checked above"),
            sets: c.sets.clone(),
        })
        .collect();
    let plan = create_plan(cases, &raters, &g.schema, g.seed, Some(&m.dir)).input_err(|| "review plan")?;
    let out = a.out.unwrap_or_else(|| m.dir.join("plan.json"));
    plan.save(&out).internal_err(|| "saving plan")?;
    println!("plan: {}", out.display());
    println!("raters: {}", plan.raters.len());
    println!("assignments per rater: {}", plan.assignments_per_rater());
    println!("expected ratings: {}", plan.expected_ratings());
    Ok(())
}

pub fn serve(g: &Globals, a: ServeArgs) -> CmdResult {
    let plan = ReviewPlan::load(&a.plan).input_err(|| "loading plan")?;
    let root = a
        .data_root
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| dir_of(&a.plan));
    let log = a.log.unwrap_or_else(|| dir_of(&a.plan).join("ratings.jsonl"));
    let svc = ReviewService::new(plan, g.schema.clone(), Some(root), &log).input_err(|| "review service")?;

    let listener = std::net::TcpListener::bind((a.host.as_str(), a.port))
        .internal_err(|| format!("binding {}:{}", a.host, a.port))?;
    listener.set_nonblocking(true).internal_err(|| "listener")?;
    let addr = listener.local_addr().internal_err(|| "listener")?;

    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if g.threads > 0 {
        rt.worker_threads(g.threads);
    }
    let rt = rt.enable_all().build().internal_err(|| "runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).internal_err(|| "listener")?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        hnlevels_review::serve(listener, Arc::new(svc), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Failure::Internal(e.into()))
    })
}
