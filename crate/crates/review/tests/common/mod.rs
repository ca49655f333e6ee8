#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use hnlevels_core::phantom::{generate_phantom, perturb_boundary_jitter, PhantomConfig};
use hnlevels_core::{default_schema, write_nifti, LevelSchema};
use hnlevels_review::{create_plan, CaseInput, ReviewPlan, ReviewService};

/// Set ids nobody would type by accident, so a substring hit is a leak.
pub const SET_IDS: [&str; 3] = ["SETexpertQ7x", "SETmodelRawZ3w", "SETmodelPostK9v"];

pub struct Study {
    pub dir: tempfile::TempDir,
    pub plan: ReviewPlan,
    pub schema: LevelSchema,
}

impl Study {
    pub fn plan_path(&self) -> PathBuf {
        self.dir.path().join("plan.json")
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.path().join("ratings.jsonl")
    }
}

/// Small phantom study on disk with paths relative to the temp dir.
pub fn build_study(cases: usize, raters: usize, seed: u64) -> Study {
    let dir = tempfile::tempdir().unwrap();
    let schema = default_schema();
    let mut inputs = Vec::new();
    for c in 0..cases {
        let cfg = PhantomConfig::scaled([20, 20, 48], [1.2, 1.2, 2.5], seed + c as u64);
        let p = generate_phantom(&cfg, &schema).unwrap();
        let case = format!("case{c:02}");
        let image = PathBuf::from(format!("{case}_ct.nii"));
        write_nifti(&p.image, dir.path().join(&image)).unwrap();
        let mut sets = std::collections::BTreeMap::new();
        for (n, set) in SET_IDS.iter().enumerate() {
            let labels = if n == 0 {
                p.labels.clone()
            } else {
                perturb_boundary_jitter(&p.labels, &schema, n, seed * 31 + c as u64)
            };
            let rel = PathBuf::from(format!("{case}_{set}.nii.gz"));
            write_nifti(&labels, dir.path().join(&rel)).unwrap();
            sets.insert(set.to_string(), rel);
        }
        inputs.push(CaseInput { id: case, image, sets });
    }
    let rater_ids: Vec<String> = (1..=raters).map(|r| format!("rater{r}")).collect();
    let plan = create_plan(inputs, &rater_ids, &schema, seed, Some(dir.path())).unwrap();
    plan.save(&dir.path().join("plan.json")).unwrap();
    Study { dir, plan, schema }
}

pub struct Server {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(study: &Study) -> Self {
        let svc = ReviewService::new(
            study.plan.clone(),
            study.schema.clone(),
            Some(study.dir.path().to_path_buf()),
            &study.log_path(),
        )
        .unwrap();
        Self::start_service(Arc::new(svc))
    }

    pub fn start_service(svc: Arc<ReviewService>) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let handle = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                hnlevels_review::serve(listener, svc, async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            handle: Some(handle),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn collect(mut resp: ureq::http::Response<ureq::Body>) -> Reply {
    let headers = resp
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
        .collect();
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_vec().unwrap();
    Reply { status, headers, body }
}

pub fn get(agent: &ureq::Agent, url: &str, key: Option<&str>) -> Reply {
    let mut req = agent.get(url);
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    collect(req.call().unwrap())
}

pub fn post_json(agent: &ureq::Agent, url: &str, key: Option<&str>, body: &serde_json::Value) -> Reply {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    collect(req.send(body.to_string()).unwrap())
}

pub fn key_of(plan: &ReviewPlan, rater: &str) -> String {
    plan.rater(rater).unwrap().key.clone()
}

pub fn data_root(study: &Study) -> &Path {
    study.dir.path()
}
