//! In-process gateway that serves a scripted scenario over HTTP, checking
//! every request and response against the published schema.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use refseg_core::backends::scripted::Scenario;
use refseg_core::backends::wire::{self, op, CandidateWire};
use refseg_core::backends::{BackendError, ConceptSegmenter, FeatureExtractor, Reasoner};
use refseg_core::image::Image;
use refseg_core::mask::{io, PixelPoint};
use serde_json::{json, Value};

use super::schema;

#[derive(Default)]
pub struct Behaviour {
    /// Answer this many requests with 503 before serving normally.
    pub fail_first: AtomicUsize,
    /// Refuse `/images` uploads, forcing inline images.
    pub reject_uploads: bool,
}

pub struct Gateway {
    pub url: String,
    pub hits: Arc<Mutex<BTreeMap<String, usize>>>,
    pub violations: Arc<Mutex<Vec<String>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

struct State {
    scenario: Scenario,
    images: Mutex<HashMap<String, Image>>,
    behaviour: Behaviour,
    schema: Value,
    violations: Arc<Mutex<Vec<String>>>,
}

fn error(status: u16, code: &str, message: &str) -> (u16, Vec<u8>, &'static str) {
    (status, json!({"code": code, "message": message}).to_string().into_bytes(), "application/json")
}

impl State {
    fn image(&self, r: &str) -> Result<Image, (u16, Vec<u8>, &'static str)> {
        if let Some(b64) = r.strip_prefix("data:image/png;base64,") {
            use base64::Engine;
            let bytes = base64::engine::general_purpose::STANDARD.decode(b64).map_err(|e| error(400, "bad_image", &e.to_string()))?;
            return Image::from_png_bytes(&bytes).map_err(|e| error(400, "bad_image", &e.to_string()));
        }
        self.images.lock().unwrap().get(r).cloned().ok_or_else(|| error(422, "unknown_image", r))
    }

    fn violation(&self, v: String) {
        self.violations.lock().unwrap().push(v);
    }

    fn handle(&self, path: &str, body: &[u8]) -> (u16, Vec<u8>, &'static str) {
        if path == wire::HEALTH {
            return (200, json!({"roles": {"reasoner": "scripted", "segmenter": "scripted", "features": "scripted"}, "mode": "scripted"}).to_string().into_bytes(), "application/json");
        }
        if path == wire::IMAGES {
            if self.behaviour.reject_uploads {
                return error(404, "not_found", "uploads disabled");
            }
            let Ok(img) = Image::from_png_bytes(body) else { return error(400, "bad_image", "not a PNG") };
            let digest = img.digest().to_string();
            self.images.lock().unwrap().insert(digest.clone(), img);
            return (200, json!({"digest": digest}).to_string().into_bytes(), "application/json");
        }
        let Some(op_name) = wire::op_for_endpoint(path) else { return error(404, "not_found", path) };
        let req: Value = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(e) => return error(400, "schema", &e.to_string()),
        };
        if let Err(v) = schema::check_endpoint(&self.schema, path, "request", &req) {
            self.violation(v.clone());
            return error(400, "schema", &v);
        }
        match self.dispatch(op_name, &req) {
            Ok(Value::String(bytes_b64)) if op_name == op::FEATURES => {
                use base64::Engine;
                (200, base64::engine::general_purpose::STANDARD.decode(bytes_b64).unwrap(), "application/octet-stream")
            }
            Ok(resp) => {
                if let Err(v) = schema::check_endpoint(&self.schema, path, "response", &resp) {
                    self.violation(v);
                }
                (200, resp.to_string().into_bytes(), "application/json")
            }
            Err(Ok(e)) => error(422, "semantic", &e.to_string()),
            Err(Err(resp)) => resp,
        }
    }

    fn dispatch(&self, op_name: &str, req: &Value) -> Result<Value, Result<BackendError, (u16, Vec<u8>, &'static str)>> {
        let s = &self.scenario;
        let str_of = |k: &str| req[k].as_str().unwrap_or_default().to_string();
        let image = || self.image(req["image"].as_str().unwrap_or_default()).map_err(Err);
        let options = || serde_json::from_value(req["options"].clone()).unwrap();
        let mask = |k: &str| io::from_rle(req[k].as_str().unwrap()).unwrap();
        let bbox = || serde_json::from_value(req["box"].clone()).unwrap();
        let points = |k: &str| -> Vec<PixelPoint> {
            serde_json::from_value::<Vec<[u32; 2]>>(req[k].clone()).unwrap().into_iter().map(|[x, y]| PixelPoint::positive(x, y)).collect()
        };
        let to = |v: Result<Value, BackendError>| v.map_err(Ok);
        match op_name {
            op::PARSE => to(s.parse_expression(&image()?, &str_of("query"), options()).map(|p| json!(p))),
            op::AUGMENT => to(s.augment_target(&str_of("target")).map(|t| json!({"texts": t}))),
            op::CRITERION => to(s.criterion_map(&str_of("target"), &str_of("refer"), bbox()).map(|c| json!({"relation": c.relation_text}))),
            op::REPHRASE => {
                let refers: Vec<String> = serde_json::from_value(req["refers"].clone()).unwrap();
                let crit = refseg_core::backends::Criterion {
                    relation_text: str_of("relation"),
                    refer_name: refers.first().cloned().unwrap_or_default(),
                    refer_box: refseg_core::mask::BBox::new(0, 0, 1, 1).unwrap(),
                };
                to(s.rephrase(&str_of("query"), &str_of("target"), &refers, &crit).map(|(a, b)| json!({"short": a, "long": b})))
            }
            op::GROUND => to(s.ground_bbox(&image()?, &str_of("text")).map(|b| json!({"box": b}))),
            op::SCORE => to(s.score_mask(&image()?, &mask("mask"), &str_of("query"), options()).map(|v| json!({"score": v}))),
            op::PREFER => {
                let masks: Vec<_> = req["masks"].as_array().unwrap().iter().map(|m| io::from_rle(m.as_str().unwrap()).unwrap()).collect();
                to(s.prefer_mask(&image()?, &masks, &str_of("query"), options()).map(|i| json!({"index": i})))
            }
            op::AFFILIATE => to(s.affiliation(&image()?, &mask("region"), &mask("core")).map(|b| json!({"same_object": b}))),
            op::SEGMENT_TEXT => to(s.segment_text(&image()?, &str_of("phrase")).map(|cs| {
                json!({"candidates": cs.iter().map(CandidateWire::from_candidate).collect::<Vec<_>>()})
            })),
            op::SEGMENT_BOX => to(s.segment_box(&image()?, bbox()).map(|c| json!(CandidateWire::from_candidate(&c)))),
            op::SEGMENT_POINTS => {
                let prior = req.get("prior").and_then(Value::as_str).map(|r| io::from_rle(r).unwrap());
                let negs: Vec<_> = points("negatives").into_iter().map(|p| PixelPoint::negative(p.x, p.y)).collect();
                to(s.segment_points(&image()?, &points("positives"), &negs, prior.as_ref()).map(|c| json!(CandidateWire::from_candidate(&c))))
            }
            op::FEATURES => {
                use base64::Engine;
                to(s.extract(&image()?).map(|f| Value::String(base64::engine::general_purpose::STANDARD.encode(f.to_bytes()))))
            }
            _ => Err(Err(error(404, "not_found", op_name))),
        }
    }
}

pub fn start(scenario: Scenario, behaviour: Behaviour) -> Gateway {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind loopback"));
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(Mutex::new(BTreeMap::new()));
    let violations = Arc::new(Mutex::new(Vec::new()));
    let state = Arc::new(State {
        scenario,
        images: Mutex::new(HashMap::new()),
        behaviour,
        schema: schema::schema(),
        violations: violations.clone(),
    });
    let (srv, h) = (server.clone(), hits.clone());
    let handle = std::thread::spawn(move || {
        std::thread::scope(|scope| {
            for mut req in srv.incoming_requests() {
                let (state, hits) = (state.clone(), h.clone());
                scope.spawn(move || {
                    let path = req.url().to_string();
                    *hits.lock().unwrap().entry(path.clone()).or_insert(0) += 1;
                    let mut body = Vec::new();
                    let _ = req.as_reader().read_to_end(&mut body);
                    let (status, bytes, ctype) = if state
                        .behaviour
                        .fail_first
                        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                        .is_ok()
                    {
                        error(503, "unavailable", "warming up")
                    } else {
                        state.handle(&path, &body)
                    };
                    let header = tiny_http::Header::from_bytes("content-type", ctype).unwrap();
                    let _ = req.respond(tiny_http::Response::from_data(bytes).with_status_code(status).with_header(header));
                });
            }
        });
    });
    Gateway { url, hits, violations, server, handle: Some(handle) }
}
