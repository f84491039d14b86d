mod common;

use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use clickhere::dataset::image_to_bytes;
use clickhere::predict::{decode_png, encode_png, response_from, wire, PredictResponse};
use clickhere::server::{load, router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::Fixture;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(Fixture::build)
}

fn app() -> Router {
    let f = fixture();
    let loaded = load(&f.path("model.ckpt"), &f.path("data/test")).unwrap();
    router(AppState::ready(loaded), None)
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn error_field(&self) -> Option<String> {
        self.json()["error"]["field"].as_str().map(String::from)
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let r = app.clone().oneshot(req).await.unwrap();
    let status = r.status();
    let headers = r.headers().clone();
    let body = r.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, body: impl Into<Body>) -> Reply {
    let req = Request::post("/api/predict")
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap();
    send(app, req).await
}

#[tokio::test]
async fn answers_503_until_loaded() {
    let state = AppState::new();
    let app = router(state.clone(), None);
    for uri in ["/healthz", "/api/meta", "/api/instances", "/api/instances/0/image"] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert!(r.headers.contains_key(header::RETRY_AFTER));
        assert!(r.json()["error"]["message"].is_string());
    }
    let r = post(&app, json!({"instance_id": 0, "x": 1, "y": 1, "keypoint": 0, "object": 0}).to_string()).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);

    let f = fixture();
    state.set(load(&f.path("model.ckpt"), &f.path("data/test")).unwrap());
    let r = get(&app, "/healthz").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, b"ok");
}

#[tokio::test]
async fn meta_describes_the_model() {
    let app = app();
    let m = get(&app, "/api/meta").await.json();
    let cfg = &fixture().config.model;
    assert_eq!(m["variant"], "ch_full");
    assert_eq!(m["n_bins"], cfg.n_bins);
    assert_eq!(m["image_size"], cfg.image_size);
    let (_, h, w) = cfg.attention_grid();
    assert_eq!(m["attention_grid"], json!([h, w]));
    let objects = m["objects"].as_array().unwrap();
    assert_eq!(objects.len(), 3);
    for (i, o) in objects.iter().enumerate() {
        assert_eq!(o["id"], i);
        assert_eq!(o["name"], cfg.objects[i].name);
        let kps: Vec<&str> = o["keypoints"].as_array().unwrap().iter().map(|k| k["name"].as_str().unwrap()).collect();
        assert_eq!(kps, cfg.objects[i].keypoints);
    }
    assert!(m["parameter_count"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn instances_are_paged() {
    let app = app();
    let ds = fixture().test_data();
    let total = ds.dataset.instances.len();
    let first = get(&app, "/api/instances?page_size=7").await.json();
    assert_eq!(first["split"], "test");
    assert_eq!(first["total"], total);
    assert_eq!(first["page_size"], 7);
    let mut seen = Vec::new();
    let pages = total.div_ceil(7);
    for p in 0..pages {
        let page = get(&app, &format!("/api/instances?split=test&page={p}&page_size=7")).await.json();
        for i in page["instances"].as_array().unwrap() {
            seen.push(i["id"].as_u64().unwrap());
        }
    }
    let expected: Vec<u64> = ds.dataset.instances.iter().map(|i| i.id).collect();
    assert_eq!(seen, expected);
    let past = get(&app, &format!("/api/instances?page={pages}&page_size=7")).await.json();
    assert_eq!(past["instances"], json!([]));

    let one = &first["instances"][0];
    let inst = &ds.dataset.instances[0];
    assert_eq!(one["x"], inst.x);
    assert_eq!(one["keypoint_name"], ds.dataset.keypoint_names[inst.object][inst.keypoint]);
    assert_eq!(one["ground_truth"]["azimuth"], inst.viewpoint.azimuth);

    let train = get(&app, "/api/instances?split=train").await.json();
    assert_eq!(train["total"], 0);
}

#[tokio::test]
async fn instance_query_errors_name_the_parameter() {
    let app = app();
    for (uri, field) in [
        ("/api/instances?split=nope", "split"),
        ("/api/instances?page=-1", "page"),
        ("/api/instances?page_size=0", "page_size"),
        ("/api/instances?page_size=501", "page_size"),
        ("/api/instances?colour=red", "colour"),
    ] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(r.error_field().as_deref(), Some(field), "{uri}");
    }
}

#[tokio::test]
async fn instance_images_are_png() {
    let app = app();
    let ds = fixture().test_data();
    let inst = &ds.dataset.instances[3];
    let r = get(&app, &format!("/api/instances/{}/image", inst.id)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[header::CONTENT_TYPE], "image/png");
    assert_eq!(r.body, encode_png(&inst.image));
    let img = decode_png(&r.body).unwrap();
    assert_eq!(img.size, inst.image.size);
    assert!(img.data.iter().zip(&inst.image.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));

    assert_eq!(get(&app, "/api/instances/999999/image").await.status, StatusCode::NOT_FOUND);
    let bad = get(&app, "/api/instances/abc/image").await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.error_field().as_deref(), Some("id"));
}

#[tokio::test]
async fn predictions_match_the_library() {
    let app = app();
    let f = fixture();
    let model = clickhere::checkpoint::load(&f.path("model.ckpt")).unwrap();
    let ds = f.test_data();
    for inst in ds.dataset.instances.iter().take(10) {
        let req = json!({
            "instance_id": inst.id, "x": inst.x, "y": inst.y,
            "keypoint": inst.keypoint, "object": inst.object,
        });
        let r = post(&app, req.to_string()).await;
        assert_eq!(r.status, StatusCode::OK);
        assert!(r.headers["x-latency-ms"].to_str().unwrap().parse::<f64>().unwrap() >= 0.0);
        let got: PredictResponse = serde_json::from_slice(&r.body).unwrap();
        let p = model
            .predict_click(&inst.image.to_tensor(), inst.x, inst.y, inst.keypoint, inst.object)
            .unwrap();
        assert_eq!(got, response_from(&model, &p));
        for (a, b) in got.probabilities.azimuth.iter().zip(&p.probabilities[0]) {
            assert_eq!(*a, wire(*b));
        }
        let wm = got.weight_map.unwrap();
        let sum: f64 = wm.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-7);
    }
}

#[tokio::test]
async fn inline_images_match_stored_instances() {
    let app = app();
    let ds = fixture().test_data();
    let inst = &ds.dataset.instances[5];
    let b64 = |bytes: Vec<u8>| base64::engine::general_purpose::STANDARD.encode(bytes);
    let base = json!({"x": inst.x, "y": inst.y, "keypoint": inst.keypoint, "object": inst.object});
    let with = |extra: Value| {
        let mut v = base.clone();
        v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        v.to_string()
    };
    let by_id = post(&app, with(json!({"instance_id": inst.id}))).await;
    let raw = post(&app, with(json!({"image": {"format": "f32", "data": b64(image_to_bytes(&inst.image))}}))).await;
    assert_eq!(raw.status, StatusCode::OK);
    assert_eq!(raw.body, by_id.body);
    let png = post(&app, with(json!({"image": {"format": "png", "data": b64(encode_png(&inst.image))}}))).await;
    assert_eq!(png.status, StatusCode::OK);
    assert_eq!(png.json()["variant"], "ch_full");
}

#[tokio::test]
async fn predict_errors_name_the_field() {
    let app = app();
    let ok = json!({"instance_id": 0, "x": 1, "y": 1, "keypoint": 0, "object": 0});
    let patch = |k: &str, v: Value| {
        let mut o = ok.clone();
        o[k] = v;
        o.to_string()
    };
    let cases = [
        (patch("x", json!(16)), "x"),
        (patch("y", json!(-1)), "y"),
        (patch("x", json!("left")), "x"),
        (patch("object", json!(3)), "object"),
        (patch("keypoint", json!(40)), "keypoint"),
        (patch("colour", json!(1)), "colour"),
        (patch("image", json!({"format": "f32", "data": "!!"})), "instance_id"),
        (
            json!({"image": {"format": "f32", "data": "!!"}, "x": 1, "y": 1, "keypoint": 0, "object": 0}).to_string(),
            "image.data",
        ),
        (
            json!({"image": {"format": "bmp", "data": ""}, "x": 1, "y": 1, "keypoint": 0, "object": 0}).to_string(),
            "image.format",
        ),
        (
            json!({"image": {"format": "f32", "data": "AAAA"}, "x": 1, "y": 1, "keypoint": 0, "object": 0}).to_string(),
            "image.data",
        ),
        ("{not json".to_string(), "body"),
    ];
    for (body, field) in cases {
        let r = post(&app, body.clone()).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(r.error_field().as_deref(), Some(field), "{body}: {}", String::from_utf8_lossy(&r.body));
    }
    let missing = post(&app, json!({"instance_id": 0, "x": 1, "keypoint": 0, "object": 0}).to_string()).await;
    assert_eq!(missing.status, StatusCode::BAD_REQUEST);
    let unknown = post(&app, patch("instance_id", json!(999_999))).await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_get_identical_bodies() {
    let app = app();
    let body = json!({"instance_id": 2, "x": 4, "y": 9, "keypoint": 1, "object": 1}).to_string();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { post(&app, body).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let r = t.await.unwrap();
        assert_eq!(r.status, StatusCode::OK);
        bodies.push(r.body);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn static_files_are_served_alongside_the_api() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>viewer</html>").unwrap();
    let loaded = load(&f.path("model.ckpt"), &f.path("data/test")).unwrap();
    let app = router(AppState::ready(loaded), Some(dir.path().to_path_buf()));
    let r = get(&app, "/index.html").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, b"<html>viewer</html>");
    assert_eq!(get(&app, "/healthz").await.status, StatusCode::OK);
    assert_eq!(get(&app, "/missing.js").await.status, StatusCode::NOT_FOUND);
}

#[test]
fn loading_rejects_mismatched_data() {
    let f = fixture();
    let other = tempfile::tempdir().unwrap();
    let cfg = clickhere::config::ProjectConfig::from_toml_str(
        common::SMALL,
        &[
            "data.synthetic.image_size=24".into(),
            "data.realish.image_size=24".into(),
            "data.test.image_size=24".into(),
            "model.image_size=24".into(),
        ],
    )
    .unwrap();
    clickhere::pipeline::gen_data(&cfg, other.path(), &["test".into()]).unwrap();
    assert!(load(&f.path("model.ckpt"), &other.path().join("test")).is_err());
    assert!(load(&f.path("nope.ckpt"), &f.path("data/test")).is_err());
}
