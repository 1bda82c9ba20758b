use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use monet::io::{decode_nrrd, encode_label_map, encode_prob_map, encode_scribbles, encode_volume};
use monet::model::MonetConfig;
use monet::session::PipelineConfig;
use monet::sim::{corrupt_segmentation, make_phantom, CorruptionSpec, PhantomSpec};
use monet::volume::{Dims, Label, LabelMap, ScribbleSet, Volume};
use monet_cli::service::{router, AppState, Created, Defaults, RefineResponse, ScribbleCounts, SessionInfo, SliceInfo};
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "monet-test-boundary";

fn defaults() -> Defaults {
    Defaults {
        config: PipelineConfig {
            monet: MonetConfig {
                patch_size: 3,
                scales: vec![1, 3],
                filters_per_scale: 4,
                fc_sizes: vec![8, 2],
                online_epochs: 5,
                ..MonetConfig::default()
            },
            ..PipelineConfig::default()
        },
        params: None,
        seed: 1,
    }
}

fn app() -> (Arc<AppState>, Router) {
    let state = AppState::new(defaults(), Duration::from_secs(60));
    (state.clone(), router(state))
}

struct Inputs {
    volume: Volume,
    gt: LabelMap,
    parts: Vec<(&'static str, Vec<u8>)>,
}

fn inputs() -> Inputs {
    let p = make_phantom(&PhantomSpec {
        dims: Dims::new(20, 18, 16).unwrap(),
        radius: (3.0, 4.0),
        seed: 0,
        ..PhantomSpec::default()
    })
    .unwrap();
    let c = corrupt_segmentation(&p.ground_truth, &CorruptionSpec { fp_blobs: 0, ..CorruptionSpec::calibrated(0) }).unwrap();
    let parts = vec![
        ("volume", encode_volume(&p.volume)),
        ("init_seg", encode_label_map(&c.seg)),
        ("init_prob", encode_prob_map(&c.prob)),
        ("gt", encode_label_map(&p.ground_truth)),
    ];
    Inputs {
        volume: p.volume,
        gt: p.ground_truth,
        parts,
    }
}

fn multipart(parts: &[(&str, Vec<u8>)]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.nrrd\"\r\nContent-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn create(app: &Router, parts: &[(&str, Vec<u8>)]) -> Created {
    let (status, _, body) = send(app, multipart(parts)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, json: &str) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(json.to_owned()))
        .unwrap()
}

fn error_of(body: &[u8]) -> String {
    let v: Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn create_validates_uploads() {
    let (_, app) = app();
    let inp = inputs();
    let (status, _, body) = send(&app, multipart(&inp.parts[..2])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(error_of(&body).contains("init_prob"));

    let mut broken = inp.parts.clone();
    broken[0].1.truncate(40);
    assert_eq!(send(&app, multipart(&broken)).await.0, StatusCode::BAD_REQUEST);

    let mut mismatched = inp.parts.clone();
    mismatched[1].1 = encode_label_map(&LabelMap::background(Dims::cube(4).unwrap()));
    assert_eq!(send(&app, multipart(&mismatched)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut extra = inp.parts.clone();
    extra.push(("surprise", vec![1]));
    assert_eq!(send(&app, multipart(&extra)).await.0, StatusCode::BAD_REQUEST);

    let created = create(&app, &inp.parts).await;
    assert_eq!(created.dims, [20, 18, 16]);
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let (_, app) = app();
    for req in [
        get("/sessions/nope"),
        get("/sessions/nope/slice?axis=z&index=0&layer=image"),
        get("/sessions/nope/result"),
        post_json("/sessions/nope/refine", "{}"),
        Request::delete("/sessions/nope").body(Body::empty()).unwrap(),
    ] {
        assert_eq!(send(&app, req).await.0, StatusCode::NOT_FOUND);
    }
}

#[tokio::test]
async fn slices_match_the_volume() {
    let (_, app) = app();
    let inp = inputs();
    let id = create(&app, &inp.parts).await.id;
    let d = inp.volume.dims();

    let (status, headers, body) = send(&app, get(&format!("/sessions/{id}/slice?axis=y&index=5&layer=image"))).await;
    assert_eq!(status, StatusCode::OK);
    let info: SliceInfo = serde_json::from_str(headers["x-slice-info"].to_str().unwrap()).unwrap();
    assert_eq!((info.width, info.rows, info.dtype.as_str()), (20, 16, "f32"));
    let plane: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(plane.len(), 20 * 16);
    for z in 0..d.nz {
        for x in 0..d.nx {
            assert_eq!(plane[z * d.nx + x], inp.volume.get(x, 5, z));
        }
    }

    let (_, headers, body) = send(&app, get(&format!("/sessions/{id}/slice?axis=x&index=3&layer=labels"))).await;
    let info: SliceInfo = serde_json::from_str(headers["x-slice-info"].to_str().unwrap()).unwrap();
    assert_eq!((info.width, info.rows, info.dtype.as_str()), (18, 16, "u8"));
    assert_eq!(body.len(), 18 * 16);

    for layer in ["result", "prob", "weights", "scribbles"] {
        let (status, _, body) = send(&app, get(&format!("/sessions/{id}/slice?axis=z&index=15&layer={layer}"))).await;
        assert_eq!(status, StatusCode::OK, "{layer}");
        assert!(body.len() == 20 * 18 || body.len() == 4 * 20 * 18, "{layer}");
    }

    let (status, _, _) = send(&app, get(&format!("/sessions/{id}/slice?axis=z&index=16&layer=image"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _, _) = send(&app, get(&format!("/sessions/{id}/slice?axis=w&index=0&layer=image"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn scribbles_accumulate_from_both_encodings() {
    let (_, app) = app();
    let inp = inputs();
    let id = create(&app, &inp.parts).await.id;
    let uri = format!("/sessions/{id}/scribbles");

    let (status, _, body) =
        send(&app, post_json(&uri, r#"{"class":"foreground","voxels":[[1,1,1],[2,1,1],[3,1,1]]}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let c: ScribbleCounts = serde_json::from_slice(&body).unwrap();
    assert_eq!((c.foreground, c.background, c.total), (3, 0, 3));

    let mut bin = ScribbleSet::new(inp.volume.dims());
    bin.add_coord((3, 1, 1), Label::Background).unwrap();
    bin.add_coord((0, 0, 0), Label::Background).unwrap();
    let req = Request::post(&uri)
        .header("content-type", "application/octet-stream")
        .body(Body::from(encode_scribbles(&bin)))
        .unwrap();
    let c: ScribbleCounts = serde_json::from_slice(&send(&app, req).await.2).unwrap();
    assert_eq!((c.foreground, c.background), (2, 2));

    let (_, _, body) = send(&app, post_json(&uri, r#"{"class":"erase","voxels":[[1,1,1]]}"#)).await;
    let c: ScribbleCounts = serde_json::from_slice(&body).unwrap();
    assert_eq!(c.total, 3);

    // The scribble layer shows both classes.
    let (_, _, plane) = send(&app, get(&format!("/sessions/{id}/slice?axis=z&index=1&layer=scribbles"))).await;
    assert_eq!(plane[20 + 2], 1);
    assert_eq!(plane[20 + 3], 2);

    assert_eq!(send(&app, post_json(&uri, "{not json")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        send(&app, post_json(&uri, r#"{"class":"foreground","voxels":[[20,0,0]]}"#)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let wrong = encode_scribbles(&ScribbleSet::new(Dims::cube(3).unwrap()));
    let req = Request::post(&uri).body(Body::from(wrong)).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let req = Request::post(&uri).body(Body::from(&b"SCRB"[..])).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn refine_result_reports_and_delete() {
    let (_, app) = app();
    let inp = inputs();
    let id = create(&app, &inp.parts).await.id;
    send(&app, post_json(&format!("/sessions/{id}/scribbles"), r#"{"class":"background","voxels":[[0,0,0]]}"#)).await;

    let refine = format!("/sessions/{id}/refine");
    let (status, _, body) = send(&app, post_json(&refine, r#"{"epochs": 3, "tau": 0.2}"#)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let r: RefineResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.round, 1);
    assert_eq!(r.scribble_voxels, 1);
    assert!(r.dice.is_some() && r.timings.train > 0.0);

    let req = Request::post(&refine).body(Body::empty()).unwrap();
    let r: RefineResponse = serde_json::from_slice(&send(&app, req).await.2).unwrap();
    assert_eq!(r.round, 2);

    assert_eq!(send(&app, post_json(&refine, r#"{"bogus": 1}"#)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, post_json(&refine, r#"{"zeta": 2.0}"#)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, headers, body) = send(&app, get(&format!("/sessions/{id}/result"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["x-round"], "2");
    let img = decode_nrrd(&body).unwrap();
    assert_eq!(img.header.dims, inp.gt.dims());

    let (_, _, body) = send(&app, get(&format!("/sessions/{id}/reports"))).await;
    let rows = monet::metrics::parse_reports(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.round).collect::<Vec<_>>(), vec![0, 1, 2]);

    let info: SessionInfo = serde_json::from_slice(&send(&app, get(&format!("/sessions/{id}"))).await.2).unwrap();
    assert_eq!((info.round, info.status.as_str(), info.background_scribbles), (2, "idle", 1));

    let del = || Request::delete(format!("/sessions/{id}")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, del()).await.0, StatusCode::NO_CONTENT);
    assert_eq!(send(&app, del()).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn nothing_to_learn_is_422() {
    let (_, app) = app();
    let inp = inputs();
    let mut parts = inp.parts.clone();
    let half = monet::volume::ProbMap::uniform(inp.volume.dims(), 0.5).unwrap();
    parts[2].1 = encode_prob_map(&half);
    let id = create(&app, &parts).await.id;
    let (status, _, body) = send(&app, post_json(&format!("/sessions/{id}/refine"), "{}")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(error_of(&body).contains("nothing to learn"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_refines_on_one_session_conflict() {
    let (_, app) = app();
    let inp = inputs();
    let id = create(&app, &inp.parts).await.id;
    let uri = format!("/sessions/{id}/refine");
    let slow = r#"{"epochs": 60}"#;
    let (a, b) = tokio::join!(send(&app, post_json(&uri, slow)), send(&app, post_json(&uri, slow)));
    let mut codes = [a.0, b.0];
    codes.sort();
    assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT]);
    let info: SessionInfo = serde_json::from_slice(&send(&app, get(&format!("/sessions/{id}"))).await.2).unwrap();
    assert_eq!(info.round, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_isolated() {
    let (_, app) = app();
    let inp = inputs();
    let fetch = |id: String| {
        let app = app.clone();
        async move { send(&app, get(&format!("/sessions/{id}/result"))).await.2 }
    };
    let refine = |id: String| {
        let app = app.clone();
        async move {
            let (s, _, _) = send(&app, post_json(&format!("/sessions/{id}/refine"), "{}")).await;
            assert_eq!(s, StatusCode::OK);
        }
    };
    let serial = create(&app, &inp.parts).await.id;
    refine(serial.clone()).await;
    let expected = fetch(serial).await;

    let a = create(&app, &inp.parts).await.id;
    let b = create(&app, &inp.parts).await.id;
    tokio::join!(refine(a.clone()), refine(b.clone()));
    assert_eq!(fetch(a).await, expected);
    assert_eq!(fetch(b).await, expected);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let (state, app) = app();
    let inp = inputs();
    create(&app, &inp.parts).await;
    assert_eq!(state.expire(Instant::now()), 0);
    assert_eq!(state.expire(Instant::now() + Duration::from_secs(61)), 1);
    assert!(state.is_empty());
}
