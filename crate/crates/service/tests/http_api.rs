use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use meltpool_core::annotate::{finalize_mask, generate_candidates, wand_select, BrushStroke, SeedEllipse};
use meltpool_core::raster::load_mask;
use meltpool_core::{BinaryMask, Raster};
use meltpool_service::{router, AppState, CandidateList, MaskState, Saved, SessionCreated};
use serde_json::{json, Value};
use tower::ServiceExt;

fn disk_image() -> Raster {
    Raster::from_fn_gray(96, 96, |x, y| {
        let (dx, dy) = (x as f64 - 48.0, y as f64 - 50.0);
        if dx * dx + dy * dy <= 24.0 * 24.0 {
            0.8
        } else {
            0.2
        }
    })
    .unwrap()
}

struct Client {
    app: Router,
}

impl Client {
    fn new() -> Self {
        Self {
            app: router(AppState::default()),
        }
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, body)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Vec<u8>) {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn post_json(&self, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
        let req = Request::post(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        self.send(req).await
    }

    async fn post_empty(&self, uri: &str) -> (StatusCode, Vec<u8>) {
        self.send(Request::post(uri).body(Body::empty()).unwrap()).await
    }

    async fn upload(&self, bytes: Vec<u8>) -> (StatusCode, Vec<u8>) {
        let req = Request::post("/sessions")
            .header("content-type", "image/png")
            .body(Body::from(bytes))
            .unwrap();
        self.send(req).await
    }

    async fn session(&self, image: &Raster) -> String {
        let (status, body) = self.upload(image.to_png_bytes().unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_slice::<SessionCreated>(&body).unwrap().id
    }
}

fn seed_json() -> Value {
    json!({"cx": 48.0, "cy": 50.0, "a": 6.0, "b": 6.0, "rot": 0.0})
}

fn strokes() -> Vec<BrushStroke> {
    vec![BrushStroke {
        points: vec![[5.0, 5.0], [12.0, 5.0]],
        radius: 2.0,
    }]
}

#[tokio::test]
async fn upload_round_trips_and_ids_are_distinct() {
    let c = Client::new();
    let image = disk_image();
    let a = c.session(&image).await;
    let b = c.session(&image).await;
    assert_ne!(a, b);

    let (status, body) = c.get(&format!("/sessions/{a}/image")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(Raster::from_bytes(&body).unwrap(), image);
}

#[tokio::test]
async fn bad_uploads_and_unknown_sessions() {
    let c = Client::new();
    let (status, _) = c.upload(b"definitely not an image".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    for uri in ["/sessions/nope/image", "/sessions/nope/mask"] {
        assert_eq!(c.get(uri).await.0, StatusCode::NOT_FOUND);
    }
    assert_eq!(c.post_empty("/sessions/nope/undo").await.0, StatusCode::NOT_FOUND);
    assert_eq!(c.post_json("/sessions/nope/mgac", seed_json()).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn mgac_returns_seven_cached_candidates() {
    let c = Client::new();
    let id = c.session(&disk_image()).await;

    let (status, first) = c.post_json(&format!("/sessions/{id}/mgac"), seed_json()).await;
    assert_eq!(status, StatusCode::OK);
    let list: CandidateList = serde_json::from_slice(&first).unwrap();
    assert_eq!(list.candidates.len(), 7);

    let direct = generate_candidates(&disk_image(), &SeedEllipse::circle(48.0, 50.0, 6.0)).unwrap();
    for (info, mask) in list.candidates.iter().zip(&direct.candidates) {
        let (status, png) = c.get(&info.url).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&BinaryMask::from_png_bytes(&png).unwrap(), mask);
        assert_eq!(info.area, mask.count());
    }
    let (status, png) = c.get(&list.preview_url).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(BinaryMask::from_png_bytes(&png).unwrap(), direct.preview);

    let (status, again) = c.post_json(&format!("/sessions/{id}/mgac"), seed_json()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, again);

    let outside = json!({"cx": -5.0, "cy": -5.0, "a": 3.0, "b": 3.0});
    assert_eq!(
        c.post_json(&format!("/sessions/{id}/mgac"), outside).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let degenerate = json!({"cx": 40.0, "cy": 40.0, "a": 0.0, "b": 3.0});
    assert_eq!(
        c.post_json(&format!("/sessions/{id}/mgac"), degenerate).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn select_then_save_matches_library() {
    let c = Client::new();
    let id = c.session(&disk_image()).await;
    assert_eq!(
        c.post_empty(&format!("/sessions/{id}/candidates/3/select")).await.0,
        StatusCode::CONFLICT
    );
    c.post_json(&format!("/sessions/{id}/mgac"), seed_json()).await;
    for bad in ["7", "-1", "x"] {
        assert_eq!(
            c.post_empty(&format!("/sessions/{id}/candidates/{bad}/select")).await.0,
            StatusCode::UNPROCESSABLE_ENTITY
        );
    }
    assert_eq!(c.get(&format!("/sessions/{id}/candidates/9")).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = c.post_empty(&format!("/sessions/{id}/candidates/3/select")).await;
    assert_eq!(status, StatusCode::OK);
    let state: MaskState = serde_json::from_slice(&body).unwrap();
    assert_eq!(state.undo_depth, 1);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mask.png");
    let (status, body) = c.post_json(&format!("/sessions/{id}/save"), json!({"out_path": out})).await;
    assert_eq!(status, StatusCode::OK);
    let saved: Saved = serde_json::from_slice(&body).unwrap();
    assert_eq!(saved.path, out);

    let direct = generate_candidates(&disk_image(), &SeedEllipse::circle(48.0, 50.0, 6.0)).unwrap();
    let expected = finalize_mask(&direct.candidates[3]).unwrap();
    assert_eq!(load_mask(&out).unwrap(), expected);
    assert_eq!(std::fs::read(&out).unwrap(), expected.to_png_bytes().unwrap());
}

#[tokio::test]
async fn wand_then_undo_restores_mask() {
    let c = Client::new();
    let image = disk_image();
    let id = c.session(&image).await;
    c.post_json(&format!("/sessions/{id}/mgac"), seed_json()).await;
    c.post_empty(&format!("/sessions/{id}/candidates/0/select")).await;
    let (_, before) = c.get(&format!("/sessions/{id}/mask")).await;

    let body = json!({"strokes": strokes(), "tolerance": 0.1});
    let (status, state) = c.post_json(&format!("/sessions/{id}/wand"), body).await;
    assert_eq!(status, StatusCode::OK);
    let state: MaskState = serde_json::from_slice(&state).unwrap();
    assert_eq!(state.undo_depth, 2);

    let (_, after) = c.get(&format!("/sessions/{id}/mask")).await;
    let prev = BinaryMask::from_png_bytes(&before).unwrap();
    let expected = wand_select(&image, &strokes(), 0.1, Some(&prev)).unwrap();
    assert_eq!(BinaryMask::from_png_bytes(&after).unwrap(), expected);

    let (status, _) = c.post_empty(&format!("/sessions/{id}/undo")).await;
    assert_eq!(status, StatusCode::OK);
    let (_, undone) = c.get(&format!("/sessions/{id}/mask")).await;
    assert_eq!(undone, before);

    let bad = json!({"strokes": [{"points": [], "radius": 2.0}], "tolerance": 0.1});
    assert_eq!(
        c.post_json(&format!("/sessions/{id}/wand"), bad).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let negative = json!({"strokes": strokes(), "tolerance": -1.0});
    assert_eq!(
        c.post_json(&format!("/sessions/{id}/wand"), negative).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn empty_mask_and_empty_stack_conflict() {
    let c = Client::new();
    let id = c.session(&disk_image()).await;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.png");
    assert_eq!(
        c.post_json(&format!("/sessions/{id}/save"), json!({"out_path": out})).await.0,
        StatusCode::CONFLICT
    );
    assert!(!out.exists());
    assert_eq!(c.post_empty(&format!("/sessions/{id}/undo")).await.0, StatusCode::CONFLICT);

    let (status, body) = c.get(&format!("/sessions/{id}/mask")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(BinaryMask::from_png_bytes(&body).unwrap().is_empty());
}

async fn replay(c: &Client, out: &std::path::Path) -> Vec<u8> {
    let id = c.session(&disk_image()).await;
    c.post_json(&format!("/sessions/{id}/mgac"), seed_json()).await;
    c.post_empty(&format!("/sessions/{id}/candidates/2/select")).await;
    c.post_json(&format!("/sessions/{id}/wand"), json!({"strokes": strokes(), "tolerance": 0.05}))
        .await;
    let more = vec![BrushStroke {
        points: vec![[80.0, 90.0]],
        radius: 3.0,
    }];
    c.post_json(&format!("/sessions/{id}/wand"), json!({"strokes": more, "tolerance": 0.05}))
        .await;
    c.post_empty(&format!("/sessions/{id}/undo")).await;
    let (status, _) = c.post_json(&format!("/sessions/{id}/save"), json!({"out_path": out})).await;
    assert_eq!(status, StatusCode::OK);
    std::fs::read(out).unwrap()
}

#[tokio::test]
async fn replaying_a_request_log_reproduces_the_mask() {
    let dir = tempfile::tempdir().unwrap();
    let a = replay(&Client::new(), &dir.path().join("a.png")).await;
    let c = Client::new();
    let (pb, pc) = (dir.path().join("b.png"), dir.path().join("c.png"));
    let (b, d) = tokio::join!(replay(&c, &pb), replay(&c, &pc));
    assert_eq!(a, b);
    assert_eq!(a, d);
}

#[tokio::test]
async fn expired_sessions_are_not_found() {
    let app = router(AppState::with_ttl(std::time::Duration::ZERO));
    let req = Request::post("/sessions")
        .body(Body::from(disk_image().to_png_bytes().unwrap()))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    let id = serde_json::from_slice::<SessionCreated>(&body).unwrap().id;
    let req = Request::get(format!("/sessions/{id}/image")).body(Body::empty()).unwrap();
    assert_eq!(app.oneshot(req).await.unwrap().status(), StatusCode::NOT_FOUND);
}
