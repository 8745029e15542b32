mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use blindeval::scoring::full_report;
use blindeval::{Board, RunIngest};
use blindeval_cli::server::{router, AppState, ErrorBody, HistoryResponse, LeaderboardResponse};
use common::*;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use tower::ServiceExt;

fn app(board: Board) -> axum::Router {
    router(Arc::new(AppState { board, token: Some(TOKEN.into()) }))
}

async fn call(app: &axum::Router, method: &str, uri: &str, auth: bool, body: Option<String>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if auth {
        req = req.header("authorization", format!("Bearer {TOKEN}"));
    }
    let req = req.header("content-type", "application/json").body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn parse<T: DeserializeOwned>(body: &str) -> T {
    serde_json::from_str(body).unwrap_or_else(|e| panic!("{e}: {body}"))
}

async fn post_run(app: &axum::Router, run: &RunIngest) -> (StatusCode, String) {
    call(app, "POST", "/api/v1/runs", true, Some(serde_json::to_string(run).unwrap())).await
}

async fn reference_board() -> axum::Router {
    let app = app(Board::in_memory());
    for (i, (team, tpr, tnr, _)) in REFERENCE_TASK1.iter().enumerate() {
        let (status, body) = post_run(&app, &fixture_run(team, &format!("{team}-1"), i as i64, *tpr, *tnr)).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
    }
    app
}

#[tokio::test]
async fn private_ranking_follows_reference_results() {
    let app = reference_board().await;
    let (status, body) = call(&app, "GET", "/api/v1/leaderboard?task=task1&view=private", true, None).await;
    assert_eq!(status, StatusCode::OK);
    let board: LeaderboardResponse = parse(&body);
    let order: Vec<&str> = board.entries.iter().map(|e| e.team_id.as_str()).collect();
    assert_eq!(order, ["ISP", "VIP", "ANO", "JAI", "DMF"]);
    let top = &board.entries[0];
    assert!((top.best_tpr - 0.79).abs() < 1e-12 && (top.best_tnr - 0.95).abs() < 1e-12);
    assert!((top.best_bac - 0.87).abs() < 1e-12);
    assert_eq!(top.rank, 1);
    assert!(top.per_source.contains_key("elevenlabs"));
}

#[tokio::test]
async fn public_view_never_leaks_names() {
    let app = reference_board().await;
    let mut bodies = Vec::new();
    bodies.push(call(&app, "GET", "/api/v1/leaderboard?task=1", false, None).await);
    bodies.push(call(&app, "GET", "/api/v1/teams/ISP/history?task=1", false, None).await);
    bodies.push(call(&app, "GET", "/api/v1/roc?team=ISP&task=1&view=public", false, None).await);
    for (status, body) in &bodies {
        assert_eq!(*status, StatusCode::OK, "{body}");
        for (id, _, display, _, _) in FIXTURE_SOURCES {
            assert!(!body.contains(display), "display name {display} leaked: {body}");
            assert!(!body.contains(&format!("\"{id}\"")), "source id {id} leaked");
        }
    }
    let board: LeaderboardResponse = parse(&bodies[0].1);
    assert!(board.entries.iter().all(|e| e.per_source.keys().all(|k| blindeval::AnonymizationMap::is_pseudonym(k))));
    // the private-only generated source must not appear under any key
    assert!(board.entries.iter().all(|e| e.per_source.len() == 2));
}

#[tokio::test]
async fn operator_endpoints_need_the_token() {
    let app = reference_board().await;
    let (status, body) = call(&app, "GET", "/api/v1/leaderboard?task=1&view=private", false, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(parse::<ErrorBody>(&body).error, "unauthorized");
    let run = serde_json::to_string(&fixture_run("NEW", "n1", 99, 0.5, 0.5)).unwrap();
    let (status, _) = call(&app, "POST", "/api/v1/runs", false, Some(run)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let open = router(Arc::new(AppState { board: Board::in_memory(), token: None }));
    let (status, _) = call(&open, "GET", "/api/v1/leaderboard?task=1&view=private", true, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn ingest_errors_map_to_statuses() {
    let app = reference_board().await;
    let (status, body) = post_run(&app, &fixture_run("ISP", "ISP-1", 50, 0.9, 0.9)).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    let (status, _) = post_run(&app, &fixture_run("ISP", "ISP-early", -5, 0.9, 0.9)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let mut leaky = fixture_run("LEAK", "leak-1", 1, 0.9, 0.9);
    leaky.public = leaky.private.clone();
    let (status, body) = post_run(&app, &leaky).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(parse::<ErrorBody>(&body).error, "invalid_report");
    let (status, _) = call(&app, "POST", "/api/v1/runs", true, Some("{not json".into())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", "/api/v1/teams/NOBODY/history?task=1", false, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/v1/roc?team=ISP&task=2", false, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/v1/leaderboard", false, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, body) = call(&app, "GET", "/api/v1/leaderboard?task=1&view=private", true, None).await;
    assert_eq!(parse::<LeaderboardResponse>(&body).entries.len(), 5);
}

#[tokio::test]
async fn history_tracks_improvement() {
    let app = app(Board::in_memory());
    post_run(&app, &fixture_run("ISP", "a", 0, 0.52, 0.52)).await;
    post_run(&app, &fixture_run("VIP", "b", 1, 0.6, 0.6)).await;
    post_run(&app, &fixture_run("ISP", "c", 2, 0.79, 0.95)).await;
    let (_, body) = call(&app, "GET", "/api/v1/teams/ISP/history?task=1&view=private", true, None).await;
    let h: HistoryResponse = parse(&body);
    let bacs: Vec<f64> = h.points.iter().map(|p| p.bac).collect();
    assert_eq!(bacs.len(), 2);
    assert!((bacs[0] - 0.52).abs() < 1e-12 && (bacs[1] - 0.87).abs() < 1e-12);
    assert!(h.points.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    let (_, body) = call(&app, "GET", "/api/v1/leaderboard?task=1&view=private", true, None).await;
    let entry = &parse::<LeaderboardResponse>(&body).entries[0];
    assert_eq!((entry.team_id.as_str(), entry.submission_count), ("ISP", 2));
    assert!((entry.best_bac - bacs[1]).abs() < 1e-15);
}

#[tokio::test]
async fn roc_marker_and_round_gate() {
    let app = reference_board().await;
    let (status, body) = call(&app, "GET", "/api/v1/roc?team=ISP&task=1&view=private", true, None).await;
    assert_eq!(status, StatusCode::OK);
    let roc: serde_json::Value = parse(&body);
    assert!((roc["operating_point"]["fpr"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert!((roc["operating_point"]["tpr"].as_f64().unwrap() - 0.79).abs() < 1e-12);
    let run = fixture_run("ISP", "ISP-1", 0, 0.79, 0.95);
    let expected = full_report(
        &common::decisions(&fixture_manifest(), &spread(&fixture_manifest(), 158, 380)),
        &fixture_manifest(),
        None,
    )
    .unwrap();
    assert_eq!(run.private.roc, expected.roc);
    assert_eq!(roc["curve"], serde_json::to_value(&expected.roc).unwrap());

    let (status, _) = call(&app, "POST", "/api/v1/round", true, Some("{\"active\": true}".into())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "GET", "/api/v1/roc?team=ISP&task=1", false, None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(parse::<ErrorBody>(&body).error, "roc_hidden");
    let (status, _) = call(&app, "GET", "/api/v1/roc?team=ISP&task=1&view=private", true, None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = call(&app, "GET", "/api/v1/health", false, None).await;
    let health: serde_json::Value = parse(&body);
    assert_eq!(health["round_active"], true);
    assert_eq!(health["runs"], 5);
}

#[tokio::test]
async fn restart_reproduces_views() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("board.jsonl");
    let first = app(Board::open(&log).unwrap());
    for (i, (team, tpr, tnr, _)) in REFERENCE_TASK1.iter().enumerate() {
        post_run(&first, &fixture_run(team, team, i as i64, *tpr, *tnr)).await;
    }
    let urls = [
        "/api/v1/leaderboard?task=1&view=private",
        "/api/v1/leaderboard?task=1&view=public",
        "/api/v1/teams/JAI/history?task=1&view=private",
        "/api/v1/roc?team=DMF&task=1&view=public",
    ];
    let mut before = Vec::new();
    for u in urls {
        before.push(call(&first, "GET", u, true, None).await);
    }
    drop(first);
    let second = app(Board::open(&log).unwrap());
    for (u, b) in urls.iter().zip(before) {
        assert_eq!(call(&second, "GET", u, true, None).await, b, "{u}");
    }
}
