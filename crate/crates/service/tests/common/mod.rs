#![allow(dead_code)]

use std::io::Cursor;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use image::{ImageFormat, Rgb, RgbImage};
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture_image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8]))
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

pub async fn send(router: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

pub async fn post_json(router: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (status, bytes) = send(router, Method::POST, uri, serde_json::to_vec(&body).unwrap()).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

pub async fn get_json(router: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = send(router, Method::GET, uri, Vec::new()).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

pub async fn upload(router: &Router, bytes: Vec<u8>) -> (StatusCode, Value) {
    let (status, body) = send(router, Method::POST, "/v1/images", bytes).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

/// Drops every `duration_ms` so bodies can be compared across runs.
pub fn strip_durations(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("duration_ms");
            map.values_mut().for_each(strip_durations);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_durations),
        _ => {}
    }
}
