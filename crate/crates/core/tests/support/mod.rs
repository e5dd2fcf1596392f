//! Minimal HTTP/1.1 server for exercising the remote fetcher.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

pub struct Request {
    pub path: String,
    pub query: HashMap<String, String>,
    pub headers: HashMap<String, String>,
}

pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Response {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: body.into(),
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

pub struct MockServer {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&Request, usize) -> Response + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handler = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    continue;
                }
                let mut headers = HashMap::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = line.trim_end().split_once(':') {
                        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_owned());
                    }
                }
                let target = request_line
                    .split_whitespace()
                    .nth(1)
                    .unwrap_or("/")
                    .to_owned();
                let (path, query) = target.split_once('?').unwrap_or((&target, ""));
                let query = query
                    .split('&')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.to_owned(), v.replace("%3A", ":")))
                    .collect();
                let req = Request {
                    path: path.to_owned(),
                    query,
                    headers,
                };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let resp = handler(&req, n);
                let reason = match resp.status {
                    200 => "OK",
                    404 => "Not Found",
                    _ => "Status",
                };
                let mut out = format!(
                    "HTTP/1.1 {} {}\r\nContent-Length: {}\r\nConnection: close\r\n",
                    resp.status,
                    reason,
                    resp.body.len()
                );
                for (k, v) in &resp.headers {
                    out.push_str(&format!("{k}: {v}\r\n"));
                }
                out.push_str("\r\n");
                out.push_str(&resp.body);
                let _ = stream.write_all(out.as_bytes());
                let _ = stream.flush();
            }
        });
        Self { base_url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// One commit object in the GitHub REST shape.
pub fn api_commit(index: usize, date: &str, parents: usize) -> serde_json::Value {
    let parent_list: Vec<_> = (0..parents)
        .map(|p| serde_json::json!({ "sha": format!("{:040x}", 0xabc000 + p) }))
        .collect();
    serde_json::json!({
        "sha": format!("{:040x}", index + 1),
        "commit": {
            "author": { "name": "Dev", "email": format!("dev{}@example.org", index % 3), "date": date },
            "committer": { "name": "Dev", "email": "ci@example.org", "date": date }
        },
        "parents": parent_list
    })
}

/// Serves `total` commits under `/repos/{repo}/commits`, paginated by the
/// request's `per_page`/`page` with `Link: rel="next"` headers.
pub fn github_like(repo: &'static str, total: usize, first_ts: i64) -> MockServer {
    MockServer::start(move |req, _| {
        if req.path != format!("/repos/{repo}/commits") {
            return Response::json(404, r#"{"message":"Not Found"}"#);
        }
        let per_page: usize = req
            .query
            .get("per_page")
            .and_then(|v| v.parse().ok())
            .unwrap_or(30);
        let page: usize = req
            .query
            .get("page")
            .and_then(|v| v.parse().ok())
            .unwrap_or(1);
        let start = (page - 1) * per_page;
        let end = (start + per_page).min(total);
        let items: Vec<_> = (start.min(end)..end)
            .map(|i| {
                let ts = first_ts + (total - 1 - i) as i64 * 3600;
                let date = chrono::DateTime::from_timestamp(ts, 0)
                    .unwrap()
                    .to_rfc3339();
                api_commit(i, &date, if i % 10 == 0 { 2 } else { 1 })
            })
            .collect();
        let mut resp = Response::json(200, serde_json::to_string(&items).unwrap());
        if end < total {
            resp = resp.header(
                "Link",
                format!(
                    "<http://x/repos/{repo}/commits?page={}>; rel=\"next\"",
                    page + 1
                ),
            );
        }
        resp
    })
}
