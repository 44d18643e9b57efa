//! Prediction oracles: anything that can label an image.
//!
//! Trained checkpoints, closures in tests, and remote suspect models all sit
//! behind [`PredictionOracle`], so evaluation and ownership verification are
//! written once against the trait.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use crate::data::ImageU8;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("oracle does not expose class probabilities")]
    SoftUnsupported,
    #[error("predicted class {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("transport failure: {0}")]
    Transport(#[from] std::io::Error),
    #[error("unsupported oracle url `{0}` (expected http://host:port/path)")]
    BadUrl(String),
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
}

/// A classifier over RGB images. `predict` must be deterministic for a given
/// image; ties in the underlying scores resolve to the lowest class index.
pub trait PredictionOracle {
    fn num_classes(&self) -> usize;

    fn predict(&self, image: &ImageU8) -> Result<usize, OracleError>;

    /// Class probabilities, for oracles that expose them. Hard-label oracles
    /// return [`OracleError::SoftUnsupported`].
    fn predict_soft(&self, _image: &ImageU8) -> Result<Vec<f32>, OracleError> {
        Err(OracleError::SoftUnsupported)
    }
}

/// Closure-backed oracle, mostly for tests and fixtures.
pub struct FnOracle<F: Fn(&ImageU8) -> usize> {
    num_classes: usize,
    f: F,
}

impl<F: Fn(&ImageU8) -> usize> FnOracle<F> {
    pub fn new(num_classes: usize, f: F) -> Self {
        Self { num_classes, f }
    }
}

impl<F: Fn(&ImageU8) -> usize> PredictionOracle for FnOracle<F> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, image: &ImageU8) -> Result<usize, OracleError> {
        let label = (self.f)(image);
        if label >= self.num_classes {
            return Err(OracleError::LabelOutOfRange { label, num_classes: self.num_classes });
        }
        Ok(label)
    }
}

/// Remote hard-label oracle speaking a one-shot HTTP protocol: POST the PNG
/// bytes of the query image, receive the predicted class index as ASCII
/// decimal in the response body.
pub struct HttpOracle {
    host: String,
    port: u16,
    path: String,
    num_classes: usize,
    timeout: Duration,
}

impl HttpOracle {
    pub fn new(url: &str, num_classes: usize) -> Result<Self, OracleError> {
        let rest = url
            .strip_prefix("http://")
            .ok_or_else(|| OracleError::BadUrl(url.to_string()))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], rest[i..].to_string()),
            None => (rest, "/".to_string()),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => {
                let port: u16 = p.parse().map_err(|_| OracleError::BadUrl(url.to_string()))?;
                (h.to_string(), port)
            }
            None => (authority.to_string(), 80),
        };
        if host.is_empty() {
            return Err(OracleError::BadUrl(url.to_string()));
        }
        Ok(Self { host, port, path, num_classes, timeout: Duration::from_secs(10) })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn roundtrip(&self, body: &[u8]) -> Result<String, OracleError> {
        let mut stream = TcpStream::connect((self.host.as_str(), self.port))?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        let header = format!(
            "POST {} HTTP/1.1\r\nHost: {}:{}\r\nContent-Type: image/png\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            self.path,
            self.host,
            self.port,
            body.len()
        );
        stream.write_all(header.as_bytes())?;
        stream.write_all(body)?;
        stream.flush()?;
        let mut response = Vec::new();
        stream.read_to_end(&mut response)?;
        let text = String::from_utf8_lossy(&response);
        let (head, response_body) = text
            .split_once("\r\n\r\n")
            .ok_or_else(|| OracleError::Protocol("response without header terminator".into()))?;
        let status = head.lines().next().unwrap_or_default();
        let ok = status.starts_with("HTTP/1.1 200") || status.starts_with("HTTP/1.0 200");
        if !ok {
            return Err(OracleError::Protocol(format!("status line `{status}`")));
        }
        Ok(response_body.trim().to_string())
    }
}

impl PredictionOracle for HttpOracle {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, image: &ImageU8) -> Result<usize, OracleError> {
        let body = self.roundtrip(&image.to_png_bytes())?;
        let label: usize = body
            .parse()
            .map_err(|_| OracleError::Protocol(format!("body `{body}` is not a class index")))?;
        if label >= self.num_classes {
            return Err(OracleError::LabelOutOfRange { label, num_classes: self.num_classes });
        }
        Ok(label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn fn_oracle_validates_range() {
        let oracle = FnOracle::new(3, |_| 7usize);
        let img = ImageU8::filled(8, 8, [0, 0, 0]);
        assert!(matches!(oracle.predict(&img), Err(OracleError::LabelOutOfRange { .. })));
        assert!(matches!(oracle.predict_soft(&img), Err(OracleError::SoftUnsupported)));
    }

    #[test]
    fn url_parsing() {
        assert!(HttpOracle::new("https://x/y", 2).is_err());
        assert!(HttpOracle::new("http://:80/", 2).is_err());
        let o = HttpOracle::new("http://127.0.0.1:8080", 2).unwrap();
        assert_eq!(o.path, "/");
        let o = HttpOracle::new("http://example.test/predict", 2).unwrap();
        assert_eq!(o.port, 80);
        assert_eq!(o.path, "/predict");
    }

    /// One-request loopback server that answers with a fixed body.
    fn serve_once(status: &'static str, body: &'static str) -> (std::thread::JoinHandle<Vec<u8>>, u16) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 1 << 16];
            let mut got = Vec::new();
            // read until the full declared body has arrived
            loop {
                let n = stream.read(&mut buf).unwrap();
                got.extend_from_slice(&buf[..n]);
                if let Some(pos) = got.windows(4).position(|w| w == b"\r\n\r\n") {
                    let head = String::from_utf8_lossy(&got[..pos]).to_string();
                    let len: usize = head
                        .lines()
                        .find_map(|l| l.strip_prefix("Content-Length: "))
                        .unwrap()
                        .parse()
                        .unwrap();
                    if got.len() >= pos + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let reply = format!("HTTP/1.1 {status}\r\nContent-Length: {}\r\n\r\n{body}", body.len());
            stream.write_all(reply.as_bytes()).unwrap();
            got
        });
        (handle, port)
    }

    #[test]
    fn http_oracle_roundtrip() {
        let (server, port) = serve_once("200 OK", "2");
        let oracle = HttpOracle::new(&format!("http://127.0.0.1:{port}/predict"), 5).unwrap();
        let img = ImageU8::filled(8, 8, [1, 2, 3]);
        assert_eq!(oracle.predict(&img).unwrap(), 2);
        let request = server.join().unwrap();
        let text = String::from_utf8_lossy(&request);
        assert!(text.starts_with("POST /predict HTTP/1.1\r\n"));
        // body is the PNG encoding of the query image
        let body_at = request.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
        assert_eq!(&request[body_at..], img.to_png_bytes().as_slice());
    }

    #[test]
    fn http_oracle_rejects_bad_replies() {
        let img = ImageU8::filled(8, 8, [0, 0, 0]);
        let (_s, port) = serve_once("500 Oops", "boom");
        let oracle = HttpOracle::new(&format!("http://127.0.0.1:{port}/"), 5).unwrap();
        assert!(matches!(oracle.predict(&img), Err(OracleError::Protocol(_))));

        let (_s, port) = serve_once("200 OK", "not-a-number");
        let oracle = HttpOracle::new(&format!("http://127.0.0.1:{port}/"), 5).unwrap();
        assert!(matches!(oracle.predict(&img), Err(OracleError::Protocol(_))));

        let (_s, port) = serve_once("200 OK", "9");
        let oracle = HttpOracle::new(&format!("http://127.0.0.1:{port}/"), 5).unwrap();
        assert!(matches!(oracle.predict(&img), Err(OracleError::LabelOutOfRange { .. })));
    }
}
