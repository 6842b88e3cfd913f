#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rigdepth::synthetic::{compact_spec, SynthSpec};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_rigdepth"))
}

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(bin())
        .args(args)
        .env_remove("RIGDEPTH_THREADS")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs and panics with stderr unless the exit code is 0.
pub fn run_ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let o = run(args);
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn write_spec(path: &Path, spec: &SynthSpec) {
    std::fs::write(path, spec.to_json().unwrap()).unwrap();
}

/// Renders `spec` through `synth` into `dir`.
pub fn synth_spec(dir: &Path, spec: &SynthSpec) {
    let spec_path = dir.with_extension("spec.json");
    write_spec(&spec_path, spec);
    run_ok(["synth", "--spec", p(&spec_path), "--out", p(dir)]);
}

/// Three cameras at 16x12.
pub fn compact_sample(dir: &Path) {
    synth_spec(dir, &compact_spec(3, 16, 12).unwrap());
}

/// Every file under `dir` by relative path.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub struct Ply {
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub header_len: usize,
}

/// Minimal reader for binary little-endian PLY with one vertex element of
/// float x, y, z and uchar red, green, blue.
pub fn read_ply(path: &Path) -> Ply {
    let bytes = std::fs::read(path).unwrap();
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .expect("end_header")
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).unwrap();
    let mut lines = header.lines();
    assert_eq!(lines.next(), Some("ply"));
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", fmt, _] => assert_eq!(*fmt, "binary_little_endian"),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().unwrap()),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let expected: Vec<(String, String)> = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    assert_eq!(props, expected);
    let n = count.expect("vertex count");
    let body = &bytes[end..];
    assert_eq!(body.len(), n * 15, "body size");
    let mut ply = Ply {
        points: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        header_len: end,
    };
    for rec in body.chunks_exact(15) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        ply.points.push([f(0), f(1), f(2)]);
        ply.colors.push([rec[12], rec[13], rec[14]]);
    }
    ply
}

/// Least-squares plane through `points`; returns the RMS of the orthogonal
/// residuals. Solves for the normal as the eigenvector of the scatter matrix
/// with the smallest eigenvalue by inverse power iteration.
pub fn plane_fit_rms(points: &[[f32; 3]]) -> f64 {
    let n = points.len() as f64;
    let mut c = [0.0f64; 3];
    for q in points {
        for k in 0..3 {
            c[k] += q[k] as f64 / n;
        }
    }
    let mut s = [[0.0f64; 3]; 3];
    for q in points {
        let d = [q[0] as f64 - c[0], q[1] as f64 - c[1], q[2] as f64 - c[2]];
        for a in 0..3 {
            for b in 0..3 {
                s[a][b] += d[a] * d[b];
            }
        }
    }
    // Inverse iteration with a tiny shift keeps the matrix invertible for
    // exactly planar input.
    let trace = s[0][0] + s[1][1] + s[2][2];
    for (k, row) in s.iter_mut().enumerate() {
        row[k] += 1e-12 * trace;
    }
    let mut v = [0.3, 1.0, 0.2];
    for _ in 0..100 {
        let w = solve3(&s, &v);
        let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        v = [w[0] / norm, w[1] / norm, w[2] / norm];
    }
    let sum: f64 = points
        .iter()
        .map(|q| {
            let r = (q[0] as f64 - c[0]) * v[0] + (q[1] as f64 - c[1]) * v[1] + (q[2] as f64 - c[2]) * v[2];
            r * r
        })
        .sum();
    (sum / n).sqrt()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cramer's rule.
fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> [f64; 3] {
    let d = det3(m);
    std::array::from_fn(|k| {
        let mut mk = *m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        det3(&mk) / d
    })
}

/// The `Avg` row's Abs Rel of a metrics CSV.
pub fn avg_abs_rel(csv_text: &str) -> f64 {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[col("camera")] == "Avg" {
            return rec[col("abs_rel")].parse().unwrap();
        }
    }
    panic!("no Avg row");
}
