//! Plain-text serialization of metric histories.
//!
//! The format is a versioned header followed by one block per snapshot. All
//! floating-point values are printed with 17 significant digits, so a
//! write/read cycle reproduces the history bit for bit.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::geometry::{EuclideanBackend, ManifoldBackend, SphereBackend, TorusBackend};
use crate::util::fmt17;

use super::MetricHistory;

const MAGIC: &str = "perelman-lab-history v1";

/// Write a history to any sink in the versioned text format.
pub fn export_history<W: Write>(h: &MetricHistory, out: &mut W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "dt {}", fmt17(h.dt))?;
    writeln!(out, "backward {}", u8::from(h.backward))?;
    writeln!(out, "snapshots {}", h.times.len())?;
    match &h.states[0] {
        ManifoldBackend::Euclidean(b) => {
            writeln!(
                out,
                "backend euclid {} {} {}",
                b.n,
                fmt17(b.half_width),
                b.quad_order
            )?;
            for t in &h.times {
                writeln!(out, "t {}", fmt17(*t))?;
            }
        }
        ManifoldBackend::Sphere(s) => {
            writeln!(out, "backend sphere {} {}", s.n, s.lat_res)?;
            for (t, state) in h.times.iter().zip(&h.states) {
                let ManifoldBackend::Sphere(s) = state else {
                    return Err(LabError::BackendMismatch("mixed history states".into()));
                };
                writeln!(out, "t {} r {}", fmt17(*t), fmt17(s.radius))?;
            }
        }
        ManifoldBackend::ConformalTorus(t0) => {
            let s = t0.shape();
            writeln!(
                out,
                "backend torus {} {} {} {}",
                s.nx,
                s.ny,
                fmt17(t0.lx),
                fmt17(t0.ly)
            )?;
            for (t, state) in h.times.iter().zip(&h.states) {
                let tor = state.expect_torus()?;
                writeln!(out, "t {}", fmt17(*t))?;
                for row in tor.u.chunks(s.nx) {
                    let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
                    writeln!(out, "{}", line.join(" "))?;
                }
            }
        }
    }
    Ok(())
}

/// Read a history previously written by `export_history`.
pub fn import_history<R: BufRead>(input: &mut R) -> Result<MetricHistory> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| LabError::Parse("unexpected end of history file".into()))?
            .map_err(LabError::from)
    };
    let magic = next()?;
    if magic.trim() != MAGIC {
        return Err(LabError::Parse(format!("unrecognized history header `{magic}`")));
    }
    let dt = parse_kv(&next()?, "dt")?.parse::<f64>().map_err(bad_num)?;
    let backward = parse_kv(&next()?, "backward")? == "1";
    let count: usize = parse_kv(&next()?, "snapshots")?.parse().map_err(bad_num)?;
    if count < 2 {
        return Err(LabError::Parse("history needs at least two snapshots".into()));
    }
    let backend_line = next()?;
    let parts: Vec<&str> = backend_line.split_whitespace().collect();
    if parts.first() != Some(&"backend") || parts.len() < 2 {
        return Err(LabError::Parse(format!("bad backend line `{backend_line}`")));
    }
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    match parts[1] {
        "euclid" => {
            if parts.len() != 5 {
                return Err(LabError::Parse("bad euclid backend line".into()));
            }
            let n: usize = parts[2].parse().map_err(bad_num)?;
            let hw: f64 = parts[3].parse().map_err(bad_num)?;
            let order: usize = parts[4].parse().map_err(bad_num)?;
            let b = EuclideanBackend::new(n, hw, order)?;
            for _ in 0..count {
                times.push(parse_kv(&next()?, "t")?.parse::<f64>().map_err(bad_num)?);
                states.push(ManifoldBackend::Euclidean(b.clone()));
            }
        }
        "sphere" => {
            if parts.len() != 4 {
                return Err(LabError::Parse("bad sphere backend line".into()));
            }
            let n: usize = parts[2].parse().map_err(bad_num)?;
            let lat_res: usize = parts[3].parse().map_err(bad_num)?;
            for _ in 0..count {
                let line = next()?;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 4 || toks[0] != "t" || toks[2] != "r" {
                    return Err(LabError::Parse(format!("bad sphere snapshot `{line}`")));
                }
                times.push(toks[1].parse().map_err(bad_num)?);
                let r: f64 = toks[3].parse().map_err(bad_num)?;
                states.push(ManifoldBackend::Sphere(SphereBackend::with_lat_res(
                    n, r, lat_res,
                )?));
            }
        }
        "torus" => {
            if parts.len() != 6 {
                return Err(LabError::Parse("bad torus backend line".into()));
            }
            let nx: usize = parts[2].parse().map_err(bad_num)?;
            let ny: usize = parts[3].parse().map_err(bad_num)?;
            let lx: f64 = parts[4].parse().map_err(bad_num)?;
            let ly: f64 = parts[5].parse().map_err(bad_num)?;
            for _ in 0..count {
                times.push(parse_kv(&next()?, "t")?.parse::<f64>().map_err(bad_num)?);
                let mut u = Vec::with_capacity(nx * ny);
                for _ in 0..ny {
                    let line = next()?;
                    for tok in line.split_whitespace() {
                        u.push(tok.parse::<f64>().map_err(bad_num)?);
                    }
                }
                if u.len() != nx * ny {
                    return Err(LabError::Parse("torus snapshot has wrong node count".into()));
                }
                states.push(ManifoldBackend::ConformalTorus(TorusBackend::new(
                    nx, ny, lx, ly, u,
                )?));
            }
        }
        other => return Err(LabError::Parse(format!("unknown backend `{other}`"))),
    }
    Ok(MetricHistory { times, states, dt, backward })
}

/// Write a history to a file path.
pub fn save_history<P: AsRef<Path>>(h: &MetricHistory, path: P) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    export_history(h, &mut f)
}

/// Read a history from a file path.
pub fn load_history<P: AsRef<Path>>(path: P) -> Result<MetricHistory> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    import_history(&mut f)
}

fn parse_kv<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(LabError::Parse(format!("expected `{key} <value>`, got `{line}`"))),
    }
}

fn bad_num<E: std::fmt::Display>(e: E) -> LabError {
    LabError::Parse(format!("bad numeric field: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_history, FlowConfig};
    use std::f64::consts::PI;

    fn roundtrip(h: &MetricHistory) -> MetricHistory {
        let mut buf = Vec::new();
        export_history(h, &mut buf).unwrap();
        import_history(&mut std::io::BufReader::new(&buf[..])).unwrap()
    }

    fn assert_identical(a: &MetricHistory, b: &MetricHistory) {
        assert_eq!(a.len(), b.len());
        assert_eq!(a.dt.to_bits(), b.dt.to_bits());
        assert_eq!(a.is_backward(), b.is_backward());
        for i in 0..a.len() {
            let (ta, sa) = a.forward_snapshot(i);
            let (tb, sb) = b.forward_snapshot(i);
            assert_eq!(ta.to_bits(), tb.to_bits());
            match (sa, sb) {
                (ManifoldBackend::ConformalTorus(x), ManifoldBackend::ConformalTorus(y)) => {
                    assert_eq!(x.u.len(), y.u.len());
                    for (p, q) in x.u.iter().zip(&y.u) {
                        assert_eq!(p.to_bits(), q.to_bits());
                    }
                }
                (ManifoldBackend::Sphere(x), ManifoldBackend::Sphere(y)) => {
                    assert_eq!(x.radius.to_bits(), y.radius.to_bits());
                    assert_eq!(x.n, y.n);
                }
                (ManifoldBackend::Euclidean(x), ManifoldBackend::Euclidean(y)) => {
                    assert_eq!(x.n, y.n);
                    assert_eq!(x.half_width.to_bits(), y.half_width.to_bits());
                }
                _ => panic!("backend mismatch after round trip"),
            }
        }
    }

    fn wavy_field(n: usize) -> Vec<f64> {
        let s = crate::geometry::GridShape {
            nx: n,
            ny: n,
            hx: 2.0 * PI / n as f64,
            hy: 2.0 * PI / n as f64,
        };
        s.from_fn(|x, y| 0.11 * x.sin() - 0.07 * (x + 2.0 * y).cos())
    }

    #[test]
    fn torus_round_trip_is_bit_exact() {
        let u = wavy_field(16);
        let m = ManifoldBackend::ConformalTorus(
            TorusBackend::new(16, 16, 2.0 * PI, 2.0 * PI, u).unwrap(),
        );
        let h = run_history(&m, 0.01, &FlowConfig::default()).unwrap();
        assert_identical(&h, &roundtrip(&h));
        // backward orientation survives too
        let b = h.backward_view();
        assert_identical(&b, &roundtrip(&b));
    }

    #[test]
    fn sphere_round_trip_is_bit_exact() {
        let m = ManifoldBackend::Sphere(SphereBackend::new(3, 1.7).unwrap());
        let h = run_history(&m, 0.3, &FlowConfig { dt: Some(0.01), ..Default::default() })
            .unwrap();
        assert_identical(&h, &roundtrip(&h));
    }

    #[test]
    fn euclid_round_trip_is_bit_exact() {
        let m = ManifoldBackend::Euclidean(EuclideanBackend::gaussian_box(2, 0.8).unwrap());
        let h = run_history(&m, 0.5, &FlowConfig::default()).unwrap();
        assert_identical(&h, &roundtrip(&h));
    }

    #[test]
    fn file_round_trip_and_header_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.txt");
        let m = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        let h = run_history(&m, 0.1, &FlowConfig { dt: Some(0.005), ..Default::default() })
            .unwrap();
        save_history(&h, &path).unwrap();
        assert_identical(&h, &load_history(&path).unwrap());

        std::fs::write(&path, "not a history\n").unwrap();
        assert!(matches!(load_history(&path), Err(LabError::Parse(_))));
    }
}
