//! Path serialization: JSON-lines and CSV.
//!
//! JSON-lines is the full-fidelity format: the first line is a metadata
//! object (kind, dimensions, caller-supplied entries such as a config
//! hash), followed by one record per grid index. Doubles are printed with
//! 17 significant digits, which identifies every finite `f64` uniquely, so
//! a write/read cycle is bit-exact.
//!
//! CSV is the flat plot-ready table (one `#`-prefixed metadata comment,
//! then a header row and one row per grid index with a jump marker
//! column); it carries points but not frames.
//!
//! Driver record:  `{"i":0,"t":...,"w":[...] ,"dw":[...]?}`
//! Rolled record:  `{"i":0,"t":...,"x":[...] ,"frame":[[...],...]?,
//!                   "dx":[...]?,"post":[...]?,"dw":[...]?}`

use std::io::{BufRead, Write};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::error::GeomError;
use crate::frame::Frame;
use crate::manifold::{ManifoldKind, Point};
use crate::path::{DriverJump, DriverPath, FrameJump, ManifoldJump, RolledPath};

#[derive(Debug, Error)]
pub enum PathIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

type IoResult<T> = std::result::Result<T, PathIoError>;

/// 17 significant digits: enough to reproduce any finite double exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_vec(xs: &[f64]) -> String {
    let mut out = String::from("[");
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
    out
}

fn parse_err(msg: impl Into<String>) -> PathIoError {
    PathIoError::Parse(msg.into())
}

fn get_f64(v: &Value, key: &str) -> IoResult<f64> {
    v.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| parse_err(format!("missing number field {key:?}")))
}

fn get_vec(v: &Value, key: &str) -> IoResult<Vec<f64>> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(format!("missing array field {key:?}")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| parse_err(format!("non-numeric entry in {key:?}")))
        })
        .collect()
}

fn opt_vec(v: &Value, key: &str) -> IoResult<Option<Vec<f64>>> {
    if v.get(key).is_none() {
        return Ok(None);
    }
    get_vec(v, key).map(Some)
}

fn meta_line(kind: &str, fields: &[(&str, Value)], extra: Option<&Value>) -> String {
    let mut meta = Map::new();
    meta.insert("kind".into(), Value::String(kind.into()));
    for (k, v) in fields {
        meta.insert((*k).into(), v.clone());
    }
    if let Some(Value::Object(map)) = extra {
        for (k, v) in map {
            meta.insert(k.clone(), v.clone());
        }
    }
    serde_json::to_string(&json!({ "meta": Value::Object(meta) })).unwrap()
}

// ---------------------------------------------------------------------------
// driver paths
// ---------------------------------------------------------------------------

pub fn write_driver_jsonl(
    path: &DriverPath,
    out: &mut impl Write,
    extra: Option<&Value>,
) -> IoResult<()> {
    writeln!(
        out,
        "{}",
        meta_line(
            "driver",
            &[
                ("dim", json!(path.dim())),
                ("points", json!(path.n_points())),
                ("jumps", json!(path.jumps().len())),
            ],
            extra,
        )
    )?;
    for i in 0..path.n_points() {
        let mut line = format!(
            "{{\"i\":{},\"t\":{},\"w\":{}",
            i,
            fmt_f64(path.times()[i]),
            fmt_vec(path.value(i))
        );
        if let Some(j) = path.jump_at(i) {
            line.push_str(&format!(",\"dw\":{}", fmt_vec(&j.delta)));
        }
        line.push('}');
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_driver_jsonl(input: &mut impl BufRead) -> IoResult<DriverPath> {
    let mut lines = input.lines();
    let header: Value = serde_json::from_str(
        &lines
            .next()
            .ok_or_else(|| parse_err("empty file"))??,
    )
    .map_err(|e| parse_err(format!("bad metadata line: {e}")))?;
    let meta = header
        .get("meta")
        .ok_or_else(|| parse_err("first line is not a metadata object"))?;
    let dim = get_f64(meta, "dim")? as usize;
    let n = get_f64(meta, "points")? as usize;

    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * dim);
    let mut jumps = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("bad record: {e}")))?;
        times.push(get_f64(&rec, "t")?);
        let w = get_vec(&rec, "w")?;
        if w.len() != dim {
            return Err(parse_err("record dimension mismatch"));
        }
        values.extend(w);
        if let Some(dw) = opt_vec(&rec, "dw")? {
            jumps.push(DriverJump {
                index: times.len() - 1,
                delta: dw,
            });
        }
    }
    if times.len() != n {
        return Err(parse_err(format!(
            "metadata announced {n} records, found {}",
            times.len()
        )));
    }
    Ok(DriverPath::new(dim, times, values, jumps)?)
}

pub fn write_driver_csv(
    path: &DriverPath,
    out: &mut impl Write,
    extra: Option<&Value>,
) -> IoResult<()> {
    writeln!(
        out,
        "# {}",
        meta_line(
            "driver",
            &[("dim", json!(path.dim())), ("points", json!(path.n_points()))],
            extra,
        )
    )?;
    let dim = path.dim();
    let mut header = String::from("i,t");
    for k in 0..dim {
        header.push_str(&format!(",w{k}"));
    }
    header.push_str(",jump");
    for k in 0..dim {
        header.push_str(&format!(",dw{k}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..path.n_points() {
        let mut row = format!("{},{}", i, fmt_f64(path.times()[i]));
        for x in path.value(i) {
            row.push_str(&format!(",{}", fmt_f64(*x)));
        }
        match path.jump_at(i) {
            Some(j) => {
                row.push_str(",1");
                for d in &j.delta {
                    row.push_str(&format!(",{}", fmt_f64(*d)));
                }
            }
            None => {
                row.push_str(",0");
                for _ in 0..dim {
                    row.push_str(",0");
                }
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rolled paths
// ---------------------------------------------------------------------------

pub fn write_rolled_jsonl(
    path: &RolledPath,
    out: &mut impl Write,
    extra: Option<&Value>,
) -> IoResult<()> {
    writeln!(
        out,
        "{}",
        meta_line(
            "rolled",
            &[
                ("manifold", json!(path.manifold.to_string())),
                ("points", json!(path.n_points())),
                ("jumps", json!(path.jumps.len())),
                ("has_frames", json!(path.frames.is_some())),
            ],
            extra,
        )
    )?;
    for i in 0..path.n_points() {
        let mut line = format!(
            "{{\"i\":{},\"t\":{},\"x\":{}",
            i,
            fmt_f64(path.times[i]),
            fmt_vec(path.points[i].coords())
        );
        if let Some(frames) = &path.frames {
            line.push_str(",\"frame\":[");
            for (k, col) in frames[i].columns().iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&fmt_vec(col));
            }
            line.push(']');
        }
        if let Some(j) = path.jump_at(i) {
            line.push_str(&format!(
                ",\"dx\":{},\"post\":{}",
                fmt_vec(j.tangent.vec()),
                fmt_vec(j.post.coords())
            ));
            if let Some(fj) = &path.frame_jumps {
                if let Ok(pos) = fj.binary_search_by_key(&i, |f| f.index) {
                    line.push_str(&format!(",\"dw\":{}", fmt_vec(&fj[pos].coords)));
                }
            }
        }
        line.push('}');
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_rolled_jsonl(input: &mut impl BufRead) -> IoResult<RolledPath> {
    let mut lines = input.lines();
    let header: Value = serde_json::from_str(
        &lines
            .next()
            .ok_or_else(|| parse_err("empty file"))??,
    )
    .map_err(|e| parse_err(format!("bad metadata line: {e}")))?;
    let meta = header
        .get("meta")
        .ok_or_else(|| parse_err("first line is not a metadata object"))?;
    let manifold: ManifoldKind = meta
        .get("manifold")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err("missing manifold"))?
        .parse()
        .map_err(parse_err)?;
    let has_frames = meta
        .get("has_frames")
        .and_then(Value::as_bool)
        .unwrap_or(false);

    let mut times = Vec::new();
    let mut points: Vec<Point> = Vec::new();
    let mut jumps: Vec<ManifoldJump> = Vec::new();
    let mut frames: Vec<Frame> = Vec::new();
    let mut frame_jumps: Vec<FrameJump> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("bad record: {e}")))?;
        times.push(get_f64(&rec, "t")?);
        let point = Point::new(manifold, get_vec(&rec, "x")?)?;
        let index = points.len();
        if has_frames {
            let cols = rec
                .get("frame")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err("missing frame columns"))?
                .iter()
                .map(|col| {
                    col.as_array()
                        .ok_or_else(|| parse_err("bad frame column"))?
                        .iter()
                        .map(|x| x.as_f64().ok_or_else(|| parse_err("bad frame entry")))
                        .collect()
                })
                .collect::<IoResult<Vec<Vec<f64>>>>()?;
            frames.push(Frame::new(point.clone(), cols)?);
        }
        if let Some(dx) = opt_vec(&rec, "dx")? {
            let post = Point::new(
                manifold,
                get_vec(&rec, "post").map_err(|_| parse_err("jump without post point"))?,
            )?;
            jumps.push(ManifoldJump {
                index,
                tangent: crate::manifold::Tangent::new(point.clone(), dx)?,
                post,
            });
            if let Some(dw) = opt_vec(&rec, "dw")? {
                frame_jumps.push(FrameJump { index, coords: dw });
            }
        }
        points.push(point);
    }
    Ok(RolledPath {
        manifold,
        times,
        points,
        jumps,
        frames: has_frames.then_some(frames),
        frame_jumps: has_frames.then_some(frame_jumps),
    })
}

pub fn write_rolled_csv(
    path: &RolledPath,
    out: &mut impl Write,
    extra: Option<&Value>,
) -> IoResult<()> {
    writeln!(
        out,
        "# {}",
        meta_line(
            "rolled",
            &[
                ("manifold", json!(path.manifold.to_string())),
                ("points", json!(path.n_points())),
            ],
            extra,
        )
    )?;
    let ambient = path.manifold.ambient_dim();
    let mut header = String::from("i,t");
    for k in 0..ambient {
        header.push_str(&format!(",x{k}"));
    }
    header.push_str(",jump");
    for k in 0..ambient {
        header.push_str(&format!(",dx{k}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..path.n_points() {
        let mut row = format!("{},{}", i, fmt_f64(path.times[i]));
        for x in path.points[i].coords() {
            row.push_str(&format!(",{}", fmt_f64(*x)));
        }
        match path.jump_at(i) {
            Some(j) => {
                row.push_str(",1");
                for d in j.tangent.vec() {
                    row.push_str(&format!(",{}", fmt_f64(*d)));
                }
            }
            None => {
                row.push_str(",0");
                for _ in 0..ambient {
                    row.push_str(",0");
                }
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;
    use crate::path::{
        gen_brownian, gen_compound_poisson, superpose, uniform_grid, JumpLaw, RngConfig,
    };
    use crate::rolling::{develop, SchemeConfig};
    use proptest::prelude::*;

    fn sample_driver(seed: u64) -> DriverPath {
        let grid = uniform_grid(1.0, 32);
        superpose(
            &gen_brownian(&grid, 2, RngConfig::new(seed, 0)),
            &gen_compound_poisson(
                &grid,
                2,
                4.0,
                &JumpLaw::UniformBall { radius: 0.8 },
                RngConfig::new(seed, 1),
            ),
        )
        .unwrap()
    }

    fn bitwise_equal(a: &DriverPath, b: &DriverPath) -> bool {
        if a.dim() != b.dim() || a.n_points() != b.n_points() {
            return false;
        }
        for i in 0..a.n_points() {
            if a.times()[i].to_bits() != b.times()[i].to_bits() {
                return false;
            }
            for (x, y) in a.value(i).iter().zip(b.value(i)) {
                if x.to_bits() != y.to_bits() {
                    return false;
                }
            }
        }
        a.jumps().len() == b.jumps().len()
            && a.jumps().iter().zip(b.jumps()).all(|(x, y)| {
                x.index == y.index
                    && x.delta
                        .iter()
                        .zip(&y.delta)
                        .all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }

    #[test]
    fn driver_jsonl_round_trip_is_bit_exact() {
        let path = sample_driver(5);
        let mut buf = Vec::new();
        write_driver_jsonl(&path, &mut buf, Some(&serde_json::json!({"config_hash": "abc"})))
            .unwrap();
        let back = read_driver_jsonl(&mut buf.as_slice()).unwrap();
        assert!(bitwise_equal(&path, &back));
        // metadata line carries the extra field
        let first = String::from_utf8_lossy(&buf);
        assert!(first.lines().next().unwrap().contains("config_hash"));
    }

    #[test]
    fn rolled_jsonl_round_trip_is_bit_exact() {
        let path = sample_driver(7);
        let x0 = Point::new(ManifoldKind::sphere(2), vec![0.0, 0.0, 1.0]).unwrap();
        let u0 = Frame::standard_at(&x0).unwrap();
        let rolled = develop(&path, &x0, &u0, &SchemeConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_rolled_jsonl(&rolled, &mut buf, None).unwrap();
        let back = read_rolled_jsonl(&mut buf.as_slice()).unwrap();
        assert_eq!(rolled.n_points(), back.n_points());
        for i in 0..rolled.n_points() {
            assert_eq!(
                rolled.points[i].coords(),
                back.points[i].coords(),
                "point {i}"
            );
        }
        assert_eq!(rolled.jumps.len(), back.jumps.len());
        for (a, b) in rolled.jumps.iter().zip(&back.jumps) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.tangent.vec(), b.tangent.vec());
            assert_eq!(a.post.coords(), b.post.coords());
        }
        let fa = rolled.frames.as_ref().unwrap();
        let fb = back.frames.as_ref().unwrap();
        for (a, b) in fa.iter().zip(fb) {
            assert_eq!(a.columns(), b.columns());
        }
        assert_eq!(
            rolled.frame_jumps.as_ref().unwrap().len(),
            back.frame_jumps.as_ref().unwrap().len()
        );
    }

    #[test]
    fn stripped_rolled_round_trips_without_frames() {
        let path = sample_driver(11);
        let x0 = Point::new(ManifoldKind::sphere(2), vec![0.0, 0.0, 1.0]).unwrap();
        let u0 = Frame::standard_at(&x0).unwrap();
        let rolled = develop(&path, &x0, &u0, &SchemeConfig::default())
            .unwrap()
            .without_frames();
        let mut buf = Vec::new();
        write_rolled_jsonl(&rolled, &mut buf, None).unwrap();
        let back = read_rolled_jsonl(&mut buf.as_slice()).unwrap();
        assert!(back.frames.is_none());
        assert_eq!(back.jumps.len(), rolled.jumps.len());
    }

    #[test]
    fn csv_has_meta_header_and_rows() {
        let path = sample_driver(13);
        let mut buf = Vec::new();
        write_driver_csv(&path, &mut buf, Some(&serde_json::json!({"config_hash": "xyz"})))
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let meta = lines.next().unwrap();
        assert!(meta.starts_with("# {"));
        assert!(meta.contains("config_hash"));
        let header = lines.next().unwrap();
        assert_eq!(header, "i,t,w0,w1,jump,dw0,dw1");
        assert_eq!(lines.count(), path.n_points());
    }

    #[test]
    fn truncated_file_is_reported() {
        let path = sample_driver(17);
        let mut buf = Vec::new();
        write_driver_jsonl(&path, &mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            read_driver_jsonl(&mut truncated.as_bytes()),
            Err(PathIoError::Parse(_))
        ));
    }

    proptest! {
        #[test]
        fn fmt_f64_round_trips_any_finite_double(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = fmt_f64(x);
            let y: f64 = s.parse().unwrap();
            prop_assert_eq!(x.to_bits(), y.to_bits());
            // and through the JSON parser used by the readers
            let v: Value = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(v.as_f64().unwrap().to_bits(), x.to_bits());
        }

        #[test]
        fn random_drivers_round_trip(seed in 0u64..1000) {
            let path = sample_driver(seed);
            let mut buf = Vec::new();
            write_driver_jsonl(&path, &mut buf, None).unwrap();
            let back = read_driver_jsonl(&mut buf.as_slice()).unwrap();
            prop_assert!(bitwise_equal(&path, &back));
        }
    }
}
