//! Plain-text and image file formats for instances and results.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector2;

use crate::problems::{BaInstance, Correspondence, CorrespondenceSet, Image};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(token: &str, line: usize) -> Result<f64, FormatError> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("`{token}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("`{token}` is not finite")));
    }
    Ok(v)
}

/// One pair per line, `x1 y1 x2 y2` plus an inlier flag column when known.
pub fn write_correspondences<W: Write>(mut out: W, set: &CorrespondenceSet) -> io::Result<()> {
    for (i, p) in set.pairs.iter().enumerate() {
        write!(out, "{} {} {} {}", p.x1[0], p.x1[1], p.x2[0], p.x2[1])?;
        if let Some(mask) = &set.inliers {
            write!(out, " {}", u8::from(mask[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads pairs written by [`write_correspondences`]. Blank lines and lines
/// starting with `#` are ignored; the flag column must be present on every
/// line or on none.
pub fn read_correspondences<R: BufRead>(input: R) -> Result<CorrespondenceSet, FormatError> {
    let mut pairs = Vec::new();
    let mut flags: Vec<bool> = Vec::new();
    let mut with_flags: Option<bool> = None;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let ln = n + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let flagged = match tokens.len() {
            4 => false,
            5 => true,
            k => return Err(parse_err(ln, format!("expected 4 or 5 columns, found {k}"))),
        };
        if *with_flags.get_or_insert(flagged) != flagged {
            return Err(parse_err(ln, "inconsistent inlier flag column"));
        }
        let v: Vec<f64> = tokens[..4].iter().map(|t| parse_f64(t, ln)).collect::<Result<_, _>>()?;
        pairs.push(Correspondence {
            x1: [v[0], v[1]],
            x2: [v[2], v[3]],
        });
        if flagged {
            flags.push(match tokens[4] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(ln, format!("inlier flag must be 0 or 1, found `{other}`"))),
            });
        }
    }
    Ok(CorrespondenceSet {
        pairs,
        inliers: with_flags.unwrap_or(false).then_some(flags),
    })
}

/// Binary PGM (`P5`, maxval 255); intensities in `[0, 1]` are rounded.
pub fn write_pgm<W: Write>(mut out: W, image: &Image) -> io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)
}

/// Reads a binary PGM with maxval below 256, scaling intensities to `[0, 1]`.
pub fn read_pgm<R: Read>(mut input: R) -> Result<Image, FormatError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut header = Vec::new();
    while header.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(1, "truncated PGM header"));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if header[0] != "P5" {
        return Err(parse_err(1, format!("unsupported magic `{}`", header[0])));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| parse_err(1, format!("bad PGM field `{s}`")));
    let (w, h, maxval) = (dim(&header[1])?, dim(&header[2])?, dim(&header[3])?);
    if !(1..256).contains(&maxval) {
        return Err(parse_err(1, format!("unsupported maxval {maxval}")));
    }
    if w < 2 || h < 2 {
        return Err(parse_err(1, format!("image {w}×{h} is too small")));
    }
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| parse_err(1, "truncated PGM data"))?;
    Ok(Image::new(w, h, pixels.iter().map(|&b| b as f64 / maxval as f64).collect()))
}

/// `key = value` lines; later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, FormatError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(n + 1, format!("expected `key = value`, found `{line}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(n + 1, "empty key"));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn write_key_values<W: Write>(mut out: W, map: &BTreeMap<String, String>) -> io::Result<()> {
    for (k, v) in map {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(())
}

pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>, FormatError> {
    parse_key_values(&fs::read_to_string(path)?)
}

/// `cameras C points P`, then one line per point: its depth followed by the
/// observations `u v` in every camera.
pub fn write_ba<W: Write>(mut out: W, instance: &BaInstance) -> io::Result<()> {
    writeln!(out, "cameras {} points {}", instance.num_cameras, instance.num_points())?;
    for (obs, depth) in instance.observations.iter().zip(&instance.depths) {
        write!(out, "{depth}")?;
        for m in obs {
            write!(out, " {} {}", m.x, m.y)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_ba<R: BufRead>(input: R) -> Result<BaInstance, FormatError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let first = first?;
    let head: Vec<&str> = first.split_whitespace().collect();
    let (c, p) = match head.as_slice() {
        ["cameras", c, "points", p] => (
            c.parse::<usize>().map_err(|_| parse_err(1, "bad camera count"))?,
            p.parse::<usize>().map_err(|_| parse_err(1, "bad point count"))?,
        ),
        _ => return Err(parse_err(1, "expected `cameras C points P`")),
    };
    if c < 2 {
        return Err(parse_err(1, "at least two cameras are required"));
    }
    let mut observations = Vec::with_capacity(p);
    let mut depths = Vec::with_capacity(p);
    for (n, line) in lines {
        let line = line?;
        let ln = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().map(|t| parse_f64(t, ln)).collect::<Result<_, _>>()?;
        if v.len() != 1 + 2 * c {
            return Err(parse_err(ln, format!("expected {} values, found {}", 1 + 2 * c, v.len())));
        }
        if !(v[0] > 0.0) {
            return Err(parse_err(ln, "depth must be positive"));
        }
        depths.push(v[0]);
        observations.push((0..c).map(|i| Vector2::new(v[1 + 2 * i], v[2 + 2 * i])).collect());
    }
    if observations.len() != p {
        return Err(parse_err(0, format!("header announces {p} points, found {}", observations.len())));
    }
    Ok(BaInstance {
        num_cameras: c,
        observations,
        depths,
    })
}

pub fn read_file<T>(path: &Path, read: impl FnOnce(BufReader<fs::File>) -> Result<T, FormatError>) -> Result<T, FormatError> {
    read(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{generate_ba_instance, generate_essential_instance, BaGenerator, EssentialGenerator};

    #[test]
    fn correspondences_round_trip_exactly() {
        let inst = generate_essential_instance(1, &EssentialGenerator { num_points: 50, outlier_fraction: 0.2, ..Default::default() });
        let mut buf = Vec::new();
        write_correspondences(&mut buf, &inst.correspondences).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 50);
        let back = read_correspondences(buf.as_slice()).unwrap();
        assert_eq!(back, inst.correspondences);
    }

    #[test]
    fn correspondence_errors_carry_line_numbers() {
        let err = read_correspondences("0 0 0 0\n1 2 x 4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 2, .. }), "{err}");
        assert!(read_correspondences("0 0 0 0 1\n0 0 0 0\n".as_bytes()).is_err());
        assert!(read_correspondences("0 0 0 0 2\n".as_bytes()).is_err());
        let plain = read_correspondences("# comment\n\n1 2 3 4\n".as_bytes()).unwrap();
        assert_eq!(plain.len(), 1);
        assert!(plain.inliers.is_none());
    }

    #[test]
    fn pgm_round_trip() {
        let img = Image::from_fn(5, 3, |x, y| (x * 3 + y) as f64 / 255.0);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &img).unwrap();
        assert!(buf.starts_with(b"P5\n5 3\n255\n"));
        let back = read_pgm(buf.as_slice()).unwrap();
        assert_eq!(back.width(), 5);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let with_comment = b"P5\n# made by hand\n2 2\n255\n\x00\x40\x80\xff";
        assert_eq!(read_pgm(&with_comment[..]).unwrap().get(1, 1), 1.0);
        assert!(read_pgm(&b"P2\n2 2\n255\n"[..]).is_err());
        assert!(read_pgm(&b"P5\n2 2\n255\n\x00"[..]).is_err());
    }

    #[test]
    fn key_values() {
        let m = parse_key_values("# c\na = 1\n b=two words \na = 3\n").unwrap();
        assert_eq!(m["a"], "3");
        assert_eq!(m["b"], "two words");
        assert!(parse_key_values("novalue\n").is_err());
        let mut buf = Vec::new();
        write_key_values(&mut buf, &m).unwrap();
        assert_eq!(parse_key_values(std::str::from_utf8(&buf).unwrap()).unwrap(), m);
    }

    #[test]
    fn ba_round_trip() {
        let prob = generate_ba_instance(2, &BaGenerator { num_points: 7, ..Default::default() });
        let mut buf = Vec::new();
        write_ba(&mut buf, &prob.instance).unwrap();
        assert_eq!(read_ba(buf.as_slice()).unwrap(), prob.instance);
        assert!(read_ba("cameras 3 points 2\n1 0 0 0 0 0 0\n".as_bytes()).is_err());
    }
}
