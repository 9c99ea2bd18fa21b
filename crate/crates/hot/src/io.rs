//! File ingestion and report output.
//!
//! Histograms load from CSV grids (rows × columns of reals), grayscale
//! PGM/PNG images (pixel values taken as unnormalized mass), or seeded
//! synthetic generators addressed with a `synth:` pseudo-path:
//!
//! ```text
//! synth:dirac:MxN:I,J        unit mass at bin (I, J)
//! synth:uniform:MxN          uniform mass
//! synth:classic:MxN:SEED     smooth Gaussian-mixture field
//! synth:shapes:MxN:SEED      thresholded random-ellipse mask
//! synth:image:WxH:SEED       RGB image (for `transfer`)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridDims, Histogram2D};
use crate::solver::TraceEntry;

/// Loads a histogram from a file path or a `synth:` spec.
pub fn load_histogram(spec: &str) -> Result<Histogram2D> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        return synth_histogram(rest);
    }
    let path = Path::new(spec);
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("csv") | Some("txt") => load_csv(path),
        Some("pgm") | Some("pnm") | Some("png") => load_grayscale(path),
        _ => Err(Error::Parse(format!(
            "unsupported histogram format: {spec} (expect .csv, .pgm, .png, or synth:)"
        ))),
    }
}

/// CSV grid, m rows × n columns of reals. Row index maps to the first grid
/// axis, column index to the second.
pub fn load_csv(path: &Path) -> Result<Histogram2D> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "{}:{}: not a number: {tok:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "{}:{}: ragged row ({} vs {} columns)",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: empty grid", path.display())));
    }
    let (m, n) = (rows.len(), rows[0].len());
    let dims = GridDims::new(m, n)?;
    let mut mass = vec![0.0; dims.num_bins()];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            mass[dims.node(i, j)] = v;
        }
    }
    Histogram2D::from_unnormalized(dims, mass)
}

/// Grayscale image as unnormalized mass, then normalized.
pub fn load_grayscale(path: &Path) -> Result<Histogram2D> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let dims = GridDims::new(h as usize, w as usize)?;
    let mut mass = vec![0.0; dims.num_bins()];
    for (x, y, p) in img.enumerate_pixels() {
        mass[dims.node(y as usize, x as usize)] = p[0] as f64;
    }
    Histogram2D::from_unnormalized(dims, mass)
}

fn parse_dims(tok: &str) -> Result<GridDims> {
    let (m, n) = tok
        .split_once('x')
        .ok_or_else(|| Error::Parse(format!("expected MxN, got {tok:?}")))?;
    let m = m
        .parse()
        .map_err(|_| Error::Parse(format!("bad grid size {tok:?}")))?;
    let n = n
        .parse()
        .map_err(|_| Error::Parse(format!("bad grid size {tok:?}")))?;
    GridDims::new(m, n)
}

fn synth_histogram(rest: &str) -> Result<Histogram2D> {
    let parts: Vec<&str> = rest.split(':').collect();
    let bad = || Error::Parse(format!("bad synth spec: synth:{rest}"));
    match parts.as_slice() {
        ["dirac", size, at] => {
            let dims = parse_dims(size)?;
            let (i, j) = at.split_once(',').ok_or_else(bad)?;
            let i = i.parse().map_err(|_| bad())?;
            let j = j.parse().map_err(|_| bad())?;
            Histogram2D::dirac(dims, i, j)
        }
        ["uniform", size] => Ok(Histogram2D::uniform(parse_dims(size)?)),
        ["classic", size, seed] => {
            let dims = parse_dims(size)?;
            classic_field(dims, seed.parse().map_err(|_| bad())?)
        }
        ["shapes", size, seed] => {
            let dims = parse_dims(size)?;
            shapes_field(dims, seed.parse().map_err(|_| bad())?)
        }
        _ => Err(bad()),
    }
}

/// Smooth Gaussian-mixture density on the unit square, sampled at bin
/// centers. Deterministic per seed.
pub fn classic_field(dims: GridDims, seed: u64) -> Result<Histogram2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(3..=6);
    let comps: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.gen_range(0.1..0.9), // center x
                rng.gen_range(0.1..0.9), // center y
                rng.gen_range(0.05..0.25), // bandwidth
                rng.gen_range(0.3..1.0), // weight
            )
        })
        .collect();
    let mut mass = vec![0.0; dims.num_bins()];
    for j in 0..dims.n {
        let y = (j as f64 + 0.5) / dims.n as f64;
        for i in 0..dims.m {
            let x = (i as f64 + 0.5) / dims.m as f64;
            let mut v = 1e-4; // small floor keeps the field strictly positive
            for &(cx, cy, s, w) in &comps {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                v += w * (-d2 / (2.0 * s * s)).exp();
            }
            mass[dims.node(i, j)] = v;
        }
    }
    Histogram2D::from_unnormalized(dims, mass)
}

/// Union of random ellipses, uniform mass over the mask. Deterministic per
/// seed; never empty (falls back to a centered disc).
pub fn shapes_field(dims: GridDims, seed: u64) -> Result<Histogram2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=4);
    let ellipses: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.08..0.3),
                rng.gen_range(0.08..0.3),
            )
        })
        .collect();
    let mut mass = vec![0.0; dims.num_bins()];
    let mut any = false;
    for j in 0..dims.n {
        let y = (j as f64 + 0.5) / dims.n as f64;
        for i in 0..dims.m {
            let x = (i as f64 + 0.5) / dims.m as f64;
            let inside = ellipses.iter().any(|&(cx, cy, rx, ry)| {
                ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
            });
            if inside {
                mass[dims.node(i, j)] = 1.0;
                any = true;
            }
        }
    }
    if !any {
        mass[dims.node(dims.m / 2, dims.n / 2)] = 1.0;
    }
    Histogram2D::from_unnormalized(dims, mass)
}

/// A seeded pair of classic fields, derived from disjoint sub-seeds.
pub fn classic_pair(dims: GridDims, seed: u64) -> Result<(Histogram2D, Histogram2D)> {
    Ok((
        classic_field(dims, seed.wrapping_mul(2).wrapping_add(1))?,
        classic_field(dims, seed.wrapping_mul(2).wrapping_add(2))?,
    ))
}

/// A seeded pair of shapes fields.
pub fn shapes_pair(dims: GridDims, seed: u64) -> Result<(Histogram2D, Histogram2D)> {
    Ok((
        shapes_field(dims, seed.wrapping_mul(2).wrapping_add(1))?,
        shapes_field(dims, seed.wrapping_mul(2).wrapping_add(2))?,
    ))
}

/// Loads an RGB image from a path or `synth:image:WxH:SEED`.
pub fn load_rgb(spec: &str) -> Result<RgbImage> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if let ["image", size, seed] = parts.as_slice() {
            let (w, h) = size
                .split_once('x')
                .ok_or_else(|| Error::Parse(format!("bad image size {size:?}")))?;
            let w = w.parse().map_err(|_| Error::Parse(format!("bad image size")))?;
            let h = h.parse().map_err(|_| Error::Parse(format!("bad image size")))?;
            let seed = seed
                .parse()
                .map_err(|_| Error::Parse(format!("bad image seed")))?;
            return Ok(synth_image(w, h, seed));
        }
        return Err(Error::Parse(format!("bad synth spec: {spec}")));
    }
    Ok(image::open(spec)?.into_rgb8())
}

/// Smooth seeded RGB field: per-channel sums of random low-frequency sine
/// waves. Deterministic per seed.
pub fn synth_image(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut waves = [[(0.0f64, 0.0f64, 0.0f64, 0.0f64); 4]; 3];
    for chan in &mut waves {
        for w in chan.iter_mut() {
            *w = (
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            );
        }
    }
    let mut img = RgbImage::new(width, height);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let u = x as f64 / width.max(1) as f64;
        let v = y as f64 / height.max(1) as f64;
        let mut rgb = [0u8; 3];
        for (c, chan) in waves.iter().enumerate() {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for &(fx, fy, phase, amp) in chan {
                acc += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
                norm += amp;
            }
            rgb[c] = (((acc / norm) * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        *p = image::Rgb(rgb);
    }
    img
}

/// Writes an iteration trace as CSV with columns
/// `iter,kkt_res,objective,elapsed_s`.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceEntry]) -> Result<()> {
    writeln!(out, "iter,kkt_res,objective,elapsed_s")?;
    for e in trace {
        writeln!(out, "{},{:.16e},{:.16e},{:.6}", e.iter, e.kkt_res, e.objective, e.elapsed_s)?;
    }
    Ok(())
}

/// Convenience wrapper writing a trace to a file path.
pub fn write_trace_file(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    write_trace_csv(BufWriter::new(File::create(path)?), trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "1, 2, 3").unwrap();
        writeln!(f, "4, 5, 6").unwrap();
        drop(f);
        let h = load_csv(&path).unwrap();
        assert_eq!((h.dims().m, h.dims().n), (2, 3));
        // row 0 col 2 held 3; total mass 21
        assert!((h.at(0, 2) - 3.0 / 21.0).abs() < 1e-12);
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_rejects_ragged_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "1,2\n3\n").unwrap();
        assert!(load_csv(&ragged).is_err());
        let garbage = dir.path().join("g.csv");
        std::fs::write(&garbage, "1,apple\n").unwrap();
        assert!(load_csv(&garbage).is_err());
    }

    #[test]
    fn grayscale_png_loads_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = image::GrayImage::from_fn(3, 2, |x, y| image::Luma([(x + y * 3 + 1) as u8]));
        img.save(&path).unwrap();
        let h = load_grayscale(&path).unwrap();
        assert_eq!((h.dims().m, h.dims().n), (2, 3));
        let total: f64 = h.mass().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // pixel (x=2, y=1) value 6 out of 21
        assert!((h.at(1, 2) - 6.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn synth_specs_parse() {
        let d = load_histogram("synth:dirac:4x4:1,2").unwrap();
        assert!((d.at(1, 2) - 1.0).abs() < 1e-12);
        let u = load_histogram("synth:uniform:3x5").unwrap();
        assert!(u.mass().iter().all(|&v| (v - 1.0 / 15.0).abs() < 1e-12));
        assert!(load_histogram("synth:classic:8x8:7").is_ok());
        assert!(load_histogram("synth:shapes:8x8:7").is_ok());
        assert!(load_histogram("synth:nope:8x8").is_err());
        assert!(load_histogram("no-such-format.xyz").is_err());
    }

    #[test]
    fn generators_deterministic() {
        let dims = GridDims::new(16, 16).unwrap();
        let a = classic_field(dims, 42).unwrap();
        let b = classic_field(dims, 42).unwrap();
        assert_eq!(a.mass(), b.mass());
        let c = classic_field(dims, 43).unwrap();
        assert_ne!(a.mass(), c.mass());
        let s = shapes_field(dims, 42).unwrap();
        let t = shapes_field(dims, 42).unwrap();
        assert_eq!(s.mass(), t.mass());
    }

    #[test]
    fn classic_field_strictly_positive() {
        let dims = GridDims::new(12, 9).unwrap();
        let h = classic_field(dims, 5).unwrap();
        assert!(h.mass().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn synth_image_deterministic() {
        let a = synth_image(32, 32, 9);
        let b = synth_image(32, 32, 9);
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn trace_csv_schema() {
        let trace = vec![TraceEntry {
            iter: 3,
            kkt_res: 1e-4,
            res_norm: 2e-4,
            objective: 0.5,
            elapsed_s: 0.01,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,kkt_res,objective,elapsed_s");
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], "3");
        assert!((fields[1].parse::<f64>().unwrap() - 1e-4).abs() < 1e-18);
    }
}
