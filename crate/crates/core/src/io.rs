//! File formats: CSV point, segment and window files, and ESRI ASCII grids.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point, PointPattern, Raster, Segment, SegmentPattern, Window};

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("record {line}: cannot parse {what} '{s}'")))
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

/// Reads a point pattern CSV with header `x,y[,mark]`.
pub fn read_points<R: Read>(input: R) -> Result<PointPattern> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let hdr = headers(&mut rdr)?;
    if hdr.len() < 2 || hdr[0] != "x" || hdr[1] != "y" {
        return Err(Error::Parse(format!(
            "point file header must start with x,y; got {}",
            hdr.join(",")
        )));
    }
    let mark_name = hdr.get(2).cloned();
    let mut points = Vec::new();
    let mut marks = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        points.push(Point::new(
            parse_f64(&rec[0], "x", i + 1)?,
            parse_f64(&rec[1], "y", i + 1)?,
        ));
        if mark_name.is_some() {
            marks.push(rec.get(2).unwrap_or("").to_string());
        }
    }
    match mark_name {
        Some(name) => PointPattern::with_marks(points, marks, Some(name)),
        None => PointPattern::new(points),
    }
}

pub fn write_points<W: Write>(out: W, pattern: &PointPattern) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    match (pattern.marks(), pattern.mark_name()) {
        (Some(marks), name) => {
            wtr.write_record(["x", "y", name.unwrap_or("mark")])?;
            for (p, m) in pattern.points().iter().zip(marks) {
                wtr.write_record([p.x.to_string(), p.y.to_string(), m.clone()])?;
            }
        }
        (None, _) => {
            wtr.write_record(["x", "y"])?;
            for p in pattern.points() {
                wtr.write_record([p.x.to_string(), p.y.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a segment CSV with header `x1,y1,x2,y2`.
pub fn read_segments<R: Read>(input: R) -> Result<SegmentPattern> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let hdr = headers(&mut rdr)?;
    if hdr.len() < 4 || hdr[..4] != ["x1", "y1", "x2", "y2"] {
        return Err(Error::Parse(format!(
            "segment file header must be x1,y1,x2,y2; got {}",
            hdr.join(",")
        )));
    }
    let mut segs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v: Vec<f64> = (0..4)
            .map(|k| parse_f64(&rec[k], &hdr[k], i + 1))
            .collect::<Result<_>>()?;
        segs.push(Segment::new(Point::new(v[0], v[1]), Point::new(v[2], v[3])));
    }
    SegmentPattern::new(segs)
}

pub fn write_segments<W: Write>(out: W, segments: &SegmentPattern) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["x1", "y1", "x2", "y2"])?;
    for s in segments.segments() {
        wtr.write_record([s.a.x, s.a.y, s.b.x, s.b.y].map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a polygon vertex list CSV with header `x,y`.
pub fn read_window<R: Read>(input: R) -> Result<Window> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let hdr = headers(&mut rdr)?;
    if hdr.len() < 2 || hdr[0] != "x" || hdr[1] != "y" {
        return Err(Error::Parse(format!(
            "window file header must be x,y; got {}",
            hdr.join(",")
        )));
    }
    let mut verts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        verts.push(Point::new(
            parse_f64(&rec[0], "x", i + 1)?,
            parse_f64(&rec[1], "y", i + 1)?,
        ));
    }
    Window::new(verts)
}

pub fn write_window<W: Write>(out: W, w: &Window) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["x", "y"])?;
    for v in w.vertices() {
        wtr.write_record([v.x.to_string(), v.y.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an ESRI ASCII grid. Both corner and center registration are accepted.
pub fn read_ascii_grid<R: Read>(input: R) -> Result<Raster> {
    let reader = BufReader::new(input);
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = false;
    let mut cell = None;
    let mut nodata = crate::geom::DEFAULT_NODATA;
    let mut values = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or("");
        if values.is_empty()
            && first
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic())
        {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            let val = parts.next().ok_or_else(|| {
                Error::Parse(format!("line {}: header '{key}' has no value", lineno + 1))
            })?;
            let num = parse_f64(val, &key, lineno + 1)?;
            match key.as_str() {
                "ncols" => ncols = Some(num as usize),
                "nrows" => nrows = Some(num as usize),
                "xllcorner" => xll = Some(num),
                "yllcorner" => yll = Some(num),
                "xllcenter" => {
                    xll = Some(num);
                    centered = true;
                }
                "yllcenter" => {
                    yll = Some(num);
                    centered = true;
                }
                "cellsize" => cell = Some(num),
                "nodata_value" => nodata = num,
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown header key '{key}'",
                        lineno + 1
                    )))
                }
            }
            continue;
        }
        for tok in trimmed.split_whitespace() {
            values.push(parse_f64(tok, "cell value", lineno + 1)?);
        }
    }
    let missing = |k: &str| Error::Parse(format!("ASCII grid header is missing '{k}'"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cell = cell.ok_or_else(|| missing("cellsize"))?;
    let (mut x0, mut y0) = (
        xll.ok_or_else(|| missing("xllcorner"))?,
        yll.ok_or_else(|| missing("yllcorner"))?,
    );
    if centered {
        x0 -= cell / 2.0;
        y0 -= cell / 2.0;
    }
    Raster::from_values(Point::new(x0, y0), cell, ncols, nrows, values, nodata)
}

/// Writes an ESRI ASCII grid with corner registration. Values use the
/// shortest round-trip decimal form, so output is exact and reproducible.
pub fn write_ascii_grid<W: Write>(out: W, r: &Raster) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "ncols {}", r.ncols())?;
    writeln!(w, "nrows {}", r.nrows())?;
    writeln!(w, "xllcorner {}", r.origin().x)?;
    writeln!(w, "yllcorner {}", r.origin().y)?;
    writeln!(w, "cellsize {}", r.cell())?;
    writeln!(w, "NODATA_value {}", r.nodata())?;
    for row in 0..r.nrows() {
        let start = row * r.ncols();
        let line: Vec<String> = r.values()[start..start + r.ncols()]
            .iter()
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_points(path: impl AsRef<Path>) -> Result<PointPattern> {
    read_points(File::open(path)?)
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<SegmentPattern> {
    read_segments(File::open(path)?)
}

pub fn load_window(path: impl AsRef<Path>) -> Result<Window> {
    read_window(File::open(path)?)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    read_ascii_grid(File::open(path)?)
}

pub fn save_raster(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    write_ascii_grid(File::create(path)?, r)
}

pub fn save_points(path: impl AsRef<Path>, p: &PointPattern) -> Result<()> {
    write_points(File::create(path)?, p)
}
