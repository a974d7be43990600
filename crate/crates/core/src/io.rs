//! Binary PPM/PGM images and OTB-style box files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::features::{BoundingBox, Frame};

/// Reads a binary PPM (P6) or PGM (P5) file as RGB.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let reader = BufReader::new(File::open(path)?);
    Ok(image::load(reader, ImageFormat::Pnm)?.to_rgb8())
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(frame.as_raw(), frame.width(), frame.height(), ExtendedColorType::Rgb8)?;
    out.flush()?;
    Ok(())
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::L8)?;
    out.flush()?;
    Ok(())
}

/// Patch weights in `[0, 1]` as a `cols x rows` graymap with gray level
/// `round(255 w)`; weights are read in row-major patch order.
pub fn weight_map(weights: &DVector<f64>, rows: usize, cols: usize) -> Result<GrayImage> {
    if weights.len() != rows * cols {
        return Err(Error::dim("weight_map", rows * cols, weights.len()));
    }
    Ok(GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let w = weights[y as usize * cols + x as usize];
        image::Luma([(255.0 * w.clamp(0.0, 1.0)).round() as u8])
    }))
}

/// All `.ppm`/`.pgm` files of `dir`, sorted by file name.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no PPM/PGM frames in {}", dir.display())));
    }
    Ok(paths)
}

pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    frame_paths(dir)?.iter().map(|p| read_frame(p)).collect()
}

/// Parses one `x,y,w,h[,...]` line; tabs and spaces are accepted as separators.
pub fn parse_box_line(line: &str) -> Result<BoundingBox> {
    let normalized: String = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(",");
    normalized.parse()
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>> {
    let reader = BufReader::new(File::open(path)?);
    let mut boxes = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let b = parse_box_line(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), k + 1)))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn write_boxes(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for b in boxes {
        writeln!(out, "{b}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `x,y,w,h,confidence` lines.
pub fn write_scored_boxes(path: &Path, boxes: &[(BoundingBox, f64)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (b, conf) in boxes {
        writeln!(out, "{b},{conf:.6}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_sequence, SyntheticSpec};

    #[test]
    fn frames_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let seq = gen_sequence(&SyntheticSpec { frames: 3, ..SyntheticSpec::default() }).unwrap();
        seq.write_to(dir.path()).unwrap();
        let frames = read_frames(dir.path()).unwrap();
        assert_eq!(frames, seq.frames);
        assert_eq!(read_boxes(&dir.path().join("gt.txt")).unwrap(), seq.boxes);
        let head = fs::read(dir.path().join("frame_0001.ppm")).unwrap();
        assert_eq!(&head[..2], b"P6");
    }

    #[test]
    fn weight_map_gray_levels() {
        let w = DVector::from_vec(vec![0.0, 0.5, 1.0, 0.2]);
        let img = weight_map(&w, 2, 2).unwrap();
        assert_eq!(img.as_raw(), &vec![0, 128, 255, 51]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.pgm");
        write_pgm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..2], b"P5");
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 51]);
        assert!(weight_map(&w, 3, 2).is_err());
    }

    #[test]
    fn box_lines() {
        assert_eq!(parse_box_line("1,2,30,40").unwrap(), BoundingBox::new(1, 2, 30, 40));
        assert_eq!(parse_box_line("1\t2\t30\t40").unwrap(), BoundingBox::new(1, 2, 30, 40));
        assert_eq!(parse_box_line("1,2,30,40,0.75").unwrap(), BoundingBox::new(1, 2, 30, 40));
        assert!(parse_box_line("1,2,30").is_err());
    }

    #[test]
    fn scored_boxes_have_five_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        write_scored_boxes(&path, &[(BoundingBox::new(1, 2, 3, 4), 0.5)]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1,2,3,4,0.500000\n");
        assert_eq!(read_boxes(&path).unwrap(), vec![BoundingBox::new(1, 2, 3, 4)]);
    }
}
