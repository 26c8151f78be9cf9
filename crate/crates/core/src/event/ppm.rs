use std::path::Path;

use super::RgbImage;
use crate::error::{Error, Result};

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Parses binary PPM (`P6`, maxval 255). Header comments are allowed.
pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    fn token(bytes: &[u8], pos: &mut usize, line: &mut usize) -> Option<(String, usize)> {
        loop {
            match bytes.get(*pos)? {
                b'#' => {
                    while *bytes.get(*pos)? != b'\n' {
                        *pos += 1;
                    }
                }
                b'\n' => {
                    *line += 1;
                    *pos += 1;
                }
                c if c.is_ascii_whitespace() => *pos += 1,
                _ => break,
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            *pos += 1;
        }
        Some((String::from_utf8_lossy(&bytes[start..*pos]).into_owned(), *line))
    }
    let (mut pos, mut line) = (0, 1);
    let mut fields = Vec::with_capacity(4);
    for what in ["magic", "width", "height", "maxval"] {
        match token(bytes, &mut pos, &mut line) {
            Some(t) => fields.push(t),
            None => return Err(Error::parse(path, line, format!("truncated header, missing {what}"))),
        }
    }
    if fields[0].0 != "P6" {
        return Err(Error::parse(path, fields[0].1, format!("expected magic P6, found {:?}", fields[0].0)));
    }
    let num = |i: usize| -> Result<usize> {
        let (ref s, l) = fields[i];
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(path, l, format!("invalid header value {s:?}")))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(Error::parse(path, fields[3].1, format!("maxval {maxval} unsupported, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = width * height * 3;
    let raster = bytes.get(start..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(Error::parse(
            path,
            fields[3].1 + 1,
            format!("raster has {} bytes, expected {need}", raster.len()),
        ));
    }
    Ok(RgbImage {
        width,
        height,
        data: raster.to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(path, &bytes)
}
