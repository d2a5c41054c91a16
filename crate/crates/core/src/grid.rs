//! Dense 2D scalar fields with placement metadata.
//!
//! A [`RasterGrid`] holds binary masks, aerial intensities and IIP maps alike.
//! Row 0 is the lowest y; pixel `(0, 0)` is centered at `origin`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checksum;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    /// Center of pixel (0, 0) in nm.
    pub origin: (f64, f64),
    /// Linear pixels per nm along each axis.
    pub px_per_nm: f64,
    /// Row-major values, `values[y * width + x]`.
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn zeros(width: usize, height: usize, origin: (f64, f64), px_per_nm: f64) -> Self {
        Self::filled(width, height, origin, px_per_nm, 0.0)
    }

    pub fn filled(width: usize, height: usize, origin: (f64, f64), px_per_nm: f64, v: f64) -> Self {
        RasterGrid {
            width,
            height,
            origin,
            px_per_nm,
            values: vec![v; width * height],
        }
    }

    pub fn from_values(
        width: usize,
        height: usize,
        origin: (f64, f64),
        px_per_nm: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if !(px_per_nm > 0.0) {
            return Err(Error::Param(format!("px_per_nm must be > 0, got {px_per_nm}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("grid values must be finite".into()));
        }
        Ok(RasterGrid {
            width,
            height,
            origin,
            px_per_nm,
            values,
        })
    }

    /// Same placement, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        RasterGrid {
            width: self.width,
            height: self.height,
            origin: self.origin,
            px_per_nm: self.px_per_nm,
            values,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    /// Value at a signed pixel index, zero outside the grid.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.values[y as usize * self.width + x as usize]
        }
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Nanometer coordinates of a pixel center.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        (
            self.origin.0 + x as f64 / self.px_per_nm,
            self.origin.1 + y as f64 / self.px_per_nm,
        )
    }

    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.values.len() * 8 + 40);
        bytes.extend_from_slice(&(self.width as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u64).to_le_bytes());
        bytes.extend_from_slice(&self.origin.0.to_le_bytes());
        bytes.extend_from_slice(&self.origin.1.to_le_bytes());
        bytes.extend_from_slice(&self.px_per_nm.to_le_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        checksum::digest_bytes(&bytes)
    }

    pub fn same_dims(&self, other: &RasterGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Binary portable graymap: `P5`, maxval 255, row-major, `round(255 * v)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.values
                .iter()
                .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
        );
        out
    }

    /// Parses a `P5` graymap into values `byte / 255`. Placement metadata is
    /// supplied by the caller (see [`GridMeta`]).
    pub fn from_pgm(bytes: &[u8], origin: (f64, f64), px_per_nm: f64) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
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
                return Err(Error::Format("truncated graymap header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::Format(format!("bad graymap magic {:?}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad graymap header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let raster = bytes
            .get(pos..)
            .filter(|r| r.len() == width * height)
            .ok_or_else(|| Error::Format("graymap raster length does not match header".into()))?;
        let values = raster.iter().map(|&b| b as f64 / 255.0).collect();
        RasterGrid::from_values(width, height, origin, px_per_nm, values)
    }

    /// Writes `<path>` as a graymap and `<path>.meta` with placement data.
    pub fn save_pgm(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let pgm = self.to_pgm();
        let meta = GridMeta {
            width: self.width,
            height: self.height,
            origin: self.origin,
            px_per_nm: self.px_per_nm,
            checksum: checksum::digest_bytes(&pgm),
        };
        fs::write(path, &pgm)?;
        fs::write(sidecar_path(path), meta.to_text(extra))?;
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let pgm = fs::read(path)?;
        let meta = GridMeta::parse(&fs::read_to_string(sidecar_path(path))?)?;
        let found = checksum::digest_bytes(&pgm);
        if found != meta.checksum {
            return Err(Error::Checksum {
                what: path.display().to_string(),
                expected: meta.checksum,
                found,
            });
        }
        let grid = RasterGrid::from_pgm(&pgm, meta.origin, meta.px_per_nm)?;
        if grid.dims() != (meta.width, meta.height) {
            return Err(Error::Format("graymap dims disagree with sidecar".into()));
        }
        Ok(grid)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

/// Sidecar metadata written next to every exported graymap.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub width: usize,
    pub height: usize,
    pub origin: (f64, f64),
    pub px_per_nm: f64,
    pub checksum: String,
}

impl GridMeta {
    pub fn to_text(&self, extra: &[(&str, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "origin_x = {:?}", self.origin.0);
        let _ = writeln!(s, "origin_y = {:?}", self.origin.1);
        let _ = writeln!(s, "px_per_nm = {:?}", self.px_per_nm);
        for (k, v) in extra {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "checksum = {}", self.checksum);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("missing sidecar field {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad sidecar field {k}")))
        };
        Ok(GridMeta {
            width: num("width")? as usize,
            height: num("height")? as usize,
            origin: (num("origin_x")?, num("origin_y")?),
            px_per_nm: num("px_per_nm")?,
            checksum: get("checksum")?.to_string(),
        })
    }
}

/// Parses `key = value` lines, ignoring blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format(format!("expected `key = value`, got {l:?}")))
        })
        .collect()
}
