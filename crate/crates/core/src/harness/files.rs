//! On-disk formats: scene files (TOML), snapshot containers (binary), and
//! point clouds (ASCII XYZ-with-power).
//!
//! # Snapshot container layout (little-endian)
//!
//! ```text
//! magic   4 bytes  "TSNB"
//! version u16      currently 1
//! flags   u16      reserved, 0
//! count   u32      number of stacks
//! per stack:
//!   row, col       u32, u32   pixel indices
//!   n_snapshots    u32
//!   channels       u32
//!   snr_db         f64 bits
//!   seed           u64
//!   samples        n_snapshots * channels * (f32 re, f32 im), row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CloudPoint;
use crate::simulate::{Scatterer, SceneGeometry, SceneSpec, SnapshotStack};
use crate::C64;

const CONTAINER_MAGIC: &[u8; 4] = b"TSNB";
const CONTAINER_VERSION: u16 = 1;

/// Scene file schema: a geometry block, a grid block, and one `[[pixel]]`
/// table per pixel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    geometry: SceneGeometry,
    grid: SceneGridBlock,
    #[serde(default, rename = "pixel")]
    pixels: Vec<ScenePixelBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneGridBlock {
    rows: u32,
    cols: u32,
    pixel_spacing_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenePixelBlock {
    row: u32,
    col: u32,
    scatterers: Vec<Scatterer>,
}

/// Write a scene to its TOML file format.
pub fn save_scene(scene: &SceneSpec, path: &Path) -> Result<()> {
    let file = SceneFile {
        geometry: scene.geometry.clone(),
        grid: SceneGridBlock {
            rows: scene.rows,
            cols: scene.cols,
            pixel_spacing_m: scene.pixel_spacing_m,
        },
        pixels: scene
            .pixels
            .iter()
            .map(|(&(row, col), scatterers)| ScenePixelBlock {
                row,
                col,
                scatterers: scatterers.clone(),
            })
            .collect(),
    };
    let text =
        toml::to_string(&file).map_err(|e| Error::Parse(format!("serialize scene: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a scene from its TOML file format.
pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)?;
    let file: SceneFile =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("scene file: {e}")))?;
    let mut pixels = BTreeMap::new();
    for block in file.pixels {
        if block.row >= file.grid.rows || block.col >= file.grid.cols {
            return Err(Error::Parse(format!(
                "pixel ({}, {}) outside the {}x{} scene grid",
                block.row, block.col, file.grid.rows, file.grid.cols
            )));
        }
        if pixels.insert((block.row, block.col), block.scatterers).is_some() {
            return Err(Error::Parse(format!(
                "pixel ({}, {}) listed twice",
                block.row, block.col
            )));
        }
    }
    if pixels.is_empty() {
        return Err(Error::Parse("scene file lists no pixels".into()));
    }
    Ok(SceneSpec {
        geometry: file.geometry,
        rows: file.grid.rows,
        cols: file.grid.cols,
        pixel_spacing_m: file.grid.pixel_spacing_m,
        pixels,
    })
}

/// Write pixel-tagged snapshot stacks into one binary container.
pub fn write_snapshot_container(
    path: &Path,
    stacks: &[((u32, u32), SnapshotStack)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(stacks.len() as u32).to_le_bytes())?;
    for ((row, col), stack) in stacks {
        w.write_all(&row.to_le_bytes())?;
        w.write_all(&col.to_le_bytes())?;
        w.write_all(&(stack.n_snapshots() as u32).to_le_bytes())?;
        w.write_all(&(stack.channel_count() as u32).to_le_bytes())?;
        w.write_all(&stack.snr_db.to_le_bytes())?;
        w.write_all(&stack.seed.to_le_bytes())?;
        for r in 0..stack.n_snapshots() {
            for c in 0..stack.channel_count() {
                let v = stack.snapshots[(r, c)];
                w.write_all(&(v.re as f32).to_le_bytes())?;
                w.write_all(&(v.im as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Read a snapshot container written by [`write_snapshot_container`].
pub fn read_snapshot_container(path: &Path) -> Result<Vec<((u32, u32), SnapshotStack)>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::Parse("not a snapshot container (bad magic)".into()));
    }
    let version = u16::from_le_bytes(read_exact::<2>(&mut r)?);
    if version != CONTAINER_VERSION {
        return Err(Error::Parse(format!(
            "unsupported container version {version}"
        )));
    }
    let _flags = u16::from_le_bytes(read_exact::<2>(&mut r)?);
    let count = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    let mut stacks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let row = u32::from_le_bytes(read_exact::<4>(&mut r)?);
        let col = u32::from_le_bytes(read_exact::<4>(&mut r)?);
        let n = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let channels = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let snr_db = f64::from_le_bytes(read_exact::<8>(&mut r)?);
        let seed = u64::from_le_bytes(read_exact::<8>(&mut r)?);
        if n == 0 || channels == 0 {
            return Err(Error::Parse("container stack with empty dimensions".into()));
        }
        let mut snapshots = DMatrix::<C64>::zeros(n, channels);
        for ri in 0..n {
            for ci in 0..channels {
                let re = f32::from_le_bytes(read_exact::<4>(&mut r)?);
                let im = f32::from_le_bytes(read_exact::<4>(&mut r)?);
                snapshots[(ri, ci)] = C64::new(re as f64, im as f64);
            }
        }
        stacks.push((
            (row, col),
            SnapshotStack {
                snapshots,
                snr_db,
                seed,
            },
        ));
    }
    Ok(stacks)
}

/// Parse an ASCII XYZ(-with-power) cloud: whitespace separated `x y z [p]`,
/// one point per line, `#` comments allowed.
pub fn read_xyz(path: &Path) -> Result<Vec<(CloudPoint, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::Parse(format!(
                "line {}: expected `x y z [power]`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        let x = parse(fields[0])?;
        let y = parse(fields[1])?;
        let z = parse(fields[2])?;
        let p = if fields.len() == 4 { parse(fields[3])? } else { 1.0 };
        out.push((CloudPoint::new(x, y, z), p));
    }
    Ok(out)
}
