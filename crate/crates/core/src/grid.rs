//! Raster scenes and the patch grid laid over them.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PATCH_SIZE_PX: usize = 128;

/// On-disk encodings accepted by [`load_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneFormat {
    Png,
    Rawf32,
}

/// Sidecar header of a `.rawf32` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub resolution_m_per_px: f64,
}

/// Scene manifest: where the raster lives and how to grid it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub scene_path: PathBuf,
    pub format: SceneFormat,
    #[serde(default = "default_patch_size")]
    pub patch_size_px: usize,
}

fn default_patch_size() -> usize {
    DEFAULT_PATCH_SIZE_PX
}

impl SceneManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: SceneManifest = serde_json::from_str(&text)?;
        if manifest.scene_path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.scene_path = dir.join(&manifest.scene_path);
            }
        }
        Ok(manifest)
    }

    pub fn load(&self) -> Result<(RasterScene, GridSpec)> {
        let scene = load_scene(&self.scene_path, self.format)?;
        let grid = make_grid(&scene, self.patch_size_px)?;
        Ok((scene, grid))
    }
}

/// A multi-band raster held band-sequential (band, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterScene {
    width_px: usize,
    height_px: usize,
    bands: usize,
    resolution_m_per_px: f64,
    data: Vec<f32>,
}

impl RasterScene {
    pub fn new(
        width_px: usize,
        height_px: usize,
        bands: usize,
        resolution_m_per_px: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::Scene("width and height must be at least 1".into()));
        }
        if bands == 0 {
            return Err(Error::Scene("band count must be at least 1".into()));
        }
        if !(resolution_m_per_px > 0.0) {
            return Err(Error::Scene("resolution must be positive".into()));
        }
        let expected = width_px * height_px * bands;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width_px,
            height_px,
            bands,
            resolution_m_per_px,
            data,
        })
    }

    pub fn width_px(&self) -> usize {
        self.width_px
    }

    pub fn height_px(&self) -> usize {
        self.height_px
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn resolution_m_per_px(&self) -> f64 {
        self.resolution_m_per_px
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height_px + row) * self.width_px + col]
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let plane = self.width_px * self.height_px;
        &self.data[band * plane..(band + 1) * plane]
    }

    pub fn header(&self) -> RawHeader {
        RawHeader {
            width: self.width_px,
            height: self.height_px,
            bands: self.bands,
            resolution_m_per_px: self.resolution_m_per_px,
        }
    }
}

/// The rows x cols grid of non-overlapping square patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub patch_size_px: usize,
    pub resolution_m_per_px: f64,
}

/// Address of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRef {
    pub row: usize,
    pub col: usize,
}

impl PatchRef {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl GridSpec {
    /// A grid not tied to a loaded raster (synthetic scenes, imported features).
    pub fn new(
        rows: usize,
        cols: usize,
        patch_size_px: usize,
        resolution_m_per_px: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        if patch_size_px == 0 || !(resolution_m_per_px > 0.0) {
            return Err(Error::Config(
                "patch size and resolution must be positive".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            patch_size_px,
            resolution_m_per_px,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side length of a patch on the ground, in meters.
    pub fn patch_ground_m(&self) -> f64 {
        self.patch_size_px as f64 * self.resolution_m_per_px
    }

    pub fn contains(&self, patch: PatchRef) -> bool {
        patch.row < self.rows && patch.col < self.cols
    }

    pub fn check(&self, patch: PatchRef) -> Result<()> {
        if self.contains(patch) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                row: patch.row,
                col: patch.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    #[inline]
    pub fn id(&self, patch: PatchRef) -> usize {
        patch.row * self.cols + patch.col
    }

    #[inline]
    pub fn patch(&self, id: usize) -> PatchRef {
        PatchRef::new(id / self.cols, id % self.cols)
    }

    /// Center-to-center ground distance between two cells, in meters.
    pub fn center_distance_m(&self, a: PatchRef, b: PatchRef) -> f64 {
        let dr = a.row as f64 - b.row as f64;
        let dc = a.col as f64 - b.col as f64;
        (dr * dr + dc * dc).sqrt() * self.patch_ground_m()
    }

    /// Cells (including `center`) whose center lies within `radius_m` of it.
    pub fn cells_within(&self, center: PatchRef, radius_m: f64) -> Vec<PatchRef> {
        let reach = (radius_m / self.patch_ground_m()).floor() as usize;
        let r0 = center.row.saturating_sub(reach);
        let r1 = (center.row + reach).min(self.rows - 1);
        let c0 = center.col.saturating_sub(reach);
        let c1 = (center.col + reach).min(self.cols - 1);
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                let p = PatchRef::new(row, col);
                if self.center_distance_m(center, p) <= radius_m {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Pixels of a single patch, band-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPixels {
    pub bands: usize,
    pub size: usize,
    pub data: Vec<f32>,
}

impl PatchPixels {
    pub fn new(bands: usize, size: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), bands * size * size);
        Self { bands, size, data }
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.data[band * plane..(band + 1) * plane]
    }

    #[inline]
    pub fn at(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.size + row) * self.size + col]
    }
}

pub fn load_scene(path: &Path, format: SceneFormat) -> Result<RasterScene> {
    match format {
        SceneFormat::Png => load_png(path),
        SceneFormat::Rawf32 => load_rawf32(path),
    }
}

fn load_png(path: &Path) -> Result<RasterScene> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let plane = width * height;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().into_iter().map(f32::from).collect();
            RasterScene::new(width, height, 1, 1.0, data)
        }
        image::DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            let mut data = vec![0.0f32; plane * 3];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for b in 0..3 {
                    data[b * plane + i] = f32::from(px[b]);
                }
            }
            RasterScene::new(width, height, 3, 1.0, data)
        }
        other => Err(Error::Scene(format!(
            "PNG input must be 8-bit gray or RGB, got {:?}",
            other.color()
        ))),
    }
}

/// Sidecar path for a rawf32 payload: `<name>.json` next to `<name>.rawf32`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn load_rawf32(path: &Path) -> Result<RasterScene> {
    let header_path = sidecar_path(path);
    let header_text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: RawHeader = serde_json::from_str(&header_text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Scene(format!(
            "payload length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let expected = header.width * header.height * header.bands;
    let actual = bytes.len() / 4;
    if header.bands == 0 {
        return Err(Error::Scene("band count must be at least 1".into()));
    }
    if expected != actual {
        return Err(Error::SizeMismatch { expected, actual });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    RasterScene::new(
        header.width,
        header.height,
        header.bands,
        header.resolution_m_per_px,
        data,
    )
}

/// Writes `scene` as `<path>` plus its JSON sidecar.
pub fn write_rawf32(scene: &RasterScene, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(scene.data.len() * 4);
    for v in &scene.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let header_path = sidecar_path(path);
    let header = serde_json::to_string_pretty(&scene.header())?;
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))
}

/// Lays the patch grid over `scene`. Border pixels that do not fill a whole
/// patch are dropped.
pub fn make_grid(scene: &RasterScene, patch_size_px: usize) -> Result<GridSpec> {
    if patch_size_px == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    if patch_size_px > scene.width_px.min(scene.height_px) {
        return Err(Error::Config(format!(
            "patch size {patch_size_px} exceeds scene dimensions {}x{}",
            scene.width_px, scene.height_px
        )));
    }
    GridSpec::new(
        scene.height_px / patch_size_px,
        scene.width_px / patch_size_px,
        patch_size_px,
        scene.resolution_m_per_px,
    )
}

pub fn extract_patch(scene: &RasterScene, grid: &GridSpec, patch: PatchRef) -> Result<PatchPixels> {
    grid.check(patch)?;
    let size = grid.patch_size_px;
    let (r0, c0) = (patch.row * size, patch.col * size);
    let mut data = Vec::with_capacity(scene.bands * size * size);
    for band in 0..scene.bands {
        for row in r0..r0 + size {
            let start = (band * scene.height_px + row) * scene.width_px + c0;
            data.extend_from_slice(&scene.data[start..start + size]);
        }
    }
    Ok(PatchPixels::new(scene.bands, size, data))
}

/// Maps a sample to 8 bits with a linear stretch, rounding half up.
#[inline]
pub fn quantize(v: f32, lo: f32, hi: f32) -> u8 {
    let t = ((f64::from(v) - f64::from(lo)) / (f64::from(hi) - f64::from(lo))).clamp(0.0, 1.0);
    (255.0 * t + 0.5).floor() as u8
}

/// Renders one patch as an 8-bit RGB PNG.
pub fn render_patch_png(
    scene: &RasterScene,
    grid: &GridSpec,
    patch: PatchRef,
    band_mapping: [usize; 3],
    stretch: (f32, f32),
) -> Result<Vec<u8>> {
    if let Some(b) = band_mapping.iter().find(|b| **b >= scene.bands) {
        return Err(Error::Config(format!(
            "band {b} out of range for a {}-band scene",
            scene.bands
        )));
    }
    let (lo, hi) = stretch;
    if !(lo < hi) {
        return Err(Error::Config(format!("stretch requires lo < hi, got ({lo}, {hi})")));
    }
    let pixels = extract_patch(scene, grid, patch)?;
    let size = pixels.size;
    let img = RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (row, col) = (y as usize, x as usize);
        image::Rgb(band_mapping.map(|b| quantize(pixels.at(b, row, col), lo, hi)))
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Default display mapping: first three bands, or the single band as gray.
pub fn default_band_mapping(bands: usize) -> [usize; 3] {
    if bands >= 3 {
        [0, 1, 2]
    } else {
        [0, 0, 0]
    }
}

/// Min/max stretch over the mapped bands, widened when the scene is flat.
pub fn minmax_stretch(scene: &RasterScene, band_mapping: [usize; 3]) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for b in band_mapping {
        for v in scene.band(b) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(lo < hi) {
        (lo - 0.5, lo + 0.5)
    } else {
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn indexed_scene(w: usize, h: usize, bands: usize) -> RasterScene {
        let data = (0..w * h * bands).map(|i| i as f32).collect();
        RasterScene::new(w, h, bands, 0.5, data).unwrap()
    }

    fn write_raw(dir: &Path, name: &str, header: &RawHeader, payload: &[f32]) -> PathBuf {
        let path = dir.join(format!("{name}.rawf32"));
        let bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).unwrap();
        fs::write(sidecar_path(&path), serde_json::to_string(header).unwrap()).unwrap();
        path
    }

    #[test]
    fn rawf32_identity_load() {
        let dir = tempdir().unwrap();
        let header = RawHeader {
            width: 2,
            height: 2,
            bands: 1,
            resolution_m_per_px: 0.5,
        };
        let path = write_raw(dir.path(), "tiny", &header, &[1.0, 2.0, 3.0, 4.0]);
        let scene = load_scene(&path, SceneFormat::Rawf32).unwrap();
        assert_eq!(scene.pixel(0, 0, 0), 1.0);
        assert_eq!(scene.pixel(0, 1, 1), 4.0);
        assert_eq!(scene.resolution_m_per_px(), 0.5);
    }

    #[test]
    fn rawf32_size_mismatch() {
        let dir = tempdir().unwrap();
        let header = RawHeader {
            width: 100,
            height: 100,
            bands: 3,
            resolution_m_per_px: 0.5,
        };
        let path = write_raw(dir.path(), "short", &header, &vec![0.0; 100 * 100 * 2]);
        match load_scene(&path, SceneFormat::Rawf32) {
            Err(Error::SizeMismatch { expected, actual }) => {
                assert_eq!(expected, 30_000);
                assert_eq!(actual, 20_000);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn rawf32_zero_bands_rejected() {
        let dir = tempdir().unwrap();
        let header = RawHeader {
            width: 2,
            height: 2,
            bands: 0,
            resolution_m_per_px: 0.5,
        };
        let path = write_raw(dir.path(), "empty", &header, &[]);
        assert!(matches!(
            load_scene(&path, SceneFormat::Rawf32),
            Err(Error::Scene(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_scene(Path::new("/nonexistent/x.png"), SceneFormat::Png).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn png_white_rgb() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("white.png");
        RgbImage::from_pixel(4, 4, image::Rgb([255, 255, 255]))
            .save(&path)
            .unwrap();
        let scene = load_scene(&path, SceneFormat::Png).unwrap();
        assert_eq!(scene.bands(), 3);
        assert!(scene.data().iter().all(|v| *v == 255.0));
    }

    #[test]
    fn grid_floor_arithmetic() {
        let scene = RasterScene::new(1000, 1000, 1, 0.5, vec![0.0; 1_000_000]).unwrap();
        let grid = make_grid(&scene, 128).unwrap();
        assert_eq!((grid.rows, grid.cols), (7, 7));
        assert_eq!(grid.patch_ground_m(), 64.0);

        let small = RasterScene::new(128, 128, 1, 0.5, vec![0.0; 128 * 128]).unwrap();
        let grid = make_grid(&small, 128).unwrap();
        assert_eq!((grid.rows, grid.cols), (1, 1));
        assert!(make_grid(&small, 129).is_err());
    }

    #[test]
    fn constant_scene_constant_patches() {
        let scene = RasterScene::new(8, 8, 2, 1.0, vec![7.0; 128]).unwrap();
        let grid = make_grid(&scene, 4).unwrap();
        for id in 0..grid.len() {
            let p = extract_patch(&scene, &grid, grid.patch(id)).unwrap();
            assert!(p.data.iter().all(|v| *v == 7.0));
        }
        assert!(matches!(
            extract_patch(&scene, &grid, PatchRef::new(grid.rows, 0)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn patch_corners_match_index_arithmetic() {
        // 10 wide, 7 tall, 2 bands; value = linear index.
        let (w, h) = (10, 7);
        let scene = indexed_scene(w, h, 2);
        let grid = make_grid(&scene, 3).unwrap();
        assert_eq!((grid.rows, grid.cols), (2, 3));
        let p = extract_patch(&scene, &grid, PatchRef::new(1, 2)).unwrap();
        let idx = |b: usize, r: usize, c: usize| ((b * h + r) * w + c) as f32;
        assert_eq!(p.at(0, 0, 0), idx(0, 3, 6));
        assert_eq!(p.at(0, 2, 2), idx(0, 5, 8));
        assert_eq!(p.at(1, 0, 2), idx(1, 3, 8));
        assert_eq!(p.at(1, 2, 0), idx(1, 5, 6));
    }

    #[test]
    fn patches_tile_cropped_scene_exactly_once() {
        let scene = indexed_scene(11, 9, 1);
        let grid = make_grid(&scene, 4).unwrap();
        let mut seen = vec![0u8; 11 * 9];
        for id in 0..grid.len() {
            let p = extract_patch(&scene, &grid, grid.patch(id)).unwrap();
            for v in &p.data {
                seen[*v as usize] += 1;
            }
        }
        for row in 0..9 {
            for col in 0..11 {
                let expect = u8::from(row < grid.rows * 4 && col < grid.cols * 4);
                assert_eq!(seen[row * 11 + col], expect, "pixel ({row},{col})");
            }
        }
    }

    fn decode(png: &[u8]) -> RgbImage {
        image::load_from_memory_with_format(png, ImageFormat::Png)
            .unwrap()
            .to_rgb8()
    }

    #[test]
    fn render_stretch_endpoints_and_midpoint() {
        let grid_of = |v: f32| {
            let scene = RasterScene::new(4, 4, 3, 1.0, vec![v; 48]).unwrap();
            let grid = make_grid(&scene, 2).unwrap();
            let png = render_patch_png(&scene, &grid, PatchRef::new(1, 1), [0, 1, 2], (10.0, 20.0))
                .unwrap();
            decode(&png)
        };
        assert!(grid_of(10.0).pixels().all(|p| p.0 == [0, 0, 0]));
        assert!(grid_of(20.0).pixels().all(|p| p.0 == [255, 255, 255]));
        assert!(grid_of(15.0).pixels().all(|p| p.0 == [128, 128, 128]));
        assert!(grid_of(-5.0).pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn render_rejects_bad_bands_and_stretch() {
        let scene = RasterScene::new(4, 4, 1, 1.0, vec![0.0; 16]).unwrap();
        let grid = make_grid(&scene, 2).unwrap();
        let p = PatchRef::new(0, 0);
        assert!(render_patch_png(&scene, &grid, p, [0, 1, 0], (0.0, 1.0)).is_err());
        assert!(render_patch_png(&scene, &grid, p, [0, 0, 0], (1.0, 1.0)).is_err());
    }

    #[test]
    fn cells_within_radius() {
        let grid = GridSpec::new(5, 5, 128, 0.5).unwrap();
        let c = PatchRef::new(2, 2);
        assert_eq!(grid.cells_within(c, 10.0), vec![c]);
        assert_eq!(grid.cells_within(c, 64.0).len(), 5);
        assert_eq!(grid.cells_within(c, 64.0 * 1.5).len(), 9);
        assert_eq!(grid.cells_within(PatchRef::new(0, 0), 64.0 * 1.5).len(), 4);
    }
}
