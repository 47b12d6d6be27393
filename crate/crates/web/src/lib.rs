//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! The `*_view` functions are plain Rust so they can be tested natively; the
//! exported wrappers only convert errors for JavaScript.

use srgt_core::eval::{error_field, field_image, image_from_points, interp_snapshot, FieldImage};
use srgt_core::interp::InterpConfig;
use srgt_core::mesh::{build_mesh, coarsen_snapshot, Mesh, Snapshot};
use srgt_core::neighborhood::{knn_neighbors, relative_positions};
use srgt_core::synth::{generate_snapshot, SurrogateParams};
use srgt_core::{Error, Result, FEATURE_NAMES, P_FINE};
use wasm_bindgen::prelude::*;

/// Element edge length of the demo domain.
const H: f64 = 5e-4;

/// RGBA raster with the value range behind its colors.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Raster {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    min: f64,
    max: f64,
}

#[wasm_bindgen]
impl Raster {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f64 {
        self.min
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> f64 {
        self.max
    }
}

// dark blue, teal, green, yellow
const RAMP: [[f64; 3]; 4] = [[38.0, 20.0, 90.0], [30.0, 140.0, 140.0], [110.0, 200.0, 80.0], [250.0, 230.0, 40.0]];

fn color(level: u8) -> [u8; 3] {
    let x = level as f64 / 255.0 * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let t = x - i as f64;
    std::array::from_fn(|c| (RAMP[i][c] + t * (RAMP[i + 1][c] - RAMP[i][c])).round() as u8)
}

fn colorize(img: FieldImage) -> Raster {
    let rgba = img
        .pixels
        .iter()
        .flat_map(|&g| {
            let [r, gr, b] = color(g);
            [r, gr, b, 255]
        })
        .collect();
    Raster {
        width: img.width,
        height: img.height,
        rgba,
        min: img.min,
        max: img.max,
    }
}

fn demo_mesh(nex: usize, ney: usize) -> Result<Mesh> {
    build_mesh(nex, ney, nex as f64 * H, ney as f64 * H, P_FINE)
}

fn demo_snapshot(nex: usize, ney: usize, time: f64) -> Result<Snapshot> {
    let mesh = demo_mesh(nex, ney)?;
    generate_snapshot(&mesh, time, &SurrogateParams::for_mesh(&mesh))
}

fn check_feature(feature: usize) -> Result<()> {
    if feature >= FEATURE_NAMES.len() {
        return Err(Error::Index { index: feature, len: FEATURE_NAMES.len() });
    }
    Ok(())
}

/// One feature of the fine surrogate field.
pub fn field_view(nex: usize, ney: usize, time: f64, feature: usize) -> Result<Raster> {
    check_feature(feature)?;
    Ok(colorize(field_image(&demo_snapshot(nex, ney, time)?, feature)?))
}

/// Coarse input, KNN-interpolated reconstruction and its error against the fine field.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Reconstruction {
    coarse: Raster,
    interp: Raster,
    error: Raster,
    rmse: f64,
    max_percent: f64,
}

#[wasm_bindgen]
impl Reconstruction {
    #[wasm_bindgen(getter)]
    pub fn coarse(&self) -> Raster {
        self.coarse.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn interp(&self) -> Raster {
        self.interp.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn error(&self) -> Raster {
        self.error.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rmse(&self) -> f64 {
        self.rmse
    }

    /// Largest pointwise error as a percentage of the fine field's range.
    #[wasm_bindgen(getter)]
    pub fn max_percent(&self) -> f64 {
        self.max_percent
    }
}

pub fn reconstruction_view(nex: usize, ney: usize, time: f64, feature: usize, k: usize) -> Result<Reconstruction> {
    check_feature(feature)?;
    let fine = demo_snapshot(nex, ney, time)?;
    let coarse = coarsen_snapshot(&fine)?;
    let interp = interp_snapshot(&coarse, k, &InterpConfig::default())?;
    let err = error_field(&interp, &fine, feature)?;
    let rmse = (err.abs.iter().map(|e| e * e).sum::<f64>() / err.abs.len() as f64).sqrt();
    Ok(Reconstruction {
        coarse: colorize(field_image(&coarse, feature)?),
        interp: colorize(field_image(&interp, feature)?),
        error: colorize(image_from_points(&fine, &err.abs)?),
        rmse,
        max_percent: err.percent.iter().copied().fold(0.0, f64::max),
    })
}

/// A query element, its K nearest elements and the `(u_x, u_y, d)` rows fed to the model.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct NeighborhoodView {
    elements: Vec<u32>,
    positions: Vec<f64>,
    overlay: Raster,
}

#[wasm_bindgen]
impl NeighborhoodView {
    /// Query first, then neighbors by distance.
    #[wasm_bindgen(getter)]
    pub fn elements(&self) -> Vec<u32> {
        self.elements.clone()
    }

    /// Row-major `(K+1) x 3`.
    #[wasm_bindgen(getter)]
    pub fn positions(&self) -> Vec<f64> {
        self.positions.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn overlay(&self) -> Raster {
        self.overlay.clone()
    }
}

pub fn neighborhood_view(nex: usize, ney: usize, query: usize, k: usize) -> Result<NeighborhoodView> {
    let mesh = demo_mesh(nex, ney)?;
    let nbh = knn_neighbors(&mesh, query, k)?;
    let pos = relative_positions(&mesh, &nbh)?;
    let elements: Vec<u32> = nbh.elements().map(|e| e as u32).collect();
    // query bright, neighbors fading with rank, the rest dark
    let mut level = vec![0u8; mesh.n_elements()];
    for (rank, &e) in elements.iter().enumerate().rev() {
        level[e as usize] = if rank == 0 { 255 } else { (200 - 120 * rank / elements.len()) as u8 };
    }
    let (width, height) = (4 * nex, 4 * ney);
    let mut rgba = vec![0u8; width * height * 4];
    for (e, &l) in level.iter().enumerate() {
        let (ex, ey) = (e % nex, e / nex);
        let c = if l == 255 { [240, 80, 60] } else { color(l) };
        for ty in 0..4 {
            for tx in 0..4 {
                let (px, py) = (ex * 4 + tx, height - 1 - (ey * 4 + ty));
                let edge = tx == 0 || ty == 0;
                let i = (py * width + px) * 4;
                let px_color = if edge { [20, 20, 20] } else { c };
                rgba[i..i + 4].copy_from_slice(&[px_color[0], px_color[1], px_color[2], 255]);
            }
        }
    }
    Ok(NeighborhoodView {
        elements,
        positions: pos.flat(),
        overlay: Raster { width, height, rgba, min: 0.0, max: 1.0 },
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub fn render_field(nex: usize, ney: usize, time: f64, feature: usize) -> std::result::Result<Raster, JsError> {
    field_view(nex, ney, time, feature).map_err(js)
}

#[wasm_bindgen]
pub fn reconstruct(
    nex: usize,
    ney: usize,
    time: f64,
    feature: usize,
    k: usize,
) -> std::result::Result<Reconstruction, JsError> {
    reconstruction_view(nex, ney, time, feature, k).map_err(js)
}

#[wasm_bindgen]
pub fn neighborhood(nex: usize, ney: usize, query: usize, k: usize) -> std::result::Result<NeighborhoodView, JsError> {
    neighborhood_view(nex, ney, query, k).map_err(js)
}
