use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Region features of one image sequence: `n` images × `k` regions × `d` dims,
/// optionally with normalized `[x0, y0, x1, y1]` boxes per region.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFeatures {
    regions: Array3<f64>,
    boxes: Option<Array3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub has_boxes: bool,
}

impl SequenceFeatures {
    pub fn new(regions: Array3<f64>, boxes: Option<Array3<f64>>) -> Result<Self> {
        let (n, k, d) = regions.dim();
        if n == 0 || k == 0 || d == 0 {
            return Err(Error::Shape(format!("empty feature tensor {n}x{k}x{d}")));
        }
        if let Some(index) = regions.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(b) = &boxes {
            if b.dim() != (n, k, 4) {
                return Err(Error::Shape(format!(
                    "boxes have shape {:?}, expected ({n}, {k}, 4)",
                    b.dim()
                )));
            }
            for (index, &value) in b.iter().enumerate() {
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        index: regions.len() + index,
                    });
                }
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::BoxOutOfRange { index, value });
                }
            }
        }
        Ok(SequenceFeatures { regions, boxes })
    }

    pub fn n(&self) -> usize {
        self.regions.dim().0
    }

    pub fn k(&self) -> usize {
        self.regions.dim().1
    }

    pub fn d(&self) -> usize {
        self.regions.dim().2
    }

    pub fn regions(&self) -> ArrayView3<'_, f64> {
        self.regions.view()
    }

    /// `k × d` regions of image `i`.
    pub fn image(&self, i: usize) -> ArrayView2<'_, f64> {
        self.regions.slice(s![i, .., ..])
    }

    pub fn region(&self, i: usize, k: usize) -> ArrayView1<'_, f64> {
        self.regions.slice(s![i, k, ..])
    }

    pub fn boxes(&self) -> Option<ArrayView3<'_, f64>> {
        self.boxes.as_ref().map(|b| b.view())
    }

    pub fn header(&self) -> FeatureHeader {
        FeatureHeader {
            n: self.n(),
            k: self.k(),
            d: self.d(),
            has_boxes: self.boxes.is_some(),
        }
    }

    /// Text form: a JSON header line, then one line per region with `d`
    /// values (row-major over images then regions), then one line of 4 box
    /// coordinates per region when `has_boxes` is set.
    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        let mut push_rows = |t: &Array3<f64>| {
            for row in t.rows() {
                let mut first = true;
                for v in row {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    // `{}` on f64 is the shortest representation that round-trips.
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        };
        push_rows(&self.regions);
        if let Some(b) = &self.boxes {
            push_rows(b);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header_line, body) = text.split_once('\n').unwrap_or((text, ""));
        let header: serde_json::Value = serde_json::from_str(header_line)
            .map_err(|e| Error::parse("feature header", e.to_string()))?;
        let field = |name: &'static str| header.get(name).ok_or(Error::MissingField(name));
        let dim = |name: &'static str| -> Result<usize> {
            field(name)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::parse("feature header", format!("`{name}` must be a non-negative integer")))
        };
        let (n, k, d) = (dim("n")?, dim("k")?, dim("d")?);
        let has_boxes = field("has_boxes")?
            .as_bool()
            .ok_or_else(|| Error::parse("feature header", "`has_boxes` must be a boolean"))?;

        let values: Vec<f64> = body
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                tok.parse::<f64>()
                    .map_err(|_| Error::parse("feature payload", format!("value {i}: `{tok}`")))
            })
            .collect::<Result<_>>()?;
        let region_len = n * k * d;
        let expected = region_len + if has_boxes { n * k * 4 } else { 0 };
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "header declares {n}x{k}x{d}{} ({expected} values), payload has {}",
                if has_boxes { " with boxes" } else { "" },
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let regions = Array3::from_shape_vec((n, k, d), values[..region_len].to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let boxes = if has_boxes {
            Some(
                Array3::from_shape_vec((n, k, 4), values[region_len..].to_vec())
                    .map_err(|e| Error::Shape(e.to_string()))?,
            )
        } else {
            None
        };
        Self::new(regions, boxes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Uniform average over regions, `n × d`.
    pub fn region_means(&self) -> Array2<f64> {
        self.regions.mean_axis(ndarray::Axis(1)).expect("k >= 1")
    }
}

/// Projects `concat(region, box)` to the model dimension:
/// `projection` is `d_out × (d_raw + 4)`.
pub fn fuse_box_coordinates(features: &SequenceFeatures, projection: ArrayView2<f64>) -> Result<SequenceFeatures> {
    let boxes = features
        .boxes()
        .ok_or_else(|| Error::InvalidArgument("features carry no box coordinates".into()))?;
    let (n, k, d_raw) = features.regions.dim();
    let (d_out, d_in) = projection.dim();
    if d_in != d_raw + 4 {
        return Err(Error::Shape(format!(
            "projection expects inputs of dim {d_in}, regions+boxes have {}",
            d_raw + 4
        )));
    }
    let mut out = Array3::zeros((n, k, d_out));
    let mut input = ndarray::Array1::zeros(d_in);
    for i in 0..n {
        for r in 0..k {
            input.slice_mut(s![..d_raw]).assign(&features.region(i, r));
            input.slice_mut(s![d_raw..]).assign(&boxes.slice(s![i, r, ..]));
            out.slice_mut(s![i, r, ..]).assign(&projection.dot(&input));
        }
    }
    SequenceFeatures::new(out, None)
}

/// Gradient of the fusion projection given the gradient on fused regions.
pub fn fuse_box_coordinates_backward(features: &SequenceFeatures, d_fused: ArrayView3<f64>) -> Array2<f64> {
    let boxes = features.boxes().expect("fusion backward needs boxes");
    let (n, k, d_raw) = features.regions.dim();
    let d_out = d_fused.dim().2;
    let mut grad = Array2::zeros((d_out, d_raw + 4));
    let mut input = ndarray::Array1::zeros(d_raw + 4);
    for i in 0..n {
        for r in 0..k {
            input.slice_mut(s![..d_raw]).assign(&features.region(i, r));
            input.slice_mut(s![d_raw..]).assign(&boxes.slice(s![i, r, ..]));
            crate::linalg::add_outer(grad.view_mut(), 1.0, d_fused.slice(s![i, r, ..]), input.view());
        }
    }
    grad
}
