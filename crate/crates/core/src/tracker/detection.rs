use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentClass;
use crate::error::{Error, Result};
use crate::geometry::{project_to_world, Homography, PixelPoint};
use crate::vec2::WorldPoint;

/// Axis-aligned box in pixels, anchored at its top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn centered(center: PixelPoint, w: f64, h: f64) -> Self {
        BBox {
            x: center.u - 0.5 * w,
            y: center.v - 0.5 * h,
            w,
            h,
        }
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let ix = (self.x + self.w).min(o.x + o.w) - self.x.max(o.x);
        let iy = (self.y + self.h).min(o.y + o.h) - self.y.max(o.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.area() + o.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Row-major boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "mask data has {} entries for a {rows}x{cols} mask",
                data.len()
            )));
        }
        Ok(Mask { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Mask {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: i64,
    pub bbox: BBox,
    /// Box area in px², as in SORT's `s`.
    pub scale: f64,
    /// Width over height.
    pub aspect: f64,
    pub class: AgentClass,
    pub confidence: f64,
    pub mask: Option<Mask>,
    pub appearance: Option<Vec<f64>>,
}

impl Detection {
    /// Detection with scale and aspect derived from the box.
    pub fn new(frame_id: i64, bbox: BBox, class: AgentClass, confidence: f64) -> Result<Self> {
        let d = Detection {
            frame_id,
            bbox,
            scale: bbox.area(),
            aspect: bbox.w / bbox.h,
            class,
            confidence,
            mask: None,
            appearance: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_mask(mut self, mask: Mask) -> Result<Self> {
        self.mask = Some(mask);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bbox;
        if !(b.w > 0.0 && b.h > 0.0) || ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid bounding box {b:?}")));
        }
        if (self.aspect - b.w / b.h).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "aspect {} disagrees with box ratio {}",
                self.aspect,
                b.w / b.h
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidArgument(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if let Some(m) = &self.mask {
            if m.rows() != b.h.round() as usize || m.cols() != b.w.round() as usize {
                return Err(Error::ShapeMismatch(format!(
                    "mask is {}x{} but box is {}x{}",
                    m.rows(),
                    m.cols(),
                    b.h,
                    b.w
                )));
            }
        }
        Ok(())
    }
}

/// Background-subtracted patch: a white canvas with the instance mask applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedPatch {
    pub pixels: Mask,
    pub bbox: BBox,
}

pub fn masked_representation(d: &Detection) -> Result<SegmentedPatch> {
    let mask = d.mask.as_ref().ok_or(Error::MissingMask)?;
    let canvas = Mask::filled(mask.rows(), mask.cols(), true);
    let data = canvas.data.iter().zip(&mask.data).map(|(&w, &m)| w & m).collect();
    Ok(SegmentedPatch {
        pixels: Mask::new(mask.rows(), mask.cols(), data)?,
        bbox: d.bbox,
    })
}

/// World position of the box center.
pub fn detection_center_world(d: &Detection, h: &Homography) -> Result<WorldPoint> {
    project_to_world(h, d.bbox.center())
}

const HEADER: [&str; 7] = ["frame_id", "x", "y", "w", "h", "class", "confidence"];

/// Parses a detection file into per-frame lists, ordered by frame id.
pub fn read_detections(path: &Path) -> Result<BTreeMap<i64, Vec<Detection>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text).map_err(|(line, msg)| Error::parse(path, line, msg))
}

pub fn parse_detections(text: &str) -> std::result::Result<BTreeMap<i64, Vec<Detection>>, (usize, String)> {
    let mut out: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(out);
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < HEADER.len() || cols[..HEADER.len()] != HEADER {
        return Err((1, format!("expected header starting with `{}`", HEADER.join(","))));
    }
    for (k, name) in cols[HEADER.len()..].iter().enumerate() {
        if *name != format!("app_{k}") {
            return Err((1, format!("unexpected column `{name}`")));
        }
    }
    let app_dim = cols.len() - HEADER.len();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err((lineno, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let num = |i: usize| -> std::result::Result<f64, (usize, String)> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| (lineno, format!("field `{}`: {e}", cols[i])))
        };
        let frame_id = fields[0]
            .parse::<i64>()
            .map_err(|e| (lineno, format!("field `frame_id`: {e}")))?;
        let bbox = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?);
        let class = fields[5].parse::<AgentClass>().map_err(|e| (lineno, e.to_string()))?;
        let confidence = num(6)?;
        let mut det = Detection::new(frame_id, bbox, class, confidence).map_err(|e| (lineno, e.to_string()))?;
        if app_dim > 0 {
            det.appearance = Some((HEADER.len()..cols.len()).map(num).collect::<std::result::Result<_, _>>()?);
        }
        out.entry(frame_id).or_default().push(det);
    }
    Ok(out)
}

/// Serializes detections (shortest round-trip float formatting).
pub fn format_detections<'a>(dets: impl IntoIterator<Item = &'a Detection>, app_dim: usize) -> String {
    let mut out = HEADER.join(",");
    for k in 0..app_dim {
        let _ = write!(out, ",app_{k}");
    }
    out.push('\n');
    for d in dets {
        let b = &d.bbox;
        let _ = write!(out, "{},{},{},{},{},{},{}", d.frame_id, b.x, b.y, b.w, b.h, d.class, d.confidence);
        if let Some(app) = &d.appearance {
            for v in app.iter().take(app_dim) {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_detections<'a>(path: &Path, dets: impl IntoIterator<Item = &'a Detection>, app_dim: usize) -> Result<()> {
    std::fs::write(path, format_detections(dets, app_dim)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(w: f64, h: f64) -> Detection {
        Detection::new(1, BBox::new(0.0, 0.0, w, h), AgentClass::Car, 0.9).unwrap()
    }

    #[test]
    fn masked_patch_cases() {
        let d = det(4.0, 3.0).with_mask(Mask::filled(3, 4, true)).unwrap();
        assert_eq!(masked_representation(&d).unwrap().pixels.count_ones(), 12);
        let d = det(4.0, 3.0).with_mask(Mask::filled(3, 4, false)).unwrap();
        assert_eq!(masked_representation(&d).unwrap().pixels.count_ones(), 0);
        assert!(matches!(masked_representation(&det(4.0, 3.0)), Err(Error::MissingMask)));
    }

    #[test]
    fn masked_patch_preserves_popcount() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (r, c) = (rng.gen_range(1..30), rng.gen_range(1..30));
            let data: Vec<bool> = (0..r * c).map(|_| rng.gen_bool(0.4)).collect();
            let mask = Mask::new(r, c, data).unwrap();
            let expected = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).filter(|&(i, j)| mask.get(i, j)).count();
            let d = det(c as f64, r as f64).with_mask(mask).unwrap();
            let patch = masked_representation(&d).unwrap();
            assert_eq!(patch.pixels.count_ones(), expected);
            assert_eq!((patch.pixels.rows(), patch.pixels.cols()), (r, c));
        }
    }

    #[test]
    fn mask_shape_must_match_box() {
        assert!(det(4.0, 3.0).with_mask(Mask::filled(4, 3, true)).is_err());
    }

    #[test]
    fn center_projection() {
        let d = det(10.0, 20.0);
        let p = detection_center_world(&d, &Homography::identity()).unwrap();
        assert_eq!((p.x, p.y), (5.0, 10.0));
        let h = Homography::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let p = detection_center_world(&d, &h).unwrap();
        assert_eq!((p.x, p.y), (10.0, 20.0));
    }

    #[test]
    fn center_projection_with_perspective_matches_composition() {
        let rows = [[0.05, 0.002, -30.0], [0.001, 0.09, -20.0], [0.0, 0.0004, 1.0]];
        let h = Homography::from_rows(rows).unwrap();
        let d = Detection::new(1, BBox::new(600.0, 300.0, 80.0, 40.0), AgentClass::Car, 0.9).unwrap();
        let (u, v) = (640.0, 320.0);
        let w = rows[2][0] * u + rows[2][1] * v + rows[2][2];
        let x = (rows[0][0] * u + rows[0][1] * v + rows[0][2]) / w;
        let y = (rows[1][0] * u + rows[1][1] * v + rows[1][2]) / w;
        let p = detection_center_world(&d, &h).unwrap();
        assert!((p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12);
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((a.iou(&BBox::new(1.0, 0.0, 2.0, 2.0)) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip_with_appearance() {
        let mut a = Detection::new(3, BBox::new(1.25, 2.5, 10.0, 5.0), AgentClass::Bus, 0.75).unwrap();
        a.appearance = Some(vec![0.1, -0.2]);
        let mut b = Detection::new(4, BBox::new(0.1, 0.2, 0.3, 0.4), AgentClass::Pedestrian, 1.0).unwrap();
        b.appearance = Some(vec![1.0, 2.0]);
        let text = format_detections([&a, &b], 2);
        let parsed = parse_detections(&text).unwrap();
        assert_eq!(parsed[&3], vec![a]);
        assert_eq!(parsed[&4], vec![b]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "frame_id,x,y,w,h,class,confidence\n1,0,0,1,1,car,0.9\n2,0,0,1,1,tram,0.9\n";
        let (line, _) = parse_detections(text).unwrap_err();
        assert_eq!(line, 3);
        assert!(parse_detections("bogus\n").is_err());
        assert!(parse_detections("").unwrap().is_empty());
    }
}
