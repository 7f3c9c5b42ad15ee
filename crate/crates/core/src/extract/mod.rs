//! Connected-area extraction: water mask to individual segments, then a
//! classified 3-class map.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::clsmodel::WaterClass;
use crate::error::{Error, Result};
use crate::raster::{write_mask, BBox, LabelMask, Raster, LAND};
use crate::segmodel::{predict_mask, SegNetToy};

pub const MIN_SEGMENT_AREA: usize = 20;
pub const EXPAND_FACTOR: f64 = 2.0;

/// One 8-connected water region.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Member pixels `(row, col)` in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
    pub expanded: Option<BBox>,
    pub class: Option<WaterClass>,
}

impl Segment {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // keep the smaller label as root so roots follow raster order
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// 8-connected components of the non-zero pixels, ordered by each
/// component's first pixel in raster order.
///
/// Two-pass labelling over a disjoint-set forest.
pub fn connected_components(mask: &LabelMask) -> Vec<Segment> {
    let (w, h) = (mask.width(), mask.height());
    let values = mask.values();
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; w * h];
    let mut sets = DisjointSet::new();

    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if values[i] == LAND {
                continue;
            }
            let mut current = NONE;
            // already-visited neighbours: W, NW, N, NE
            let mut neighbours = [NONE; 4];
            if c > 0 {
                neighbours[0] = labels[i - 1];
            }
            if r > 0 {
                let up = i - w;
                if c > 0 {
                    neighbours[1] = labels[up - 1];
                }
                neighbours[2] = labels[up];
                if c + 1 < w {
                    neighbours[3] = labels[up + 1];
                }
            }
            for n in neighbours.into_iter().filter(|&n| n != NONE) {
                if current == NONE {
                    current = n;
                } else if n != current {
                    sets.union(current, n);
                }
            }
            if current == NONE {
                current = sets.make();
            }
            labels[i] = current;
        }
    }

    let mut slot = vec![NONE; sets.parent.len()];
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == NONE {
            continue;
        }
        let root = sets.find(l) as usize;
        if slot[root] == NONE {
            slot[root] = groups.len() as u32;
            groups.push(Vec::new());
        }
        groups[slot[root] as usize].push((i / w, i % w));
    }
    groups
        .into_iter()
        .map(|pixels| Segment {
            bbox: BBox::of_pixels(&pixels).expect("non-empty component"),
            pixels,
            expanded: None,
            class: None,
        })
        .collect()
}

/// Drops segments strictly smaller than `min_area`.
pub fn filter_segments(segments: Vec<Segment>, min_area: usize) -> Vec<Segment> {
    segments.into_iter().filter(|s| s.area() >= min_area).collect()
}

/// Box scaled by `factor` about its centre in edge coordinates, rounded
/// outward, not yet clamped. Returns `(r0, c0, r1, c1)` inclusive.
pub fn expand_extent(bbox: &BBox, factor: f64) -> (i64, i64, i64, i64) {
    let axis = |lo: usize, hi: usize| {
        let (lo, hi) = (lo as f64, hi as f64 + 1.0);
        let centre = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo) * factor;
        ((centre - half).floor() as i64, (centre + half).ceil() as i64 - 1)
    };
    let (r0, r1) = axis(bbox.r0, bbox.r1);
    let (c0, c1) = axis(bbox.c0, bbox.c1);
    (r0, c0, r1, c1)
}

/// Scales `bbox` by `factor` about its centre, rounds outward and clamps to
/// a `height` x `width` image.
pub fn expand_bbox(bbox: &BBox, factor: f64, height: usize, width: usize) -> BBox {
    let (r0, c0, r1, c1) = expand_extent(bbox, factor);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    BBox::new(clamp(r0, height), clamp(c0, width), clamp(r1, height), clamp(c1, width))
}

/// Assigns a class to one cropped water body.
pub trait WaterBodyClassifier {
    fn classify(&self, crop: &Raster) -> Result<WaterClass>;
}

impl<F> WaterBodyClassifier for F
where
    F: Fn(&Raster) -> Result<WaterClass>,
{
    fn classify(&self, crop: &Raster) -> Result<WaterClass> {
        self(crop)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub min_area: usize,
    pub expand_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: 0.5,
            min_area: MIN_SEGMENT_AREA,
            expand_factor: EXPAND_FACTOR,
        }
    }
}

/// 3-class map (land / natural / dam) with its classified segments.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionMap {
    pub map: LabelMask,
    pub segments: Vec<Segment>,
}

#[derive(Serialize)]
struct SegmentRow {
    segment_id: usize,
    area: usize,
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
    class: u8,
}

impl ExtractionMap {
    pub fn empty(width: usize, height: usize) -> Self {
        ExtractionMap {
            map: LabelMask::zeros(width, height, 3),
            segments: Vec::new(),
        }
    }

    /// Writes the map as a mask file and the segment table as CSV
    /// (`class` is the map value, 1 natural or 2 dam).
    pub fn save(&self, mask_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        write_mask(&self.map, mask_path)?;
        let csv_path = csv_path.as_ref();
        let mut w = csv::Writer::from_path(csv_path)?;
        for (i, s) in self.segments.iter().enumerate() {
            w.serialize(SegmentRow {
                segment_id: i,
                area: s.area(),
                r0: s.bbox.r0,
                c0: s.bbox.c0,
                r1: s.bbox.r1,
                c1: s.bbox.c1,
                class: s.class.map_or(LAND, WaterClass::mask_value),
            })?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))
    }
}

/// Segments a binary water mask and classifies every surviving segment from
/// its expanded crop of `raster`.
pub fn extract_from_mask(
    raster: &Raster,
    water: &LabelMask,
    classifier: &dyn WaterBodyClassifier,
    cfg: &PipelineConfig,
) -> Result<ExtractionMap> {
    if water.width() != raster.width() || water.height() != raster.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs raster {}x{}",
            water.width(),
            water.height(),
            raster.width(),
            raster.height()
        )));
    }
    let mut out = ExtractionMap::empty(raster.width(), raster.height());
    for mut seg in filter_segments(connected_components(water), cfg.min_area) {
        let bbox = expand_bbox(&seg.bbox, cfg.expand_factor, raster.height(), raster.width());
        let class = classifier.classify(&raster.crop(&bbox)?)?;
        for &(r, c) in &seg.pixels {
            out.map.set(r, c, class.mask_value());
        }
        seg.expanded = Some(bbox);
        seg.class = Some(class);
        out.segments.push(seg);
    }
    Ok(out)
}

/// Segmentor, connected-area extractor and classifier in sequence.
pub fn run_pipeline(
    raster: &Raster,
    seg_model: &SegNetToy,
    classifier: &dyn WaterBodyClassifier,
    cfg: &PipelineConfig,
) -> Result<ExtractionMap> {
    let water = predict_mask(seg_model, raster, cfg.threshold)?;
    extract_from_mask(raster, &water, classifier, cfg)
}

/// Writes every extraction of a run below `dir` as `name.pgm` + `name.csv`.
pub fn save_all(dir: impl AsRef<Path>, maps: &[(String, ExtractionMap)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in maps {
        m.save(dir.join(format!("{name}.pgm")), dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, px: &[(usize, usize)]) -> LabelMask {
        LabelMask::from_water_pixels(w, h, px)
    }

    #[test]
    fn diagonal_neighbours_join() {
        assert_eq!(connected_components(&mask(3, 3, &[(0, 0), (1, 1)])).len(), 1);
        assert_eq!(connected_components(&mask(3, 3, &[(0, 0), (0, 2)])).len(), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // arms only meet on the bottom row
        let px = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 4)];
        let segs = connected_components(&mask(5, 3, &px));
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].area(), 7);
        assert_eq!(segs[0].bbox, BBox::new(0, 0, 2, 2));
        assert_eq!(segs[1].pixels, vec![(0, 4)]);
    }

    #[test]
    fn area_filter_boundary() {
        let seg = |n: usize| Segment {
            pixels: (0..n).map(|i| (0, i)).collect(),
            bbox: BBox::new(0, 0, 0, n - 1),
            expanded: None,
            class: None,
        };
        let kept = filter_segments(vec![seg(15), seg(20), seg(21)], MIN_SEGMENT_AREA);
        assert_eq!(kept.iter().map(Segment::area).collect::<Vec<_>>(), vec![20, 21]);
        assert!(filter_segments(Vec::new(), 20).is_empty());
    }

    #[test]
    fn bbox_expansion_cases() {
        assert_eq!(expand_bbox(&BBox::new(10, 10, 19, 19), 2.0, 100, 100), BBox::new(5, 5, 24, 24));
        let corner = expand_bbox(&BBox::new(0, 0, 9, 9), 2.0, 100, 100);
        assert_eq!((corner.r0, corner.c0), (0, 0));
        assert_eq!(corner, BBox::new(0, 0, 14, 14));
        let b = BBox::new(3, 7, 11, 8);
        assert_eq!(expand_bbox(&b, 1.0, 100, 100), b);
        // odd extent rounds outward: 3 rows about centre 1.5 -> [-1.5, 4.5]
        assert_eq!(expand_extent(&BBox::new(0, 0, 2, 0), 2.0), (-2, -1, 4, 1));
    }

    #[test]
    fn pipeline_paints_classes_on_segments() {
        let mut px: Vec<(usize, usize)> = (0..5).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
        px.extend((10..15).flat_map(|r| (10..16).map(move |c| (r, c))));
        px.push((0, 19));
        let water = mask(20, 20, &px);
        let raster = Raster::filled(20, 20, 3, 0.5);
        let classify = |crop: &Raster| -> Result<WaterClass> {
            Ok(if crop.width() < 10 { WaterClass::Dam } else { WaterClass::Natural })
        };
        let out = extract_from_mask(&raster, &water, &classify, &PipelineConfig::default()).unwrap();
        assert_eq!(out.segments.len(), 2);
        assert_eq!(out.map.count(2), 25);
        assert_eq!(out.map.count(1), 30);
        assert_eq!(out.map.get(0, 19), 0);
    }
}
