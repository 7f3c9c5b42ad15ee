//! IoU family, classification accuracy and JSON reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, DAM, LAND, NATURAL, WATER};

/// Intersection over union of class `class` between two masks.
///
/// 1.0 when the class is absent from both, 0.0 when absent from exactly one.
pub fn iou(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<f64> {
    Ok(iou_counted(pred, gt, class)?.0)
}

/// IoU plus whether the empty-class convention decided the value.
fn iou_counted(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<(f64, bool)> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        let (a, b) = (p == class, g == class);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { (1.0, true) } else { (inter as f64 / union as f64, false) })
}

/// Which classes enter the per-image mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassSelection {
    /// Water IoU on 2-class masks.
    Water,
    /// Mean of water and land on 2-class masks.
    WaterLand,
    Dam,
    DamNatural,
    DamNaturalLand,
}

impl ClassSelection {
    pub fn classes(self) -> &'static [u8] {
        match self {
            ClassSelection::Water => &[WATER],
            ClassSelection::WaterLand => &[WATER, LAND],
            ClassSelection::Dam => &[DAM],
            ClassSelection::DamNatural => &[DAM, NATURAL],
            ClassSelection::DamNaturalLand => &[DAM, NATURAL, LAND],
        }
    }
}

/// Mean over images of the per-image mean IoU over the selected classes.
/// Also returns how many per-class values fell back on the empty-class rule.
pub fn mean_iou(preds: &[LabelMask], gts: &[LabelMask], sel: ClassSelection) -> Result<(f64, usize)> {
    if preds.is_empty() {
        return Err(Error::Data("no masks to evaluate".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let classes = sel.classes();
    let mut total = 0.0;
    let mut empty = 0;
    for (p, g) in preds.iter().zip(gts) {
        let mut per_image = 0.0;
        for &c in classes {
            let (v, e) = iou_counted(p, g, c)?;
            per_image += v;
            empty += usize::from(e);
        }
        total += per_image / classes.len() as f64;
    }
    Ok((total / preds.len() as f64, empty))
}

pub fn accuracy<T: PartialEq>(pred: &[T], gt: &[T]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Data("no labels to evaluate".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions vs {} labels", pred.len(), gt.len())));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Evaluation summary; metrics that do not apply to a run are `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou_water: Option<f64>,
    pub miou: Option<f64>,
    pub iou_d: Option<f64>,
    pub miou_dn: Option<f64>,
    pub miou_dnb: Option<f64>,
    pub accuracy: Option<f64>,
    pub n: usize,
    /// Per-class IoU values decided by the empty-class rule.
    #[serde(skip)]
    pub empty_class_fallbacks: usize,
}

impl MetricsReport {
    /// Water IoU and water/land mIoU of binary masks. 3-class inputs are
    /// binarised first.
    pub fn segmentation(preds: &[LabelMask], gts: &[LabelMask]) -> Result<Self> {
        let preds: Vec<LabelMask> = preds.iter().map(LabelMask::to_binary).collect();
        let gts: Vec<LabelMask> = gts.iter().map(LabelMask::to_binary).collect();
        let (iou_water, e1) = mean_iou(&preds, &gts, ClassSelection::Water)?;
        let (miou, e2) = mean_iou(&preds, &gts, ClassSelection::WaterLand)?;
        let r = MetricsReport {
            iou_water: Some(iou_water),
            miou: Some(miou),
            n: preds.len(),
            empty_class_fallbacks: e1 + e2,
            ..Default::default()
        };
        r.note_fallbacks();
        Ok(r)
    }

    /// Full IoU family of 3-class extraction maps.
    pub fn extraction(preds: &[LabelMask], gts: &[LabelMask]) -> Result<Self> {
        let mut r = Self::segmentation(preds, gts)?;
        let (iou_d, e1) = mean_iou(preds, gts, ClassSelection::Dam)?;
        let (miou_dn, e2) = mean_iou(preds, gts, ClassSelection::DamNatural)?;
        let (miou_dnb, e3) = mean_iou(preds, gts, ClassSelection::DamNaturalLand)?;
        r.iou_d = Some(iou_d);
        r.miou_dn = Some(miou_dn);
        r.miou_dnb = Some(miou_dnb);
        r.empty_class_fallbacks += e1 + e2 + e3;
        r.note_fallbacks();
        Ok(r)
    }

    pub fn classification<T: PartialEq>(pred: &[T], gt: &[T]) -> Result<Self> {
        Ok(MetricsReport {
            accuracy: Some(accuracy(pred, gt)?),
            n: pred.len(),
            ..Default::default()
        })
    }

    fn note_fallbacks(&self) {
        if self.empty_class_fallbacks > 0 {
            log::info!(
                "{} per-class IoU values used the empty-class rule (absent from both masks = 1.0)",
                self.empty_class_fallbacks
            );
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
