//! JSON model files.
//!
//! Layout: `format_version`, `variant`, `kind`, an optional `scaling_spec`,
//! the primary component as `centers` plus `pieces`, the subtracted
//! component of symmetric models as `secondary_centers` plus
//! `secondary_pieces`, the `offset`, and `mma` blocks for max-min-affine
//! models. Numbers are written in the shortest form that parses back to the
//! same double, so a save/load cycle is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};
use crate::features::FeatureKind;
use crate::model::{AffinePiece, Body, DcComponent, DcModel, MaxMinAffine, Piece, Standardization, Variant};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u64,
    variant: Variant,
    kind: FeatureKind,
    #[serde(default)]
    scaling_spec: Option<Standardization>,
    #[serde(default)]
    centers: Vec<Vec<f64>>,
    #[serde(default)]
    pieces: Vec<Piece>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secondary_centers: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secondary_pieces: Option<Vec<Piece>>,
    offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mma: Option<Vec<Vec<AffinePiece>>>,
}

pub fn to_json(model: &DcModel) -> Result<String> {
    let (centers, pieces, secondary_centers, secondary_pieces, mma) = match model.body() {
        Body::Max(c) => (c.centers().to_vec(), c.pieces().to_vec(), None, None, None),
        Body::Difference { pos, neg } => (
            pos.centers().to_vec(),
            pos.pieces().to_vec(),
            Some(neg.centers().to_vec()),
            Some(neg.pieces().to_vec()),
            None,
        ),
        Body::MaxMin(m) => (Vec::new(), Vec::new(), None, None, Some(m.blocks().to_vec())),
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        variant: model.variant(),
        kind: model.kind(),
        scaling_spec: model.standardization().cloned(),
        centers,
        pieces,
        secondary_centers,
        secondary_pieces,
        offset: model.offset(),
        mma,
    };
    serde_json::to_string_pretty(&file).map_err(|e| DcfError::Format(e.to_string()))
}

pub fn from_json(text: &str) -> Result<DcModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DcfError::Format(format!("invalid JSON: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(DcfError::Format(format!("unsupported format_version {v}, expected {FORMAT_VERSION}"))),
        None => return Err(DcfError::Format("missing or non-integer format_version".into())),
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| DcfError::Format(format!("schema violation: {e}")))?;
    let body = match (file.variant, file.mma, file.secondary_centers, file.secondary_pieces) {
        (Variant::MaxMinAffine, Some(blocks), None, None) => {
            if file.kind != FeatureKind::Linf {
                return Err(DcfError::Format("max-min-affine models must use kind linf".into()));
            }
            Body::MaxMin(MaxMinAffine::new(blocks)?)
        }
        (Variant::Symmetric, None, Some(sc), Some(sp)) => Body::Difference {
            pos: DcComponent::new(file.kind, file.centers, file.pieces)?,
            neg: DcComponent::new(file.kind, sc, sp)?,
        },
        (v, None, None, None) if !matches!(v, Variant::Symmetric | Variant::MaxMinAffine) => {
            Body::Max(DcComponent::new(file.kind, file.centers, file.pieces)?)
        }
        (v, ..) => return Err(DcfError::Format(format!("fields do not match variant {}", v.name()))),
    };
    DcModel::new(file.variant, body, file.offset, file.scaling_spec).map_err(|e| DcfError::Format(e.to_string()))
}

pub fn save_model(model: &DcModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model)? + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DcModel> {
    if !path.exists() {
        return Err(DcfError::FileNotFound(path.to_path_buf()));
    }
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_dcf, FitConfig};
    use crate::partition::Dataset;

    fn data() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64 / 10.0, ((i * 7) % 13) as f64 / 5.0]).collect();
        let y = rows.iter().map(|r| r[0] * r[0].sin() + 0.3 * r[1]).collect();
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn round_trip_all_variants() {
        let data = data();
        for variant in Variant::ALL {
            let kind = match variant {
                Variant::ConvexPlus => FeatureKind::Plus,
                _ => FeatureKind::Linf,
            };
            let mut cfg = FitConfig::new(variant, kind);
            cfg.solver.max_iters = 50;
            let model = fit_dcf(&data, &cfg).unwrap().final_model;
            let text = to_json(&model).unwrap();
            let back = from_json(&text).unwrap();
            assert_eq!(back, model, "{variant:?}");
            for r in data.rows() {
                assert_eq!(back.eval(r).unwrap(), model.eval(r).unwrap());
            }
        }
    }

    #[test]
    fn rejects_bad_files() {
        let data = data();
        let model = fit_dcf(&data, &FitConfig::default()).unwrap().final_model;
        let text = to_json(&model).unwrap();
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(from_json(&bumped), Err(DcfError::Format(m)) if m.contains("format_version")));
        assert!(matches!(from_json(&text[..text.len() / 2]), Err(DcfError::Format(_))));
        let wrong = text.replacen("\"single\"", "\"symmetric\"", 1);
        assert!(from_json(&wrong).is_err());
        assert!(matches!(from_json("{\"variant\": \"single\"}"), Err(DcfError::Format(_))));
        assert!(matches!(load_model(Path::new("/no/such/model.json")), Err(DcfError::FileNotFound(_))));
    }
}
